"""Command-line entry point: ``inversor validate|invert|report|serve|build-benchmark``."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import initialization as init
from .errors import InversorError
from .harness import (INPUT_TOKEN_LIMIT, ExperimentConfig, build_toy_benchmark, open_backend,
                      report, run_experiment, save_dataset, validate_dataset)
from .objective import FULL, PROGRESSIVE


def _overrides(pairs) -> dict:
    """``key=value`` strings to a dict; values are parsed as JSON when possible."""
    out = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise click.BadParameter(f"expected key=value, got {pair!r}")
        try:
            out[key.strip()] = json.loads(raw)
        except ValueError:
            out[key.strip()] = raw
    return out


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Search for inputs that make a language model produce a given output."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", default="toy", show_default=True,
              help="toy, a model file, an http(s) URL, or 'remote' (URL from INVERSOR_BACKEND_URL).")
@click.option("--input-limit", default=INPUT_TOKEN_LIMIT, show_default=True)
@click.option("--output-limit", default=100, show_default=True)
@click.option("--no-write", is_flag=True, help="Do not record missing baselines.")
def validate(dataset, backend, input_limit, output_limit, no_write):
    """Check a JSON-lines dataset; exits 1 if any instance is invalid."""
    try:
        model = open_backend(backend)
        checks = validate_dataset(dataset, model, input_limit, output_limit, write=not no_write)
    except InversorError as exc:
        raise click.ClickException(str(exc))
    bad = 0
    for c in checks:
        if c.valid:
            click.echo(f"ok      {c.id}  baseline={c.baseline_logprob:.6f}")
        else:
            bad += 1
            click.echo(f"INVALID {c.id}  " + "; ".join(c.problems))
    click.echo(f"{len(checks) - bad}/{len(checks)} instances valid")
    sys.exit(1 if bad else 0)


@main.command()
@click.option("--dataset", type=click.Path(dir_okay=False), help="JSON-lines dataset.")
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False),
              help="Results file (JSON lines, appended).")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="JSON config; its keys override the flags.")
@click.option("--algorithm", type=click.Choice(["ga", "pso"]), default="ga", show_default=True)
@click.option("--objective", type=click.Choice([FULL, PROGRESSIVE]), default=FULL,
              show_default=True)
@click.option("--init", "init_kind", type=click.Choice(init.KINDS), default=init.RANDOM,
              show_default=True)
@click.option("--trials", default=3, show_default=True)
@click.option("--timeout", type=float, help="Wall-clock seconds per trial.")
@click.option("--seed", default=0, show_default=True)
@click.option("--backend", default="toy", show_default=True)
@click.option("--generations", type=int, help="Schedule length (GA generations / PSO iterations).")
@click.option("--max-iterations", type=int, help="Stop after this many iterations (0 = score init only).")
@click.option("--max-calls", type=int, help="Objective-call budget.")
@click.option("--workers", default=1, show_default=True)
@click.option("--inject-original", default=0, show_default=True,
              help="Copies of the planted input placed in the initial population.")
@click.option("--lexicon", type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--paraphraser", help="Generator URL, or echo[:suffix,...] for the stub.")
@click.option("--inverter", help="Generator URL, or echo[:suffix,...] for the stub.")
@click.option("--cache", type=click.Path(dir_okay=False), help="Persistent remote score cache.")
@click.option("--ga", "ga_over", multiple=True, metavar="KEY=VALUE", help="GA config override.")
@click.option("--pso", "pso_over", multiple=True, metavar="KEY=VALUE", help="PSO config override.")
def invert(out, config_file, init_kind, ga_over, pso_over, **flags):
    """Run an inversion experiment and append one result line per trial."""
    settings = dict(flags, init=init_kind, ga=_overrides(ga_over), pso=_overrides(pso_over))
    if config_file:
        settings.update(json.loads(Path(config_file).read_text(encoding="utf-8")))
    if not settings.get("dataset"):
        raise click.UsageError("a dataset is required (--dataset or the config file)")
    try:
        config = ExperimentConfig.from_dict(settings)
        results = run_experiment(config, out)
    except InversorError as exc:
        raise click.ClickException(str(exc))
    failed = sum(r.status != "ok" for r in results)
    click.echo(f"{len(results)} trial(s) written to {out}" + (f", {failed} failed" if failed else ""))


@main.command("report")
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "json_out", type=click.Path(dir_okay=False), help="Write the JSON summary here.")
@click.option("--series", type=click.Path(dir_okay=False), help="Write best-so-far series here.")
def report_cmd(results, json_out, series):
    """Summarize results files as mean +- standard error over trials."""
    try:
        text, summary = report(results, series)
    except InversorError as exc:
        raise click.ClickException(str(exc))
    click.echo(text)
    if json_out:
        Path(json_out).write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")


@main.command()
@click.option("--backend", default="toy", show_default=True, help="toy or a model file.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8470, show_default=True)
def serve(backend, host, port):
    """Serve a local model over the HTTP wire protocol."""
    from .metrics import HashedTrigramEmbedder
    from .pso import ToyAutoencoder
    from .server import LoopbackServer
    model = open_backend(backend)
    server = LoopbackServer(model, embedder=HashedTrigramEmbedder(),
                            autoencoder=ToyAutoencoder(model.vocab), host=host, port=port)
    click.echo(f"serving {model.model_id} on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


@main.command("build-benchmark")
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("-n", "n", default=30, show_default=True)
@click.option("--seed", default=0, show_default=True)
def build_benchmark(out, n, seed):
    """Write planted toy instances (greedy continuations of corpus prefixes)."""
    from .ngram import toy_model
    save_dataset(out, build_toy_benchmark(toy_model(), n=n, seed=seed))
    click.echo(f"{n} instances written to {out}")


if __name__ == "__main__":
    main()
