"""Experiment runner, dataset validation and result reporting."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import statistics
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import initialization as init
from .errors import ConfigurationError, ContractViolation, InversorError
from .ga import GaConfig, run_ga
from .metrics import EmbeddingProvider, HashedTrigramEmbedder, score_inversion
from .model import LanguageModelBackend, Sampling, generate, sequence_log_likelihood
from .ngram import NGramModel, data_path, toy_model
from .objective import FULL, PROGRESSIVE, Budget, Objective, Schedule
from .pso import PsoConfig, ToyAutoencoder, run_pso
from .wire import decode_float, encode_float

log = logging.getLogger(__name__)

GA = "ga"
PSO = "pso"
INPUT_TOKEN_LIMIT = 15
OUTPUT_TOKEN_LIMIT = 100


# -- datasets ---------------------------------------------------------------

@dataclass
class InversionInstance:
    id: str
    input_text: str
    output_text: str
    baseline_logprob: float | None = None

    def to_json(self) -> dict:
        d = {"id": self.id, "input_text": self.input_text, "output_text": self.output_text}
        if self.baseline_logprob is not None:
            d["baseline_logprob"] = encode_float(self.baseline_logprob)
        return d


def load_dataset(path) -> list[InversionInstance]:
    """Read a JSON-lines dataset; ids must be unique."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset {path} does not exist")
    out = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                inst = InversionInstance(str(rec["id"]), rec["input_text"], rec["output_text"],
                                         None if rec.get("baseline_logprob") is None
                                         else decode_float(rec["baseline_logprob"]))
            except (ValueError, KeyError, TypeError, InversorError) as exc:
                raise ConfigurationError(f"{path}:{n}: malformed instance ({exc})") from exc
            if inst.id in seen:
                raise ConfigurationError(f"{path}:{n}: duplicate id {inst.id!r}")
            seen.add(inst.id)
            out.append(inst)
    if not out:
        raise ConfigurationError(f"dataset {path} is empty")
    return out


def save_dataset(path, instances: Iterable[InversionInstance]) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(inst.to_json(), separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def benchmark_id(instances: Sequence[InversionInstance]) -> str:
    """Fingerprint of the instance texts (baselines excluded)."""
    h = hashlib.sha256()
    for inst in instances:
        h.update(json.dumps([inst.id, inst.input_text, inst.output_text]).encode())
    return h.hexdigest()[:16]


@dataclass
class InstanceCheck:
    id: str
    problems: list[str]
    baseline_logprob: float | None

    @property
    def valid(self) -> bool:
        return not self.problems


def validate_dataset(path, model: LanguageModelBackend, input_limit: int = INPUT_TOKEN_LIMIT,
                     output_limit: int = OUTPUT_TOKEN_LIMIT, write: bool = True) -> list[InstanceCheck]:
    """Check every instance against the token limits and the model.

    Missing baselines of valid instances are written back to the file when
    ``write`` is set.
    """
    instances = load_dataset(path)
    checks = []
    changed = False
    for inst in instances:
        problems = []
        x = y = None
        try:
            x = model.vocab.encode(inst.input_text)
        except ContractViolation as exc:
            problems.append(f"input: {exc}")
        try:
            y = model.vocab.encode(inst.output_text)
        except ContractViolation as exc:
            problems.append(f"output: {exc}")
        if x is not None:
            if not x:
                problems.append("empty input")
            elif len(x) > input_limit:
                problems.append(f"input has {len(x)} tokens (limit {input_limit})")
        if y is not None:
            if not y:
                problems.append("empty output")
            elif len(y) > output_limit:
                problems.append(f"output has {len(y)} tokens (limit {output_limit})")
        baseline = None
        if x and y:
            baseline = sequence_log_likelihood(model, x, y).log_likelihood
            if not math.isfinite(baseline):
                problems.append("zero baseline probability")
                baseline = None
            elif inst.baseline_logprob is None:
                inst.baseline_logprob = baseline
                changed = True
            elif abs(inst.baseline_logprob - baseline) > 1e-6 * max(1.0, abs(baseline)):
                problems.append(f"recorded baseline {inst.baseline_logprob!r} differs from "
                                f"the backend's {baseline!r}")
        checks.append(InstanceCheck(inst.id, problems, baseline))
    if write and changed:
        save_dataset(path, instances)
    return checks


def build_toy_benchmark(model: NGramModel, n: int = 30, seed: int = 0, min_input: int = 4,
                        max_input: int = 8, output_len: int = 12,
                        corpus: Sequence[str] | None = None) -> list[InversionInstance]:
    """Planted instances: inputs are corpus line prefixes, outputs their greedy
    continuations under ``model``."""
    from .ngram import load_corpus
    lines = [l.split() for l in (corpus if corpus is not None else load_corpus())]
    lines = [l for l in lines if len(l) >= min_input]
    rng = np.random.default_rng(seed)
    out: list[InversionInstance] = []
    seen = set()
    while len(out) < n:
        line = lines[int(rng.integers(len(lines)))]
        k = int(rng.integers(min_input, min(max_input, len(line)) + 1))
        x = model.vocab.encode(" ".join(line[:k]))
        if tuple(x) in seen:
            continue
        y = generate(model, x, output_len, Sampling(temperature=0.0))
        if len(y) < 2:
            continue
        seen.add(tuple(x))
        baseline = sequence_log_likelihood(model, x, y).log_likelihood
        out.append(InversionInstance(f"toy-{len(out):02d}", model.vocab.decode(x),
                                     model.vocab.decode(y), baseline))
    return out


# -- configuration ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: str
    algorithm: str = GA
    objective: str = FULL
    init: str = init.RANDOM
    trials: int = 3
    timeout: float | None = None  # wall seconds per trial
    seed: int = 0
    backend: str = "toy"
    generations: int | None = None  # schedule length T; defaults to the algorithm's
    max_iterations: int | None = None  # 0 scores the initial population only
    max_calls: int | None = None
    workers: int = 1
    inject_original: int = 0  # copies of the planted input placed first in the population
    input_limit: int = INPUT_TOKEN_LIMIT
    lexicon: str | None = None
    corpus: str | None = None
    paraphraser: str | None = None
    inverter: str | None = None
    cache: str | None = None
    ga: dict = field(default_factory=dict)
    pso: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.algorithm not in (GA, PSO):
            raise ConfigurationError(f"algorithm must be 'ga' or 'pso', got {self.algorithm!r}")
        if self.objective not in (FULL, PROGRESSIVE):
            raise ConfigurationError(f"objective must be 'full' or 'progressive', "
                                     f"got {self.objective!r}")
        if self.init not in init.KINDS:
            raise ConfigurationError(f"unknown initialization {self.init!r}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.timeout is not None and not self.timeout > 0:
            raise ConfigurationError("timeout must be > 0")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.inject_original < 0:
            raise ConfigurationError("inject_original must be >= 0")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        self.ga_config()
        self.pso_config()

    def _search_config(self, cls, overrides: dict, length_field: str):
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigurationError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
        cfg = cls(**overrides)
        if self.generations is not None:
            setattr(cfg, length_field, self.generations)
        cfg.validate()
        return cfg

    def ga_config(self) -> GaConfig:
        return self._search_config(GaConfig, self.ga, "generations")

    def pso_config(self) -> PsoConfig:
        return self._search_config(PsoConfig, self.pso, "iterations")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# -- providers --------------------------------------------------------------

def open_backend(source: str, cache: str | None = None) -> LanguageModelBackend:
    """``toy``, a saved n-gram model file, an ``http(s)://`` URL, or ``remote``
    (URL taken from the environment)."""
    if source == "toy":
        return toy_model()
    if source == "remote" or source.startswith(("http://", "https://")):
        from .remote import EvalCache, HttpClient, RemoteBackend
        client = HttpClient(None if source == "remote" else source)
        return RemoteBackend(client, cache=EvalCache(cache))
    if Path(source).exists():
        return NGramModel.load(source)
    raise ConfigurationError(f"unknown backend {source!r}")


def _generator(source: str | None, path: str):
    if source is None:
        return None
    if source == "echo":
        return init.EchoGenerator()
    if source.startswith("echo:"):
        return init.EchoGenerator(source[5:].split(","))
    from .remote import HttpClient, RemoteGenerator
    return RemoteGenerator(HttpClient(source), path)


def build_strategy(config: ExperimentConfig, model: LanguageModelBackend) -> init.InitStrategy:
    kind = config.init
    lexicon = corpus = None
    if kind == init.OUTPUT_SYNONYM:
        lexicon = init.SynonymLexicon.load(config.lexicon or data_path("lexicon.txt"))
    if kind == init.RANDOM_DATASET:
        corpus = init.load_token_corpus(config.corpus or data_path("posts.txt"), model.vocab)
    return init.InitStrategy(
        kind,
        lexicon=lexicon,
        paraphraser=_generator(config.paraphraser, "/v1/invert"),
        inverter=_generator(config.inverter, "/v1/invert"),
        corpus=corpus,
        model=model if kind in (init.RANDOM_FLUENT, init.RANDOM_OUTPUT) else None,
    )


# -- trials -----------------------------------------------------------------

def trial_seed(seed: int, instance_index: int, trial: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(instance_index, trial))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrialResult:
    instance_id: str
    trial: int
    seed: int
    benchmark: str
    model: str
    algorithm: str
    objective: str
    init: str
    status: str  # "ok" or "failed"
    failure: str | None = None
    baseline_logprob: float | None = None
    before: dict | None = None
    after: dict | None = None
    objective_calls: int = 0
    iterations: int = 0
    best_text: str | None = None
    history: list = field(default_factory=list)  # [objective_calls, best full score]
    timestamp: dict = field(default_factory=dict)  # everything wall-clock dependent

    def to_json(self) -> dict:
        d = asdict(self)
        if self.baseline_logprob is not None:
            d["baseline_logprob"] = encode_float(self.baseline_logprob)
        for side in ("before", "after"):
            if d[side] is not None:
                d[side]["log_likelihood"] = encode_float(d[side]["log_likelihood"])
        d["history"] = [[c, encode_float(s)] for c, s in self.history]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrialResult":
        known = {f.name for f in fields(cls)}
        missing = {"instance_id", "trial", "seed", "benchmark", "algorithm", "objective",
                   "init", "status"} - set(d)
        if missing:
            raise ConfigurationError(f"results record misses {sorted(missing)}")
        d = {k: v for k, v in d.items() if k in known}
        if d.get("baseline_logprob") is not None:
            d["baseline_logprob"] = decode_float(d["baseline_logprob"])
        for side in ("before", "after"):
            if d.get(side) is not None:
                d[side] = dict(d[side])
                d[side]["log_likelihood"] = decode_float(d[side]["log_likelihood"])
        d["history"] = [[int(c), decode_float(s)] for c, s in d.get("history", [])]
        return cls(**d)

    @property
    def wall_time(self) -> float | None:
        return self.timestamp.get("wall_time")


def _scores_dict(tokens, score, x, baseline, vocab, embedder) -> dict:
    s = score_inversion(tokens, score, x, baseline, vocab.decode, embedder)
    d = {"text": vocab.decode(tokens), "log_likelihood": score}
    d.update(s.to_dict())
    return d


def run_trial(config: ExperimentConfig, model: LanguageModelBackend,
              strategy: init.InitStrategy, inst: InversionInstance, index: int, trial: int,
              bench: str, embedder: EmbeddingProvider, autoencoder=None,
              executor=None) -> TrialResult:
    seed = trial_seed(config.seed, index, trial)
    result = TrialResult(inst.id, trial, seed, bench, model.model_id, config.algorithm,
                         config.objective, config.init, "ok")
    started = time.time()
    t0 = time.monotonic()
    try:
        vocab = model.vocab
        x = vocab.encode(inst.input_text)
        y = vocab.encode(inst.output_text)
        baseline = sequence_log_likelihood(model, x, y).log_likelihood
        if not math.isfinite(baseline):
            raise ContractViolation("zero baseline probability")
        result.baseline_logprob = baseline
        rng = np.random.default_rng(seed)
        if config.algorithm == GA:
            cfg = config.ga_config()
            cfg.seed = int(rng.integers(2**31))
            T = cfg.generations
            pop = init.build_population(strategy, y, cfg.population_size, init.TOKENS, rng,
                                        vocab=vocab, max_len=cfg.max_len)
            for k in range(min(config.inject_original, len(pop))):
                pop[k] = tuple(x)
        else:
            cfg = config.pso_config()
            cfg.seed = int(rng.integers(2**31))
            T = cfg.iterations
            pop = init.build_population(strategy, y, cfg.swarm_size, init.EMBEDDING, rng,
                                        vocab=vocab, max_len=INPUT_TOKEN_LIMIT,
                                        autoencoder=autoencoder)
            if config.inject_original:
                pop[:config.inject_original] = np.clip(autoencoder.encode(x), -1.0, 1.0)
        budget = Budget(max_calls=config.max_calls, max_iterations=config.max_iterations,
                        deadline=config.timeout)
        objective = Objective(model, y, Schedule(config.objective, T, len(y)), budget, executor)
        if config.algorithm == GA:
            res = run_ga(cfg, objective, pop)
        else:
            res = run_pso(cfg, objective, autoencoder, pop)
        result.before = _scores_dict(res.before_tokens, res.before_score, x, baseline, vocab,
                                     embedder)
        result.after = _scores_dict(res.best_tokens, res.best_score, x, baseline, vocab, embedder)
        result.objective_calls = res.objective_calls
        result.iterations = res.iterations
        result.best_text = vocab.decode(res.best_tokens)
        result.history = [[h.objective_calls, h.best_score] for h in res.history]
        elapsed = [round(h.elapsed, 6) for h in res.history]
    except (InversorError, ValueError) as exc:
        log.warning("trial %s/%d failed: %s", inst.id, trial, exc)
        result.status = "failed"
        result.failure = f"{type(exc).__name__}: {exc}"
        elapsed = []
    result.timestamp = {
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_time": round(time.monotonic() - t0, 6),
        "history_elapsed": elapsed,
    }
    return result


def run_experiment(config: ExperimentConfig, results_path, model: LanguageModelBackend | None = None,
                   embedder: EmbeddingProvider | None = None,
                   instances: Sequence[InversionInstance] | None = None) -> list[TrialResult]:
    """Run every instance x trial and append one JSON line per trial.

    Lines are flushed as trials finish, so an interrupted run keeps the
    completed ones. With ``workers > 1`` trials run concurrently and lines
    appear in completion order.
    """
    config.validate()
    if instances is None:
        instances = load_dataset(config.dataset)
    if model is None:
        model = open_backend(config.backend, config.cache)
    embedder = embedder or HashedTrigramEmbedder()
    strategy = build_strategy(config, model)
    strategy.require()
    autoencoder = None
    if config.algorithm == PSO:
        autoencoder = ToyAutoencoder(model.vocab, config.pso_config().dimension)
    bench = benchmark_id(instances)
    jobs = [(i, inst, k) for i, inst in enumerate(instances) for k in range(config.trials)]
    results: list[TrialResult] = []
    lock = threading.Lock()
    path = Path(results_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as out:
        def work(job):
            i, inst, k = job
            r = run_trial(config, model, strategy, inst, i, k, bench, embedder, autoencoder)
            line = json.dumps(r.to_json(), separators=(",", ":"), allow_nan=False)
            with lock:
                out.write(line + "\n")
                out.flush()
                results.append(r)
            return r

        if config.workers == 1:
            for job in jobs:
                work(job)
        else:
            with ThreadPoolExecutor(config.workers) as pool:
                list(pool.map(work, jobs))
    return results


def read_results(paths: Sequence) -> list[TrialResult]:
    out = []
    for p in paths:
        with open(p, encoding="utf-8") as f:
            for n, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    out.append(TrialResult.from_json(json.loads(line)))
                except (ValueError, TypeError, InversorError) as exc:
                    raise ConfigurationError(f"{p}:{n}: not a trial result ({exc})") from exc
    return out


# -- reporting --------------------------------------------------------------

METRICS = ("weak", "exact", "bleu", "token_f1", "cos_sim")


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample-stdev / sqrt(n); the error is 0 for a single value."""
    n = len(values)
    if n == 0:
        raise ValueError("no values")
    mean = statistics.fmean(values)
    if n == 1:
        return mean, 0.0
    return mean, statistics.stdev(values) / math.sqrt(n)


def _dedupe(records: list[TrialResult]) -> list[TrialResult]:
    seen: dict[tuple, dict] = {}
    out = []
    for r in records:
        key = (r.algorithm, r.objective, r.init, r.instance_id, r.trial)
        body = {k: v for k, v in r.to_json().items() if k != "timestamp"}
        if key in seen:
            if seen[key] != body:
                raise ConfigurationError(f"conflicting results for {key}")
            continue
        seen[key] = body
        out.append(r)
    return out


def _side_value(r: TrialResult, side: str, metric: str):
    d = getattr(r, side)
    return None if d is None else d.get(metric)


def summarize(records: Sequence[TrialResult]) -> dict:
    """Per (algorithm, objective, init): metric mean +- standard error over
    trials of the per-trial benchmark means, scaled to 0-100."""
    if not records:
        raise ConfigurationError("no results to report")
    benches = sorted({r.benchmark for r in records})
    if len(benches) > 1:
        raise ConfigurationError(f"results come from different benchmarks ({', '.join(benches)}); "
                                 "report them separately")
    records = _dedupe(list(records))
    groups: dict[tuple, list[TrialResult]] = {}
    for r in records:
        groups.setdefault((r.algorithm, r.objective, r.init), []).append(r)
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        ok = [r for r in recs if r.status == "ok"]
        by_trial: dict[int, list[TrialResult]] = {}
        for r in ok:
            by_trial.setdefault(r.trial, []).append(r)
        trials = sorted(by_trial)
        row = {"algorithm": key[0], "objective": key[1], "init": key[2],
               "trials": len(trials), "instances": len({r.instance_id for r in ok}),
               "failed": len(recs) - len(ok), "metrics": {}}
        if len(trials) == 1:
            row["note"] = "single trial: standard error reported as 0"
        for side in ("before", "after"):
            for m in METRICS:
                per_trial = []
                for k in trials:
                    vals = [float(_side_value(r, side, m)) for r in by_trial[k]
                            if _side_value(r, side, m) is not None]
                    if vals:
                        per_trial.append(100.0 * statistics.fmean(vals))
                if per_trial:
                    mean, se = mean_stderr(per_trial)
                    row["metrics"][f"{m}_{side}"] = {"mean": mean, "stderr": se}
                else:
                    row["metrics"][f"{m}_{side}"] = None
        if trials:
            calls = [statistics.fmean(r.objective_calls for r in by_trial[k]) for k in trials]
            mean, se = mean_stderr(calls)
            row["objective_calls"] = {"mean": mean, "stderr": se}
        rows.append(row)
    return {"benchmark": benches[0], "rows": rows}


def series(records: Sequence[TrialResult]) -> dict:
    """Weak-inversion rate of the best-so-far candidate per iteration."""
    records = _dedupe(list(records))
    out: dict[str, list[dict]] = {}
    groups: dict[tuple, list[TrialResult]] = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault((r.algorithm, r.objective, r.init), []).append(r)
    for key, recs in sorted(groups.items()):
        length = max(len(r.history) for r in recs)
        points = []
        for it in range(length):
            hits, calls, secs = [], [], []
            for r in recs:
                h = r.history[min(it, len(r.history) - 1)]
                hits.append(1.0 if h[1] >= r.baseline_logprob else 0.0)
                calls.append(h[0])
                el = r.timestamp.get("history_elapsed") or []
                if el:
                    secs.append(el[min(it, len(el) - 1)])
            points.append({"point": it, "objective_calls": statistics.fmean(calls),
                           "elapsed": statistics.fmean(secs) if secs else None,
                           "weak_rate": 100.0 * statistics.fmean(hits)})
        out["/".join(key)] = points
    return out


def format_table(summary: dict) -> str:
    cols = [("weak_before", "Weak bef."), ("weak_after", "Weak aft."),
            ("exact_after", "Exact"), ("bleu_after", "BLEU"), ("token_f1_after", "Tok F1"),
            ("cos_sim_after", "Cos")]
    header = ["Search", "Objective", "Init", "Trials"] + [c[1] for c in cols] + ["Calls"]
    lines = []
    for row in summary["rows"]:
        cells = [row["algorithm"].upper(), row["objective"], row["init"], str(row["trials"])]
        for name, _ in cols:
            v = row["metrics"].get(name)
            cells.append("n/a" if v is None else f"{v['mean']:.1f} ± {v['stderr']:.1f}")
        c = row.get("objective_calls")
        cells.append("n/a" if c is None else f"{c['mean']:.0f}")
        lines.append(cells)
    widths = [max(len(x) for x in col) for col in zip(header, *lines)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    text = [f"benchmark {summary['benchmark']}", fmt(header), fmt(["-" * w for w in widths])]
    text += [fmt(cells) for cells in lines]
    for row in summary["rows"]:
        if row.get("note") or row["failed"]:
            label = f"{row['algorithm']}/{row['objective']}/{row['init']}"
            if row.get("note"):
                text.append(f"* {label}: {row['note']}")
            if row["failed"]:
                text.append(f"* {label}: {row['failed']} failed trial(s) excluded")
    return "\n".join(text)


def report(paths: Sequence, series_path=None) -> tuple[str, dict]:
    """Summary text and JSON for one or more results files."""
    if not paths:
        raise ConfigurationError("report needs at least one results file")
    records = read_results(paths)
    summary = summarize(records)
    if series_path is not None:
        Path(series_path).write_text(json.dumps(series(records), indent=1) + "\n",
                                     encoding="utf-8")
    return format_table(summary), summary
