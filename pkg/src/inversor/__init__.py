"""Search-based inversion of language model outputs."""
