"""Introspective training of CNN classifiers: worst-case learned
transformations of positives plus Langevin-synthesized pseudo-negatives,
with a Wasserstein critic tying the two distributions together."""

__version__ = "0.1.0"
