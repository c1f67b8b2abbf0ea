"""Bayesian optimization for synthetic gene design.

A two-output Gaussian process surrogate maps codon-usage features to
transcription and translation rates; averaged-task expected improvement
picks design rules from a gene pool, and synonymous recodings of a target
gene are ranked by weighted L1 distance to those rules.
"""

__version__ = "0.1.0"
