"""SAT partitioning toolkit: generator encodings, a CDCL solver, partitioning
cost estimation, decomposition-set search and a redundant solving grid."""

__version__ = "0.1.0"
