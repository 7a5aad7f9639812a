"""Synthetic data generators, benchmark runner and sensitivity grid."""
