"""Lifty: policy-typed programs with automatic leak repair."""
