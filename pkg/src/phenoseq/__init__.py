"""Multilabel phenotype classification from irregular multivariate time
series: preprocessing pipeline, from-scratch LSTM with target replication and
auxiliary outputs, baselines, and a multilabel evaluation suite."""

__version__ = "0.1.0"
