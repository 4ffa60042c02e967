"""Measure GAN training-data replication and predict how it scales with dataset size."""

__version__ = "0.1.0"
