"""Multi-target unsupervised domain adaptation with shared/private latent factorization."""

__version__ = "0.1.0"
