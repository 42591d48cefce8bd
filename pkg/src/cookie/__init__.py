"""Factorized multimodal contrastive learning with exact information-theoretic checks."""

__version__ = "0.1.0"
