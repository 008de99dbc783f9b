"""Workbench for nonstationary latent sequence models.

Subpackages cover synthetic data generation with known ground truth,
a sparsity-regularized sequence VAE with a learned regime selector,
identifiability metrics, and audits of the structural assumptions the
recovery guarantees rest on.
"""

from . import datagen, engine, harness, metrics, model, objectives, theory

__all__ = [
    "datagen",
    "engine",
    "harness",
    "metrics",
    "model",
    "objectives",
    "theory",
]

__version__ = "0.1.0"
