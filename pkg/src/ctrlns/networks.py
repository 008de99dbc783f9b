"""MLP building blocks on top of the autodiff engine."""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Var


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int,
               scale: float | None = None) -> dict:
    if scale is None:
        scale = np.sqrt(2.0 / (fan_in + fan_out))
    return {
        "W": engine.param(rng.normal(0.0, scale, size=(fan_in, fan_out))),
        "b": engine.param(np.zeros(fan_out)),
    }


def init_mlp(rng: np.random.Generator, sizes) -> list[dict]:
    """Stack of affine layers; ``sizes`` includes input and output widths."""
    return [init_layer(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def mlp_forward(layers: list[dict], x, activation=engine.tanh) -> Var:
    """Forward pass with the given hidden activation; final layer is linear."""
    h = engine.as_var(x)
    for k, layer in enumerate(layers):
        h = h @ layer["W"] + layer["b"]
        if k < len(layers) - 1:
            h = activation(h)
    return h
