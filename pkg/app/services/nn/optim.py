"""
Optimiser, loss bookkeeping and weight initialisation.
"""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from app.exceptions import NonFiniteError, ShapeMismatchError


@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed by parameter name."""
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class LossTerms:
    bce: float
    reg: float
    alpha: float = 0.5

    @property
    def total(self) -> float:
        return self.bce + self.alpha * self.reg


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState) -> Dict[str, np.ndarray]:
    """
    One Adam update.

    Args:
        params: name -> parameter array
        grads: name -> gradient array, same shapes
        state: moments, advanced in place

    Returns:
        New parameter arrays (inputs are not modified)

    Raises:
        NonFiniteError: a gradient holds NaN or Inf
    """
    for name, g in grads.items():
        if name not in params or params[name].shape != g.shape:
            raise ShapeMismatchError(f"gradient '{name}' {g.shape} does not match its parameter")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for '{name}' at step {state.step + 1}")
    state.step += 1
    c1 = 1.0 - state.b1 ** state.step
    c2 = 1.0 - state.b2 ** state.step
    updated = dict(params)
    for name, g in grads.items():
        m = state.b1 * state.m.get(name, np.zeros_like(g)) + (1.0 - state.b1) * g
        v = state.b2 * state.v.get(name, np.zeros_like(g)) + (1.0 - state.b2) * g * g
        state.m[name], state.v[name] = m, v
        updated[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return updated


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Init for layers followed by ReLU."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Init for final linear layers."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
