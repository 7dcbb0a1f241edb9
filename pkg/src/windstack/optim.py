"""Adam, global-norm gradient clipping, and the finite-difference gradient check.

The gradient check is the repo's central correctness gate: for a freshly
built small model of any variant, the analytic BPTT gradients must agree
with central finite differences to better than 1e-5 relative error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .network import StackedModel, Window, bptt_window, forward_window
from .numerics import Xorshift64Star

__all__ = [
    "AdamHyper",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "grad_check",
]


@dataclass(frozen=True)
class AdamHyper:
    """Adam hyperparameters; defaults are the standard published values."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ParameterError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ParameterError(f"beta2 must be in [0, 1), got {self.beta2}")
        if self.eps <= 0:
            raise ParameterError(f"eps must be > 0, got {self.eps}")


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter tensor."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    hp: AdamHyper,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update, in place on `params`.

    t <- t+1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; with bias
    correction m^ = m/(1-b1^t), v^ = v/(1-b2^t), each parameter moves by
    -lr * m^ / (sqrt(v^) + eps). Per-tensor state makes the update
    independent of how the tensors are ordered.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(
            f"adam_step got {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment pairs"
        )
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(
                f"adam_step shape mismatch: param {p.shape}, grad {g.shape}, "
                f"moment {m.shape}"
            )
    state.t += 1
    hp_b1, hp_b2 = hp.beta1, hp.beta2
    c1 = 1.0 - hp_b1 ** state.t
    c2 = 1.0 - hp_b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= hp_b1
        m += (1.0 - hp_b1) * g
        v *= hp_b2
        v += (1.0 - hp_b2) * (g * g)
        p -= hp.lr * (m / c1) / (np.sqrt(v / c2) + hp.eps)
    return params, state


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Jointly rescale all gradient tensors so their L2 norm is <= max_norm.

    Below the threshold the tensors are returned untouched (bitwise); above
    it every tensor is scaled by max_norm/norm, which preserves direction.
    """
    if max_norm <= 0:
        raise ParameterError(f"max_norm must be > 0, got {max_norm}")
    total = 0.0
    for g in grads:
        total += float(np.vdot(g, g))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return grads


def grad_check(
    model: StackedModel,
    w: Window,
    epsilon: float = 1e-5,
    max_exhaustive: int = 600,
    sample_size: int = 200,
    sample_seed: int = 7,
) -> float:
    """Largest relative error between analytic and numeric gradients.

    Every scalar parameter (or a deterministic random subsample of at least
    `sample_size` of them when the model has more than `max_exhaustive`) is
    perturbed by +/-epsilon, the window loss re-evaluated, and the central
    difference compared against the BPTT gradient as
    |a - n| / max(|a|, |n|, 1e-8). The model's parameters and persisted
    states are left exactly as found.
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    params = model.param_arrays()
    snap_h = list(model._state_h)
    snap_c = list(model._state_c)

    def restore_states() -> None:
        model._state_h = list(snap_h)
        model._state_c = list(snap_c)

    restore_states()
    _, analytic = bptt_window(model, w)
    restore_states()

    coords: list[tuple[int, int]] = []
    total = sum(p.size for p in params)
    if total <= max_exhaustive:
        for ti, p in enumerate(params):
            coords.extend((ti, j) for j in range(p.size))
    else:
        rng = Xorshift64Star(sample_seed)
        seen = set()
        while len(coords) < min(sample_size, total):
            flat = rng.next_u64() % total
            if flat in seen:
                continue
            seen.add(flat)
            ti = 0
            while flat >= params[ti].size:
                flat -= params[ti].size
                ti += 1
            coords.append((ti, int(flat)))

    def window_loss() -> float:
        restore_states()
        pred, _ = forward_window(model, w)
        err = pred - w.y
        return err * err

    worst = 0.0
    for ti, j in coords:
        p = params[ti]
        orig = p.flat[j]
        p.flat[j] = orig + epsilon
        loss_plus = window_loss()
        p.flat[j] = orig - epsilon
        loss_minus = window_loss()
        p.flat[j] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        a = analytic[ti].flat[j]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        if rel > worst:
            worst = rel
    restore_states()
    return worst
