"""Single-timestep LSTM and GRU cells: forward passes and exact backward passes.

Cell equations (the contract; no peepholes, no layer norm):

LSTM, given input x, previous hidden state h and cell state c:

    i = sigmoid(W_i x + U_i h + b_i)        input gate
    f = sigmoid(W_f x + U_f h + b_f)        forget gate
    g = tanh   (W_g x + U_g h + b_g)        candidate
    o = sigmoid(W_o x + U_o h + b_o)        output gate
    c' = f * c + i * g
    h' = o * tanh(c')

GRU, given input x and previous hidden state h:

    z = sigmoid(W_z x + U_z h + b_z)        update gate
    r = sigmoid(W_r x + U_r h + b_r)        reset gate
    hbar = tanh(W_h x + U_h (r * h) + b_h)  candidate
    h' = (1 - z) * h + z * hbar

The update gate weights the new content: driving b_z to +inf makes h'
approach hbar. That sign convention, and the reset gate applied inside the
candidate's recurrent term, are fixed here and relied on by the backward
passes.

Storage is fused per cell: one input-weight block, one recurrent block, one
bias vector, with gate rows stacked in order [i, f, o, g] (LSTM) or
[z, r, candidate] (GRU) so a single matrix product evaluates every gate
pre-activation. The spec-level per-gate matrices (W_i, U_f, b_z, ...) are
read-only views into those blocks.

Backward passes consume a cache written by the matching forward call and
return exact analytic gradients. Caches store post-activation gate values;
nothing is recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import ShapeError
from .numerics import Tensor2, tally_macs

__all__ = [
    "LstmParams",
    "GruParams",
    "CellState",
    "LstmStepCache",
    "GruStepCache",
    "StepCache",
    "zero_state",
    "lstm_forward",
    "lstm_backward",
    "gru_forward",
    "gru_backward",
]


def _as_vector(name: str, t: Tensor2, n: int) -> np.ndarray:
    if t.cols != 1 or t.rows != n:
        raise ShapeError(f"{name} must be {n}x1, got {t.rows}x{t.cols}")
    return t.array.reshape(-1)


def _col(v: np.ndarray) -> Tensor2:
    return Tensor2.wrap(v.reshape(-1, 1))


@dataclass
class LstmParams:
    """One LSTM layer's weights.

    wx stacks the four input-weight matrices row-wise as [i, f, o, g], shape
    (4*d_h, d_i); wh stacks the recurrent matrices the same way, shape
    (4*d_h, d_h); b is the stacked bias, shape (4*d_h,). The same container
    is also used for parameter gradients (shapes match one to one).
    """

    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    @property
    def d_h(self) -> int:
        return self.wh.shape[1]

    @property
    def d_i(self) -> int:
        return self.wx.shape[1]

    def _block(self, m: np.ndarray, k: int) -> Tensor2:
        d = self.d_h
        return Tensor2.wrap(m[k * d : (k + 1) * d])

    def _bias(self, k: int) -> Tensor2:
        d = self.d_h
        return _col(self.b[k * d : (k + 1) * d])

    # Per-gate views, in the fused row order [i, f, o, g].
    W_i = property(lambda self: self._block(self.wx, 0))
    W_f = property(lambda self: self._block(self.wx, 1))
    W_o = property(lambda self: self._block(self.wx, 2))
    W_g = property(lambda self: self._block(self.wx, 3))
    U_i = property(lambda self: self._block(self.wh, 0))
    U_f = property(lambda self: self._block(self.wh, 1))
    U_o = property(lambda self: self._block(self.wh, 2))
    U_g = property(lambda self: self._block(self.wh, 3))
    b_i = property(lambda self: self._bias(0))
    b_f = property(lambda self: self._bias(1))
    b_o = property(lambda self: self._bias(2))
    b_g = property(lambda self: self._bias(3))

    @classmethod
    def zeros(cls, d_i: int, d_h: int) -> "LstmParams":
        return cls(
            wx=np.zeros((4 * d_h, d_i)),
            wh=np.zeros((4 * d_h, d_h)),
            b=np.zeros(4 * d_h),
        )

    @classmethod
    def from_gates(
        cls,
        W_i: Tensor2, W_f: Tensor2, W_g: Tensor2, W_o: Tensor2,
        U_i: Tensor2, U_f: Tensor2, U_g: Tensor2, U_o: Tensor2,
        b_i: Tensor2, b_f: Tensor2, b_g: Tensor2, b_o: Tensor2,
    ) -> "LstmParams":
        d_h = W_i.rows
        d_i = W_i.cols
        for name, t, r, c in (
            ("W_i", W_i, d_h, d_i), ("W_f", W_f, d_h, d_i),
            ("W_g", W_g, d_h, d_i), ("W_o", W_o, d_h, d_i),
            ("U_i", U_i, d_h, d_h), ("U_f", U_f, d_h, d_h),
            ("U_g", U_g, d_h, d_h), ("U_o", U_o, d_h, d_h),
            ("b_i", b_i, d_h, 1), ("b_f", b_f, d_h, 1),
            ("b_g", b_g, d_h, 1), ("b_o", b_o, d_h, 1),
        ):
            if t.rows != r or t.cols != c:
                raise ShapeError(f"{name} must be {r}x{c}, got {t.rows}x{t.cols}")
        wx = np.vstack([W_i.array, W_f.array, W_o.array, W_g.array])
        wh = np.vstack([U_i.array, U_f.array, U_o.array, U_g.array])
        b = np.concatenate(
            [b_i.data, b_f.data, b_o.data, b_g.data]
        )
        return cls(wx=wx, wh=wh, b=b)


@dataclass
class GruParams:
    """One GRU layer's weights; fused row order [z, r, candidate].

    wx: (3*d_h, d_i), wh: (3*d_h, d_h), b: (3*d_h,). Also reused as the
    gradient container.
    """

    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    @property
    def d_h(self) -> int:
        return self.wh.shape[1]

    @property
    def d_i(self) -> int:
        return self.wx.shape[1]

    def _block(self, m: np.ndarray, k: int) -> Tensor2:
        d = self.d_h
        return Tensor2.wrap(m[k * d : (k + 1) * d])

    def _bias(self, k: int) -> Tensor2:
        d = self.d_h
        return _col(self.b[k * d : (k + 1) * d])

    W_z = property(lambda self: self._block(self.wx, 0))
    W_r = property(lambda self: self._block(self.wx, 1))
    W_h = property(lambda self: self._block(self.wx, 2))
    U_z = property(lambda self: self._block(self.wh, 0))
    U_r = property(lambda self: self._block(self.wh, 1))
    U_h = property(lambda self: self._block(self.wh, 2))
    b_z = property(lambda self: self._bias(0))
    b_r = property(lambda self: self._bias(1))
    b_h = property(lambda self: self._bias(2))

    @classmethod
    def zeros(cls, d_i: int, d_h: int) -> "GruParams":
        return cls(
            wx=np.zeros((3 * d_h, d_i)),
            wh=np.zeros((3 * d_h, d_h)),
            b=np.zeros(3 * d_h),
        )

    @classmethod
    def from_gates(
        cls,
        W_z: Tensor2, W_r: Tensor2, W_h: Tensor2,
        U_z: Tensor2, U_r: Tensor2, U_h: Tensor2,
        b_z: Tensor2, b_r: Tensor2, b_h: Tensor2,
    ) -> "GruParams":
        d_h = W_z.rows
        d_i = W_z.cols
        for name, t, r, c in (
            ("W_z", W_z, d_h, d_i), ("W_r", W_r, d_h, d_i), ("W_h", W_h, d_h, d_i),
            ("U_z", U_z, d_h, d_h), ("U_r", U_r, d_h, d_h), ("U_h", U_h, d_h, d_h),
            ("b_z", b_z, d_h, 1), ("b_r", b_r, d_h, 1), ("b_h", b_h, d_h, 1),
        ):
            if t.rows != r or t.cols != c:
                raise ShapeError(f"{name} must be {r}x{c}, got {t.rows}x{t.cols}")
        wx = np.vstack([W_z.array, W_r.array, W_h.array])
        wh = np.vstack([U_z.array, U_r.array, U_h.array])
        b = np.concatenate([b_z.data, b_r.data, b_h.data])
        return cls(wx=wx, wh=wh, b=b)


@dataclass
class CellState:
    """Recurrent state carried between timesteps.

    h is the hidden state (d_h x 1). c is the LSTM cell state; a GRU carries
    no cell state, so c is None there.
    """

    h: Tensor2
    c: Tensor2 | None = None


def zero_state(d_h: int, cell_kind: str) -> CellState:
    h = Tensor2.zeros(d_h, 1)
    if cell_kind == "lstm":
        return CellState(h=h, c=Tensor2.zeros(d_h, 1))
    if cell_kind == "gru":
        return CellState(h=h, c=None)
    raise ShapeError(f"unknown cell kind {cell_kind!r}")


@dataclass
class LstmStepCache:
    """Everything the LSTM backward pass needs from one forward step."""

    x: np.ndarray        # (d_i,)
    h_prev: np.ndarray   # (d_h,)
    c_prev: np.ndarray   # (d_h,)
    sig: np.ndarray      # (3*d_h,) post-activation [i, f, o]
    g: np.ndarray        # (d_h,) candidate, post-tanh
    tanh_c: np.ndarray   # (d_h,) tanh of the new cell state


@dataclass
class GruStepCache:
    """Everything the GRU backward pass needs from one forward step."""

    x: np.ndarray        # (d_i,)
    h_prev: np.ndarray   # (d_h,)
    zr: np.ndarray       # (2*d_h,) post-activation [z, r]
    rh: np.ndarray       # (d_h,) r * h_prev
    hbar: np.ndarray     # (d_h,) candidate, post-tanh


StepCache = Union[LstmStepCache, GruStepCache]


# ---------------------------------------------------------------------------
# Array-level step kernels. px is the precomputed input projection wx @ x + b;
# the stacked network evaluates it for a whole window with one matrix product
# per layer, the single-step API below computes it per call. Both run the
# identical recurrent arithmetic.
# ---------------------------------------------------------------------------

def lstm_step(
    wh: np.ndarray, px: np.ndarray, x: np.ndarray,
    h_prev: np.ndarray, c_prev: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, LstmStepCache]:
    d_h = wh.shape[1]
    pre = wh @ h_prev
    pre += px
    sig = expit(pre[: 3 * d_h])
    g = np.tanh(pre[3 * d_h :])
    i = sig[:d_h]
    f = sig[d_h : 2 * d_h]
    o = sig[2 * d_h :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmStepCache(x=x, h_prev=h_prev, c_prev=c_prev, sig=sig, g=g,
                               tanh_c=tanh_c)


def lstm_step_backward(
    wh: np.ndarray, cache: LstmStepCache, dh: np.ndarray, dc_in: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dpre, dh_prev, dc_prev); dpre is the (4*d_h,) gate pre-activation
    gradient in fused order [i, f, o, g]."""
    d_h = wh.shape[1]
    sig = cache.sig
    i = sig[:d_h]
    f = sig[d_h : 2 * d_h]
    o = sig[2 * d_h :]
    g = cache.g
    tc = cache.tanh_c

    dc = dc_in + dh * o * (1.0 - tc * tc)
    dpre = np.empty(4 * d_h)
    dpre[:d_h] = dc * g * (i - i * i)                       # input gate
    dpre[d_h : 2 * d_h] = dc * cache.c_prev * (f - f * f)   # forget gate
    dpre[2 * d_h : 3 * d_h] = dh * tc * (o - o * o)         # output gate
    dpre[3 * d_h :] = dc * i * (1.0 - g * g)                # candidate
    dh_prev = wh.T @ dpre
    dc_prev = dc * f
    return dpre, dh_prev, dc_prev


def gru_step(
    wh: np.ndarray, px: np.ndarray, x: np.ndarray, h_prev: np.ndarray,
) -> tuple[np.ndarray, GruStepCache]:
    d_h = wh.shape[1]
    pre_zr = wh[: 2 * d_h] @ h_prev
    pre_zr += px[: 2 * d_h]
    zr = expit(pre_zr)
    z = zr[:d_h]
    r = zr[d_h:]
    rh = r * h_prev
    pre_c = wh[2 * d_h :] @ rh
    pre_c += px[2 * d_h :]
    hbar = np.tanh(pre_c)
    h = (1.0 - z) * h_prev + z * hbar
    return h, GruStepCache(x=x, h_prev=h_prev, zr=zr, rh=rh, hbar=hbar)


def gru_step_backward(
    wh: np.ndarray, cache: GruStepCache, dh: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (dpre, dh_prev); dpre is (3*d_h,) in fused order [z, r, candidate]."""
    d_h = wh.shape[1]
    zr = cache.zr
    z = zr[:d_h]
    r = zr[d_h:]
    hbar = cache.hbar
    h_prev = cache.h_prev

    dpre = np.empty(3 * d_h)
    dpre_c = dpre[2 * d_h :]
    np.multiply(dh * z, 1.0 - hbar * hbar, out=dpre_c)
    drh = wh[2 * d_h :].T @ dpre_c
    dpre[:d_h] = dh * (hbar - h_prev) * (z - z * z)
    dpre[d_h : 2 * d_h] = drh * h_prev * (r - r * r)
    dh_prev = dh * (1.0 - z)
    dh_prev += drh * r
    dh_prev += wh[: 2 * d_h].T @ dpre[: 2 * d_h]
    return dpre, dh_prev


# ---------------------------------------------------------------------------
# Public single-step API.
# ---------------------------------------------------------------------------

def lstm_forward(
    x: Tensor2, prev: CellState, p: LstmParams,
) -> tuple[CellState, LstmStepCache]:
    """One LSTM timestep. Returns the next state and the backward cache."""
    xv = _as_vector("x", x, p.d_i)
    hv = _as_vector("prev.h", prev.h, p.d_h)
    if prev.c is None:
        raise ShapeError("LSTM state is missing the cell state c")
    cv = _as_vector("prev.c", prev.c, p.d_h)
    px = p.wx @ xv
    px += p.b
    tally_macs(p.wx.size + p.wh.size)
    h, c, cache = lstm_step(p.wh, px, xv, hv, cv)
    return CellState(h=_col(h), c=_col(c)), cache


def lstm_backward(
    cache: LstmStepCache, dh: Tensor2, dc: Tensor2, p: LstmParams,
) -> tuple[LstmParams, Tensor2, CellState]:
    """Gradients of one LSTM step.

    dh, dc are the upstream gradients on the step's outputs h' and c'.
    Returns (parameter gradients, gradient on x, gradient on the previous
    state). Inputs are left untouched.
    """
    dhv = _as_vector("dh", dh, p.d_h)
    dcv = _as_vector("dc", dc, p.d_h)
    dpre, dh_prev, dc_prev = lstm_step_backward(p.wh, cache, dhv, dcv)
    grads = LstmParams(
        wx=np.outer(dpre, cache.x),
        wh=np.outer(dpre, cache.h_prev),
        b=dpre.copy(),
    )
    dx = p.wx.T @ dpre
    return grads, _col(dx), CellState(h=_col(dh_prev), c=_col(dc_prev))


def gru_forward(
    x: Tensor2, prev: CellState, p: GruParams,
) -> tuple[CellState, GruStepCache]:
    """One GRU timestep. Returns the next state and the backward cache."""
    xv = _as_vector("x", x, p.d_i)
    hv = _as_vector("prev.h", prev.h, p.d_h)
    px = p.wx @ xv
    px += p.b
    tally_macs(p.wx.size + p.wh.size)
    h, cache = gru_step(p.wh, px, xv, hv)
    return CellState(h=_col(h), c=None), cache


def gru_backward(
    cache: GruStepCache, dh: Tensor2, p: GruParams,
) -> tuple[GruParams, Tensor2, CellState]:
    """Gradients of one GRU step, given the upstream gradient on h'."""
    dhv = _as_vector("dh", dh, p.d_h)
    dpre, dh_prev = gru_step_backward(p.wh, cache, dhv)
    d_h = p.d_h
    dwh = np.empty_like(p.wh)
    dwh[: 2 * d_h] = np.outer(dpre[: 2 * d_h], cache.h_prev)
    dwh[2 * d_h :] = np.outer(dpre[2 * d_h :], cache.rh)
    grads = GruParams(wx=np.outer(dpre, cache.x), wh=dwh, b=dpre.copy())
    dx = p.wx.T @ dpre
    return grads, _col(dx), CellState(h=_col(dh_prev), c=None)
