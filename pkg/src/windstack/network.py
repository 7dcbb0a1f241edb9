"""Stacked recurrent models: window forward pass, truncated BPTT, checkpoints.

A stacked model runs L recurrent layers over a lookback window of T hourly
feature rows; layer k's hidden sequence is layer k+1's input sequence, and a
linear head maps the top layer's final hidden state to the one-step-ahead
prediction (no output activation; this is a regression head).

State management is the one behavioural switch:

* stateless: every window starts from all-zero states; a prediction depends
  only on the window's contents.
* stateful: a window starts from the states persisted by the previous window,
  and on completion the final step's states are persisted for the next one.
  Gradients are still truncated at the window boundary; the incoming state is
  treated as a constant.

Resetting states before every window makes a stateful model execute exactly
the arithmetic of the stateless one, bit for bit; tests rely on that.

Checkpoint layout (version 1, little-endian): magic b"WSTK", uint32 version,
uint32 length + UTF-8 JSON of the config, uint32 tensor count, then for each
parameter tensor in `param_items` order: uint32 name length, name bytes,
uint32 rows, uint32 cols (0 for 1-D tensors), raw float64 data. Writing a
model and reading it back reproduces every parameter bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cells
from .cells import CellState, GruParams, LstmParams
from .errors import ConfigError, DataError, ShapeError
from .numerics import Tensor2, derive_seed, seeded_uniform, tally_macs

__all__ = [
    "ModelConfig",
    "Window",
    "StackedModel",
    "build",
    "forward_window",
    "reset_states",
    "bptt_window",
    "save_model",
    "load_model",
]

CELL_KINDS = ("lstm", "gru")
MODES = ("stateless", "stateful")

_CKPT_MAGIC = b"WSTK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and determinism knobs for one stacked model."""

    cell_kind: str = "lstm"
    mode: str = "stateless"
    layers: int = 10
    d_i: int = 9
    d_h: int = 32
    lookback: int = 24
    seed: int = 42

    def __post_init__(self) -> None:
        problems = []
        if self.cell_kind not in CELL_KINDS:
            problems.append(
                f"cell_kind must be one of {list(CELL_KINDS)}, got {self.cell_kind!r}"
            )
        if self.mode not in MODES:
            problems.append(f"mode must be one of {list(MODES)}, got {self.mode!r}")
        if self.layers < 1:
            problems.append(f"layers must be >= 1, got {self.layers}")
        if self.d_i < 1:
            problems.append(f"d_i must be >= 1, got {self.d_i}")
        if self.d_h < 1:
            problems.append(f"d_h must be >= 1, got {self.d_h}")
        if self.lookback < 1:
            problems.append(f"lookback must be >= 1, got {self.lookback}")
        if problems:
            raise ConfigError(problems)

    @property
    def stateful(self) -> bool:
        return self.mode == "stateful"

    def to_dict(self) -> dict:
        return {
            "cell_kind": self.cell_kind,
            "mode": self.mode,
            "layers": self.layers,
            "d_i": self.d_i,
            "d_h": self.d_h,
            "lookback": self.lookback,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Window:
    """Lookback features (T x d_i, already normalized) and the next-hour target."""

    X: Tensor2
    y: float


@dataclass
class LayerWindowCache:
    inputs: np.ndarray                 # (d_in, T) this layer's input columns
    steps: list                        # per-timestep cell caches
    h_init: np.ndarray                 # (d_h,) state the window started from
    c_init: np.ndarray | None
    h_seq: np.ndarray                  # (d_h, T) hidden outputs


@dataclass
class WindowCaches:
    layers: list[LayerWindowCache]
    h_top: np.ndarray                  # (d_h,) top layer's final hidden state
    prediction: float


class StackedModel:
    """Ordered recurrent layers plus a linear regression head.

    Parameters live in writable float64 arrays; `param_items` fixes their
    global order, which the optimizer, the gradient checker and the
    checkpoint format all share. Training mutates a model in place, so one
    model belongs to one training loop at a time.
    """

    def __init__(
        self,
        config: ModelConfig,
        layers: list[LstmParams] | list[GruParams],
        w_out: np.ndarray,
        b_out: np.ndarray,
    ):
        if len(layers) != config.layers:
            raise ShapeError(
                f"expected {config.layers} layer parameter blocks, got {len(layers)}"
            )
        self.config = config
        self.layers = layers
        self.w_out = w_out
        self.b_out = b_out
        self._state_h: list[np.ndarray] = []
        self._state_c: list[np.ndarray | None] = []
        self.reset_states()

    def reset_states(self) -> None:
        """Zero the persisted per-layer states (idempotent)."""
        d_h = self.config.d_h
        lstm = self.config.cell_kind == "lstm"
        self._state_h = [np.zeros(d_h) for _ in range(self.config.layers)]
        self._state_c = [np.zeros(d_h) if lstm else None for _ in range(self.config.layers)]

    def states(self) -> list[CellState]:
        """Copies of the persisted states as public cell states."""
        out = []
        for h, c in zip(self._state_h, self._state_c):
            out.append(
                CellState(
                    h=Tensor2.wrap(h.reshape(-1, 1).copy()),
                    c=None if c is None else Tensor2.wrap(c.reshape(-1, 1).copy()),
                )
            )
        return out

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        items: list[tuple[str, np.ndarray]] = []
        for k, p in enumerate(self.layers):
            items.append((f"layer{k}.wx", p.wx))
            items.append((f"layer{k}.wh", p.wh))
            items.append((f"layer{k}.b", p.b))
        items.append(("head.w", self.w_out))
        items.append(("head.b", self.b_out))
        return items

    def param_arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.param_items()]


def build(config: ModelConfig) -> StackedModel:
    """Construct a model with deterministic initial weights.

    Every weight tensor is drawn with `seeded_uniform` in
    [-1/sqrt(d_h), +1/sqrt(d_h)]; biases start at zero. Weight tensor k (in
    the order layer0.wx, layer0.wh, layer1.wx, ..., head.w) uses the derived
    seed `derive_seed(config.seed, k)`, so the same config and seed always
    produce bit-identical parameters.
    """
    d_h = config.d_h
    scale = 1.0 / np.sqrt(d_h)
    gates = 4 if config.cell_kind == "lstm" else 3
    cls = LstmParams if config.cell_kind == "lstm" else GruParams

    def draw(index: int, rows: int, cols: int) -> np.ndarray:
        t = seeded_uniform(derive_seed(config.seed, index), rows, cols, -scale, scale)
        return t.array.copy()

    layers = []
    k = 0
    for layer_idx in range(config.layers):
        d_in = config.d_i if layer_idx == 0 else d_h
        wx = draw(k, gates * d_h, d_in)
        wh = draw(k + 1, gates * d_h, d_h)
        k += 2
        layers.append(cls(wx=wx, wh=wh, b=np.zeros(gates * d_h)))
    w_out = draw(k, 1, d_h).reshape(-1)
    b_out = np.zeros(1)
    return StackedModel(config, layers, w_out, b_out)


def reset_states(model: StackedModel) -> None:
    model.reset_states()


def _check_window(model: StackedModel, w: Window) -> np.ndarray:
    cfg = model.config
    if w.X.rows != cfg.lookback or w.X.cols != cfg.d_i:
        raise ShapeError(
            f"window must be {cfg.lookback}x{cfg.d_i}, got {w.X.rows}x{w.X.cols}"
        )
    return w.X.array


def forward_window(model: StackedModel, w: Window) -> tuple[float, WindowCaches]:
    """Run the stack over one window; returns (prediction, caches for BPTT).

    Stateless mode starts every layer from zeros and leaves the persisted
    states untouched (they stay zero). Stateful mode starts from the
    persisted states and, once the whole stack has run, overwrites them with
    the final step's states.
    """
    X = _check_window(model, w)
    cfg = model.config
    T = cfg.lookback
    lstm = cfg.cell_kind == "lstm"
    stateful = cfg.stateful

    cur = X.T                                   # (d_in, T), columns are timesteps
    layer_caches: list[LayerWindowCache] = []
    final_states: list[tuple[np.ndarray, np.ndarray | None]] = []
    h = np.zeros(0)                             # placeholder for type checkers
    for idx, p in enumerate(model.layers):
        px_all = p.wx @ cur
        px_all += p.b[:, None]
        tally_macs(T * (p.wx.size + p.wh.size))
        if stateful:
            h = model._state_h[idx]
            c = model._state_c[idx]
        else:
            h = np.zeros(cfg.d_h)
            c = np.zeros(cfg.d_h) if lstm else None
        h_init, c_init = h, c
        steps = []
        h_seq = np.empty((cfg.d_h, T))
        for t in range(T):
            if lstm:
                h, c, cache = cells.lstm_step(p.wh, px_all[:, t], cur[:, t], h, c)
            else:
                h, cache = cells.gru_step(p.wh, px_all[:, t], cur[:, t], h)
            h_seq[:, t] = h
            steps.append(cache)
        layer_caches.append(
            LayerWindowCache(inputs=cur, steps=steps, h_init=h_init, c_init=c_init,
                             h_seq=h_seq)
        )
        final_states.append((h, c))
        cur = h_seq

    prediction = float(model.w_out @ h + model.b_out[0])
    tally_macs(cfg.d_h)
    if stateful:
        for idx, (fh, fc) in enumerate(final_states):
            model._state_h[idx] = fh
            model._state_c[idx] = fc
    return prediction, WindowCaches(layers=layer_caches, h_top=h, prediction=prediction)


def bptt_window(model: StackedModel, w: Window) -> tuple[float, list[np.ndarray]]:
    """Squared-error loss on one window and its exact parameter gradients.

    Backpropagates through all T steps and all layers; the returned list is
    parallel to `model.param_arrays()`. In stateful mode the forward pass
    advances the persisted states as usual, but no gradient flows into the
    state the window started from (truncation at the window boundary).
    """
    cfg = model.config
    T = cfg.lookback
    lstm = cfg.cell_kind == "lstm"
    top = cfg.layers - 1

    prediction, caches = forward_window(model, w)
    err = prediction - w.y
    loss = err * err
    dp = 2.0 * err

    grads_per_layer: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = [None] * cfg.layers  # type: ignore[list-item]
    g_w_out = dp * caches.h_top
    g_b_out = np.array([dp])

    d_above: np.ndarray | None = None           # (d_h, T) gradient from the layer above
    for idx in range(top, -1, -1):
        p = model.layers[idx]
        lc = caches.layers[idx]
        dh_carry = dp * model.w_out if idx == top else np.zeros(cfg.d_h)
        dc_carry = np.zeros(cfg.d_h)
        rows = p.wx.shape[0]
        d_pre = np.empty((rows, T))
        for t in range(T - 1, -1, -1):
            dh_t = dh_carry if d_above is None else dh_carry + d_above[:, t]
            if lstm:
                dpre_t, dh_carry, dc_carry = cells.lstm_step_backward(
                    p.wh, lc.steps[t], dh_t, dc_carry
                )
            else:
                dpre_t, dh_carry = cells.gru_step_backward(p.wh, lc.steps[t], dh_t)
            d_pre[:, t] = dpre_t
        # dh_carry/dc_carry now hold the gradient on the window's initial
        # state; it is dropped (stateful truncation, zero state in stateless).
        g_wx = d_pre @ lc.inputs.T
        g_b = d_pre.sum(axis=1)
        h_prev = np.empty((cfg.d_h, T))
        h_prev[:, 0] = lc.h_init
        h_prev[:, 1:] = lc.h_seq[:, : T - 1]
        if lstm:
            g_wh = d_pre @ h_prev.T
        else:
            d_h = cfg.d_h
            g_wh = np.empty_like(p.wh)
            g_wh[: 2 * d_h] = d_pre[: 2 * d_h] @ h_prev.T
            rh = np.empty((d_h, T))
            for t in range(T):
                rh[:, t] = lc.steps[t].rh
            g_wh[2 * d_h :] = d_pre[2 * d_h :] @ rh.T
        grads_per_layer[idx] = (g_wx, g_wh, g_b)
        d_above = p.wx.T @ d_pre if idx > 0 else None

    grads: list[np.ndarray] = []
    for g_wx, g_wh, g_b in grads_per_layer:
        grads.extend((g_wx, g_wh, g_b))
    grads.append(g_w_out)
    grads.append(g_b_out)
    return loss, grads


def save_model(model: StackedModel, path: str | Path) -> None:
    """Write the versioned binary checkpoint described in the module docstring."""
    buf = bytearray()
    buf += _CKPT_MAGIC
    buf += struct.pack("<I", _CKPT_VERSION)
    header = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(header))
    buf += header
    items = model.param_items()
    buf += struct.pack("<I", len(items))
    for name, arr in items:
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        if arr.ndim == 2:
            buf += struct.pack("<II", arr.shape[0], arr.shape[1])
        else:
            buf += struct.pack("<II", arr.shape[0], 0)
        buf += arr.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


def load_model(path: str | Path) -> StackedModel:
    """Read a checkpoint; the result's parameters are bit-identical to the saved ones."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise DataError(f"checkpoint truncated at byte {off} in {path}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    if take(4) != _CKPT_MAGIC:
        raise DataError(f"not a model checkpoint: {path}")
    (version,) = struct.unpack("<I", take(4))
    if version != _CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    (hlen,) = struct.unpack("<I", take(4))
    config = ModelConfig.from_dict(json.loads(take(hlen).decode("utf-8")))
    model = build(config)
    (count,) = struct.unpack("<I", take(4))
    items = model.param_items()
    if count != len(items):
        raise DataError(
            f"checkpoint has {count} tensors, model needs {len(items)}: {path}"
        )
    for name, arr in items:
        (nlen,) = struct.unpack("<I", take(4))
        saved_name = take(nlen).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        shape = (rows, cols) if cols else (rows,)
        if saved_name != name or shape != arr.shape:
            raise DataError(
                f"checkpoint tensor {saved_name} {shape} does not match "
                f"expected {name} {arr.shape}: {path}"
            )
        data = np.frombuffer(take(arr.size * 8), dtype="<f8").reshape(shape)
        arr[...] = data
    if off != len(raw):
        raise DataError(f"trailing bytes after checkpoint payload in {path}")
    return model
