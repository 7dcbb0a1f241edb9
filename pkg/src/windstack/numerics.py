"""Dense float64 matrices, activations, a seeded PRNG, and a multiply-add counter.

Everything downstream (recurrent cells, the stacked network, the optimizer)
is built on the small surface defined here. Design constraints:

* 64-bit floats throughout; gradient checks at 1e-5 relative error are not
  achievable in 32-bit.
* Row-major flat storage, explicit (rows, cols) shape.
* Reproducibility is bitwise: the generator is xorshift64* (Marsaglia/Vigna),
  seeded through one SplitMix64 step, so the same seed yields the same bits
  on every machine and run. See `Xorshift64Star` for the exact recurrence.
* The operation counter tallies multiply-adds of matrix products only, which
  is the quantity the per-step cost of a recurrent layer is stated in.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import ParameterError, ShapeError

__all__ = [
    "Tensor2",
    "OpCounter",
    "count_ops",
    "tally_macs",
    "matmul",
    "elementwise",
    "sigmoid",
    "tanh",
    "add",
    "sub",
    "mul",
    "Xorshift64Star",
    "seeded_uniform",
    "derive_seed",
]

_MASK64 = (1 << 64) - 1


class Tensor2:
    """A dense real matrix with explicit (rows, cols) shape.

    Storage is a row-major float64 numpy buffer of length rows*cols. Values
    returned from the public operations are frozen (the buffer is marked
    read-only), so they are safe to share across threads.
    """

    __slots__ = ("_a",)

    def __init__(self, rows: int, cols: int, data: Sequence[float] | None = None):
        if rows < 1 or cols < 1:
            raise ParameterError(f"Tensor2 shape must be positive, got {rows}x{cols}")
        if data is None:
            a = np.zeros((rows, cols), dtype=np.float64)
        else:
            a = np.array(data, dtype=np.float64).reshape(-1)
            if a.size != rows * cols:
                raise ShapeError(
                    f"data length {a.size} does not match shape {rows}x{cols}"
                )
            a = a.reshape(rows, cols)
        a.setflags(write=False)
        self._a = a

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Tensor2":
        a = np.array(rows, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"expected a rectangular list of rows, got ndim={a.ndim}")
        return cls.wrap(a)

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor2":
        """Adopt a 2-D float64 array without copying. Freezes the buffer."""
        if array.ndim != 2:
            raise ShapeError(f"expected 2-D array, got ndim={array.ndim}")
        t = cls.__new__(cls)
        a = np.ascontiguousarray(array, dtype=np.float64)
        a.setflags(write=False)
        t._a = a
        return t

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Tensor2":
        return cls(rows, cols)

    @classmethod
    def full(cls, rows: int, cols: int, value: float) -> "Tensor2":
        return cls.wrap(np.full((rows, cols), float(value)))

    @classmethod
    def column(cls, values: Sequence[float]) -> "Tensor2":
        a = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        return cls.wrap(a)

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the elements (read-only)."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """The underlying 2-D buffer (read-only)."""
        return self._a

    def to_lists(self) -> list[list[float]]:
        return self._a.tolist()

    def __getitem__(self, idx: tuple[int, int]) -> float:
        i, j = idx
        return float(self._a[i, j])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor2):
            return NotImplemented
        return self._a.shape == other._a.shape and bool(
            np.array_equal(self._a, other._a)
        )

    __hash__ = None  # value semantics, not hashable

    def allclose(self, other: "Tensor2", tol: float = 1e-12) -> bool:
        return self._a.shape == other._a.shape and bool(
            np.allclose(self._a, other._a, rtol=0.0, atol=tol)
        )

    def __repr__(self) -> str:
        return f"Tensor2({self.rows}x{self.cols})"


class OpCounter:
    """Accumulates multiply-add counts for one measured region."""

    __slots__ = ("multiply_adds",)

    def __init__(self) -> None:
        self.multiply_adds = 0

    def add(self, n: int) -> None:
        self.multiply_adds += n


_active_counter: OpCounter | None = None


@contextmanager
def count_ops() -> Iterator[OpCounter]:
    """Install a fresh OpCounter for the duration of the with-block.

    Regions do not nest; the innermost region wins. One counter belongs to
    one measurement region and is not shared between threads.
    """
    global _active_counter
    previous = _active_counter
    counter = OpCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = previous


def tally_macs(n: int) -> None:
    """Credit `n` multiply-adds to the active counting region, if any.

    Called by `matmul` and by the fused cell kernels that perform their
    matrix products directly on the underlying buffers.
    """
    if _active_counter is not None:
        _active_counter.multiply_adds += n


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    """Matrix product. Credits rows*inner*cols multiply-adds to the counter."""
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul shape mismatch: {a.rows}x{a.cols} times {b.rows}x{b.cols}"
        )
    tally_macs(a.rows * a.cols * b.cols)
    return Tensor2.wrap(a.array @ b.array)


def _binary(op: str, a: Tensor2, b: Tensor2) -> np.ndarray:
    if a.rows != b.rows or a.cols != b.cols:
        raise ShapeError(
            f"elementwise {op} shape mismatch: {a.rows}x{a.cols} vs {b.rows}x{b.cols}"
        )
    return b.array


def sigmoid(a: Tensor2) -> Tensor2:
    """Logistic function 1/(1+exp(-x)); output strictly inside (0, 1)."""
    return Tensor2.wrap(expit(a.array))


def tanh(a: Tensor2) -> Tensor2:
    """Hyperbolic tangent; output strictly inside (-1, 1)."""
    return Tensor2.wrap(np.tanh(a.array))


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    return Tensor2.wrap(a.array + _binary("add", a, b))


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    return Tensor2.wrap(a.array - _binary("sub", a, b))


def mul(a: Tensor2, b: Tensor2) -> Tensor2:
    return Tensor2.wrap(a.array * _binary("mul", a, b))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor2, b: Tensor2 | None = None) -> Tensor2:
    """Apply a named elementwise operation.

    `sigmoid` and `tanh` are unary; `add`, `sub`, `mul` require two tensors
    of equal shape.
    """
    if op in _UNARY:
        if b is not None:
            raise ParameterError(f"elementwise {op} is unary, second operand given")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ParameterError(f"elementwise {op} needs a second operand")
        return _BINARY[op](a, b)
    raise ParameterError(
        f"unknown elementwise op {op!r}; expected one of sigmoid, tanh, add, sub, mul"
    )


def _splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (output, advanced state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def derive_seed(seed: int, index: int) -> int:
    """Deterministic sub-seed: the (index+1)-th SplitMix64 output from `seed`.

    Lets independent components (parameter tensors, grid cells) draw from
    disjoint streams while staying reproducible from one root seed.
    """
    if index < 0:
        raise ParameterError(f"seed index must be non-negative, got {index}")
    state = seed & _MASK64
    out = 0
    for _ in range(index + 1):
        out, state = _splitmix64(state)
    return out


class Xorshift64Star:
    """xorshift64* generator.

    The state is seeded with one SplitMix64 output of the user seed (so seed 0
    is fine), then each draw applies

        s ^= s >> 12;  s ^= s << 25;  s ^= s >> 27    (mod 2**64)

    and returns s * 2685821657736338717 mod 2**64. Doubles in [0, 1) take the
    top 53 bits of that product divided by 2**53. Integer arithmetic only, so
    the stream is identical on every platform.
    """

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        s, _ = _splitmix64(seed & _MASK64)
        self._s = s if s != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        s = self._s
        s ^= s >> 12
        s ^= (s << 25) & _MASK64
        s ^= s >> 27
        self._s = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def next_float(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def fill(self, rows: int, cols: int, lo: float, hi: float) -> np.ndarray:
        """Row-major array of uniforms in [lo, hi); one draw per element."""
        span = hi - lo
        out = np.empty(rows * cols, dtype=np.float64)
        nxt = self.next_float
        for k in range(rows * cols):
            out[k] = lo + span * nxt()
        return out.reshape(rows, cols)


def seeded_uniform(seed: int, rows: int, cols: int, lo: float, hi: float) -> Tensor2:
    """Deterministic uniform tensor: same seed and shape, same bits.

    Elements are drawn row-major from a fresh `Xorshift64Star(seed)` stream
    and lie in [lo, hi).
    """
    if not lo < hi:
        raise ParameterError(f"uniform range is empty: lo={lo} >= hi={hi}")
    return Tensor2.wrap(Xorshift64Star(seed).fill(rows, cols, lo, hi))
