"""Dense float64 matrix arithmetic and seeded random number generation.

Matrices are plain C-contiguous float64 numpy arrays of shape (rows, cols).
Every public operation validates shapes explicitly; there is no implicit
broadcasting at this level, so shape bugs surface as ShapeError rather than
silently broadcast results. Products go through BLAS, which is deterministic
run-to-run on a fixed platform.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(data) -> np.ndarray:
    """Coerce nested lists / arrays to a 2-D float64 matrix."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with an explicit inner-dimension check."""
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise product of two same-shape matrices."""
    _check_same_shape(a, b, "hadamard")
    return a * b


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "sub")
    return a - b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * float(c)


class Rng:
    """Seeded PCG64 stream.

    Equal seeds produce bit-identical draw sequences on every platform; all
    matrix fills consume the stream in row-major order. A generator instance
    is single-owner: never share one across threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, shape=None):
        out = self._gen.uniform(lo, hi, size=shape)
        return float(out) if shape is None else out.astype(np.float64, copy=False)

    def normal(self, mu: float, sigma: float, shape) -> np.ndarray:
        return mu + sigma * self._gen.standard_normal(size=shape)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def derived_rng(*keys: int) -> Rng:
    """Deterministic stream derived from a tuple of integer keys.

    Used to give each epoch (and any other reproducible sub-task) its own
    independent stream without consuming the parent generator.
    """
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys])
    rng = Rng.__new__(Rng)
    rng.seed = None
    rng._gen = np.random.Generator(np.random.PCG64(seq))
    return rng


def uniform(rng: Rng, lo: float, hi: float, shape) -> np.ndarray:
    """Matrix of uniform draws; consumes rng state in row-major order."""
    return rng.uniform(lo, hi, shape)
