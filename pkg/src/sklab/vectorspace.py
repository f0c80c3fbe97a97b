"""Size-normalized vector geometry and quenched disorder sampling.

Every inner product in this package is normalized by the system size,

    <x, y> = (1/N) sum_i x_i y_i,       ||x|| = sqrt(<x, x>),

so the all-ones vector has unit norm and a matrix with i.i.d. N(0, 1/N)
entries maps unit vectors to (approximately) unit vectors.  The outer
product is normalized the same way, (a (x) b)_ij = a_i b_j / N, which gives
the contraction identity (a (x) b) c = <b, c> a.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

__all__ = [
    "Disorder",
    "inner",
    "norm",
    "outer",
    "symmetrize",
    "sample_disorder",
    "save_disorder",
    "load_disorder",
]

_MAGIC = b"SKDISORD"


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Normalized inner product (1/N) sum_i x_i y_i."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return float(x @ y) / x.shape[0]


def norm(x: np.ndarray) -> float:
    """Norm induced by `inner`."""
    return float(np.sqrt(inner(x, x)))


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalized outer product, entries a_i b_j / N."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return np.outer(a, b) / a.shape[0]


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T) / sqrt(2).

    The sqrt(2) keeps the entrywise variance of a matrix with i.i.d.
    entries unchanged off the diagonal.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got shape {a.shape}")
    return (a + a.T) / np.sqrt(2.0)


@dataclass(frozen=True)
class Disorder:
    """One quenched sample of the interaction matrix.

    `g` holds N x N independent centered Gaussians of variance 1/N,
    diagonal included.  Instances are immutable; consumers copy `g`
    before modifying it.
    """

    n: int
    seed: int
    g: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.g.shape != (self.n, self.n):
            raise ValueError(f"matrix shape {self.g.shape} != ({self.n}, {self.n})")
        if not np.all(np.isfinite(self.g)):
            raise ValueError("non-finite entries in disorder matrix")
        self.g.setflags(write=False)


def sample_disorder(n: int, seed: int) -> Disorder:
    """Draw an N x N matrix of i.i.d. centered Gaussians with variance 1/N.

    Reproducibility contract: the stream is Philox4x64-10 keyed by `seed`,
    from which n*n uniform doubles are drawn in row-major order and mapped
    through the inverse normal CDF, then scaled by 1/sqrt(n).  The same
    (n, seed) yields a bit-identical matrix, and the recipe is simple
    enough to replicate outside this package.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen = np.random.Generator(np.random.Philox(key=seed))
    u = gen.random((n, n))
    # ndtri(0) = -inf; the smallest positive normal keeps it finite (~ -37.5)
    np.maximum(u, np.finfo(float).tiny, out=u)
    g = ndtri(u)
    g /= np.sqrt(n)
    return Disorder(n=n, seed=int(seed), g=g)


def save_disorder(d: Disorder, path: str) -> None:
    """Write the binary replay format: magic, N, seed, row-major float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", d.n, d.seed))
        fh.write(np.ascontiguousarray(d.g, dtype="<f8").tobytes())


def load_disorder(path: str) -> Disorder:
    """Read a matrix written by `save_disorder`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        n, seed = struct.unpack("<QQ", fh.read(16))
        payload = fh.read(8 * n * n)
        if len(payload) != 8 * n * n:
            raise ValueError(f"truncated disorder file {path}")
        g = np.frombuffer(payload, dtype="<f8").astype(float).reshape(n, n)
    return Disorder(n=int(n), seed=int(seed), g=g)
