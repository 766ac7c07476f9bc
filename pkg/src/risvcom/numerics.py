"""Complex linear-algebra kernels and seeded sampling.

Matrices are plain complex ``numpy.ndarray`` objects. The library uses the
column-stacking (Fortran order) ``vec`` convention everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    AllZeroGains,
    ColumnMismatch,
    NegativeVariance,
    NoConvergence,
    NotHPD,
    SizeMismatch,
)

__all__ = [
    "RngStream",
    "as_generator",
    "kron",
    "khatri_rao",
    "vec",
    "unvec",
    "sample_cscg",
    "logdet_hpd",
    "svd",
    "water_fill",
]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream)``.

    Distinct stream ids on one seed give statistically independent
    generators (``SeedSequence`` spawn keys), so parallel sweeps can hand one
    stream to each task without coordinating.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngStream":
        # nested ids are folded into one integer so children stay hashable
        return RngStream(self.seed, int(self.stream) * 1_000_003 + int(stream) + 1)


def as_generator(rng) -> np.random.Generator:
    """Coerce ``rng`` (Generator, RngStream, int or None) to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def kron(A, B) -> np.ndarray:
    """Kronecker product ``A ⊗ B``."""
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def khatri_rao(A, B) -> np.ndarray:
    """Column-wise Kronecker product ``A ⊙ B``.

    Column ``j`` of the result is ``kron(A[:, j], B[:, j])``.
    """
    A = np.atleast_2d(np.asarray(A))
    B = np.atleast_2d(np.asarray(B))
    if A.shape[1] != B.shape[1]:
        raise ColumnMismatch(f"khatri_rao needs equal column counts, got {A.shape[1]} and {B.shape[1]}")
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def vec(A) -> np.ndarray:
    """Stack the columns of ``A`` into a 1-D array."""
    return np.asarray(A).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise SizeMismatch(f"cannot unvec {v.size} entries into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def sample_cscg(variance: float, shape, rng) -> np.ndarray:
    """Draw i.i.d. circularly-symmetric complex Gaussian entries.

    Each entry has ``E|z|^2 = variance``; real and imaginary parts carry
    ``variance / 2`` each.
    """
    if variance < 0:
        raise NegativeVariance(f"variance must be >= 0, got {variance}")
    gen = as_generator(rng)
    shape = tuple(np.atleast_1d(shape).astype(int)) if not isinstance(shape, tuple) else shape
    z = gen.standard_normal(shape + (2,))
    return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])


def logdet_hpd(A) -> float | np.ndarray:
    """Natural-log determinant of a Hermitian positive-definite matrix.

    Works on stacks of matrices (leading batch axes).
    """
    A = np.asarray(A)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotHPD("matrix is not Hermitian positive definite") from exc
    d = np.real(np.diagonal(L, axis1=-2, axis2=-1))
    if np.any(d <= 0):
        raise NotHPD("non-positive Cholesky pivot")
    return 2.0 * np.sum(np.log(d), axis=-1)


def svd(A):
    """Thin SVD returning ``(U, s, V)`` with ``A = U @ diag(s) @ V^H``."""
    try:
        U, s, Vh = np.linalg.svd(np.asarray(A), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence("SVD did not converge") from exc
    return U, s, Vh.conj().swapaxes(-1, -2)


def water_fill(gains, noise: float, budget: float, max_iter: int = 200) -> np.ndarray:
    """Water-filling power allocation over parallel channels.

    Solves ``max sum log2(1 + g_r p_r / noise)`` s.t. ``sum p_r = budget``,
    ``p_r >= 0``. The water level ``mu = 1/p0`` is located by bisection and
    ``p_r = max(mu - noise / g_r, 0)``.

    Parameters
    ----------
    gains : array_like
        Non-negative channel gains (squared singular values).
    noise : float
        Noise power.
    budget : float
        Total power, must be positive.

    Returns
    -------
    numpy.ndarray
        Per-channel powers, same length as ``gains``.
    """
    g = np.asarray(gains, dtype=float)
    if budget <= 0:
        raise ValueError("budget must be positive")
    if not np.any(g > 0):
        raise AllZeroGains("water filling needs at least one positive gain")
    floor = np.full(g.shape, np.inf)
    floor[g > 0] = noise / g[g > 0]
    lo = float(np.min(floor))
    hi = lo + float(budget)
    for _ in range(max_iter):
        mu = 0.5 * (lo + hi)
        if np.sum(np.maximum(mu - floor, 0.0)) > budget:
            hi = mu
        else:
            lo = mu
        if hi - lo <= 1e-15 * max(hi, 1e-300):
            break
    p = np.maximum(0.5 * (lo + hi) - floor, 0.0)
    total = p.sum()
    if total > 0:
        # remove the last ulp-scale bisection residue
        p *= budget / total
    return p
