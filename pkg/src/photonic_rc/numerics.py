"""Random matrix generation, quantization and spectral-radius estimation.

Everything here is a pure function of its arguments. Random draws are keyed by
an :class:`RngSeed`, i.e. an integer seed plus a short stream label, so the
input mask and the adjacency matrix of one experiment never share a stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "QuantSpec",
    "RngSeed",
    "PHASE_QUANT",
    "INTENSITY_QUANT",
    "quantize",
    "make_input_mask",
    "make_reservoir_matrix",
    "spectral_radius",
    "ReservoirGenerationError",
    "SpectralRadiusError",
]

# Added before flooring so that exact grid values (up to rounding) map onto
# themselves; keeps quantize idempotent in floating point.
_FLOOR_SLACK = 1e-9

DENSE_EIG_MAX = 64


class ReservoirGenerationError(RuntimeError):
    """Raised when a random adjacency matrix cannot be rescaled."""


class SpectralRadiusError(RuntimeError):
    """Raised when spectral radius estimation does not converge."""


@dataclass(frozen=True)
class QuantSpec:
    """Uniform quantizer with ``2**bits`` levels spanning ``[lo, hi]``."""

    bits: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if not self.hi > self.lo:
            raise ValueError(f"need hi > lo, got [{self.lo}, {self.hi}]")

    @property
    def levels(self) -> int:
        return 2**self.bits

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.levels - 1)


PHASE_QUANT = QuantSpec(8)
INTENSITY_QUANT = QuantSpec(10)


@dataclass(frozen=True)
class RngSeed:
    """A 64-bit seed together with the name of the stream it drives."""

    seed: int
    label: str = "default"

    def generator(self) -> np.random.Generator:
        key = zlib.crc32(self.label.encode("utf-8"))
        seq = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(key,))
        return np.random.default_rng(seq)


def _as_seed(seed, label: str) -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    return RngSeed(int(seed), label)


def quantize_index(v, q: QuantSpec) -> np.ndarray:
    """Integer grid index ``k`` in ``[0, levels - 1]`` that :func:`quantize` maps ``v`` to."""
    t = np.clip((np.asarray(v, dtype=np.float64) - q.lo) / (q.hi - q.lo), 0.0, 1.0)
    return np.floor(t * (q.levels - 1) + _FLOOR_SLACK).astype(np.intp)


def quantize(v, q: QuantSpec):
    """Clamp ``v`` to ``[q.lo, q.hi]`` and floor it onto the quantizer grid.

    Works elementwise on arrays; a Python scalar in gives a float out.
    """
    steps = q.levels - 1
    t = np.clip((np.asarray(v, dtype=np.float64) - q.lo) / (q.hi - q.lo), 0.0, 1.0)
    k = np.floor(t * steps + _FLOOR_SLACK)
    out = q.lo + (q.hi - q.lo) * (k / steps)
    if out.ndim == 0:
        return float(out)
    return out


def make_input_mask(n: int, p: int, gain: float, seed) -> np.ndarray:
    """Dense ``n x p`` input mask with entries i.i.d. uniform on ``[-gain, gain]``."""
    if n <= 0 or p <= 0:
        raise ValueError(f"input mask needs positive shape, got {n} x {p}")
    if gain < 0:
        raise ValueError(f"gain must be non-negative, got {gain}")
    rng = _as_seed(seed, "w_in").generator()
    return rng.uniform(-1.0, 1.0, size=(n, p)) * gain


def _bernoulli_sparse(n: int, density: float, rng: np.random.Generator) -> sp.csr_matrix:
    # Row blocks keep the dense Bernoulli mask small for large n.
    block = max(1, min(n, 2**22 // n))
    rows, cols, vals = [], [], []
    for r0 in range(0, n, block):
        r1 = min(n, r0 + block)
        mask = rng.random((r1 - r0, n)) < density
        r, c = np.nonzero(mask)
        rows.append(r + r0)
        cols.append(c)
        vals.append(rng.uniform(-1.0, 1.0, size=r.size))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def make_reservoir_matrix(n: int, density: float, rho: float, seed) -> sp.csr_matrix:
    """Sparse random adjacency matrix rescaled to spectral radius ``rho``.

    Each entry is nonzero with probability ``density`` and, when nonzero,
    uniform on ``[-1, 1]`` before rescaling. ``rho == 0`` gives the zero
    matrix (feedforward operation).
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    if rho < 0:
        raise ValueError(f"rho must be non-negative, got {rho}")
    if rho == 0:
        return sp.csr_matrix((n, n), dtype=np.float64)

    rng = _as_seed(seed, "w_res").generator()
    raw = _bernoulli_sparse(n, density, rng)
    if raw.nnz == 0:
        raise ReservoirGenerationError(
            f"random {n}x{n} matrix with density {density} has no nonzero entries")
    rho0 = spectral_radius(raw)
    if rho0 == 0:
        raise ReservoirGenerationError(
            "random adjacency matrix has spectral radius 0; cannot rescale to "
            f"rho={rho} (try another seed or a higher density)")
    return (raw * (rho / rho0)).tocsr()


def spectral_radius(m, tol: float = 1e-8, max_iter: int | None = None, seed: int = 0) -> float:
    """Largest eigenvalue modulus of a square (dense or sparse) matrix.

    Small matrices (``n <= 64``) are solved densely. Larger ones use
    implicitly restarted Arnoldi iteration, i.e. a restarted block power
    iteration, from a seeded random start vector. Plain power iteration
    stalls on the complex-conjugate dominant pairs that random nonsymmetric
    matrices usually have.
    """
    shape = m.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {shape}")
    n = shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_EIG_MAX:
        dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))

    op = sp.csr_matrix(m) if sp.issparse(m) else np.asarray(m, dtype=np.float64)
    if sp.issparse(op) and op.nnz == 0:
        return 0.0
    v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=n)
    # Several Ritz values at once: with k=1 ARPACK can lock onto a runner-up
    # from the cluster near the spectral circle.
    k = min(6, n - 2)
    ncv = min(n - 1, max(2 * k + 1, 40))
    try:
        vals = spla.eigs(op, k=k, which="LM", v0=v0, ncv=ncv, tol=tol,
                         maxiter=max_iter if max_iter is not None else 50 * n,
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise SpectralRadiusError(
            f"spectral radius did not converge for {n}x{n} matrix "
            f"(iteration cap {max_iter})") from exc
    return float(np.max(np.abs(vals)))
