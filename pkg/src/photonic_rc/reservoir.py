"""Quantized photonic coupled-map reservoir and its three operation modes.

One update of the network reads::

    x' = Q10( I0 * sin^2( pi * Q8( W_res x + beta * W_in u ) ) )

where ``Q8`` clamps its argument to ``[0, 1]`` and floors it onto 256 levels
(the SLM drive, interpreted as half the phase, ``phi / 2`` in ``[0, pi]``)
and ``Q10`` floors the detected intensity onto 1024 camera levels.

State matrices are laid out with one column per item (image, or image
column in per-column mode), matching ``X`` in the ridge normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import (INTENSITY_QUANT, PHASE_QUANT, QuantSpec, RngSeed, make_input_mask,
                       make_reservoir_matrix, quantize, quantize_index)

N_COLUMNS = 28
DENSE_RES_MAX = 4096
PAPER_SIZES = (1024, 2304, 4096, 6400, 16384)

MODES = ("feedforward", "recurrent_full", "columnwise_per_column", "columnwise_aggregate")


def nonlinearity(s, peak: float = 1.0, phase_quant: QuantSpec = PHASE_QUANT,
                 intensity_quant: QuantSpec = INTENSITY_QUANT):
    """Camera reading for SLM drive ``s``: ``Q10(peak * sin^2(pi * Q8(s)))``."""
    code = (quantize(s, phase_quant) - phase_quant.lo) / (phase_quant.hi - phase_quant.lo)
    intensity = peak * np.sin(np.pi * code) ** 2
    return quantize(intensity, intensity_quant)


@dataclass(frozen=True, eq=False)
class ReservoirConfig:
    """Fixed weights and quantizers of one simulated reservoir.

    ``w_in`` is ``n x p``; ``w_res`` is ``n x n`` (sparse or dense).
    """

    w_in: np.ndarray
    w_res: sp.spmatrix | np.ndarray
    input_gain: float
    spectral_radius: float = 0.0
    peak_intensity: float = 1.0
    phase_quant: QuantSpec = PHASE_QUANT
    intensity_quant: QuantSpec = INTENSITY_QUANT
    _res_op: object = field(default=None, init=False, repr=False)
    _lut: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        w_in = np.asarray(self.w_in, dtype=np.float64)
        if w_in.ndim != 2:
            raise ValueError(f"w_in must be a matrix, got shape {w_in.shape}")
        n = w_in.shape[0]
        if self.w_res.shape != (n, n):
            raise ValueError(f"w_res shape {self.w_res.shape} does not match n={n}")
        object.__setattr__(self, "w_in", w_in)
        w_res = sp.csr_matrix(self.w_res) if not sp.issparse(self.w_res) else self.w_res.tocsr()
        object.__setattr__(self, "w_res", w_res)
        if w_res.nnz == 0:
            op = None
        elif n <= DENSE_RES_MAX:
            op = w_res.toarray()
        else:
            op = w_res
        object.__setattr__(self, "_res_op", op)
        # Q8 leaves only `levels` possible drives, so the whole node response is a table
        q = self.phase_quant
        grid = q.lo + (q.hi - q.lo) * (np.arange(q.levels) / (q.levels - 1))
        object.__setattr__(self, "_lut", nonlinearity(grid, self.peak_intensity, q,
                                                      self.intensity_quant))

    @classmethod
    def build(cls, n: int, p: int, input_gain: float, rho: float = 0.0, density: float = 0.05,
              seed: int = 0, mask_gain: float = 1.0) -> "ReservoirConfig":
        w_in = make_input_mask(n, p, mask_gain, RngSeed(seed, "w_in"))
        w_res = make_reservoir_matrix(n, density, rho, RngSeed(seed, "w_res"))
        return cls(w_in, w_res, input_gain, rho)

    @property
    def n(self) -> int:
        return self.w_in.shape[0]

    @property
    def p(self) -> int:
        return self.w_in.shape[1]

    @property
    def recurrent(self) -> bool:
        return self._res_op is not None

    def activate(self, pre: np.ndarray) -> np.ndarray:
        """Same values as :func:`nonlinearity`, by table lookup on the 8-bit drive code."""
        return self._lut[quantize_index(pre, self.phase_quant)]

    def drive(self, u: np.ndarray) -> np.ndarray:
        """``beta * W_in u`` for ``u`` of shape ``(p,)`` or ``(p, B)``."""
        if u.shape[0] != self.p:
            raise ValueError(f"input has {u.shape[0]} features, reservoir expects {self.p}")
        return self.input_gain * (self.w_in @ u)

    def feedback(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n:
            raise ValueError(f"state has {x.shape[0]} components, reservoir has {self.n}")
        if self._res_op is None:
            return np.zeros_like(x, dtype=np.float64)
        return np.asarray(self._res_op @ x)


def step(cfg: ReservoirConfig, x, u) -> np.ndarray:
    """One network update; ``x``/``u`` may be single vectors or column batches."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.ndim != u.ndim or (x.ndim == 2 and x.shape[1] != u.shape[1]):
        raise ValueError(f"state batch {x.shape} and input batch {u.shape} disagree")
    return cfg.activate(cfg.feedback(x) + cfg.drive(u))


@dataclass
class HarvestedStates:
    """Readout matrix ``X`` (rows: readout dimension, columns: items).

    ``item`` maps each column to its source image; ``timestep`` (1-based)
    is set in per-column mode.
    """

    X: np.ndarray
    mode: str
    item: np.ndarray
    timestep: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.X.shape[0]


def _rows(inputs) -> np.ndarray:
    arr = np.asarray(inputs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    return arr


# ---------------------------------------------------------------------------
# Batched cores: each takes a block of items and returns a state block.
# ---------------------------------------------------------------------------

def feedforward_block(cfg: ReservoirConfig, u_rows: np.ndarray) -> np.ndarray:
    return cfg.activate(cfg.drive(u_rows.T))


def recurrent_block(cfg: ReservoirConfig, u_rows: np.ndarray, k_e: int) -> np.ndarray:
    """Inject once from rest, then relax ``k_e`` steps with zero input."""
    x = feedforward_block(cfg, u_rows)
    states = [x]
    for _ in range(k_e):
        x = cfg.activate(cfg.feedback(x))
        states.append(x)
    return np.concatenate(states, axis=0)


def columnwise_block(cfg: ReservoirConfig, images: np.ndarray,
                     keep: Sequence[int]) -> np.ndarray:
    """Feed image columns left to right from rest; return states at ``keep``.

    ``keep`` holds 1-based timesteps. Output shape ``(len(keep), n, B)``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[2] != N_COLUMNS:
        raise ValueError(f"column-wise mode needs (N, rows, {N_COLUMNS}) images, got {images.shape}")
    keep = list(keep)
    last = max(keep) if keep else 0
    wanted = {t: i for i, t in enumerate(keep)}
    out = np.empty((len(keep), cfg.n, images.shape[0]))
    x = np.zeros((cfg.n, images.shape[0]))
    for t in range(1, last + 1):
        col = images[:, :, t - 1].T
        x = cfg.activate(cfg.feedback(x) + cfg.drive(col))
        if t in wanted:
            out[wanted[t]] = x
    return out


def iter_blocks(n_items: int, block: int) -> Iterator[slice]:
    for start in range(0, n_items, block):
        yield slice(start, min(n_items, start + block))


def check_aggregate(aggregate: Sequence[int]) -> tuple[int, ...]:
    agg = tuple(int(a) for a in aggregate)
    if not agg:
        raise ValueError("aggregate index set is empty")
    if any(a < 1 or a > N_COLUMNS for a in agg):
        raise ValueError(f"aggregate indices must lie in [1, {N_COLUMNS}], got {agg}")
    if any(b <= a for a, b in zip(agg, agg[1:])):
        raise ValueError(f"aggregate indices must be strictly increasing, got {agg}")
    return agg


# ---------------------------------------------------------------------------
# Whole-dataset runs
# ---------------------------------------------------------------------------

def run_feedforward(cfg: ReservoirConfig, features, block: int = 2048) -> HarvestedStates:
    """Memoryless mode: one image per step, state reset between images."""
    if cfg.recurrent:
        raise ValueError("feedforward mode needs W_res = 0: the reservoir must act as a "
                         "memoryless map (build it with rho=0)")
    u = _rows(features)
    X = np.empty((cfg.n, u.shape[0]))
    for sl in iter_blocks(u.shape[0], block):
        X[:, sl] = feedforward_block(cfg, u[sl])
    return HarvestedStates(X, "feedforward", np.arange(u.shape[0]))


def run_recurrent_full(cfg: ReservoirConfig, features, k_e: int,
                       block: int = 2048) -> HarvestedStates:
    """Full-image recurrent mode with ``k_e`` autonomous transient steps.

    The readout column of an image stacks its ``k_e + 1`` states.
    """
    if k_e < 0:
        raise ValueError(f"k_e must be non-negative, got {k_e}")
    u = _rows(features)
    X = np.empty(((k_e + 1) * cfg.n, u.shape[0]))
    for sl in iter_blocks(u.shape[0], block):
        X[:, sl] = recurrent_block(cfg, u[sl], k_e)
    return HarvestedStates(X, "recurrent_full", np.arange(u.shape[0]))


def run_columnwise(cfg: ReservoirConfig, images, aggregate: Sequence[int] | None = None,
                   block: int = 1024) -> HarvestedStates:
    """Column-wise recurrent mode on raw ``(N, 28, 28)`` images.

    With ``aggregate`` the states at those timesteps are stacked into one
    column per image. Without it every timestep becomes its own column
    (image-major), for per-column training.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    n_img = images.shape[0]
    if aggregate is not None:
        agg = check_aggregate(aggregate)
        X = np.empty((len(agg) * cfg.n, n_img))
        for sl in iter_blocks(n_img, block):
            X[:, sl] = columnwise_block(cfg, images[sl], agg).reshape(len(agg) * cfg.n, -1)
        return HarvestedStates(X, "columnwise_aggregate", np.arange(n_img))

    steps = tuple(range(1, N_COLUMNS + 1))
    X = np.empty((cfg.n, n_img * N_COLUMNS))
    for sl in iter_blocks(n_img, block):
        traj = columnwise_block(cfg, images[sl], steps)  # (28, n, B)
        X[:, sl.start * N_COLUMNS:sl.stop * N_COLUMNS] = (
            traj.transpose(1, 2, 0).reshape(cfg.n, -1))
    return HarvestedStates(X, "columnwise_per_column",
                           np.repeat(np.arange(n_img), N_COLUMNS),
                           np.tile(np.arange(1, N_COLUMNS + 1), n_img))
