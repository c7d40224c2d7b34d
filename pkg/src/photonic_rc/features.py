"""Feature extraction front ends feeding the reservoir input layer.

Every extractor takes either one ``(28, 28)`` image or a stack
``(N, 28, 28)`` and returns a ``(p,)`` vector or an ``(N, p)`` matrix.
Pixel values are expected in ``[0, 1]``; image row 0 is the top row.

Dimensionalities for 28x28 inputs:

==========================================  =====
method                                      p
==========================================  =====
raw                                         784
zoning, 2x2 / 4x4 zones                     196 / 49
Gabor, F filters, global energy             F
Gabor, F filters, 7x7 local energy          49 F
Gabor, local energy + 2x2 block norm        144 F
HOG, 7px cells / 4px cells (9 bins, 2x2)    324 / 1296
projection histograms                       56
distance profiles                           112
==========================================  =====
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.signal import fftconvolve

SIDE = 28
FOREGROUND_THRESHOLD = 0.25
DEFAULT_ORIENTATIONS = tuple(22.5 * i for i in range(8))


def _stack(img) -> tuple[np.ndarray, bool]:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim != 3:
        raise ValueError(f"expected an image or a stack of images, got shape {arr.shape}")
    return arr, False


def _unstack(out: np.ndarray, single: bool) -> np.ndarray:
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Raw pixels and zoning
# ---------------------------------------------------------------------------

def extract_raw(img) -> np.ndarray:
    imgs, single = _stack(img)
    return _unstack(imgs.reshape(imgs.shape[0], -1).copy(), single)


def zoning(img, z: int) -> np.ndarray:
    """Sum of pixel values in each non-overlapping ``z x z`` zone, zones row-major."""
    imgs, single = _stack(img)
    n, h, w = imgs.shape
    if z <= 0 or h % z or w % z:
        raise ValueError(f"zone size {z} does not divide a {h}x{w} image")
    out = imgs.reshape(n, h // z, z, w // z, z).sum(axis=(2, 4)).reshape(n, -1)
    return _unstack(out, single)


# ---------------------------------------------------------------------------
# Gabor filters
# ---------------------------------------------------------------------------

def gabor_kernel(wavelength: float, theta_deg: float, sigma_x: float, sigma_y: float) -> np.ndarray:
    """Real, even-symmetric Gabor impulse response on an odd integer grid.

    ``kernel[r, c]`` samples ``h(x, y)`` at ``x = c - half`` and
    ``y = half - r`` (y points up, so ``theta`` is counter-clockwise on
    screen). The side is ``2 * ceil(2 * max(sigma_x, sigma_y)) + 1``.
    """
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be positive, got {sigma_x}, {sigma_y}")
    half = int(math.ceil(2.0 * max(sigma_x, sigma_y)))
    coords = np.arange(-half, half + 1, dtype=np.float64)
    x = coords[None, :]
    y = -coords[:, None]
    th = math.radians(theta_deg)
    x_t = x * math.cos(th) + y * math.sin(th)
    y_t = y * math.cos(th) - x * math.sin(th)
    envelope = np.exp(-x_t**2 / (2.0 * sigma_x**2) - y_t**2 / (2.0 * sigma_y**2))
    return envelope * np.cos(2.0 * math.pi * x_t / wavelength)


@dataclass(frozen=True)
class GaborBank:
    """Filter bank plus the energy pooling applied to the filter responses.

    ``sigma_x``/``sigma_y`` default to half the wavelength of each filter.
    ``local_grid=None`` computes one global energy per filter.
    """

    wavelengths: tuple[float, ...] = (5.0,)
    orientations: tuple[float, ...] = DEFAULT_ORIENTATIONS
    sigma_x: float | None = None
    sigma_y: float | None = None
    local_grid: int | None = 7
    block_norm: bool = True
    block_size: int = 2
    eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        object.__setattr__(self, "orientations", tuple(float(t) for t in self.orientations))
        if not self.wavelengths or not self.orientations:
            raise ValueError("Gabor bank needs at least one wavelength and one orientation")
        if any(w <= 0 for w in self.wavelengths):
            raise ValueError(f"wavelengths must be positive: {self.wavelengths}")
        if any(not 0.0 <= t < 180.0 for t in self.orientations):
            raise ValueError(f"orientations must lie in [0, 180): {self.orientations}")
        if self.block_norm and self.local_grid is None:
            raise ValueError("block normalization needs a local energy grid")
        if self.local_grid is not None and self.block_size > self.local_grid:
            raise ValueError("block larger than the local energy grid")

    @property
    def n_filters(self) -> int:
        return len(self.wavelengths) * len(self.orientations)

    def kernels(self) -> list[np.ndarray]:
        out = []
        for lam in self.wavelengths:
            sx = self.sigma_x if self.sigma_x is not None else 0.5 * lam
            sy = self.sigma_y if self.sigma_y is not None else 0.5 * lam
            for theta in self.orientations:
                out.append(gabor_kernel(lam, theta, sx, sy))
        return out

    def dimension(self) -> int:
        if self.local_grid is None:
            return self.n_filters
        g, b = self.local_grid, self.block_size
        if not self.block_norm:
            return self.n_filters * g * g
        return self.n_filters * (g - b + 1) ** 2 * b * b


def gabor_responses(imgs: np.ndarray, bank: GaborBank) -> np.ndarray:
    """Same-size zero-padded convolutions, shape ``(N, F, H, W)``."""
    return np.stack([fftconvolve(imgs, k[None], mode="same", axes=(1, 2))
                     for k in bank.kernels()], axis=1)


def _block_normalize(cells: np.ndarray, b: int, eps: float) -> np.ndarray:
    """Sliding ``b x b`` L2 normalization of a ``(N, gy, gx, K)`` cell grid."""
    n, gy, gx, _ = cells.shape
    blocks = []
    for by in range(gy - b + 1):
        for bx in range(gx - b + 1):
            v = cells[:, by:by + b, bx:bx + b, :].reshape(n, -1)
            norm = np.sqrt(np.sum(v * v, axis=1, keepdims=True) + eps * eps)
            blocks.append(v / norm)
    return np.concatenate(blocks, axis=1)


def gabor_features(img, bank: GaborBank | None = None) -> np.ndarray:
    """Gabor energy features: global, local grid, or block-normalized local grid.

    Local energies are ordered filter-major, then window row-major. With block
    normalization each sliding 2x2 block of windows contributes its windows
    (row-major) times all filters, L2-normalized; blocks are concatenated
    row-major.
    """
    bank = bank or GaborBank()
    imgs, single = _stack(img)
    n, h, w = imgs.shape
    sq = gabor_responses(imgs, bank) ** 2
    if bank.local_grid is None:
        return _unstack(sq.sum(axis=(2, 3)), single)
    g = bank.local_grid
    if h % g or w % g:
        raise ValueError(f"local grid {g}x{g} does not divide a {h}x{w} image")
    energy = sq.reshape(n, bank.n_filters, g, h // g, g, w // g).sum(axis=(3, 5))
    if not bank.block_norm:
        return _unstack(energy.reshape(n, -1), single)
    cells = energy.transpose(0, 2, 3, 1)  # (N, g, g, F)
    return _unstack(_block_normalize(cells, bank.block_size, bank.eps), single)


# ---------------------------------------------------------------------------
# Histograms of oriented gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 7
    bins: int = 9
    block_size: int = 2
    eps: float = 1e-6

    def __post_init__(self):
        if self.cell_size <= 0 or SIDE % self.cell_size:
            raise ValueError(f"cell size {self.cell_size} does not divide {SIDE}")
        if self.bins < 2:
            raise ValueError(f"need at least 2 orientation bins, got {self.bins}")
        if not 1 <= self.block_size <= SIDE // self.cell_size:
            raise ValueError(f"block size {self.block_size} invalid for cell size {self.cell_size}")

    def dimension(self, side: int = SIDE) -> int:
        cells = side // self.cell_size
        nb = cells - self.block_size + 1
        return nb * nb * self.block_size**2 * self.bins


def image_gradients(imgs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences ``[-1, 0, 1]`` with replicated edges; Dy points down."""
    p = np.pad(imgs, ((0, 0), (1, 1), (1, 1)), mode="edge")
    dx = p[:, 1:-1, 2:] - p[:, 1:-1, :-2]
    dy = p[:, 2:, 1:-1] - p[:, :-2, 1:-1]
    return dx, dy


def hog_features(img, cfg: HogConfig | None = None) -> np.ndarray:
    """HOG descriptor with unsigned orientations and linear bin interpolation."""
    cfg = cfg or HogConfig()
    imgs, single = _stack(img)
    n, h, w = imgs.shape
    c = cfg.cell_size
    if h % c or w % c:
        raise ValueError(f"cell size {c} does not divide a {h}x{w} image")
    dx, dy = image_gradients(imgs)
    mag = np.hypot(dx, dy)
    ang = np.mod(np.degrees(np.arctan2(dy, dx)), 180.0)
    ang[ang >= 180.0] -= 180.0

    # Bin centres at (k + 1/2) * width; orientation wraps around at 180.
    width = 180.0 / cfg.bins
    t = ang / width - 0.5
    lo = np.floor(t)
    frac = t - lo
    lo_bin = lo.astype(np.int64) % cfg.bins
    hi_bin = (lo_bin + 1) % cfg.bins
    b = np.arange(cfg.bins)
    votes = ((lo_bin[..., None] == b) * (mag * (1.0 - frac))[..., None]
             + (hi_bin[..., None] == b) * (mag * frac)[..., None])
    hist = votes.reshape(n, h // c, c, w // c, c, cfg.bins).sum(axis=(2, 4))
    return _unstack(_block_normalize(hist, cfg.block_size, cfg.eps), single)


# ---------------------------------------------------------------------------
# Foreground-based descriptors
# ---------------------------------------------------------------------------

def projection_histograms(img, threshold: float = FOREGROUND_THRESHOLD) -> np.ndarray:
    """Foreground pixel counts per row, then per column."""
    imgs, single = _stack(img)
    fg = imgs > threshold
    out = np.concatenate([fg.sum(axis=2), fg.sum(axis=1)], axis=1).astype(np.float64)
    return _unstack(out, single)


def _first_hit(fg: np.ndarray, axis: int) -> np.ndarray:
    # Lines without foreground get the sentinel value (the line length).
    length = fg.shape[axis]
    any_fg = fg.any(axis=axis)
    return np.where(any_fg, np.argmax(fg, axis=axis), length)


def distance_profiles(img, threshold: float = FOREGROUND_THRESHOLD) -> np.ndarray:
    """Border-to-foreground distances: rows from left, rows from right, columns
    from top, columns from bottom. Empty lines give the image side (28)."""
    imgs, single = _stack(img)
    fg = imgs > threshold
    left = _first_hit(fg, 2)
    right = _first_hit(fg[:, :, ::-1], 2)
    top = _first_hit(fg, 1)
    bottom = _first_hit(fg[:, ::-1, :], 1)
    out = np.concatenate([left, right, top, bottom], axis=1).astype(np.float64)
    return _unstack(out, single)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature min-max map into ``[0, 1]``, fitted on training features."""

    lo: np.ndarray
    hi: np.ndarray

    def transform(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        span = self.hi - self.lo
        live = span > 0
        out = (v - self.lo) / np.where(live, span, 1.0)
        return np.where(live, np.clip(out, 0.0, 1.0), 0.0)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureScaler":
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


def fit_scaler(train) -> FeatureScaler:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty training set")
    return FeatureScaler(train.min(axis=0), train.max(axis=0))


def apply_scaler(scaler: FeatureScaler, v) -> np.ndarray:
    return scaler.transform(v)


# ---------------------------------------------------------------------------
# Method registry
# ---------------------------------------------------------------------------

def _gabor_from_params(params: Mapping[str, Any]) -> GaborBank:
    kw = dict(params)
    if "wavelength" in kw:
        kw["wavelengths"] = (kw.pop("wavelength"),)
    for key in ("wavelengths", "orientations"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return GaborBank(**kw)


_METHODS: dict[str, Callable[[np.ndarray, Mapping[str, Any]], np.ndarray]] = {
    "raw": lambda imgs, p: extract_raw(imgs),
    "zoning": lambda imgs, p: zoning(imgs, int(p.get("zone", 2))),
    "gabor": lambda imgs, p: gabor_features(imgs, _gabor_from_params(p)),
    "hog": lambda imgs, p: hog_features(imgs, HogConfig(**p)),
    "projection": lambda imgs, p: projection_histograms(imgs, p.get("threshold", FOREGROUND_THRESHOLD)),
    "distance": lambda imgs, p: distance_profiles(imgs, p.get("threshold", FOREGROUND_THRESHOLD)),
}

_ALIASES = {
    "zoning2": ("zoning", {"zone": 2}),
    "zoning4": ("zoning", {"zone": 4}),
}

METHODS = tuple(_METHODS)


@dataclass(frozen=True)
class FeatureSpec:
    """A feature method name plus its parameters, e.g. ``hog`` with ``cell_size=7``."""

    method: str = "raw"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        method, params = self.method, dict(self.params)
        if method in _ALIASES:
            base, extra = _ALIASES[method]
            method, params = base, {**extra, **params}
        if method not in _METHODS:
            raise ValueError(f"unknown feature method {self.method!r}; choose from "
                             f"{sorted(set(_METHODS) | set(_ALIASES))}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "params", params)

    def to_dict(self) -> dict:
        return {"method": self.method, "params": _jsonable(self.params)}

    def key(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dimension(self) -> int:
        return int(self.extract(np.zeros((1, SIDE, SIDE))).shape[1])

    def extract(self, images, batch: int = 2048) -> np.ndarray:
        imgs, single = _stack(images)
        fn = _METHODS[self.method]
        parts = [fn(imgs[i:i + batch], self.params) for i in range(0, imgs.shape[0], batch)]
        out = np.concatenate(parts, axis=0) if parts else np.zeros((0, 0))
        return _unstack(out, single)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def extract(method: str, images, **params) -> np.ndarray:
    return FeatureSpec(method, params).extract(images)


def dimensions_table() -> dict[str, int]:
    """Feature counts for the configurations studied in the experiments."""
    table = {
        "raw": FeatureSpec("raw"),
        "zoning2": FeatureSpec("zoning2"),
        "zoning4": FeatureSpec("zoning4"),
        "gabor_global_40": FeatureSpec("gabor", {"wavelengths": (3, 4, 5, 6, 7),
                                                 "local_grid": None, "block_norm": False}),
        "gabor_local_392": FeatureSpec("gabor", {"local_grid": 7, "block_norm": False}),
        "gabor_block_1152": FeatureSpec("gabor", {"local_grid": 7, "block_norm": True}),
        "hog_324": FeatureSpec("hog", {"cell_size": 7}),
        "hog_1296": FeatureSpec("hog", {"cell_size": 4}),
        "projection": FeatureSpec("projection"),
        "distance": FeatureSpec("distance"),
    }
    return {name: spec.dimension() for name, spec in table.items()}


def feature_names(spec: FeatureSpec) -> Sequence[str]:
    return [f"{spec.method}_{i}" for i in range(spec.dimension())]
