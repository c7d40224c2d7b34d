"""End-to-end experiments: features -> reservoir -> ridge readout -> test error.

Per seed, :func:`run_experiment` streams training states into ridge
accumulators (the full training state matrix is never materialized),
selects lambda on the validation split, refits on train + validation and
only then reads the test labels.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from ..cache import MatrixCache, config_hash
from ..dataset import Dataset, DatasetMismatchError, IdxError, load_mnist
from ..features import fit_scaler
from ..numerics import INTENSITY_QUANT
from ..readout import (RidgeAccumulator, add_bias, best_lambda, classification_error,
                       confusion_matrix, evaluate_lambda_grid, majority_vote_rows,
                       solve_ridge, winner_takes_all)
from ..reservoir import (DENSE_RES_MAX, N_COLUMNS, ReservoirConfig, columnwise_block,
                         feedforward_block, iter_blocks, recurrent_block)
from .data import DataError
from .config import ConfigError, ExperimentConfig, default_data_dir
from .report import ExperimentReport

log = logging.getLogger(__name__)

GB = 1024**3
INPLACE_SOLVE_DIM = 8192


class ResourceGuardError(MemoryError):
    """A configuration needs more memory than the configured budget."""


class CombinatorialBudgetError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# Memory guard
# ---------------------------------------------------------------------------

def memory_budget_bytes(cfg: ExperimentConfig) -> int:
    if cfg.memory_budget_gb is not None:
        return int(cfg.memory_budget_gb * GB)
    import psutil
    return int(0.85 * psutil.virtual_memory().total)


def estimate_memory(cfg: ExperimentConfig, n_train: int = 50_000, n_val: int = 10_000,
                    n_test: int = 10_000) -> dict[str, int]:
    """Peak-memory estimate (bytes) for one seed of ``cfg``."""
    d = cfg.readout_dim + (1 if cfg.bias else 0)
    inplace = d > INPLACE_SOLVE_DIM
    eval_rows = cfg.vote_last * cfg.n if cfg.mode == "columnwise_per_column" else cfg.readout_dim
    block_cols = train_block_items(cfg) * (N_COLUMNS if cfg.mode == "columnwise_per_column" else 1)
    p = cfg.input_dim
    parts = {
        "normal_matrix": 8 * d * d,
        "factorization": 0 if inplace else 8 * d * d,
        "eval_states": 2 * eval_rows * max(n_val, n_test),
        "state_block": 3 * 8 * max(d, cfg.vote_last * cfg.n) * block_cols,
        "weights": 8 * cfg.n * p + (8 * cfg.n * cfg.n if cfg.effective_rho > 0 and cfg.n <= DENSE_RES_MAX else 0),
        "inputs": 8 * (n_train + n_val + n_test) * (784 + (0 if cfg.columnwise else p)),
    }
    parts["total"] = sum(parts.values())
    return parts


def check_memory(cfg: ExperimentConfig, **sizes) -> dict[str, int]:
    est = estimate_memory(cfg, **sizes)
    budget = memory_budget_bytes(cfg)
    if est["total"] > budget:
        detail = ", ".join(f"{k}={v / GB:.2f} GB" for k, v in est.items() if k != "total")
        raise ResourceGuardError(
            f"configuration needs about {est['total'] / GB:.2f} GB "
            f"({detail}) but the memory budget is {budget / GB:.2f} GB")
    return est


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

@dataclass
class PreparedInputs:
    """Reservoir inputs per split: scaled features, or raw images in column-wise modes."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    train_labels: np.ndarray
    validation_labels: np.ndarray
    scaler: Any = None


def dataset_for(cfg: ExperimentConfig) -> Dataset:
    data_dir = cfg.data_dir or default_data_dir()
    try:
        return load_mnist(data_dir, cfg.validation_size, cfg.split_seed)
    except FileNotFoundError as exc:
        raise DataError(f"{exc}; run `photonic-rc data fetch --data-dir {data_dir}`") from exc
    except (IdxError, DatasetMismatchError) as exc:
        raise DataError(str(exc)) from exc


def prepare_inputs(cfg: ExperimentConfig, ds: Dataset, cache: MatrixCache | None = None) -> PreparedInputs:
    cache = cache or MatrixCache(None)
    train_x = ds.train.images
    train_y = ds.train.labels
    if cfg.train_size is not None:
        train_x, train_y = train_x[:cfg.train_size], train_y[:cfg.train_size]
    splits = {"train": train_x, "validation": ds.validation.images, "test": ds.test.images}

    if cfg.columnwise:
        return PreparedInputs(train_x, splits["validation"], splits["test"],
                              train_y, ds.validation.labels)

    key = config_hash({"features": cfg.features.to_dict(), "split_seed": ds.split_seed,
                       "validation_size": cfg.validation_size, "train_size": cfg.train_size})
    feats = {}
    for name, images in splits.items():
        cached = cache.load("features", key, name)
        if cached is None:
            cached = cfg.features.extract(images)
            cache.store("features", key, name, cached, {"features": cfg.features.to_dict()})
        feats[name] = cached
    scaler = fit_scaler(feats["train"])
    return PreparedInputs(scaler.transform(feats["train"]), scaler.transform(feats["validation"]),
                          scaler.transform(feats["test"]), train_y, ds.validation.labels, scaler)


# ---------------------------------------------------------------------------
# State harvesting for each mode
# ---------------------------------------------------------------------------

def eval_steps(cfg: ExperimentConfig) -> tuple[int, ...]:
    return tuple(range(N_COLUMNS - cfg.vote_last + 1, N_COLUMNS + 1))


def train_block(cfg: ExperimentConfig, res: ReservoirConfig, inputs: np.ndarray,
                labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Training columns and matching labels for one block of items."""
    if cfg.mode == "feedforward":
        return feedforward_block(res, inputs), labels
    if cfg.mode == "recurrent_full":
        return recurrent_block(res, inputs, cfg.k_e), labels
    if cfg.mode == "columnwise_aggregate":
        X = columnwise_block(res, inputs, cfg.aggregate)
        return X.reshape(-1, inputs.shape[0]), labels
    traj = columnwise_block(res, inputs, range(1, N_COLUMNS + 1))
    return traj.transpose(1, 2, 0).reshape(res.n, -1), np.repeat(labels, N_COLUMNS)


def eval_block(cfg: ExperimentConfig, res: ReservoirConfig, inputs: np.ndarray) -> np.ndarray:
    """States used for classification: ``(D, B)``, or ``(vote_last, n, B)`` per-column."""
    if cfg.mode == "columnwise_per_column":
        return columnwise_block(res, inputs, eval_steps(cfg))
    return train_block(cfg, res, inputs, np.zeros(inputs.shape[0], dtype=np.int64))[0]


def to_levels(x: np.ndarray) -> np.ndarray:
    """Exact uint16 camera codes of quantized intensities (peak 1)."""
    return np.rint(x * (INTENSITY_QUANT.levels - 1)).astype(np.uint16)


def from_levels(codes: np.ndarray) -> np.ndarray:
    return codes.astype(np.float64) / (INTENSITY_QUANT.levels - 1)


def harvest_eval(cfg: ExperimentConfig, res: ReservoirConfig, inputs: np.ndarray) -> np.ndarray:
    """Evaluation states of a whole split as uint16 level codes (items on the last axis)."""
    n_items = inputs.shape[0]
    if cfg.mode == "columnwise_per_column":
        out = np.empty((cfg.vote_last, res.n, n_items), dtype=np.uint16)
    else:
        out = np.empty((cfg.readout_dim, n_items), dtype=np.uint16)
    for sl in iter_blocks(n_items, cfg.block_size):
        out[..., sl] = to_levels(eval_block(cfg, res, inputs[sl]))
    return out


def train_block_items(cfg: ExperimentConfig) -> int:
    # per-column training turns every image into 28 columns
    if cfg.mode == "columnwise_per_column":
        return max(1, cfg.block_size // 8)
    return cfg.block_size


def accumulate(cfg: ExperimentConfig, res: ReservoirConfig, inputs: np.ndarray, labels: np.ndarray,
               acc: RidgeAccumulator) -> None:
    for sl in iter_blocks(inputs.shape[0], train_block_items(cfg)):
        X, y = train_block(cfg, res, inputs[sl], labels[sl])
        acc.add(X, y)


def accumulate_codes(cfg: ExperimentConfig, codes: np.ndarray, labels: np.ndarray,
                     acc: RidgeAccumulator) -> None:
    """Add stored (non per-column) evaluation states to the normal equations."""
    for sl in iter_blocks(codes.shape[-1], cfg.block_size):
        acc.add(from_levels(codes[:, sl]), labels[sl])


def decide(cfg: ExperimentConfig, W: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Predicted digits from trained weights ``W`` (bias column last if used)."""
    if cfg.bias:
        W, b = W[:, :-1], W[:, -1:]
    else:
        b = 0.0
    out = np.empty(codes.shape[-1], dtype=np.int64)
    for sl in iter_blocks(codes.shape[-1], cfg.block_size):
        if cfg.mode == "columnwise_per_column":
            votes = np.stack([winner_takes_all(W @ from_levels(codes[t, :, sl]) + b, axis=0)
                              for t in range(codes.shape[0])], axis=1)
            out[sl] = majority_vote_rows(votes)
        else:
            out[sl] = winner_takes_all(W @ from_levels(codes[:, sl]) + b, axis=0)
    return out


def build_reservoir(cfg: ExperimentConfig, seed: int) -> ReservoirConfig:
    return ReservoirConfig.build(cfg.n, cfg.input_dim, cfg.input_gain, cfg.effective_rho, cfg.density,
                                 seed=seed, mask_gain=cfg.mask_gain)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass
class SeedOutcome:
    test_error: float
    validation_error: float
    lam: float
    confusion: np.ndarray
    lambda_errors: dict[float, float]


def _cached_eval(cache: MatrixCache, cfg: ExperimentConfig, key: str, split: str, res, inputs):
    if cfg.cache_states:
        states = cache.load("states", key, split)
        if states is not None:
            return states
    states = harvest_eval(cfg, res, inputs)
    if cfg.cache_states:
        cache.store("states", key, split, states, {"mode": cfg.mode})
    return states


def _train_stats(cache: MatrixCache, cfg: ExperimentConfig, key: str, res, inputs, labels):
    acc = RidgeAccumulator(cfg.readout_dim, bias=cfg.bias)
    if cfg.cache_states:
        gram = cache.load("stats", key, "train_gram")
        cross = cache.load("stats", key, "train_cross")
        if gram is not None and cross is not None:
            acc.gram, acc.cross = gram, cross
            acc.count = int(inputs.shape[0])
            return acc
    accumulate(cfg, res, inputs, labels, acc)
    if cfg.cache_states:
        cache.store("stats", key, "train_gram", acc.gram)
        cache.store("stats", key, "train_cross", acc.cross)
    return acc


def run_seed(cfg: ExperimentConfig, seed: int, ds: Dataset, inputs: PreparedInputs,
             cache: MatrixCache | None = None) -> SeedOutcome:
    cache = cache or MatrixCache(None)
    key = cfg.reservoir_key(seed)
    res = build_reservoir(cfg, seed)
    ds.mark(f"fit:{seed}")

    acc = _train_stats(cache, cfg, key, res, inputs.train, inputs.train_labels)
    inplace = acc.dim > INPLACE_SOLVE_DIM
    val_states = _cached_eval(cache, cfg, key, "validation", res, inputs.validation)
    val_labels = inputs.validation_labels

    def val_error(W):
        return classification_error(decide(cfg, W, val_states), val_labels)

    lambda_errors = evaluate_lambda_grid(lambda lam: acc.solve(lam, inplace=inplace),
                                         val_error, cfg.lambda_grid)
    lam = best_lambda(lambda_errors)
    ds.mark(f"select:{seed}")

    if cfg.refit and len(val_labels):
        if cfg.mode == "columnwise_per_column":
            del val_states
            accumulate(cfg, res, inputs.validation, val_labels, acc)
        else:
            accumulate_codes(cfg, val_states, val_labels, acc)
            del val_states
    else:
        del val_states
    W = acc.solve(lam, inplace=inplace)
    acc = None  # drop the normal matrix before harvesting test states

    test_states = _cached_eval(cache, cfg, key, "test", res, inputs.test)
    predicted = decide(cfg, W, test_states)
    del test_states
    ds.mark(f"final_evaluation:{seed}")
    truth = ds.test.labels
    return SeedOutcome(classification_error(predicted, truth), lambda_errors[lam], lam,
                       confusion_matrix(predicted, truth), lambda_errors)


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> ExperimentReport:
    """Run every seed of ``cfg`` and collect an :class:`ExperimentReport`."""
    start = time.perf_counter()
    ds = dataset if dataset is not None else dataset_for(cfg)
    n_train = len(ds.train) if cfg.train_size is None else min(cfg.train_size, len(ds.train))
    check_memory(cfg, n_train=n_train, n_val=len(ds.validation), n_test=len(ds.test))
    cache = MatrixCache(cfg.cache_dir)
    inputs = prepare_inputs(cfg, ds, cache)

    outcomes = []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        out = run_seed(cfg, seed, ds, inputs, cache)
        log.info("%s seed=%d: test error %.4f (val %.4f, lambda=%g) in %.1fs",
                 cfg.label or cfg.mode, seed, out.test_error, out.validation_error, out.lam,
                 time.perf_counter() - t0)
        outcomes.append(out)

    return ExperimentReport(
        config=cfg.to_dict(),
        seeds=list(cfg.seeds),
        test_errors=[o.test_error for o in outcomes],
        validation_errors=[o.validation_error for o in outcomes],
        selected_lambdas=[o.lam for o in outcomes],
        confusion=[o.confusion.tolist() for o in outcomes],
        lambda_errors=[[[lam, err] for lam, err in sorted(o.lambda_errors.items())]
                       for o in outcomes],
        wall_time=time.perf_counter() - start,
    )


def _run_one(args):
    cfg, = args
    return run_experiment(cfg)


def sweep(base: ExperimentConfig, axis: str, values: Sequence, dataset: Dataset | None = None,
          workers: int = 1) -> list[ExperimentReport]:
    """One report per value of ``axis`` (a config field or ``features.<param>``)."""
    values = list(values)
    configs = [base.with_overrides({axis: v}) for v in values]
    for cfg, v in zip(configs, values):
        if not cfg.label:
            cfg.label = f"{axis}={v}"
    if not configs:
        return []
    if workers > 1 and dataset is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, [(c,) for c in configs]))
    ds = dataset if dataset is not None else dataset_for(base)
    return [run_experiment(cfg, ds) for cfg in configs]


def tune(base: ExperimentConfig, grid: dict[str, Sequence], dataset: Dataset | None = None,
         seeds: Sequence[int] | None = None) -> tuple[dict[str, Any], list[tuple[dict, float]]]:
    """Grid search over named hyperparameters by mean *validation* error.

    Returns the best override dict and every ``(overrides, mean validation
    error)`` pair, in grid order. Test errors are computed but never used
    for the choice.
    """
    ds = dataset if dataset is not None else dataset_for(base)
    names = list(grid)
    results = []
    for combo in itertools.product(*(grid[k] for k in names)):
        overrides = dict(zip(names, combo))
        if seeds is not None:
            overrides["seeds"] = list(seeds)
        report = run_experiment(base.with_overrides(overrides), ds)
        results.append((overrides, float(np.mean(report.validation_errors))))
    best = min(results, key=lambda r: r[1])[0]
    return best, results


# ---------------------------------------------------------------------------
# Exhaustive aggregate search
# ---------------------------------------------------------------------------

def search_aggregates(cfg: ExperimentConfig, arity: int, candidates: Iterable[int] = range(1, 29),
                      max_combinations: int = 5000, dataset: Dataset | None = None,
                      seed: int | None = None) -> list[tuple[tuple[int, ...], float]]:
    """Rank every ``arity``-subset of ``candidates`` by validation error.

    States at the candidate timesteps are simulated once and stored as
    10-bit level codes; per-timestep Gram blocks are shared between
    combinations. Returns ``(indices, validation error)`` sorted by error,
    then by indices.
    """
    if arity not in (1, 2, 3, 4):
        raise ConfigError(f"arity must be 1-4, got {arity}")
    cands = sorted({int(c) for c in candidates})
    if not cands or cands[0] < 1 or cands[-1] > N_COLUMNS:
        raise ConfigError(f"candidate timesteps must lie in [1, {N_COLUMNS}]")
    combos = list(itertools.combinations(cands, arity))
    if len(combos) > max_combinations:
        raise CombinatorialBudgetError(
            f"{len(combos)} combinations exceed the budget of {max_combinations}")
    if not combos:
        return []

    cfg = cfg.with_overrides({"mode": "columnwise_aggregate", "aggregate": list(combos[0])})
    ds = dataset if dataset is not None else dataset_for(cfg)
    inputs = prepare_inputs(cfg, ds)
    n_tr, n_val = inputs.train.shape[0], inputs.validation.shape[0]
    need = 2 * len(cands) * cfg.n * (n_tr + n_val) + 8 * len(cands) * cfg.n * cfg.n
    if need > memory_budget_bytes(cfg):
        raise ResourceGuardError(
            f"aggregate search needs about {need / GB:.2f} GB of state storage; "
            f"reduce train_size or the candidate range")

    seed = cfg.seeds[0] if seed is None else seed
    res = build_reservoir(cfg, seed)
    pos = {t: i for i, t in enumerate(cands)}

    def trajectory(images):
        out = np.empty((len(cands), res.n, images.shape[0]), dtype=np.uint16)
        for sl in iter_blocks(images.shape[0], cfg.block_size):
            out[:, :, sl] = to_levels(columnwise_block(res, images[sl], cands))
        return out

    tr_codes = trajectory(inputs.train)
    val_codes = trajectory(inputs.validation)
    Y = np.zeros((10, n_tr))
    Y[inputs.train_labels, np.arange(n_tr)] = 1.0

    diag_blocks: dict[int, np.ndarray] = {}
    sums: dict[int, np.ndarray] = {}
    cross: dict[int, np.ndarray] = {}
    for t in cands:
        X = from_levels(tr_codes[pos[t]])
        diag_blocks[t] = X @ X.T
        sums[t] = X.sum(axis=1)
        cross[t] = Y @ X.T
    pair_cache: dict[tuple[int, int], np.ndarray] = {}

    def pair(a, b):
        if (a, b) not in pair_cache:
            pair_cache[(a, b)] = from_levels(tr_codes[pos[a]]) @ from_levels(tr_codes[pos[b]]).T
        return pair_cache[(a, b)]

    n = res.n
    results = []
    for combo in combos:
        k = len(combo)
        d = k * n + (1 if cfg.bias else 0)
        gram = np.empty((d, d))
        C = np.empty((10, d))
        for i, a in enumerate(combo):
            gram[i * n:(i + 1) * n, i * n:(i + 1) * n] = diag_blocks[a]
            C[:, i * n:(i + 1) * n] = cross[a]
            for j in range(i + 1, k):
                blk = pair(a, combo[j])
                gram[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
                gram[j * n:(j + 1) * n, i * n:(i + 1) * n] = blk.T
            if cfg.bias:
                gram[i * n:(i + 1) * n, -1] = sums[a]
                gram[-1, i * n:(i + 1) * n] = sums[a]
        if cfg.bias:
            gram[-1, -1] = n_tr
            C[:, -1] = Y.sum(axis=1)
        Xv = np.concatenate([from_levels(val_codes[pos[a]]) for a in combo], axis=0)
        Xv = add_bias(Xv) if cfg.bias else Xv

        def err(W):
            return classification_error(winner_takes_all(W @ Xv, axis=0), inputs.validation_labels)

        errors = evaluate_lambda_grid(lambda lam: solve_ridge(gram, C, lam), err, cfg.lambda_grid)
        best = min(errors.values())
        results.append((tuple(combo), float(best) if not math.isinf(best) else math.inf))
        if len(pair_cache) > 64:
            pair_cache.clear()
    results.sort(key=lambda r: (r[1], r[0]))
    return results
