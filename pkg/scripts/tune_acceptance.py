"""Choose input gain / spectral radius for each acceptance experiment.

Selection uses the mean *validation* error only; test errors are never
consulted. Results go to ``results/tuning/<name>.jsonl`` and the chosen
configuration to ``configs/acceptance/<name>.yaml``.

    python scripts/tune_acceptance.py            # everything
    python scripts/tune_acceptance.py ff_hog     # one experiment
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import yaml

from photonic_rc.harness.config import ExperimentConfig
from photonic_rc.harness.pipeline import dataset_for, tune

ROOT = Path(__file__).resolve().parents[1]
ACCEPT = ROOT / "configs" / "acceptance"
TUNING = ROOT / "results" / "tuning"

FEATURES = {
    "raw": {"method": "raw"},
    "zoning2": {"method": "zoning", "params": {"zone": 2}},
    "zoning4": {"method": "zoning", "params": {"zone": 4}},
    "gabor": {"method": "gabor", "params": {}},
    "hog": {"method": "hog", "params": {"cell_size": 7}},
}

# one geometric grid for every front end; low-dimensional features need larger gains
FF_GAINS = [0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.3, 0.5]
RHOS = [0.3, 0.6, 0.9, 1.2, 1.6, 2.0]

# (name, base config, grid, seeds used for tuning)
def experiments():
    out = []
    for feat in FEATURES:
        base = {"mode": "feedforward", "features": FEATURES[feat], "n": 1024}
        out.append((f"ff_{feat}", base, {"input_gain": FF_GAINS}, (0, 1, 2)))
    for feat in FEATURES:
        base = {"mode": "recurrent_full", "features": FEATURES[feat], "n": 1024, "k_e": 2}
        # gain taken from the matching feedforward tuning, see resolve()
        out.append((f"rec_{feat}", base, {"rho": RHOS, "input_gain": f"@ff_{feat}"}, (0,)))
    col = {"n": 1024}
    out.append(("col_agg4", {**col, "mode": "columnwise_aggregate", "aggregate": [14, 16, 20, 24]},
                {"input_gain": [0.05, 0.1, 0.15], "rho": [0.4, 0.5, 0.6, 0.7]}, (0,)))
    out.append(("col_single17", {**col, "mode": "columnwise_aggregate", "aggregate": [17]},
                {"input_gain": [0.05, 0.1, 0.15], "rho": [0.4, 0.5, 0.6, 0.7]}, (0,)))
    out.append(("col_percol", {**col, "mode": "columnwise_per_column"},
                {"input_gain": [0.1, 0.3, 1.0], "rho": [0.5, 0.7, 0.9]}, (0,)))
    return out


def chosen(name: str) -> dict:
    return yaml.safe_load((ACCEPT / f"{name}.yaml").read_text())


def resolve(grid: dict) -> dict:
    out = {}
    for k, v in grid.items():
        if isinstance(v, str) and v.startswith("@"):
            v = [chosen(v[1:])[k]]
        out[k] = v
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*")
    ap.add_argument("--force", action="store_true", help="re-tune experiments that already have a config")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    ACCEPT.mkdir(parents=True, exist_ok=True)
    TUNING.mkdir(parents=True, exist_ok=True)
    ds = None
    for name, base, grid, seeds in experiments():
        if args.names and name not in args.names:
            continue
        if (ACCEPT / f"{name}.yaml").exists() and not args.force:
            continue
        ds = ds or dataset_for(ExperimentConfig())
        t0 = time.time()
        cfg = ExperimentConfig.from_dict({**base, "label": name})
        best, results = tune(cfg, resolve(grid), ds, seeds=seeds)
        with open(TUNING / f"{name}.jsonl", "w") as fh:
            for overrides, err in results:
                fh.write(json.dumps({"overrides": overrides, "validation_error": err}) + "\n")
        final = cfg.with_overrides({k: v for k, v in best.items() if k != "seeds"})
        keep = {**base, **{k: getattr(final, k) for k in best if k != "seeds"}, "label": name}
        header = (f"# chosen by mean validation error over seeds {list(seeds)}; "
                  f"grid {json.dumps(resolve(grid))}\n")
        (ACCEPT / f"{name}.yaml").write_text(header + yaml.safe_dump(keep, sort_keys=True))
        logging.info("%s: %s (%.0fs)", name, best, time.time() - t0)


if __name__ == "__main__":
    main()
