"""Command-line interface.

    adapfair prep --recipe crime.json --input crime.csv --out data/crime.npz
    adapfair train-baseline --config run.json
    adapfair train --config run.json [--lambda 0.9] [--fairness eopp] [--mode blind]
    adapfair evaluate --config run.json
    adapfair sweep --config run.json --lambda 1.0 0.95 0.9 --seeds 0 1 2 3 4
    adapfair check

Exit codes: 0 ok, 1 user error (bad config, missing files), 2 numerical failure.
Errors are also written to stderr as one JSON record.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .classifier import load_classifier, predict_scores, save_classifier, train_baseline
from .data import load_csv, load_dataset, load_recipe, preprocess, save_dataset, split, synth_biased_gaussians
from .errors import AdapFairError, NumericalFailure, TrainingFailure
from .metrics import DEFAULT_THRESHOLD, evaluate
from .trainer import FairnessSpec, TrainConfig, adapfair_train, load_state, save_state

log = logging.getLogger("adapfair")

DATA_ROOT_ENV = "ADAPFAIR_DATA_ROOT"
DEFAULT_SEEDS = [0, 1, 2, 3, 4]
CLASSIFIER_KEYS = {"arch", "widths", "epochs", "lr"}
SYNTH_KEYS = {"n_per_group", "dim", "shift", "flip_rate", "label_shift", "proxy"}


class UserError(AdapFairError):
    pass


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    data: str | None = None
    synthetic: dict | None = None
    classifier: dict = field(default_factory=lambda: {"arch": "mlp", "widths": [20, 20], "epochs": 200, "lr": 0.1})
    train: dict = field(default_factory=dict)
    fairness: str = "dp"
    mode: str = "aware"
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    lambdas: list = field(default_factory=lambda: [1.0, 0.99, 0.95, 0.9, 0.8, 0.5])
    threshold: float = DEFAULT_THRESHOLD
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UserError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if (self.data is None) == (self.synthetic is None):
            raise UserError("config needs exactly one of 'data' or 'synthetic'")
        if self.synthetic is not None and set(self.synthetic) - SYNTH_KEYS:
            raise UserError(f"unknown synthetic keys: {sorted(set(self.synthetic) - SYNTH_KEYS)}")
        if set(self.classifier) - CLASSIFIER_KEYS:
            raise UserError(f"unknown classifier keys: {sorted(set(self.classifier) - CLASSIFIER_KEYS)}")
        if not self.seeds:
            raise UserError("seeds must be a nonempty list")
        try:
            FairnessSpec(self.fairness, self.mode)
            self.train_config(self.seeds[0])
        except (ValueError, TypeError) as exc:
            raise UserError(str(exc)) from exc

    def train_config(self, seed: int, lam: float | None = None) -> TrainConfig:
        opts = dict(self.train, seed=seed)
        if lam is not None:
            opts["lam"] = lam
        return TrainConfig(**opts)

    def spec(self) -> FairnessSpec:
        return FairnessSpec(self.fairness, self.mode)

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _resolve(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root:
        p = Path(root) / p
    return p


def load_config(path, overrides: argparse.Namespace | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UserError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"config is not valid JSON: {exc}") from exc
    if overrides is not None:
        if getattr(overrides, "lambdas", None):
            raw["lambdas"] = overrides.lambdas
            raw.setdefault("train", {})["lam"] = overrides.lambdas[0]
        for key in ("seeds", "fairness", "mode"):
            if getattr(overrides, key, None) is not None:
                raw[key] = getattr(overrides, key)
        if getattr(overrides, "out", None):
            raw["output_dir"] = overrides.out
    return RunConfig.from_dict(raw)


def load_split(cfg: RunConfig, seed: int):
    if cfg.data is not None:
        path = _resolve(cfg.data)
        if not path.exists():
            raise UserError(f"dataset cache not found: {path}")
        return load_dataset(path)
    synth = {"n_per_group": 500, "dim": 2, "shift": 2.0, "flip_rate": 0.05, **cfg.synthetic}
    n, dim = synth.pop("n_per_group"), synth.pop("dim")
    shift, flip = synth.pop("shift"), synth.pop("flip_rate")
    data = synth_biased_gaussians(n, dim, shift, flip, seed, **synth)
    return split(data, seed)


def _classifier(cfg: RunConfig, data, seed: int):
    opts = {"arch": "mlp", "widths": [20, 20], "epochs": 200, "lr": 0.1, **cfg.classifier}
    return train_baseline(data.train, opts["arch"], opts["epochs"], opts["lr"], seed, tuple(opts["widths"]))


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _row(cfg: RunConfig, seed: int, report, **extra) -> dict:
    return {"config_hash": cfg.hash(), "seed": seed, **extra, **report.to_record()}


def _write_rows(path: Path, rows: list, config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def score_blind(state, handle, features) -> np.ndarray:
    """Deployment path for blind mode: sees features only."""
    return predict_scores(handle, state.T0.forward(np.asarray(features, dtype=float)))


def _score(state, handle, part):
    if state.spec.mode.value == "blind":
        return score_blind(state, handle, part.features.copy())
    return state.scores(handle, part.features, part.sensitive)


def cmd_prep(args) -> int:
    recipe = load_recipe(args.recipe)
    raw = load_csv(args.input, recipe)
    data = preprocess(raw, recipe, provenance=str(args.input))
    parts = split(data, args.seed)
    save_dataset(parts, args.out)
    print(json.dumps({"rows_loaded": raw.n_rows, "rows_kept": len(data), "features": data.dim,
                      "train": len(parts.train), "validation": len(parts.validation), "test": len(parts.test),
                      "out": str(args.out)}))
    return 0


def cmd_train_baseline(cfg: RunConfig) -> int:
    out = _out(cfg)
    rows = []
    for seed in cfg.seeds:
        data = load_split(cfg, seed)
        handle = _classifier(cfg, data, seed)
        save_classifier(handle, out / f"classifier_seed{seed}.bin")
        report = evaluate(predict_scores(handle, data.test.features), data.test.sensitive, data.test.labels,
                          cfg.threshold)
        rows.append(_row(cfg, seed, report, model="baseline"))
        print(json.dumps(rows[-1]))
    _write_rows(out / "baseline.csv", rows, cfg.hash())
    return 0


def _load_or_train_classifier(cfg, data, seed, out):
    path = out / f"classifier_seed{seed}.bin"
    if path.exists():
        return load_classifier(path)
    handle = _classifier(cfg, data, seed)
    save_classifier(handle, path)
    return handle


def _train_one(cfg: RunConfig, seed: int, lam: float | None, outdir: Path | None):
    data = load_split(cfg, seed)
    out = _out(cfg)
    handle = _load_or_train_classifier(cfg, data, seed, out)
    checksum = handle.checksum() if hasattr(handle, "checksum") else None
    config = cfg.train_config(seed, lam)
    state = adapfair_train(data.train, handle, cfg.spec(), config, validation=data.validation)
    if checksum is not None and handle.checksum() != checksum:
        raise TrainingFailure("classifier parameters changed during training")
    if outdir is not None:
        save_state(state, outdir, config)
    base = evaluate(predict_scores(handle, data.test.features), data.test.sensitive, data.test.labels, cfg.threshold)
    fair = evaluate(_score(state, handle, data.test), data.test.sensitive, data.test.labels, cfg.threshold)
    return state, base, fair


def cmd_train_adapfair(cfg: RunConfig) -> int:
    out = _out(cfg)
    for seed in cfg.seeds:
        outdir = out / f"adapfair_seed{seed}"
        state, base, fair = _train_one(cfg, seed, None, outdir)
        print(json.dumps({**_row(cfg, seed, fair, model="adapfair"), "epochs": state.epoch,
                          "baseline_delta_dp": base.delta_dp, "baseline_accuracy": base.accuracy}))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _out(cfg)
    rows = []
    for seed in cfg.seeds:
        data = load_split(cfg, seed)
        cpath, sdir = out / f"classifier_seed{seed}.bin", out / f"adapfair_seed{seed}"
        if not cpath.exists() or not sdir.exists():
            raise UserError(f"missing trained artifacts for seed {seed} in {out}")
        handle = load_classifier(cpath)
        state = load_state(sdir)
        for model, scores in (("baseline", predict_scores(handle, data.test.features)),
                              ("adapfair", _score(state, handle, data.test))):
            report = evaluate(scores, data.test.sensitive, data.test.labels, cfg.threshold)
            rows.append(_row(cfg, seed, report, model=model, mode=state.spec.mode.value))
    _write_rows(out / "evaluation.csv", rows, cfg.hash())
    with open(out / "evaluation.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
            print(json.dumps(row))
    return 0


def _sweep_point(args):
    cfg, seed, lam = args
    _, _, fair = _train_one(cfg, seed, lam, None)
    return _row(cfg, seed, fair, **{"lambda": lam})


def cmd_sweep(cfg: RunConfig) -> int:
    out = _out(cfg)
    for seed in cfg.seeds:  # classifiers first so workers never race on them
        _load_or_train_classifier(cfg, load_split(cfg, seed), seed, out)
    jobs = [(cfg, seed, lam) for lam in cfg.lambdas for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            runs = list(pool.map(_sweep_point, jobs))
    else:
        runs = [_sweep_point(job) for job in jobs]
    _write_rows(out / "sweep_runs.csv", runs, cfg.hash())
    table = []
    for lam in cfg.lambdas:
        group = [r for r in runs if r["lambda"] == lam]
        row = {"config_hash": cfg.hash(), "seeds": " ".join(str(r["seed"]) for r in group), "lambda": lam}
        for key in ("accuracy", "delta_dp", "delta_eopp", "strong_dp_gap"):
            vals = np.array([r[key] for r in group])
            row[f"{key}_mean"] = float(vals.mean())
            row[f"{key}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        table.append(row)
        print(json.dumps(row))
    _write_rows(out / "sweep.csv", table, cfg.hash())
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adapfair", description="Fair preprocessing for frozen classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="load a CSV with a recipe, split and cache it")
    p.add_argument("--recipe", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    for name, help_ in (("train-baseline", "train the unconstrained classifier"),
                        ("train", "learn fair preprocessors for a frozen classifier"),
                        ("evaluate", "score test data with trained artifacts"),
                        ("sweep", "accuracy/fairness trade-off over lambda and seeds")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--lambda", dest="lambdas", type=float, nargs="+")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--fairness", choices=["dp", "eopp", "eodds"])
        p.add_argument("--mode", choices=["aware", "blind"])
        p.add_argument("--out")

    p = sub.add_parser("check", help="run the numerical self-checks")
    p.add_argument("--config", help="accepted for symmetry; checks use built-in fixtures")
    p.add_argument("--seed", type=int, default=0)
    return parser


COMMANDS = {"train-baseline": cmd_train_baseline, "train": cmd_train_adapfair,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "prep":
            return cmd_prep(args)
        if args.command == "check":
            return cmd_check(args)
        return COMMANDS[args.command](load_config(args.config, args))
    except (NumericalFailure, TrainingFailure) as exc:
        _error_record(exc, 2)
        return 2
    except (AdapFairError, OSError, ValueError, KeyError) as exc:
        _error_record(exc, 1)
        return 1


def _error_record(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
