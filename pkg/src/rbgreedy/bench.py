"""Experiment grid runner and CSV/JSON reports for the thermal block study."""

from __future__ import annotations

import csv
import json
import os
import platform
import subprocess
import sys
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .fem import AffineModel, thermal_block, truth_solve
from .greedy import STRATEGIES, GreedyConfig, TrainingSet, run_strategy, sample_training_set
from .rb import RBSpace, h1_norms, solve_reduced, sweep

__all__ = [
    "SUMMARY_HEADER",
    "CONVERGENCE_HEADER",
    "TUNING_KEYS",
    "SummaryRow",
    "ConvergenceRow",
    "ExperimentReport",
    "ExperimentConfig",
    "training_rng",
    "test_rng",
    "make_test_set",
    "evaluate_test_error",
    "exit_max_delta",
    "run_single",
    "run_experiment",
    "emit_reports",
    "read_reports",
]

SUMMARY_HEADER = ("strategy,tol,seed,k_damp,c_m,m_sample,n_tr_small,n_final,wall_ms,"
                  "est_evals,truth_solves,max_h1_err,mean_h1_err,exit_max_delta").split(",")
CONVERGENCE_HEADER = ["strategy", "seed", "n", "max_delta"]

# tuning parameters each strategy actually uses
TUNING_KEYS = {
    "cg": (),
    "tsd": ("n_tr_small",),
    "ae": ("m_sample",),
    "sts": ("k_damp", "c_m"),
    "h-tsd": ("k_damp", "c_m", "n_tr_small"),
    "h-ae": ("k_damp", "c_m", "m_sample"),
}


def training_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 0])


def test_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 1])


@dataclass
class SummaryRow:
    strategy: str
    tol: float
    seed: int
    k_damp: int | None
    c_m: int | None
    m_sample: int | None
    n_tr_small: int | None
    n_final: int
    wall_ms: float
    est_evals: int
    truth_solves: int
    max_h1_err: float
    mean_h1_err: float
    exit_max_delta: float


@dataclass
class ConvergenceRow:
    strategy: str
    seed: int
    n: int
    max_delta: float


_INT_FIELDS = {"seed", "k_damp", "c_m", "m_sample", "n_tr_small", "n_final", "est_evals", "truth_solves", "n"}
_FLOAT_FIELDS = {"tol", "wall_ms", "max_h1_err", "mean_h1_err", "exit_max_delta", "max_delta"}


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    convergence: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def relative_time(self, row: SummaryRow) -> float:
        """Wall time relative to the classical greedy run at the same tolerance."""
        ref = [r.wall_ms for r in self.rows if r.strategy == "cg" and r.tol == row.tol]
        if not ref:
            raise LookupError(f"no cg run at tol={row.tol}")
        return row.wall_ms / min(ref)

    def relative_work(self, row: SummaryRow) -> float:
        ref = [r.est_evals for r in self.rows if r.strategy == "cg" and r.tol == row.tol]
        if not ref:
            raise LookupError(f"no cg run at tol={row.tol}")
        return row.est_evals / min(ref)

    def select(self, strategy=None, tol=None) -> list:
        return [r for r in self.rows
                if (strategy is None or r.strategy == strategy) and (tol is None or r.tol == tol)]

    def ranges(self, column: str) -> dict:
        """``{(strategy, tol): (min, max)}`` of a column over seeds and tuning values."""
        out = {}
        for r in self.rows:
            v = getattr(r, column)
            lo, hi = out.get((r.strategy, r.tol), (v, v))
            out[(r.strategy, r.tol)] = (min(lo, v), max(hi, v))
        return out


@dataclass
class ExperimentConfig:
    n_per_side: int = 21
    n_train: int = 20_000
    train_seed: int = 0
    n_test: int = 1000
    test_seed: int = 1
    tol_list: list = field(default_factory=lambda: [1e-3])
    seeds: list = field(default_factory=lambda: [0])
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    tuning: dict = field(default_factory=dict)
    out_dir: str | None = None
    threads: int = 1

    def __post_init__(self):
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ValueError(f"unknown strategies {bad}; expected a subset of {STRATEGIES}")
        if not self.tol_list or any(not float(t) > 0 for t in self.tol_list):
            raise ValueError("tol_list must hold positive tolerances")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = set(self.tuning) - {"k_damp", "c_m", "m_sample", "n_tr_small"}
        if unknown:
            raise ValueError(f"unknown tuning keys {sorted(unknown)}")
        # GreedyConfig applies the remaining range checks
        for combo in self.tuning_grid("h-tsd") + self.tuning_grid("h-ae"):
            GreedyConfig("cg", 1.0, self.n_train, **combo)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        mesh, train, test = d.pop("mesh", {}), d.pop("train", {}), d.pop("test", {})
        kw = {k: d.pop(k) for k in ("tol_list", "seeds", "strategies", "tuning", "out_dir", "threads") if k in d}
        if d:
            raise ValueError(f"unknown config keys {sorted(d)}")
        return cls(
            n_per_side=int(mesh.get("n_per_side", 21)),
            n_train=int(train.get("n", 20_000)),
            train_seed=int(train.get("seed", 0)),
            n_test=int(test.get("n", 1000)),
            test_seed=int(test.get("seed", 1)),
            **kw,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def tuning_grid(self, strategy: str) -> list:
        """Every combination of the listed tuning values the strategy uses."""
        keys = TUNING_KEYS[strategy]
        values = []
        for k in keys:
            v = self.tuning.get(k)
            if v is None:
                v = [None]
            values.append(v if isinstance(v, (list, tuple)) else [v])
        return [{k: v for k, v in zip(keys, combo) if v is not None} for combo in product(*values)]

    def to_dict(self) -> dict:
        return {
            "mesh": {"n_per_side": self.n_per_side},
            "train": {"n": self.n_train, "seed": self.train_seed},
            "test": {"n": self.n_test, "seed": self.test_seed},
            "tol_list": list(self.tol_list),
            "seeds": list(self.seeds),
            "strategies": list(self.strategies),
            "tuning": dict(self.tuning),
            "out_dir": self.out_dir,
            "threads": self.threads,
        }


def make_test_set(model: AffineModel, n_test: int, seed: int):
    """Random test parameters and their truth solutions, as ``(mus, U)``."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    box = model.parameter_box
    mus = test_rng(seed).uniform(box[:, 0], box[:, 1], size=(n_test, len(box)))
    U = np.array([truth_solve(model, mu).coefficients for mu in mus])
    return mus, U


def evaluate_test_error(space: RBSpace, model: AffineModel, n_test: int = 1000, seed: int = 1,
                        test_set=None):
    """Worst and mean H1 error of the reduced solution over a fresh test sample."""
    mus, U = test_set if test_set is not None else make_test_set(model, n_test, seed)
    coeffs = solve_reduced(space.online(), mus)
    approx = coeffs @ space.basis if space.N else np.zeros_like(U)
    _, h1 = h1_norms(model, U - approx)
    return float(h1.max()), float(h1.mean())


def exit_max_delta(space: RBSpace, xi: TrainingSet) -> float:
    """Post-hoc maximum estimate over the whole training set (not counted as work)."""
    return float(sweep(space.online(), xi.points).max())


def run_single(model: AffineModel, xi: TrainingSet, config: GreedyConfig, test_set=None,
               tuning: dict | None = None):
    """Run one strategy and summarise it; returns ``(SummaryRow, [ConvergenceRow], result)``."""
    result = run_strategy(model, xi, config)
    trace = result.trace
    if test_set is None:
        test_set = make_test_set(model, 1000, 1)
    max_err, mean_err = evaluate_test_error(result.space, model, test_set=test_set)
    used = TUNING_KEYS[config.strategy]
    tuning = {k: getattr(config, k) if k in used else None for k in ("k_damp", "c_m", "m_sample", "n_tr_small")}
    row = SummaryRow(
        strategy=config.strategy, tol=float(config.tol), seed=int(config.seed), **tuning,
        n_final=trace.n_final, wall_ms=1e3 * trace.wall_time, est_evals=trace.est_evals,
        truth_solves=trace.truth_solves, max_h1_err=max_err, mean_h1_err=mean_err,
        exit_max_delta=exit_max_delta(result.space, xi),
    )
    conv = [ConvergenceRow(config.strategy, int(config.seed), n, d) for n, d in trace.convergence()]
    return row, conv, result


def run_experiment(config, progress=None) -> ExperimentReport:
    """Run the strategy x tolerance x seed (x tuning) grid of ``config``.

    ``config`` is an :class:`ExperimentConfig`, a dict in the JSON layout
    or a path to a JSON file.  The training and test sets are fixed by
    their own seeds; the run seeds drive the strategies' randomness.  The
    classical greedy only depends on the seed through its initial
    parameter, so it is run once per tolerance with the first seed.
    """
    if isinstance(config, (str, os.PathLike)):
        config = ExperimentConfig.load(config)
    elif isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    model = thermal_block(config.n_per_side)
    xi = sample_training_set(model.parameter_box, config.n_train, training_rng(config.train_seed))
    test_set = make_test_set(model, config.n_test, config.test_seed)
    report = ExperimentReport(config=config.to_dict())
    for tol in config.tol_list:
        for strategy in config.strategies:
            seeds = config.seeds[:1] if strategy == "cg" else config.seeds
            for combo in config.tuning_grid(strategy):
                for seed in seeds:
                    gc = GreedyConfig(strategy, float(tol), config.n_train, int(seed),
                                      threads=config.threads, **combo)
                    row, conv, _ = run_single(model, xi, gc, test_set)
                    report.rows.append(row)
                    report.convergence.extend(conv)
                    if progress:
                        progress(row)
    return report


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    return text


def _git_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def emit_reports(report: ExperimentReport, out_dir) -> dict:
    """Write ``summary.csv``, ``convergence.csv`` and ``meta.json``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.csv", "convergence": out / "convergence.csv", "meta": out / "meta.json"}
    for key, header, rows in (("summary", SUMMARY_HEADER, report.rows),
                              ("convergence", CONVERGENCE_HEADER, report.convergence)):
        with open(paths[key], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                d = asdict(r)
                w.writerow([_fmt(d[h]) for h in header])
    meta = {
        "config": report.config,
        "version": __version__,
        "git_revision": _git_revision(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "cpu_count": os.cpu_count(),
    }
    with open(paths["meta"], "w") as fh:
        json.dump(meta, fh, indent=2)
    return paths


def read_reports(out_dir) -> ExperimentReport:
    out = Path(out_dir)
    report = ExperimentReport()
    for name, cls, target in (("summary.csv", SummaryRow, report.rows),
                              ("convergence.csv", ConvergenceRow, report.convergence)):
        names = [f.name for f in fields(cls)]
        with open(out / name, newline="") as fh:
            for rec in csv.DictReader(fh):
                target.append(cls(**{k: _parse(k, rec[k]) for k in names}))
    meta = out / "meta.json"
    if meta.exists():
        report.config = json.loads(meta.read_text())["config"]
    return report
