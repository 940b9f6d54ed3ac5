"""Greedy snapshot selection: the classical loop and five accelerated variants.

Strategies
----------
``cg``     classical greedy over the whole training set
``tsd``    classical greedy run over a geometric a-priori decomposition
``ae``     adaptive enriching of a fixed-size active sample
``sts``    alternating full scans and surrogate training sets (SMM)
``h-tsd``  surrogate training sets inside each decomposition subset
``h-ae``   surrogate training sets inside the adaptive enriching loop

Every strategy scans training points with the batched error estimator
and records each scan in a :class:`GreedyTrace`.  Randomness comes from
two streams spawned from ``GreedyConfig.seed``: one for the initial
parameter and one for set construction (partitions, replenishment).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import AffineModel, truth_solve
from .rb import RBSpace, RedundantSnapshot, sweep

__all__ = [
    "STRATEGIES",
    "TrainingSet",
    "GreedyConfig",
    "ScanRecord",
    "OuterRecord",
    "GreedyTrace",
    "GreedyResult",
    "sample_training_set",
    "classical_greedy",
    "tsd_partition",
    "tsd_cg",
    "ae_cg",
    "ae_safe_count",
    "smm_levels",
    "smm_build_sts",
    "damping_continue",
    "sts_cg",
    "h_tsd_cg",
    "h_ae_cg",
    "run_strategy",
]

STRATEGIES = ("cg", "tsd", "ae", "sts", "h-tsd", "h-ae")


@dataclass
class TrainingSet:
    """Finite parameter sample with stable integer ids.

    ``active_mask`` marks points still in play; strategies only ever clear
    entries, so removed points never come back.
    """

    points: np.ndarray
    ids: np.ndarray
    active_mask: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.active_mask is None:
            self.active_mask = np.ones(len(self.ids), dtype=bool)
        if len(self.ids) != len(self.points) or len(self.active_mask) != len(self.ids):
            raise ValueError("points, ids and active_mask must have equal length")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_points(cls, points) -> "TrainingSet":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(points, np.arange(len(points)))

    def subset(self, positions) -> "TrainingSet":
        positions = np.sort(np.asarray(positions, dtype=np.int64))
        return TrainingSet(self.points[positions], self.ids[positions],
                           self.active_mask[positions].copy())

    def active_positions(self) -> np.ndarray:
        return np.flatnonzero(self.active_mask)


def sample_training_set(box, n: int, rng: np.random.Generator) -> TrainingSet:
    """``n`` points drawn uniformly from the box ``[(lo, hi), ...]``."""
    if n < 1:
        raise ValueError("training set needs at least one point")
    box = np.asarray(box, dtype=float)
    pts = rng.uniform(box[:, 0], box[:, 1], size=(int(n), len(box)))
    return TrainingSet.from_points(pts)


@dataclass
class GreedyConfig:
    """Settings shared by all strategies.

    ``n_tr_small`` and ``m_sample`` default to ``n_train // 20``.
    """

    strategy: str = "cg"
    tol: float = 1e-3
    n_train: int = 20_000
    seed: int = 0
    n_tr_small: int | None = None
    m_sample: int | None = None
    c_m: int = 20
    k_damp: int = 20
    n_max: int = 200
    threads: int = 1
    chunk: int = 2048

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.n_train < 1:
            raise ValueError("n_train must be positive")
        default = max(1, self.n_train // 20)
        if self.n_tr_small is None:
            self.n_tr_small = default
        if self.m_sample is None:
            self.m_sample = default
        if not 1 <= self.n_tr_small <= self.n_train:
            raise ValueError("need 1 <= n_tr_small <= n_train")
        if not 1 <= self.m_sample <= self.n_train:
            raise ValueError("need 1 <= m_sample <= n_train")
        if self.c_m < 1 or self.k_damp < 1 or self.n_max < 1:
            raise ValueError("c_m, k_damp and n_max must be >= 1")
        if self.threads < 1 or self.chunk < 1:
            raise ValueError("threads and chunk must be >= 1")


@dataclass(frozen=True)
class ScanRecord:
    """One sweep of the estimator over ``size`` points.

    ``chosen`` is the id of the parameter added afterwards, or -1 when
    the scan ended a loop without augmenting.
    """

    n: int
    size: int
    max_delta: float
    chosen: int
    est_evals: int
    wall_time: float
    stage: str


@dataclass(frozen=True)
class OuterRecord:
    ell: int
    E: float
    n_sur: int
    n: int


@dataclass
class GreedyTrace:
    strategy: str
    scans: list = field(default_factory=list)
    outer: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    truth_solves: int = 0
    converged: bool = False
    wall_time: float = 0.0

    @property
    def est_evals(self) -> int:
        return self.scans[-1].est_evals if self.scans else 0

    @property
    def n_final(self) -> int:
        return len(self.selected)

    @property
    def iterations(self) -> list:
        return [s for s in self.scans if s.chosen >= 0]

    def convergence(self) -> list:
        """``(N, max estimate)`` for every scan."""
        return [(s.n, s.max_delta) for s in self.scans]

    def signature(self) -> tuple:
        """Everything except timings, for determinism checks."""
        scans = tuple((s.n, s.size, s.max_delta, s.chosen, s.est_evals, s.stage) for s in self.scans)
        return (self.strategy, scans, tuple(self.outer), tuple(self.selected),
                self.truth_solves, self.converged)


@dataclass
class GreedyResult:
    space: RBSpace
    trace: GreedyTrace

    @property
    def n(self) -> int:
        return self.space.N


class _Engine:
    """Bookkeeping shared by every strategy: scans, augmentation, rng streams."""

    def __init__(self, model: AffineModel, config: GreedyConfig, space=None, trace=None):
        self.model = model
        self.cfg = config
        self.space = space if space is not None else RBSpace(model)
        self.trace = trace if trace is not None else GreedyTrace(config.strategy)
        init_seq, set_seq = np.random.SeedSequence(config.seed).spawn(2)
        self.init_rng = np.random.default_rng(init_seq)
        self.set_rng = np.random.default_rng(set_seq)
        self.selected = set(self.trace.selected)
        self.t0 = time.perf_counter()

    @property
    def tol(self) -> float:
        return self.cfg.tol

    @property
    def capped(self) -> bool:
        return self.space.N >= self.cfg.n_max

    def scan(self, xi: TrainingSet, pos: np.ndarray, stage: str) -> np.ndarray:
        d = sweep(self.space.online(), xi.points[pos], chunk=self.cfg.chunk, threads=self.cfg.threads)
        evals = self.trace.est_evals + len(pos)
        self.trace.scans.append(ScanRecord(self.space.N, len(pos), float(d.max()), -1, evals,
                                           time.perf_counter() - self.t0, stage))
        return d

    def add(self, xi: TrainingSet, p: int, after_scan: bool = True) -> bool:
        """Augment with training point ``p``; inactivate it if redundant."""
        pid = int(xi.ids[p])
        if pid in self.selected:
            xi.active_mask[p] = False
            return False
        truth = truth_solve(self.model, xi.points[p])
        self.trace.truth_solves += 1
        try:
            self.space.augment(truth)
        except RedundantSnapshot:
            xi.active_mask[p] = False
            return False
        self.selected.add(pid)
        self.trace.selected.append(pid)
        if after_scan and self.trace.scans and self.trace.scans[-1].chosen < 0:
            self.trace.scans[-1] = replace(self.trace.scans[-1], chosen=pid)
        return True

    def pick_initial(self, xi: TrainingSet, candidates: np.ndarray):
        p = candidates[self.init_rng.integers(len(candidates))]
        self.add(xi, p, after_scan=False)

    def unselected(self, xi: TrainingSet, pos: np.ndarray) -> np.ndarray:
        if not self.selected:
            return np.ones(len(pos), dtype=bool)
        return ~np.isin(xi.ids[pos], np.fromiter(self.selected, dtype=np.int64))

    def finish(self, converged: bool) -> GreedyResult:
        self.trace.converged = bool(converged)
        self.trace.wall_time += time.perf_counter() - self.t0
        return GreedyResult(self.space, self.trace)


# ---- classical greedy ----------------------------------------------------

def _cg(eng: _Engine, xi: TrainingSet) -> bool:
    if eng.space.N == 0:
        eng.pick_initial(xi, xi.active_positions())
    while True:
        pos = xi.active_positions()
        if len(pos) == 0:
            return True
        d = eng.scan(xi, pos, "full")
        k = int(np.argmax(d))
        if d[k] <= eng.tol:
            return True
        if eng.capped:
            return False
        eng.add(xi, pos[k])


def classical_greedy(model: AffineModel, xi: TrainingSet, tol: float, space: RBSpace | None = None,
                     *, seed: int = 0, n_max: int = 200, threads: int = 1,
                     trace: GreedyTrace | None = None) -> GreedyResult:
    """Classical greedy; resumes from ``space`` when it is non-empty.

    Each iteration scans every active point of ``xi`` and adds the one with
    the largest estimate (lowest id on ties) until the maximum drops to
    ``tol`` or the basis reaches ``n_max``.
    """
    cfg = GreedyConfig("cg", tol, len(xi), seed, n_max=n_max, threads=threads)
    eng = _Engine(model, cfg, space, trace)
    return eng.finish(_cg(eng, xi))


# ---- training set decomposition ------------------------------------------

def tsd_partition(xi: TrainingSet, n_tr_small: int, rng: np.random.Generator) -> list:
    """Disjoint random subsets of sizes ``n_small, 2 n_small, 4 n_small, ...`` plus a remainder.

    The number of subsets is ``floor(log2(n_train / n_tr_small))``; when
    that is below two the whole set is returned as a single subset.
    """
    n = len(xi)
    if not 1 <= n_tr_small <= n:
        raise ValueError("need 1 <= n_tr_small <= n_train")
    J = (n // n_tr_small).bit_length() - 1
    if J <= 1:
        return [xi.subset(np.arange(n))]
    sizes = [n_tr_small * 2 ** (j - 1) for j in range(1, J)]
    sizes.append(n - sum(sizes))
    perm = rng.permutation(n)
    bounds = np.cumsum(sizes)[:-1]
    return [xi.subset(part) for part in np.split(perm, bounds)]


def tsd_cg(model: AffineModel, xi: TrainingSet, config: GreedyConfig) -> GreedyResult:
    eng = _Engine(model, config)
    parts = tsd_partition(xi, config.n_tr_small, eng.set_rng)
    converged = True
    for part in parts:
        converged = _cg(eng, part)
        if not converged:
            break
    return eng.finish(converged)


# ---- adaptive enriching --------------------------------------------------

def ae_safe_count(n_train: int, m_sample: int) -> int:
    return math.ceil(n_train / m_sample)


def _replenish(eng: _Engine, xi: TrainingSet, cur: np.ndarray, m_sample: int) -> np.ndarray:
    free = xi.active_mask.copy()
    free[cur] = False
    cand = np.flatnonzero(free)
    k = min(m_sample - len(cur), len(cand))
    if k <= 0:
        return cur
    new = eng.set_rng.choice(cand, size=k, replace=False)
    return np.sort(np.concatenate([cur, new]))


def _truncate(xi: TrainingSet, cur: np.ndarray, d: np.ndarray, tol: float):
    """Drop resolved (and inactivated) points from both the sample and the training set."""
    below = d < tol
    drop = below | ~xi.active_mask[cur]
    xi.active_mask[cur[drop]] = False
    return cur[~drop], int(below.sum())


def _ae(eng: _Engine, xi: TrainingSet) -> bool:
    tol = eng.tol
    M = eng.cfg.m_sample
    n_safe = ae_safe_count(len(xi), M)
    cur = np.sort(eng.set_rng.choice(xi.active_positions(), size=min(M, int(xi.active_mask.sum())),
                                     replace=False))
    eng.pick_initial(xi, cur)
    safe, eps = 0, 2 * tol
    r = int(xi.active_mask.sum())
    while (eps > tol or safe <= n_safe) and r > 0:
        d = eng.scan(xi, cur, "sample")
        k = int(np.argmax(d))
        eps = float(d[k])
        if eps > tol:
            if eng.capped:
                return False
            eng.add(xi, cur[k])
        cur, n_below = _truncate(xi, cur, d, tol)
        r = int(xi.active_mask.sum())
        if n_below == M:
            safe += 1
        cur = _replenish(eng, xi, cur, M)
    return True


def ae_cg(model: AffineModel, xi: TrainingSet, config: GreedyConfig) -> GreedyResult:
    """Greedy over an active sample of ``m_sample`` points that is pruned and refilled.

    Points whose estimate falls below ``tol`` leave both the sample and the
    training set; the loop ends once the whole training set has been
    worked through (or the safety counter is exhausted).
    """
    eng = _Engine(model, config)
    return eng.finish(_ae(eng, xi))


# ---- surrogate training sets ---------------------------------------------

def smm_levels(tol: float, dmax: float, m_level: int) -> np.ndarray:
    """``m_level`` equi-spaced levels starting at ``tol`` and stopping short of ``dmax``."""
    return tol + (dmax - tol) * np.arange(m_level) / m_level


def smm_build_sts(ids, deltas, tol: float, m_level: int) -> np.ndarray:
    """Surrogate training set: for each level the id whose estimate is nearest.

    Ties go to the lowest id; duplicates are collapsed so at most
    ``m_level`` ids are returned (sorted).  ``ids`` may also be a mapping
    ``id -> estimate`` with ``deltas`` left as ``None``.
    """
    if deltas is None:
        items = sorted(dict(ids).items())
        ids = [i for i, _ in items]
        deltas = [v for _, v in items]
    ids = np.asarray(ids, dtype=np.int64)
    deltas = np.asarray(deltas, dtype=float)
    if len(ids) == 0:
        raise ValueError("no estimates to build a surrogate set from")
    if len(ids) != len(deltas):
        raise ValueError("ids and deltas differ in length")
    if m_level < 1:
        raise ValueError("m_level must be >= 1")
    levels = smm_levels(tol, float(deltas.max()), m_level)

    order = np.lexsort((ids, deltas))
    sd, sid = deltas[order], ids[order]
    n = len(sd)
    r = np.searchsorted(sd, levels, side="left")   # first estimate >= level
    r_ok, l_ok = r < n, r > 0
    rc = np.minimum(r, n - 1)
    # nearest value below the level, lowest id among equal values
    lc = np.searchsorted(sd, sd[np.maximum(r - 1, 0)], side="left")
    dr = np.where(r_ok, np.abs(sd[rc] - levels), np.inf)
    dl = np.where(l_ok, np.abs(sd[lc] - levels), np.inf)
    take_left = (dl < dr) | ((dl == dr) & (sid[lc] < sid[rc]))
    chosen = np.where(take_left, sid[lc], sid[rc])
    return np.unique(chosen)


def damping_continue(eps: float, E: float, k_damp: float, ell: int) -> bool:
    """Inner-loop condition on the damping ratio ``1 / (k_damp (ell + 1))``."""
    return eps / E > 1.0 / (k_damp * (ell + 1))


def _inner(eng: _Engine, xi: TrainingSet, sur: np.ndarray, E: float, ell: int) -> bool:
    tol = eng.tol
    eps = E
    while len(sur) and eps > tol and damping_continue(eps, E, eng.cfg.k_damp, ell):
        d = eng.scan(xi, sur, "sur")
        k = int(np.argmax(d))
        eps = float(d[k])
        if eps > tol:
            if eng.capped:
                return False
            if not eng.add(xi, sur[k]):
                sur = np.delete(sur, k)
    return True


def _surrogate(eng: _Engine, xi: TrainingSet, pos: np.ndarray, d: np.ndarray, ell: int) -> np.ndarray:
    keep = eng.unselected(xi, pos) & xi.active_mask[pos]
    if not keep.any():
        return np.zeros(0, dtype=np.int64)
    # positions are ordered like ids, so they serve as tie-break labels directly
    return smm_build_sts(pos[keep], d[keep], eng.tol, eng.cfg.c_m * (ell + 1))


def _sts(eng: _Engine, xi: TrainingSet) -> bool:
    tol = eng.tol
    if eng.space.N == 0:
        eng.pick_initial(xi, xi.active_positions())
    ell, E = 0, 2 * tol
    while E > tol:
        ell += 1
        pos = xi.active_positions()
        if len(pos) == 0:
            return True
        d = eng.scan(xi, pos, "full")
        k = int(np.argmax(d))
        E = float(d[k])
        if E <= tol:
            eng.trace.outer.append(OuterRecord(ell, E, 0, eng.space.N))
            return True
        if eng.capped:
            return False
        eng.add(xi, pos[k])
        sur = _surrogate(eng, xi, pos, d, ell)
        eng.trace.outer.append(OuterRecord(ell, E, len(sur), eng.space.N))
        if not _inner(eng, xi, sur, E, ell):
            return False
    return True


def sts_cg(model: AffineModel, xi: TrainingSet, config: GreedyConfig,
           space: RBSpace | None = None, trace: GreedyTrace | None = None) -> GreedyResult:
    """Full one-step scans alternating with greedy loops on SMM surrogate sets.

    Each outer round ``ell`` scans all of ``xi`` once, adds the maximiser,
    builds a surrogate set of at most ``c_m (ell + 1)`` points from the
    scan and runs greedy steps on it until the maximum there falls by
    ``1 / (k_damp (ell + 1))`` or below ``tol``.
    """
    eng = _Engine(model, config, space, trace)
    return eng.finish(_sts(eng, xi))


def h_tsd_cg(model: AffineModel, xi: TrainingSet, config: GreedyConfig) -> GreedyResult:
    eng = _Engine(model, config)
    parts = tsd_partition(xi, config.n_tr_small, eng.set_rng)
    eng.pick_initial(parts[0], parts[0].active_positions())
    converged = True
    for part in parts:
        converged = _sts(eng, part)
        if not converged:
            break
    return eng.finish(converged)


def _h_ae(eng: _Engine, xi: TrainingSet) -> bool:
    tol = eng.tol
    M = eng.cfg.m_sample
    n_safe = ae_safe_count(len(xi), M)
    cur = np.sort(eng.set_rng.choice(xi.active_positions(), size=min(M, int(xi.active_mask.sum())),
                                     replace=False))
    eng.pick_initial(xi, xi.active_positions())
    safe, ell, E = 0, 1, 2 * tol
    r = int(xi.active_mask.sum())
    while (E > tol or safe <= n_safe) and r > 0:
        d = eng.scan(xi, cur, "sample")
        k = int(np.argmax(d))
        E = float(d[k])
        n_sur = 0
        if E > tol:
            if eng.capped:
                return False
            eng.add(xi, cur[k])
            sur = _surrogate(eng, xi, cur, d, ell)
            n_sur = len(sur)
            eng.trace.outer.append(OuterRecord(ell, E, n_sur, eng.space.N))
            if not _inner(eng, xi, sur, E, ell):
                return False
        else:
            eng.trace.outer.append(OuterRecord(ell, E, 0, eng.space.N))
        cur, n_below = _truncate(xi, cur, d, tol)
        r = int(xi.active_mask.sum())
        if n_below == M:
            safe += 1
            ell = 1
        else:
            ell += 1
        cur = _replenish(eng, xi, cur, M)
    return True


def h_ae_cg(model: AffineModel, xi: TrainingSet, config: GreedyConfig) -> GreedyResult:
    eng = _Engine(model, config)
    return eng.finish(_h_ae(eng, xi))


_DISPATCH = {
    "cg": lambda m, xi, c: classical_greedy(m, xi, c.tol, seed=c.seed, n_max=c.n_max, threads=c.threads),
    "tsd": tsd_cg,
    "ae": ae_cg,
    "sts": sts_cg,
    "h-tsd": h_tsd_cg,
    "h-ae": h_ae_cg,
}


def run_strategy(model: AffineModel, xi: TrainingSet, config: GreedyConfig) -> GreedyResult:
    """Run ``config.strategy`` on a private copy of ``xi``'s activity mask."""
    xi = TrainingSet(xi.points, xi.ids, xi.active_mask.copy())
    return _DISPATCH[config.strategy](model, xi, config)
