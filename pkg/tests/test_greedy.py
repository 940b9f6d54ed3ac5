import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbgreedy.fem import thermal_block, truth_solve
from rbgreedy.greedy import (GreedyConfig, TrainingSet, ae_cg, ae_safe_count, classical_greedy, damping_continue,
                             run_strategy, sample_training_set, smm_build_sts, smm_levels, tsd_partition)
from rbgreedy.rb import RBSpace, error_estimate, sweep

BOX = [(0.1, 10.0)] * 9


@pytest.fixture(scope="module")
def model():
    return thermal_block(21)


@pytest.fixture(scope="module")
def xi2000():
    return sample_training_set(BOX, 2000, np.random.default_rng(42))


def run(model, xi, strategy, tol=1e-2, **kw):
    cfg = GreedyConfig(strategy=strategy, tol=tol, n_train=len(xi), **kw)
    return run_strategy(model, xi, cfg)


def exit_max(result, xi):
    return sweep(result.space.online(), xi.points).max()


class TestSampler:
    def test_deterministic(self):
        a = sample_training_set(BOX, 50, np.random.default_rng(3))
        b = sample_training_set(BOX, 50, np.random.default_rng(3))
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.ids, np.arange(50))
        assert a.active_mask.all()

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            sample_training_set(BOX, 0, np.random.default_rng(0))

    def test_monte_carlo_mean(self):
        xi = sample_training_set(BOX, 10 ** 5, np.random.default_rng(0))
        assert xi.points.shape == (10 ** 5, 9)
        assert np.all(np.abs(xi.points.mean(axis=0) - 5.05) < 0.05)
        assert xi.points.min() >= 0.1 and xi.points.max() <= 10

    def test_subset_keeps_ids(self):
        xi = sample_training_set(BOX, 10, np.random.default_rng(0))
        sub = xi.subset([7, 2, 5])
        np.testing.assert_array_equal(sub.ids, [2, 5, 7])
        sub.active_mask[0] = False
        assert xi.active_mask.all()


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(strategy="foo"), dict(tol=0), dict(tol=-1e-3),
                                    dict(n_tr_small=20_001), dict(m_sample=0), dict(c_m=0),
                                    dict(k_damp=0), dict(n_max=0), dict(threads=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GreedyConfig(**kw)

    def test_defaults(self):
        cfg = GreedyConfig(n_train=20_000)
        assert cfg.n_tr_small == cfg.m_sample == 1000
        assert (cfg.c_m, cfg.k_damp, cfg.n_max) == (20, 20, 200)


class TestClassical:
    def test_single_point(self, model):
        xi = TrainingSet.from_points([np.full(9, 3.0)])
        res = classical_greedy(model, xi, 1e-3)
        assert res.n == 1 and res.trace.converged
        assert res.trace.scans[-1].max_delta <= 1e-3

    def test_argmax_oracle_replay(self, model):
        xi = sample_training_set(BOX, 500, np.random.default_rng(7))
        res = classical_greedy(model, xi, 1e-2, seed=3)
        replay = RBSpace(model)
        chosen = [s.chosen for s in res.trace.scans]
        replay.augment(truth_solve(model, xi.points[res.trace.selected[0]]))
        for c in chosen:
            # brute force, one parameter at a time, lowest id wins ties
            best_id, best = -1, -np.inf
            for pid, mu in zip(xi.ids, xi.points):
                d = error_estimate(replay, model, mu).value
                if d > best:
                    best_id, best = pid, d
            if c < 0:
                assert best <= 1e-2
            else:
                assert c == best_id
                replay.augment(truth_solve(model, xi.points[c]))
        assert replay.N == res.n

    def test_resumes_from_space(self, model, xi2000):
        first = classical_greedy(model, xi2000, 1e-1, seed=0)
        n1 = first.n
        more = classical_greedy(model, xi2000, 1e-2, space=first.space, trace=first.trace)
        assert more.n > n1 and more.trace.selected[:n1] == first.trace.selected[:n1]
        assert more.trace.scans[-1].max_delta <= 1e-2

    def test_cap(self, model, xi2000):
        res = run(model, xi2000, "cg", tol=1e-4, n_max=5)
        assert res.n == 5 and not res.trace.converged


class TestTSD:
    @pytest.mark.parametrize("n, small, sizes", [(8000, 500, [500, 1000, 2000, 4500]),
                                                 (1000, 1000, [1000]),
                                                 (10_000, 1000, [1000, 2000, 7000])])
    def test_partition_sizes(self, n, small, sizes):
        xi = TrainingSet.from_points(np.ones((n, 1)))
        parts = tsd_partition(xi, small, np.random.default_rng(0))
        assert [len(p) for p in parts] == sizes
        ids = np.concatenate([p.ids for p in parts])
        assert len(set(ids.tolist())) == n and set(ids.tolist()) == set(range(n))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5000), st.integers(1, 5000), st.integers(0, 2 ** 32 - 1))
    def test_partition_property(self, n, small, seed):
        small = min(small, n)
        xi = TrainingSet.from_points(np.zeros((n, 1)))
        parts = tsd_partition(xi, small, np.random.default_rng(seed))
        J = int(np.floor(np.log2(n / small) + 1e-12))
        assert len(parts) == (J if J > 1 else 1)
        ids = np.sort(np.concatenate([p.ids for p in parts]))
        np.testing.assert_array_equal(ids, np.arange(n))

    def test_rejects_oversized(self):
        xi = TrainingSet.from_points(np.zeros((10, 1)))
        with pytest.raises(ValueError):
            tsd_partition(xi, 11, np.random.default_rng(0))

    def test_single_subset_equals_cg(self, model, xi2000):
        a = run(model, xi2000, "tsd", n_tr_small=2000, seed=5)
        b = run(model, xi2000, "cg", seed=5)
        assert a.trace.selected == b.trace.selected

    def test_two_points(self, model):
        xi = TrainingSet.from_points([np.full(9, 1.0), np.full(9, 0.2)])
        res = run(model, xi, "tsd", n_tr_small=1)
        assert res.n <= 2 and res.trace.converged


class TestAE:
    def test_safe_count(self):
        assert ae_safe_count(10_000, 2048) == 5
        assert ae_safe_count(20_000, 1000) == 20

    def test_full_sample_equals_cg(self, model, xi2000):
        a = run(model, xi2000, "ae", m_sample=2000, seed=2)
        b = run(model, xi2000, "cg", seed=2)
        assert a.trace.selected == b.trace.selected

    def test_truncation_monotone(self, model, xi2000):
        xi = TrainingSet(xi2000.points, xi2000.ids, xi2000.active_mask.copy())
        res = ae_cg(model, xi, GreedyConfig("ae", 1e-2, 2000, 0, m_sample=100))
        assert not xi.active_mask.any()
        assert res.trace.converged
        assert max(s.size for s in res.trace.scans) <= 100

    def test_run_strategy_leaves_input_untouched(self, model, xi2000):
        run(model, xi2000, "ae", m_sample=200)
        assert xi2000.active_mask.all()


class TestSMM:
    def test_levels(self):
        np.testing.assert_allclose(smm_levels(1e-4, 1.0, 5), [0.0001, 0.20008, 0.40006, 0.60004, 0.80002],
                                   rtol=0, atol=1e-15)

    def test_all_equal(self):
        assert smm_build_sts(np.arange(10, 20), np.full(10, 0.5), 1e-3, 7).tolist() == [10]

    def test_mapping_input(self):
        assert smm_build_sts({3: 0.1, 1: 0.1, 2: 1.0}, None, 0.01, 3).tolist() == [1, 2]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            smm_build_sts([], [], 1e-3, 5)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ids = rng.permutation(5000)[:1000]
        d = 10.0 ** rng.uniform(-4, 0, 1000)
        if seed == 0:
            d[::7] = d[0]  # plenty of exact ties
        levels = smm_levels(1e-4, d.max(), 20)
        expect = set()
        for nu in levels:
            dist = np.abs(d - nu)
            cands = ids[dist == dist.min()]
            expect.add(int(cands.min()))
        assert smm_build_sts(ids, d, 1e-4, 20).tolist() == sorted(expect)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=60), st.integers(1, 30))
    def test_size_bound(self, d, m):
        out = smm_build_sts(np.arange(len(d)), d, 1e-3, m)
        assert 1 <= len(out) <= min(m, len(d))


class TestDamping:
    def test_arithmetic(self):
        assert not damping_continue(0.5, 1.0, 1, 1)      # strict: 0.5 vs 1/2
        assert damping_continue(0.51, 1.0, 1, 1)
        assert not damping_continue(0.5, 1.0, 1, 0)      # below ratio 1
        assert not damping_continue(1.0, 1.0, 1, 0)      # ratio 1 is not > 1
        assert damping_continue(0.06, 1.0, 20, 0)        # 0.06 > 0.05
        assert not damping_continue(0.05, 1.0, 20, 0)
        assert damping_continue(0.03, 1.0, 20, 1)        # 0.03 > 0.025


@pytest.fixture(scope="module")
def runs(model, xi2000):
    return {s: run(model, xi2000, s, tol=1e-2, seed=1, m_sample=200, n_tr_small=200)
            for s in ("cg", "tsd", "ae", "sts", "h-tsd", "h-ae")}


class TestStrategies:

    @pytest.mark.parametrize("s", ["cg", "tsd", "ae", "sts", "h-tsd", "h-ae"])
    def test_unique_snapshots(self, runs, s):
        sel = runs[s].trace.selected
        assert len(sel) == len(set(sel)) == runs[s].n

    @pytest.mark.parametrize("s", ["cg", "tsd", "ae", "sts", "h-tsd", "h-ae"])
    def test_work_accounting(self, runs, s):
        scans = runs[s].trace.scans
        assert runs[s].trace.est_evals == sum(r.size for r in scans)
        counts = [r.est_evals for r in scans]
        assert counts == sorted(counts)
        assert runs[s].trace.truth_solves >= runs[s].n

    @pytest.mark.parametrize("s", ["cg", "tsd", "sts", "h-tsd"])
    def test_termination_certificate(self, runs, s):
        tr = runs[s].trace
        assert tr.converged
        last_full = [r for r in tr.scans if r.stage == "full"][-1]
        assert last_full.max_delta <= 1e-2 and last_full.chosen == -1

    @pytest.mark.parametrize("s", ["ae", "h-ae"])
    def test_ae_exit_empirical(self, runs, xi2000, s):
        assert runs[s].trace.converged
        assert exit_max(runs[s], xi2000) <= 3e-2

    @pytest.mark.parametrize("s", ["sts", "h-tsd", "h-ae"])
    def test_surrogate_bound(self, runs, s):
        tr = runs[s].trace
        assert tr.outer
        for rec in tr.outer:
            assert rec.n_sur <= 20 * (rec.ell + 1)
        sur_scans = [r.size for r in tr.scans if r.stage == "sur"]
        assert max(sur_scans) <= 20 * (max(o.ell for o in tr.outer) + 1)

    def test_enhanced_cheaper_than_cg(self, runs):
        base = runs["cg"].trace.est_evals
        for s in ("tsd", "ae", "sts", "h-tsd", "h-ae"):
            assert runs[s].trace.est_evals < base, s

    @pytest.mark.parametrize("s", ["cg", "tsd", "ae", "sts", "h-tsd", "h-ae"])
    def test_deterministic(self, model, xi2000, runs, s):
        threaded = run(model, xi2000, s, tol=1e-2, seed=1, m_sample=200, n_tr_small=200, threads=4, chunk=256)
        assert threaded.trace.signature() == runs[s].trace.signature()

    def test_seed_changes_start(self, model, xi2000, runs):
        other = run(model, xi2000, "cg", tol=1e-2, seed=2)
        assert other.trace.selected[0] != runs["cg"].trace.selected[0]


class TestHybridReductions:
    def test_h_tsd_single_subset_equals_sts(self, model, xi2000):
        a = run(model, xi2000, "h-tsd", n_tr_small=2000, seed=4)
        b = run(model, xi2000, "sts", seed=4)
        assert a.trace.selected == b.trace.selected
        assert a.trace.signature()[1:] == b.trace.signature()[1:]

    def test_h_tsd_degenerate_tuning(self, model, xi2000):
        res = run(model, xi2000, "h-tsd", c_m=1, k_damp=1, n_tr_small=200)
        assert res.trace.converged
        assert exit_max(res, xi2000) <= 1e-2

    def test_h_ae_full_sample(self, model, xi2000):
        res = run(model, xi2000, "h-ae", m_sample=2000, c_m=1000, k_damp=1000)
        assert res.trace.converged
        assert exit_max(res, xi2000) <= 1e-2

    def test_sts_k_damp_one(self, model, xi2000):
        res = run(model, xi2000, "sts", k_damp=1)
        assert res.trace.converged and exit_max(res, xi2000) <= 1e-2
