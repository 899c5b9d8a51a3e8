import math
from collections import Counter

import numpy as np
import pytest

from allelink.likelihood import LikelihoodConfig, make_dataset
from allelink.mcmc import (
    ChainState,
    PosteriorTrace,
    SamplerConfig,
    chaperones_step,
    full_gibbs_scan,
    read_snapshots_csv,
    read_trace_jsonl,
    reallocation_pass,
    run_chain,
    similarity_weights,
    write_snapshots_csv,
    write_trace_jsonl,
)
from allelink.partitions import LinkageStructure
from allelink.priors import BbapParams, CalibrationSpec, EppParams, calibrate_recursive

from conftest import exact_partition_posterior, tv_distance


def small_dataset():
    values = np.array([[0, 0], [0, 0], [0, 1], [1, 1], [1, 1]])
    return make_dataset(values)


def small_prior(cap=3, n=5):
    return calibrate_recursive(CalibrationSpec("geometric", cap=cap, cv=0.25, p=0.5), n)


class TestSimilarityWeights:
    def test_identical_and_discordant_records(self):
        values = np.array([[0, 1, 2, 3, 4], [0, 1, 2, 3, 4], [1, 2, 3, 4, 0]])
        ps = similarity_weights(make_dataset(values), floor=0.1)
        assert math.isclose(ps.weight(0, 1), 5.1)
        assert math.isclose(ps.weight(0, 2), 0.1)

    def test_total_weight(self):
        values = np.array([[0], [0], [1]])
        ps = similarity_weights(make_dataset(values), floor=0.1)
        # pairs: (0,1) share one field, (0,2) and (1,2) share none
        assert math.isclose(ps.total, 1.1 + 0.1 + 0.1)

    def test_every_pair_reachable(self, rng):
        values = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
        ps = similarity_weights(make_dataset(values), floor=0.1)
        seen = {ps.sample(rng) for _ in range(2000)}
        assert seen == {(i, j) for i in range(4) for j in range(i + 1, 4)}


class TestMoves:
    def test_single_record_state_unchanged(self, rng):
        ds = make_dataset(np.array([[0, 1]]), cardinalities=(2, 2))
        prior = BbapParams(cap=2, a=(1.0,), b=(1.0,))
        state = ChainState(ds, prior, LikelihoodConfig(psi_fixed=0.1), rng)
        full_gibbs_scan(state, rng)
        assert state.linkage().assignments == (1,)

    def test_shared_pair_cluster_is_noop(self, rng):
        ds = small_dataset()
        state = ChainState(ds, small_prior(), LikelihoodConfig(psi_fixed=0.05), rng)
        # force records 0,1 together; chaperone pair inside a two-cluster
        state.reallocate_record(0, rng)
        while state.assign[0] != state.assign[1]:
            state.reallocate_record(0, rng)
        before = state.linkage().assignments

        class FixedPair:
            def sample(self, rng):
                return 0, 1

        chaperones_step(state, FixedPair(), rng, inner_sweeps=3)
        assert state.linkage().assignments == before

    def test_bounded_prior_never_violated(self, rng):
        values = np.zeros((8, 2), dtype=int)  # identical records push merging
        ds = make_dataset(values, cardinalities=(2, 2))
        prior = small_prior(cap=2, n=8)
        state = ChainState(ds, prior, LikelihoodConfig(psi_fixed=0.05), rng)
        ps = similarity_weights(ds)
        for _ in range(500):
            if rng.random() < 0.5:
                chaperones_step(state, ps, rng, 3)
            else:
                reallocation_pass(state, rng)
            assert state.max_cluster_size() <= 2

    def test_zero_distortion_concentrates_on_duplicates(self, rng):
        from allelink.priors import log_density_bbap_linkage

        values = np.array([[0, 1, 2, 3], [0, 1, 2, 3], [4, 4, 4, 4]])
        ds = make_dataset(values, cardinalities=(5, 5, 5, 5))
        prior = small_prior(cap=2, n=3)
        psi = np.zeros(4)
        exact = exact_partition_posterior(
            ds.values, ds.freqs, psi, lambda xi: log_density_bbap_linkage(xi, prior)
        )
        # mixed clusters are impossible, duplicates dominate
        assert set(exact) == {(1, 1, 2), (1, 2, 3)}
        assert exact[(1, 1, 2)] > 0.8

        state = ChainState(ds, prior, LikelihoodConfig(psi_fixed=0.0), rng)
        counts = Counter()
        for _ in range(600):
            reallocation_pass(state, rng)
            state.resample_entities(rng)
            counts[state.linkage().assignments] += 1
        empirical = {k: v / 600 for k, v in counts.items()}
        assert set(empirical) <= set(exact)
        assert tv_distance(empirical, exact) < 0.08

    def test_consistency_check_passes_under_stress(self, rng):
        ds = small_dataset()
        state = ChainState(ds, small_prior(), LikelihoodConfig(), rng)
        ps = similarity_weights(ds)
        for step in range(300):
            if rng.random() < 0.7:
                chaperones_step(state, ps, rng, 4)
            else:
                reallocation_pass(state, rng)
            state.resample_entities(rng)
            state.resample_distortion(rng)
            if step % 25 == 0:
                state.consistency_check()


class TestExactPosterior:
    @pytest.mark.parametrize("move_mix", [0.0, 0.9])
    def test_reduced_scale_total_variation(self, move_mix):
        ds = small_dataset()
        prior = small_prior()
        psi = np.array([0.05, 0.05])
        exact = exact_partition_posterior(
            ds.values, ds.freqs, psi,
            lambda xi: __import__("allelink.priors", fromlist=["x"]).log_density_bbap_linkage(xi, prior),
        )
        cfg = SamplerConfig(
            iterations=31_000, burn_in=1_000, chains=1, seed=3,
            move_mix=move_mix, snapshot_stride=1, check_every=10_000,
        )
        trace = run_chain(cfg, ds, prior, LikelihoodConfig(psi_fixed=0.05))
        counts = Counter(xi.assignments for _, _, xi in trace.snapshots)
        total = sum(counts.values())
        empirical = {k: v / total for k, v in counts.items()}
        assert tv_distance(empirical, exact) < 0.08


class TestRunChain:
    def test_trace_shapes_and_burnin(self):
        ds = small_dataset()
        cfg = SamplerConfig(iterations=220, burn_in=100, thin=3, chains=2, seed=0,
                            check_every=100, snapshot_stride=5)
        trace = run_chain(cfg, ds, small_prior(), LikelihoodConfig())
        kept_per_chain = math.ceil((220 - 100) / 3)
        assert len(trace) == 2 * kept_per_chain
        assert min(trace.iters) == 100
        assert set(trace.chain_ids) == {0, 1}
        assert all(len(p) == 2 for p in trace.psi)
        assert trace.fnr is None
        assert len(trace.snapshots) == 2 * math.ceil(kept_per_chain / 5)

    def test_truth_adds_error_rates_consistent_with_pairsets(self):
        from allelink.evaluation import fnr_fdr

        ds = small_dataset()
        truth = LinkageStructure((1, 1, 2, 3, 3))
        cfg = SamplerConfig(iterations=60, burn_in=20, chains=1, seed=4,
                            check_every=50, snapshot_stride=1)
        trace = run_chain(cfg, ds, small_prior(), LikelihoodConfig(), truth)
        assert trace.fnr is not None and len(trace.fnr) == len(trace)
        for chain, it, xi in trace.snapshots:
            fnr, fdr = fnr_fdr(xi, truth)
            row = trace.iters.index(it)
            assert math.isclose(trace.fnr[row], fnr, abs_tol=1e-12)
            assert math.isclose(trace.fdr[row], fdr, abs_tol=1e-12)

    def test_seeded_determinism(self):
        ds = small_dataset()
        cfg = SamplerConfig(iterations=300, burn_in=100, chains=2, seed=11, check_every=100)
        first = run_chain(cfg, ds, small_prior(), LikelihoodConfig())
        second = run_chain(cfg, ds, small_prior(), LikelihoodConfig())
        assert first.log_joint == second.log_joint
        assert first.size_counts == second.size_counts
        assert first.psi == second.psi
        assert [s[2].assignments for s in first.snapshots] == [
            s[2].assignments for s in second.snapshots
        ]

    def test_chains_agree_on_mean_cluster_count(self):
        ds = small_dataset()
        cfg = SamplerConfig(iterations=4_000, burn_in=1_000, chains=2, seed=2, check_every=2000)
        trace = run_chain(cfg, ds, small_prior(), LikelihoodConfig(psi_fixed=0.05))
        ks = np.array(trace.n_clusters, dtype=float)
        chains = np.array(trace.chain_ids)
        k0, k1 = ks[chains == 0], ks[chains == 1]
        pooled_se = math.sqrt(k0.var(ddof=1) / _ess(k0) + k1.var(ddof=1) / _ess(k1))
        assert abs(k0.mean() - k1.mean()) < 4 * pooled_se

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(iterations=100, burn_in=100)
        with pytest.raises(ValueError):
            SamplerConfig(iterations=100, burn_in=-1)
        with pytest.raises(ValueError):
            SamplerConfig(iterations=100, burn_in=0, thin=0)
        with pytest.raises(ValueError):
            SamplerConfig(iterations=100, burn_in=0, move_mix=1.5)

    def test_epp_prior_runs(self):
        ds = small_dataset()
        cfg = SamplerConfig(iterations=200, burn_in=50, chains=1, seed=6, check_every=100)
        trace = run_chain(cfg, ds, EppParams(1.0), LikelihoodConfig())
        assert len(trace) == 150
        # size counts are trimmed to the largest occupied size
        assert all(r[-1] > 0 for r in trace.size_counts)


def _ess(x: np.ndarray) -> float:
    # crude effective sample size from the lag-1 autocorrelation
    if x.var() == 0:
        return len(x)
    rho = np.corrcoef(x[:-1], x[1:])[0, 1]
    rho = min(max(rho, 0.0), 0.999)
    return max(len(x) * (1 - rho) / (1 + rho), 4.0)


class TestTraceIO:
    def test_jsonl_round_trip(self, tmp_path):
        ds = small_dataset()
        truth = LinkageStructure((1, 1, 2, 3, 3))
        cfg = SamplerConfig(iterations=40, burn_in=10, chains=2, seed=1, check_every=50)
        trace = run_chain(cfg, ds, small_prior(), LikelihoodConfig(), truth)
        path = tmp_path / "trace.jsonl"
        write_trace_jsonl(trace, path)
        loaded = read_trace_jsonl(path, n=5)
        assert loaded.iters == trace.iters
        assert loaded.size_counts == trace.size_counts
        assert loaded.log_joint == trace.log_joint
        assert loaded.fnr == trace.fnr

    def test_snapshot_round_trip(self, tmp_path):
        ds = small_dataset()
        cfg = SamplerConfig(iterations=40, burn_in=10, chains=1, seed=1, check_every=50,
                            snapshot_stride=3)
        trace = run_chain(cfg, ds, small_prior(), LikelihoodConfig())
        path = tmp_path / "snaps.csv"
        write_snapshots_csv(trace, path)
        loaded = read_snapshots_csv(path)
        assert [(c, i, xi.assignments) for c, i, xi in loaded] == [
            (c, i, xi.assignments) for c, i, xi in trace.snapshots
        ]

    def test_byte_identical_files_same_seed(self, tmp_path):
        ds = small_dataset()
        cfg = SamplerConfig(iterations=60, burn_in=20, chains=1, seed=9, check_every=50)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_trace_jsonl(run_chain(cfg, ds, small_prior(), LikelihoodConfig()), p1)
        write_trace_jsonl(run_chain(cfg, ds, small_prior(), LikelihoodConfig()), p2)
        assert p1.read_bytes() == p2.read_bytes()
