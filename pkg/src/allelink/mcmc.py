"""Posterior simulation over linkage, latent entities, and distortion.

One iteration is a composite sweep: a linkage move (either a restricted
chaperone move or a full reallocation pass over every record), followed by
conjugate updates of the entity attributes and, unless pinned, the
distortion probabilities.  Chaperone pairs are drawn from a data-only
similarity distribution fixed before sampling, so the restricted updates
are plain Gibbs steps and need no acceptance correction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import likelihood as lik
from . import priors
from .likelihood import Dataset, DistortionState, LikelihoodConfig
from .partitions import LinkageStructure, canonicalize
from .priors import BbapParams, PriorParams

NEG_INF = float("-inf")
_NEW = -1


@dataclass(frozen=True)
class SamplerConfig:
    """Sweep counts, move mixture, and bookkeeping strides for one run.

    iterations is the total sweep count including burn-in; move_mix is the
    fraction of sweeps using the restricted chaperone move instead of a
    full reallocation pass.
    """

    iterations: int
    burn_in: int
    thin: int = 1
    chains: int = 2
    seed: int = 0
    move_mix: float = 0.9
    chaperone_floor: float = 0.1
    inner_sweeps: int = 5
    snapshot_stride: int = 10
    check_every: int = 1000

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if not 0.0 <= self.move_mix <= 1.0:
            raise ValueError("move_mix must lie in [0, 1]")
        if self.chaperone_floor < 0:
            raise ValueError("chaperone_floor must be non-negative")
        if self.inner_sweeps < 1:
            raise ValueError("inner_sweeps must be at least 1")
        if self.snapshot_stride < 1 or self.check_every < 1:
            raise ValueError("strides must be at least 1")


@dataclass
class PosteriorTrace:
    """Per-kept-iteration summaries plus strided full linkage snapshots."""

    n: int
    iters: list[int] = field(default_factory=list)
    chain_ids: list[int] = field(default_factory=list)
    n_clusters: list[int] = field(default_factory=list)
    size_counts: list[tuple[int, ...]] = field(default_factory=list)
    psi: list[tuple[float, ...]] = field(default_factory=list)
    log_joint: list[float] = field(default_factory=list)
    fnr: list[float] | None = None
    fdr: list[float] | None = None
    snapshots: list[tuple[int, int, LinkageStructure]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iters)


class PairSampler:
    """Chaperone-pair proposal weighted by field agreement; data-only.

    weight(i, j) = floor + number of agreeing fields, so similar records
    are proposed often while every pair keeps positive probability
    whenever the floor is positive.
    """

    def __init__(self, dataset: Dataset, floor: float = 0.1):
        n = dataset.n
        if n < 2:
            raise ValueError("need at least two records to pick pairs")
        agree = np.zeros((n, n), dtype=np.int64)
        for f in range(dataset.n_fields):
            col = dataset.values[:, f]
            agree += col[:, None] == col[None, :]
        self.rows, self.cols = np.triu_indices(n, k=1)
        weights = floor + agree[self.rows, self.cols]
        self._cum = np.cumsum(weights)
        self.total = float(self._cum[-1])

    def weight(self, i: int, j: int) -> float:
        idx = np.flatnonzero((self.rows == min(i, j)) & (self.cols == max(i, j)))[0]
        prev = self._cum[idx - 1] if idx > 0 else 0.0
        return float(self._cum[idx] - prev)

    def sample(self, rng: np.random.Generator) -> tuple[int, int]:
        u = rng.random() * self.total
        idx = int(np.searchsorted(self._cum, u, side="right"))
        idx = min(idx, len(self.rows) - 1)
        return int(self.rows[idx]), int(self.cols[idx])


def similarity_weights(dataset: Dataset, floor: float = 0.1) -> PairSampler:
    """Build the pair-selection distribution for the chaperone move."""
    return PairSampler(dataset, floor)


class ChainState:
    """Mutable sampler state for a single chain; owned by that chain only.

    Internally clusters carry arbitrary contiguous 0-based ids with
    swap-with-last compaction; canonical labels are produced only when a
    linkage snapshot is taken.
    """

    def __init__(
        self,
        dataset: Dataset,
        prior: PriorParams,
        like_config: LikelihoodConfig,
        rng: np.random.Generator,
    ):
        self.dataset = dataset
        self.prior = prior
        n, n_fields = dataset.n, dataset.n_fields
        self.cap = prior.cap if isinstance(prior, BbapParams) else n
        self.freqs = dataset.freqs
        self._log_freqs = dataset.log_freqs()

        self.assign = np.arange(n, dtype=np.int64)
        self.members: list[list[int]] = [[i] for i in range(n)]
        self.sizes = np.zeros(n, dtype=np.int64)
        self.sizes[:] = 1
        self.n_clusters = n
        self.size_counts = np.zeros(self.cap + 2, dtype=np.int64)
        self.size_counts[1] = n

        fixed = like_config.fixed_psi(n_fields)
        prior_a, prior_b = (
            like_config.prior_shapes(n_fields)
            if fixed is None
            else (np.ones(n_fields), np.ones(n_fields))
        )
        psi0 = fixed if fixed is not None else prior_a / (prior_a + prior_b)
        self.psi_fixed = fixed is not None
        self.distortion = DistortionState(np.array(psi0, dtype=float), prior_a, prior_b)

        self.entities = np.empty((n, n_fields), dtype=np.int64)
        for i in range(n):
            self.entities[i] = lik.draw_singleton_entity(
                dataset.values[i], self.distortion.psi, self.freqs, rng
            )
        self._factor_cache: dict[bytes, tuple[np.ndarray, float]] = {}

    # -- bookkeeping ---------------------------------------------------

    @property
    def n(self) -> int:
        return self.dataset.n

    def linkage(self) -> LinkageStructure:
        return canonicalize(self.assign)

    def max_cluster_size(self) -> int:
        return int(self.sizes[: self.n_clusters].max()) if self.n_clusters else 0

    def _remove_record(self, i: int) -> None:
        k = int(self.assign[i])
        s = int(self.sizes[k])
        self.size_counts[s] -= 1
        self.members[k].remove(i)
        self.sizes[k] = s - 1
        self.assign[i] = -1
        if s > 1:
            self.size_counts[s - 1] += 1
            return
        # cluster vanished: move the last cluster into its slot
        last = self.n_clusters - 1
        if k != last:
            for j in self.members[last]:
                self.assign[j] = k
            self.members[k] = self.members[last]
            self.sizes[k] = self.sizes[last]
            self.entities[k] = self.entities[last]
        self.members[last] = []
        self.sizes[last] = 0
        self.n_clusters = last

    def _insert_record(self, i: int, target: int, rng: np.random.Generator) -> None:
        if target == _NEW:
            target = self.n_clusters
            self.members[target] = [i]
            self.sizes[target] = 1
            self.size_counts[1] += 1
            self.entities[target] = lik.draw_singleton_entity(
                self.dataset.values[i], self.distortion.psi, self.freqs, rng
            )
            self.n_clusters += 1
        else:
            s = int(self.sizes[target])
            self.members[target].append(i)
            self.sizes[target] = s + 1
            self.size_counts[s] -= 1
            self.size_counts[s + 1] += 1
        self.assign[i] = target

    def _prior_factors(self) -> tuple[np.ndarray, float]:
        key = self.size_counts.tobytes()
        hit = self._factor_cache.get(key)
        if hit is None:
            hit = priors._realloc_log_factors(self.size_counts, int(self.n - 1), self.prior)
            if len(self._factor_cache) > 100_000:
                self._factor_cache.clear()
            self._factor_cache[key] = hit
        return hit

    # -- moves -----------------------------------------------------------

    def reallocate_record(self, i: int, rng: np.random.Generator) -> None:
        """One collapsed Gibbs update of a single record's assignment."""
        self._remove_record(i)
        x = self.dataset.values[i]
        join, new = self._prior_factors()
        k = self.n_clusters
        logw = np.empty(k + 1)
        if k:
            logw[:k] = join[self.sizes[:k]] + lik.entity_logliks(
                x, self.entities[:k], self.distortion.psi, self.freqs
            )
        logw[k] = new + lik.new_cluster_marginal_loglik(x, self.freqs)
        choice = _sample_from_logw(logw, rng, new_index=k)
        self._insert_record(i, _NEW if choice == k else choice, rng)

    def restricted_reallocate(
        self, i: int, anchors: tuple[int, int], rng: np.random.Generator
    ) -> None:
        """Gibbs update of one record restricted to the anchors' clusters.

        The record must currently sit in one of the two clusters, so the
        update is an exact conditional draw over a support determined by
        the rest of the state; keeping restricted records with an anchor
        is what conserves the restricted set and makes the move leave the
        posterior invariant.
        """
        self._remove_record(i)
        ca = int(self.assign[anchors[0]])
        cb = int(self.assign[anchors[1]])
        targets = [ca] if ca == cb else [ca, cb]
        x = self.dataset.values[i]
        join, _ = self._prior_factors()
        logw = np.empty(len(targets))
        for t, k in enumerate(targets):
            prior_w = join[self.sizes[k]] if self.sizes[k] < len(join) else NEG_INF
            if prior_w == NEG_INF:
                logw[t] = NEG_INF
            else:
                logw[t] = prior_w + lik.record_loglik(
                    x, self.entities[k], self.distortion.psi, self.freqs
                )
        if logw.max() == NEG_INF:
            # rejoining the record's own cluster always has positive density
            raise RuntimeError("restricted move found no admissible target")
        choice = _sample_from_logw(logw, rng, new_index=0)
        self._insert_record(i, targets[choice], rng)

    def resample_entities(self, rng: np.random.Generator) -> None:
        self.entities[: self.n_clusters] = lik.resample_entities(
            self.dataset.values,
            self.assign,
            self.n_clusters,
            self.distortion.psi,
            self.freqs,
            rng,
        )

    def resample_distortion(self, rng: np.random.Generator) -> None:
        if self.psi_fixed:
            return
        entity_rows = self.entities[self.assign]
        self.distortion = lik.resample_distortion(
            self.dataset.values, entity_rows, self.freqs, self.distortion, rng
        )

    # -- densities & checks ----------------------------------------------

    def log_joint(self) -> float:
        """Joint log density of the current state from the maintained caches."""
        n = self.n
        k = self.n_clusters
        out = priors.log_allelic_counts(self.size_counts, n, self.prior)
        out -= math.lgamma(n + 1)
        for s in range(1, self.cap + 1):
            c = int(self.size_counts[s])
            if c:
                out += c * math.lgamma(s + 1) + math.lgamma(c + 1)
        entity_rows = self.entities[self.assign]
        psi = self.distortion.psi
        for f in range(self.dataset.n_fields):
            out += float(self._log_freqs[f][self.entities[:k, f]].sum())
            p = psi[f] * self.freqs[f][self.dataset.values[:, f]]
            p = p + (1.0 - psi[f]) * (self.dataset.values[:, f] == entity_rows[:, f])
            with np.errstate(divide="ignore"):
                out += float(np.log(p).sum())
        if not self.psi_fixed:
            a, b = self.distortion.prior_a, self.distortion.prior_b
            log_beta_norm = np.array(
                [math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y) for x, y in zip(a, b)]
            )
            out += float(
                np.sum((a - 1) * np.log(psi) + (b - 1) * np.log1p(-psi) - log_beta_norm)
            )
        return out

    def consistency_check(self) -> None:
        """Rebuild the caches from the assignment vector and compare densities."""
        rebuilt_sizes = np.bincount(self.assign, minlength=self.n_clusters)
        if len(rebuilt_sizes) != self.n_clusters or np.any(rebuilt_sizes == 0):
            raise RuntimeError("cluster bookkeeping out of sync with assignments")
        if not np.array_equal(rebuilt_sizes, self.sizes[: self.n_clusters]):
            raise RuntimeError("cluster sizes out of sync with assignments")
        rebuilt_counts = np.zeros_like(self.size_counts)
        for s in rebuilt_sizes:
            rebuilt_counts[s] += 1
        if not np.array_equal(rebuilt_counts, self.size_counts):
            raise RuntimeError("size counts out of sync with assignments")
        for k in range(self.n_clusters):
            if sorted(self.members[k]) != list(np.flatnonzero(self.assign == k)):
                raise RuntimeError("membership lists out of sync with assignments")
        tracked = self.log_joint()
        saved = (self.sizes.copy(), self.size_counts.copy())
        self.sizes[: self.n_clusters] = rebuilt_sizes
        self.size_counts[:] = rebuilt_counts
        fresh = self.log_joint()
        self.sizes, self.size_counts = saved
        if not math.isclose(tracked, fresh, rel_tol=0.0, abs_tol=1e-6):
            raise RuntimeError(f"log joint drift: tracked {tracked} vs fresh {fresh}")


def _sample_from_logw(logw: np.ndarray, rng: np.random.Generator, new_index: int) -> int:
    top = logw.max()
    if top == NEG_INF:
        return new_index
    w = np.exp(logw - top)
    cum = np.cumsum(w)
    u = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, u, side="right")), len(logw) - 1)


# ---------------------------------------------------------------------------
# moves


def reallocation_pass(state: ChainState, rng: np.random.Generator) -> None:
    """Reallocate every record once, in index order."""
    for i in range(state.n):
        state.reallocate_record(i, rng)


def full_gibbs_scan(state: ChainState, rng: np.random.Generator) -> None:
    """Full composite sweep: reallocation pass plus both conjugate updates."""
    reallocation_pass(state, rng)
    state.resample_entities(rng)
    state.resample_distortion(rng)


def chaperones_step(
    state: ChainState,
    pair_sampler: PairSampler,
    rng: np.random.Generator,
    inner_sweeps: int = 5,
) -> None:
    """Restricted Gibbs passes over the clusters of one similarity-chosen pair.

    The two chaperone records never move; every other member of their
    clusters is reallocated between the chaperones' current clusters.
    Pair selection depends on the data only and restricted records always
    stay with a chaperone, so each update is an exact conditional draw and
    the move leaves the posterior invariant without a correction.  A
    record sheds its clustermates (and singletons form) when it later
    serves as a chaperone itself; full reallocation passes in the move mix
    cover every remaining transition.
    """
    i, j = pair_sampler.sample(rng)
    ci, cj = int(state.assign[i]), int(state.assign[j])
    if ci == cj:
        # a single shared cluster admits no restricted move
        return
    restricted = [u for u in state.members[ci] + state.members[cj] if u != i and u != j]
    if not restricted:
        return
    for _ in range(inner_sweeps):
        for u in restricted:
            state.restricted_reallocate(u, (i, j), rng)


# ---------------------------------------------------------------------------
# chain driver


def _pair_error_rates(
    assign: np.ndarray, sizes: np.ndarray, k: int, truth: LinkageStructure
) -> tuple[float, float]:
    """Pairwise miss and false-discovery rates against a reference partition."""
    joint: dict[tuple[int, int], int] = {}
    t_assign = truth.assignments
    for i in range(len(t_assign)):
        key = (int(assign[i]), t_assign[i])
        joint[key] = joint.get(key, 0) + 1
    tp = sum(m * (m - 1) // 2 for m in joint.values())
    declared = int(sum(int(s) * (int(s) - 1) // 2 for s in sizes[:k]))
    true_pairs = sum(s * (s - 1) // 2 for s in truth.cluster_sizes())
    fnr = (true_pairs - tp) / true_pairs if true_pairs else 0.0
    fdr = (declared - tp) / declared if declared else 0.0
    return fnr, fdr


def run_chain(
    config: SamplerConfig,
    dataset: Dataset,
    prior: PriorParams,
    like_config: LikelihoodConfig | None = None,
    truth: LinkageStructure | None = None,
) -> PosteriorTrace:
    """Run all configured chains and collect one merged trace.

    Each chain starts from all singletons with entities drawn from their
    singleton conditionals and distortion at its prior mean (or pinned
    value), and owns an independent generator spawned from the seed.
    Deterministic given the config and dataset.
    """
    like_config = like_config or LikelihoodConfig()
    if truth is not None and truth.n != dataset.n:
        raise ValueError("truth length does not match the dataset")
    bounded = isinstance(prior, BbapParams)
    if bounded and prior.cap < 2:
        raise ValueError("prior cap too small")
    pair_sampler = (
        similarity_weights(dataset, config.chaperone_floor) if dataset.n >= 2 else None
    )
    trace = PosteriorTrace(n=dataset.n)
    if truth is not None:
        trace.fnr = []
        trace.fdr = []
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    for chain_id in range(config.chains):
        rng = np.random.default_rng(seeds[chain_id])
        state = ChainState(dataset, prior, like_config, rng)
        kept = 0
        for it in range(config.iterations):
            if pair_sampler is not None and rng.random() < config.move_mix:
                chaperones_step(state, pair_sampler, rng, config.inner_sweeps)
            else:
                reallocation_pass(state, rng)
            state.resample_entities(rng)
            state.resample_distortion(rng)
            if (it + 1) % config.check_every == 0:
                state.consistency_check()
            if it < config.burn_in or (it - config.burn_in) % config.thin != 0:
                continue
            if bounded and state.max_cluster_size() > prior.cap:
                raise RuntimeError("bounded prior violated: cluster exceeds the cap")
            counts = state.size_counts[1 : state.cap + 1]
            if not bounded:
                last = int(np.max(np.nonzero(counts)[0])) + 1 if counts.any() else 1
                counts = counts[:last]
            trace.iters.append(it)
            trace.chain_ids.append(chain_id)
            trace.n_clusters.append(int(state.n_clusters))
            trace.size_counts.append(tuple(int(c) for c in counts))
            trace.psi.append(tuple(float(p) for p in state.distortion.psi))
            trace.log_joint.append(state.log_joint())
            if truth is not None:
                fnr, fdr = _pair_error_rates(
                    state.assign, state.sizes, state.n_clusters, truth
                )
                trace.fnr.append(fnr)
                trace.fdr.append(fdr)
            if kept % config.snapshot_stride == 0:
                trace.snapshots.append((chain_id, it, state.linkage()))
            kept += 1
    return trace


# ---------------------------------------------------------------------------
# trace serialization


def write_trace_jsonl(trace: PosteriorTrace, path) -> None:
    """One JSON object per kept iteration; keys stable for byte determinism."""
    with open(path, "w") as fh:
        for idx in range(len(trace)):
            row = {
                "iter": trace.iters[idx],
                "chain": trace.chain_ids[idx],
                "K": trace.n_clusters[idx],
                "r": list(trace.size_counts[idx]),
                "psi": list(trace.psi[idx]),
                "logJoint": trace.log_joint[idx],
            }
            if trace.fnr is not None:
                row["fnr"] = trace.fnr[idx]
                row["fdr"] = trace.fdr[idx]
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_trace_jsonl(path, n: int = 0) -> PosteriorTrace:
    trace = PosteriorTrace(n=n)
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            trace.iters.append(row["iter"])
            trace.chain_ids.append(row["chain"])
            trace.n_clusters.append(row["K"])
            trace.size_counts.append(tuple(row["r"]))
            trace.psi.append(tuple(row["psi"]))
            trace.log_joint.append(row["logJoint"])
            if "fnr" in row:
                if trace.fnr is None:
                    trace.fnr = []
                    trace.fdr = []
                trace.fnr.append(row["fnr"])
                trace.fdr.append(row["fdr"])
    return trace


def write_snapshots_csv(trace: PosteriorTrace, path) -> None:
    """Integer rows: chain, iteration, then the canonical assignment vector."""
    with open(path, "w") as fh:
        for chain_id, it, xi in trace.snapshots:
            fh.write(",".join(map(str, (chain_id, it) + xi.assignments)) + "\n")


def read_snapshots_csv(path) -> list[tuple[int, int, LinkageStructure]]:
    out = []
    with open(path) as fh:
        for line in fh:
            parts = [int(v) for v in line.strip().split(",")]
            out.append((parts[0], parts[1], LinkageStructure(tuple(parts[2:]))))
    return out
