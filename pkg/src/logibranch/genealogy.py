"""Genealogies and tree shape.

Backward in time, a sample of n individuals from the stationary
Q-process coalesces inside the time-reversed population path: a
down-step of the reversed size chain (a birth, viewed forward) merges
two sampled lineages with probability n(n-1)/(z(z-1)).  Forward in
time, genealogy-logged runs yield reconstructed trees: extant species
are thinned by an exponential detectability delay, extinct branches are
pruned, and the internode durations feed the standard node-depth
statistic (zero-mean under a pure birth process).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import io
from .conditioning import RateTable
from .errors import LogibranchError
from .model import GenealogyLog, ModelParams, simulate_with_genealogy
from .rng import derive, stream

__all__ = [
    "CoalescentState",
    "CoalescentResult",
    "ReconstructedTree",
    "MRCASample",
    "EmptyTreeError",
    "coalescent_step_rates",
    "simulate_coalescent",
    "reconstruct_tree",
    "gamma_statistic",
    "gamma_scan",
    "mrca_experiment",
]


class EmptyTreeError(LogibranchError):
    """No detectable tips at the sampling time."""


@dataclass(frozen=True)
class CoalescentState:
    """(population size, ancestral lineage count), with n <= z."""

    z: int
    n: int

    def __post_init__(self):
        if not 1 <= self.n <= self.z:
            raise ValueError(f"need 1 <= n <= z, got n={self.n}, z={self.z}")


def coalescent_step_rates(st: CoalescentState, table: RateTable):
    """Backward transitions of the joint (size, lineage-count) chain.

    Returns a list of ((z', n'), rate).  A down-step of the reversed
    size chain coalesces a pair of sampled lineages with probability
    n(n-1)/(z(z-1)); an up-step never touches the sample's ancestry.
    At z = 1 only the up-move exists, and at the table cap z = K only
    the down-move does.
    """
    z, n = st.z, st.n
    out = []
    if z > 1:
        down = table.down_rate(z)
        frac = n * (n - 1) / (z * (z - 1))
        if frac < 1.0:
            out.append((CoalescentState(z - 1, n), (1.0 - frac) * down))
        if frac > 0.0:
            out.append((CoalescentState(z - 1, n - 1), frac * down))
    if z < table.K:
        out.append((CoalescentState(z + 1, n), table.up_rate(z)))
    return out


@dataclass
class CoalescentResult:
    tmrca: float
    durations: np.ndarray        # index j <-> time with (j+2) lineages
    path: list                   # (backward time, z, n) after each jump

    def duration_with(self, k: int) -> float:
        return float(self.durations[k - 2])


def simulate_coalescent(z0: int, n0: int, table: RateTable, seed: int) -> CoalescentResult:
    """Run the joint chain backward from (z0, n0) until one lineage is left.

    Records the time spent at each lineage count; those durations are
    the internode distances of the sample's reconstructed tree, and
    their total is the time to the most recent common ancestor.
    """
    st = CoalescentState(z0, n0)
    rng = stream(seed)
    durations = np.zeros(max(n0 - 1, 0))
    t = 0.0
    path = [(0.0, st.z, st.n)]
    while st.n > 1:
        moves = coalescent_step_rates(st, table)
        rates = np.array([r for _, r in moves])
        total = rates.sum()
        dt = rng.exponential(1.0 / total)
        durations[st.n - 2] += dt
        t += dt
        st = moves[int(rng.choice(len(moves), p=rates / total))][0]
        path.append((t, st.z, st.n))
    return CoalescentResult(t, durations, path)


# ---------------------------------------------------------------------------
# Reconstructed trees from forward genealogies
# ---------------------------------------------------------------------------

@dataclass
class ReconstructedTree:
    """Ultrametric tree of the sampled (detectable, extant) individuals.

    ``merge_times`` are the forward times of the n-1 internal nodes,
    ascending; ``topology`` is nested tuples ``(left, right, time)``
    with tip ids at the leaves.
    """

    tips: np.ndarray
    sample_time: float
    merge_times: np.ndarray
    topology: object

    @property
    def n(self) -> int:
        return len(self.tips)

    def internode_durations(self) -> np.ndarray:
        """g_k for k = 2..n: time during which the tree has k lineages."""
        if self.n < 2:
            return np.zeros(0)
        times = np.sort(self.merge_times)
        return np.diff(np.concatenate([times, [self.sample_time]]))

    def span(self) -> float:
        return float(self.sample_time - self.merge_times.min()) if self.n >= 2 else 0.0

    def to_newick(self) -> str:
        """Newick text; branch lengths are time spans, tips end at the
        sampling time (ultrametric)."""

        def render(node, parent_time):
            if isinstance(node, tuple):
                left, right, t = node
                return f"({render(left, t)},{render(right, t)}):{io.fmt(t - parent_time)}"
            return f"t{node}:{io.fmt(self.sample_time - parent_time)}"

        if isinstance(self.topology, tuple):
            left, right, t = self.topology
            return f"({render(left, t)},{render(right, t)});"
        return f"t{self.topology};"


def _detectable(log: GenealogyLog, sample_time, lam, rng):
    alive = log.alive_at(sample_time)
    if lam == math.inf:
        return alive
    delays = rng.standard_exponential(len(log)) / lam
    age = sample_time - log.birth[alive]
    return alive[age > delays[alive]]


def reconstruct_tree(log: GenealogyLog, sample_time: float, lam: float, seed: int) -> ReconstructedTree:
    """Reconstructed phylogeny of the detectable survivors.

    A species born at time u is detectable at the sampling time when its
    age exceeds an independent Exp(lam) delay drawn at birth (lam = inf
    means instant detectability).  Lineages without sampled descendants
    are pruned.  Raises :class:`EmptyTreeError` when no tip qualifies,
    or when the sampled tips do not share a common ancestor in the log
    (several founders).
    """
    if len(log.alive_at(sample_time)) == 0:
        raise EmptyTreeError("no individuals alive at the sampling time")
    rng = stream(seed)
    tips = _detectable(log, sample_time, lam, rng)
    if len(tips) == 0:
        raise EmptyTreeError("no detectable tips at the sampling time")
    merge_times, topology = _prune(log, tips, sample_time)
    if merge_times is None:
        raise EmptyTreeError("sampled tips descend from more than one founder")
    return ReconstructedTree(tips, sample_time, np.asarray(merge_times), topology)


def _prune(log: GenealogyLog, tips, sample_time):
    """Merge times and topology of the tips' ancestry, bottom-up.

    Each individual's sampled descendants enter it along its children
    (at their birth times) and, if it is itself a tip, from the present.
    Going backward, every arrival after the first merges with the
    resident cluster, contributing one internal node at the arrival
    time.  The surviving cluster then enters the parent at the
    individual's own birth time.
    """
    tipset = set(int(i) for i in tips)
    order = np.argsort(log.birth)[::-1]           # children before parents
    entries: dict[int, list] = {}                 # id -> [(entry time, cluster)]
    for i in tips:
        entries.setdefault(int(i), []).append((sample_time, int(i)))
    merge_times = []
    roots = []
    for raw in order:
        i = int(raw)
        arr = entries.pop(i, None)
        if arr is None:
            continue
        arr.sort(key=lambda e: -e[0])
        resident = arr[0][1]
        for when, cluster in arr[1:]:
            merge_times.append(when)
            resident = (resident, cluster, when)
        par = int(log.parent[i])
        if par < 0:
            roots.append(resident)
        else:
            entries.setdefault(par, []).append((float(log.birth[i]), resident))
    if len(roots) != 1:
        return None, None
    return merge_times, roots[0]


def gamma_statistic(g) -> float:
    """Node-depth statistic of internode durations g_2..g_n.

    Positive values mean nodes crowd toward the tips, negative toward
    the root; a pure birth process gives mean zero.  Needs n >= 3.
    """
    g = np.asarray(g, dtype=float)
    n = len(g) + 1
    if n < 3:
        raise ValueError(f"need at least 3 tips (n - 1 >= 2 durations), got n={n}")
    ks = np.arange(2, n + 1)
    kg = ks * g
    total = kg.sum()
    inner = np.cumsum(kg)[:-1].sum() / (n - 2)    # mean of T_2..T_{n-1}
    return float((inner - 0.5 * total) / (total * math.sqrt(1.0 / (12.0 * (n - 2)))))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _surviving_genealogy(p, z0, sample_time, seed, rep, max_tries=20000):
    for attempt in range(max_tries):
        traj, log = simulate_with_genealogy(
            p, z0, sample_time * (1 + 1e-12), seed=derive(seed, rep, attempt)
        )
        if not traj.absorbed:
            return traj, log, attempt + 1
    raise LogibranchError(f"no surviving run in {max_tries} attempts")


def _map_replicates(fn, replicates, threads):
    """Apply fn to each replicate index, optionally on a thread pool.

    Replicate seeds are derived from the index alone, so the result is
    identical for any thread count; results come back in index order.
    """
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(replicates)))
    return [fn(rep) for rep in range(replicates)]


def gamma_scan(
    p: ModelParams, lambda_grid, sample_time, replicates, seed=0, z0=None,
    threads=None,
) -> list[dict]:
    """Mean node-depth statistic per detectability rate.

    One genealogy per replicate (conditioned on survival by rejection,
    started from the quasi-equilibrium size) is thinned at every lambda
    in the grid with common detection draws.  Replicates yielding fewer
    than 3 tips or no common ancestor are skipped and counted.
    """
    if z0 is None:
        z0 = max(int(math.ceil((p.b - p.d) / p.c)), 1) if p.c > 0 else 1
    lambda_grid = list(lambda_grid)

    def one(rep):
        _, log, _ = _surviving_genealogy(p, z0, sample_time, seed, rep)
        vals = {}
        for lam in lambda_grid:
            try:
                tree = reconstruct_tree(log, sample_time, lam, seed=derive(seed, rep))
            except EmptyTreeError:
                vals[lam] = None
                continue
            vals[lam] = (
                gamma_statistic(tree.internode_durations()) if tree.n >= 3 else None
            )
        return vals

    per_lambda: dict[float, list] = {lam: [] for lam in lambda_grid}
    skipped = {lam: 0 for lam in lambda_grid}
    for vals in _map_replicates(one, replicates, threads):
        for lam in lambda_grid:
            if vals[lam] is None:
                skipped[lam] += 1
            else:
                per_lambda[lam].append(vals[lam])
    rows = []
    for lam in lambda_grid:
        vals = np.asarray(per_lambda[lam])
        rows.append(
            {
                "lambda": lam,
                "mean_gamma": float(vals.mean()) if vals.size else math.nan,
                "se": float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan,
                "n_used": int(vals.size),
                "n_skipped": skipped[lam],
            }
        )
    return rows


@dataclass
class MRCASample:
    """Population size now vs just before the whole-population MRCA."""

    z_present: int
    z_before_mrca: int
    mrca_depth: float
    degenerate: bool = False


def mrca_experiment(
    p: ModelParams, sample_time, replicates, seed=0, z0=None, threads=None,
) -> list[MRCASample]:
    """Whole-population MRCA depth and the sizes around it.

    Runs are conditioned on survival by rejection.  The size before the
    MRCA is read immediately before the MRCA node's branching event.  A
    single extant individual is its own ancestor: depth 0, flagged
    degenerate, size-before reported as the present size.
    """
    if z0 is None:
        z0 = max(int(math.ceil((p.b - p.d) / p.c)), 1) if p.c > 0 else 1

    def one(rep):
        traj, log, _ = _surviving_genealogy(p, z0, sample_time, seed, rep)
        extant = log.alive_at(sample_time)
        z_now = len(extant)
        if z_now == 1:
            return MRCASample(1, 1, 0.0, degenerate=True)
        merge_times, _ = _prune(log, extant, sample_time)
        if merge_times is None:
            # several founders still represented; no common ancestor yet
            return None
        t_root = min(merge_times)
        idx = int(np.searchsorted(traj.times, t_root, side="left")) - 1
        z_before = int(traj.states[max(idx, 0)])
        return MRCASample(z_now, z_before, float(sample_time - t_root))

    return [s for s in _map_replicates(one, replicates, threads) if s is not None]


def gamma_rows_to_csv(rows, path):
    io.write_csv(
        path,
        ["lambda", "mean_gamma", "se", "n_used", "n_skipped"],
        [(r["lambda"], r["mean_gamma"], r["se"], r["n_used"], r["n_skipped"]) for r in rows],
    )


def mrca_samples_to_csv(samples, path):
    io.write_csv(
        path,
        ["z_present", "z_before_mrca", "mrca_depth"],
        [(s.z_present, s.z_before_mrca, s.mrca_depth) for s in samples],
    )
