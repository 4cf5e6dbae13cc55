"""Post-hoc summaries of posterior draws: co-clustering, a point estimate of
the partition by VI-bound minimization, ARI, cluster abundances, and per
sample diversity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import cluster_relative_abundance

__all__ = [
    "canonicalize",
    "coclustering",
    "vi_lower_bound",
    "vi_lower_bound_constant",
    "SalsoResult",
    "salso_search",
    "adjusted_rand_index",
    "ClusterAbundance",
    "posterior_cluster_abundances",
    "diversity",
]


def canonicalize(labels) -> np.ndarray:
    """Relabel to 1..K in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse.ravel()] + 1


def _draw_labels(draws) -> np.ndarray:
    c = draws.c if hasattr(draws, "c") else draws
    return np.atleast_2d(np.asarray(c))


def coclustering(draws) -> np.ndarray:
    """N x N posterior frequency of each pair sharing a component.

    Accepts a :class:`~dsdm3.sampler.PosteriorDraws` or an (M, N) label array.
    """
    c = _draw_labels(draws)
    M, N = c.shape
    if M == 0:
        raise ValueError("no retained draws")
    P = np.zeros((N, N))
    for row in c:
        onehot = (row[:, None] == np.unique(row)[None, :]).astype(float)
        P += onehot @ onehot.T
    return P / M


def _check_pair(p, P):
    p = np.asarray(p)
    P = np.asarray(P, dtype=float)
    if P.shape != (p.size, p.size):
        raise ValueError(f"partition of {p.size} items but co-clustering matrix {P.shape}")
    return p, P


def vi_lower_bound(p, P, include_constant: bool = True) -> float:
    """Jensen lower bound of posterior expected VI (bits) for partition ``p``.

    With ``include_constant=False`` the term that depends on ``P`` alone is
    dropped, which leaves the argmin unchanged.
    """
    p, P = _check_pair(p, P)
    N = p.size
    same = p[:, None] == p[None, :]
    size = same.sum(axis=1)
    mass = np.where(same, P, 0.0).sum(axis=1)
    out = float(np.sum(np.log2(size) - 2.0 * np.log2(mass)) / N)
    if include_constant:
        out += vi_lower_bound_constant(P)
    return out


def vi_lower_bound_constant(P) -> float:
    P = np.asarray(P, dtype=float)
    return float(np.sum(np.log2(P.sum(axis=1))) / P.shape[0])


@njit(cache=True)
def _item_term(size, mass):
    return math.log2(size) - 2.0 * math.log2(mass)


@njit(cache=True)
def _best_block(i, labels, sizes, mass, P, n_blocks, max_blocks, active):
    """Block minimizing the (unnormalized) partial objective for item ``i``,
    which must be unassigned. ``mass[b, m]`` is sum of P[m, m'] over m' in
    block b. Returns (block, delta)."""
    N = labels.shape[0]
    best = -1
    best_delta = np.inf
    for b in range(n_blocks):
        if sizes[b] == 0:
            continue
        # item i joins b: its own term, plus every member's size and mass change
        delta = _item_term(sizes[b] + 1, mass[b, i] + P[i, i])
        for m in range(N):
            if active[m] and labels[m] == b:
                delta += _item_term(sizes[b] + 1, mass[b, m] + P[m, i]) - _item_term(
                    sizes[b], mass[b, m]
                )
        if delta < best_delta - 1e-12:
            best_delta = delta
            best = b
    n_used = 0
    empty = -1
    for b in range(n_blocks):
        if sizes[b] > 0:
            n_used += 1
        elif empty < 0:
            empty = b
    if n_used < max_blocks:
        if empty < 0:
            empty = n_blocks
        delta = _item_term(1, P[i, i])
        if delta < best_delta - 1e-12:
            best_delta = delta
            best = empty
    return best, best_delta


@njit(cache=True)
def _assign(i, b, labels, sizes, mass, P, active):
    labels[i] = b
    sizes[b] += 1
    for m in range(labels.shape[0]):
        mass[b, m] += P[m, i]
    active[i] = True


@njit(cache=True)
def _remove(i, labels, sizes, mass, P, active):
    b = labels[i]
    sizes[b] -= 1
    for m in range(labels.shape[0]):
        mass[b, m] -= P[m, i]
    labels[i] = -1
    active[i] = False
    return b


@njit(cache=True)
def _objective(labels, sizes, mass):
    tot = 0.0
    for m in range(labels.shape[0]):
        b = labels[m]
        tot += _item_term(sizes[b], mass[b, m])
    return tot


@njit(cache=True)
def _best_merge(labels, sizes, mass, n_blocks):
    """Pair of blocks whose merge lowers the objective most; (-1, -1) if none does."""
    N = labels.shape[0]
    best_a, best_b = -1, -1
    best_delta = -1e-12
    for a in range(n_blocks):
        if sizes[a] == 0:
            continue
        for b in range(a + 1, n_blocks):
            if sizes[b] == 0:
                continue
            size = sizes[a] + sizes[b]
            delta = 0.0
            for m in range(N):
                if labels[m] == a or labels[m] == b:
                    own = labels[m]
                    delta += _item_term(size, mass[a, m] + mass[b, m]) - _item_term(sizes[own], mass[own, m])
            if delta < best_delta:
                best_delta = delta
                best_a, best_b = a, b
    return best_a, best_b


@njit(cache=True)
def _sweep_once(P, order, labels, sizes, mass, active, n_blocks, max_blocks):
    changed = False
    for t in range(order.shape[0]):
        i = order[t]
        old = _remove(i, labels, sizes, mass, P, active)
        b, _ = _best_block(i, labels, sizes, mass, P, n_blocks, max_blocks, active)
        if b == n_blocks:
            n_blocks += 1
        _assign(i, b, labels, sizes, mass, P, active)
        if b != old:
            changed = True
    return changed, n_blocks


@njit(cache=True)
def _salso_run(P, order, init_blocks, max_blocks, max_sweeps, trace):
    """Greedy allocation capped at ``init_blocks``, then alternate single-item
    sweeps and pairwise block merges (capped at ``max_blocks``) until neither
    improves the objective."""
    N = P.shape[0]
    cap = min(N, max_blocks) + 1
    labels = np.full(N, -1, dtype=np.int64)
    sizes = np.zeros(cap, dtype=np.int64)
    mass = np.zeros((cap, N))
    active = np.zeros(N, dtype=np.bool_)
    n_blocks = 0
    for t in range(N):
        i = order[t]
        b, _ = _best_block(i, labels, sizes, mass, P, n_blocks, init_blocks, active)
        if b == n_blocks:
            n_blocks += 1
        _assign(i, b, labels, sizes, mass, P, active)
    obj = _objective(labels, sizes, mass)
    trace[0] = obj
    n_steps = 0
    while n_steps < max_sweeps:
        changed, n_blocks = _sweep_once(P, order, labels, sizes, mass, active, n_blocks, max_blocks)
        new_obj = _objective(labels, sizes, mass)
        if not changed or new_obj >= obj - 1e-12:
            a, b = _best_merge(labels, sizes, mass, n_blocks)
            if a < 0:
                obj = min(obj, new_obj)
                break
            for m in range(N):
                if labels[m] == b:
                    _remove(m, labels, sizes, mass, P, active)
                    _assign(m, a, labels, sizes, mass, P, active)
            new_obj = _objective(labels, sizes, mass)
        n_steps += 1
        trace[n_steps] = new_obj
        obj = new_obj
    return labels, n_steps


@dataclass(frozen=True)
class SalsoResult:
    partition: np.ndarray
    objective: float
    run: int
    n_blocks: int

    def __iter__(self):
        return iter((self.partition, self.objective))


def salso_search(
    P,
    runs: int = 16,
    seed: int = 0,
    max_blocks: int | None = None,
    max_sweeps: int = 100,
    return_traces: bool = False,
):
    """Randomized multi-start greedy minimization of the VI lower bound.

    Each run allocates items one at a time in a random order to the block
    (existing or new) that minimizes the bound over the items placed so far.
    The first run allows any number of blocks during this pass; later runs
    draw a random cap, which lets some runs start from coarse partitions.
    Single-item reallocation sweeps and pairwise block merges then alternate
    until neither improves. The best run wins; ties go to the lower run
    index. Blocks are capped at ``max_blocks`` (default N). The reported
    objective includes the constant term.
    """
    P = np.ascontiguousarray(P, dtype=float)
    N = P.shape[0]
    if P.shape != (N, N):
        raise ValueError("co-clustering matrix must be square")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    cap = N if max_blocks is None else max(1, min(int(max_blocks), N))
    streams = np.random.SeedSequence(seed).spawn(runs)
    best = None
    traces = []
    for r, ss in enumerate(streams):
        run_rng = np.random.default_rng(ss)
        order = run_rng.permutation(N)
        init_cap = cap if r == 0 else int(run_rng.integers(1, cap + 1))
        trace = np.full(max_sweeps + 1, np.nan)
        labels, n_sweeps = _salso_run(P, order, init_cap, cap, max_sweeps, trace)
        traces.append(trace[: n_sweeps + 1] / N)
        part = canonicalize(labels)
        obj = vi_lower_bound(part, P)
        if best is None or obj < best.objective - 1e-12:
            best = SalsoResult(part, obj, r, int(part.max()))
    if return_traces:
        return best, traces
    return best


def adjusted_rand_index(p1, p2) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    p1 = np.asarray(p1).ravel()
    p2 = np.asarray(p2).ravel()
    if p1.size != p2.size:
        raise ValueError(f"partitions have different lengths ({p1.size} vs {p2.size})")
    n = p1.size
    if n < 2:
        return 1.0
    _, a = np.unique(p1, return_inverse=True)
    _, b = np.unique(p2, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def comb2(x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(x * (x - 1) / 2))

    index = comb2(table)
    rows = comb2(table.sum(axis=1))
    cols = comb2(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = rows * cols / total
    max_index = 0.5 * (rows + cols)
    if max_index == expected:
        # both partitions trivial in the same way: all one block or all singletons
        return 1.0
    return (index - expected) / (max_index - expected)


@dataclass
class ClusterAbundance:
    cluster: int
    size: int
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple = ()


def _match_components(labels, members_of, weights):
    """Component holding most of each cluster's members in one draw; ties
    go to the heavier component."""
    out = []
    for members in members_of:
        comps, counts = np.unique(labels[members], return_counts=True)
        top = comps[counts == counts.max()]
        out.append(int(top[np.argmax(weights[top])]) if top.size > 1 else int(top[0]))
    return out


def posterior_cluster_abundances(draws, partition, taxon_ids=None, groups=None, level=0.95):
    """Per-cluster relative abundances averaged over draws with central intervals.

    ``groups`` optionally maps taxon id to a coarser group; abundances are then
    summed within groups draw by draw before summarizing.
    """
    if draws.xi is None:
        raise ValueError("draws carry no xi trace; rerun the chain with record_xi=True")
    partition = np.asarray(partition)
    c = draws.c
    if c.shape[1] != partition.size:
        raise ValueError("draws and partition cover different numbers of items")
    J = draws.xi.shape[2]
    names = tuple(taxon_ids) if taxon_ids is not None else tuple(f"T{j + 1}" for j in range(J))
    agg = None
    if groups is not None:
        group_names = tuple(dict.fromkeys(groups[t] for t in names))
        agg = np.zeros((J, len(group_names)))
        for j, t in enumerate(names):
            agg[j, group_names.index(groups[t])] = 1.0
        names = group_names
    clusters = np.unique(partition)
    members_of = [np.flatnonzero(partition == k) for k in clusters]
    M = len(draws)
    samples = np.empty((clusters.size, M, len(names)))
    for m in range(M):
        comps = _match_components(c[m], members_of, np.nan_to_num(draws.weights[m]))
        ra = cluster_relative_abundance(draws.xi[m, comps])
        samples[:, m] = ra if agg is None else ra @ agg
    tail = 100 * (1 - level) / 2
    out = []
    for idx, k in enumerate(clusters):
        s = samples[idx]
        out.append(ClusterAbundance(
            cluster=int(k),
            size=int(members_of[idx].size),
            mean=s.mean(axis=0),
            lower=np.percentile(s, tail, axis=0),
            upper=np.percentile(s, 100 - tail, axis=0),
            names=names,
        ))
    return out


def diversity(z_row) -> tuple[int, float]:
    """Richness and Shannon index (natural log); Shannon is NaN at depth 0."""
    z = np.asarray(z_row, dtype=float)
    richness = int(np.count_nonzero(z > 0))
    n = z.sum()
    if n <= 0:
        return richness, float("nan")
    p = z[z > 0] / n
    return richness, float(max(0.0, -np.sum(p * np.log(p))))
