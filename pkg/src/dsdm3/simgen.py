"""Synthetic zero-inflated compositional count data.

Each sample's reads are split between a block of noise taxa, whose
composition law is shared by every cluster, and the signal block belonging
to the sample's cluster. Compositions are drawn per sample from symmetric
Dirichlet(1) laws, so each block is Dirichlet-multinomial. Structural zeros
are imposed before the multinomial draw by removing taxa from the
composition, which leaves the reads to redistribute among at-risk taxa.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import CountMatrix
from .newick import Node, PhyloTree

__all__ = [
    "ScenarioSpec",
    "SCENARIOS",
    "TARGET_ZERO_FRACTION",
    "scenario",
    "signal_blocks",
    "generate_scenario",
    "generate_dtm",
    "calibrate_at_risk",
    "CalibrationError",
]

MAX_RETRIES = 100
NOISE_CONCENTRATION = 1.0
SIGNAL_CONCENTRATION = 1.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    K: int
    N_per_cluster: tuple
    J_noise: int
    J_signal: int
    depth_noise: int = 4000
    depth_signal: int = 1000
    at_risk_prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "N_per_cluster", tuple(int(n) for n in self.N_per_cluster))
        if self.K < 1 or len(self.N_per_cluster) != self.K:
            raise ValueError("N_per_cluster needs one entry per cluster")
        if min(self.N_per_cluster) < 1:
            raise ValueError("every cluster needs at least one sample")
        if self.J_noise < 0 or self.J_signal < 0 or self.J_noise + self.J_signal < 2:
            raise ValueError("need J_noise, J_signal >= 0 and at least two taxa")
        if self.J_signal and self.J_signal < self.K:
            raise ValueError(f"J_signal={self.J_signal} cannot give each of {self.K} clusters a block")
        if self.depth_noise < 0 or self.depth_signal < 0:
            raise ValueError("depths must be nonnegative")
        if self.J_noise == 0 and self.depth_noise > 0:
            raise ValueError("depth_noise > 0 needs noise taxa")
        if self.J_signal == 0 and self.depth_signal > 0:
            raise ValueError("depth_signal > 0 needs signal taxa")
        if not 0.0 < self.at_risk_prob <= 1.0:
            raise ValueError("at_risk_prob must lie in (0, 1]")

    @property
    def N(self) -> int:
        return sum(self.N_per_cluster)

    @property
    def J(self) -> int:
        return self.J_noise + self.J_signal


# at_risk_prob values come from calibrate_at_risk(scenario(n, seed=12345), target)
# against the zero proportions 0.28, 0.51, 0.73, 0.54, 0.50.
SCENARIOS = {
    1: ScenarioSpec(2, (50, 50), 80, 20, at_risk_prob=0.807),
    2: ScenarioSpec(2, (50, 50), 80, 20, at_risk_prob=0.5547),
    3: ScenarioSpec(2, (50, 50), 80, 20, at_risk_prob=0.3023),
    4: ScenarioSpec(2, (50, 50), 200, 50, at_risk_prob=0.525),
    5: ScenarioSpec(6, (30, 30, 20, 20, 25, 25), 80, 20, at_risk_prob=0.6141),
}

TARGET_ZERO_FRACTION = {1: 0.28, 2: 0.51, 3: 0.73, 4: 0.54, 5: 0.50}


def scenario(number: int, seed: int = 0, **overrides) -> ScenarioSpec:
    if number not in SCENARIOS:
        raise ValueError(f"unknown scenario {number}; choose from {sorted(SCENARIOS)}")
    return replace(SCENARIOS[number], seed=seed, **overrides)


def signal_blocks(J_signal: int, K: int) -> list[np.ndarray]:
    """Column offsets (within the signal block) owned by each cluster."""
    base, extra = divmod(J_signal, K)
    sizes = [base + (k < extra) for k in range(K)]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [np.arange(edges[k], edges[k + 1]) for k in range(K)]


def _draw_block(rng, depth, conc, at_risk):
    """Multinomial reads over the at-risk members of one block."""
    out = np.zeros(conc.shape[0], dtype=np.int64)
    idx = np.flatnonzero(at_risk)
    if depth == 0 or idx.size == 0:
        return out
    p = rng.dirichlet(conc[idx])
    out[idx] = rng.multinomial(depth, p)
    return out


def _at_risk_mask(rng, J, prob, needed):
    """Bernoulli at-risk draws, redrawn until some taxon in ``needed`` survives."""
    for _ in range(MAX_RETRIES):
        mask = rng.random(J) < prob
        if mask[needed].any():
            return mask
    raise RuntimeError(f"no at-risk taxa after {MAX_RETRIES} retries (at_risk_prob={prob})")


def generate_scenario(spec: ScenarioSpec, rng=None) -> tuple[CountMatrix, np.ndarray]:
    """Simulate counts and 1-based true labels for one replicate."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    blocks = signal_blocks(spec.J_signal, spec.K) if spec.J_signal else [np.empty(0, int)] * spec.K
    Jn, J = spec.J_noise, spec.J
    labels = np.repeat(np.arange(1, spec.K + 1), spec.N_per_cluster)
    counts = np.zeros((spec.N, J), dtype=np.int64)
    noise_conc = np.full(Jn, NOISE_CONCENTRATION)
    for i, k in enumerate(labels):
        own = Jn + blocks[k - 1]
        needed = np.zeros(J, dtype=bool)
        if spec.depth_noise:
            needed[:Jn] = True
        if spec.depth_signal:
            needed[own] = True
        mask = _at_risk_mask(rng, J, spec.at_risk_prob, needed)
        counts[i, :Jn] = _draw_block(rng, spec.depth_noise, noise_conc, mask[:Jn])
        counts[i, own] = _draw_block(
            rng, spec.depth_signal, np.full(own.size, SIGNAL_CONCENTRATION), mask[own]
        )
    taxa = [f"noise{j + 1}" for j in range(Jn)] + [f"signal{j + 1}" for j in range(spec.J_signal)]
    samples = [f"S{i + 1}" for i in range(spec.N)]
    return CountMatrix(counts, samples, taxa), labels


def _realized_zero_fraction(spec, replicates, seed):
    seeds = np.random.SeedSequence(seed).spawn(replicates)
    fracs = [
        generate_scenario(spec, np.random.default_rng(s))[0].zero_fraction for s in seeds
    ]
    return float(np.mean(fracs))


def calibrate_at_risk(
    spec: ScenarioSpec,
    target_zero_fraction: float,
    replicates: int = 20,
    tol: float = 0.02,
    max_iter: int = 40,
) -> tuple[float, float]:
    """Bisect at_risk_prob until the Monte Carlo mean zero fraction is within
    ``tol`` of the target. Returns ``(at_risk_prob, achieved_fraction)``.

    The same replicate seeds are reused at every bisection step.
    """
    seed = spec.seed
    floor = _realized_zero_fraction(replace(spec, at_risk_prob=1.0), replicates, seed)
    if target_zero_fraction >= 1.0:
        raise CalibrationError("a zero fraction of 1 is unreachable: every sample keeps its reads")
    if target_zero_fraction < floor - tol:
        raise CalibrationError(
            f"target {target_zero_fraction:.3f} is below the sampling-zero floor {floor:.3f} "
            "reached with every taxon at risk"
        )
    if abs(floor - target_zero_fraction) <= tol / 4:
        return 1.0, floor
    lo, hi = 0.05, 1.0
    top = _realized_zero_fraction(replace(spec, at_risk_prob=lo), replicates, seed)
    if top < target_zero_fraction - tol:
        raise CalibrationError(
            f"target {target_zero_fraction:.3f} exceeds the reachable maximum {top:.3f}"
        )
    best = (1.0, floor)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        frac = _realized_zero_fraction(replace(spec, at_risk_prob=mid), replicates, seed)
        if abs(frac - target_zero_fraction) < abs(best[1] - target_zero_fraction):
            best = (mid, frac)
        if abs(frac - target_zero_fraction) <= tol / 4:
            break
        # zero fraction decreases as at_risk_prob increases
        if frac > target_zero_fraction:
            lo = mid
        else:
            hi = mid
    if abs(best[1] - target_zero_fraction) > tol:
        raise CalibrationError(f"bisection stalled at {best[1]:.3f} for target {target_zero_fraction}")
    return round(best[0], 4), best[1]


def _cluster_concentrations(tree: PhyloTree, K, spread, rng):
    """Per-cluster Dirichlet concentrations for every internal node."""
    out = []
    for _ in range(K):
        conc = {}
        for node in tree.internal_nodes():
            base = np.asarray(tree.concentration(node), dtype=float)
            if spread > 0:
                base = base * np.exp(spread * rng.standard_normal(base.size))
            conc[id(node)] = base
        out.append(conc)
    return out


def _descend(node: Node, reads, conc, rng, mask, leaf_sets, out):
    if node.is_leaf:
        out[leaf_sets[id(node)][0]] += reads
        return
    alive = [t for t, ch in enumerate(node.children) if mask[leaf_sets[id(ch)]].any()]
    if not alive or reads == 0:
        return
    split = rng.multinomial(reads, rng.dirichlet(conc[id(node)][alive]))
    for t, r in zip(alive, split):
        _descend(node.children[t], int(r), conc, rng, mask, leaf_sets, out)


def generate_dtm(
    tree: PhyloTree,
    K: int,
    N_per_cluster,
    depth: int,
    at_risk_prob: float = 1.0,
    seed: int = 0,
    spread: float = 1.0,
    concentrations=None,
) -> tuple[CountMatrix, np.ndarray]:
    """Dirichlet-tree multinomial counts with leaf-level zero inflation.

    Every internal node of cluster k has its own concentration vector; by
    default these are the tree's concentrations scaled by independent
    log-normal factors with standard deviation ``spread`` (``spread=0`` gives
    identical clusters). Pass ``concentrations`` (one ``{id(node): array}``
    mapping per cluster) to fix them. Each sample draws fresh split
    probabilities at every node and its reads descend node by node; leaves
    that are structural zeros are pruned first, together with any subtree
    left without live leaves.
    """
    N_per_cluster = tuple(int(n) for n in N_per_cluster)
    if len(N_per_cluster) != K:
        raise ValueError("N_per_cluster needs one entry per cluster")
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if not 0.0 < at_risk_prob <= 1.0:
        raise ValueError("at_risk_prob must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    conc = concentrations or _cluster_concentrations(tree, K, spread, rng)
    leaves = tree.leaves()
    leaf_sets = tree.leaf_sets()
    J = len(leaves)
    labels = np.repeat(np.arange(1, K + 1), N_per_cluster)
    counts = np.zeros((labels.size, J), dtype=np.int64)
    needed = np.ones(J, dtype=bool)
    for i, k in enumerate(labels):
        mask = _at_risk_mask(rng, J, at_risk_prob, needed)
        _descend(tree.root, depth, conc[k - 1], rng, mask, leaf_sets, counts[i])
    samples = [f"S{i + 1}" for i in range(labels.size)]
    return CountMatrix(counts, samples, [leaf.name for leaf in leaves]), labels
