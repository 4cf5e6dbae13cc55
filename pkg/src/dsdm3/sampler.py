"""Metropolis-Hastings within Gibbs sampler with a telescoping update of K.

One sweep runs, in order: at-risk indicators, allocations, filled-first
relabelling, filled-component log-concentrations, the number of components
(refreshing empty components from their priors), and the weights.

Internally allocations are 0-based (component ``k`` is row ``k`` of ``xi``);
exported partitions are 1-based.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .model import CountMatrix, Hyperparams, log_multinomial_coefficient

__all__ = [
    "ChainState",
    "SamplerConfig",
    "PosteriorDraws",
    "NumericalError",
    "make_rng",
    "initialize",
    "allocation_probabilities",
    "update_allocations",
    "relabel_filled_first",
    "k_conditional_log_pmf",
    "update_K",
    "update_weights",
    "update_gamma",
    "update_xi",
    "joint_log_density",
    "sweep",
    "run_chain",
]

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """The sampler hit a state with no finite probability."""


@dataclass
class ChainState:
    c: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray
    psi: np.ndarray
    K: int
    K_plus: int

    @property
    def weights(self) -> np.ndarray:
        psi = self.psi[: self.K]
        return psi / psi.sum()

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.c, minlength=self.K)[: self.K]

    def copy(self) -> "ChainState":
        return ChainState(
            self.c.copy(), self.gamma.copy(), self.xi.copy(), self.psi.copy(), self.K, self.K_plus
        )

    def check(self, data: CountMatrix | None = None) -> None:
        """Raise AssertionError if any state invariant is violated."""
        K, Kp = self.K, self.K_plus
        assert 1 <= Kp <= K <= self.xi.shape[0], (Kp, K)
        assert self.c.min() >= 0 and self.c.max() < K
        used = np.unique(self.c)
        assert used.size == Kp, "K_plus does not match the number of distinct labels"
        assert np.array_equal(used, np.arange(Kp)), "filled components are not 0..K_plus-1"
        assert np.all(self.psi[:K] > 0)
        assert np.all(np.isfinite(self.xi[:K]))
        if data is not None:
            assert np.all(self.gamma[data.counts > 0] == 1), "positive count marked structural"


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    record_xi: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_records(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class PosteriorDraws:
    """Retained draws. Arrays are indexed by record; ``weights`` and ``xi``
    are NaN beyond each record's K_plus."""

    iteration: np.ndarray
    c: np.ndarray
    K: np.ndarray
    K_plus: np.ndarray
    weights: np.ndarray
    log_density: np.ndarray
    xi: np.ndarray | None = None
    trace_log_density: np.ndarray = field(default_factory=lambda: np.empty(0))
    acceptance: np.ndarray | None = None
    interrupted: bool = False
    wall_time: float = 0.0

    def __len__(self) -> int:
        return self.c.shape[0]

    @property
    def labels(self) -> np.ndarray:
        """1-based allocations, one row per record."""
        return self.c + 1

    def kplus_frequencies(self) -> dict[int, float]:
        values, counts = np.unique(self.K_plus, return_counts=True)
        return {int(v): c / len(self) for v, c in zip(values, counts)}

    def kplus_mode(self) -> int:
        values, counts = np.unique(self.K_plus, return_counts=True)
        return int(values[np.argmax(counts)])

    @classmethod
    def concatenate(cls, parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        if len(parts) == 1:
            return parts[0]
        xi = None if any(p.xi is None for p in parts) else np.concatenate([p.xi for p in parts])
        return cls(
            iteration=np.concatenate([p.iteration for p in parts]),
            c=np.concatenate([p.c for p in parts]),
            K=np.concatenate([p.K for p in parts]),
            K_plus=np.concatenate([p.K_plus for p in parts]),
            weights=np.concatenate([p.weights for p in parts]),
            log_density=np.concatenate([p.log_density for p in parts]),
            xi=xi,
            interrupted=any(p.interrupted for p in parts),
        )


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; pass a SeedSequence child for split streams."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(seed))


def _check_dims(data: CountMatrix, hyper: Hyperparams) -> None:
    if hyper.n_taxa != data.n_taxa:
        raise ValueError(f"mu has {hyper.n_taxa} taxa but the data has {data.n_taxa}")


def initialize(data: CountMatrix, hyper: Hyperparams, rng) -> ChainState:
    """Single-cluster start with every taxon at risk and xi at the prior mean."""
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    _check_dims(data, hyper)
    N, J = data.counts.shape
    xi = np.tile(hyper.mu, (hyper.K_m, 1))
    psi = np.ones(hyper.K_m)
    psi[0] = rng.standard_gamma(hyper.theta + N)
    return ChainState(
        c=np.zeros(N, dtype=np.int64),
        gamma=np.ones((N, J), dtype=np.uint8),
        xi=xi,
        psi=psi,
        K=1,
        K_plus=1,
    )


class _Data:
    """Kernel-ready views of a CountMatrix."""

    def __init__(self, data: CountMatrix):
        self.z = np.ascontiguousarray(data.counts, dtype=np.int64)
        self.depth = self.z.sum(axis=1).astype(float)
        self.n_zero = int(np.sum(self.z == 0))
        self.log_coef = float(sum(log_multinomial_coefficient(row) for row in self.z))


def _as_kernel_data(data) -> _Data:
    return data if isinstance(data, _Data) else _Data(data)


def allocation_probabilities(state: ChainState, data) -> np.ndarray:
    """(N, K) allocation probabilities given weights, xi and gamma."""
    d = _as_kernel_data(data)
    logits = _kernels.allocation_logits(
        d.z, state.gamma, d.depth, state.xi, np.log(state.weights), state.K
    )
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def update_allocations(state: ChainState, data, rng) -> ChainState:
    d = _as_kernel_data(data)
    logits = _kernels.allocation_logits(
        d.z, state.gamma, d.depth, state.xi, np.log(state.weights), state.K
    )
    if not _kernels.sample_rows(logits, rng, state.c):
        raise NumericalError("every component has zero probability for some observation")
    return state


def relabel_filled_first(state: ChainState) -> int:
    """Move non-empty components to the front, keeping their relative order."""
    K = state.K
    sizes = np.bincount(state.c, minlength=K)[:K]
    filled = np.flatnonzero(sizes > 0)
    perm = np.concatenate([filled, np.flatnonzero(sizes == 0)])
    if not np.array_equal(perm, np.arange(K)):
        new_label = np.empty(K, dtype=np.int64)
        new_label[perm] = np.arange(K)
        state.c[:] = new_label[state.c]
        state.xi[:K] = state.xi[perm]
        state.psi[:K] = state.psi[perm]
    state.K_plus = int(filled.size)
    return state.K_plus


def k_conditional_log_pmf(K_plus: int, N: int, hyper: Hyperparams) -> np.ndarray:
    """Log p(K | partition) for K = K_plus..K_m, normalized."""
    K = np.arange(K_plus, hyper.K_m + 1, dtype=float)
    th = hyper.theta
    logp = (
        hyper.k_prior.log_pmf()[K_plus - 1:]
        + gammaln(K + 1) - gammaln(K - K_plus + 1)
        + gammaln(th * K) - gammaln(th * K + N)
    )
    m = logp.max()
    return logp - (m + math.log(np.exp(logp - m).sum()))


def update_K(state: ChainState, hyper: Hyperparams, N: int, rng) -> ChainState:
    """Draw K given the partition, then refresh empty components from the prior."""
    Kp = state.K_plus
    logp = k_conditional_log_pmf(Kp, N, hyper)
    p = np.exp(logp)
    u = rng.random() * p.sum()
    K = Kp + min(int(np.searchsorted(np.cumsum(p), u, side="right")), p.size - 1)
    n_empty = K - Kp
    if n_empty:
        sd = math.sqrt(hyper.sigma2)
        state.xi[Kp:K] = hyper.mu + sd * rng.standard_normal((n_empty, hyper.n_taxa))
        state.psi[Kp:K] = rng.standard_gamma(hyper.theta, size=n_empty)
    state.K = K
    return state


_PSI_FLOOR = 1e-300


def update_weights(state: ChainState, hyper: Hyperparams, rng) -> ChainState:
    """Unnormalized weights psi_k ~ Gamma(theta + N_k, 1) for k < K."""
    shape = hyper.theta + state.cluster_sizes
    psi = rng.standard_gamma(shape)
    # Gamma(theta) with small theta underflows to exactly 0 now and then
    state.psi[: state.K] = np.maximum(psi, _PSI_FLOOR)
    return state


def update_gamma(state: ChainState, data, hyper: Hyperparams, rng) -> ChainState:
    if hyper.zero_inflation == "dm":
        return state
    d = _as_kernel_data(data)
    if d.n_zero == 0:
        return state
    _kernels.gamma_sweep(
        d.z, state.gamma, d.depth, state.xi, state.c,
        hyper.alpha_gamma, hyper.beta_gamma, rng,
    )
    return state


def update_xi(state: ChainState, data, hyper: Hyperparams, rng, accepted=None) -> np.ndarray:
    """One MH step per (filled component, taxon); returns the acceptance tally."""
    d = _as_kernel_data(data)
    if accepted is None:
        accepted = np.zeros(state.xi.shape, dtype=np.int64)
    _kernels.xi_sweep(
        d.z, state.gamma, d.depth, state.c, state.xi, state.K_plus,
        hyper.mu, hyper.sigma2, math.sqrt(hyper.sigma2_mh), rng, accepted,
    )
    return accepted


def joint_log_density(state: ChainState, data, hyper: Hyperparams) -> float:
    """log p(z, c, gamma, xi_{1:K}, w, K) with phi and the at-risk
    probabilities integrated out."""
    d = _as_kernel_data(data)
    N = d.z.shape[0]
    K = state.K
    out = d.log_coef + _kernels.data_loglik(d.z, state.gamma, d.depth, state.xi, state.c, K)
    if hyper.zero_inflation == "zidm":
        s = state.gamma.sum(axis=0)
        a, b = hyper.alpha_gamma, hyper.beta_gamma
        out += float(np.sum(
            gammaln(a + s) + gammaln(b + N - s) - gammaln(a + b + N)
            - (gammaln(a) + gammaln(b) - gammaln(a + b))
        ))
    xi = state.xi[:K]
    out += float(np.sum(
        -0.5 * math.log(2 * math.pi * hyper.sigma2) - 0.5 * (xi - hyper.mu) ** 2 / hyper.sigma2
    ))
    logw = np.log(state.weights)
    out += float(logw[state.c].sum())
    th = hyper.theta
    out += float(gammaln(th * K) - K * gammaln(th) + (th - 1) * logw.sum())
    out += float(hyper.k_prior.log_pmf()[K - 1])
    return out


def sweep(state: ChainState, data, hyper: Hyperparams, rng, accepted=None) -> ChainState:
    d = _as_kernel_data(data)
    update_gamma(state, d, hyper, rng)
    update_allocations(state, d, rng)
    relabel_filled_first(state)
    update_xi(state, d, hyper, rng, accepted)
    update_K(state, hyper, d.z.shape[0], rng)
    update_weights(state, hyper, rng)
    return state


def run_chain(
    data: CountMatrix,
    hyper: Hyperparams,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    init: ChainState | None = None,
) -> PosteriorDraws:
    """Run one chain. Ctrl-C stops early and returns the records so far."""
    _check_dims(data, hyper)
    if rng is None:
        rng = make_rng(config.seed)
    d = _Data(data)
    N, J = d.z.shape
    Km = hyper.K_m
    state = init.copy() if init is not None else initialize(data, hyper, rng)
    if hyper.zero_inflation == "dm":
        state.gamma[:] = 1

    M = config.n_records
    rec_c = np.empty((M, N), dtype=np.int64)
    rec_K = np.empty(M, dtype=np.int64)
    rec_Kp = np.empty(M, dtype=np.int64)
    rec_w = np.full((M, Km), np.nan)
    rec_lp = np.empty(M)
    rec_xi = np.full((M, Km, J), np.nan) if config.record_xi else None
    trace = np.empty(config.n_iter)
    accepted = np.zeros((Km, J), dtype=np.int64)
    iters = np.empty(M, dtype=np.int64)

    m = 0
    done = 0
    interrupted = False
    start = time.perf_counter()
    try:
        for it in range(config.n_iter):
            sweep(state, d, hyper, rng, accepted)
            if config.check_invariants:
                state.check(data)
            lp = joint_log_density(state, d, hyper)
            if not math.isfinite(lp):
                raise NumericalError(f"non-finite joint log-density at iteration {it + 1}")
            trace[it] = lp
            done = it + 1
            if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0 and m < M:
                Kp = state.K_plus
                iters[m] = it + 1
                rec_c[m] = state.c
                rec_K[m] = state.K
                rec_Kp[m] = Kp
                rec_w[m, :Kp] = state.weights[:Kp]
                rec_lp[m] = lp
                if rec_xi is not None:
                    rec_xi[m, :Kp] = state.xi[:Kp]
                m += 1
    except KeyboardInterrupt:
        interrupted = True
        logger.warning("chain interrupted after %d iterations; keeping %d records", done, m)
    elapsed = time.perf_counter() - start
    return PosteriorDraws(
        iteration=iters[:m],
        c=rec_c[:m],
        K=rec_K[:m],
        K_plus=rec_Kp[:m],
        weights=rec_w[:m],
        log_density=rec_lp[:m],
        xi=None if rec_xi is None else rec_xi[:m],
        trace_log_density=trace[:done],
        acceptance=accepted / max(done, 1),
        interrupted=interrupted,
        wall_time=elapsed,
    )
