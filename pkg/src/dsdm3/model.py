"""Domain types and numerical kernels for the zero-inflated DM mixture.

Everything here is a pure function of its inputs. The per-observation
relative abundances and the per-taxon at-risk probabilities are integrated
out analytically, so neither appears in any type below.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "CountMatrix",
    "KPrior",
    "Hyperparams",
    "log_multinomial_coefficient",
    "log_dm_marginal",
    "log_k_prior",
    "cluster_relative_abundance",
    "log_prior_xi",
    "log_gamma_conditional_ratio",
    "AllZeroTaxonWarning",
]

ZERO_INFLATION_MODES = ("zidm", "dm")


class AllZeroTaxonWarning(UserWarning):
    """A taxon has no reads in any sample; its prior mean was imputed."""


@dataclass(frozen=True)
class CountMatrix:
    """Observed N x J taxa counts with sample and taxon labels."""

    counts: np.ndarray
    sample_ids: tuple = ()
    taxon_ids: tuple = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError(f"counts must be 2-dimensional, got shape {counts.shape}")
        if counts.size and not np.all(np.isfinite(counts)):
            raise ValueError("counts contain non-finite values")
        if counts.size and np.any(counts != np.round(counts)):
            raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        n, j = counts.shape
        if n < 1:
            raise ValueError("at least one sample is required")
        if j < 2:
            raise ValueError("at least two taxa are required")
        if np.any(counts < 0):
            r, c = np.argwhere(counts < 0)[0]
            raise ValueError(f"negative count at row {r}, column {c}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        sids = tuple(str(s) for s in self.sample_ids) or tuple(f"S{i + 1}" for i in range(n))
        tids = tuple(str(t) for t in self.taxon_ids) or tuple(f"T{t + 1}" for t in range(j))
        if len(sids) != n:
            raise ValueError(f"{len(sids)} sample ids for {n} rows")
        if len(tids) != j:
            raise ValueError(f"{len(tids)} taxon ids for {j} columns")
        object.__setattr__(self, "sample_ids", sids)
        object.__setattr__(self, "taxon_ids", tids)

    @property
    def depths(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n_samples(self) -> int:
        return self.counts.shape[0]

    @property
    def n_taxa(self) -> int:
        return self.counts.shape[1]

    @property
    def zero_fraction(self) -> float:
        return float(np.mean(self.counts == 0))

    def all_zero_taxa(self) -> np.ndarray:
        return np.flatnonzero(self.counts.sum(axis=0) == 0)

    def mean_relative_abundance(self) -> np.ndarray:
        """Average of per-sample relative abundances over samples with reads."""
        depths = self.depths
        keep = depths > 0
        if not np.any(keep):
            raise ValueError("every sample has depth 0; relative abundances are undefined")
        ra = self.counts[keep] / depths[keep, None]
        return ra.mean(axis=0)


_K_PRIOR_KINDS = ("ztb", "poisson", "geometric", "bnb")


@dataclass(frozen=True)
class KPrior:
    """Prior on the number of components K, truncated to {1, ..., K_m}.

    Build one with the classmethods rather than the raw constructor.
    """

    kind: str
    K_m: int
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _K_PRIOR_KINDS:
            raise ValueError(f"unknown K prior {self.kind!r}; expected one of {_K_PRIOR_KINDS}")
        if int(self.K_m) != self.K_m or self.K_m < 1:
            raise ValueError(f"K_m must be a positive integer, got {self.K_m}")
        object.__setattr__(self, "K_m", int(self.K_m))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        if self.kind == "ztb" and not (len(p) == 1 and 0.0 < p[0] < 1.0):
            raise ValueError("zero-truncated binomial needs pi_lambda in (0, 1)")
        if self.kind == "poisson" and not (len(p) == 1 and p[0] > 0):
            raise ValueError("truncated Poisson needs a positive rate")
        if self.kind == "geometric" and not (len(p) == 1 and 0.0 < p[0] <= 1.0):
            raise ValueError("geometric needs success probability in (0, 1]")
        if self.kind == "bnb" and not (len(p) == 3 and min(p) > 0):
            raise ValueError("beta-negative-binomial needs positive (a, b, r)")

    @classmethod
    def zero_truncated_binomial(cls, K_m: int, pi_lambda: float) -> "KPrior":
        return cls("ztb", K_m, (pi_lambda,))

    @classmethod
    def truncated_poisson(cls, K_m: int, rate: float) -> "KPrior":
        return cls("poisson", K_m, (rate,))

    @classmethod
    def geometric(cls, K_m: int, p: float) -> "KPrior":
        return cls("geometric", K_m, (p,))

    @classmethod
    def beta_negative_binomial(cls, K_m: int, a: float, b: float, r: float) -> "KPrior":
        """K - 1 follows BNB(r, a, b); (a, b) are the beta parameters."""
        return cls("bnb", K_m, (a, b, r))

    def log_pmf(self) -> np.ndarray:
        """Log probabilities of K = 1..K_m (index 0 holds K = 1)."""
        return _k_prior_log_pmf(self.kind, self.K_m, self.params).copy()

    def mean(self) -> float:
        k = np.arange(1, self.K_m + 1)
        return float(np.sum(k * np.exp(self.log_pmf())))


@lru_cache(maxsize=64)
def _k_prior_log_pmf(kind, K_m, params):
        k = np.arange(1, K_m + 1, dtype=float)
        if kind == "ztb":
            (pi,) = params
            km = K_m
            logp = (
                gammaln(km + 1) - gammaln(k + 1) - gammaln(km - k + 1)
                + k * math.log(pi) + (km - k) * math.log1p(-pi)
                - math.log(-math.expm1(km * math.log1p(-pi)))
            )
        elif kind == "poisson":
            (rate,) = params
            logp = k * math.log(rate) - gammaln(k + 1)
        elif kind == "geometric":
            (p,) = params
            logp = (k - 1) * (math.log1p(-p) if p < 1 else -np.inf) + math.log(p)
            logp = np.where(k == 1, math.log(p), logp)
        else:
            a, b, r = params
            m = k - 1
            logp = (
                gammaln(r + m) - gammaln(r) - gammaln(m + 1)
                + _betaln(a + r, b + m) - _betaln(a, b)
            )
        return logp - logsumexp(logp)


def _betaln(a, b):
    return gammaln(a) + gammaln(b) - gammaln(np.add(a, b))


@dataclass(frozen=True)
class Hyperparams:
    """Fixed model constants.

    ``mu`` is the prior mean of each taxon's log-concentration; use
    :meth:`from_data` to derive it from the observed mean relative abundances.
    Defaults mirror the enteric-disease application settings.
    """

    mu: np.ndarray
    K_m: int = 10
    theta: float = 0.1
    pi_lambda: float = 0.5
    alpha_gamma: float = 1.0
    beta_gamma: float = 1.0
    s: float = 200.0
    sigma2: float = 10.0
    sigma2_mh: float = 1.0
    k_prior: KPrior | None = None
    zero_inflation: str = "zidm"

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).ravel()
        if mu.size < 2:
            raise ValueError("mu must have one entry per taxon (J >= 2)")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite for every taxon")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if int(self.K_m) != self.K_m or self.K_m < 1:
            raise ValueError(f"K_m must be a positive integer, got {self.K_m}")
        object.__setattr__(self, "K_m", int(self.K_m))
        for name in ("theta", "alpha_gamma", "beta_gamma", "s", "sigma2", "sigma2_mh"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not 0.0 < self.pi_lambda < 1.0:
            raise ValueError(f"pi_lambda must lie in (0, 1), got {self.pi_lambda}")
        if self.zero_inflation not in ZERO_INFLATION_MODES:
            raise ValueError(f"zero_inflation must be one of {ZERO_INFLATION_MODES}")
        if self.k_prior is None:
            object.__setattr__(
                self, "k_prior", KPrior.zero_truncated_binomial(self.K_m, self.pi_lambda)
            )
        elif self.k_prior.K_m != self.K_m:
            raise ValueError(f"k_prior truncates at {self.k_prior.K_m} but K_m={self.K_m}")

    @property
    def n_taxa(self) -> int:
        return self.mu.size

    @classmethod
    def from_data(cls, data: CountMatrix, s: float = 200.0, **kwargs) -> "Hyperparams":
        return cls(mu=prior_mean_from_data(data, s), s=s, **kwargs)


def prior_mean_from_data(data: CountMatrix, s: float) -> np.ndarray:
    """log(s * mean relative abundance), imputing half a read for all-zero taxa."""
    ra = data.mean_relative_abundance()
    empty = ra <= 0
    if np.any(empty):
        names = [data.taxon_ids[j] for j in np.flatnonzero(empty)]
        warnings.warn(
            f"{len(names)} taxa have no reads ({', '.join(names[:5])}"
            f"{', ...' if len(names) > 5 else ''}); using a half-read pseudo-abundance",
            AllZeroTaxonWarning,
            stacklevel=3,
        )
        ra = np.where(empty, 0.5 / data.depths.sum(), ra)
    return np.log(s * ra)


def log_multinomial_coefficient(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    return float(gammaln(z.sum() + 1) - gammaln(z + 1).sum())


def log_dm_marginal(z_row, gamma_row, xi_row, include_coefficient: bool = True) -> float:
    """Log probability of one count vector given at-risk taxa and log-concentrations.

    Taxa with ``gamma_row == 0`` are structural zeros and drop out of the
    Dirichlet-multinomial entirely.
    """
    z = np.asarray(z_row, dtype=float)
    g = np.asarray(gamma_row).astype(bool)
    xi = np.asarray(xi_row, dtype=float)
    if not (z.shape == g.shape == xi.shape) or z.ndim != 1:
        raise ValueError("z_row, gamma_row and xi_row must be 1-d with equal length")
    conflict = np.flatnonzero((z > 0) & ~g)
    if conflict.size:
        raise ValueError(
            f"structural zero conflict: taxon {conflict[0]} has count "
            f"{int(z[conflict[0]])} but is not at risk"
        )
    n = z.sum()
    if n > 0 and not g.any():
        raise ValueError("no at-risk taxa for a sample with positive depth")
    out = log_multinomial_coefficient(z) if include_coefficient else 0.0
    if n == 0:
        return out
    a = np.exp(xi[g])
    zg = z[g]
    A = a.sum()
    out += gammaln(A) - gammaln(A + n)
    out += np.sum(gammaln(a + zg) - gammaln(a))
    return float(out)


def log_k_prior(k: int, prior: KPrior) -> float:
    if int(k) != k or not 1 <= k <= prior.K_m:
        raise ValueError(f"K={k} outside support 1..{prior.K_m}")
    return float(prior.log_pmf()[int(k) - 1])


def cluster_relative_abundance(xi_row) -> np.ndarray:
    xi = np.asarray(xi_row, dtype=float)
    e = np.exp(xi - xi.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_prior_xi(xi_row, mu, sigma2: float) -> float:
    xi = np.asarray(xi_row, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return float(np.sum(-0.5 * math.log(2 * math.pi * sigma2) - 0.5 * (xi - mu) ** 2 / sigma2))


def log_gamma_conditional_ratio(i: int, j: int, state, data: CountMatrix, hyper: Hyperparams) -> float:
    """Log-odds of gamma[i, j] = 1 versus 0 for a zero count, the at-risk
    probability of taxon j integrated out under its Beta prior."""
    counts = data.counts
    if counts[i, j] > 0:
        raise ValueError(f"count[{i}, {j}] = {counts[i, j]} > 0 forces gamma = 1")
    gamma = np.asarray(state.gamma).astype(bool)
    n_minus = int(gamma[:, j].sum() - gamma[i, j])
    N = counts.shape[0]
    prior = math.log(hyper.alpha_gamma + n_minus) - math.log(hyper.beta_gamma + (N - 1) - n_minus)
    g1 = gamma[i].copy()
    g0 = gamma[i].copy()
    g1[j] = True
    g0[j] = False
    xi = state.xi[state.c[i]]
    z = counts[i]
    if z.sum() == 0:
        return prior
    return prior + log_dm_marginal(z, g1, xi) - log_dm_marginal(z, g0, xi)
