"""numba kernels for the sampler's inner loops.

Array conventions: ``z`` int64 (N, J); ``gamma`` uint8 (N, J); ``depth``
float64 (N,); ``xi`` float64 (K_m, J); labels ``c`` are 0-based. The
multinomial coefficient is never included here since it cancels in every
ratio the sampler forms. Random numbers come from the numpy Generator that is
passed in, so a chain is reproducible from its seed.
"""

import math

import numpy as np
from numba import njit

_CACHE = True


@njit(cache=_CACHE)
def row_loglik(z_i, g_i, a, n_i):
    """DM log-likelihood of one row against concentrations ``a``, no coefficient."""
    if n_i == 0:
        return 0.0
    A = 0.0
    s = 0.0
    for j in range(z_i.shape[0]):
        if g_i[j]:
            A += a[j]
            if z_i[j] > 0:
                s += math.lgamma(a[j] + z_i[j]) - math.lgamma(a[j])
    return s + math.lgamma(A) - math.lgamma(A + n_i)


@njit(cache=_CACHE)
def allocation_logits(z, gamma, depth, xi, log_w, K):
    """(N, K) unnormalized log allocation probabilities."""
    N, J = z.shape
    a = np.exp(xi[:K])
    lga = np.empty((K, J))
    for k in range(K):
        for j in range(J):
            lga[k, j] = math.lgamma(a[k, j])
    out = np.empty((N, K))
    for i in range(N):
        n = depth[i]
        for k in range(K):
            if n == 0:
                out[i, k] = log_w[k]
                continue
            A = 0.0
            s = 0.0
            for j in range(J):
                if gamma[i, j]:
                    A += a[k, j]
                    if z[i, j] > 0:
                        s += math.lgamma(a[k, j] + z[i, j]) - lga[k, j]
            out[i, k] = log_w[k] + s + math.lgamma(A) - math.lgamma(A + n)
    return out


@njit(cache=_CACHE)
def sample_rows(logits, rng, out):
    """Draw one categorical index per row of ``logits``; returns False if a
    row has no finite entry."""
    N, K = logits.shape
    p = np.empty(K)
    for i in range(N):
        m = -np.inf
        for k in range(K):
            if logits[i, k] > m:
                m = logits[i, k]
        if not np.isfinite(m):
            return False
        tot = 0.0
        for k in range(K):
            p[k] = math.exp(logits[i, k] - m)
            tot += p[k]
        u = rng.random() * tot
        acc = 0.0
        choice = K - 1
        for k in range(K):
            acc += p[k]
            if u < acc:
                choice = k
                break
        out[i] = choice
    return True


@njit(cache=_CACHE)
def gamma_sweep(z, gamma, depth, xi, c, alpha, beta, rng):
    """Row-major Gibbs sweep over the at-risk indicators of zero counts."""
    N, J = z.shape
    colsum = np.zeros(J, dtype=np.int64)
    for i in range(N):
        for j in range(J):
            colsum[j] += gamma[i, j]
    n_on = 0
    for i in range(N):
        a = np.exp(xi[c[i]])
        n = depth[i]
        A = 0.0
        for j in range(J):
            if gamma[i, j]:
                A += a[j]
        for j in range(J):
            if z[i, j] > 0:
                continue
            g_old = gamma[i, j]
            others = colsum[j] - g_old
            logodds = math.log(alpha + others) - math.log(beta + (N - 1) - others)
            if n > 0:
                A1 = A if g_old else A + a[j]
                A0 = A1 - a[j]
                logodds += (math.lgamma(A1) - math.lgamma(A1 + n)) - (
                    math.lgamma(A0) - math.lgamma(A0 + n)
                )
            u = rng.random()
            # u < sigmoid(logodds), written to avoid overflow on either tail
            if logodds >= 0:
                g_new = 1 if u * (1.0 + math.exp(-logodds)) < 1.0 else 0
            else:
                e = math.exp(logodds)
                g_new = 1 if u * (1.0 + e) < e else 0
            if g_new != g_old:
                gamma[i, j] = g_new
                colsum[j] += g_new - g_old
                if g_new:
                    A += a[j]
                else:
                    A -= a[j]
            n_on += g_new
    return n_on


@njit(cache=_CACHE)
def xi_sweep(z, gamma, depth, c, xi, K_plus, mu, sigma2, sd_mh, rng, accepted):
    """Coordinate-wise random-walk MH over the rows of ``xi`` for filled
    components. ``accepted`` (K_m, J) is incremented in place."""
    N, J = z.shape
    order = np.argsort(c, kind="mergesort")
    counts = np.zeros(K_plus + 1, dtype=np.int64)
    for i in range(N):
        counts[c[i] + 1] += 1
    starts = np.cumsum(counts)
    A = np.empty(N)
    lA = np.empty(N)
    A_new = np.empty(N)
    lA_new = np.empty(N)
    n_acc = 0
    for k in range(K_plus):
        members = order[starts[k]:starts[k + 1]]
        m = members.shape[0]
        for t in range(m):
            i = members[t]
            s = 0.0
            for j in range(J):
                if gamma[i, j]:
                    s += math.exp(xi[k, j])
            A[t] = s
            if depth[i] > 0:
                lA[t] = math.lgamma(s) - math.lgamma(s + depth[i])
            else:
                lA[t] = 0.0
        for j in range(J):
            old = xi[k, j]
            new = old + sd_mh * rng.standard_normal()
            a_old = math.exp(old)
            a_new = math.exp(new)
            lg_old = math.lgamma(a_old)
            lg_new = math.lgamma(a_new)
            delta = (-(new - mu[j]) ** 2 + (old - mu[j]) ** 2) / (2.0 * sigma2)
            for t in range(m):
                i = members[t]
                if gamma[i, j] and depth[i] > 0:
                    An = A[t] + (a_new - a_old)
                    if An <= 0.0:
                        # cancellation at extreme ratios; recompute exactly
                        An = 0.0
                        for jj in range(J):
                            if gamma[i, jj]:
                                An += a_new if jj == j else math.exp(xi[k, jj])
                    A_new[t] = An
                    lA_new[t] = math.lgamma(An) - math.lgamma(An + depth[i])
                    delta += lA_new[t] - lA[t]
                    zij = z[i, j]
                    if zij > 0:
                        delta += (math.lgamma(a_new + zij) - lg_new) - (
                            math.lgamma(a_old + zij) - lg_old
                        )
                else:
                    A_new[t] = A[t]
                    lA_new[t] = lA[t]
            if math.log(rng.random()) < delta:
                xi[k, j] = new
                accepted[k, j] += 1
                n_acc += 1
                for t in range(m):
                    A[t] = A_new[t]
                    lA[t] = lA_new[t]
    return n_acc


@njit(cache=_CACHE)
def data_loglik(z, gamma, depth, xi, c, K):
    """Sum over rows of the DM log-likelihood under each row's component."""
    N, J = z.shape
    a = np.exp(xi[:K])
    lga = np.empty((K, J))
    for k in range(K):
        for j in range(J):
            lga[k, j] = math.lgamma(a[k, j])
    tot = 0.0
    for i in range(N):
        n = depth[i]
        if n == 0:
            continue
        k = c[i]
        A = 0.0
        for j in range(J):
            if gamma[i, j]:
                A += a[k, j]
                if z[i, j] > 0:
                    tot += math.lgamma(a[k, j] + z[i, j]) - lga[k, j]
        tot += math.lgamma(A) - math.lgamma(A + n)
    return tot
