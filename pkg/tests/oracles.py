"""Independent reference computations used by several test modules."""

import numpy as np


def direct_alpha(cosines, i, p, q):
    """Unnormalized weights (softmax over others, p on self), then normalize."""
    n = len(cosines)
    others = [j for j in range(n) if j != i]
    expo = {j: np.exp(q * cosines[j]) for j in others}
    z = sum(expo.values())
    raw = np.array([p if j == i else expo[j] / z for j in range(n)])
    return raw / raw.sum()


def aggregate_inner(h, cosines, i, p, q, delta):
    """<theta_bar(p, q), delta> evaluated from the definition."""
    alpha = direct_alpha(cosines, i, p, q)
    theta_bar = sum(a * hj for a, hj in zip(alpha, h))
    return float(np.dot(theta_bar, delta))


def fd_pq(h, cosines, i, p, q, delta, eps=1e-6):
    dp = (aggregate_inner(h, cosines, i, p + eps, q, delta)
          - aggregate_inner(h, cosines, i, p - eps, q, delta)) / (2 * eps)
    dq = (aggregate_inner(h, cosines, i, p, q + eps, delta)
          - aggregate_inner(h, cosines, i, p, q - eps, delta)) / (2 * eps)
    return dp, dq


def fd_pq_exact(h, cosines, i, p, q, delta, eps=1e-6, dps=40):
    """Central differences evaluated in ``dps``-digit arithmetic.

    Removes the float64 cancellation that dominates when a gradient is tiny
    (saturated softmax); only the O(eps^2) truncation error remains.
    """
    import mpmath

    with mpmath.workdps(dps):
        proj = [mpmath.fsum(mpmath.mpf(float(a)) * mpmath.mpf(float(b)) for a, b in zip(hj, delta)) for hj in h]
        cos = [mpmath.mpf(float(c)) for c in cosines]
        others = [j for j in range(len(h)) if j != i]

        def inner(pp, qq):
            e = {j: mpmath.exp(qq * cos[j]) for j in others}
            z = mpmath.fsum(e.values())
            raw = {j: e[j] / z for j in others}
            raw[i] = pp
            total = mpmath.fsum(raw.values())
            return mpmath.fsum(raw[j] * proj[j] for j in raw) / total

        p, q, eps = mpmath.mpf(p), mpmath.mpf(q), mpmath.mpf(eps)
        dp = (inner(p + eps, q) - inner(p - eps, q)) / (2 * eps)
        dq = (inner(p, q + eps) - inner(p, q - eps)) / (2 * eps)
        return float(dp), float(dq)
