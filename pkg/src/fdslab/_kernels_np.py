"""Pure-numpy oracle-field reduction kernel (fallback backend).

The reduction sweeps the K target points for every query state and returns the
posterior moments needed by the oracle field:

  m1  -- posterior mean of the target point, sum_k w_k p_k
  sq  -- posterior spread, sum_k w_k ||p_k - m1||^2
  c   -- sum_k w_k (alpha p_k - x) . (p_k - m1)

with w_k the normalized Gaussian posterior weights at bandwidth beta around
the scaled points alpha p_k.  Components whose log-weight falls more than
``log_drop`` below the maximum are dropped before normalization.

All moments are accumulated in coordinates centered on the heaviest
component: m1 = p_max + delta with delta = sum_k w_k (p_k - p_max).  When the
weights collapse onto one point, delta (and with it every deviation
p_k - m1) stays accurate to relative rounding error, which keeps the
residual/divergence identity exact at machine precision even for vanishing
spreads; forming p_k - m1 directly would cancel catastrophically there.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"

# Cap on the size of the intermediate [chunk x K] distance matrix.
_CHUNK_ELEMS = 16_000_000


def oracle_reduce(points: np.ndarray, queries: np.ndarray, alpha: float, beta: float,
                  log_drop: float = 40.0):
    points = np.ascontiguousarray(points, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    n, d = queries.shape
    k = len(points)

    m1 = np.empty((n, d))
    sq = np.empty(n)
    c = np.empty(n)

    scaled = alpha * points
    inv2b2 = 1.0 / (2.0 * beta * beta)
    chunk = max(1, _CHUNK_ELEMS // max(1, k))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        x = queries[lo:hi]
        diff = x[:, None, :] - scaled[None, :, :]          # [c x K x d]
        logw = -np.einsum("ckd,ckd->ck", diff, diff) * inv2b2
        jstar = np.argmax(logw, axis=1)
        logw -= logw[np.arange(hi - lo), jstar][:, None]
        w = np.where(logw >= -log_drop, np.exp(logw), 0.0)
        w /= w.sum(axis=1, keepdims=True)

        rel = points[None, :, :] - points[jstar][:, None, :]   # p_k - p_max
        delta = np.einsum("ck,ckd->cd", w, rel)
        m1[lo:hi] = points[jstar] + delta
        dev = rel - delta[:, None, :]                          # p_k - m1, stable
        sq[lo:hi] = np.einsum("ck,ckd->c", w, dev * dev)
        shifted = alpha * points[None, :, :] - x[:, None, :]
        c[lo:hi] = np.einsum("ck,ckd,ckd->c", w, shifted, dev)
    return m1, sq, c
