"""Rank conditions, shared-direction detection and latent-rank selection."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

# ---------------------------------------------------------------------------
# exact rank conditions
# ---------------------------------------------------------------------------


def check_dimension_condition(q, q_s):
    """True when the study-specific ranks fit inside the shared rank."""
    return sum(q_s) <= q


def rank_upper_bound(d):
    """Largest factor count strictly below (2d - sqrt(8d + 1)) / 2."""
    if d < 1:
        raise InputError("d must be at least 1")
    limit = (2.0 * d - math.sqrt(8.0 * d + 1.0)) / 2.0
    bound = math.floor(limit)
    if bound == limit:
        bound -= 1
    return max(0, bound)


# ---------------------------------------------------------------------------
# column-space geometry
# ---------------------------------------------------------------------------


def _orthonormal_range(a, tol):
    """Orthonormal basis of the column space, rank cut at tol * s_max."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return a.reshape(a.shape[0], 0)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.zeros((a.shape[0], 0))
    return u[:, s > tol * s[0]]


def column_space_intersection_dim(a_list, tol=1e-8):
    """Dimension of the intersection of the column spaces.

    Bases are intersected pairwise: directions whose principal angles have
    cosine above 1 - tol are kept as the running intersection.
    """
    if len(a_list) == 0:
        raise InputError("need at least one matrix")
    rows = {np.asarray(a).shape[0] for a in a_list}
    if len(rows) != 1:
        raise InputError("matrices must share their row count")
    basis = _orthonormal_range(a_list[0], tol)
    for a in a_list[1:]:
        if basis.shape[1] == 0:
            return 0
        other = _orthonormal_range(a, tol)
        if other.shape[1] == 0:
            return 0
        u, s, _ = np.linalg.svd(basis.T @ other, full_matrices=False)
        keep = s > 1.0 - tol
        basis = basis @ u[:, keep]
    return basis.shape[1]


@dataclass(frozen=True)
class SwitchingReport:
    """Verdict plus the geometry behind it."""

    switching: bool
    intersection_dim: int
    ranks: tuple
    all_rank_deficient: bool


def detect_information_switching(a_list, tol=1e-8):
    """Shared directions leak between components iff the spaces intersect
    or every study matrix is rank-deficient."""
    intersection = column_space_intersection_dim(a_list, tol=tol)
    ranks = tuple(_orthonormal_range(a, tol).shape[1] for a in a_list)
    deficient = all(r < np.asarray(a).shape[1]
                    for r, a in zip(ranks, a_list))
    return SwitchingReport(intersection > 0 or deficient, intersection,
                           ranks, deficient)


# ---------------------------------------------------------------------------
# latent-rank selection
# ---------------------------------------------------------------------------


def partial_svd(x, k, rng=None, oversample=10, max_iter=30):
    """Top-k singular triplets via randomized subspace iteration.

    Power iterations repeat until the k leading singular values stabilize,
    so slowly decaying spectra still meet a 1e-6 relative accuracy target.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InputError("expected a matrix")
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise InputError(f"k must lie in [1, {min(n, d)}]")
    if not np.isfinite(x).all():
        raise InputError("non-finite entries")
    if rng is None:
        rng = np.random.default_rng(15485863)
    m = min(k + oversample, min(n, d))
    q_mat, _ = np.linalg.qr(x @ rng.standard_normal((d, m)))
    prev = None
    for _ in range(max_iter):
        q_mat, _ = np.linalg.qr(x.T @ q_mat)
        q_mat, _ = np.linalg.qr(x @ q_mat)
        s_probe = np.linalg.svd(q_mat.T @ x, compute_uv=False)[:k]
        if prev is not None and np.allclose(s_probe, prev, rtol=1e-10,
                                            atol=1e-14):
            break
        prev = s_probe
    u_small, s, vt = np.linalg.svd(q_mat.T @ x, full_matrices=False)
    return (q_mat @ u_small)[:, :k], s[:k], vt[:k]


def select_num_factors(y, n_studies, threshold=0.95):
    """Smallest rank explaining the threshold share of squared spectrum.

    Returns (q_hat, per-study ranks). The per-study rule is floor(q_hat / S)
    with a floor of one factor per study; when even that overflows q_hat the
    data cannot support the requested number of studies.
    """
    y = np.asarray(y, dtype=float)
    if not (0.0 < threshold <= 1.0):
        raise ConfigError("threshold must lie in (0, 1]")
    if n_studies < 1:
        raise ConfigError("need at least one study")
    if y.ndim != 2 or min(y.shape) < 1:
        raise InputError("expected a data matrix")
    total = float(np.sum(y ** 2))
    if not np.isfinite(total) or total <= 0.0:
        raise InputError("degenerate data: zero or non-finite total variance")
    d = y.shape[1]
    cap = rank_upper_bound(d)
    if cap < 1:
        raise InputError(f"d={d} is too small for automatic rank selection")
    k = min(cap, min(y.shape))
    _, s, _ = partial_svd(y, k)
    ratios = np.cumsum(s ** 2) / total
    hit = np.flatnonzero(ratios >= threshold - 1e-12)
    q_hat = int(hit[0]) + 1 if hit.size else k
    per_study = max(1, q_hat // n_studies)
    q_s = (per_study,) * n_studies
    if sum(q_s) > q_hat:
        raise ConfigError(
            f"selected rank {q_hat} cannot host one factor per study "
            f"across {n_studies} studies")
    return q_hat, q_s
