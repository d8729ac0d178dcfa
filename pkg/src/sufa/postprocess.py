"""Rotation alignment, posterior summaries and model-comparison scores."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DomainError, InputError
from .model import ParamSet

# ---------------------------------------------------------------------------
# varimax rotation
# ---------------------------------------------------------------------------


def varimax_criterion(lam):
    """Sum over columns of the variance of squared loadings."""
    lam = np.asarray(lam, dtype=float)
    sq = lam ** 2
    return float(np.sum(np.mean(sq ** 2, axis=0) - np.mean(sq, axis=0) ** 2))


def varimax(lam, tol=1e-10, max_iter=1000):
    """Rotate columns to a simple-structure optimum; returns (Lam H, H).

    Classical pairwise sweeps without row normalization: each column pair
    is rotated by the angle with vanishing criterion derivative, until a
    full sweep no longer improves the criterion.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 2:
        raise InputError("expected a loading matrix")
    if not np.isfinite(lam).all():
        raise DomainError("non-finite loadings")
    d, q = lam.shape
    h = np.eye(q)
    rotated = lam.copy()
    if q == 1:
        return rotated, h
    last = varimax_criterion(rotated)
    for _ in range(max_iter):
        widest = 0.0
        for p in range(q - 1):
            for r in range(p + 1, q):
                x, y = rotated[:, p], rotated[:, r]
                u = x * x - y * y
                v = 2.0 * x * y
                a, b = u.sum(), v.sum()
                num = 2.0 * (d * (u @ v) - a * b)
                den = d * ((u @ u) - (v @ v)) - (a * a - b * b)
                theta = 0.25 * math.atan2(num, den)
                if abs(theta) < 1e-15:
                    continue
                widest = max(widest, abs(theta))
                c, s = math.cos(theta), math.sin(theta)
                g = np.array([[c, -s], [s, c]])
                rotated[:, [p, r]] = rotated[:, [p, r]] @ g
                h[:, [p, r]] = h[:, [p, r]] @ g
        now = varimax_criterion(rotated)
        # angles drive the stop: machine-level stationarity makes a rerun on
        # the output a near no-op; the criterion-gain test only ends sweeps
        # once the remaining rotations are themselves negligible
        if widest < 1e-10 or (now - last < tol and widest < 1e-6):
            break
        last = now
    return rotated, h


# ---------------------------------------------------------------------------
# pivot matching
# ---------------------------------------------------------------------------


@dataclass
class AlignedDraws:
    """Aligned loading draws with the exact transforms that produced them."""

    aligned: list
    transforms: list
    pivot: np.ndarray
    pivot_index: int


def _greedy_signed_permutation(m):
    """Signed permutation matching rows to columns by largest |entry|."""
    q = m.shape[0]
    perm = np.zeros((q, q))
    scores = np.abs(m).copy()
    for _ in range(q):
        i, j = np.unravel_index(np.argmax(scores), scores.shape)
        perm[i, j] = 1.0 if m[i, j] >= 0.0 else -1.0
        scores[i, :] = -1.0
        scores[:, j] = -1.0
    return perm


def _optimal_signed_permutation(m):
    rows, cols = linear_sum_assignment(-np.abs(m))
    perm = np.zeros(m.shape)
    perm[rows, cols] = np.where(m[rows, cols] >= 0.0, 1.0, -1.0)
    return perm


def choose_pivot(draws):
    """Reference draw for matching: the draw whose outer product sits at the
    median distance from the mean outer product, simple-structure rotated.

    Returns (pivot matrix, index of the chosen draw). Ties resolve to the
    earliest index, so identical draws give index 0.
    """
    if len(draws) == 0:
        raise InputError("need at least one draw")
    grams = [np.asarray(lam) @ np.asarray(lam).T for lam in draws]
    center = np.mean(grams, axis=0)
    dist = np.array([np.linalg.norm(g - center) for g in grams])
    target = np.sort(dist)[(len(draws) - 1) // 2]
    index = int(np.flatnonzero(dist == target)[0])
    pivot, _ = varimax(draws[index])
    return pivot, index


def match_align(draws, pivot, optimal=False):
    """Rotate each draw to simple structure, then sign/permute its columns
    onto the pivot's by largest inner products."""
    pivot = np.asarray(pivot, dtype=float)
    aligned, transforms = [], []
    for draw in draws:
        draw = np.asarray(draw, dtype=float)
        if draw.shape != pivot.shape:
            raise InputError(
                f"draw shape {draw.shape} does not match pivot {pivot.shape}")
        rotated, h = varimax(draw)
        inner = rotated.T @ pivot
        perm = (_optimal_signed_permutation(inner) if optimal
                else _greedy_signed_permutation(inner))
        total = h @ perm
        aligned.append(draw @ total)
        transforms.append(total)
    return AlignedDraws(aligned, transforms, pivot, -1)


def align_parameter_draws(draws, pivot=None, optimal=False):
    """Align full parameter draws; study matrices co-rotate so that every
    implied covariance is untouched."""
    if len(draws) == 0:
        raise InputError("need at least one draw")
    lam_draws = [p.lam for p in draws]
    pivot_index = -1
    if pivot is None:
        pivot, pivot_index = choose_pivot(lam_draws)
    result = match_align(lam_draws, pivot, optimal=optimal)
    result.pivot_index = pivot_index
    out = []
    for params, lam, h in zip(draws, result.aligned, result.transforms):
        out.append(ParamSet(lam, params.log_delta.copy(),
                            [h.T @ a for a in params.a_list]))
    return out, result


def study_loading_products(params):
    """Per-study loadings implied by one draw: shared loadings times the
    study matrix."""
    return [params.lam @ a for a in params.a_list]


def study_specific_loadings(draws, optimal=False):
    """Per-study loading draws pushed through the same alignment pipeline."""
    if len(draws) == 0:
        raise InputError("need at least one draw")
    out = []
    for s in range(len(draws[0].a_list)):
        products = [p.lam @ p.a_list[s] for p in draws]
        if products[0].shape[1] == 0:
            out.append(AlignedDraws(products, [np.zeros((0, 0))] * len(draws),
                                    products[0], 0))
            continue
        pivot, index = choose_pivot(products)
        result = match_align(products, pivot, optimal=optimal)
        result.pivot_index = index
        out.append(result)
    return out


# ---------------------------------------------------------------------------
# summaries and scores
# ---------------------------------------------------------------------------


def sparsify_by_ci(draws, level=0.95):
    """Posterior mean with exact zeros where the equal-tailed interval
    straddles zero."""
    if not (0.0 < level < 1.0):
        raise ConfigError("level must lie in (0, 1)")
    stack = np.stack([np.asarray(d, dtype=float) for d in draws])
    if stack.shape[0] < 20:
        raise InputError("need at least 20 draws for interval estimates")
    lo = np.quantile(stack, (1.0 - level) / 2.0, axis=0)
    hi = np.quantile(stack, 1.0 - (1.0 - level) / 2.0, axis=0)
    mean = stack.mean(axis=0)
    return np.where((lo <= 0.0) & (hi >= 0.0), 0.0, mean)


def wbic(output, studies):
    """Negative posterior-mean log-likelihood of a tempered chain."""
    pooled = sum(study.n for study in studies)
    if pooled < 2:
        raise ConfigError("pooled sample size must be at least 2")
    expected = 1.0 / math.log(pooled)
    if not math.isclose(output.beta, expected, rel_tol=0.0, abs_tol=1e-12):
        raise ConfigError(
            f"chain tempered at beta={output.beta}, expected {expected}")
    if output.n_draws == 0:
        raise InputError("chain holds no stored draws")
    return -float(np.mean(output.loglik))


def alignment_r2(true_lam, est_lam):
    """Median R-squared from regressing each true column on the estimate."""
    true_lam = np.asarray(true_lam, dtype=float)
    est_lam = np.asarray(est_lam, dtype=float)
    if true_lam.shape[0] != est_lam.shape[0]:
        raise InputError("row counts differ")
    design = np.column_stack([np.ones(est_lam.shape[0]), est_lam])
    scores = []
    for j in range(true_lam.shape[1]):
        y = true_lam[:, j]
        coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
        rss = float(np.sum((y - design @ coef) ** 2))
        tss = float(np.sum((y - y.mean()) ** 2))
        scores.append(1.0 - rss / tss if tss > 0 else float(rss <= 1e-12))
    return float(np.median(scores))


def frobenius_error(truth, estimate):
    """Frobenius distance between two matrices of equal shape."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise InputError("shapes differ")
    return float(np.linalg.norm(truth - estimate))
