"""Synthetic multi-study generators for loading patterns and datasets."""

import math

import numpy as np

from .errors import InputError

SCENARIOS = ("FM1", "FM2", "FM3")

# ---------------------------------------------------------------------------
# shared loading patterns
# ---------------------------------------------------------------------------


def _fill_consecutive(column, rows, rng):
    """Place one consecutive block covering 25% of the given row range.

    The start is uniform over all positions and the block wraps around, so
    every row is covered with equal probability; anchored starts would
    leave the extreme rows almost always zero and trigger mass repairs.
    """
    length = int(round(0.25 * rows.size))
    start = int(rng.integers(0, rows.size))
    idx = rows[(start + np.arange(length)) % rows.size]
    column[idx] = rng.uniform(-2.0, 2.0, size=length)


def _repair_null_rows(lam, rng):
    """Give every all-zero row a handful of nonzero entries."""
    d, q = lam.shape
    fill = min(5, q)
    for j in np.flatnonzero(~lam.any(axis=1)):
        cols = rng.choice(q, size=fill, replace=False)
        lam[j, cols] = rng.uniform(-2.0, 2.0, size=fill)


def gen_shared_loading(scenario, d, q, rng):
    """Sparse d x q loading matrix under one of three fill patterns.

    FM1 places one consecutive 25% block per column, FM2 places one such
    block independently in each half of the rows, FM3 scatters 25% of the
    entries per column. All-zero rows are repaired afterwards.
    """
    if scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {scenario!r}; pick from {SCENARIOS}")
    if d < 20:
        raise InputError("d must be at least 20 for the sparsity patterns")
    if q < 1:
        raise InputError("q must be at least 1")
    lam = np.zeros((d, q))
    all_rows = np.arange(d)
    for h in range(q):
        if scenario == "FM1":
            _fill_consecutive(lam[:, h], all_rows, rng)
        elif scenario == "FM2":
            _fill_consecutive(lam[:, h], all_rows[:d // 2], rng)
            _fill_consecutive(lam[:, h], all_rows[d // 2:], rng)
        else:
            count = int(round(0.25 * d))
            idx = rng.choice(d, size=count, replace=False)
            lam[idx, h] = rng.uniform(-2.0, 2.0, size=count)
    _repair_null_rows(lam, rng)
    return lam


# ---------------------------------------------------------------------------
# study-specific loadings
# ---------------------------------------------------------------------------


def gen_study_loadings(mode, lam, q_s, rng, a_sd=0.25, e_sd=0.10, scale=True):
    """Per-study loadings either near the shared column space or fully
    outside it.

    slight: Phi_s = Lam A_s + E_s with Gaussian A and error entries.
    complete: orthonormal blocks from the orthogonal complement of the
    shared column space, disjoint across studies so cross-study products
    vanish; optionally rescaled so column magnitudes are comparable to the
    shared loadings.
    """
    lam = np.asarray(lam, dtype=float)
    d, q = lam.shape
    if mode == "slight":
        return [lam @ (a_sd * rng.normal(size=(q, qs)))
                + e_sd * rng.normal(size=(d, qs)) for qs in q_s]
    if mode != "complete":
        raise InputError("mode must be 'slight' or 'complete'")
    u, s, _ = np.linalg.svd(lam, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size and s[0] > 0 else 0
    if sum(q_s) > d - rank:
        raise InputError(
            f"null space of the shared loadings has dimension {d - rank}, "
            f"too small for study ranks summing to {sum(q_s)}")
    factor = 1.0
    if scale:
        target = float(np.median(np.mean(lam ** 2, axis=0)))
        factor = math.sqrt(target * d) if target > 0 else 1.0
    out, offset = [], rank
    for qs in q_s:
        out.append(factor * u[:, offset:offset + qs])
        offset += qs
    return out


# ---------------------------------------------------------------------------
# dataset simulation
# ---------------------------------------------------------------------------


def simulate_msfa(lam, phi_list, delta_diag, n_s, rng):
    """Draw per-study data with shared, study-specific and noise factors."""
    lam = np.asarray(lam, dtype=float)
    d, q = lam.shape
    delta_diag = np.broadcast_to(np.asarray(delta_diag, dtype=float), d)
    if np.any(delta_diag <= 0):
        raise InputError("noise variances must be positive")
    if len(phi_list) != len(n_s):
        raise InputError("phi_list and n_s must have matching lengths")
    noise_sd = np.sqrt(delta_diag)
    out = []
    for phi, n in zip(phi_list, n_s):
        phi = np.asarray(phi, dtype=float)
        eta = rng.standard_normal((n, q))
        zeta = rng.standard_normal((n, phi.shape[1]))
        eps = noise_sd * rng.standard_normal((n, d))
        out.append(eta @ lam.T + zeta @ phi.T + eps)
    return out


def sample_design(d, n_studies, q, rng):
    """Random per-study sample sizes and ranks for simulation studies.

    Sample sizes are Poisson with mean d/S clamped below at d/S; ranks are
    Poisson with mean q/S, redrawn until at least one study gets a factor.
    """
    if n_studies < 1:
        raise InputError("need at least one study")
    mean = d / n_studies
    floor = math.ceil(mean)
    n_s = tuple(int(max(rng.poisson(mean), floor)) for _ in range(n_studies))
    for _ in range(1000):
        q_s = tuple(int(v) for v in rng.poisson(q / n_studies, size=n_studies))
        if sum(q_s) >= 1:
            return n_s, q_s
    raise InputError("failed to draw a usable set of study ranks")
