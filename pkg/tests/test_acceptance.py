"""Quantitative acceptance gates for the whole package.

Each test checks one end-to-end property at a fixed tolerance and prints
a single PASS or FAIL line with its measurements, so a full run gives a
nine-line scoreboard. Budgets are wall-clock ceilings for the slowest
reasonable laptop; measured times here are far below them.
"""

import math
import time

import numpy as np
import pytest

from cases import A1, A2, LA1, LA2, LAM5, Q_REPAIRED, QS_REPAIRED
from mcutil import batch_means_se, draw_dl_direct
from sufa.datagen import (gen_shared_loading, gen_study_loadings,
                          sample_design, simulate_msfa)
from sufa.identifiability import (check_dimension_condition,
                                  detect_information_switching)
from sufa.likelihood import grad_log_posterior, parallel_grad_reduce
from sufa.model import (ModelDims, ParamSet, StudySummary,
                        marginal_covariance, shared_covariance,
                        sufficient_stats, woodbury_inverse, woodbury_logdet)
from sufa.postprocess import (align_parameter_draws, alignment_r2,
                              frobenius_error, wbic)
from sufa.priors import DLState, default_hyperparameters, sample_dl_state
from sufa.sampler import (ChainConfig, HmcTuning, hamiltonian, leapfrog,
                          run_chain)

HYPER = default_hyperparameters()


def gate(number, passed, detail, elapsed, budget):
    verdict = "PASS" if (passed and elapsed < budget) else "FAIL"
    line = (f"ACCEPTANCE {number}: {verdict} - {detail} "
            f"[{elapsed:.1f}s of {budget:.0f}s budget]")
    print(line, flush=True)
    assert passed, line
    assert elapsed < budget, line


def fd_gradient(fun, vec, h=1e-5):
    out = np.empty_like(vec)
    for i in range(vec.size):
        step = h * max(1.0, abs(vec[i]))
        up, dn = vec.copy(), vec.copy()
        up[i] += step
        dn[i] -= step
        out[i] = (fun(up) - fun(dn)) / (2.0 * step)
    return out


def test_criterion_1_gradient_matches_finite_differences():
    start = time.perf_counter()
    worst = 0.0
    for trial in range(50):
        gen = np.random.default_rng(9000 + trial)
        d = int(gen.integers(3, 13))
        q = int(gen.integers(1, min(4, d)))
        n_studies = int(gen.integers(1, 4))
        q_s = tuple(int(v) for v in gen.integers(0, 4, size=n_studies))
        params = ParamSet(gen.uniform(0.3, 1.5) * gen.normal(size=(d, q)),
                          gen.uniform(-1.0, 1.0, size=d),
                          [0.5 * gen.normal(size=(q, qs)) for qs in q_s])
        studies = []
        for s in range(n_studies):
            cov = marginal_covariance(params, s)
            n = int(gen.integers(3, 30))
            y = gen.multivariate_normal(np.zeros(d), cov, size=n)
            studies.append(sufficient_stats(y))
        dl = sample_dl_state(d, q, HYPER.a, gen)
        _, _, grad = grad_log_posterior(params, dl, HYPER, studies)
        dims = params.dims

        def fun(vec):
            return grad_log_posterior(ParamSet.unpack(vec, dims), dl, HYPER,
                                      studies)[0]

        fd = fd_gradient(fun, params.pack())
        err = np.linalg.norm(grad.pack() - fd) / max(1.0, np.linalg.norm(fd))
        worst = max(worst, err)
    gate(1, worst <= 1e-5,
         f"worst relative gradient error {worst:.2e} over 50 instances "
         f"(tolerance 1e-5)", time.perf_counter() - start, 60)


def test_criterion_2_low_rank_algebra_matches_dense():
    start = time.perf_counter()
    worst_inv, worst_logdet = 0.0, 0.0
    for trial in range(100):
        gen = np.random.default_rng(9100 + trial)
        d = int(gen.integers(2, 51))
        k = int(gen.integers(1, 13))
        lam_tilde = gen.uniform(0.3, 1.5) * gen.normal(size=(d, k))
        log_delta = gen.uniform(-2.0, 2.0, size=d)
        dense = lam_tilde @ lam_tilde.T + np.diag(np.exp(log_delta))
        worst_inv = max(worst_inv, float(np.abs(
            woodbury_inverse(lam_tilde, log_delta)
            - np.linalg.inv(dense)).max()))
        worst_logdet = max(worst_logdet, abs(
            woodbury_logdet(lam_tilde, log_delta)
            - np.linalg.slogdet(dense)[1]))
    gate(2, worst_inv <= 1e-8 and worst_logdet <= 1e-8,
         f"inverse error {worst_inv:.2e}, log-det error {worst_logdet:.2e} "
         f"over 100 instances (tolerance 1e-8)",
         time.perf_counter() - start, 60)


def test_criterion_3_worked_example_reproduction():
    start = time.perf_counter()
    blocks_exact = (np.array_equal(LAM5 @ A1, LA1)
                    and np.array_equal(LAM5 @ A2, LA2))
    switching = detect_information_switching(
        [LAM5 @ A1, LAM5 @ A2]).switching
    repaired_ok = check_dimension_condition(Q_REPAIRED, QS_REPAIRED)
    gate(3, blocks_exact and switching and repaired_ok,
         f"products exact={blocks_exact}, switching detected={switching}, "
         f"repaired layout accepted={repaired_ok}",
         time.perf_counter() - start, 60)


def test_criterion_4_sampler_reproduces_the_prior():
    # the loading/scale hierarchy mixes slowly (integrated autocorrelation
    # of |lam| is a few hundred iterations with zero data), so the 10^4
    # retained draws are thinned from a longer run to keep the batch-means
    # standard errors honest
    start = time.perf_counter()
    d, q = 3, 1
    dims = ModelDims(d, q, (0,))
    studies = [StudySummary(np.zeros((d, d)), 0)]
    config = ChainConfig(n_iterations=102_000, burn_in=2000, thinning=10,
                         init_mode="prior",
                         tuning=HmcTuning(max_step_size=0.4))
    out = run_chain(studies, dims, HYPER, config, np.random.default_rng(41))
    chain = np.stack([p.lam.ravel() for p in out.draws])
    direct = draw_dl_direct(d, q, HYPER.a, 400_000,
                            np.random.default_rng(42))
    worst_z = 0.0
    for stat in (np.abs, np.square):
        # the entries share one marginal, so pool them per kept draw
        cs, ds = stat(chain).mean(axis=1), stat(direct).ravel()
        se = math.hypot(batch_means_se(cs),
                        ds.std(ddof=1) / math.sqrt(ds.size))
        worst_z = max(worst_z, abs(cs.mean() - ds.mean()) / se)
    gate(4, chain.shape[0] == 10_000 and worst_z < 4.0,
         f"max |z| {worst_z:.2f} over E|lam| and E lam^2 "
         f"({chain.shape[0]} post-burn-in draws, threshold 4 SEs)",
         time.perf_counter() - start, 300)


def test_criterion_5_posterior_tracks_sample_covariance():
    start = time.perf_counter()
    gen = np.random.default_rng(50)
    lam_true = np.array([[1.2], [-0.8], [0.5]])
    n = 2000
    y = (gen.standard_normal((n, 1)) @ lam_true.T
         + math.sqrt(0.5) * gen.standard_normal((n, 3)))
    y = y - y.mean(axis=0)
    sample_cov = y.T @ y / n
    config = ChainConfig(n_iterations=4000, burn_in=1000, thinning=3)
    out = run_chain([sufficient_stats(y)], ModelDims(3, 1, (0,), (n,)),
                    HYPER, config, np.random.default_rng(51))
    sigma_hat = np.mean([shared_covariance(p) for p in out.draws], axis=0)
    rel = (frobenius_error(sample_cov, sigma_hat)
           / np.linalg.norm(sample_cov))
    gate(5, rel <= 0.10,
         f"posterior-mean covariance within {100 * rel:.2f}% of the sample "
         f"covariance (tolerance 10%)", time.perf_counter() - start, 300)


def test_criterion_6_end_to_end_multi_study_replication():
    start = time.perf_counter()
    d, s_count, q = 50, 5, 10
    r2s, decreases = [], []
    for rep in range(5):
        rep_seed = 100 + rep
        rng = np.random.default_rng(rep_seed)
        lam = gen_shared_loading("FM1", d, q, rng)
        n_s, q_s_true = sample_design(d, s_count, q, rng)
        phis = gen_study_loadings("slight", lam, q_s_true, rng)
        truth = lam @ lam.T + 0.5 * np.eye(d)
        errors = {}
        for mult in (1, 2):
            scaled = tuple(int(n) * mult for n in n_s)
            data = simulate_msfa(lam, phis, 0.5, scaled, rng)
            studies = [sufficient_stats(y) for y in data]
            dims = ModelDims(d, q, (2,) * s_count, scaled)
            config = ChainConfig(n_iterations=7500, burn_in=2500, thinning=5)
            out = run_chain(studies, dims, HYPER, config,
                            np.random.default_rng(rep_seed + 7))
            aligned, _ = align_parameter_draws(out.draws)
            lam_hat = np.mean([p.lam for p in aligned], axis=0)
            sigma_hat = np.mean([shared_covariance(p) for p in out.draws],
                                axis=0)
            if mult == 1:
                r2s.append(alignment_r2(lam, lam_hat))
            errors[mult] = frobenius_error(truth, sigma_hat)
        decreases.append(errors[2] < errors[1])
    median_r2 = float(np.median(r2s))
    n_decreased = sum(decreases)
    gate(6, median_r2 >= 0.8 and n_decreased >= 4,
         f"median alignment R^2 {median_r2:.3f} (gate 0.8); covariance "
         f"error fell with doubled pooled n in {n_decreased}/5 replicates "
         f"(gate 4/5)", time.perf_counter() - start, 1800)


def test_criterion_7_iteration_cost_free_of_sample_size():
    start = time.perf_counter()
    rng = np.random.default_rng(70)
    d, s_count, q = 50, 5, 10
    lam = gen_shared_loading("FM1", d, q, rng)
    n_s, q_s_true = sample_design(d, s_count, q, rng)
    phis = gen_study_loadings("slight", lam, q_s_true, rng)
    dims_q_s = (2,) * s_count
    config = ChainConfig(n_iterations=400, burn_in=0, thinning=40)

    warm = simulate_msfa(lam, phis, 0.5, n_s, rng)
    run_chain([sufficient_stats(y) for y in warm],
              ModelDims(d, q, dims_q_s, n_s), HYPER,
              ChainConfig(n_iterations=50, burn_in=0, thinning=10),
              np.random.default_rng(0))

    seconds = {}
    for _ in range(2):
        for mult in (1, 10, 25):
            scaled = tuple(int(n) * mult for n in n_s)
            data = simulate_msfa(lam, phis, 0.5, scaled, rng)
            studies = [sufficient_stats(y) for y in data]
            out = run_chain(studies, ModelDims(d, q, dims_q_s, scaled),
                            HYPER, config, np.random.default_rng(71 + mult))
            per = out.elapsed_seconds / config.n_iterations
            seconds[mult] = min(per, seconds.get(mult, math.inf))
    values = np.array([seconds[m] for m in (1, 10, 25)])
    spread = float(values.max() / values.min() - 1.0)
    gate(7, spread < 0.20,
         f"per-iteration seconds {[f'{v:.4f}' for v in values]} across "
         f"multipliers (1, 10, 25); spread {100 * spread:.1f}% (gate 20%)",
         time.perf_counter() - start, 600)


def test_criterion_8_information_criterion_prefers_correct_rank():
    start = time.perf_counter()
    d, q_true, n_s = 20, 3, (100, 100)
    beta = 1.0 / math.log(sum(n_s))
    wins = 0
    for rep in range(10):
        rng = np.random.default_rng(300 + rep)
        lam = gen_shared_loading("FM1", d, q_true, rng)
        phis = gen_study_loadings("slight", lam, (1, 1), rng)
        data = simulate_msfa(lam, phis, 0.5, n_s, rng)
        studies = [sufficient_stats(y - y.mean(axis=0)) for y in data]
        scores = {}
        for q_fit in (q_true, 3 * q_true):
            dims = ModelDims(d, q_fit, (1, 1), n_s)
            config = ChainConfig(n_iterations=1500, burn_in=500, thinning=2,
                                 beta=beta)
            out = run_chain(studies, dims, HYPER, config,
                            np.random.default_rng(300 + rep))
            scores[q_fit] = wbic(out, studies)
        wins += scores[q_true] < scores[3 * q_true]
    gate(8, wins >= 7,
         f"correct rank won the information criterion in {wins}/10 "
         f"replicates (gate 7/10)", time.perf_counter() - start, 1200)


def test_criterion_9_integrator_properties():
    start = time.perf_counter()

    def quadratic(vec):
        vec = np.asarray(vec, dtype=float)
        return -0.5 * float(vec @ vec), 0.0, -vec

    gen = np.random.default_rng(90)

    # round trip: integrate forward, flip momentum, integrate back
    dims = ModelDims(5, 2, (1,))
    dl = DLState(np.ones((5, 2)), np.full((5, 2), 0.1), 10.0, HYPER.a)
    studies = [sufficient_stats(gen.normal(size=(25, 5)))]

    def model_fn(vec):
        params = ParamSet.unpack(vec, dims)
        lp, ll, grad = parallel_grad_reduce(params, dl, HYPER, studies)
        return lp, ll, grad.pack()

    round_trip = 0.0
    for grad_fn, size, step in ((quadratic, 6, 0.1), (model_fn,
                                                      dims.n_params, 0.02)):
        v0, p0 = gen.normal(size=size), gen.normal(size=size)
        v1, p1, _, _, _ = leapfrog(v0, p0, grad_fn, step, 20)
        v2, p2, _, _, _ = leapfrog(v1, -p1, grad_fn, step, 20)
        round_trip = max(round_trip, float(np.abs(v2 - v0).max()),
                         float(np.abs(p2 + p0).max()))

    err_coarse, err_fine = 0.0, 0.0
    for _ in range(20):
        v0, p0 = gen.normal(size=8), gen.normal(size=8)
        h0 = hamiltonian(quadratic(v0)[0], p0)
        _, p1, lp1, _, _ = leapfrog(v0, p0, quadratic, 0.2, 25)
        err_coarse += abs(hamiltonian(lp1, p1) - h0)
        _, p2, lp2, _, _ = leapfrog(v0, p0, quadratic, 0.1, 50)
        err_fine += abs(hamiltonian(lp2, p2) - h0)
    ratio = err_coarse / err_fine
    gate(9, round_trip <= 1e-8 and 3.0 <= ratio <= 5.0,
         f"round-trip error {round_trip:.2e} (tolerance 1e-8); energy error "
         f"shrank by {ratio:.2f} when the step halved (gate [3, 5])",
         time.perf_counter() - start, 60)
