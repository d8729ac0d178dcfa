"""Command-line interface: fitting, simulation, reporting and checks."""

import argparse
import json
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .datagen import (SCENARIOS, gen_shared_loading, gen_study_loadings,
                      sample_design, simulate_msfa)
from .dataio import (align_features, center, load_draws, load_study_csv,
                     output_lock, save_draws, write_manifest, write_matrix_csv)
from .errors import (ConfigError, DimensionError, DomainError, InputError,
                     NumericError, SufaError)
from .figures import correlation_heatmap, loading_heatmap, timing_plot
from .identifiability import (check_dimension_condition,
                              detect_information_switching,
                              select_num_factors)
from .model import (ModelDims, StudySummary, correlation_matrix,
                    shared_covariance, sufficient_stats)
from .postprocess import (align_parameter_draws, alignment_r2,
                          frobenius_error, sparsify_by_ci,
                          study_specific_loadings, wbic)
from .priors import PriorHyper, default_hyperparameters
from .sampler import ChainConfig, HmcTuning, run_chain


def _workers():
    raw = os.environ.get("SUFA_WORKERS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"SUFA_WORKERS must be an integer, got {raw!r}") \
            from None
    if value < 1:
        raise ConfigError("SUFA_WORKERS must be at least 1")
    return value


def _require(config, key, kind, where):
    if key not in config:
        raise ConfigError(f"{where} must set {key!r}")
    value = config[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{where}: {key!r} must be {kind.__name__}")
    return value


def _load_config(path):
    try:
        with open(path) as handle:
            return json.load(handle)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None


def _hyper_from(config):
    base = default_hyperparameters()
    overrides = config.get("hyper", {})
    fields = {"a": base.a, "b_a": base.b_a, "mu_delta": base.mu_delta,
              "sigma2_delta": base.sigma2_delta}
    unknown = set(overrides) - set(fields)
    if unknown:
        raise ConfigError(f"unknown hyperparameter names {sorted(unknown)}")
    fields.update(overrides)
    return PriorHyper(**fields)


def _chain_from(config, workers):
    chain = dict(config.get("chain", {}))
    tuning = HmcTuning(
        max_step_size=chain.pop("max_step_size", 0.01),
        mean_steps=chain.pop("mean_steps", 5.0))
    parsed = ChainConfig(
        n_iterations=chain.pop("iterations", 7500),
        burn_in=chain.pop("burn_in", 2500),
        thinning=chain.pop("thinning", 5),
        beta=chain.pop("beta", 1.0),
        workers=workers,
        tau_order=chain.pop("tau_order", "literature"),
        init_mode=chain.pop("init", "data"),
        tuning=tuning)
    if chain:
        raise ConfigError(f"unknown chain settings {sorted(chain)}")
    return parsed


def _args_as_config(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _load_centered_studies(paths, centering, group_column):
    loaded = [load_study_csv(path, group_column=group_column)
              for path in paths]
    matrices, names = align_features([m for m, _, _ in loaded],
                                     [n for _, n, _ in loaded])
    centered = [center(m, mode=centering, groups=g)
                for m, (_, _, g) in zip(matrices, loaded)]
    return centered, names


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args):
    config = _load_config(args.config)
    seed = _require(config, "seed", int, "fit config")
    paths = _require(config, "studies", list, "fit config")
    out_dir = Path(args.out or config.get("out_dir") or
                   _require(config, "out_dir", str, "fit config"))
    centering = config.get("centering", "per-study")
    workers = _workers()
    centered, names = _load_centered_studies(
        paths, centering, config.get("group_column"))
    studies = [sufficient_stats(y) for y in centered]
    n_s = tuple(study.n for study in studies)

    if "dims" in config:
        q = _require(config["dims"], "q", int, "dims")
        q_s = tuple(_require(config["dims"], "q_s", list, "dims"))
        if len(q_s) != len(studies):
            raise ConfigError(
                f"dims.q_s lists {len(q_s)} studies, data has {len(studies)}")
    else:
        pooled = np.vstack(centered)
        q, q_s = select_num_factors(pooled - pooled.mean(axis=0),
                                    len(studies),
                                    config.get("rank_threshold", 0.95))
    if sum(q_s) > q:
        raise ConfigError(
            "study-specific ranks must sum to at most the shared rank "
            f"(got {sum(q_s)} > {q}); shrink q_s or raise q")
    dims = ModelDims(len(names), q, q_s, n_s)
    hyper = _hyper_from(config)
    chain_config = _chain_from(config, workers)

    with output_lock(out_dir):
        output = run_chain(studies, dims, hyper, chain_config,
                           np.random.default_rng(seed))
        draws_path = save_draws(out_dir / "draws.bin", output, n_s=n_s)
        with open(out_dir / "features.json", "w") as handle:
            json.dump(names, handle, indent=1)
        write_manifest(
            out_dir, config, seed,
            timings={"chain_seconds": output.elapsed_seconds,
                     "seconds_per_iteration":
                         output.elapsed_seconds / chain_config.n_iterations},
            inputs=paths,
            outputs=[draws_path, Path(str(draws_path) + ".json"),
                     out_dir / "features.json"])
    print(f"fit: {output.n_draws} draws, acceptance rate "
          f"{output.acceptance_rate:.3f}, q={q}, q_s={list(q_s)}")


def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    lam = gen_shared_loading(args.scenario, args.d, args.q, rng)
    n_s, q_s = sample_design(args.d, args.studies, args.q, rng)
    n_s = tuple(n * args.n_multiplier for n in n_s)
    phis = gen_study_loadings(args.mode, lam, q_s, rng,
                              scale=not args.no_scale)
    datasets = simulate_msfa(lam, phis, args.delta, n_s, rng)
    header = [f"f{j}" for j in range(args.d)]
    with output_lock(args.out) as out_dir:
        outputs = [write_matrix_csv(out_dir / f"study_{s + 1}.csv", y, header)
                   for s, y in enumerate(datasets)]
        outputs.append(write_matrix_csv(out_dir / "truth_loading.csv", lam))
        for s, phi in enumerate(phis):
            outputs.append(write_matrix_csv(
                out_dir / f"truth_study_loading_{s + 1}.csv", phi))
        design = {"scenario": args.scenario, "mode": args.mode, "d": args.d,
                  "q": args.q, "n_s": list(n_s), "q_s": list(q_s),
                  "delta": args.delta, "seed": args.seed}
        design_path = out_dir / "design.json"
        with open(design_path, "w") as handle:
            json.dump(design, handle, sort_keys=True, indent=1)
        outputs.append(design_path)
        write_manifest(out_dir, design, args.seed, outputs=outputs)
    print(f"simulate: wrote {len(datasets)} studies to {args.out} "
          f"(n_s={list(n_s)}, q_s={list(q_s)})")


def cmd_postprocess(args):
    output, sidecar = load_draws(args.draws)
    if output.n_draws == 0:
        raise InputError("chain holds no stored draws")
    aligned, result = align_parameter_draws(output.draws,
                                            optimal=args.optimal)
    with output_lock(args.out) as out_dir:
        outputs = []
        lam_mean = np.mean([p.lam for p in aligned], axis=0)
        outputs.append(write_matrix_csv(out_dir / "loading_mean.csv",
                                        lam_mean))
        sparse = sparsify_by_ci([p.lam for p in aligned], level=args.level)
        outputs.append(write_matrix_csv(out_dir / "loading_sparse.csv",
                                        sparse))
        outputs.append(loading_heatmap(lam_mean, out_dir / "loading_mean.png",
                                       title="posterior mean loadings"))
        sigma_mean = np.mean([shared_covariance(p) for p in output.draws],
                             axis=0)
        outputs.append(write_matrix_csv(out_dir / "sigma_mean.csv",
                                        sigma_mean))
        corr = correlation_matrix(sigma_mean)
        outputs.append(write_matrix_csv(out_dir / "correlation.csv", corr))
        outputs.append(correlation_heatmap(
            corr, out_dir / "correlation.png", mask_below=args.mask_below))
        for s, study_result in enumerate(study_specific_loadings(
                output.draws, optimal=args.optimal)):
            if study_result.aligned[0].shape[1] == 0:
                continue
            mean_s = np.mean(study_result.aligned, axis=0)
            outputs.append(write_matrix_csv(
                out_dir / f"study_loading_mean_{s + 1}.csv", mean_s))
            outputs.append(loading_heatmap(
                mean_s, out_dir / f"study_loading_mean_{s + 1}.png",
                title=f"study {s + 1} loadings"))
        summary = {
            "n_draws": output.n_draws,
            "acceptance_rate": (output.acceptance_rate
                                if output.accepted.size else None),
            "pivot_index": result.pivot_index,
            "ci_level": args.level,
        }
        if args.truth_loading:
            truth = np.loadtxt(args.truth_loading, delimiter=",", ndmin=2)
            summary["alignment_r2"] = alignment_r2(truth, lam_mean)
            truth_sigma = truth @ truth.T
            if args.truth_delta is not None:
                truth_sigma += args.truth_delta * np.eye(truth.shape[0])
            summary["sigma_frobenius_error"] = frobenius_error(truth_sigma,
                                                               sigma_mean)
        summary_path = out_dir / "summary.json"
        with open(summary_path, "w") as handle:
            json.dump(summary, handle, sort_keys=True, indent=1)
        outputs.append(summary_path)
        write_manifest(out_dir, _args_as_config(args), sidecar.get("seed"),
                       inputs=[args.draws], outputs=outputs)
    print(f"postprocess: wrote summaries for {output.n_draws} draws "
          f"to {args.out}")


def cmd_wbic(args):
    output, sidecar = load_draws(args.draws)
    n_s = sidecar.get("n_s")
    if not n_s:
        raise InputError("sidecar records no per-study sample sizes")
    studies = [SimpleNamespace(n=n) for n in n_s]
    value = wbic(output, studies)
    print(json.dumps({"wbic": value, "beta": output.beta,
                      "pooled_n": sum(n_s), "n_draws": output.n_draws}))


def cmd_check_identifiability(args):
    report = {}
    if args.q is not None:
        q_s = args.q_s or []
        report["dimension_condition"] = {
            "q": args.q, "q_s": q_s,
            "satisfied": check_dimension_condition(args.q, q_s)}
    if args.a_files:
        mats = [np.loadtxt(path, delimiter=",", ndmin=2)
                for path in args.a_files]
        verdict = detect_information_switching(mats, tol=args.tol)
        report["information_switching"] = {
            "switching": verdict.switching,
            "intersection_dim": verdict.intersection_dim,
            "ranks": list(verdict.ranks),
            "all_rank_deficient": verdict.all_rank_deficient}
    if not report:
        raise ConfigError("nothing to check: pass --q/--q-s or --a-files")
    print(json.dumps(report, sort_keys=True))


def cmd_select_rank(args):
    centered, names = _load_centered_studies(args.data, args.centering,
                                             args.group_column)
    pooled = np.vstack(centered)
    q_hat, q_s = select_num_factors(pooled - pooled.mean(axis=0),
                                    len(args.data), args.threshold)
    print(json.dumps({"q": q_hat, "q_s": list(q_s), "d": len(names),
                      "pooled_n": int(pooled.shape[0])}))


def cmd_benchmark(args):
    rng = np.random.default_rng(args.seed)
    lam = gen_shared_loading("FM1", args.d, args.q, rng)
    n_s, q_s = sample_design(args.d, args.studies, args.q, rng)
    phis = gen_study_loadings("slight", lam, q_s, rng)
    per_study = max(1, args.q // args.studies)
    dims_q_s = (per_study,) * args.studies
    hyper = default_hyperparameters()
    config = ChainConfig(n_iterations=args.iterations, burn_in=0,
                         thinning=max(1, args.iterations // 10),
                         workers=_workers())
    rows = []
    with output_lock(args.out) as out_dir:
        for multiplier in args.multipliers:
            scaled = tuple(n * multiplier for n in n_s)
            datasets = simulate_msfa(lam, phis, args.delta, scaled, rng)
            studies = [sufficient_stats(y) for y in datasets]
            dims = ModelDims(args.d, args.q, dims_q_s, scaled)
            output = run_chain(studies, dims, hyper, config,
                               np.random.default_rng(args.seed + multiplier))
            rows.append([multiplier, sum(scaled),
                         output.elapsed_seconds / args.iterations])
        table = np.array(rows)
        outputs = [write_matrix_csv(out_dir / "timing.csv", table,
                                    header=["multiplier", "pooled_n",
                                            "seconds_per_iteration"])]
        outputs.append(timing_plot(table[:, 0], table[:, 2],
                                   out_dir / "timing.png"))
        write_manifest(out_dir, _args_as_config(args), args.seed,
                       outputs=outputs)
    spread = table[:, 2].max() / table[:, 2].min() - 1.0
    print(f"benchmark: per-iteration spread {100 * spread:.1f}% across "
          f"multipliers {list(table[:, 0])}")


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sufa",
        description="Shared and study-specific covariance across studies")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the sampler on study CSVs")
    fit.add_argument("--config", required=True)
    fit.add_argument("--out", default=None)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="write synthetic study CSVs")
    sim.add_argument("--scenario", choices=SCENARIOS, default="FM1")
    sim.add_argument("--d", type=int, required=True)
    sim.add_argument("--q", type=int, required=True)
    sim.add_argument("--studies", type=int, default=5)
    sim.add_argument("--mode", choices=("slight", "complete"),
                     default="slight")
    sim.add_argument("--delta", type=float, default=0.5)
    sim.add_argument("--n-multiplier", type=int, default=1)
    sim.add_argument("--no-scale", action="store_true")
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    post = sub.add_parser("postprocess",
                          help="align draws and write summaries and figures")
    post.add_argument("--draws", required=True)
    post.add_argument("--out", required=True)
    post.add_argument("--level", type=float, default=0.95)
    post.add_argument("--mask-below", type=float, default=0.1)
    post.add_argument("--optimal", action="store_true")
    post.add_argument("--truth-loading", default=None)
    post.add_argument("--truth-delta", type=float, default=None)
    post.set_defaults(func=cmd_postprocess)

    wb = sub.add_parser("wbic", help="information criterion of a tempered "
                                     "chain")
    wb.add_argument("--draws", required=True)
    wb.set_defaults(func=cmd_wbic)

    chk = sub.add_parser("check-identifiability",
                         help="rank condition and shared-direction check")
    chk.add_argument("--q", type=int, default=None)
    chk.add_argument("--q-s", type=int, nargs="*", default=None)
    chk.add_argument("--a-files", nargs="*", default=None)
    chk.add_argument("--tol", type=float, default=1e-8)
    chk.set_defaults(func=cmd_check_identifiability)

    sel = sub.add_parser("select-rank", help="latent rank from pooled data")
    sel.add_argument("--data", nargs="+", required=True)
    sel.add_argument("--threshold", type=float, default=0.95)
    sel.add_argument("--centering", default="per-study")
    sel.add_argument("--group-column", default=None)
    sel.set_defaults(func=cmd_select_rank)

    bench = sub.add_parser("benchmark",
                           help="per-iteration cost across sample sizes")
    bench.add_argument("--d", type=int, default=50)
    bench.add_argument("--q", type=int, default=10)
    bench.add_argument("--studies", type=int, default=5)
    bench.add_argument("--multipliers", type=int, nargs="+",
                       default=[1, 10, 25])
    bench.add_argument("--iterations", type=int, default=200)
    bench.add_argument("--delta", type=float, default=0.5)
    bench.add_argument("--seed", type=int, required=True)
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (InputError, DimensionError, DomainError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
