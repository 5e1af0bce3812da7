"""Command-line driver: check | solve | study | report.

Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 runtime
error.  All numeric output uses full round-trip float formatting, and output
is byte-identical across reruns and thread counts for a fixed config and
seed.  Every run writes a manifest listing its outputs; manifests accumulate
in an append-only index next to the run directories.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import ConfigError, MfglqError, StructuralError
from .model import build_stacked, validate_spec
from .nashlab import (
    cost_gap_study,
    major_perturbation,
    minor_perturbation,
    simulate_realized,
    state_average_gap,
)
from .paths import TimeGrid, sample_ensemble
from .solver import picard_solve
from .wellposed import check_A4, check_global, local_horizon_bound

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_RUNTIME = 4


def _fmt(x):
    return repr(float(x))


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MFG_THREADS")
    return max(1, int(env)) if env else 1


def _out_dir(args, cfg, label):
    if args.out:
        path = Path(args.out)
    else:
        path = Path("runs") / f"{label}-{cfg.sha[:8]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir, cfg, command, params, outputs, started):
    manifest = {
        "command": command,
        "config_path": cfg.path,
        "config_sha256": cfg.sha,
        "package_version": __version__,
        "params": params,
        "outputs": sorted(outputs),
        "wall_clock_s": round(time.monotonic() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    index = out_dir.parent / "manifests.jsonl"
    with open(index, "a") as handle:
        handle.write(json.dumps({"dir": str(out_dir), **manifest}, sort_keys=True) + "\n")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row) + "\n")


# ---------------------------------------------------------------------------


def cmd_check(args):
    started = time.monotonic()
    cfg = load_config(args.config)
    report = validate_spec(cfg.spec)
    lines = []
    if report.ok:
        lines.append("spec: valid")
    else:
        for violation in report:
            lines.append(f"spec violation: {violation}")
    payload = {"violations": list(report), "eps": args.eps}
    horizon = None
    if report.ok:
        a4 = check_A4(cfg.spec)
        lines.append(
            f"terminal-weight smallness: {'PASS' if a4.passed else 'FAIL'} "
            f"(m0={_fmt(a4.m0)}, dmax={_fmt(a4.dmax)}, product={_fmt(a4.product)})"
        )
        spectral, cert = check_global(build_stacked(cfg.spec))
        lines.append(
            f"global spectral (norm variant): {'PASS' if spectral.norm_variant else 'FAIL'} "
            f"(lhs={_fmt(spectral.lhs)}, rhs={_fmt(spectral.rhs_norm)})"
        )
        lines.append(
            f"global spectral (eigen variant): {'PASS' if spectral.eigen_variant else 'FAIL'} "
            f"(rhs={_fmt(spectral.rhs_eigen)})"
        )
        lines.append(
            f"global certificate: {'PASS' if cert.passed else 'FAIL'} "
            f"(rho_cert={_fmt(cert.rho_cert) if np.isfinite(cert.rho_cert) else 'inf'}, variant={cert.variant})"
        )
        if a4.passed:
            try:
                horizon = local_horizon_bound(cfg.spec, eps=args.eps)
                lines.append(f"certified small-horizon bound (eps={_fmt(args.eps)}): T <= {_fmt(horizon)}")
            except StructuralError as exc:
                lines.append(f"small-horizon bound: unavailable ({exc})")
        else:
            lines.append("small-horizon bound: skipped (smallness check failed)")
        payload.update({
            "a4": {"m0": a4.m0, "dmax": a4.dmax, "product": a4.product, "passed": a4.passed},
            "spectral": {
                "lhs": spectral.lhs, "rhs_norm": spectral.rhs_norm,
                "rhs_eigen": spectral.rhs_eigen,
                "norm_variant": spectral.norm_variant, "eigen_variant": spectral.eigen_variant,
            },
            "certificate": cert.as_dict(),
            "horizon_bound": horizon,
        })
    else:
        lines.append("condition checks: skipped (spec invalid)")
    print("\n".join(lines))

    out_dir = _out_dir(args, cfg, "check")
    report_path = out_dir / "check_report.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, cfg, "check", {"eps": args.eps}, [str(report_path)], started)
    return EXIT_OK if report.ok else EXIT_CONFIG


def _solve_from_config(cfg, solver_params):
    grid = TimeGrid(cfg.spec.T, solver_params.steps)
    ensemble = sample_ensemble(
        grid, solver_params.paths, solver_params.particles, cfg.spec.K, solver_params.seed
    )
    return picard_solve(cfg.spec, ensemble, tol=solver_params.tol, max_iter=solver_params.max_iter)


def _export_solution(solution, out_dir):
    it = solution.iterate
    outputs = []

    def dump(name, arr, particle_axis):
        path = out_dir / f"{name}.csv"
        comps = arr.shape[-1]
        header = ["path", "particle", "node"] + [f"c{d}" for d in range(comps)]
        with open(path, "w", newline="") as handle:
            handle.write(",".join(header) + "\n")
            if particle_axis:
                paths_n, parts, nodes = arr.shape[0], arr.shape[1], arr.shape[2]
                for p in range(paths_n):
                    for i in range(parts):
                        for j in range(nodes):
                            vals = ",".join(_fmt(v) for v in arr[p, i, j])
                            handle.write(f"{p},{i},{j},{vals}\n")
            else:
                paths_n, nodes = arr.shape[0], arr.shape[1]
                for p in range(paths_n):
                    for j in range(nodes):
                        vals = ",".join(_fmt(v) for v in arr[p, j])
                        handle.write(f"{p},-1,{j},{vals}\n")
        outputs.append(str(path))

    dump("major_state", it.x0, particle_axis=False)
    dump("major_adjoint", it.p0, particle_axis=False)
    dump("major_adjoint_diffusion", it.q0, particle_axis=False)
    dump("aggregate_field", it.mean_field, particle_axis=False)
    for k in range(it.x.shape[1]):
        dump(f"minor_state_type{k}", it.x[:, k], particle_axis=True)
        dump(f"minor_adjoint_type{k}", it.p[:, k], particle_axis=True)
        dump(f"minor_adjoint_diffusion_type{k}", it.q[:, k], particle_axis=True)
        dump(f"minor_adjoint_common_type{k}", it.q_common[:, k], particle_axis=True)
        dump(f"conditional_mean_type{k}", it.cond_mean[:, k], particle_axis=False)
    return outputs


def cmd_solve(args):
    started = time.monotonic()
    cfg = load_config(args.config)
    report = validate_spec(cfg.spec)
    if not report.ok:
        for violation in report:
            print(f"spec violation: {violation}", file=sys.stderr)
        return EXIT_CONFIG
    params = cfg.solver.replaced(
        steps=args.steps, paths=args.paths, particles=args.particles,
        seed=args.seed, tol=args.tol, max_iter=args.max_iter,
    )
    solution, picard = _solve_from_config(cfg, params)
    out_dir = _out_dir(args, cfg, "solve")
    outputs = []
    report_path = out_dir / "picard_report.json"
    report_path.write_text(json.dumps(picard.as_dict(), indent=2, sort_keys=True) + "\n")
    outputs.append(str(report_path))
    if solution is not None and not args.no_surfaces:
        outputs.extend(_export_solution(solution, out_dir))
    _write_manifest(out_dir, cfg, "solve", params.__dict__, outputs, started)
    for i, (delta, ratio) in enumerate(zip(picard.deltas, (None,) + tuple(picard.ratios))):
        tail = f" ratio={_fmt(ratio)}" if ratio is not None else ""
        print(f"sweep {i + 1}: delta={_fmt(delta)}{tail}")
    if picard.converged:
        print(f"converged in {picard.iterations} sweeps (residual {_fmt(picard.final_residual)})")
        return EXIT_OK
    print(f"did not converge: {picard.message or 'max sweeps reached'}", file=sys.stderr)
    return EXIT_NO_CONVERGENCE


def _study_rows(report):
    rows = [(name, n, value) for name, n, value in report.rows()]
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def cmd_study(args):
    started = time.monotonic()
    cfg = load_config(args.config)
    report = validate_spec(cfg.spec)
    if not report.ok:
        for violation in report:
            print(f"spec violation: {violation}", file=sys.stderr)
        return EXIT_CONFIG
    study = cfg.study.replaced(
        kind=args.study, ns=args.ns, replications=args.reps, agent=args.agent
    )
    params = cfg.solver.replaced(seed=args.seed)
    threads = _threads(args)
    solution, picard = _solve_from_config(cfg, params)
    if solution is None or not picard.converged:
        print(f"solver did not converge: {picard.message or 'max sweeps reached'}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE

    out_dir = _out_dir(args, cfg, f"study-{study.kind}")
    outputs = []
    summary = {"study": study.kind, "Ns": list(study.ns), "replications": study.replications}

    if study.kind in ("state-gap", "cost-gap"):
        runs = [
            simulate_realized(
                cfg.spec, solution, n, seed=params.seed, replications=study.replications,
                threads=threads,
            )
            for n in study.ns
        ]
        fits = {}
        try:
            nash = (
                state_average_gap(solution, runs)
                if study.kind == "state-gap"
                else cost_gap_study(cfg.spec, solution, runs)
            )
            metrics = nash.metrics
            fits = {name: fit.as_dict() for name, fit in nash.fits.items()}
            summary["eps_n"] = list(nash.eps_n)
        except StructuralError as exc:
            print(f"fit refused: {exc}")
            metrics = _bare_metrics(cfg.spec, solution, runs, study.kind)
            summary["fit_refused"] = str(exc)
        csv_path = out_dir / f"{study.kind}.csv"
        rows = []
        for name, values in sorted(metrics.items()):
            for n, v in zip(study.ns, values):
                rows.append((name, n, v))
        _write_csv(csv_path, ["metric", "N", "value"], rows)
        outputs.append(str(csv_path))
        summary["metrics"] = metrics
        summary["fits"] = fits
    elif study.kind in ("nash-major", "nash-minor"):
        best_by_n = []
        detail_rows = []
        for n in study.ns:
            run = simulate_realized(
                cfg.spec, solution, n, seed=params.seed, replications=study.replications,
                threads=threads,
            )
            if study.kind == "nash-major":
                best, improvements = major_perturbation(cfg.spec, solution, run, seed=params.seed)
            else:
                best, improvements = minor_perturbation(
                    cfg.spec, solution, run, agent=study.agent, seed=params.seed
                )
            best_by_n.append(best)
            for name, value in sorted(improvements.items()):
                detail_rows.append((name, n, value))
            detail_rows.append(("best_clipped", n, best))
        csv_path = out_dir / f"{study.kind}.csv"
        _write_csv(csv_path, ["candidate", "N", "improvement"], sorted(detail_rows))
        outputs.append(str(csv_path))
        summary["epsilon_hat"] = dict(zip(map(str, study.ns), best_by_n))
    else:
        print(f"unknown study kind '{study.kind}'", file=sys.stderr)
        return EXIT_CONFIG

    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs.append(str(summary_path))
    _write_manifest(
        out_dir, cfg, f"study:{study.kind}",
        {**params.__dict__, "Ns": list(study.ns), "replications": study.replications,
         "threads": threads, "agent": study.agent},
        outputs, started,
    )
    print(f"study '{study.kind}' written to {out_dir}")
    return EXIT_OK


def _bare_metrics(spec, solution, runs, kind):
    agg = solution.iterate.mean_field
    if kind == "state-gap":
        values = []
        for run in runs:
            diff = run.x_avg - agg[run.path_indices]
            values.append(float(np.max(np.mean(np.sum(diff**2, axis=-1), axis=0))))
        return {"avg_state_gap": values}
    metrics = {"cost_gap_major": []}
    for k in range(spec.K):
        metrics[f"cost_gap_minor_{k}"] = []
    for run in runs:
        metrics["cost_gap_major"].append(
            float(np.mean(np.abs(run.cost0_realized - run.cost0_limiting)))
        )
        for k in range(spec.K):
            agent = int(np.nonzero(run.assignment.theta == k)[0][0])
            metrics[f"cost_gap_minor_{k}"].append(
                float(np.mean(np.abs(run.cost_realized[:, agent] - run.cost_limiting[:, agent])))
            )
    return metrics


def cmd_report(args):
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"no manifest at {manifest_path}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = json.loads(manifest_path.read_text())
    print(f"command: {manifest['command']}")
    print(f"config: {manifest['config_path']} (sha256 {manifest['config_sha256'][:12]})")
    print(f"version: {manifest['package_version']}, wall clock {manifest['wall_clock_s']} s")
    for key, value in sorted(manifest["params"].items()):
        print(f"  param {key} = {value}")
    for out in manifest["outputs"]:
        print(f"  output {out}")
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        for name, fit in summary.get("fits", {}).items():
            print(
                f"  fit {name}: slope {fit['slope']:.4f} "
                f"[{fit['ci_low']:.4f}, {fit['ci_high']:.4f}], R2 {fit['r_squared']:.4f}"
            )
        if "epsilon_hat" in summary:
            for n, value in summary["epsilon_hat"].items():
                print(f"  epsilon_hat(N={n}) = {value}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfglq",
        description="Constrained linear-quadratic mixed mean-field games: solve and verify",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="validate a config and run all well-posedness checks")
    p_check.add_argument("config")
    p_check.add_argument("--eps", type=float, default=0.05)
    p_check.add_argument("--out", default=None)
    p_check.set_defaults(func=cmd_check)

    p_solve = sub.add_parser("solve", help="solve the consistency system")
    p_solve.add_argument("config")
    p_solve.add_argument("--tol", type=float, default=None)
    p_solve.add_argument("--max-iter", type=int, default=None)
    p_solve.add_argument("--paths", type=int, default=None)
    p_solve.add_argument("--particles", type=int, default=None)
    p_solve.add_argument("--steps", type=int, default=None)
    p_solve.add_argument("--seed", type=int, default=None)
    p_solve.add_argument("--no-surfaces", action="store_true")
    p_solve.add_argument("--out", default=None)
    p_solve.add_argument("--threads", type=int, default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_study = sub.add_parser("study", help="finite-population convergence and deviation studies")
    p_study.add_argument("config")
    p_study.add_argument(
        "--study", required=True,
        choices=["state-gap", "cost-gap", "nash-major", "nash-minor"],
    )
    p_study.add_argument("--Ns", dest="ns", type=lambda s: tuple(int(x) for x in s.split(",")), default=None)
    p_study.add_argument("--reps", type=int, default=None)
    p_study.add_argument("--seed", type=int, default=None)
    p_study.add_argument("--agent", type=int, default=None)
    p_study.add_argument("--threads", type=int, default=None)
    p_study.add_argument("--out", default=None)
    p_study.set_defaults(func=cmd_study)

    p_report = sub.add_parser("report", help="print the manifest and summary of a run directory")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StructuralError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MfglqError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
