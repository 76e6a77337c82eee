"""Experiment runner.

Subcommands: ``run`` (one flow per config; several configs run in a worker
pool with ``--jobs``), ``grow``/``eci`` (expansion loop), ``spectrum``
(kernel eigenvalue tables), ``coverage-demo`` (plane-coverage brute force),
and ``analyze`` (re-run analysis on an existing trace file).

Exit codes: 0 success, 1 configuration error, 2 divergence, 3 expansion
rejected.  Output payloads are byte-identical across repeated runs with
the same config and seed; only manifest timestamps differ.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis as an
from . import architectures as arch_mod
from . import config as config_mod
from . import flows as flow_mod
from . import growth as growth_mod
from . import spaces
from . import traceio
from .errors import ConfigurationError, ExpansionRejectedError, GradlabError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_EXPANSION_REJECTED = 3

OUTPUT_DIR_ENV = "GRADLAB_OUT"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _resolve_out_dir(args, cfg) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif os.environ.get(OUTPUT_DIR_ENV):
        out = Path(os.environ[OUTPUT_DIR_ENV])
    elif cfg is not None and cfg.get("output", "dir") is not None:
        out = Path(cfg.get("output", "dir"))
    else:
        out = Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_analysis_csv(path, rows):
    header = [
        "run_id", "alpha_hat", "c_hat", "li_fit_quality", "li_points",
        "rate_kind", "rate", "exponent", "predicted_alpha",
        "critical_case", "r_hat", "alpha_star",
    ]
    traceio.write_csv(path, header, rows)


def _analysis_row(run_id, cfg, trace, problem=None, arch=None):
    """One analysis-report row per run; blank cells where not requested."""
    row = [run_id] + [""] * 11
    if not cfg.has("analysis"):
        return row
    target = cfg.get_float("analysis", "loss_target", None)
    if cfg.get_bool("analysis", "lojasiewicz"):
        est = an.estimate_lojasiewicz(trace, target)
        if est is not None:
            row[1], row[2], row[3], row[4] = (
                est.alpha_hat, est.c_hat, est.fit_quality, est.n_points,
            )
        else:
            row[1] = "inconclusive"
    if cfg.get_bool("analysis", "rate"):
        resolved = target
        if resolved is None:
            resolved, _ = an.default_loss_target(trace)
        rc = an.classify_rate(trace, resolved)
        if rc is not None:
            row[5] = rc.kind
            row[6] = rc.rate if rc.rate is not None else ""
            row[7] = rc.exponent if rc.exponent is not None else ""
            row[8] = rc.predicted_alpha
        else:
            row[5] = "inconclusive"
    if (
        cfg.get_bool("analysis", "critical_point")
        and problem is not None
        and arch is not None
        and trace.params is not None
    ):
        report = an.classify_critical_point(
            problem, arch, trace.terminal_state
        )
        row[9] = report.case
    if cfg.get_bool("analysis", "kernel_decay") and trace.params is not None:
        alpha = cfg.get_float("analysis", "alpha", 0.5)
        fit = an.fit_kernel_decay(
            trace, trace.terminal_state, alpha
        )
        row[10] = fit.r_hat
        row[11] = fit.predicted_alpha_star
    return row


def cmd_run(args) -> int:
    paths = args.config
    if len(paths) > 1:
        jobs = max(1, args.jobs)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(lambda p: _run_single(p, args), paths))
        return max(codes)
    return _run_single(paths[0], args)


def _run_single(config_path, args) -> int:
    started = _now()
    try:
        cfg = config_mod.load_config(config_path)
        problem = config_mod.build_problem(cfg)
        flow_kind = cfg.get("flow", "kind", "parametric")
        flow_cfg = config_mod.build_flow_config(cfg, args.seed)
        out = _resolve_out_dir(args, cfg)
        if flow_kind == "nominal":
            g0 = config_mod.initial_field(cfg, problem.basis)
            trace = flow_mod.integrate_nominal(problem, g0, flow_cfg)
            arch = None
        elif flow_kind in ("parametric", "annealed"):
            arch = config_mod.build_architecture(cfg, problem.basis)
            w0 = config_mod.initial_params(cfg, arch)
            if flow_kind == "annealed":
                if flow_cfg.noise_beta <= 0:
                    raise ConfigurationError(
                        "flow.noise_beta: must be > 0 for the annealed flow"
                    )
                trace = flow_mod.integrate_annealed(problem, arch, w0, flow_cfg)
            else:
                trace = flow_mod.integrate_parametric(problem, arch, w0, flow_cfg)
        else:
            raise ConfigurationError(f"flow.kind: unknown kind '{flow_kind}'")
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GradlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stem = Path(config_path).stem
    files = []
    trace_path = out / f"{stem}_trace.jsonl"
    traceio.write_trace(trace_path, trace)
    files.append(trace_path.name)
    if flow_kind == "nominal":
        field_path = out / f"{stem}_terminal.field"
        with open(field_path, "wb") as fh:
            fh.write(spaces.field_to_bytes(trace.terminal_state))
        files.append(field_path.name)
    if cfg.has("analysis"):
        csv_path = out / f"{stem}_analysis.csv"
        _write_analysis_csv(csv_path, [_analysis_row(stem, cfg, trace, problem, arch)])
        files.append(csv_path.name)
    manifest = out / f"{stem}_manifest.json"
    traceio.write_manifest(
        manifest, traceio.config_hash(cfg.flat_pairs()), started, _now(), files
    )
    print(
        f"{stem}: {trace.terminal_reason} at t={trace.t[-1]:.6g}, "
        f"loss={trace.loss[-1]:.6g}, samples={trace.n_samples}"
    )
    return EXIT_DIVERGENCE if trace.terminal_reason == "divergence" else EXIT_OK


def cmd_grow(args) -> int:
    started = _now()
    config_path = args.config[0]
    try:
        cfg = config_mod.load_config(config_path)
        problem = config_mod.build_problem(cfg)
        arch = config_mod.build_architecture(cfg, problem.basis)
        w0 = config_mod.initial_params(cfg, arch)
        flow_cfg = config_mod.build_flow_config(cfg, args.seed)
        sched = config_mod.build_growth_schedule(cfg)
        out = _resolve_out_dir(args, cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    code = EXIT_OK
    try:
        gtrace = growth_mod.run_growth_loop(problem, arch, w0, sched, flow_cfg)
    except ExpansionRejectedError as exc:
        print(f"expansion rejected: {exc}", file=sys.stderr)
        gtrace = getattr(exc, "growth_trace", None)
        code = EXIT_EXPANSION_REJECTED
    except GradlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stem = Path(config_path).stem
    files = []
    if gtrace is not None:
        rows = []
        for i, seg in enumerate(gtrace.segments):
            event = gtrace.expansions[i] if i < len(gtrace.expansions) else None
            rows.append(
                [
                    i + 1,
                    seg.params.shape[1] if seg.params is not None else "",
                    float(seg.t[0]),
                    float(seg.t[-1]),
                    float(seg.loss[0]),
                    float(seg.loss[-1]),
                    seg.terminal_reason,
                    "expanded" if event is not None else (
                        "converged" if gtrace.converged and i == len(gtrace.segments) - 1
                        else "exhausted"
                    ),
                    event.min_nonzero_eig_after if event is not None else "",
                    gtrace.final_error if i == len(gtrace.segments) - 1 and gtrace.final_error is not None else "",
                ]
            )
            seg_path = out / f"{stem}_level{i + 1}_trace.jsonl"
            traceio.write_trace(seg_path, seg)
            files.append(seg_path.name)
        summary = out / f"{stem}_growth.csv"
        traceio.write_csv(
            summary,
            [
                "level", "n_params", "t_start", "t_end", "start_loss", "end_loss",
                "terminal_reason", "verdict", "min_nonzero_eig_after", "model_error",
            ],
            rows,
        )
        files.append(summary.name)
        if gtrace.segments:
            print(
                f"{stem}: {'converged' if gtrace.converged else 'stopped'} "
                f"after {len(gtrace.expansions)} expansion(s), "
                f"final loss {gtrace.final_loss:.6g}"
            )
        if any(seg.terminal_reason == "divergence" for seg in gtrace.segments):
            code = max(code, EXIT_DIVERGENCE)
    manifest = out / f"{stem}_manifest.json"
    traceio.write_manifest(
        manifest, traceio.config_hash(cfg.flat_pairs()), started, _now(), files
    )
    return code


def _spectrum_param_sets(cfg, arch, seed_override=None):
    m = arch.n_params
    explicit = cfg.get("spectrum", "w")
    if explicit is not None:
        sets = []
        for chunk in explicit.split(";"):
            values = config_mod._parse_floats(chunk, "spectrum.w")
            if len(values) != m:
                raise ConfigurationError(
                    f"spectrum.w: expected {m} values per set, got {len(values)}"
                )
            sets.append(np.array(values))
        return sets
    sweep = cfg.get("spectrum", "sweep")
    if sweep is not None:
        if m != 1:
            raise ConfigurationError("spectrum.sweep: only for 1-parameter families")
        try:
            lo, hi, num = sweep.split(":")
            return [np.array([w]) for w in np.linspace(float(lo), float(hi), int(num))]
        except ValueError:
            raise ConfigurationError(
                "spectrum.sweep: expected 'start:stop:count'"
            ) from None
    count = cfg.get_int("spectrum", "count", 5)
    seed = cfg.get_int("spectrum", "seed", 0) if seed_override is None else seed_override
    rng = np.random.default_rng(seed)
    return [rng.uniform(-3.0, 3.0, size=m) for _ in range(count)]


def cmd_spectrum(args) -> int:
    started = _now()
    config_path = args.config[0]
    try:
        cfg = config_mod.load_config(config_path)
        problem = config_mod.build_problem(cfg) if cfg.has("problem") else None
        basis = problem.basis if problem is not None else None
        arch = config_mod.build_architecture(cfg, basis)
        metric_text = cfg.get("spectrum", "metric", "l2")
        metric = config_mod._METRICS.get(metric_text.lower())
        if metric is None:
            raise ConfigurationError(f"spectrum.metric: unknown '{metric_text}'")
        sets = _spectrum_param_sets(cfg, arch, args.seed)
        out = _resolve_out_dir(args, cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    m = arch.n_params
    rows = []
    for i, values in enumerate(sets):
        w = arch_mod.ParamVector(values)
        diag = arch_mod.tangent_gram(arch, w, metric)
        consistent = ""
        mismatch = ""
        if arch.target_basis.size <= 4096:
            rep = arch_mod.spectral_consistency(arch, w, metric)
            consistent = "pass" if rep.passed else "fail"
            mismatch = rep.max_relative_mismatch
        rows.append(
            [i]
            + [float(v) for v in values]
            + [float(e) for e in diag.eigenvalues]
            + [diag.min_nonzero_eig, diag.numerical_rank, consistent, mismatch]
        )
    header = (
        ["w_id"]
        + [f"w{j}" for j in range(m)]
        + [f"eig{j}" for j in range(m)]
        + ["min_nonzero_eig", "numerical_rank", "consistency", "max_mismatch"]
    )
    stem = Path(config_path).stem
    csv_path = out / f"{stem}_spectrum.csv"
    traceio.write_csv(csv_path, header, rows)
    manifest = out / f"{stem}_manifest.json"
    traceio.write_manifest(
        manifest, traceio.config_hash(cfg.flat_pairs()), started, _now(), [csv_path.name]
    )
    print(f"{stem}: {len(rows)} spectra written")
    return EXIT_OK


def coverage_distances(targets: np.ndarray, grid_max: float, grid_step: float):
    """Brute-force distances from plane targets to the diagonal-line and
    spiral model sets, minimized over a dense parameter grid."""
    grid = np.arange(-grid_max, grid_max + grid_step / 2, grid_step)
    spiral_x = grid * np.sin(grid)
    spiral_y = grid * np.cos(grid)
    rows = []
    for tx, ty in np.asarray(targets):
        d_spiral = np.sqrt(np.min((spiral_x - tx) ** 2 + (spiral_y - ty) ** 2))
        d_line = np.sqrt(np.min((grid - tx) ** 2 + (grid - ty) ** 2))
        rows.append([float(tx), float(ty), float(d_line), float(d_spiral)])
    return rows


def cmd_coverage_demo(args) -> int:
    started = _now()
    config_path = args.config[0]
    try:
        cfg = config_mod.load_config(config_path)
        out = _resolve_out_dir(args, cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    count = cfg.get_int("coverage", "count", 100)
    seed = cfg.get_int("coverage", "seed", 0) if args.seed is None else args.seed
    box = cfg.get_float("coverage", "box", 100.0)
    step = cfg.get_float("coverage", "grid_step", 1e-3)
    gmax = cfg.get_float("coverage", "grid_max", 150.0)

    rng = np.random.default_rng(seed)
    targets = rng.uniform(-box, box, size=(count, 2))
    rows = coverage_distances(targets, gmax, step)
    d_line_med = float(np.median([r[2] for r in rows]))
    d_spiral_med = float(np.median([r[3] for r in rows]))

    stem = Path(config_path).stem
    csv_path = out / f"{stem}_coverage.csv"
    traceio.write_csv(
        csv_path, ["target_x", "target_y", "line_distance", "spiral_distance"], rows
    )
    summary_path = out / f"{stem}_coverage_summary.csv"
    traceio.write_csv(
        summary_path,
        ["median_line_distance", "median_spiral_distance"],
        [[d_line_med, d_spiral_med]],
    )
    manifest = out / f"{stem}_manifest.json"
    traceio.write_manifest(
        manifest,
        traceio.config_hash(cfg.flat_pairs()),
        started,
        _now(),
        [csv_path.name, summary_path.name],
    )
    print(
        f"{stem}: median line distance {d_line_med:.4f}, "
        f"median spiral distance {d_spiral_med:.4f}"
    )
    return EXIT_OK


def cmd_analyze(args) -> int:
    started = _now()
    config_path = args.config[0]
    try:
        cfg = config_mod.load_config(config_path)
        out = _resolve_out_dir(args, cfg)
        trace = traceio.read_trace(args.trace)
    except (ConfigurationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stem = Path(args.trace).stem
    csv_path = out / f"{stem}_analysis.csv"
    _write_analysis_csv(csv_path, [_analysis_row(stem, cfg, trace)])
    manifest = out / f"{stem}_manifest.json"
    traceio.write_manifest(
        manifest, traceio.config_hash(cfg.flat_pairs()), started, _now(), [csv_path.name]
    )
    print(f"{stem}: analysis written")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradlab",
        description="gradient-flow experiments on discretized function spaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi_config=False):
        nargs = "+" if multi_config else 1
        p.add_argument("--config", required=True, nargs=nargs, help="config path(s)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="worker pool size")

    p_run = sub.add_parser("run", help="run one configured flow")
    common(p_run, multi_config=True)
    p_run.set_defaults(func=cmd_run)

    p_grow = sub.add_parser("grow", aliases=["eci"], help="run the expansion loop")
    common(p_grow)
    p_grow.set_defaults(func=cmd_grow)

    p_spec = sub.add_parser("spectrum", help="kernel eigenvalue tables")
    common(p_spec)
    p_spec.set_defaults(func=cmd_spectrum)

    p_cov = sub.add_parser("coverage-demo", help="plane coverage brute force")
    common(p_cov)
    p_cov.set_defaults(func=cmd_coverage_demo)

    p_an = sub.add_parser("analyze", help="re-run analysis on a trace file")
    common(p_an)
    p_an.add_argument("trace", help="existing trace JSONL file")
    p_an.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
