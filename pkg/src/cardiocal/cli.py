"""Command line interface: ``cardiocal <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io, svg
from .calibration import CalibrationProblem, add_noise
from .experiments import (METHODS, NOISE_SAMPLE, make_dataset,
                          patient_problem, run_method, summarize, synthetic_template,
                          test1, test2, test3)
from .integrator import IntegrationError, IntegratorConfig
from .model import CALIBRATION_OUTPUTS, OUTPUT_NAMES, ParameterSet
from .sensitivity import (build_correlation_matrix, build_hyperbox, saltelli_sample,
                          select_parameters, total_sobol)
from .simulation import evaluate_outputs, run_to_limit_cycle

log = logging.getLogger("cardiocal")

RESIDUAL_WARNING = 1e-3


class UsageError(Exception):
    """Bad arguments or unreadable input files (exit code 2)."""


def _emit(args, summary, lines):
    if args.json:
        print(json.dumps(io.to_jsonable(summary), indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _progress(args, label):
    if args.json or args.quiet:
        return None
    start = time.perf_counter()

    def report(done, total, *_):
        if done == total or done % max(1, total // 20) == 0:
            el = time.perf_counter() - start
            print(f"{label}: {done}/{total} ({el:.0f} s)", file=sys.stderr, flush=True)
    return report


def _jobs(args):
    return args.jobs if args.jobs is not None else (os.cpu_count() or 1)


def _read(loader, path, what):
    try:
        return loader(path)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}")
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc}")


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    p = _read(io.load_parameters, args.params, "parameters") if args.params \
        else io.load_reference()
    if args.hr is not None:
        p = p.replace(HR=args.hr)
    ranges = io.load_ranges()
    BSA = args.bsa if args.bsa is not None else ranges.reference_bsa
    cfg = IntegratorConfig(rtol=args.rtol, atol=args.atol, beats=args.beats)
    t0 = time.perf_counter()
    try:
        lc = run_to_limit_cycle(p, cfg=cfg)
    except IntegrationError as exc:
        print(f"error: integration failed: {exc}", file=sys.stderr)
        return 1
    elapsed = time.perf_counter() - t0
    out = lc.outputs(p, BSA)
    notes = ranges.annotate(out)
    if lc.residual > RESIDUAL_WARNING:
        print(f"warning: periodicity residual {lc.residual:.2e} exceeds "
              f"{RESIDUAL_WARNING:g}; increase --beats", file=sys.stderr)
    if args.out:
        io.save_trajectory(lc.trajectory, args.out)
    values = out.as_dict()
    summary = {"residual": lc.residual, "wall_time": elapsed, "BSA": BSA, "HR": p.HR,
               "outputs": values,
               "in_range": {k: bool(ok) for k, (_, ok) in notes.items()}}
    if args.outputs:
        io.dump_json(io.document("outputs", summary), args.outputs)
    if args.pvloop:
        tr = lc.trajectory
        svg.write(args.pvloop, svg.line_plot(
            [("LV", tr["V_LV"], tr["p_LV"]), ("RV", tr["V_RV"], tr["p_RV"])],
            "volume (mL)", "pressure (mmHg)", "Pressure-volume loops"))
    lines = [f"{'output':<16}{'value':>12}  {'range':<16}status"]
    for name, (value, ok) in notes.items():
        e = ranges[name]
        rng = f"[{'-' if e.lo is None else e.lo}, {'-' if e.hi is None else e.hi}]"
        lines.append(f"{name:<16}{value:>12.4g}  {rng:<16}{'ok' if ok else 'OUT OF RANGE'}")
    lines.append(f"residual {lc.residual:.2e}, {elapsed:.2f} s")
    _emit(args, summary, lines)
    return 0


# --------------------------------------------------------------------------
# sobol and correlation sweeps


def cmd_sobol(args):
    box = build_hyperbox(covid=args.covid)
    if args.from_samples:
        try:
            raw = np.load(args.from_samples)
        except OSError as exc:
            raise UsageError(f"cannot read samples file: {exc}")
        X, Y = raw["X"], raw["Y"]
        outputs = tuple(str(s) for s in raw["outputs"]) if "outputs" in raw else OUTPUT_NAMES
        N = len(X) // (2 * (len(box) + 1))
    else:
        N = args.n
        X = saltelli_sample(box, N, args.seed)
        outputs = OUTPUT_NAMES
        t0 = time.perf_counter()
        Y = evaluate_outputs(X, box.names, output_names=outputs, jobs=_jobs(args),
                             progress=_progress(args, "sobol"))
        log.info("sweep took %.0f s", time.perf_counter() - t0)
        if args.samples:
            np.savez(args.samples, X=X, Y=Y, names=np.array(box.names),
                     outputs=np.array(outputs))
    res = total_sobol(X, Y, box.names, outputs, n_bootstrap=100, seed=args.seed)
    res.seed = args.seed
    res.box_hash = box.digest()
    if args.out:
        io.save_sensitivity(res, args.out)
    sub = res.subset([o for o in CALIBRATION_OUTPUTS if o in res.outputs] or res.outputs)
    if args.csv:
        io.save_matrix_csv(res.parameters, res.outputs, res.S_T, args.csv)
    if args.heatmap:
        svg.write(args.heatmap, svg.heatmap(sub.S_T, sub.parameters, sub.outputs,
                                            "Total-effect Sobol indices"))
    selected = select_parameters(res, args.threshold, outputs=sub.outputs)
    summary = {"N": N, "n_samples": len(X), "n_dropped": res.n_dropped,
               "selected": sorted(selected, key=box.names.index),
               "S_T": {p: dict(zip(sub.outputs, map(float, row)))
                       for p, row in zip(sub.parameters, sub.S_T)}}
    lines = [f"N={N} ({len(X)} samples, {res.n_dropped} dropped)",
             "selected (S_T >= %.2g): %s" % (args.threshold, ", ".join(summary["selected"]))]
    _emit(args, summary, lines)
    return 0


def cmd_corr(args):
    box = build_hyperbox(covid=args.covid)
    cm = build_correlation_matrix(box, args.n, args.seed, jobs=_jobs(args),
                                  progress=_progress(args, "corr"))
    io.save_correlation(cm, args.out)
    if args.csv:
        io.save_matrix_csv(cm.parameters, cm.outputs, cm.M, args.csv)
    summary = {"n_samples": cm.n_samples, "n_dropped": cm.n_dropped, "box_hash": cm.box_hash,
               "out": str(args.out)}
    _emit(args, summary, [f"{cm.n_samples} samples ({cm.n_dropped} dropped) -> {args.out}"])
    return 0


# --------------------------------------------------------------------------
# synthetic data


def cmd_gen_data(args):
    template = synthetic_template()
    samples = make_dataset(args.n, args.seed, template)
    io.save_dataset(args.out, template.free, template.data_names, samples, args.seed)
    summary = {"n": len(samples), "out": str(args.out)}
    _emit(args, summary, [f"{len(samples)} samples -> {args.out}"])
    return 0


def cmd_noise(args):
    ds = _read(io.load_dataset, args.inp, "dataset")
    sigma = io.load_noise()
    src = ds["samples"] if args.sample is None else [ds["samples"][args.sample]]
    out = []
    for k, s in enumerate(src):
        for r in range(args.replicates):
            noisy = add_noise(s["data"], ds["data_names"], seed=args.seed * 10007 + len(out),
                              sigma=sigma)
            out.append({"truth": s["truth"], "data": noisy, "clean": s["data"].tolist(),
                        "source": int(args.sample if args.sample is not None else k),
                        "replicate": r})
    io.save_dataset(args.out, ds["free"], ds["data_names"], out, args.seed, noise=sigma)
    _emit(args, {"n": len(out), "out": str(args.out)}, [f"{len(out)} noisy samples -> {args.out}"])
    return 0


# --------------------------------------------------------------------------
# calibration


def _load_matrix(args, required):
    if args.matrix:
        return _read(io.load_correlation, args.matrix, "correlation matrix")
    if required:
        raise UsageError("the cmc and hybrid methods need a correlation matrix (--matrix)")
    return None


def _methods(text):
    methods = METHODS if text == "all" else tuple(text.split(","))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from {METHODS} or 'all'")
    return methods


def _suffixed(path, tag, many):
    if path is None or not many:
        return path
    p = Path(path)
    return p.with_name(f"{p.stem}_{tag}{p.suffix}")


def cmd_calibrate(args):
    methods = _methods(args.method)
    M = _load_matrix(args, any(m in ("cmc", "hybrid") for m in methods))
    sens = _read(io.load_sensitivity, args.sensitivity, "sensitivity") \
        if args.sensitivity else None
    free = tuple(args.free.split(",")) if args.free else None
    if args.patient:
        try:
            rec = io.load_clinical(args.patient)
        except io.UnknownPatientError as exc:
            raise UsageError(str(exc))
        problem = patient_problem(rec, free, sens)
        label = rec.patient
    elif args.data:
        ds = _read(io.load_dataset, args.data, "dataset")
        try:
            s = ds["samples"][args.sample]
        except IndexError:
            raise UsageError(f"dataset has {len(ds['samples'])} samples")
        data = dict(zip(ds["data_names"], s["data"]))
        problem = CalibrationProblem.from_box(data, free or ds["free"], build_hyperbox(),
                                              ParameterSet.reference())
        label = f"sample {args.sample}"
    else:
        raise UsageError("give --patient or --data")
    reports = {}
    for m in methods:
        reports[m] = run_method(m, problem, M, None, args.seed,
                                **({"it_max": args.it_max} if m == "cmc" else {}))
        rep = reports[m]
        path = _suffixed(args.report, m, len(methods) > 1)
        if path:
            io.save_report(rep, path)
        tpath = _suffixed(args.trace, m, len(methods) > 1)
        if tpath:
            io.save_trace_csv(rep, tpath)
    for path in args.overlay or []:
        rep = _read(io.load_report, path, "report")
        reports[f"{rep.method} ({Path(path).stem})"] = rep
    if args.pvloop:
        _pv_figures(problem, reports, args.pvloop)
    if args.loss_plot:
        svg.write(args.loss_plot, svg.line_plot(
            [(m, np.arange(len(r.trace)), np.sqrt(r.trace)) for m, r in reports.items()],
            "iteration", "RMSE", f"Loss traces, {label}", logy=True))
    summary = {m: {"rmse": r.rmse, "success": r.success, "wall_time": r.wall_time,
                   "parameters": r.parameters, "n_simulations": r.n_simulations}
               for m, r in reports.items()}
    lines = [f"{label}: free parameters {', '.join(problem.free)}"]
    for m, r in reports.items():
        pars = " ".join(f"{k}={v:.4g}" for k, v in r.parameters.items())
        lines.append(f"{m:<8} rmse={r.rmse:.3e} success={r.success} "
                     f"time={r.wall_time:.1f}s  {pars}")
    _emit(args, summary, lines)
    return 0


def _pv_figures(problem, reports, path):
    """LV and RV pressure-volume loops of each report, one figure per ventricle."""
    loops = {}
    for m, r in reports.items():
        p = problem.base.with_values(r.free, r.x)
        loops[m] = run_to_limit_cycle(p, cfg=problem.cfg).trajectory
    p = Path(path)
    for side in ("LV", "RV"):
        target = p.with_name(f"{p.stem}_{side}{p.suffix}")
        svg.write(target, svg.line_plot(
            [(m, tr[f"V_{side}"], tr[f"p_{side}"]) for m, tr in loops.items()],
            "volume (mL)", "pressure (mmHg)", f"{side} pressure-volume loop"))


# --------------------------------------------------------------------------
# experiment suites


def cmd_suite(args):
    M = _load_matrix(args, True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = _methods(args.method)
    if args.dataset:
        ds = _read(io.load_dataset, args.dataset, "dataset")
        dataset = ds["samples"]
    else:
        dataset = make_dataset(args.n if args.test == 1 else max(args.n, NOISE_SAMPLE + 1),
                               args.seed)
    io.save_dataset(out / "dataset.json", synthetic_template().free, CALIBRATION_OUTPUTS,
                    dataset, args.seed)
    prog = _progress(args, f"test {args.test}")
    t0 = time.perf_counter()
    if args.test == 1:
        results = test1(M, seed=args.seed, methods=methods, dataset=dataset[:args.n],
                        jobs=_jobs(args), progress=prog)
    elif args.test == 2:
        results = test2(M, dataset[args.sample], n_guesses=args.n, seed=args.seed,
                        methods=methods, jobs=_jobs(args), progress=prog)
    else:
        results = test3(M, dataset[args.sample], n_noisy=args.n, seed=args.seed,
                        methods=methods, jobs=_jobs(args), progress=prog)
    elapsed = time.perf_counter() - t0
    summary = summarize(results)
    summary["_wall_time"] = elapsed
    io.dump_json(io.document("suite", {"test": args.test, "seed": args.seed,
                                        "summary": summary,
                                        "results": [r.as_dict() for r in results]}),
                 out / "results.json")
    rows = ["case,method,rmse,success,param_rmse,rmse_actual,wall_time,n_simulations"]
    for r in results:
        rows.append(f"{r.case},{r.method},{r.rmse!r},{int(r.success)},{r.param_rmse!r},"
                    f"{r.extra.get('rmse_actual', '')},{r.wall_time:.3f},{r.n_simulations}")
    io.atomic_write(out / "results.csv", "\n".join(rows) + "\n")
    cases = sorted({r.case for r in results})
    used = [m for m in methods if m in summary]
    svg.write(out / "successes.svg", svg.bar_chart(
        ["successes"], [(m, [summary[m]["successes"]]) for m in used],
        "successful calibrations", f"Test {args.test}"))
    prm = {(r.case, r.method): (r.param_rmse if r.success else np.nan) for r in results}
    svg.write(out / "param_rmse.svg", svg.bar_chart(
        [str(c) for c in cases], [(m, [prm[(c, m)] for c in cases]) for m in used],
        "parameter RMSE", f"Test {args.test}: successful runs", logy=True))
    lines = [f"test {args.test}: {len(cases)} cases, {elapsed:.0f} s"]
    for m in used:
        s = summary[m]
        extra = ""
        if "actual_successes" in s:
            extra = f", actual-data successes {s['actual_successes']}/{s['n']}"
        if "mean_param_rmse_joint" in s:
            extra += f", joint param RMSE {s['mean_param_rmse_joint']:.3g}"
        lines.append(f"{m:<8} successes {s['successes']}/{s['n']}, mean time "
                     f"{s['mean_wall_time']:.1f} s, total {s['total_wall_time']:.0f} s{extra}")
    _emit(args, summary, lines)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable summary")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default: available cores)")
    common.add_argument("--quiet", action="store_true", help="no progress output")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="cardiocal", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one parameter set")
    s.add_argument("params", nargs="?", help="parameters JSON (default: reference)")
    s.add_argument("--hr", type=float)
    s.add_argument("--bsa", type=float, help="body surface area for indexed outputs")
    s.add_argument("--beats", type=int, default=25)
    s.add_argument("--rtol", type=float, default=1e-7)
    s.add_argument("--atol", type=float, default=1e-7)
    s.add_argument("--out", help="trajectory CSV")
    s.add_argument("--outputs", help="outputs JSON")
    s.add_argument("--pvloop", help="PV-loop SVG")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sobol", parents=[common], help="total Sobol indices")
    s.add_argument("--n", type=int, default=1024, help="Saltelli base sample count")
    s.add_argument("--covid", action="store_true", help="disease-extended hyperbox")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--out", help="sensitivity JSON")
    s.add_argument("--csv", help="indices CSV")
    s.add_argument("--heatmap", help="heatmap SVG")
    s.add_argument("--samples", help="save the raw design and outputs (.npz)")
    s.add_argument("--from-samples", help="reuse a saved design instead of simulating")
    s.set_defaults(func=cmd_sobol)

    s = sub.add_parser("corr", parents=[common], help="parameter/output correlation matrix")
    s.add_argument("--n", type=int, default=None, help="samples (default 100 per parameter)")
    s.add_argument("--covid", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_corr)

    s = sub.add_parser("gen-data", parents=[common], help="synthetic calibration datasets")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("noise", parents=[common], help="add measurement noise to a dataset")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample", type=int, help="only this sample")
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_noise)

    s = sub.add_parser("calibrate", parents=[common], help="calibrate against data")
    s.add_argument("--method", default="hybrid", help="cmc, qn, hybrid, a comma list or all")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--patient", help="bundled clinical record (monzino, sacco)")
    g.add_argument("--data", help="dataset JSON")
    s.add_argument("--sample", type=int, default=0, help="sample index in --data")
    s.add_argument("--matrix", help="correlation matrix JSON")
    s.add_argument("--sensitivity", help="sensitivity JSON for parameter selection")
    s.add_argument("--free", help="comma-separated parameters to calibrate")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--it-max", type=int, default=500)
    s.add_argument("--report", help="report JSON")
    s.add_argument("--trace", help="loss trace CSV")
    s.add_argument("--pvloop", help="PV-loop SVG (writes _LV and _RV figures)")
    s.add_argument("--loss-plot", help="loss trace SVG")
    s.add_argument("--overlay", nargs="*", help="extra report files to overlay")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("suite", parents=[common], help="calibration experiments")
    s.add_argument("--test", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--n", type=int, default=20,
                   help="datasets (test 1), initial guesses (test 2) or replicates (test 3)")
    s.add_argument("--sample", type=int, default=NOISE_SAMPLE,
                   help="dataset index used by tests 2 and 3")
    s.add_argument("--method", default="all")
    s.add_argument("--matrix")
    s.add_argument("--dataset", help="reuse a dataset JSON")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_suite)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
