"""Calibration experiments on synthetic and clinical data.

* ``test1``: robustness over independently drawn synthetic datasets,
* ``test2``: robustness to the initial guess on one dataset,
* ``test3``: robustness to multiplicative measurement noise on one dataset,
* :func:`calibrate_patient`: the three methods on a clinical record.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibration import (SUCCESS_RMSE, CalibrationProblem, add_noise, bounded_quasi_newton,
                          cmc, generate_synthetic, hybrid, relative_errors)
from .model import CALIBRATION_OUTPUTS, ParameterSet
from .sensitivity import build_hyperbox, select_parameters

__all__ = [
    "METHODS", "DEFAULT_FREE", "MONZINO_FREE", "synthetic_template", "make_dataset",
    "parameter_rmse", "run_method", "CaseResult", "test1", "test2", "test3",
    "summarize", "free_parameters_for", "patient_problem", "calibrate_patient",
]

log = logging.getLogger(__name__)

METHODS = ("cmc", "qn", "hybrid")
# parameters with a total index of at least 0.1 on one calibration output
DEFAULT_FREE = ("EB_LA", "EA_LV", "EB_LV", "EA_RV", "R_AR_SYS", "C_AR_SYS", "R_VEN_SYS")
MONZINO_FREE = ("EA_LV", "EA_RV", "R_AR_SYS", "C_AR_SYS", "R_VEN_SYS")
NOISE_SAMPLE = 6  # the seventh dataset of the test 1 draw


def synthetic_template(free=DEFAULT_FREE, data_names=CALIBRATION_OUTPUTS, cfg=None):
    """Problem with placeholder data, bounds from the base hyperbox."""
    return CalibrationProblem.from_box({n: 1.0 for n in data_names}, free, build_hyperbox(),
                                       cfg=cfg)


def make_dataset(n=20, seed=0, template=None):
    """``n`` synthetic samples ``{"truth", "data"}``; sample ``k`` uses a spawned seed."""
    template = template or synthetic_template()
    seeds = np.random.SeedSequence(seed).spawn(n)
    out = []
    for ss in seeds:
        truth, data = generate_synthetic(template, np.random.default_rng(ss))
        out.append({"truth": truth, "data": data})
    return out


def parameter_rmse(x, truth):
    """Root mean square of the relative parameter errors."""
    x, truth = np.asarray(x, dtype=float), np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(((x - truth) / truth) ** 2)))


def run_method(method, problem, M=None, x0=None, seed=None, **kw):
    if method == "cmc":
        return cmc(problem, M, x0, seed=seed, **kw)
    if method == "qn":
        return bounded_quasi_newton(problem, x0, **kw)
    if method == "hybrid":
        return hybrid(problem, M, x0, seed=seed, **kw)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class CaseResult:
    case: int
    method: str
    rmse: float
    success: bool
    x: np.ndarray
    wall_time: float
    n_simulations: int
    n_iter: int
    param_rmse: float | None = None
    extra: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    def as_dict(self):
        return {"case": self.case, "method": self.method, "rmse": self.rmse,
                "success": self.success, "x": self.x.tolist(), "wall_time": self.wall_time,
                "n_simulations": self.n_simulations, "n_iter": self.n_iter,
                "param_rmse": self.param_rmse, "extra": self.extra, "trace": self.trace}


def _run_case(args):
    (case, method, problem, M, x0, seed, truth, actual, opts) = args
    rep = run_method(method, problem, M, x0, seed, **opts.get(method, {}))
    extra = {}
    if actual is not None:
        y = problem.outputs(rep.x)
        extra["rmse_actual"] = float(np.sqrt(np.mean(relative_errors(actual, y) ** 2)))
    return CaseResult(case, method, rep.rmse, rep.success, rep.x, rep.wall_time,
                      rep.n_simulations, rep.n_iter,
                      None if truth is None else parameter_rmse(rep.x, truth), extra,
                      rep.trace)


def _map(tasks, jobs, progress=None):
    out = []
    if jobs is None or jobs <= 1:
        for k, t in enumerate(tasks):
            out.append(_run_case(t))
            if progress:
                progress(k + 1, len(tasks), out[-1])
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for k, r in enumerate(pool.map(_run_case, tasks)):
            out.append(r)
            if progress:
                progress(k + 1, len(tasks), r)
    return out


def test1(M, n=20, seed=0, methods=METHODS, dataset=None, jobs=1, progress=None,
          options=None):
    """Calibrate every synthetic sample from the reference parameters."""
    template = synthetic_template()
    dataset = dataset or make_dataset(n, seed, template)
    tasks = []
    for k, s in enumerate(dataset):
        prob = template.with_data(s["data"])
        for m in methods:
            tasks.append((k, m, prob, M, None, seed * 10007 + k, s["truth"], None,
                          options or {}))
    return _map(tasks, jobs, progress)


def test2(M, sample, n_guesses=19, seed=0, methods=METHODS, jobs=1, progress=None,
          options=None):
    """Calibrate one sample from random initial guesses drawn in the bounds."""
    template = synthetic_template()
    prob = template.with_data(sample["data"])
    rng = np.random.default_rng(seed)
    guesses = rng.uniform(prob.lo, prob.hi, size=(n_guesses, len(prob.free)))
    tasks = [(k, m, prob, M, g, seed * 10007 + k, sample["truth"], None, options or {})
             for k, g in enumerate(guesses) for m in methods]
    return _map(tasks, jobs, progress)


def test3(M, sample, n_noisy=20, seed=0, methods=METHODS, jobs=1, progress=None,
          options=None):
    """Calibrate noisy replicates of one sample; also scores against the clean data."""
    template = synthetic_template()
    tasks = []
    for k in range(n_noisy):
        noisy = add_noise(sample["data"], template.data_names, seed=seed * 10007 + k)
        prob = template.with_data(noisy)
        for m in methods:
            tasks.append((k, m, prob, M, None, seed * 10007 + k, sample["truth"],
                          sample["data"], options or {}))
    return _map(tasks, jobs, progress)


def summarize(results, free=DEFAULT_FREE):
    """Per-method success counts, timings and parameter error statistics."""
    out = {}
    by_method = {}
    for r in results:
        by_method.setdefault(r.method, []).append(r)
    cases = sorted({r.case for r in results})
    ok_all = [c for c in cases
              if all(r.success for r in results if r.case == c)]
    for m, rs in by_method.items():
        X = np.array([r.x for r in rs if r.success])
        s = {
            "n": len(rs),
            "successes": int(sum(r.success for r in rs)),
            "mean_wall_time": float(np.mean([r.wall_time for r in rs])),
            "total_wall_time": float(np.sum([r.wall_time for r in rs])),
            "mean_simulations": float(np.mean([r.n_simulations for r in rs])),
            "median_rmse": float(np.median([r.rmse for r in rs])),
        }
        prm = [r.param_rmse for r in rs if r.success and r.param_rmse is not None]
        if prm:
            s["mean_param_rmse"] = float(np.mean(prm))
        joint = [r.param_rmse for r in rs if r.case in ok_all and r.param_rmse is not None]
        if joint:
            s["mean_param_rmse_joint"] = float(np.mean(joint))
        if len(X) > 1:
            s["relative_std"] = dict(zip(free, map(float, X.std(axis=0, ddof=1) /
                                                   np.abs(X.mean(axis=0)))))
        act = [r.extra["rmse_actual"] for r in rs if "rmse_actual" in r.extra]
        if act:
            s["actual_successes"] = int(sum(a < SUCCESS_RMSE for a in act))
            s["median_rmse_actual"] = float(np.median(act))
        out[m] = s
    out["_joint_success_cases"] = ok_all
    return out


# --------------------------------------------------------------------------
# clinical records


def free_parameters_for(names, sensitivity=None):
    """Parameters to calibrate for the available data names.

    Uses the total-index selection when a sensitivity result is given; falls
    back to the stored selections otherwise.
    """
    names = tuple(names)
    if sensitivity is not None:
        sel = select_parameters(sensitivity, outputs=names)
        return tuple(p for p in sensitivity.parameters if p in sel)
    if set(names) >= set(CALIBRATION_OUTPUTS):
        return DEFAULT_FREE
    if set(names) == set(CALIBRATION_OUTPUTS) - {"LA_Vmax", "PAP_max"}:
        return MONZINO_FREE
    raise ValueError("no stored parameter selection for this data subset; "
                     "pass a sensitivity result")


def patient_problem(record, free=None, sensitivity=None, cfg=None):
    """Calibration problem for a clinical record, with disease-extended bounds."""
    free = tuple(free or free_parameters_for(record.names, sensitivity))
    box = build_hyperbox(covid=record.covid)
    base = ParameterSet.reference(HR=record.HR)
    return CalibrationProblem.from_box(record.data, free, box, base, record.BSA, cfg)


def calibrate_patient(record, M, methods=METHODS, seed=0, free=None, sensitivity=None,
                      cfg=None, options=None):
    """Reports of each method on ``record``, keyed by method tag."""
    problem = patient_problem(record, free, sensitivity, cfg)
    out = {}
    for m in methods:
        t0 = time.perf_counter()
        out[m] = run_method(m, problem, M, None, seed, **(options or {}).get(m, {}))
        log.info("%s %s rmse %.3g in %.0f s", record.patient, m, out[m].rmse,
                 time.perf_counter() - t0)
    return out
