"""Calibration of the circulation model against scalar clinical data.

Three drivers share one :class:`CalibrationProblem`:

* :func:`cmc`, a gradient-free search steered by a parameter/output
  correlation matrix,
* :func:`bounded_quasi_newton`, L-BFGS-B on finite-difference gradients,
* :func:`hybrid`, correlation steps until the loss is small, then L-BFGS-B.
"""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .integrator import IntegrationError, IntegratorConfig
from .model import INDEXED_OUTPUTS, OUTPUT_NAMES, PARAMETER_NAMES, ParameterSet
from .sensitivity import CorrelationMatrix, build_hyperbox
from .simulation import simulate

__all__ = [
    "SUCCESS_RMSE", "SWITCH_MSE", "MEASUREMENT_NOISE", "LossEvaluationError",
    "CalibrationProblem", "CalibrationReport", "relative_errors", "mse", "rmse",
    "surrogate_gradient", "cmc_step", "cmc", "fd_gradient", "bounded_quasi_newton",
    "hybrid", "generate_synthetic", "add_noise", "CMCCalibrator",
    "QuasiNewtonCalibrator", "HybridCalibrator",
]

log = logging.getLogger(__name__)

SUCCESS_RMSE = 0.1
SWITCH_MSE = 2.5e-2
CORRELATION_CUTOFF = 0.05
ACTIVE_ERROR = 0.01
FAILED_LOSS = 1e6

# relative standard deviation of the measurement error on each datum
MEASUREMENT_NOISE = {
    "LA_Vmax": 0.05, "LV_EDV": 0.05, "LV_ESV": 0.05, "LV_EF": 0.04,
    "maxGradP_rAV": 0.04, "SAP_max": 0.04, "SAP_min": 0.05, "PAP_max": 0.05,
}


class LossEvaluationError(RuntimeError):
    """The model could not be simulated at the requested parameters."""


# --------------------------------------------------------------------------
# problem definition


@dataclass
class CalibrationProblem:
    """Data, free parameters and their bounds.

    ``data_names[i]`` is the model output that approximates ``data[i]``.
    Parameters not listed in ``free`` keep their value in ``base``.
    """

    data_names: tuple
    data: np.ndarray
    free: tuple
    lo: np.ndarray
    hi: np.ndarray
    base: ParameterSet = field(default_factory=ParameterSet.reference)
    BSA: float | None = None
    cfg: IntegratorConfig | None = None
    cache_size: int = 64

    def __post_init__(self):
        self.data_names = tuple(self.data_names)
        self.free = tuple(self.free)
        self.data = np.asarray(self.data, dtype=float).ravel()
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        if not self.data_names:
            raise ValueError("a calibration problem needs at least one datum")
        if len(self.data) != len(self.data_names):
            raise ValueError("data and data_names differ in length")
        for name in self.data_names:
            if name in INDEXED_OUTPUTS:
                if self.BSA is None:
                    raise ValueError(f"indexed datum {name!r} requires a BSA")
            elif name not in OUTPUT_NAMES:
                raise ValueError(f"unknown model output {name!r}")
        if len(set(self.data_names)) != len(self.data_names):
            raise ValueError("duplicate data names")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data must be finite")
        if np.any(self.data == 0):
            raise ValueError("relative errors are undefined for a zero datum")
        if not self.free:
            raise ValueError("no free parameters")
        bad = [n for n in self.free if n not in PARAMETER_NAMES]
        if bad:
            raise ValueError(f"unknown parameters {bad}")
        if not (len(self.lo) == len(self.hi) == len(self.free)):
            raise ValueError("bounds must match the free parameters")
        if np.any(self.lo >= self.hi):
            raise ValueError("every bound needs lo < hi")
        self._cache = OrderedDict()
        self.n_simulations = 0

    @classmethod
    def from_box(cls, data, free, box=None, base=None, BSA=None, cfg=None):
        """Problem for a ``{output: value}`` mapping with bounds taken from ``box``."""
        box = box or build_hyperbox()
        lo, hi = box.bounds(free)
        names = tuple(data)
        return cls(names, np.array([data[n] for n in names], dtype=float), tuple(free),
                   lo, hi, base or ParameterSet.reference(), BSA, cfg)

    @property
    def n_data(self):
        return len(self.data)

    def initial_guess(self):
        """Free parameter values of ``base``."""
        return self.base.values(self.free)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def parameters(self, x):
        return self.base.with_values(self.free, x)

    def outputs(self, x):
        """Model outputs at the data names for free parameter vector ``x``.

        Raises
        ------
        LossEvaluationError
            When the simulation fails or produces non-finite outputs.
        """
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key].copy()
        try:
            y = simulate(self.parameters(x), self.BSA, cfg=self.cfg).vector(self.data_names)
        except (IntegrationError, ValueError, FloatingPointError) as exc:
            raise LossEvaluationError(str(exc)) from exc
        finally:
            self.n_simulations += 1
        if not np.all(np.isfinite(y)):
            raise LossEvaluationError("non-finite model outputs")
        self._cache[key] = y
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return y.copy()

    def errors(self, x):
        return relative_errors(self.data, self.outputs(x))

    def mse(self, x):
        return float(np.mean(self.errors(x) ** 2))

    def rmse(self, x):
        return float(np.sqrt(self.mse(x)))

    def with_data(self, data):
        """Copy of the problem with a new data vector (same names and bounds)."""
        return CalibrationProblem(self.data_names, data, self.free, self.lo, self.hi,
                                  self.base, self.BSA, self.cfg, self.cache_size)


def relative_errors(d, y):
    """``(d - y) / d`` elementwise."""
    d = np.asarray(d, dtype=float)
    return (d - np.asarray(y, dtype=float)) / d


def mse(x, problem):
    """Mean squared relative error between data and model outputs."""
    return problem.mse(x)


def rmse(x, problem):
    return problem.rmse(x)


# --------------------------------------------------------------------------
# reports


@dataclass
class CalibrationReport:
    method: str
    free: tuple
    x: np.ndarray
    trace: list
    rmse: float
    success: bool
    wall_time: float
    seed: int | None = None
    n_iter: int = 0
    n_simulations: int = 0
    phases: list | None = None
    flags: dict = field(default_factory=dict)
    data_names: tuple = ()
    data: np.ndarray | None = None
    iterates: list | None = None
    evaluated: list | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if not self.trace:
            raise ValueError("a report needs a nonempty loss trace")

    @property
    def parameters(self):
        return dict(zip(self.free, map(float, self.x)))

    @property
    def mse(self):
        return self.rmse ** 2


def _report(method, problem, x, trace, t0, seed, n_iter, sims0, **kw):
    x = np.asarray(x, dtype=float)
    final = float(np.sqrt(min(trace)))
    return CalibrationReport(method, problem.free, x, [float(v) for v in trace], final,
                             final < SUCCESS_RMSE, time.perf_counter() - t0, seed, n_iter,
                             problem.n_simulations - sims0, data_names=problem.data_names,
                             data=problem.data.copy(), **kw)


def _matrix_block(M, problem):
    """Correlations between the free parameters and the data outputs."""
    if isinstance(M, CorrelationMatrix):
        return M.restrict(problem.free, problem.data_names).M
    B = np.asarray(M, dtype=float)
    if B.shape != (len(problem.free), problem.n_data):
        raise ValueError("correlation block must be (n_free, n_data)")
    return B


# --------------------------------------------------------------------------
# correlation-matrix calibration


def surrogate_gradient(e, m_row, ibar, active_threshold=ACTIVE_ERROR):
    """Sign surrogate for the loss derivative along one parameter.

    ``m_row[k]`` is the correlation between the parameter and the output of
    datum ``k``; ``ibar`` is the datum being corrected.  Data whose error
    moves the same way as ``e[ibar]`` lower the surrogate unless their error
    is already below ``active_threshold``; the others raise it.
    """
    e = np.asarray(e, dtype=float)
    m_row = np.asarray(m_row, dtype=float)
    lead = e[ibar] * m_row[ibar]
    g = 0.0
    for ek, mk in zip(e, m_row):
        if lead * ek * mk > 0:
            if abs(ek) > active_threshold:
                g -= abs(mk)
        else:
            g += abs(mk)
    return g


def cmc_step(value, lo, hi, sign, rng):
    """Random move of one parameter towards ``hi`` (sign > 0) or ``lo``.

    Returns ``(new_value, saturated)``; a parameter already at the bound it is
    pushed against is left unchanged with ``saturated=True``.
    """
    if sign > 0:
        if value >= hi:
            return hi, True
        return rng.uniform(value, hi), False
    if sign < 0:
        if value <= lo:
            return lo, True
        return rng.uniform(lo, value), False
    return value, True


def _choose_move(e, B, used, cutoff=CORRELATION_CUTOFF, active=ACTIVE_ERROR):
    """One pass over the data looking for a parameter to move.

    ``used`` is the set of recently moved parameters and is updated in place.
    Returns ``(l, i)`` or ``None`` once every error component is exhausted.
    """
    a = np.array(e, dtype=float)
    par_con = 0
    while np.any(a != 0):
        i = int(np.argmax(np.abs(a)))
        b = B[:, i].copy()
        l = int(np.argmax(np.abs(b)))
        while l in used and abs(b[l]) > cutoff:
            b[l] = 0.0
            l = int(np.argmax(np.abs(b)))
        if abs(b[l]) <= cutoff:
            if len(used) == par_con:
                # every candidate was spent on this datum alone
                a[i] = 0.0
            used.clear()
            par_con = 0
            continue
        used.add(l)
        par_con += 1
        if surrogate_gradient(e, B[l], i, active) < 0:
            return l, i
        a[i] = 0.0
    return None


def cmc(problem, M, x0=None, tol=SUCCESS_RMSE ** 2, it_max=500, seed=None,
        keep_going=False, callback=None):
    """Correlation-matrix calibration.

    Each iteration corrects the datum with the largest relative error by moving
    the free parameter most correlated with its output.  The move is a uniform
    draw between the current value and the bound in the direction suggested by
    the correlation sign, and is only taken when the other data agree.

    Parameters
    ----------
    problem : CalibrationProblem
    M : CorrelationMatrix or ndarray, shape (n_free, n_data)
    x0 : array_like, optional
        Starting point, defaults to the free values of ``problem.base``.
    tol : float
        Stop once the MSE drops below ``tol`` (unless ``keep_going``).
    it_max : int
        Maximum number of parameter moves.
    seed : int or numpy Generator

    Returns
    -------
    CalibrationReport
        ``x`` is the best iterate visited.
    """
    t0 = time.perf_counter()
    sims0 = problem.n_simulations
    rng = np.random.default_rng(seed)
    B = _matrix_block(M, problem)
    x = problem.initial_guess() if x0 is None else np.array(x0, dtype=float)
    if not problem.contains(x):
        raise ValueError("initial guess outside the bounds")
    e = problem.errors(x)
    L = float(np.mean(e ** 2))
    trace, iterates = [L], [x.copy()]
    best_x, best_L = x.copy(), L
    used = set()
    flags = {"saturated": 0, "failed": 0, "stalled": False, "restarts": 0}
    it = 0
    while it < it_max and (keep_going or L >= tol):
        fresh = not used
        move = _choose_move(e, B, used)
        if move is None:
            if fresh:
                # no admissible move from here, repeating cannot help
                flags["stalled"] = True
                break
            used.clear()
            flags["restarts"] += 1
            it += 1
            trace.append(L)
            iterates.append(x.copy())
            continue
        l, i = move
        it += 1
        new, saturated = cmc_step(x[l], problem.lo[l], problem.hi[l],
                                  np.sign(e[i] * B[l, i]), rng)
        if saturated:
            flags["saturated"] += 1
        else:
            cand = x.copy()
            cand[l] = new
            try:
                e = problem.errors(cand)
            except LossEvaluationError as exc:
                log.debug("cmc candidate rejected: %s", exc)
                flags["failed"] += 1
            else:
                x = cand
                L = float(np.mean(e ** 2))
                if L < best_L:
                    best_x, best_L = x.copy(), L
        trace.append(L)
        iterates.append(x.copy())
        if callback is not None:
            callback(it, x, L)
    return _report("cmc", problem, best_x, trace, t0, _seed_tag(seed), it, sims0,
                   flags=flags, iterates=iterates)


def _seed_tag(seed):
    return int(seed) if isinstance(seed, (int, np.integer)) else None


# --------------------------------------------------------------------------
# bound-constrained quasi-Newton


def fd_gradient(f, x, lo=None, hi=None, rel_step=1e-4, min_step=1e-6, f0=None):
    """Central finite-difference gradient with steps ``max(min_step, rel_step |x|)``.

    Near a bound the stencil is shifted so every evaluation stays in
    ``[lo, hi]``; it degrades to a one-sided difference at the bound itself.
    """
    x = np.asarray(x, dtype=float)
    lo = np.full_like(x, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full_like(x, np.inf) if hi is None else np.asarray(hi, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = max(min_step, rel_step * abs(x[k]))
        up = min(x[k] + h, hi[k])
        dn = max(x[k] - h, lo[k])
        if up == dn:
            g[k] = 0.0
            continue
        xu, xd = x.copy(), x.copy()
        xu[k], xd[k] = up, dn
        fu = f0 if up == x[k] and f0 is not None else f(xu)
        fd = f0 if dn == x[k] and f0 is not None else f(xd)
        g[k] = (fu - fd) / (up - dn)
    return g


def bounded_quasi_newton(problem, x0=None, max_iter=100, maxcor=10, pgtol=1e-8,
                         ftol=1e-12, callback=None):
    """L-BFGS-B on the MSE with central finite-difference gradients.

    The search runs on coordinates rescaled to the unit box so that the
    parameters share a common scale; gradients are differenced in the
    original units.  Failed simulations count as a loss of ``FAILED_LOSS``
    so the line search backs away from them.

    Returns
    -------
    CalibrationReport
        ``x`` is the best point evaluated; ``flags["stalled"]`` marks a line
        search failure.
    """
    t0 = time.perf_counter()
    sims0 = problem.n_simulations
    lo, hi = problem.lo, problem.hi
    width = hi - lo
    x = problem.initial_guess() if x0 is None else np.array(x0, dtype=float)
    if not problem.contains(x):
        raise ValueError("initial guess outside the bounds")
    state = {"best_x": x.copy(), "best_L": np.inf, "failed": 0}
    evaluated = []

    def loss(p):
        try:
            L = problem.mse(p)
        except LossEvaluationError:
            state["failed"] += 1
            return FAILED_LOSS
        if L < state["best_L"]:
            state["best_x"], state["best_L"] = p.copy(), L
        return L

    def to_p(u):
        return np.clip(lo + u * width, lo, hi)

    def fun(u):
        p = to_p(u)
        evaluated.append(p.copy())
        L = loss(p)
        if L >= FAILED_LOSS:
            return L, np.zeros_like(u)
        g = fd_gradient(loss, p, lo, hi, f0=L)
        return L, g * width

    L0 = loss(x)
    trace, iterates = [L0], [x.copy()]

    def record(u):
        p = to_p(u)
        iterates.append(p)
        trace.append(loss(p))
        if callback is not None:
            callback(len(trace) - 1, p, trace[-1])

    u0 = (x - lo) / width
    res = minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * len(u0),
                   callback=record,
                   options={"maxcor": maxcor, "maxiter": max_iter, "gtol": pgtol,
                            "ftol": ftol, "maxls": 20})
    msg = res.message if isinstance(res.message, str) else res.message.decode()
    flags = {"stalled": "ABNORMAL" in msg.upper(), "message": msg,
             "failed": state["failed"]}
    return _report("qn", problem, state["best_x"], trace, t0, None, int(res.nit), sims0,
                   flags=flags, iterates=iterates, evaluated=evaluated)


# --------------------------------------------------------------------------
# hybrid


def hybrid(problem, M, x0=None, switch_mse=SWITCH_MSE, cmc_it_max=500, qn_max_iter=100,
           seed=None):
    """Correlation steps until ``mse < switch_mse``, then L-BFGS-B from the best iterate."""
    t0 = time.perf_counter()
    sims0 = problem.n_simulations
    first = cmc(problem, M, x0, tol=switch_mse, it_max=cmc_it_max, seed=seed)
    reached = min(first.trace) < switch_mse
    if not reached:
        log.info("cmc phase stopped at mse %.3g above the switch level", min(first.trace))
    second = bounded_quasi_newton(problem, first.x, max_iter=qn_max_iter)
    trace = first.trace + second.trace
    phases = ["cmc"] * len(first.trace) + ["qn"] * len(second.trace)
    x = second.x if min(second.trace) <= min(first.trace) else first.x
    flags = {"switch_reached": bool(reached), "cmc_iterations": first.n_iter,
             "qn_iterations": second.n_iter, "stalled": second.flags["stalled"],
             "cmc": first.flags, "qn": second.flags}
    return _report("hybrid", problem, x, trace, t0, _seed_tag(seed),
                   first.n_iter + second.n_iter, sims0, phases=phases, flags=flags,
                   iterates=first.iterates + second.iterates, evaluated=second.evaluated)


# --------------------------------------------------------------------------
# synthetic data


def generate_synthetic(problem, seed=None, output_names=None):
    """Draw the free parameters uniformly in the bounds and simulate.

    Returns ``(truth, data)`` where ``data`` holds the outputs listed in
    ``output_names`` (default: the problem's data names).  Draws whose
    simulation fails are discarded and redrawn.
    """
    rng = np.random.default_rng(seed)
    names = tuple(output_names or problem.data_names)
    for _ in range(100):
        truth = rng.uniform(problem.lo, problem.hi)
        try:
            out = simulate(problem.parameters(truth), problem.BSA, cfg=problem.cfg)
        except (IntegrationError, ValueError, FloatingPointError):
            continue
        data = out.vector(names)
        if np.all(np.isfinite(data)) and np.all(data != 0):
            return truth, data
    raise LossEvaluationError("could not simulate any synthetic draw")


def add_noise(data, names, seed=None, sigma=None):
    """Multiply each datum by ``1 + eps`` with ``eps ~ Normal(0, sigma[name])``."""
    sigma = MEASUREMENT_NOISE if sigma is None else sigma
    rng = np.random.default_rng(seed)
    data = np.asarray(data, dtype=float)
    s = np.array([sigma[n] for n in names], dtype=float)
    return data * (1.0 + rng.normal(0.0, 1.0, data.shape) * s)


# --------------------------------------------------------------------------
# estimator wrappers


class _CalibratorBase(BaseEstimator):
    """Shared plumbing: ``fit(data, names)`` calibrates, ``predict`` simulates.

    ``data`` may be a ``{output: value}`` mapping, in which case ``names``
    is taken from its keys.
    """

    def _problem(self, data, names):
        if isinstance(data, dict):
            names = tuple(data)
            data = [data[n] for n in names]
        if names is None:
            raise ValueError("output names are required for array data")
        box = self.box if self.box is not None else build_hyperbox(covid=self.covid)
        base = self.base or ParameterSet.reference()
        if self.HR is not None:
            base = base.replace(HR=self.HR)
        return CalibrationProblem.from_box(dict(zip(names, np.asarray(data, dtype=float))),
                                           self.free, box, base, self.BSA, self.cfg)

    def _finish(self, problem, report):
        self.problem_ = problem
        self.report_ = report
        self.params_ = problem.parameters(report.x)
        self.coef_ = report.x
        return self

    def predict(self, names=None):
        """Model outputs of the calibrated parameters."""
        check_is_fitted(self, "report_")
        names = names or self.problem_.data_names
        return simulate(self.params_, self.problem_.BSA, cfg=self.problem_.cfg).vector(names)

    def score(self, data=None, names=None):
        """Negative RMSE of the fitted model against ``data`` (default: fit data)."""
        check_is_fitted(self, "report_")
        if data is None:
            return -self.report_.rmse
        if isinstance(data, dict):
            names = tuple(data)
            data = [data[n] for n in names]
        y = self.predict(names)
        return -float(np.sqrt(np.mean(relative_errors(data, y) ** 2)))


_CALIBRATED = ("EB_LA", "EA_LV", "EB_LV", "EA_RV", "R_AR_SYS", "C_AR_SYS", "R_VEN_SYS")


class CMCCalibrator(_CalibratorBase):
    def __init__(self, matrix=None, free=_CALIBRATED, box=None, covid=False, base=None,
                 HR=None, BSA=None, it_max=500, tol=SUCCESS_RMSE ** 2, keep_going=False,
                 seed=None, cfg=None):
        self.matrix = matrix
        self.free = free
        self.box = box
        self.covid = covid
        self.base = base
        self.HR = HR
        self.BSA = BSA
        self.it_max = it_max
        self.tol = tol
        self.keep_going = keep_going
        self.seed = seed
        self.cfg = cfg

    def fit(self, data, names=None, x0=None):
        if self.matrix is None:
            raise ValueError("CMCCalibrator needs a correlation matrix")
        problem = self._problem(data, names)
        rep = cmc(problem, self.matrix, x0, self.tol, self.it_max, self.seed, self.keep_going)
        return self._finish(problem, rep)


class QuasiNewtonCalibrator(_CalibratorBase):
    def __init__(self, free=_CALIBRATED, box=None, covid=False, base=None, HR=None, BSA=None,
                 max_iter=100, cfg=None):
        self.free = free
        self.box = box
        self.covid = covid
        self.base = base
        self.HR = HR
        self.BSA = BSA
        self.max_iter = max_iter
        self.cfg = cfg

    def fit(self, data, names=None, x0=None):
        problem = self._problem(data, names)
        return self._finish(problem, bounded_quasi_newton(problem, x0, self.max_iter))


class HybridCalibrator(_CalibratorBase):
    def __init__(self, matrix=None, free=_CALIBRATED, box=None, covid=False, base=None,
                 HR=None, BSA=None, switch_mse=SWITCH_MSE, cmc_it_max=500, max_iter=100,
                 seed=None, cfg=None):
        self.matrix = matrix
        self.free = free
        self.box = box
        self.covid = covid
        self.base = base
        self.HR = HR
        self.BSA = BSA
        self.switch_mse = switch_mse
        self.cmc_it_max = cmc_it_max
        self.max_iter = max_iter
        self.seed = seed
        self.cfg = cfg

    def fit(self, data, names=None, x0=None):
        if self.matrix is None:
            raise ValueError("HybridCalibrator needs a correlation matrix")
        problem = self._problem(data, names)
        rep = hybrid(problem, self.matrix, x0, self.switch_mse, self.cmc_it_max,
                     self.max_iter, self.seed)
        return self._finish(problem, rep)
