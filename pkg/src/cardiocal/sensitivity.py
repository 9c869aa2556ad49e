"""Global sensitivity analysis and parameter/output correlations.

Total-effect Sobol indices are estimated on a Saltelli design with the Jansen
estimator; the Pearson correlation matrix between parameters and outputs feeds
the correlation-guided calibration.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .model import CALIBRATION_OUTPUTS, OUTPUT_NAMES, PARAMETER_NAMES, ParameterSet
from .simulation import evaluate_outputs

__all__ = [
    "Hyperbox",
    "SensitivityResult",
    "CorrelationMatrix",
    "UndefinedCorrelationError",
    "build_hyperbox",
    "saltelli_sample",
    "total_sobol",
    "select_parameters",
    "pearson",
    "correlation_matrix",
    "build_correlation_matrix",
    "run_sobol",
    "TotalSobolAnalyzer",
    "CorrelationAnalyzer",
]

log = logging.getLogger(__name__)

SOBOL_TOLERANCE = 0.05
SELECTION_THRESHOLD = 0.1
_ACTIVE_ELASTANCES = ("EA_LA", "EA_LV", "EA_RA", "EA_RV")
_PULMONARY_RESISTANCES = ("R_AR_PUL", "R_C_PUL", "R_SH", "R_VEN_PUL")
_PULMONARY_COMPLIANCES = ("C_AR_PUL", "C_C_PUL", "C_SH", "C_VEN_PUL")


class UndefinedCorrelationError(ValueError):
    """Correlation requested for a constant sample."""


@dataclass(frozen=True)
class Hyperbox:
    names: tuple
    lo: np.ndarray
    hi: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        if not (len(self.names) == len(self.lo) == len(self.hi) == len(self.reference)):
            raise ValueError("hyperbox arrays must match the parameter names")
        if np.any(self.lo >= self.hi):
            raise ValueError("every interval needs lo < hi")
        if np.any(self.reference < self.lo) or np.any(self.reference > self.hi):
            raise ValueError("reference value outside its interval")

    def __len__(self):
        return len(self.names)

    def bounds(self, names=None):
        """``(lo, hi)`` arrays, optionally restricted to ``names``."""
        if names is None:
            return self.lo.copy(), self.hi.copy()
        idx = [self.names.index(n) for n in names]
        return self.lo[idx], self.hi[idx]

    def scale(self, unit):
        """Map points of the unit cube into the box."""
        return self.lo + np.asarray(unit) * (self.hi - self.lo)

    def contains(self, X):
        X = np.atleast_2d(X)
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)

    def digest(self):
        h = hashlib.sha256()
        h.update(",".join(self.names).encode())
        h.update(np.ascontiguousarray(self.lo, dtype=float).tobytes())
        h.update(np.ascontiguousarray(self.hi, dtype=float).tobytes())
        return h.hexdigest()[:16]


def build_hyperbox(pref=None, covid=False, names=PARAMETER_NAMES):
    """Intervals of +/-2/3 around the reference values.

    With ``covid=True`` the lower bounds of the active elastances are halved,
    the upper bounds of the pulmonary resistances tripled and the lower bounds
    of the pulmonary compliances divided by three.
    """
    pref = pref or ParameterSet.reference()
    ref = pref.values(names)
    lo = ref * (1.0 - 2.0 / 3.0)
    hi = ref * (1.0 + 2.0 / 3.0)
    if covid:
        for i, n in enumerate(names):
            if n in _ACTIVE_ELASTANCES:
                lo[i] /= 2.0
            elif n in _PULMONARY_RESISTANCES:
                hi[i] *= 3.0
            elif n in _PULMONARY_COMPLIANCES:
                lo[i] /= 3.0
    return Hyperbox(tuple(names), lo, hi, ref)


# --------------------------------------------------------------------------
# Saltelli design and total Sobol indices


def saltelli_sample(box, N, seed=None):
    """Radial Saltelli design with ``2 N (d + 1)`` rows.

    Row blocks, in order: ``A`` (N), ``B`` (N), ``AB_1..AB_d`` (N each) where
    column ``i`` of ``A`` is taken from ``B``, then ``BA_1..BA_d``.  The base
    matrices come from a scrambled Sobol sequence in ``2d`` dimensions.
    """
    d = len(box)
    N = int(N)
    if N < 1:
        raise ValueError("N must be positive")
    engine = qmc.Sobol(2 * d, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        base = engine.random(N)
    A = box.scale(base[:, :d])
    B = box.scale(base[:, d:])
    blocks = [A, B]
    for i in range(d):
        AB = A.copy()
        AB[:, i] = B[:, i]
        blocks.append(AB)
    for i in range(d):
        BA = B.copy()
        BA[:, i] = A[:, i]
        blocks.append(BA)
    return np.vstack(blocks)


def _split_design(Y, d):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n_rows = Y.shape[0]
    if n_rows % (2 * (d + 1)):
        raise ValueError("output rows do not match a Saltelli design of this dimension")
    N = n_rows // (2 * (d + 1))
    fA = Y[:N]
    fB = Y[N:2 * N]
    fAB = Y[2 * N:(2 + d) * N].reshape(d, N, -1)
    fBA = Y[(2 + d) * N:].reshape(d, N, -1)
    return N, fA, fB, fAB, fBA


def _jansen(fA, fB, fAB, fBA):
    """Total indices (d, m) and per-output variance from design blocks."""
    var = np.var(np.concatenate([fA, fB]), axis=0, ddof=1)
    # Both radial directions: f(A) vs f(AB_i) and f(B) vs f(BA_i).
    num = 0.5 * (np.mean((fA[None] - fAB) ** 2, axis=1)
                 + np.mean((fB[None] - fBA) ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        S = 0.5 * num / var
    return S, var


@dataclass
class SensitivityResult:
    """Total Sobol indices ``S_T[k, j]`` for parameter ``k`` and output ``j``."""

    parameters: tuple
    outputs: tuple
    S_T: np.ndarray
    ci: np.ndarray
    n_base: int
    degenerate: np.ndarray = field(default=None)
    n_dropped: int = 0
    seed: int | None = None
    box_hash: str | None = None

    def __post_init__(self):
        self.S_T = np.asarray(self.S_T, dtype=float)
        self.ci = np.asarray(self.ci, dtype=float)
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.outputs), dtype=bool)
        self.degenerate = np.asarray(self.degenerate, dtype=bool)

    def index(self, parameter, output):
        return self.S_T[self.parameters.index(parameter), self.outputs.index(output)]

    def subset(self, outputs):
        idx = [self.outputs.index(o) for o in outputs]
        return SensitivityResult(self.parameters, tuple(outputs), self.S_T[:, idx],
                                 self.ci[:, idx], self.n_base, self.degenerate[idx],
                                 self.n_dropped, self.seed, self.box_hash)


def total_sobol(samples, outputs, parameters=PARAMETER_NAMES, output_names=None,
                n_bootstrap=100, seed=None):
    """Jansen total-effect indices on a Saltelli design.

    Rows with any NaN output are removed together with their partners in
    every block.  Outputs with zero variance give indices of 0 and are
    flagged as degenerate.  Confidence half-widths are 95% percentile
    bootstrap intervals over resampled base rows.
    """
    d = len(parameters)
    Y = np.asarray(outputs, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if samples is not None and np.shape(samples)[0] != Y.shape[0]:
        raise ValueError("samples and outputs have different row counts")
    output_names = tuple(output_names or (f"y{j}" for j in range(Y.shape[1])))
    N, fA, fB, fAB, fBA = _split_design(Y, d)

    bad = (np.isnan(fA).any(1) | np.isnan(fB).any(1)
           | np.isnan(fAB).any(axis=(0, 2)) | np.isnan(fBA).any(axis=(0, 2)))
    keep = ~bad
    if bad.any():
        log.warning("dropping %d of %d base rows with failed simulations", bad.sum(), N)
    fA, fB, fAB, fBA = fA[keep], fB[keep], fAB[:, keep], fBA[:, keep]
    n = fA.shape[0]
    if n < 2:
        raise ValueError("not enough valid rows to estimate indices")

    S, var = _jansen(fA, fB, fAB, fBA)
    degenerate = ~(var > 0)
    S[:, degenerate] = 0.0

    rng = np.random.default_rng(seed)
    boot = np.empty((n_bootstrap,) + S.shape)
    for b in range(n_bootstrap):
        idx = rng.integers(0, n, n)
        Sb, _ = _jansen(fA[idx], fB[idx], fAB[:, idx], fBA[:, idx])
        boot[b] = Sb
    boot[:, :, degenerate] = 0.0
    if n_bootstrap > 1:
        lo, hi = np.nanpercentile(boot, [2.5, 97.5], axis=0)
        ci = 0.5 * (hi - lo)
    else:
        ci = np.full_like(S, np.nan)
    return SensitivityResult(tuple(parameters), output_names, S, ci, n,
                             degenerate, int(bad.sum()), seed)


def select_parameters(result, threshold=SELECTION_THRESHOLD, outputs=CALIBRATION_OUTPUTS):
    """Parameters whose total index reaches ``threshold`` for some output in ``outputs``.

    Returned in the order of ``result.parameters``.
    """
    outputs = tuple(outputs)
    if not outputs:
        raise ValueError("output subset is empty")
    sub = result.subset(outputs).S_T
    return tuple(p for p, row in zip(result.parameters, sub) if row.max() >= threshold)


def run_sobol(N, box=None, seed=0, output_names=OUTPUT_NAMES, jobs=1, cfg=None,
              progress=None, n_bootstrap=100):
    """Saltelli sweep of the circulation model followed by :func:`total_sobol`.

    Returns ``(result, samples, outputs)``.
    """
    box = box or build_hyperbox()
    X = saltelli_sample(box, N, seed)
    Y = evaluate_outputs(X, box.names, output_names=output_names, cfg=cfg,
                         jobs=jobs, progress=progress)
    res = total_sobol(X, Y, box.names, output_names, n_bootstrap=n_bootstrap, seed=seed)
    res.seed = seed
    res.box_hash = box.digest()
    return res, X, Y


# --------------------------------------------------------------------------
# Pearson correlations


def pearson(x, y):
    """Sample Pearson correlation coefficient of two equally long vectors.

    Raises
    ------
    UndefinedCorrelationError
        If either sample has zero variance.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if x.size < 2:
        raise ValueError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant sample")
    r = (dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def correlation_matrix(X, Y):
    """Column-wise Pearson coefficients, shape ``(X.shape[1], Y.shape[1])``.

    Entries involving a constant column are set to 0.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    dX = X - X.mean(0)
    dY = Y - Y.mean(0)
    nx = np.sqrt((dX ** 2).sum(0))
    ny = np.sqrt((dY ** 2).sum(0))
    with np.errstate(divide="ignore", invalid="ignore"):
        M = (dX.T @ dY) / np.outer(nx, ny)
    M[~np.isfinite(M)] = 0.0
    return np.clip(M, -1.0, 1.0)


@dataclass
class CorrelationMatrix:
    """Pearson coefficients ``M[l, j]`` between parameter ``l`` and output ``j``."""

    parameters: tuple
    outputs: tuple
    M: np.ndarray
    n_samples: int
    seed: int | None = None
    box_hash: str | None = None
    n_dropped: int = 0

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        if self.M.shape != (len(self.parameters), len(self.outputs)):
            raise ValueError("matrix shape does not match its labels")
        if np.any(np.abs(self.M) > 1.0):
            raise ValueError("correlation entries must lie in [-1, 1]")

    def __getitem__(self, key):
        parameter, output = key
        return self.M[self.parameters.index(parameter), self.outputs.index(output)]

    def restrict(self, parameters, outputs):
        """Sub-matrix for the given parameter and output names."""
        pi = [self.parameters.index(p) for p in parameters]
        oi = [self.outputs.index(o) for o in outputs]
        return CorrelationMatrix(tuple(parameters), tuple(outputs),
                                 self.M[np.ix_(pi, oi)], self.n_samples, self.seed,
                                 self.box_hash, self.n_dropped)


class SimulationDropError(RuntimeError):
    """Too many failed simulations in a correlation sweep."""


def build_correlation_matrix(box=None, n=None, seed=0, output_names=OUTPUT_NAMES,
                             jobs=1, cfg=None, progress=None, max_drop=0.01):
    """Uniform i.i.d. sweep of the box, ``n = 100 d`` simulations by default.

    Failed samples are dropped; more than ``max_drop`` of them is an error.
    """
    box = box or build_hyperbox()
    n = n or 100 * len(box)
    rng = np.random.default_rng(seed)
    X = box.scale(rng.random((n, len(box))))
    Y = evaluate_outputs(X, box.names, output_names=output_names, cfg=cfg,
                         jobs=jobs, progress=progress)
    ok = ~np.isnan(Y).any(axis=1)
    dropped = int((~ok).sum())
    if dropped:
        log.warning("dropped %d of %d correlation samples", dropped, n)
    if dropped > max_drop * n:
        raise SimulationDropError(f"{dropped} of {n} simulations failed")
    M = correlation_matrix(X[ok], Y[ok])
    return CorrelationMatrix(tuple(box.names), tuple(output_names), M, int(ok.sum()),
                             seed, box.digest(), dropped)


# --------------------------------------------------------------------------
# estimator wrappers


class TotalSobolAnalyzer(BaseEstimator):
    """Estimator wrapper around :func:`total_sobol`.

    ``fit(X, Y)`` takes a Saltelli design and the matching outputs.
    ``transform`` is not defined; the fitted indices live in ``indices_``.
    """

    def __init__(self, parameters=PARAMETER_NAMES, n_bootstrap=100, threshold=0.1,
                 seed=None):
        self.parameters = parameters
        self.n_bootstrap = n_bootstrap
        self.threshold = threshold
        self.seed = seed

    def fit(self, X, Y, output_names=None):
        X = check_array(X)
        Y = check_array(Y, ensure_2d=False, ensure_all_finite="allow-nan")
        if X.shape[1] != len(self.parameters):
            raise ValueError("X columns must match the parameter names")
        self.result_ = total_sobol(X, Y, self.parameters, output_names,
                                   self.n_bootstrap, self.seed)
        self.indices_ = self.result_.S_T
        self.confidence_ = self.result_.ci
        return self

    def selected(self, outputs=None):
        check_is_fitted(self, "result_")
        return select_parameters(self.result_, self.threshold,
                                 outputs or self.result_.outputs)


class CorrelationAnalyzer(BaseEstimator):
    """Estimator wrapper around :func:`correlation_matrix`."""

    def __init__(self, parameters=PARAMETER_NAMES):
        self.parameters = parameters

    def fit(self, X, Y, output_names=None):
        X = check_array(X)
        Y = check_array(Y)
        if X.shape[1] != len(self.parameters):
            raise ValueError("X columns must match the parameter names")
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different row counts")
        output_names = tuple(output_names or (f"y{j}" for j in range(Y.shape[1])))
        self.matrix_ = CorrelationMatrix(tuple(self.parameters), output_names,
                                         correlation_matrix(X, Y), X.shape[0])
        self.coef_ = self.matrix_.M
        return self
