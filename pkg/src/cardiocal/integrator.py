"""Adaptive Dormand-Prince 5(4) integration with dense output.

The stepping kernel is compiled with numba when the right-hand side is itself
a numba-jitted function, and runs as plain Python otherwise.  Both paths
execute the same source.
"""

from __future__ import annotations

import types
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numba.extending import is_jitted

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "Solution",
    "integrate",
]

# Butcher tableau of the Dormand-Prince pair.
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0)
A71, A73, A74, A75, A76 = (
    35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)
# Difference between the 5th and 4th order weights.
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0,
    22.0 / 525.0, -1.0 / 40.0)
# Continuous extension (Hairer, Norsett & Wanner).
D1, D3, D4, D5, D6, D7 = (
    -12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)

# PI step-size controller constants.
_SAFE = 0.9
_BETA = 0.04
_EXPO1 = 0.2 - _BETA * 0.75
_FAC_MIN = 0.2
_FAC_MAX = 10.0

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_NONFINITE = 3

_STATUS_TEXT = {
    STATUS_STEP_UNDERFLOW: "step size fell below h_min",
    STATUS_MAX_STEPS: "step budget exhausted",
    STATUS_NONFINITE: "non-finite state or derivative",
}


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step bounds for :func:`integrate`.

    ``beats`` and ``grid_points`` are only used by the limit-cycle driver.
    """

    rtol: float = 1e-7
    atol: float = 1e-7
    h_init: float = 1e-4
    h_min: float = 1e-9
    h_max: float = 0.05
    max_steps: int = 5_000_000
    beats: int = 25
    grid_points: int = 1000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not (0 < self.h_min < self.h_max):
            raise ValueError("need 0 < h_min < h_max")
        if not 0 < self.h_init:
            raise ValueError("h_init must be positive")
        if self.beats < 2:
            raise ValueError("beats must be >= 2")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot reach the final time."""

    def __init__(self, message, t, x):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t
        self.x = x


@dataclass
class Solution:
    """Result of :func:`integrate`.

    ``t_eval``/``y_eval`` hold the states sampled through the continuous
    extension; when ``dense=True`` was requested the solution can also be
    called at arbitrary times inside ``[t0, t1]``.
    """

    t0: float
    t1: float
    x_final: np.ndarray
    t_eval: np.ndarray
    y_eval: np.ndarray
    n_steps: int
    n_rejected: int
    n_fev: int
    max_error: float
    _dense_t: np.ndarray | None = field(default=None, repr=False)
    _dense_c: np.ndarray | None = field(default=None, repr=False)

    def __call__(self, t):
        if self._dense_t is None:
            raise ValueError("solution was computed without dense=True")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = min(self.t0, self.t1), max(self.t0, self.t1)
        if np.any((t < lo - 1e-12) | (t > hi + 1e-12)):
            raise ValueError("requested time outside the integration interval")
        starts = self._dense_t[:-1]
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(starts) - 1)
        h = self._dense_t[idx + 1] - starts[idx]
        theta = (t - starts[idx]) / h
        c = self._dense_c[idx]
        th = theta[:, None]
        th1 = 1.0 - th
        out = c[:, 0] + th * (c[:, 1] + th1 * (c[:, 2] + th * (c[:, 3] + th1 * c[:, 4])))
        return out if out.shape[0] > 1 else out[0]


@njit(cache=True, error_model="numpy")
def _norm(err, x, xnew, rtol, atol):
    s = 0.0
    n = err.shape[0]
    for i in range(n):
        sc = atol + rtol * max(abs(x[i]), abs(xnew[i]))
        s += (err[i] / sc) ** 2
    return np.sqrt(s / n)


# Right-hand side called by the kernel.  Each compiled kernel is a copy of
# ``_dopri5`` whose globals bind this name to one function, so numba sees a
# static call and can cache the result on disk.
_rhs = None


def _dopri5(p, x0, t0, t1, t_eval, rtol, atol, h_init, h_min, h_max,
            max_steps, dense):
    n = x0.shape[0]
    x = x0.copy()
    t = t0
    n_eval = t_eval.shape[0]
    y_eval = np.empty((n_eval, n))
    i_eval = 0
    while i_eval < n_eval and t_eval[i_eval] <= t0:
        y_eval[i_eval, :] = x0
        i_eval += 1

    cap = 1024 if dense else 1
    dense_t = np.empty(cap)
    dense_c = np.empty((cap, 5, n))
    n_dense = 0
    if dense:
        dense_t[0] = t0
        n_dense = 1

    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    _rhs(t, x, p, k1)
    n_fev = 1
    for i in range(n):
        if not np.isfinite(k1[i]) or not np.isfinite(x[i]):
            return STATUS_NONFINITE, t, x, y_eval, 0, 0, n_fev, 0.0, dense_t, dense_c, n_dense

    h = min(h_init, h_max, t1 - t0)
    fac_old = 1e-4
    n_steps = 0
    n_rej = 0
    last_rejected = False
    max_err = 0.0
    ytmp = np.empty(n)
    xnew = np.empty(n)
    err = np.empty(n)

    while t < t1:
        if n_steps >= max_steps:
            return STATUS_MAX_STEPS, t, x, y_eval, n_steps, n_rej, n_fev, max_err, dense_t, dense_c, n_dense
        if h < h_min:
            return STATUS_STEP_UNDERFLOW, t, x, y_eval, n_steps, n_rej, n_fev, max_err, dense_t, dense_c, n_dense
        last = False
        if t + 1.01 * h >= t1:
            h = t1 - t
            last = True

        for i in range(n):
            ytmp[i] = x[i] + h * A21 * k1[i]
        _rhs(t + C2 * h, ytmp, p, k2)
        for i in range(n):
            ytmp[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(t + C3 * h, ytmp, p, k3)
        for i in range(n):
            ytmp[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(t + C4 * h, ytmp, p, k4)
        for i in range(n):
            ytmp[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(t + C5 * h, ytmp, p, k5)
        for i in range(n):
            ytmp[i] = x[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                                  + A64 * k4[i] + A65 * k5[i])
        _rhs(t + h, ytmp, p, k6)
        for i in range(n):
            xnew[i] = x[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i]
                                  + A75 * k5[i] + A76 * k6[i])
        t_new = t1 if last else t + h
        _rhs(t_new, xnew, p, k7)
        n_fev += 6
        finite = True
        for i in range(n):
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                          + E6 * k6[i] + E7 * k7[i])
            if not (np.isfinite(err[i]) and np.isfinite(xnew[i])):
                finite = False
        if finite:
            e = _norm(err, x, xnew, rtol, atol)
        else:
            e = 1e10

        fac11 = e ** _EXPO1
        if e <= 1.0:
            fac = fac11 / fac_old ** _BETA
            fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac / _SAFE))
            h_next = h / fac
            fac_old = max(e, 1e-4)
            if e > max_err:
                max_err = e

            # dense output over [t, t_new]
            need_eval = i_eval < n_eval and t_eval[i_eval] <= t_new
            if need_eval or dense:
                r5 = np.empty(n)
                for i in range(n):
                    r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                 + D6 * k6[i] + D7 * k7[i])
                while i_eval < n_eval and t_eval[i_eval] <= t_new:
                    th = (t_eval[i_eval] - t) / (t_new - t)
                    th1 = 1.0 - th
                    for i in range(n):
                        r2 = xnew[i] - x[i]
                        r3 = h * k1[i] - r2
                        r4 = r2 - h * k7[i] - r3
                        y_eval[i_eval, i] = x[i] + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5[i])))
                    i_eval += 1
                if dense:
                    if n_dense >= cap:
                        cap *= 2
                        grown_t = np.empty(cap)
                        grown_c = np.empty((cap, 5, n))
                        grown_t[:n_dense] = dense_t[:n_dense]
                        grown_c[:n_dense] = dense_c[:n_dense]
                        dense_t = grown_t
                        dense_c = grown_c
                    for i in range(n):
                        r2 = xnew[i] - x[i]
                        r3 = h * k1[i] - r2
                        dense_c[n_dense - 1, 0, i] = x[i]
                        dense_c[n_dense - 1, 1, i] = r2
                        dense_c[n_dense - 1, 2, i] = r3
                        dense_c[n_dense - 1, 3, i] = r2 - h * k7[i] - r3
                        dense_c[n_dense - 1, 4, i] = r5[i]
                    dense_t[n_dense] = t_new
                    n_dense += 1

            for i in range(n):
                x[i] = xnew[i]
                k1[i] = k7[i]
            t = t_new
            n_steps += 1
            if last_rejected:
                h_next = min(h_next, h)
            last_rejected = False
            h = min(h_next, h_max)
        else:
            h = h / min(1.0 / _FAC_MIN, fac11 / _SAFE)
            n_rej += 1
            n_steps += 1
            last_rejected = True

    return STATUS_OK, t, x, y_eval, n_steps, n_rej, n_fev, max_err, dense_t, dense_c, n_dense


_adapters = {}
_kernels = {}


def make_kernel(f, name=None, cache=False):
    """Stepping kernel bound to the in-place right-hand side ``f``.

    The kernel is jitted when ``f`` is.  ``cache=True`` stores it on disk
    under ``name``, which must then be unique per right-hand side.
    """
    g = dict(_dopri5.__globals__)
    g["_rhs"] = f
    name = name or f"_dopri5_{getattr(f, '__name__', 'rhs')}"
    fn = types.FunctionType(_dopri5.__code__, g, name)
    fn.__qualname__ = name
    if not is_jitted(f):
        return fn
    return njit(cache=cache, error_model="numpy")(fn)


def register_kernel(rhs, kernel):
    """Use ``kernel`` whenever :func:`integrate` is called with ``rhs``."""
    _kernels[rhs] = kernel


def _in_place(rhs):
    """Adapt ``rhs(t, x, p) -> dx`` to the kernel's ``f(t, x, p, out)`` form."""
    if getattr(rhs, "_in_place", False):
        return rhs
    if not is_jitted(rhs):
        def f(t, x, p, out):
            out[:] = rhs(t, x, p)
        return f
    if rhs not in _adapters:
        @njit
        def g(t, x, p, out):
            out[:] = rhs(t, x, p)
        _adapters[rhs] = g
    return _adapters[rhs]


def integrate(rhs, x0, t0, t1, cfg=None, *, args=None, t_eval=None, dense=False):
    """Integrate ``x' = rhs(t, x, args)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, x, args) -> ndarray``.  When ``rhs`` is numba-jitted the
        whole stepping loop runs compiled.  Functions flagged with an
        ``_in_place`` attribute instead fill a preallocated output:
        ``rhs(t, x, args, out)``.
    x0 : array_like
        Initial state.
    t0, t1 : float
        Integration interval, ``t1 > t0``.
    cfg : IntegratorConfig, optional
    args : ndarray, optional
        Extra parameter array forwarded to ``rhs``.
    t_eval : array_like, optional
        Sorted times at which to sample the continuous extension.
    dense : bool
        Keep per-step interpolation data so the returned solution is callable.

    Raises
    ------
    IntegrationError
        If the step size underflows, the step budget is exhausted or the state
        becomes non-finite.
    """
    cfg = cfg or IntegratorConfig()
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    x0 = np.ascontiguousarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state contains non-finite values")
    t_eval = (np.empty(0) if t_eval is None
              else np.ascontiguousarray(t_eval, dtype=float))
    if t_eval.size and (np.any(np.diff(t_eval) < 0)
                        or t_eval[0] < t0 or t_eval[-1] > t1):
        raise ValueError("t_eval must be sorted and lie inside [t0, t1]")
    args = np.empty(0) if args is None else np.ascontiguousarray(args, dtype=float)

    opts = (args, x0, float(t0), float(t1), t_eval, cfg.rtol, cfg.atol,
            cfg.h_init, cfg.h_min, cfg.h_max, cfg.max_steps, dense)
    if rhs not in _kernels:
        _kernels[rhs] = make_kernel(_in_place(rhs))
    out = _kernels[rhs](*opts)
    (status, t, x, y_eval, n_steps, n_rej, n_fev, max_err,
     dense_t, dense_c, n_dense) = out
    if status != STATUS_OK:
        raise IntegrationError(_STATUS_TEXT[status], t, x)
    sol = Solution(float(t0), float(t1), x, t_eval, y_eval, n_steps, n_rej,
                   n_fev, max_err)
    if dense:
        sol._dense_t = dense_t[:n_dense].copy()
        sol._dense_c = dense_c[: n_dense - 1].copy()
    return sol
