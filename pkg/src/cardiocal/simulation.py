"""Limit-cycle runs of the circulation model."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .integrator import (IntegrationError, IntegratorConfig, integrate, make_kernel,
                         register_kernel)
from .model import (OUTPUT_NAMES, BeatTrajectory, ModelOutputs, ParameterSet,
                    _rhs_into, compute_outputs, default_initial_state)

__all__ = ["LimitCycle", "run_to_limit_cycle", "simulate", "evaluate_outputs"]

log = logging.getLogger(__name__)


register_kernel(_rhs_into, make_kernel(_rhs_into, "_dopri5_circulation", cache=True))


@dataclass
class LimitCycle:
    trajectory: BeatTrajectory
    residual: float
    x_final: np.ndarray
    n_steps: int

    def outputs(self, p, BSA=None) -> ModelOutputs:
        return compute_outputs(self.trajectory, p, BSA)


def run_to_limit_cycle(p, x0=None, cfg=None):
    """Integrate ``cfg.beats`` heartbeats and resample the last one.

    The periodicity residual is ``|x(T) - x(T - T_HB)| / |x(T)|``.

    Raises
    ------
    IntegrationError
        Propagated from :func:`integrate`.
    """
    cfg = cfg or IntegratorConfig()
    x0 = default_initial_state(p) if x0 is None else np.asarray(x0, dtype=float)
    T = cfg.beats * p.T_HB
    grid = np.linspace(T - p.T_HB, T, cfg.grid_points)
    sol = integrate(_rhs_into, x0, 0.0, T, cfg, args=p.as_array(), t_eval=grid)
    states = sol.y_eval
    states[-1] = sol.x_final
    residual = float(np.linalg.norm(states[-1] - states[0]) / np.linalg.norm(states[-1]))
    traj = BeatTrajectory.from_states(grid, states, p)
    return LimitCycle(traj, residual, sol.x_final, sol.n_steps)


def simulate(p, BSA=None, x0=None, cfg=None) -> ModelOutputs:
    """Model outputs of the converged heartbeat for parameters ``p``."""
    return run_to_limit_cycle(p, x0, cfg).outputs(p, BSA)


def _evaluate_row(args):
    base, names, row, output_names, BSA, cfg = args
    try:
        p = base.with_values(names, row)
        return simulate(p, BSA, cfg=cfg).vector(output_names)
    except (IntegrationError, ValueError, FloatingPointError) as exc:
        log.debug("simulation failed for %s: %s", dict(zip(names, row)), exc)
        return np.full(len(output_names), np.nan)


def evaluate_outputs(samples, names, base=None, output_names=OUTPUT_NAMES,
                     BSA=None, cfg=None, jobs=1, progress=None):
    """Simulate every row of ``samples`` and collect the requested outputs.

    Rows whose simulation fails are returned as NaN.  Results are ordered by
    row index regardless of ``jobs``.

    Parameters
    ----------
    samples : ndarray, shape (n, len(names))
    names : sequence of str
        Parameter names of the sample columns; the others come from ``base``.
    jobs : int
        Worker processes; ``jobs <= 1`` runs in-process.
    progress : callable, optional
        Called as ``progress(done, total)``.
    """
    base = base or ParameterSet.reference()
    samples = np.asarray(samples, dtype=float)
    tasks = [(base, tuple(names), row, tuple(output_names), BSA, cfg) for row in samples]
    out = np.empty((len(tasks), len(output_names)))
    if jobs is None or jobs <= 1:
        for i, task in enumerate(tasks):
            out[i] = _evaluate_row(task)
            if progress is not None:
                progress(i + 1, len(tasks))
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for i, row in enumerate(pool.map(_evaluate_row, tasks, chunksize=16)):
            out[i] = row
            if progress is not None:
                progress(i + 1, len(tasks))
    return out
