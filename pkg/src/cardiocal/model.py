"""Lumped-parameter closed-loop circulation with time-varying elastance chambers.

The circulation has four cardiac chambers, RLC Windkessel arterial and venous
compartments for the systemic and pulmonary circuits, RC capillary beds and a
parallel pulmonary shunt branch.  Fourteen state variables: four chamber
volumes, six compartment pressures and four inertial flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from numba import njit

__all__ = [
    "CHAMBERS",
    "COMPARTMENTS",
    "PARAMETER_NAMES",
    "STATE_NAMES",
    "DERIVED_NAMES",
    "CALIBRATION_OUTPUTS",
    "OUTPUT_NAMES",
    "INDEXED_OUTPUTS",
    "REFERENCE_BSA",
    "ChamberParams",
    "CompartmentParams",
    "ParameterSet",
    "ModelOutputs",
    "BeatTrajectory",
    "activation",
    "elastance",
    "chamber_pressure",
    "valve_resistance",
    "valve_flow",
    "rhs",
    "derived_quantities",
    "stressed_volume",
    "default_initial_state",
    "compute_outputs",
]

CHAMBERS = ("LA", "LV", "RA", "RV")
COMPARTMENTS = ("AR_SYS", "C_SYS", "VEN_SYS", "AR_PUL", "C_PUL", "VEN_PUL")
_CAPILLARIES = ("C_SYS", "C_PUL")

STATE_NAMES = (
    "V_LA", "V_LV", "V_RA", "V_RV",
    "p_AR_SYS", "p_C_SYS", "p_VEN_SYS", "p_AR_PUL", "p_C_PUL", "p_VEN_PUL",
    "Q_AR_SYS", "Q_VEN_SYS", "Q_AR_PUL", "Q_VEN_PUL",
)
DERIVED_NAMES = (
    "p_LA", "p_LV", "p_RA", "p_RV",
    "Q_MV", "Q_AV", "Q_TV", "Q_PV", "Q_C_SYS", "Q_C_PUL", "Q_SH",
)

# The 32 parameters that vary in the sensitivity hyperbox (HR and the
# activation timings excluded).
PARAMETER_NAMES = (
    "EA_LA", "EB_LA", "VU_LA",
    "EA_LV", "EB_LV", "VU_LV",
    "EA_RA", "EB_RA", "VU_RA",
    "EA_RV", "EB_RV", "VU_RV",
    "R_min", "R_max",
    "R_AR_SYS", "C_AR_SYS", "L_AR_SYS",
    "R_C_SYS", "C_C_SYS",
    "R_VEN_SYS", "C_VEN_SYS", "L_VEN_SYS",
    "R_AR_PUL", "C_AR_PUL", "L_AR_PUL",
    "R_C_PUL", "C_C_PUL",
    "R_SH", "C_SH",
    "R_VEN_PUL", "C_VEN_PUL", "L_VEN_PUL",
)
TIMING_NAMES = tuple(f"{k}_{c}" for c in CHAMBERS for k in ("tC", "TC", "tR", "TR"))

CALIBRATION_OUTPUTS = (
    "LA_Vmax", "LV_EDV", "LV_ESV", "LV_EF", "maxGradP_rAV",
    "SAP_max", "SAP_min", "PAP_max",
)
OUTPUT_NAMES = CALIBRATION_OUTPUTS + (
    "LA_Pmax", "LA_Pmin", "LA_Pmean", "LV_SV", "CO", "LV_Pmax", "LV_Pmin",
    "RA_Vmax", "RA_Pmax", "RA_Pmin", "RA_Pmean", "RV_EDV", "RV_ESV", "RV_EF",
    "RV_Pmax", "RV_Pmin", "PAP_min", "PAP_mean", "PWP_min", "PWP_mean",
    "SVR", "PVR", "shunt_fraction",
)
# body surface area (m^2) of the reference individual, implied by CI = CO / BSA
REFERENCE_BSA = 1.77

# indexed name -> raw name; CI is CO / BSA.
INDEXED_OUTPUTS = {
    "LA_IVmax": "LA_Vmax",
    "LV_IEDV": "LV_EDV",
    "RA_IVmax": "RA_Vmax",
    "RV_IEDV": "RV_EDV",
    "RV_IESV": "RV_ESV",
    "CI": "CO",
}


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ChamberParams:
    """Elastance law of one cardiac chamber (times in seconds)."""

    EA: float
    EB: float
    VU: float
    tC: float
    TC: float
    tR: float
    TR: float

    def validate(self, T_HB):
        if not (self.EA > 0 and self.EB > 0):
            raise ValueError("elastances must be positive")
        if self.VU < 0:
            raise ValueError("unloaded volume must be non-negative")
        if self.TC < 0 or self.TR < 0:
            raise ValueError("contraction/relaxation durations must be non-negative")
        if self.TC + self.TR > T_HB * (1 + 1e-12):
            raise ValueError("TC + TR exceeds the heartbeat period")
        if not 0 <= self.tC < T_HB:
            raise ValueError("tC must lie in [0, T_HB)")


@dataclass(frozen=True)
class CompartmentParams:
    R: float
    C: float
    L: float = 0.0

    def validate(self):
        if not (self.R > 0 and self.C > 0):
            raise ValueError("resistance and compliance must be positive")
        if self.L < 0:
            raise ValueError("inertance must be non-negative")


# Activation timings as fractions of the heartbeat period; tR = tC + TC.
_TIMING_FRACTIONS = {
    "LA": (0.75, 0.1, 0.8),
    "LV": (0.0, 0.265, 0.4),
    "RA": (0.8, 0.1, 0.7),
    "RV": (0.0, 0.3, 0.4),
}

_REFERENCE = {
    "EA_LA": 0.38, "EB_LA": 0.27, "VU_LA": 2.31,
    "EA_LV": 2.7, "EB_LV": 0.069, "VU_LV": 3.54,
    "EA_RA": 0.13, "EB_RA": 0.20, "VU_RA": 3.54,
    "EA_RV": 0.43, "EB_RV": 0.041, "VU_RV": 8.41,
    "R_min": 0.0063, "R_max": 94168.0,
    "R_AR_SYS": 0.59, "C_AR_SYS": 1.33, "L_AR_SYS": 0.00021,
    "R_C_SYS": 0.022, "C_C_SYS": 0.28,
    "R_VEN_SYS": 0.36, "C_VEN_SYS": 75.0, "L_VEN_SYS": 0.000021,
    "R_AR_PUL": 0.071, "C_AR_PUL": 6.0, "L_AR_PUL": 0.000021,
    "R_C_PUL": 0.018, "C_C_PUL": 5.78,
    "R_SH": 0.35, "C_SH": 0.049,
    "R_VEN_PUL": 0.038, "C_VEN_PUL": 13.18, "L_VEN_PUL": 0.000021,
}


def _chamber_timings(chamber, T_HB):
    tc, TC, TR = _TIMING_FRACTIONS[chamber]
    tC = tc * T_HB
    TC = TC * T_HB
    return {"tC": tC, "TC": TC, "tR": tC + TC, "TR": TR * T_HB}


@dataclass(frozen=True)
class ParameterSet:
    """Complete parameter vector of the circulation model.

    Flat access uses the table symbol names, e.g. ``p["EA_LV"]``,
    ``p["R_AR_SYS"]``, ``p["tC_LA"]``.
    """

    LA: ChamberParams
    LV: ChamberParams
    RA: ChamberParams
    RV: ChamberParams
    AR_SYS: CompartmentParams
    C_SYS: CompartmentParams
    VEN_SYS: CompartmentParams
    AR_PUL: CompartmentParams
    C_PUL: CompartmentParams
    VEN_PUL: CompartmentParams
    R_SH: float
    C_SH: float
    R_min: float
    R_max: float
    HR: float = 80.0
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.HR > 0:
            raise ValueError("HR must be positive")
        for c in CHAMBERS:
            getattr(self, c).validate(self.T_HB)
        for comp in COMPARTMENTS:
            getattr(self, comp).validate()
        if not (self.R_SH > 0 and self.C_SH > 0):
            raise ValueError("shunt resistance and compliance must be positive")
        if not 0 < self.R_min < self.R_max:
            raise ValueError("need 0 < R_min < R_max")
        object.__setattr__(self, "_array", self._pack())

    @property
    def T_HB(self):
        return 60.0 / self.HR

    @classmethod
    def reference(cls, HR=80.0):
        """Reference healthy individual; timings scale with the heartbeat period."""
        return cls.from_dict({**_REFERENCE, "HR": HR})

    @classmethod
    def from_dict(cls, values):
        """Build from flat symbol names.

        Missing activation timings default to the reference fractions of the
        heartbeat period.
        """
        values = dict(values)
        unknown = set(values) - set(PARAMETER_NAMES) - set(TIMING_NAMES) - {"HR"}
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        missing = set(PARAMETER_NAMES) - set(values)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        HR = float(values.get("HR", 80.0))
        if not HR > 0:
            raise ValueError("HR must be positive")
        T_HB = 60.0 / HR
        kw = {}
        for c in CHAMBERS:
            timing = _chamber_timings(c, T_HB)
            timing.update({k: float(values[f"{k}_{c}"]) for k in timing
                           if f"{k}_{c}" in values})
            kw[c] = ChamberParams(float(values[f"EA_{c}"]), float(values[f"EB_{c}"]),
                                  float(values[f"VU_{c}"]), **timing)
        for comp in COMPARTMENTS:
            L = 0.0 if comp in _CAPILLARIES else float(values[f"L_{comp}"])
            kw[comp] = CompartmentParams(float(values[f"R_{comp}"]),
                                         float(values[f"C_{comp}"]), L)
        return cls(R_SH=float(values["R_SH"]), C_SH=float(values["C_SH"]),
                   R_min=float(values["R_min"]), R_max=float(values["R_max"]),
                   HR=HR, **kw)

    def to_dict(self, timings=True):
        out = {name: self[name] for name in PARAMETER_NAMES}
        out["HR"] = self.HR
        if timings:
            out.update({name: self[name] for name in TIMING_NAMES})
        return out

    def __getitem__(self, name):
        if name in ("HR", "R_SH", "C_SH", "R_min", "R_max"):
            return getattr(self, name)
        if name == "T_HB":
            return self.T_HB
        head, _, tail = name.partition("_")
        if tail in CHAMBERS:
            return getattr(getattr(self, tail), head)
        if tail in COMPARTMENTS and head in ("R", "C", "L"):
            return getattr(getattr(self, tail), head)
        raise KeyError(name)

    def replace(self, **values):
        """Return a copy with some flat parameters changed.

        Changing ``HR`` alone keeps the timings as fractions of the period.
        """
        d = self.to_dict(timings="HR" not in values or any(k in values for k in TIMING_NAMES))
        d.update(values)
        return ParameterSet.from_dict(d)

    def values(self, names):
        return np.array([self[n] for n in names], dtype=float)

    def with_values(self, names, vector):
        return self.replace(**{n: float(v) for n, v in zip(names, vector)})

    def as_array(self):
        """Flat float vector consumed by the compiled right-hand side."""
        return self._array

    def _pack(self):
        vals = []
        for c in CHAMBERS:
            ch = getattr(self, c)
            vals += [ch.EA, ch.EB, ch.VU, ch.tC, ch.TC, ch.tR, ch.TR]
        vals += [self.R_min, self.R_max]
        a, cs, v = self.AR_SYS, self.C_SYS, self.VEN_SYS
        vals += [a.R, a.C, a.L, cs.R, cs.C, v.R, v.C, v.L]
        a, cp, v = self.AR_PUL, self.C_PUL, self.VEN_PUL
        vals += [a.R, a.C, a.L, cp.R, cp.C, self.R_SH, self.C_SH, v.R, v.C, v.L]
        vals.append(self.T_HB)
        vals += [math.sqrt(self.R_min * self.R_max), math.log(self.R_max / self.R_min) / math.pi]
        arr = np.array(vals, dtype=float)
        arr.setflags(write=False)
        return arr


# indices into ParameterSet.as_array()
_I_RMIN, _I_RMAX = 28, 29
_I_AR_SYS, _I_C_SYS, _I_VEN_SYS = 30, 33, 35
_I_AR_PUL, _I_C_PUL, _I_SH, _I_VEN_PUL = 38, 41, 43, 45
_I_THB = 48
_I_RMEAN, _I_RLOG = 49, 50


# --------------------------------------------------------------------------
# constitutive laws


@njit(cache=True, error_model="numpy")
def _activation(t, tC, TC, tR, TR, T_HB):
    sc = (t - tC) % T_HB
    if 0.0 <= sc < TC:
        return 0.5 * (1.0 - math.cos(math.pi / TC * sc))
    sr = (t - tR) % T_HB
    if 0.0 <= sr < TR:
        return 0.5 * (1.0 + math.cos(math.pi / TR * sr))
    return 0.0


@njit(cache=True)
def _valve_resistance(dp, R_min, R_max):
    return math.sqrt(R_min * R_max) * math.exp(
        math.log(R_max / R_min) * math.atan(-100.0 * math.pi * dp) / math.pi)


@njit(cache=True)
def _valve_flow(dp, R_min, R_max):
    return dp / _valve_resistance(dp, R_min, R_max)


def activation(t, ch, T_HB):
    """Cardiac activation in [0, 1] at time ``t`` (periodic in ``T_HB``)."""
    return _activation(float(t), ch.tC, ch.TC, ch.tR, ch.TR, float(T_HB))


def elastance(t, ch, T_HB):
    return ch.EB + ch.EA * activation(t, ch, T_HB)


def chamber_pressure(V, t, ch, T_HB):
    return elastance(t, ch, T_HB) * (V - ch.VU)


def valve_resistance(dp, R_min, R_max):
    """Smoothed diode resistance, from ``R_max`` (closed) to ``R_min`` (open)."""
    dp = np.asarray(dp, dtype=float)
    out = np.sqrt(R_min * R_max) * (R_max / R_min) ** (np.arctan(-100.0 * np.pi * dp) / np.pi)
    return out if out.ndim else float(out)


def valve_flow(dp, R_min, R_max):
    dp = np.asarray(dp, dtype=float)
    out = dp / valve_resistance(dp, R_min, R_max)
    return out if np.ndim(out) else float(out)


# --------------------------------------------------------------------------
# right-hand side


@njit(cache=True, error_model="numpy")
def _valve_flow_fast(dp, r_mean, r_log):
    # r_mean = sqrt(R_min R_max), r_log = log(R_max / R_min) / pi
    return dp / r_mean * math.exp(r_log * math.atan(100.0 * math.pi * dp))


@njit(cache=True, error_model="numpy")
def _chamber_pressure_k(c, t, x, p):
    b = 7 * c
    e = _activation(t, p[b + 3], p[b + 4], p[b + 5], p[b + 6], p[_I_THB])
    return (p[b + 1] + p[b] * e) * (x[c] - p[b + 2])


@njit(cache=True, error_model="numpy")
def _rhs_into(t, x, p, dx):
    p_LA = _chamber_pressure_k(0, t, x, p)
    p_LV = _chamber_pressure_k(1, t, x, p)
    p_RA = _chamber_pressure_k(2, t, x, p)
    p_RV = _chamber_pressure_k(3, t, x, p)
    r_mean, r_log = p[_I_RMEAN], p[_I_RLOG]

    p_AR_SYS, p_C_SYS, p_VEN_SYS = x[4], x[5], x[6]
    p_AR_PUL, p_C_PUL, p_VEN_PUL = x[7], x[8], x[9]
    Q_AR_SYS, Q_VEN_SYS, Q_AR_PUL, Q_VEN_PUL = x[10], x[11], x[12], x[13]

    Q_MV = _valve_flow_fast(p_LA - p_LV, r_mean, r_log)
    Q_AV = _valve_flow_fast(p_LV - p_AR_SYS, r_mean, r_log)
    Q_TV = _valve_flow_fast(p_RA - p_RV, r_mean, r_log)
    Q_PV = _valve_flow_fast(p_RV - p_AR_PUL, r_mean, r_log)

    Q_C_SYS = (p_C_SYS - p_VEN_SYS) / p[_I_C_SYS]
    Q_C_PUL = (p_C_PUL - p_VEN_PUL) / p[_I_C_PUL]
    Q_SH = (p_C_PUL - p_VEN_PUL) / p[_I_SH]

    dx[0] = Q_VEN_PUL - Q_MV
    dx[1] = Q_MV - Q_AV
    dx[2] = Q_VEN_SYS - Q_TV
    dx[3] = Q_TV - Q_PV
    dx[4] = (Q_AV - Q_AR_SYS) / p[_I_AR_SYS + 1]
    dx[5] = (Q_AR_SYS - Q_C_SYS) / p[_I_C_SYS + 1]
    dx[6] = (Q_C_SYS - Q_VEN_SYS) / p[_I_VEN_SYS + 1]
    dx[7] = (Q_PV - Q_AR_PUL) / p[_I_AR_PUL + 1]
    dx[8] = (Q_AR_PUL - Q_SH - Q_C_PUL) / (p[_I_SH + 1] + p[_I_C_PUL + 1])
    dx[9] = (Q_SH + Q_C_PUL - Q_VEN_PUL) / p[_I_VEN_PUL + 1]
    dx[10] = (-p[_I_AR_SYS] * Q_AR_SYS + p_AR_SYS - p_C_SYS) / p[_I_AR_SYS + 2]
    dx[11] = (-p[_I_VEN_SYS] * Q_VEN_SYS + p_VEN_SYS - p_RA) / p[_I_VEN_SYS + 2]
    dx[12] = (-p[_I_AR_PUL] * Q_AR_PUL + p_AR_PUL - p_C_PUL) / p[_I_AR_PUL + 2]
    dx[13] = (-p[_I_VEN_PUL] * Q_VEN_PUL + p_VEN_PUL - p_LA) / p[_I_VEN_PUL + 2]


_rhs_into._in_place = True


@njit(cache=True)
def _rhs(t, x, p):
    dx = np.empty(14)
    _rhs_into(t, x, p, dx)
    return dx


def rhs(t, x, p):
    """Time derivative of the 14-component state.

    Parameters
    ----------
    t : float
    x : array_like, shape (14,)
    p : ParameterSet or ndarray
        Either a parameter set or its packed array.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (14,):
        raise ValueError(f"state must have 14 components, got shape {x.shape}")
    bad = [STATE_NAMES[i] for i in np.flatnonzero(~np.isfinite(x))]
    if bad:
        raise ValueError(f"non-finite state component(s): {', '.join(bad)}")
    arr = p.as_array() if isinstance(p, ParameterSet) else np.asarray(p, dtype=float)
    return _rhs(float(t), np.ascontiguousarray(x), arr)


def derived_quantities(t, X, p):
    """Chamber pressures and algebraic flows along a sampled trajectory.

    Returns an array of shape ``(len(t), 11)`` ordered as ``DERIVED_NAMES``.
    """
    t = np.asarray(t, dtype=float)
    X = np.asarray(X, dtype=float)
    T_HB = p.T_HB
    out = np.empty((t.size, len(DERIVED_NAMES)))
    for c, name in enumerate(CHAMBERS):
        ch = getattr(p, name)
        e = np.array([_activation(ti, ch.tC, ch.TC, ch.tR, ch.TR, T_HB) for ti in t])
        out[:, c] = (ch.EB + ch.EA * e) * (X[:, c] - ch.VU)
    p_LA, p_LV, p_RA, p_RV = out[:, 0], out[:, 1], out[:, 2], out[:, 3]
    out[:, 4] = valve_flow(p_LA - p_LV, p.R_min, p.R_max)
    out[:, 5] = valve_flow(p_LV - X[:, 4], p.R_min, p.R_max)
    out[:, 6] = valve_flow(p_RA - p_RV, p.R_min, p.R_max)
    out[:, 7] = valve_flow(p_RV - X[:, 7], p.R_min, p.R_max)
    out[:, 8] = (X[:, 5] - X[:, 6]) / p.C_SYS.R
    out[:, 9] = (X[:, 8] - X[:, 9]) / p.C_PUL.R
    out[:, 10] = (X[:, 8] - X[:, 9]) / p.R_SH
    return out


def stressed_volume(x, p):
    """Chamber volumes plus compliance-weighted compartment pressures.

    Conserved exactly by the closed loop; accepts a single state or an
    array of states (last axis of length 14).
    """
    x = np.asarray(x, dtype=float)
    C = np.array([p.AR_SYS.C, p.C_SYS.C, p.VEN_SYS.C, p.AR_PUL.C,
                  p.C_PUL.C + p.C_SH, p.VEN_PUL.C])
    return x[..., :4].sum(axis=-1) + x[..., 4:10] @ C


# Start of a reference limit-cycle beat holding 3500 mL of stressed volume;
# the same starting point is used for every parameter set.
_DEFAULT_X0 = np.array([
    14.6, 105.5, 19.3, 120.8,
    73.4, 38.7, 37.4235, 16.4, 12.8, 11.5,
    58.8, 89.7, 51.3, 103.3,
])


def default_initial_state(p=None):
    """Initial state of the transient run.

    Independent of ``p``: the total stressed volume then follows from the
    compliances, as for a fixed initial condition.
    """
    return _DEFAULT_X0.copy()


# --------------------------------------------------------------------------
# post-processing


@dataclass
class BeatTrajectory:
    """Uniform samples of the final heartbeat, ``t`` spanning ``[T - T_HB, T]``."""

    t: np.ndarray
    states: np.ndarray
    derived: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.derived = np.asarray(self.derived, dtype=float)
        n = self.t.size
        if self.states.shape != (n, 14) or self.derived.shape != (n, len(DERIVED_NAMES)):
            raise ValueError("trajectory arrays have inconsistent shapes")

    @classmethod
    def from_states(cls, t, states, p):
        return cls(t, states, derived_quantities(t, states, p))

    def __getitem__(self, name):
        if name in STATE_NAMES:
            return self.states[:, STATE_NAMES.index(name)]
        if name in DERIVED_NAMES:
            return self.derived[:, DERIVED_NAMES.index(name)]
        if name == "t":
            return self.t
        raise KeyError(name)

    @property
    def columns(self):
        return ("t",) + STATE_NAMES + DERIVED_NAMES

    def as_table(self):
        return np.column_stack([self.t, self.states, self.derived])


@dataclass
class ModelOutputs:
    """Scalar hemodynamic indices of one converged heartbeat.

    Volumes in mL, pressures in mmHg, CO in L/min, SVR/PVR in mmHg min/L,
    ejection and shunt fractions in %.  Indexed fields (``LA_IVmax``, ...,
    ``CI``) are ``None`` unless a body surface area was supplied.
    """

    LA_Vmax: float
    LV_EDV: float
    LV_ESV: float
    LV_EF: float
    maxGradP_rAV: float
    SAP_max: float
    SAP_min: float
    PAP_max: float
    LA_Pmax: float
    LA_Pmin: float
    LA_Pmean: float
    LV_SV: float
    CO: float
    LV_Pmax: float
    LV_Pmin: float
    RA_Vmax: float
    RA_Pmax: float
    RA_Pmin: float
    RA_Pmean: float
    RV_EDV: float
    RV_ESV: float
    RV_EF: float
    RV_Pmax: float
    RV_Pmin: float
    PAP_min: float
    PAP_mean: float
    PWP_min: float
    PWP_mean: float
    SVR: float
    PVR: float
    shunt_fraction: float
    BSA: float | None = None
    LA_IVmax: float | None = None
    LV_IEDV: float | None = None
    RA_IVmax: float | None = None
    RV_IEDV: float | None = None
    RV_IESV: float | None = None
    CI: float | None = None

    def __getitem__(self, name):
        if name not in self._names():
            raise KeyError(name)
        value = getattr(self, name)
        if value is None:
            raise KeyError(f"{name} requires a body surface area")
        return value

    @classmethod
    def _names(cls):
        return {f.name for f in fields(cls)}

    def as_dict(self, include_missing=False):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if not include_missing:
            d = {k: v for k, v in d.items() if v is not None}
        return d

    def vector(self, names):
        return np.array([self[n] for n in names], dtype=float)


def _mean(t, y):
    return np.trapezoid(y, t) / (t[-1] - t[0])


def compute_outputs(traj, p, BSA=None):
    """Hemodynamic indices of a converged beat.

    Extrema and time averages are taken over the uniform beat grid.  PWP is
    the pulmonary venous pressure; PVR uses the mean left atrial pressure as
    the downstream (wedge-equivalent) pressure.
    """
    if BSA is not None and not BSA > 0:
        raise ValueError("BSA must be positive")
    t = traj.t
    V_LA, V_LV, V_RA, V_RV = (traj.states[:, i] for i in range(4))
    p_LA, p_LV, p_RA, p_RV = (traj.derived[:, i] for i in range(4))
    p_as, p_ap, p_vp = traj["p_AR_SYS"], traj["p_AR_PUL"], traj["p_VEN_PUL"]

    lv_edv, lv_esv = V_LV.max(), V_LV.min()
    rv_edv, rv_esv = V_RV.max(), V_RV.min()
    lv_sv = lv_edv - lv_esv
    co = lv_sv * p.HR / 1000.0
    ra_mean = _mean(t, p_RA)
    la_mean = _mean(t, p_LA)
    pap_mean = _mean(t, p_ap)
    q_sh = _mean(t, traj["Q_SH"])
    q_cp = _mean(t, traj["Q_C_PUL"])

    out = ModelOutputs(
        LA_Vmax=V_LA.max(),
        LV_EDV=lv_edv,
        LV_ESV=lv_esv,
        LV_EF=100.0 * lv_sv / lv_edv,
        maxGradP_rAV=np.max(p_RV - p_RA),
        SAP_max=p_as.max(),
        SAP_min=p_as.min(),
        PAP_max=p_ap.max(),
        LA_Pmax=p_LA.max(),
        LA_Pmin=p_LA.min(),
        LA_Pmean=la_mean,
        LV_SV=lv_sv,
        CO=co,
        LV_Pmax=p_LV.max(),
        LV_Pmin=p_LV.min(),
        RA_Vmax=V_RA.max(),
        RA_Pmax=p_RA.max(),
        RA_Pmin=p_RA.min(),
        RA_Pmean=ra_mean,
        RV_EDV=rv_edv,
        RV_ESV=rv_esv,
        RV_EF=100.0 * (rv_edv - rv_esv) / rv_edv,
        RV_Pmax=p_RV.max(),
        RV_Pmin=p_RV.min(),
        PAP_min=p_ap.min(),
        PAP_mean=pap_mean,
        PWP_min=p_vp.min(),
        PWP_mean=_mean(t, p_vp),
        SVR=(_mean(t, p_as) - ra_mean) / co,
        PVR=(pap_mean - la_mean) / co,
        shunt_fraction=100.0 * q_sh / (q_sh + q_cp),
    )
    out = replace(out, **{k: float(v) for k, v in out.as_dict().items()})
    if BSA is not None:
        out.BSA = float(BSA)
        for idx, raw in INDEXED_OUTPUTS.items():
            setattr(out, idx, getattr(out, raw) / BSA)
    return out
