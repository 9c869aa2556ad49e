"""Fixtures and file formats.

Every JSON document carries ``schema`` and ``version`` fields; loaders refuse
documents of another kind or version.  Writers go through a temporary file in
the target directory followed by a rename, so readers never see partial
files.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .calibration import CalibrationReport
from .model import (CHAMBERS, DERIVED_NAMES, INDEXED_OUTPUTS, OUTPUT_NAMES, PARAMETER_NAMES,
                    STATE_NAMES, BeatTrajectory, ParameterSet)
from .sensitivity import CorrelationMatrix, SensitivityResult

__all__ = [
    "SCHEMA_VERSION", "DATA_DIR_ENV", "SchemaError", "UnknownPatientError", "document",
    "to_jsonable", "atomic_write",
    "ClinicalRecord", "RangeEntry", "RangeTable", "data_dir", "load_reference",
    "load_ranges", "load_noise", "load_clinical", "list_patients", "dump_json",
    "load_json", "save_parameters", "load_parameters", "report_to_dict",
    "report_from_dict", "save_report", "load_report", "save_trace_csv",
    "sensitivity_to_dict", "sensitivity_from_dict", "save_sensitivity",
    "load_sensitivity", "correlation_to_dict", "correlation_from_dict",
    "save_correlation", "load_correlation", "save_matrix_csv", "save_trajectory",
    "load_trajectory", "save_dataset", "load_dataset",
]

SCHEMA_VERSION = 1
DATA_DIR_ENV = "CARDIOCAL_DATA_DIR"


class SchemaError(ValueError):
    """Document of the wrong kind or schema version."""


class UnknownPatientError(LookupError):
    """No clinical record under the requested name."""


# --------------------------------------------------------------------------
# generic JSON plumbing


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc, path):
    """Write ``doc`` with sorted keys, atomically."""
    atomic_write(path, json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")


def document(kind, body):
    return {"schema": f"cardiocal.{kind}", "version": SCHEMA_VERSION, **body}


def _check(doc, kind):
    want = f"cardiocal.{kind}"
    if doc.get("schema") != want:
        raise SchemaError(f"expected a {want} document, got {doc.get('schema')!r}")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"{want} version {doc.get('version')!r} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    return doc


def load_json(path, kind=None):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    return _check(doc, kind) if kind else doc


# --------------------------------------------------------------------------
# fixtures


def data_dir():
    """Fixture directory, overridable through ``$CARDIOCAL_DATA_DIR``."""
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override)
    return Path(resources.files("cardiocal") / "data")


def _fixture(name, kind):
    return load_json(data_dir() / name, kind)


def load_reference(HR=None):
    """Reference parameter set from the bundled fixture."""
    doc = _fixture("reference_parameters.json", "parameters")
    p = _parameters_from_doc(doc)
    return p if HR is None else p.replace(HR=HR)


def _parameters_from_doc(doc):
    values = dict(doc["parameters"])
    HR = float(doc.get("HR", 80.0))
    values["HR"] = HR
    fractions = doc.get("timing_fractions")
    if fractions:
        T = 60.0 / HR
        for c in CHAMBERS:
            f = fractions[c]
            values[f"tC_{c}"] = f["tC"] * T
            values[f"TC_{c}"] = f["TC"] * T
            values[f"tR_{c}"] = (f["tC"] + f["TC"]) * T
            values[f"TR_{c}"] = f["TR"] * T
    values.update(doc.get("timings", {}))
    return ParameterSet.from_dict(values)


def save_parameters(p, path):
    """Parameters file: flat symbol names plus HR and absolute timings (s)."""
    d = p.to_dict(timings=True)
    timings = {k: v for k, v in d.items() if k not in PARAMETER_NAMES and k != "HR"}
    dump_json(document("parameters", {
        "HR": p.HR, "parameters": {k: d[k] for k in PARAMETER_NAMES}, "timings": timings,
    }), path)


def load_parameters(path):
    """Inverse of :func:`save_parameters`; also reads the bundled fixture format."""
    return _parameters_from_doc(load_json(path, "parameters"))


@dataclass(frozen=True)
class RangeEntry:
    unit: str
    lo: float | None
    hi: float | None
    model_value: float | None
    source: str | None

    def contains(self, value):
        if self.lo is not None and value < self.lo:
            return False
        if self.hi is not None and value > self.hi:
            return False
        return True


@dataclass(frozen=True)
class RangeTable:
    """Healthy ranges keyed by output name; ``None`` marks an open end."""

    entries: dict
    reference_bsa: float

    def __post_init__(self):
        for name, e in self.entries.items():
            if name not in OUTPUT_NAMES and name not in INDEXED_OUTPUTS:
                raise ValueError(f"range for unknown output {name!r}")
            if e.lo is not None and e.hi is not None and not e.lo < e.hi:
                raise ValueError(f"empty range for {name}")

    def __getitem__(self, name):
        return self.entries[name]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def annotate(self, outputs):
        """``{name: (value, in_range)}`` for every tabulated output available."""
        out = {}
        for name, entry in self.entries.items():
            value = outputs.as_dict().get(name)
            if value is not None:
                out[name] = (value, entry.contains(value))
        return out


def load_ranges():
    doc = _fixture("ranges.json", "ranges")
    entries = {k: RangeEntry(v["unit"], v["lo"], v["hi"], v["model_value"], v["source"])
               for k, v in doc["outputs"].items()}
    return RangeTable(entries, float(doc["reference_bsa"]))


def load_noise():
    """Relative standard deviations of the measurement noise per output."""
    return dict(_fixture("noise.json", "noise")["relative_sigma"])


@dataclass(frozen=True)
class ClinicalRecord:
    patient: str
    HR: float
    data: dict
    BSA: float | None = None
    covid: bool = False

    def __post_init__(self):
        for name, value in self.data.items():
            if name not in OUTPUT_NAMES and name not in INDEXED_OUTPUTS:
                raise ValueError(f"{self.patient}: unknown output {name!r}")
            if not value > 0:
                raise ValueError(f"{self.patient}: {name} must be positive")
        if not self.HR > 0:
            raise ValueError(f"{self.patient}: HR must be positive")
        if self.BSA is not None and not self.BSA > 0:
            raise ValueError(f"{self.patient}: BSA must be positive")

    @property
    def names(self):
        return tuple(self.data)

    @property
    def values(self):
        return np.array(list(self.data.values()), dtype=float)


def list_patients():
    return sorted(_fixture("clinical.json", "clinical")["patients"])


def load_clinical(name):
    """Clinical record by (case-insensitive) patient name."""
    patients = _fixture("clinical.json", "clinical")["patients"]
    key = name.lower()
    if key not in patients:
        raise UnknownPatientError(f"no clinical record {name!r}; known: {sorted(patients)}")
    rec = patients[key]
    order = [n for n in OUTPUT_NAMES if n in rec["data"]]
    order += [n for n in rec["data"] if n not in order]
    return ClinicalRecord(key, float(rec["HR"]), {n: float(rec["data"][n]) for n in order},
                          rec.get("BSA"), bool(rec.get("covid", False)))


# --------------------------------------------------------------------------
# calibration reports


def report_to_dict(rep):
    return document("report", {
        "method": rep.method, "free": list(rep.free), "x": rep.x,
        "parameters": rep.parameters, "trace": rep.trace, "rmse": rep.rmse,
        "success": rep.success, "wall_time": rep.wall_time, "seed": rep.seed,
        "n_iter": rep.n_iter, "n_simulations": rep.n_simulations, "phases": rep.phases,
        "flags": rep.flags, "data_names": list(rep.data_names),
        "data": None if rep.data is None else rep.data,
    })


def report_from_dict(doc):
    _check(doc, "report")
    return CalibrationReport(
        doc["method"], tuple(doc["free"]), np.array(doc["x"], dtype=float),
        [float(v) for v in doc["trace"]], float(doc["rmse"]), bool(doc["success"]),
        float(doc["wall_time"]), doc["seed"], int(doc["n_iter"]), int(doc["n_simulations"]),
        doc["phases"], doc["flags"], tuple(doc["data_names"]),
        None if doc["data"] is None else np.array(doc["data"], dtype=float))


def save_report(rep, path):
    dump_json(report_to_dict(rep), path)


def load_report(path):
    return report_from_dict(load_json(path))


def save_trace_csv(rep, path):
    """Loss trace as ``iteration,phase,mse,rmse`` rows."""
    phases = rep.phases or [rep.method] * len(rep.trace)
    rows = [f"{k},{ph},{v!r},{float(np.sqrt(v))!r}"
            for k, (ph, v) in enumerate(zip(phases, rep.trace))]
    atomic_write(path, "iteration,phase,mse,rmse\n" + "\n".join(rows) + "\n")


# --------------------------------------------------------------------------
# sensitivity results and correlation matrices


def sensitivity_to_dict(res):
    return document("sensitivity", {
        "parameters": list(res.parameters), "outputs": list(res.outputs),
        "S_T": res.S_T, "ci": res.ci, "n_base": res.n_base,
        "degenerate": res.degenerate, "n_dropped": res.n_dropped,
        "seed": res.seed, "box_hash": res.box_hash,
    })


def sensitivity_from_dict(doc):
    _check(doc, "sensitivity")
    return SensitivityResult(tuple(doc["parameters"]), tuple(doc["outputs"]),
                             np.array(doc["S_T"], dtype=float), np.array(doc["ci"], dtype=float),
                             int(doc["n_base"]), np.array(doc["degenerate"], dtype=bool),
                             int(doc["n_dropped"]), doc["seed"], doc["box_hash"])


def save_sensitivity(res, path):
    dump_json(sensitivity_to_dict(res), path)


def load_sensitivity(path):
    return sensitivity_from_dict(load_json(path))


def correlation_to_dict(cm):
    return document("correlation", {
        "parameters": list(cm.parameters), "outputs": list(cm.outputs), "M": cm.M,
        "n_samples": cm.n_samples, "seed": cm.seed, "box_hash": cm.box_hash,
        "n_dropped": cm.n_dropped,
    })


def correlation_from_dict(doc):
    _check(doc, "correlation")
    return CorrelationMatrix(tuple(doc["parameters"]), tuple(doc["outputs"]),
                             np.array(doc["M"], dtype=float), int(doc["n_samples"]),
                             doc["seed"], doc["box_hash"], int(doc["n_dropped"]))


def save_correlation(cm, path):
    dump_json(correlation_to_dict(cm), path)


def load_correlation(path):
    return correlation_from_dict(load_json(path))


def save_matrix_csv(rows, cols, values, path):
    """Labelled matrix as CSV: first column holds the row labels."""
    lines = ["parameter," + ",".join(cols)]
    for r, vals in zip(rows, np.asarray(values)):
        lines.append(r + "," + ",".join(repr(float(v)) for v in vals))
    atomic_write(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# trajectories


def save_trajectory(traj, path):
    """CSV with a header of column names and one row per grid point.

    Values are written with full precision so a reload is exact.
    """
    table = traj.as_table()
    lines = [",".join(traj.columns)]
    lines += [",".join(repr(float(v)) for v in row) for row in table]
    atomic_write(path, "\n".join(lines) + "\n")


def load_trajectory(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = np.array([[float(v) for v in row] for row in reader if row])
    expected = ("t",) + STATE_NAMES + DERIVED_NAMES
    if header != expected:
        raise SchemaError(f"{path}: unexpected trajectory columns")
    return BeatTrajectory(rows[:, 0], rows[:, 1:15], rows[:, 15:])


# --------------------------------------------------------------------------
# synthetic datasets


def save_dataset(path, free, data_names, samples, seed=None, **meta):
    """``samples`` is a list of dicts with keys ``truth`` and ``data`` (arrays)."""
    dump_json(document("dataset", {
        "free": list(free), "data_names": list(data_names), "seed": seed, "meta": meta,
        "samples": [{"id": k, "truth": dict(zip(free, s["truth"])),
                     "data": dict(zip(data_names, s["data"])),
                     **{kk: vv for kk, vv in s.items() if kk not in ("truth", "data")}}
                    for k, s in enumerate(samples)],
    }), path)


def load_dataset(path):
    doc = load_json(path, "dataset")
    free, names = tuple(doc["free"]), tuple(doc["data_names"])
    samples = []
    for s in doc["samples"]:
        item = {k: v for k, v in s.items() if k not in ("truth", "data")}
        item["truth"] = np.array([s["truth"][n] for n in free], dtype=float)
        item["data"] = np.array([s["data"][n] for n in names], dtype=float)
        samples.append(item)
    return {"free": free, "data_names": names, "seed": doc["seed"],
            "meta": doc.get("meta", {}), "samples": samples}
