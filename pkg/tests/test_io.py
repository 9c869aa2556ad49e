import json
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cardiocal import io
from cardiocal.calibration import CalibrationReport
from cardiocal.model import INDEXED_OUTPUTS, OUTPUT_NAMES, ParameterSet, compute_outputs
from cardiocal.sensitivity import CorrelationMatrix, SensitivityResult


def test_reference_fixture_matches_constructor():
    a = io.load_reference().to_dict(timings=True)
    b = ParameterSet.reference().to_dict(timings=True)
    assert a.keys() == b.keys()
    assert all(a[k] == pytest.approx(b[k], rel=1e-12) for k in a)


def test_reference_fixture_with_other_rate():
    p, ref = io.load_reference(HR=60), ParameterSet.reference()
    assert p.T_HB == pytest.approx(1.0)
    for c in ("LA", "LV", "RA", "RV"):
        a, b = getattr(p, c), getattr(ref, c)
        for k in ("tC", "TC", "tR", "TR"):
            assert getattr(a, k) / p.T_HB == pytest.approx(getattr(b, k) / ref.T_HB)


def test_parameters_round_trip(tmp_path, pref):
    p = pref.replace(R_AR_SYS=0.71, HR=64)
    io.save_parameters(p, tmp_path / "p.json")
    q = io.load_parameters(tmp_path / "p.json")
    assert q.to_dict(timings=True) == p.to_dict(timings=True)


def test_clinical_records():
    assert io.list_patients() == ["monzino", "sacco"]
    m = io.load_clinical("Monzino")
    assert m.HR == 70 and len(m.data) == 6 and m.covid
    assert m.data["LV_EDV"] == 233 and m.data["SAP_min"] == 55
    s = io.load_clinical("sacco")
    assert s.HR == 60 and len(s.data) == 8
    assert s.data["LA_Vmax"] == 50 and s.data["PAP_max"] == 25
    assert set(s.names) <= set(OUTPUT_NAMES)
    assert np.array_equal(s.values, list(s.data.values()))
    with pytest.raises(io.UnknownPatientError, match="known"):
        io.load_clinical("nobody")


@pytest.mark.parametrize("kw", [{"data": {"nope": 1.0}}, {"data": {"SAP_max": 0.0}},
                                {"HR": 0.0}, {"BSA": -1.0}])
def test_clinical_record_validation(kw):
    base = dict(patient="x", HR=70.0, data={"SAP_max": 120.0})
    base.update(kw)
    with pytest.raises(ValueError):
        io.ClinicalRecord(**base)


def test_ranges_table(reference_cycle):
    r = io.load_ranges()
    assert len(r) == 31 and r.reference_bsa == 1.77
    assert set(r) <= set(OUTPUT_NAMES) | set(INDEXED_OUTPUTS)
    lv = r["LV_IEDV"]
    assert (lv.lo, lv.hi) == (50, 90)
    assert lv.contains(70) and not lv.contains(49.9) and not lv.contains(90.1)
    assert io.RangeEntry("mmHg", None, 10.0, None, None).contains(-1e9)
    with pytest.raises(ValueError):
        io.RangeTable({"nope": lv}, 1.77)
    with pytest.raises(ValueError):
        io.RangeTable({"SAP_max": io.RangeEntry("mmHg", 5.0, 5.0, None, None)}, 1.77)


def test_noise_fixture():
    noise = io.load_noise()
    assert set(noise.values()) == {0.04, 0.05}
    assert len(noise) == 8


def test_schema_mismatch_rejected(tmp_path):
    path = tmp_path / "doc.json"
    io.dump_json(io.document("report", {}), path)
    with pytest.raises(io.SchemaError, match="cardiocal.sensitivity"):
        io.load_sensitivity(path)
    io.dump_json({"schema": "cardiocal.correlation", "version": 99}, path)
    with pytest.raises(io.SchemaError, match="version"):
        io.load_correlation(path)
    path.write_text("[1, 2]")
    with pytest.raises(io.SchemaError):
        io.load_json(path)


def test_report_round_trip(tmp_path):
    rep = CalibrationReport("hybrid", ("EA_LV", "R_AR_SYS"), np.array([2.1, 0.6]),
                            [0.3, 0.1, 0.05], float(np.sqrt(0.05)), False, 1.25, 4, 2, 9,
                            ["cmc", "cmc", "qn"], {"switch_reached": True, "failed": 0},
                            ("SAP_max",), np.array([120.0]))
    io.save_report(rep, tmp_path / "r.json")
    back = io.load_report(tmp_path / "r.json")
    for k in ("method", "free", "trace", "rmse", "success", "wall_time", "seed", "n_iter",
              "n_simulations", "phases", "flags", "data_names"):
        assert getattr(back, k) == getattr(rep, k)
    assert np.array_equal(back.x, rep.x) and np.array_equal(back.data, rep.data)
    io.save_trace_csv(rep, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,phase,mse,rmse" and lines[3].startswith("2,qn,0.05,")


def test_sensitivity_round_trip(tmp_path, rng):
    res = SensitivityResult(("a", "b"), ("SAP_max", "LV_EF", "CO"), rng.random((2, 3)),
                            rng.random((2, 3, 2)), 256, np.array([False, True, False]), 3, 0,
                            "abc")
    io.save_sensitivity(res, tmp_path / "s.json")
    back = io.load_sensitivity(tmp_path / "s.json")
    assert back.parameters == res.parameters and back.outputs == res.outputs
    assert np.array_equal(back.S_T, res.S_T) and np.array_equal(back.ci, res.ci)
    assert np.array_equal(back.degenerate, res.degenerate)
    assert (back.n_base, back.n_dropped, back.seed, back.box_hash) == (256, 3, 0, "abc")


def test_correlation_round_trip_and_csv(tmp_path, rng):
    cm = CorrelationMatrix(("a", "b"), ("x", "y", "z"), rng.uniform(-1, 1, (2, 3)), 3200, 0,
                           "h", 1)
    io.save_correlation(cm, tmp_path / "c.json")
    back = io.load_correlation(tmp_path / "c.json")
    assert np.array_equal(back.M, cm.M)
    assert (back.parameters, back.outputs, back.n_samples, back.n_dropped) == \
        (cm.parameters, cm.outputs, 3200, 1)
    io.save_matrix_csv(cm.parameters, cm.outputs, cm.M, tmp_path / "c.csv")
    rows = np.genfromtxt(tmp_path / "c.csv", delimiter=",", skip_header=1)[:, 1:]
    assert np.array_equal(rows, cm.M)


def test_nan_written_as_null(tmp_path):
    io.dump_json({"v": np.nan, "w": [1.0, np.inf]}, tmp_path / "n.json")
    assert json.loads((tmp_path / "n.json").read_text()) == {"v": None, "w": [1.0, None]}


def test_trajectory_csv_reproduces_outputs(tmp_path, pref, reference_cycle):
    traj = reference_cycle.trajectory
    io.save_trajectory(traj, tmp_path / "traj.csv")
    back = io.load_trajectory(tmp_path / "traj.csv")
    assert np.array_equal(back.t, traj.t) and np.array_equal(back.states, traj.states)
    a = compute_outputs(traj, pref).vector(OUTPUT_NAMES)
    b = compute_outputs(back, pref).vector(OUTPUT_NAMES)
    assert np.max(np.abs(a - b) / np.abs(a)) <= 1e-12


def test_trajectory_header_checked(tmp_path):
    (tmp_path / "bad.csv").write_text("t,x\n0,1\n")
    with pytest.raises(io.SchemaError):
        io.load_trajectory(tmp_path / "bad.csv")


def test_dataset_round_trip(tmp_path, rng):
    samples = [{"truth": rng.random(2), "data": rng.random(3), "note": k} for k in range(4)]
    io.save_dataset(tmp_path / "d.json", ("a", "b"), ("x", "y", "z"), samples, seed=5, n=4)
    back = io.load_dataset(tmp_path / "d.json")
    assert back["free"] == ("a", "b") and back["seed"] == 5 and back["meta"] == {"n": 4}
    for s, t in zip(samples, back["samples"]):
        assert np.array_equal(s["truth"], t["truth"]) and np.array_equal(s["data"], t["data"])
        assert s["note"] == t["note"]


@given(st.dictionaries(st.text(min_size=1, max_size=5), st.floats(allow_nan=False,
                                                                     allow_infinity=False)))
def test_json_is_key_sorted_and_stable(tmp_path_factory, doc):
    path = tmp_path_factory.mktemp("j") / "a.json"
    io.dump_json(doc, path)
    first = path.read_text()
    io.dump_json(dict(reversed(list(doc.items()))), path)
    assert path.read_text() == first
    assert list(json.loads(first)) == sorted(doc)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.json"
    target.write_text("old")

    class Boom:
        def __str__(self):
            raise RuntimeError

    with pytest.raises(TypeError):
        io.atomic_write(target, Boom())
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.json"]
    io.atomic_write(tmp_path / "sub" / "new.txt", "x")
    assert (tmp_path / "sub" / "new.txt").read_text() == "x"


def test_data_dir_override(tmp_path, monkeypatch):
    shutil.copytree(io.data_dir(), tmp_path / "data")
    doc = json.loads((tmp_path / "data" / "clinical.json").read_text())
    doc["patients"]["extra"] = {"HR": 75, "data": {"SAP_max": 118}}
    (tmp_path / "data" / "clinical.json").write_text(json.dumps(doc))
    monkeypatch.setenv(io.DATA_DIR_ENV, str(tmp_path / "data"))
    assert io.data_dir() == tmp_path / "data"
    assert io.load_clinical("extra").data == {"SAP_max": 118.0}
    monkeypatch.delenv(io.DATA_DIR_ENV)
    with pytest.raises(io.UnknownPatientError):
        io.load_clinical("extra")
