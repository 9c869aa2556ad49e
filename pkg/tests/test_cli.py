import json

import numpy as np
import pytest

from cardiocal import io
from cardiocal.cli import RESIDUAL_WARNING, main
from cardiocal.experiments import MONZINO_FREE
from cardiocal.model import OUTPUT_NAMES
from cardiocal.sensitivity import CorrelationMatrix, build_hyperbox, saltelli_sample


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def usage_error(capsys, *argv):
    with pytest.raises(SystemExit) as info:
        main([str(a) for a in argv])
    assert info.value.code == 2
    return capsys.readouterr().err


def test_simulate_reference(tmp_path, capsys, pref):
    code, out, err = run(capsys, "simulate", "--out", tmp_path / "traj.csv",
                         "--outputs", tmp_path / "out.json", "--pvloop", tmp_path / "pv.svg",
                         "--json")
    assert code == 0 and "warning" not in err
    summary = json.loads(out)
    assert summary["residual"] < RESIDUAL_WARNING
    ranges = io.load_ranges()
    assert len(summary["in_range"]) == 31
    for name, ok in summary["in_range"].items():
        assert ok == ranges[name].contains(summary["outputs"][name])
    # the minimal LV pressure sits about 0.02 mmHg under its lower edge
    assert {n for n, ok in summary["in_range"].items() if not ok} == {"LV_Pmin"}
    assert summary["outputs"]["LV_Pmin"] == pytest.approx(4.0, rel=0.01)
    assert summary["BSA"] == pytest.approx(1.77)
    traj = io.load_trajectory(tmp_path / "traj.csv")
    assert traj.t.size >= 500
    saved = io.load_json(tmp_path / "out.json", "outputs")
    assert saved["outputs"]["SAP_max"] == pytest.approx(summary["outputs"]["SAP_max"])
    assert (tmp_path / "pv.svg").read_text().startswith("<svg")


def test_simulate_text_table(capsys):
    code, out, _ = run(capsys, "simulate", "--beats", 3)
    assert code == 0
    assert out.splitlines()[0].split() == ["output", "value", "range", "status"]
    assert "residual" in out.splitlines()[-1]


def test_residual_warning_for_short_runs(tmp_path, capsys, pref):
    io.save_parameters(pref.replace(R_AR_SYS=0.9, EA_LV=1.6, C_VEN_SYS=40.0),
                       tmp_path / "p.json")
    code, _, err = run(capsys, "simulate", tmp_path / "p.json", "--beats", 2)
    assert code == 0
    assert "warning: periodicity residual" in err


def test_simulate_bad_input_files(tmp_path, capsys):
    assert "not found" in usage_error(capsys, "simulate", tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    assert "cannot read" in usage_error(capsys, "simulate", tmp_path / "bad.json")
    io.dump_json(io.document("report", {}), tmp_path / "other.json")
    assert "parameters" in usage_error(capsys, "simulate", tmp_path / "other.json")
    io.dump_json(io.document("parameters", {"parameters": {"EA_LV": 1.0}}),
                 tmp_path / "short.json")
    assert "cannot read" in usage_error(capsys, "simulate", tmp_path / "short.json")


def test_calibrate_argument_errors(capsys):
    assert "--matrix" in usage_error(capsys, "calibrate", "--patient", "monzino",
                                     "--method", "cmc")
    assert "--matrix" in usage_error(capsys, "calibrate", "--patient", "monzino")
    assert "unknown method" in usage_error(capsys, "calibrate", "--patient", "monzino",
                                           "--method", "newton")
    assert "known" in usage_error(capsys, "calibrate", "--patient", "nobody",
                                  "--method", "qn")
    assert "--patient or --data" in usage_error(capsys, "calibrate", "--method", "qn")


@pytest.fixture
def flat_matrix(tmp_path):
    # correlations below the usage cutoff: the correlation method stops at once
    box = build_hyperbox()
    cm = CorrelationMatrix(box.names, OUTPUT_NAMES, np.full((len(box), len(OUTPUT_NAMES)), 0.01),
                           10)
    io.save_correlation(cm, tmp_path / "flat.json")
    return tmp_path / "flat.json"


def test_monzino_selects_stored_parameters(tmp_path, capsys, flat_matrix):
    code, out, _ = run(capsys, "calibrate", "--patient", "monzino", "--method", "cmc",
                       "--matrix", flat_matrix, "--it-max", 1, "--report", tmp_path / "r.json",
                       "--trace", tmp_path / "t.csv", "--loss-plot", tmp_path / "loss.svg")
    assert code == 0
    rep = io.load_report(tmp_path / "r.json")
    assert len(rep.free) == 5 and rep.free == MONZINO_FREE
    assert out.startswith("monzino: free parameters " + ", ".join(MONZINO_FREE))
    assert rep.data_names == tuple(io.load_clinical("monzino").data)
    assert (tmp_path / "t.csv").exists() and (tmp_path / "loss.svg").exists()


def test_dataset_commands_deterministic(tmp_path, capsys):
    for name in ("a.json", "b.json"):
        code, _, _ = run(capsys, "gen-data", "--n", 2, "--seed", 4, "--out", tmp_path / name)
        assert code == 0
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
    for name in ("na.json", "nb.json"):
        code, out, _ = run(capsys, "noise", "--in", tmp_path / "a.json", "--sample", 1,
                           "--replicates", 3, "--seed", 2, "--out", tmp_path / name, "--json")
        assert code == 0 and json.loads(out)["n"] == 3
    assert (tmp_path / "na.json").read_text() == (tmp_path / "nb.json").read_text()
    noisy = io.load_dataset(tmp_path / "na.json")
    clean = io.load_dataset(tmp_path / "a.json")["samples"][1]
    assert all(np.array_equal(s["truth"], clean["truth"]) for s in noisy["samples"])
    assert not np.array_equal(noisy["samples"][0]["data"], noisy["samples"][1]["data"])
    rel = np.array([s["data"] / clean["data"] - 1 for s in noisy["samples"]])
    assert np.all(np.abs(rel) < 0.3)


def test_corr_small_sweep(tmp_path, capsys):
    code, out, _ = run(capsys, "corr", "--n", 8, "--jobs", 1, "--out", tmp_path / "c.json",
                       "--csv", tmp_path / "c.csv", "--json")
    assert code == 0
    summary = json.loads(out)
    cm = io.load_correlation(tmp_path / "c.json")
    assert summary["n_samples"] == cm.n_samples == 8
    assert np.all(np.abs(cm.M) <= 1)


def test_sobol_from_saved_samples(tmp_path, capsys, rng):
    box = build_hyperbox()
    X = saltelli_sample(box, 8, 0)
    u = (X - box.lo) / (box.hi - box.lo)
    Y = np.column_stack([u[:, 0] + 0.1 * u[:, 1], u[:, 2] ** 2])
    np.savez(tmp_path / "s.npz", X=X, Y=Y, outputs=np.array(["SAP_max", "LV_EF"]))
    code, out, _ = run(capsys, "sobol", "--from-samples", tmp_path / "s.npz",
                       "--out", tmp_path / "s.json", "--csv", tmp_path / "s.csv",
                       "--heatmap", tmp_path / "h.svg", "--json")
    assert code == 0
    summary = json.loads(out)
    assert summary["N"] == 8 and summary["n_samples"] == len(X)
    res = io.load_sensitivity(tmp_path / "s.json")
    assert res.outputs == ("SAP_max", "LV_EF") and res.S_T.shape == (len(box), 2)
    assert set(summary["selected"]) >= {box.names[0], box.names[2]}
    assert "cannot read" in usage_error(capsys, "sobol", "--from-samples", tmp_path / "none.npz")
