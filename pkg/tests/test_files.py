import json

import numpy as np
import pytest

from sosrom.clustering import dense_selection, select_clusters
from sosrom.files import (FileFormatError, load_model, model_from_dict, model_to_dict,
                          read_columns, read_snapshots, save_model, write_columns, write_json,
                          write_reconstruction, write_snapshots, write_trajectory)
from sosrom.inference import infer
from sosrom.pod import SnapshotSet
from sosrom.rom import simulate


def test_columns_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    cols = [rng.standard_normal(13) * 10.0 ** rng.integers(-12, 12, 13) for _ in range(3)]
    write_columns(tmp_path / "a.csv", ["t", "y_1", "y_2"], cols)
    header, data = read_columns(tmp_path / "a.csv")
    assert header == ["t", "y_1", "y_2"]
    for j in range(3):
        np.testing.assert_array_equal(data[:, j], cols[j])


def test_column_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        write_columns(tmp_path / "a.csv", ["t", "y_1"], [np.ones(3), np.ones(4)])


def test_snapshots_round_trip(tmp_path, small_snapshots):
    write_snapshots(tmp_path / "s.csv", tmp_path / "u.csv", small_snapshots)
    back = read_snapshots(tmp_path / "s.csv", tmp_path / "u.csv")
    np.testing.assert_array_equal(back.Y, small_snapshots.Y)
    np.testing.assert_array_equal(back.U, small_snapshots.U)
    np.testing.assert_array_equal(back.times, small_snapshots.times)
    first = (tmp_path / "s.csv").read_text(encoding="utf-8").splitlines()[0]
    assert first == "t," + ",".join(f"y_{i}" for i in range(1, 8))


def test_snapshot_time_mismatch(tmp_path):
    t = 0.1 * np.arange(6)
    write_snapshots(tmp_path / "s.csv", tmp_path / "u.csv", SnapshotSet(t, np.ones((2, 6)),
                                                                          np.ones((1, 6))))
    write_columns(tmp_path / "u.csv", ["t", "u_1"], [t + 1, np.ones(6)])
    with pytest.raises(FileFormatError):
        read_snapshots(tmp_path / "s.csv", tmp_path / "u.csv")


def test_bad_header(tmp_path):
    write_columns(tmp_path / "s.csv", ["time", "y_1"], [np.arange(6.0), np.ones(6)])
    write_columns(tmp_path / "u.csv", ["t", "u_1"], [np.arange(6.0), np.ones(6)])
    with pytest.raises(FileFormatError):
        read_snapshots(tmp_path / "s.csv", tmp_path / "u.csv")


def test_non_numeric(tmp_path):
    (tmp_path / "a.csv").write_text("t,y_1\n0,abc\n", encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_columns(tmp_path / "a.csv")


@pytest.mark.parametrize("mode,theta", [("bounded", 2), ("iss", None), ("unconstrained", None)])
def test_model_round_trip(tmp_path, small_data, mode, theta):
    sel = dense_selection(3, 4) if theta is None else select_clusters(small_data.sigma_full, 3,
                                                                      theta, 4)
    model, _ = infer(small_data, sel, mode)
    save_model(tmp_path / "m.json", model)
    back = load_model(tmp_path / "m.json")
    for name in ("M", "C", "B", "k", "V", "sigma"):
        np.testing.assert_array_equal(getattr(back, name), getattr(model, name))
    assert back.selection == model.selection and back.mode == mode
    for a, b in zip(back.grams, model.grams):
        np.testing.assert_array_equal(a, b)
    assert (back.hgrams is None) == (model.hgrams is None)
    doc = json.loads((tmp_path / "m.json").read_text(encoding="utf-8"))
    assert {"r", "n_u", "mode", "hyperparams", "M", "C", "B", "phi", "k", "clusters", "grams",
            "V", "sigma", "provenance"} <= set(doc)
    assert all(isinstance(line, str) and len(line.split()) == 3 for line in doc["phi"])


def test_model_phi_mismatch(small_data):
    model, _ = infer(small_data, dense_selection(3, 2), "unconstrained")
    doc = model_to_dict(model)
    doc["phi"] = doc["phi"][:-1]
    with pytest.raises(FileFormatError):
        model_from_dict(doc)


def test_model_missing_key(small_data):
    model, _ = infer(small_data, dense_selection(3, 2), "unconstrained")
    doc = model_to_dict(model)
    del doc["M"]
    with pytest.raises(FileFormatError):
        model_from_dict(doc)


def test_trajectory_and_reconstruction(tmp_path, small_data):
    model, _ = infer(small_data, dense_selection(3, 2), "bounded")
    traj = simulate(model, small_data.U[:, :20], small_data.dt)
    write_trajectory(tmp_path / "tr.csv", traj)
    header, data = read_columns(tmp_path / "tr.csv")
    assert header == ["t", "x_1", "x_2", "x_3", "v_1", "v_2", "v_3"]
    np.testing.assert_array_equal(data[:, 1:4].T, traj.X)
    write_reconstruction(tmp_path / "rec.csv", traj.times, small_data.V @ traj.X)
    header, data = read_columns(tmp_path / "rec.csv")
    assert header[0] == "t" and len(header) == 8


def test_write_json_numpy(tmp_path):
    write_json(tmp_path / "a.json", {"x": np.arange(3), "y": np.float64(1.5), "z": np.bool_(True)})
    assert json.loads((tmp_path / "a.json").read_text()) == {"x": [0, 1, 2], "y": 1.5, "z": True}
