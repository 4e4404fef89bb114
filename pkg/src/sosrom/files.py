"""CSV and JSON file formats.

Snapshot CSV    ``t, y_1..y_n``; the inputs live in a second file ``t, u_1..u_{n_u}``.
Trajectory CSV  ``t, x_1..x_r, v_1..v_r``.
Reconstruction  ``t, y_1..y_n``.

All files are UTF-8 with '.' decimals; floats are written with 17 significant
digits so that a round trip is exact.

Model JSON keys: ``r, n_u, mode, hyperparams, M, C, B, phi, k, clusters,
grams, V, sigma, provenance`` plus ``selection`` (``d``, ``theta``,
``budget``). ``B`` is a row-major nested list, ``phi`` a list of exponent
lines ("2 0 1"), and every Gram block is its lower triangle in row-major order
under ``grams["G"]`` (and ``grams["H"]`` in iss mode).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .clustering import ClusterSelection
from .conic import sym_from_tri, tri_from_sym
from .monomials import MonomialBasis
from .pod import SnapshotSet

FORMAT_VERSION = 1


class FileFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_columns(path, header: list[str], columns) -> None:
    """Write equally long columns under ``header``."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len(cols) != len(header):
        raise ValueError("header and column count differ")
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns have different lengths")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(c[i]) for c in cols])


def read_columns(path) -> tuple[list[str], np.ndarray]:
    """Header and an ``(n_rows, n_cols)`` array of a numeric CSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FileFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-numeric entry ({exc})") from None
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise FileFormatError(f"{path}: rows do not match the header width")
    return header, data


def _check_header(path, header, first: str, prefix: str) -> int:
    if not header or header[0] != first:
        raise FileFormatError(f"{path}: first column must be {first!r}")
    expected = [f"{prefix}_{i + 1}" for i in range(len(header) - 1)]
    if header[1:] != expected:
        raise FileFormatError(f"{path}: expected columns {', '.join(expected[:3])}, ...")
    return len(header) - 1


def write_snapshots(states_path, inputs_path, snapshots: SnapshotSet) -> None:
    n, n_u = snapshots.Y.shape[0], snapshots.U.shape[0]
    write_columns(states_path, ["t"] + [f"y_{i + 1}" for i in range(n)],
                  [snapshots.times, *snapshots.Y])
    write_columns(inputs_path, ["t"] + [f"u_{i + 1}" for i in range(n_u)],
                  [snapshots.times, *snapshots.U])


def read_snapshots(states_path, inputs_path) -> SnapshotSet:
    hy, Y = read_columns(states_path)
    hu, U = read_columns(inputs_path)
    _check_header(states_path, hy, "t", "y")
    _check_header(inputs_path, hu, "t", "u")
    if Y.shape[0] != U.shape[0] or not np.array_equal(Y[:, 0], U[:, 0]):
        raise FileFormatError("snapshot and input files have different time columns")
    return SnapshotSet(Y[:, 0], Y[:, 1:].T, U[:, 1:].T)


def write_trajectory(path, trajectory) -> None:
    X, Xd = trajectory.X, trajectory.Xdot
    r = X.shape[0]
    write_columns(path, ["t"] + [f"x_{i + 1}" for i in range(r)] + [f"v_{i + 1}" for i in range(r)],
                  [trajectory.times, *X, *Xd])


def write_reconstruction(path, times, Y) -> None:
    Y = np.atleast_2d(Y)
    write_columns(path, ["t"] + [f"y_{i + 1}" for i in range(Y.shape[0])], [times, *Y])


def model_to_dict(model) -> dict:
    sel = model.selection
    grams = {"G": [tri_from_sym(G).tolist() for G in model.grams]}
    if model.hgrams is not None:
        grams["H"] = [tri_from_sym(H).tolist() for H in model.hgrams]
    return {
        "format_version": FORMAT_VERSION,
        "r": model.r,
        "n_u": model.n_u,
        "mode": model.mode,
        "hyperparams": dict(model.hyperparams),
        "M": model.M.tolist(),
        "C": model.C.tolist(),
        "B": model.B.tolist(),
        "phi": [line for line in sel.phi.to_text().splitlines()],
        "k": model.k.tolist(),
        "clusters": [list(c) for c in sel.clusters],
        "selection": {"d": sel.d, "theta": sel.theta, "budget": sel.budget},
        "grams": grams,
        "V": None if model.V is None else np.asarray(model.V).tolist(),
        "sigma": None if model.sigma is None else np.asarray(model.sigma).tolist(),
        "provenance": dict(model.provenance),
    }


def model_from_dict(doc: dict):
    from .inference import RomModel

    try:
        r = int(doc["r"])
        info = doc["selection"]
        sel = ClusterSelection.from_clusters(r, int(info["d"]), doc["clusters"],
                                             theta=info.get("theta"), budget=info.get("budget"))
        phi = MonomialBasis.from_text("\n".join(doc["phi"]), r)
        if phi != sel.phi:
            raise FileFormatError("phi listing does not match the stored clusters")
        sizes = [len(psi) for psi in sel.psi_bases]
        grams = [sym_from_tri(g, n) for g, n in zip(doc["grams"].get("G", []), sizes)]
        hgrams = None
        if "H" in doc["grams"]:
            hgrams = [sym_from_tri(h, n) for h, n in zip(doc["grams"]["H"], sizes)]
        model = RomModel(M=np.array(doc["M"], dtype=float), C=np.array(doc["C"], dtype=float),
                         B=np.array(doc["B"], dtype=float), k=np.array(doc["k"], dtype=float),
                         selection=sel, mode=doc["mode"], hyperparams=dict(doc["hyperparams"]),
                         grams=grams, hgrams=hgrams,
                         V=None if doc.get("V") is None else np.array(doc["V"], dtype=float),
                         sigma=None if doc.get("sigma") is None else np.array(doc["sigma"]),
                         provenance=dict(doc.get("provenance", {})))
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"malformed model document: {exc!r}") from None
    if model.M.shape != (r, r) or model.k.shape != (len(sel.phi),):
        raise FileFormatError("operator shapes do not match r and phi")
    return model


def save_model(path, model) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
