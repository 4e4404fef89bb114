"""Command-line pipeline: generate, infer, validate, verify, report and sweep.

Every command reads one JSON config (``--config``); command-line flags override
its keys. Exit codes: 0 success, 2 invalid configuration, 3 pipeline failure
(the message names the failing stage).
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import dense_selection, select_clusters
from .conic import SolverSettings
from .files import (load_model, read_snapshots, save_model, write_json, write_reconstruction,
                    write_snapshots, write_trajectory)
from .fom import ChainModel, input_profile, simulate_fom
from .inference import Hyperparams, infer
from .pod import compute_basis, reduce
from .rom import error_metric, simulate
from .sos import MODES, verify_certificate
from .svg import line_plot

log = logging.getLogger("sosrom")

EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE = 0, 2, 3

DEFAULTS = {
    "data_dir": "data",
    "out_dir": "run",
    "model": None,
    "r": 3,
    "d": 4,
    "theta": None,
    "budget": None,
    "mode": "bounded",
    "hyperparams": {"eps": None, "eps_rel": 1e-6, "delta_M": 1e-6, "delta_C": 1e-6},
    "integrator": "rk4",
    "dt": 1e-3,
    "seed": 42,
    "n_keep": None,
    "chain": {},
    "T": 20.0,
    "n_snap": 200,
    "dt_int": 1e-3,
    "profiles": {"inference": {"kind": "inference"}, "validation": {"kind": "validation"}},
    "plot_dofs": [-1],
    "n_samples": 10000,
    "runs": [],
    "workers": 1,
}

SNAPSHOT_FILES = {
    "inference": ("inference_states.csv", "inference_inputs.csv"),
    "validation": ("validation_states.csv", "validation_inputs.csv"),
}
REPORT_COLUMNS = ["r", "d", "theta", "n_phi", "err_inf", "err_val", "t_inf", "t_sim"]


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _positive_int(cfg, key, allow_none=False):
    val = cfg.get(key)
    if val is None and allow_none:
        return
    if isinstance(val, bool) or not isinstance(val, int) or val < 1:
        raise ConfigError(f"{key} must be a positive integer, got {val!r}")


def validate_config(cfg: dict) -> dict:
    """Check parameter ranges before any work starts."""
    unknown = set(cfg) - set(DEFAULTS) - {"provenance"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    _positive_int(cfg, "r")
    _positive_int(cfg, "d")
    if cfg["d"] % 2 or cfg["d"] < 2:
        raise ConfigError(f"d must be an even integer >= 2, got {cfg['d']}")
    _positive_int(cfg, "theta", allow_none=True)
    if cfg["theta"] is not None and cfg["theta"] > cfg["r"]:
        raise ConfigError(f"theta={cfg['theta']} exceeds r={cfg['r']}")
    _positive_int(cfg, "budget", allow_none=True)
    _positive_int(cfg, "n_keep", allow_none=True)
    _positive_int(cfg, "n_snap")
    _positive_int(cfg, "n_samples")
    _positive_int(cfg, "workers")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}")
    if cfg["integrator"] not in ("rk4", "implicit_midpoint"):
        raise ConfigError("integrator must be rk4 or implicit_midpoint")
    for key in ("dt", "T", "dt_int"):
        if not isinstance(cfg[key], (int, float)) or not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    hp = cfg["hyperparams"]
    if set(hp) - {"eps", "eps_rel", "delta_M", "delta_C"}:
        raise ConfigError("hyperparams accepts eps, eps_rel, delta_M, delta_C")
    for key, val in hp.items():
        if val is not None and (not isinstance(val, (int, float)) or val < 0):
            raise ConfigError(f"hyperparams.{key} must be nonnegative")
    try:
        ChainModel(**cfg["chain"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"chain: {exc}") from None
    for name in ("inference", "validation"):
        prof = cfg["profiles"].get(name)
        if not isinstance(prof, dict) or "kind" not in prof:
            raise ConfigError(f"profiles.{name} must be an object with a 'kind'")
        try:
            _profile(prof)(np.zeros(1))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"profiles.{name}: {exc}") from None
    for i, run in enumerate(cfg["runs"]):
        if not isinstance(run, dict):
            raise ConfigError(f"runs[{i}] must be an object")
        validate_config(_merge({k: v for k, v in cfg.items() if k != "runs"}, run) | {"runs": []})
    return cfg


def load_config(path, overrides: dict) -> dict:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, doc)
    cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def provenance(cfg: dict, command: str) -> dict:
    import clarabel
    import scipy

    return {
        "command": command,
        "config_sha256": config_hash(cfg),
        "versions": {"sosrom": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "clarabel": clarabel.__version__},
    }


def _profile(spec: dict):
    kind = spec["kind"]
    amp, omega = spec.get("amplitude"), spec.get("omega")
    return lambda t: input_profile(kind, t, amplitude=amp, omega=omega)


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - any failure is reported with its stage tag
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc


def _load_set(cfg, name):
    states, inputs = (Path(cfg["data_dir"]) / f for f in SNAPSHOT_FILES[name])
    for p in (states, inputs):
        if not p.exists():
            raise ConfigError(f"missing snapshot file {p}")
    return _stage("io", read_snapshots, states, inputs)


def _simulate_on(model, snaps, cfg):
    substeps = max(1, int(round(snaps.dt / cfg["dt"])))
    return _stage("simulate", simulate, model, snaps.U, snaps.dt, integrator=cfg["integrator"],
                  substeps=substeps, t0=float(snaps.times[0]))


def _error(traj, snaps, V):
    if traj.diverged:
        return math.inf
    return _stage("validate", error_metric, snaps.Y, V, traj.X).err


# --------------------------------------------------------------------- commands

def cmd_generate(cfg: dict) -> dict:
    chain = ChainModel(**cfg["chain"])
    out = Path(cfg["data_dir"])
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name in ("inference", "validation"):
        snaps = _stage("generate", simulate_fom, chain, _profile(cfg["profiles"][name]),
                       T=cfg["T"], n_snap=cfg["n_snap"], dt_int=cfg["dt_int"])
        states, inputs = (out / f for f in SNAPSHOT_FILES[name])
        _stage("io", write_snapshots, states, inputs, snaps)
        written[name] = [str(states), str(inputs)]
    meta = {"files": written, "chain": cfg["chain"], "provenance": provenance(cfg, "generate")}
    write_json(out / "generate.json", meta)
    return meta


def cmd_infer(cfg: dict) -> dict:
    snaps = _load_set(cfg, "inference")
    if cfg["n_keep"] is not None:
        if cfg["n_keep"] > snaps.Y.shape[1]:
            raise ConfigError(f"n_keep={cfg['n_keep']} exceeds the {snaps.Y.shape[1]} snapshots")
        snaps = _stage("pod", snaps.truncate, cfg["n_keep"])
    r, d, theta = cfg["r"], cfg["d"], cfg["theta"]
    if r > min(snaps.Y.shape):
        raise ConfigError(f"r={r} exceeds the snapshot matrix rank bound {min(snaps.Y.shape)}")
    t0 = time.perf_counter()
    V, sigma = _stage("pod", compute_basis, snaps.Y, r)
    data = _stage("pod", reduce, snaps, V, sigma)
    if theta is None:
        selection = _stage("clustering", dense_selection, r, d)
    else:
        selection = _stage("clustering", select_clusters, sigma, r, theta, d, cfg["budget"])
    t_select = time.perf_counter() - t0
    hp = Hyperparams(**{k: v for k, v in cfg["hyperparams"].items()})
    model, report = _stage("inference", infer, data, selection, cfg["mode"], hp, SolverSettings(),
                           True, cfg["n_samples"], cfg["seed"])
    t_inf = t_select + report.t_inf
    model.provenance.update(provenance(cfg, "infer"))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model_path = Path(cfg["model"]) if cfg["model"] else out / "model.json"
    _stage("io", save_model, model_path, model)
    traj = _simulate_on(model, snaps, cfg)
    err_inf = _error(traj, snaps, V)
    result = {"r": r, "d": d, "theta": theta, "budget": cfg["budget"], "mode": cfg["mode"],
              "n_phi": len(selection.phi), "clusters": [list(c) for c in selection.clusters],
              "err_inf": err_inf, "diverged_inf": traj.diverged, "t_inf": t_inf,
              "objective": report.objective, "status": report.status,
              "n_vars": report.n_vars, "n_equalities": report.n_equalities,
              "iterations": report.iterations, "model": str(model_path),
              "provenance": provenance(cfg, "infer")}
    if cfg["mode"] != "unconstrained":
        result["certificate"] = report.certificate
    write_json(out / "infer_report.json", result)
    return result


def cmd_validate(cfg: dict) -> dict:
    out = Path(cfg["out_dir"])
    model_path = Path(cfg["model"]) if cfg["model"] else out / "model.json"
    if not model_path.exists():
        raise ConfigError(f"missing model file {model_path}")
    model = _stage("io", load_model, model_path)
    if model.V is None:
        raise StageError("validate", "model file carries no reduced basis V")
    snaps = _load_set(cfg, "validation")
    if snaps.Y.shape[0] != model.V.shape[0]:
        raise StageError("validate", "validation data and model basis have different n")
    traj = _simulate_on(model, snaps, cfg)
    err_val = _error(traj, snaps, model.V)
    out.mkdir(parents=True, exist_ok=True)
    _stage("io", write_trajectory, out / "trajectory.csv", traj)
    recon = model.V @ traj.X
    _stage("io", write_reconstruction, out / "reconstruction.csv", traj.times, recon)
    plots = []
    for dof in cfg["plot_dofs"]:
        idx = int(dof) % snaps.Y.shape[0]
        path = out / f"dof_{idx + 1}.svg"
        line_plot(path, snaps.times, {"FOM": snaps.Y[idx], "ROM": recon[idx]},
                  title=f"y_{idx + 1}: FOM vs ROM (err_val = {err_val:.4g})",
                  ylabel=f"y_{idx + 1}", dashed=("ROM",))
        plots.append(str(path))
    result = {"err_val": err_val, "diverged": traj.diverged,
              "last_valid": traj.last_valid, "t_sim": traj.t_sim, "plots": plots,
              "model": str(model_path), "provenance": provenance(cfg, "validate")}
    write_json(out / "validate_report.json", result)
    return result


def cmd_verify(cfg: dict) -> dict:
    model_path = Path(cfg["model"]) if cfg["model"] else Path(cfg["out_dir"]) / "model.json"
    if not model_path.exists():
        raise ConfigError(f"missing model file {model_path}")
    model = _stage("io", load_model, model_path)
    if model.mode == "unconstrained":
        return {"model": str(model_path), "mode": model.mode, "passed": None,
                "note": "unconstrained models carry no certificates"}
    report = _stage("certificate", verify_certificate, model, n_samples=cfg["n_samples"],
                    seed=cfg["seed"])
    result = {"model": str(model_path), "mode": model.mode, **report.to_dict()}
    if not report.passed:
        raise StageError("certificate", f"checks failed: {', '.join(report.failures())}")
    return result


def _fmt_cell(key, val) -> str:
    if key == "theta":
        return "-" if val is None else str(val)
    if val is None:
        return "n/a"
    if isinstance(val, float):
        if math.isinf(val):
            return "inf"
        return f"{val:.4g}" if key.startswith("err") else f"{val:.3f}"
    return str(val)


def _sort_key(row):
    theta = row.get("theta")
    return (row["r"], row["d"], -1 if theta is None else theta)


def collect_rows(run_dirs) -> tuple[list[dict], list[str]]:
    """Table rows from run directories; runs without artifacts are listed as missing."""
    rows, missing = [], []
    for run in run_dirs:
        run = Path(run)
        inf_path, val_path = run / "infer_report.json", run / "validate_report.json"
        if not inf_path.exists():
            missing.append(str(inf_path))
            continue
        rep = json.loads(inf_path.read_text(encoding="utf-8"))
        row = {k: rep.get(k) for k in ("r", "d", "theta", "n_phi", "err_inf", "t_inf", "mode")}
        if val_path.exists():
            val = json.loads(val_path.read_text(encoding="utf-8"))
            row["err_val"], row["t_sim"] = val.get("err_val"), val.get("t_sim")
        else:
            missing.append(str(val_path))
            row["err_val"] = row["t_sim"] = None
        rows.append(row)
    rows.sort(key=_sort_key)
    return rows, missing


def render_markdown(rows: list[dict]) -> str:
    names = ["r", "d", "Θ", "n_φ", "err_inf", "err_val", "t_inf", "t_sim"]
    lines = ["| " + " | ".join(names) + " |", "|" + "---|" * len(names)]
    for row in rows:
        lines.append("| " + " | ".join(_fmt_cell(k, row.get(k)) for k in REPORT_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def write_report(rows, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md, csv_path = out / "table.md", out / "table.csv"
    md.write_text(render_markdown(rows), encoding="utf-8")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(k, row.get(k)) for k in REPORT_COLUMNS) + "\n")
    return md, csv_path


def _run_dir(cfg, run) -> Path:
    theta = run.get("theta", cfg["theta"])
    name = f"r{run.get('r', cfg['r'])}_d{run.get('d', cfg['d'])}_t{'-' if theta is None else theta}"
    mode = run.get("mode")
    return Path(cfg["out_dir"]) / (f"{name}_{mode}" if mode else name)


def cmd_report(cfg: dict, run_dirs=None) -> dict:
    dirs = list(run_dirs) if run_dirs else [_run_dir(cfg, run) for run in cfg["runs"]]
    rows, missing = collect_rows(dirs)
    md, csv_path = write_report(rows, cfg["out_dir"])
    for m in missing:
        log.warning("missing run artifact: %s", m)
    return {"rows": len(rows), "missing": missing, "markdown": str(md), "csv": str(csv_path)}


def _sweep_one(sub: dict) -> str | None:
    try:
        cmd_infer(sub)
        cmd_validate(sub)
    except (StageError, ConfigError) as exc:
        return str(exc)
    return None


def cmd_sweep(cfg: dict) -> dict:
    """infer + validate for every entry of ``runs``, then the report table.

    Runs are independent; with ``workers > 1`` they execute in a process pool.
    """
    base = {k: v for k, v in cfg.items() if k != "runs"}
    subs = []
    for run in cfg["runs"]:
        sub = _merge(base, run) | {"runs": [], "model": None}
        sub["out_dir"] = str(_run_dir(cfg, run))
        subs.append(sub)
    if cfg["workers"] > 1 and len(subs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            errors = list(pool.map(_sweep_one, subs))
    else:
        errors = [_sweep_one(sub) for sub in subs]
    for sub, err in zip(subs, errors):
        if err is not None:
            log.error("run %s failed: %s", sub["out_dir"], err)
    result = cmd_report(cfg, [sub["out_dir"] for sub in subs])
    result["failed"] = [sub["out_dir"] for sub, err in zip(subs, errors) if err is not None]
    return result


COMMANDS = {"generate": cmd_generate, "infer": cmd_infer, "validate": cmd_validate,
            "verify": cmd_verify, "report": cmd_report, "sweep": cmd_sweep}


_COMMAND_DOCS = {
    "generate": "simulate the chain under the inference and validation inputs",
    "infer": "POD, cluster selection and stability-constrained inference",
    "validate": "simulate a model on the validation input and score it",
    "verify": "re-run the certificate checks on a model file",
    "report": "collect run directories into markdown and CSV tables",
    "sweep": "infer and validate every configured run, then report",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sosrom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=_COMMAND_DOCS[name])
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("infer", "validate", "verify", "sweep"):
            p.add_argument("--model")
            p.add_argument("--integrator", choices=["rk4", "implicit_midpoint"])
            p.add_argument("--dt", type=float)
            p.add_argument("--n-samples", dest="n_samples", type=int)
        if name in ("infer", "sweep"):
            p.add_argument("-r", type=int)
            p.add_argument("-d", type=int)
            p.add_argument("--theta", type=int)
            p.add_argument("--budget", type=int)
            p.add_argument("--mode", choices=list(MODES))
            p.add_argument("--n-keep", dest="n_keep", type=int)
        if name == "sweep":
            p.add_argument("--workers", type=int)
        if name == "generate":
            p.add_argument("--T", dest="T", type=float)
            p.add_argument("--n-snap", dest="n_snap", type=int)
        if name == "report":
            p.add_argument("runs_dirs", nargs="*", help="run directories (default: config runs)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = vars(args).copy()
    command = opts.pop("command")
    config_path = opts.pop("config")
    opts.pop("verbose")
    run_dirs = opts.pop("runs_dirs", None)
    try:
        cfg = load_config(config_path, opts)
        if command == "report":
            result = cmd_report(cfg, run_dirs)
        else:
            result = COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"pipeline error {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    print(json.dumps(_summary(result), indent=1, default=str))
    return EXIT_OK


def _summary(result: dict) -> dict:
    return {k: v for k, v in result.items() if k not in ("provenance", "certificate")}


if __name__ == "__main__":
    sys.exit(main())
