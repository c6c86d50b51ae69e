"""
Resumable pipeline: generate -> noise -> ddi -> train -> eval.

Each stage writes into its own subdirectory of the run directory and
finishes by writing ``stage.json`` with a key derived from the stage's
configuration sections and the checksums of its input files. A stage whose
key and output checksums still match is skipped on the next run, so deleting
one stage directory re-runs that stage (and nothing upstream of it).
"""
import hashlib
import json
import logging
import platform
import shutil
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, config_hash

log = logging.getLogger(__name__)

__all__ = ["STAGES", "PipelineError", "run_pipeline", "file_checksum", "build_mesh", "load_program",
           "stage_generate", "stage_noise", "stage_ddi", "stage_train", "stage_eval", "evaluate_outputs"]

STAGES = ("generate", "noise", "ddi", "train", "eval")
STAGE_SECTIONS = {
    "generate": ("geometry", "load", "material", "experiment"),
    "noise": ("noise", "seed"),
    "ddi": ("ddi", "seed"),
    "train": ("pann", "seed"),
    "eval": ("eval", "material"),
}
STAGE_INPUTS = {"generate": (), "noise": ("generate",), "ddi": ("noise",), "train": ("ddi",),
                "eval": ("ddi", "train")}
DEFAULT_EVAL = DEFAULTS["eval"]
RANDOM_STREAMS = ("noise-force", "noise-field", "kmeans", "pann-split", "pann-init")


class PipelineError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")


def file_checksum(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files(d):
    return sorted(p for p in Path(d).rglob("*") if p.is_file() and p.name != "stage.json")


def _checksums(d, root):
    return {str(p.relative_to(root)): file_checksum(p) for p in _files(d)}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sub(cfg, sections):
    return {k: cfg[k] for k in sections}


# stage implementations -----------------------------------------------------------------------


def build_mesh(cfg):
    from .mesh import Ellipse, generate_plate_mesh, read_mesh

    g = cfg["geometry"]
    if g["mesh"] is not None:
        return read_mesh(g["mesh"])
    p = g["plate"]
    holes = [Ellipse(*h) for h in p["holes"]]
    return generate_plate_mesh(p["width"], p["height"], holes, h=p["element_size"], h0=p["thickness"])


def load_program(cfg):
    from .fe import LoadProgram

    ld = cfg["load"]
    return LoadProgram(
        ld["n_snap"],
        [(ld["fixed"], 0, 0.0), (ld["fixed"], 1, 0.0), (ld["driven"], 0, 0.0), (ld["driven"], 1, ld["displacement"])],
        load_cell=ld["load_cell"],
    )


def material(cfg):
    from .continuum import NeoHookeParams

    return NeoHookeParams(cfg["material"]["E"], cfg["material"]["nu"])


def stage_generate(cfg, out):
    """Forward simulation and export of the raw dataset."""
    from .fe import export_raw_data, solve_forward
    from .mesh import write_mesh
    from .rawdata import write_dataset

    mesh = build_mesh(cfg)
    p = material(cfg)
    snaps = solve_forward(mesh, load_program(cfg), p)
    ex = cfg["experiment"]
    ds = export_raw_data(snaps, mesh, ex["mode"], p=p, window=ex["window"], force_boundary=ex["force_boundary"],
                         zeta_boundary=ex["zeta_boundary"])
    write_mesh(mesh, Path(out) / "specimen_mesh.txt")
    write_dataset(ds, Path(out) / "raw")
    return {"n_nodes": int(ds.mesh.n_nodes), "n_elements": int(ds.mesh.n_elements),
            "n_snap": len(ds.snapshots), "global_force_final": float(ds.snapshots[-1].global_force)}


def stage_noise(cfg, inp, out):
    from .noise import NoiseConfig, apply_noise
    from .rawdata import read_dataset, write_dataset

    ds = read_dataset(Path(inp["generate"]) / "raw")
    n = cfg["noise"]
    nc = NoiseConfig(omega=n["omega"], eta=n["eta"], dx=n["dx"], grid=n["grid"], ell=n["ell"], seed=cfg["seed"])
    noisy = apply_noise(ds, nc)
    write_dataset(noisy, Path(out) / "raw")
    return {"eta": nc.eta, "omega": nc.omega}


def ddi_config(cfg, stiffness):
    from .ddi import DdiConfig

    d = cfg["ddi"]
    C = d["pseudo_stiffness"] if d["pseudo_stiffness"] is not None else d["stiffness_factor"] * stiffness
    return DdiConfig(formulation=d["formulation"], nstar=d["nstar"], nstar_ratio=d["nstar_ratio"],
                     pseudo_stiffness=C, max_iter=d["max_iter"], tol=d["tol"], reinit=d["reinit"],
                     seed=cfg["seed"], solver=d["solver"], pin_nodes=tuple(d["pin_nodes"]))


def stage_ddi(cfg, inp, out):
    from .ddi import run_ddi, write_database, write_mechanical_states, write_zeta
    from .evaluate import estimate_stiffness
    from .rawdata import read_dataset

    ds = read_dataset(Path(inp["noise"]) / "raw")
    est = estimate_stiffness(ds)
    dcfg = ddi_config(cfg, est)
    res = run_ddi(ds, dcfg)
    out = Path(out)
    write_database(res, out / "database.csv", stiffness_estimate=est)
    write_mechanical_states(res, out / "mechanical.csv")
    write_zeta(res, out / "zeta.csv")
    history = [{k: v for k, v in h.items() if k != "seconds"} for h in res.history]
    report = {"formulation": res.formulation, "converged": res.converged, "iterations": res.iterations,
              "pseudo_stiffness": res.pseudo_stiffness, "stiffness_estimate": est,
              "nstar": int(res.database.size), "eliminated": res.eliminated.tolist(), "flags": res.flags,
              "history": history}
    _write_json(out / "report.json", report)
    if not res.converged:
        log.warning("identification did not converge in %d iterations", res.iterations)
    return {"converged": res.converged, "iterations": res.iterations, "stiffness_estimate": est,
            "pseudo_stiffness": res.pseudo_stiffness}


def stage_train(cfg, inp, out):
    from .ddi import read_database
    from .pann import data_from_database, save_model, train
    from .rng import substream

    table = read_database(Path(inp["ddi"]) / "database.csv").used()
    pc = cfg["pann"]
    lam = pc["lambda_gr"]
    if lam is None:
        est = float(table.meta["stiffness_estimate"])
        lam = pc["lambda_gr_factor"] * est
    data = data_from_database(table.strains, table.stresses, table.metric)
    data.split(pc["test_fraction"], substream(cfg["seed"], "pann-split"))
    model, rep = train(data, width=pc["width"], lambda_gr=lam, restarts=pc["restarts"], maxiter=pc["maxiter"],
                       seed=cfg["seed"])
    out = Path(out)
    save_model(model, out / "model.pann")
    metrics = {"lambda_gr": lam, "n_data": len(data), "cal_mse": rep.cal_mse, "test_mse": rep.test_mse,
               "cal_r2": rep.cal_r2, "test_r2": rep.test_r2, "best_restart": rep.best}
    _write_json(out / "report.json", {**metrics, "restarts": rep.restarts})
    return metrics


def evaluate_outputs(p, ddi_dir, out, model_path=None, eval_cfg=None):
    """Write ``r2.csv`` (mechanical and material states against the
    reference) and, given a model, ``paths.csv``; returns the metrics."""
    from .ddi import read_database, read_mechanical_states
    from .evaluate import r2, reference_stress, stress_path_compare, write_csv
    from .pann import load_model

    out = Path(out)
    table = read_database(Path(ddi_dir) / "database.csv")
    strains, stresses, _, _, form = read_mechanical_states(Path(ddi_dir) / "mechanical.csv")
    rows = []
    metrics = {}
    used = table.used()
    for name, e, s in (("mech", strains, stresses), ("mat", used.strains, used.stresses)):
        ref, ok = reference_stress(e, p, table.metric)
        rep = r2(s[ok], ref[ok], tag=form)
        rows.append({"states": name, "formulation": form, "pooled": rep.pooled,
                     **{f"r2_{k}": v for k, v in rep.components.items()},
                     "count": rep.count, "excluded": int((~ok).sum())})
        metrics[f"r2_{name}"] = rep.pooled
    write_csv(rows, out / "r2.csv")
    if model_path is not None:
        ev = eval_cfg or DEFAULT_EVAL
        model = load_model(model_path)
        paths = stress_path_compare(model, p, ev["paths"], (ev["stretch_min"], ev["stretch_max"]), ev["n"])
        write_csv(paths, out / "paths.csv")
        metrics["path_max_rel_error"] = {r["path"]: r["max_rel_error"] for r in paths}
    return metrics


def stage_eval(cfg, inp, out):
    return evaluate_outputs(material(cfg), inp["ddi"], out, Path(inp["train"]) / "model.pann", cfg["eval"])


_RUNNERS = {"noise": stage_noise, "ddi": stage_ddi, "train": stage_train, "eval": stage_eval}


# orchestration -------------------------------------------------------------------------------


def _stage_key(cfg, stage, root):
    inputs = {}
    for up in STAGE_INPUTS[stage]:
        inputs.update(_checksums(root / up, root))
    if stage == "generate" and cfg["geometry"]["mesh"] is not None:
        inputs["mesh"] = file_checksum(cfg["geometry"]["mesh"])
    blob = json.dumps({"config": _sub(cfg, STAGE_SECTIONS[stage]), "inputs": inputs}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _is_done(d, key, root):
    f = d / "stage.json"
    if not f.is_file():
        return None
    try:
        info = json.loads(f.read_text())
    except json.JSONDecodeError:
        return None
    if info.get("key") != key or info.get("files") != _checksums(d, root):
        return None
    return info


def _versions():
    import scipy
    import sklearn
    import yaml

    return {"hyperfit": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__, "pyyaml": yaml.__version__}


def run_pipeline(cfg, out_dir, stages=STAGES, force=False):
    """Run (or resume) the pipeline for a validated configuration.

    Returns the manifest dict, also written to ``<out_dir>/manifest.json``.
    On failure the stage's partial outputs are kept, the manifest records
    the error and :class:`PipelineError` is raised.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    _write_json(root / "config.json", cfg)
    manifest = {"config_hash": config_hash(cfg), "versions": _versions(),
                "seeds": {"global": cfg["seed"], "streams": list(RANDOM_STREAMS)},
                "stages": {}, "metrics": {}, "files": {}, "timing": {}}
    error = None
    for stage in STAGES:
        if stage not in stages:
            continue
        d = root / stage
        key = _stage_key(cfg, stage, root)
        info = None if force else _is_done(d, key, root)
        if info is not None:
            log.info("stage %s: up to date, skipped", stage)
            manifest["stages"][stage] = {"key": key, "status": "reused"}
        else:
            if d.exists():
                shutil.rmtree(d)
            d.mkdir(parents=True)
            log.info("stage %s: running", stage)
            t0 = time.perf_counter()
            try:
                if stage == "generate":
                    metrics = stage_generate(cfg, d)
                else:
                    metrics = _RUNNERS[stage](cfg, {u: root / u for u in STAGE_INPUTS[stage]}, d)
            except Exception as exc:
                (d / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
                manifest["stages"][stage] = {"key": key, "status": "failed", "error": str(exc)}
                error = PipelineError(stage, exc)
                break
            manifest["timing"][stage] = time.perf_counter() - t0
            info = {"key": key, "metrics": metrics, "files": _checksums(d, root)}
            _write_json(d / "stage.json", info)
            manifest["stages"][stage] = {"key": key, "status": "ran"}
        manifest["metrics"][stage] = info["metrics"]
    for stage in STAGES:
        d = root / stage
        if d.is_dir():
            for p in sorted(p for p in d.rglob("*") if p.is_file()):
                manifest["files"][str(p.relative_to(root))] = file_checksum(p)
    manifest["files"]["config.json"] = file_checksum(root / "config.json")
    _write_json(root / "manifest.json", manifest)
    if error is not None:
        raise error
    return manifest


def sweep_noise_config(cfg):
    """Base :class:`hyperfit.noise.NoiseConfig` of a configuration."""
    from .noise import NoiseConfig

    n = cfg["noise"]
    return NoiseConfig(omega=n["omega"], eta=n["eta"], dx=n["dx"], grid=n["grid"], ell=n["ell"], seed=cfg["seed"])


def sweep_base(cfg, dataset):
    """Base :class:`hyperfit.ddi.DdiConfig` for sweeps over ``dataset``."""
    from .evaluate import estimate_stiffness

    return ddi_config(cfg, estimate_stiffness(dataset))
