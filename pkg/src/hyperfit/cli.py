"""
Command line interface.

Subcommands ``generate``, ``noise``, ``ddi``, ``train``, ``eval``, ``sweep``
and ``pipeline`` (plus ``validate``). ``--seed``, ``--threads`` and ``--out``
are accepted by every subcommand. The environment variables
``HYPERFIT_OUT`` and ``HYPERFIT_THREADS`` supply defaults for ``--out`` and
``--threads``.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("hyperfit")

__all__ = ["main", "build_parser"]


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _global(p):
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help="global random seed (default 0)")
    g.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    g.add_argument("--out", default=None, help="output directory or file")
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    ap = argparse.ArgumentParser(prog="hyperfit", description="Hyperelastic model discovery from full-field data.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a configuration and print it with all defaults")
    p.add_argument("--config", default=None, help="YAML configuration (default: empty)")
    p.add_argument("--mesh", default=None, help="mesh file overriding geometry.mesh")
    _global(p)

    p = sub.add_parser("generate", help="forward simulation and raw-data export")
    p.add_argument("--config", default=None, help="YAML configuration")
    p.add_argument("--mesh", default=None, help="mesh file overriding geometry.mesh")
    _global(p)

    p = sub.add_parser("noise", help="add force and displacement/thickness noise to a raw dataset")
    p.add_argument("--in", dest="inp", required=True, help="raw dataset directory")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--dx", type=float, default=100.0, help="geometry dimension (mm)")
    p.add_argument("--grid", type=int, default=1024, help="GRF grid size (power of two)")
    p.add_argument("--ell", type=float, default=None, help="correlation length (default 1/grid)")
    _global(p)

    p = sub.add_parser("ddi", help="identify a material database")
    p.add_argument("--in", dest="inp", required=True, help="raw dataset directory")
    p.add_argument("--formulation", default="ul", choices=["ul", "tl", "tl-adapted"])
    p.add_argument("--nstar", type=int, default=None)
    p.add_argument("--nstar-ratio", type=float, default=0.01)
    p.add_argument("--pseudo-stiffness", default=None, help="MPa, or a value with unit such as '500 kPa'")
    p.add_argument("--stiffness-factor", type=float, default=10.0)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--solver", default="minres", choices=["minres", "schur", "dense"])
    p.add_argument("--no-reinit", action="store_true")
    _global(p)

    p = sub.add_parser("train", help="calibrate a PANN on a database")
    p.add_argument("--db", required=True, help="database table written by 'ddi'")
    p.add_argument("--metric", default=None, choices=["ul", "tl"], help="default: from the table")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--lambda-gr", default=None, help="MPa (default: 1e-2 x stiffness estimate)")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--maxiter", type=int, default=3000)
    p.add_argument("--test-fraction", type=float, default=0.3)
    _global(p)

    p = sub.add_parser("eval", help="compare identified states and a model with the neo-Hooke reference")
    p.add_argument("--ddi", required=True, help="directory written by 'ddi'")
    p.add_argument("--model", default=None, help="model file written by 'train'")
    p.add_argument("--E", type=float, default=1.0, help="reference Young's modulus (MPa)")
    p.add_argument("--nu", type=float, default=0.3)
    p.add_argument("--stretch-range", type=_floats, default=[0.8, 1.4])
    _global(p)

    p = sub.add_parser("sweep", help="identification over a list of hyperparameter or noise values")
    p.add_argument("--in", dest="inp", required=True, help="raw dataset directory")
    p.add_argument("--param", required=True, choices=["nstar-ratio", "pseudo-stiffness", "eta"])
    p.add_argument("--values", required=True, type=_floats, help="comma-separated values")
    p.add_argument("--units", default="MPa", help="unit of pseudo-stiffness values")
    p.add_argument("--formulations", default="ul", help="comma-separated formulations")
    p.add_argument("--config", default=None, help="YAML configuration for the fixed settings")
    p.add_argument("--E", type=float, default=None)
    p.add_argument("--nu", type=float, default=None)
    _global(p)

    p = sub.add_parser("pipeline", help="run or resume generate -> noise -> ddi -> train -> eval")
    p.add_argument("--config", required=True, help="YAML configuration")
    p.add_argument("--mesh", default=None)
    p.add_argument("--stages", default=",".join(["generate", "noise", "ddi", "train", "eval"]))
    p.add_argument("--force", action="store_true", help="re-run stages even if up to date")
    _global(p)
    return ap


def _out(args, default=None):
    out = args.out or os.environ.get("HYPERFIT_OUT") or default
    if out is None:
        raise SystemExit("error: --out is required")
    return Path(out)


def _config(args):
    from .config import load_config, validate_config

    mesh = getattr(args, "mesh", None)
    if getattr(args, "config", None):
        cfg = load_config(args.config, mesh=mesh)
    elif mesh is not None:
        cfg = validate_config({}, mesh=mesh)
    else:
        cfg = None
    if cfg is not None and args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _dataset_dir(path):
    # accept the directory written by 'generate' as well as the dataset itself
    path = Path(path)
    if not (path / "mesh.txt").is_file() and (path / "raw" / "mesh.txt").is_file():
        return path / "raw"
    return path


def _seed(args):
    return 0 if args.seed is None else args.seed


def cmd_validate(args):
    from .config import config_hash, validate_config

    cfg = _config(args)
    if cfg is None:
        cfg = validate_config({}, mesh=args.mesh)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    print(f"# config hash {config_hash(cfg)}", file=sys.stderr)
    return 0


def cmd_generate(args):
    from .pipeline import stage_generate

    cfg = _config(args)
    if cfg is None:
        raise SystemExit("error: generate needs --config or --mesh")
    out = _out(args, cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    metrics = stage_generate(cfg, out)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_noise(args):
    from .noise import NoiseConfig, apply_noise
    from .rawdata import read_dataset, write_dataset

    ds = read_dataset(_dataset_dir(args.inp))
    nc = NoiseConfig(omega=args.omega, eta=args.eta, dx=args.dx, grid=args.grid, ell=args.ell, seed=_seed(args))
    write_dataset(apply_noise(ds, nc), _out(args))
    return 0


def _stress_arg(value, unit="MPa"):
    from .config import to_mpa

    if value is None:
        return None
    try:
        return to_mpa(float(value), unit)
    except ValueError:
        return to_mpa(value)


def cmd_ddi(args):
    from .ddi import DdiConfig, run_ddi, write_database, write_mechanical_states, write_zeta
    from .evaluate import estimate_stiffness
    from .rawdata import read_dataset

    ds = read_dataset(_dataset_dir(args.inp))
    est = estimate_stiffness(ds)
    C = _stress_arg(args.pseudo_stiffness)
    if C is None:
        C = args.stiffness_factor * est
    cfg = DdiConfig(formulation=args.formulation, nstar=args.nstar, nstar_ratio=args.nstar_ratio,
                    pseudo_stiffness=C, max_iter=args.max_iter, tol=args.tol, reinit=not args.no_reinit,
                    seed=_seed(args), solver=args.solver)
    res = run_ddi(ds, cfg)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    write_database(res, out / "database.csv", stiffness_estimate=est)
    write_mechanical_states(res, out / "mechanical.csv")
    write_zeta(res, out / "zeta.csv")
    summary = {"formulation": res.formulation, "converged": res.converged, "iterations": res.iterations,
               "pseudo_stiffness": res.pseudo_stiffness, "stiffness_estimate": est, "flags": res.flags}
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0 if res.converged else 3


def cmd_train(args):
    from .ddi import read_database
    from .pann import data_from_database, save_model, train
    from .rng import substream

    table = read_database(args.db).used()
    lam = _stress_arg(args.lambda_gr)
    if lam is None:
        if "stiffness_estimate" not in table.meta:
            raise SystemExit("error: the database has no stiffness estimate; pass --lambda-gr")
        lam = 1e-2 * float(table.meta["stiffness_estimate"])
    data = data_from_database(table.strains, table.stresses, args.metric or table.metric)
    data.split(args.test_fraction, substream(_seed(args), "pann-split"))
    model, rep = train(data, width=args.width, lambda_gr=lam, restarts=args.restarts, maxiter=args.maxiter,
                       seed=_seed(args))
    out = _out(args, "model.pann")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    print(json.dumps({"cal_r2": rep.cal_r2, "test_r2": rep.test_r2, "cal_mse": rep.cal_mse,
                      "test_mse": rep.test_mse, "lambda_gr": lam}, sort_keys=True))
    return 0


def cmd_eval(args):
    from .config import DEFAULTS
    from .continuum import NeoHookeParams
    from .pipeline import evaluate_outputs

    ev = dict(DEFAULTS["eval"], stretch_min=args.stretch_range[0], stretch_max=args.stretch_range[1])
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    metrics = evaluate_outputs(NeoHookeParams(args.E, args.nu), args.ddi, out, args.model, ev)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_sweep(args):
    from .config import load_config, to_mpa, validate_config
    from .continuum import NeoHookeParams
    from .evaluate import SWEEP_FIELDS, SweepSpec, run_sweep, write_csv
    from .pipeline import sweep_base, sweep_noise_config
    from .rawdata import read_dataset

    src = _dataset_dir(args.inp)
    ds = read_dataset(src)
    # the geometry of the fixed settings is irrelevant here: the dataset carries its own mesh
    cfg = load_config(args.config, mesh=src / "mesh.txt") if args.config \
        else validate_config({}, mesh=src / "mesh.txt")
    if args.seed is not None:
        cfg["seed"] = args.seed
    values = args.values
    if args.param == "pseudo-stiffness":
        values = [to_mpa(v, args.units) for v in values]
    spec = SweepSpec(args.param, values, [f.strip() for f in args.formulations.split(",") if f.strip()])
    E = args.E if args.E is not None else cfg["material"]["E"]
    nu = args.nu if args.nu is not None else cfg["material"]["nu"]
    rows = run_sweep(spec, ds, sweep_base(cfg, ds), NeoHookeParams(E, nu), noise=sweep_noise_config(cfg))
    out = _out(args, "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out, SWEEP_FIELDS)
    for r in rows:
        print(f"{r['param']}={r['value']!r} {r['formulation']}: R2_mech={r['r2_mech']} R2_mat={r['r2_mat']}"
              + (f" error={r['error']}" if r["error"] else ""))
    return 0 if not any(r["error"] for r in rows) else 3


def cmd_pipeline(args):
    from .pipeline import PipelineError, run_pipeline

    cfg = _config(args)
    out = _out(args, cfg["output"])
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    try:
        manifest = run_pipeline(cfg, out, stages=stages, force=args.force)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(manifest["metrics"], indent=2, sort_keys=True))
    return 0


COMMANDS = {"validate": cmd_validate, "generate": cmd_generate, "noise": cmd_noise, "ddi": cmd_ddi,
            "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "pipeline": cmd_pipeline}


def main(argv=None):
    from .config import ConfigError

    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or (int(os.environ["HYPERFIT_THREADS"]) if os.environ.get("HYPERFIT_THREADS") else None)
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
