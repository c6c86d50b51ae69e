"""
Pipeline configuration: a single YAML file, validated and normalised.

Every key has a default except the geometry, which is either a mesh file or
a plate description. Stress-like values (Young's modulus, pseudo stiffness,
growth parameter) are bare numbers in the unit given by the top-level
``units`` key, or strings such as ``"500 kPa"``; they are converted to MPa.
Lengths are millimetres.

Schema (defaults shown)::

    seed: 0
    units: MPa                    # Pa | kPa | MPa | GPa
    output: null                  # run directory; CLI --out wins
    geometry:
      mesh: null                  # path to a mesh file, or
      plate: null                 # {width, height, element_size, thickness,
                                  #  holes: [[cx, cy, a, b, angle], ...]}
    load:
      n_snap: 10
      fixed: bottom               # node set clamped in both directions
      driven: top                 # node set moved in 2-direction
      displacement: null          # final u2 of the driven set (default: half the height)
      load_cell: bottom           # node set whose reaction is the global force
    material: {E: 1.0, nu: 0.3}
    experiment:
      mode: ideal                 # ideal | realistic
      window: null                # [y_min, y_max] of the domain of interest
      force_boundary: bottom
      zeta_boundary: top
    noise: {omega: 0.0, eta: 0.0, dx: 100.0, grid: 1024, ell: null}
    ddi:
      formulation: ul             # ul | tl | tl-adapted
      nstar: null
      nstar_ratio: 0.01
      pseudo_stiffness: null      # default: stiffness_factor x estimate
      stiffness_factor: 10.0
      max_iter: 200
      tol: 1.0e-10
      reinit: true
      solver: minres              # minres | schur | dense
      pin_nodes: []
    pann:
      width: 8
      lambda_gr: null             # default: lambda_gr_factor x estimate
      lambda_gr_factor: 0.01
      restarts: 5
      maxiter: 3000
      test_fraction: 0.3
    eval:
      paths: [uniaxial, equibiaxial, shear, volumetric]
      stretch_min: 0.8
      stretch_max: 1.4
      n: 61
"""
import copy
import hashlib
import json
import re
from pathlib import Path

import yaml

__all__ = ["ConfigError", "DEFAULTS", "UNIT_FACTORS", "load_config", "validate_config", "config_hash", "to_mpa"]

UNIT_FACTORS = {"Pa": 1e-6, "kPa": 1e-3, "MPa": 1.0, "GPa": 1e3}

DEFAULTS = {
    "seed": 0,
    "units": "MPa",
    "output": None,
    "geometry": {"mesh": None, "plate": None},
    "load": {"n_snap": 10, "fixed": "bottom", "driven": "top", "displacement": None, "load_cell": "bottom"},
    "material": {"E": 1.0, "nu": 0.3},
    "experiment": {"mode": "ideal", "window": None, "force_boundary": "bottom", "zeta_boundary": "top"},
    "noise": {"omega": 0.0, "eta": 0.0, "dx": 100.0, "grid": 1024, "ell": None},
    "ddi": {
        "formulation": "ul",
        "nstar": None,
        "nstar_ratio": 0.01,
        "pseudo_stiffness": None,
        "stiffness_factor": 10.0,
        "max_iter": 200,
        "tol": 1e-10,
        "reinit": True,
        "solver": "minres",
        "pin_nodes": [],
    },
    "pann": {"width": 8, "lambda_gr": None, "lambda_gr_factor": 0.01, "restarts": 5, "maxiter": 3000,
             "test_fraction": 0.3},
    "eval": {"paths": ["uniaxial", "equibiaxial", "shear", "volumetric"], "stretch_min": 0.8, "stretch_max": 1.4,
             "n": 61},
}

PLATE_DEFAULTS = {"width": None, "height": None, "element_size": None, "thickness": 1.0, "holes": []}

STRESS_KEYS = (("material", "E"), ("ddi", "pseudo_stiffness"), ("pann", "lambda_gr"))


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z]+)\s*$")


def to_mpa(value, default_unit="MPa"):
    """Convert a number (in ``default_unit``) or a ``"<value> <unit>"``
    string to MPa. Raises ``ValueError`` on unknown units."""
    if isinstance(value, bool):
        raise ValueError(f"expected a stress value, got {value!r}")
    if isinstance(value, (int, float)):
        if default_unit not in UNIT_FACTORS:
            raise ValueError(f"unknown stress unit {default_unit!r}")
        return float(value) * UNIT_FACTORS[default_unit]
    if isinstance(value, str):
        m = _QUANTITY.match(value)
        if not m:
            raise ValueError(f"cannot parse stress value {value!r}")
        num, unit = m.groups()
        if unit not in UNIT_FACTORS:
            raise ValueError(f"unit {unit!r} is not a stress unit (use one of {', '.join(UNIT_FACTORS)})")
        return float(num) * UNIT_FACTORS[unit]
    raise ValueError(f"expected a stress value, got {value!r}")


def _merge(defaults, given, path, errors):
    out = copy.deepcopy(defaults)
    if given is None:
        return out
    if not isinstance(given, dict):
        errors.append(f"{path or 'config'}: expected a mapping, got {type(given).__name__}")
        return out
    for k, v in given.items():
        key = f"{path}.{k}" if path else str(k)
        if k not in defaults:
            errors.append(f"{key}: unknown key")
        elif isinstance(defaults[k], dict) and k != "plate":
            out[k] = _merge(defaults[k], v, key, errors)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _number(cfg, section, key, errors, lo=None, hi=None, integer=False, strict_lo=False, allow_none=False):
    v = cfg[section][key]
    name = f"{section}.{key}"
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not float(v).is_integer()):
        errors.append(f"{name}: expected {'an integer' if integer else 'a number'}, got {v!r}")
        return
    if lo is not None and (v <= lo if strict_lo else v < lo):
        errors.append(f"{name}: must be {'>' if strict_lo else '>='} {lo}, got {v!r}")
        return
    if hi is not None and v > hi:
        errors.append(f"{name}: must be <= {hi}, got {v!r}")
        return
    cfg[section][key] = int(v) if integer else float(v)


def _choice(cfg, section, key, options, errors):
    v = cfg[section][key]
    if isinstance(v, str):
        v = v.lower()
    if v not in options:
        errors.append(f"{section}.{key}: must be one of {list(options)}, got {v!r}")
    else:
        cfg[section][key] = v


def _geometry(cfg, base, errors):
    g = cfg["geometry"]
    if g["mesh"] is not None and g["plate"] is not None:
        errors.append("geometry: give either mesh or plate, not both")
        return None
    if g["mesh"] is None and g["plate"] is None:
        errors.append("geometry: missing (a mesh file or a plate description is required)")
        return None
    if g["mesh"] is not None:
        path = Path(g["mesh"])
        if not path.is_absolute() and base is not None:
            path = Path(base) / path
        if not path.is_file():
            errors.append(f"geometry.mesh: file {str(path)!r} does not exist")
            return None
        g["mesh"] = str(path.resolve())
        from .mesh import read_mesh

        try:
            m = read_mesh(path)
        except Exception as exc:  # report, do not crash validation
            errors.append(f"geometry.mesh: cannot read mesh ({exc})")
            return None
        return float(m.nodes[:, 1].max() - m.nodes[:, 1].min())
    p = _merge(PLATE_DEFAULTS, g["plate"], "geometry.plate", errors)
    for k in ("width", "height", "element_size", "thickness"):
        v = p[k]
        if v is None:
            errors.append(f"geometry.plate.{k}: required")
        elif isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            errors.append(f"geometry.plate.{k}: must be a positive number, got {v!r}")
        else:
            p[k] = float(v)
    holes = []
    for i, h in enumerate(p["holes"] or []):
        if not isinstance(h, (list, tuple)) or len(h) not in (4, 5) or \
                not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in h):
            errors.append(f"geometry.plate.holes[{i}]: expected [cx, cy, a, b] or [cx, cy, a, b, angle]")
            continue
        holes.append([float(x) for x in h] + ([0.0] if len(h) == 4 else []))
    p["holes"] = holes
    g["plate"] = p
    return p["height"] if isinstance(p["height"], float) else None


def validate_config(data, base_dir=None, mesh=None):
    """Validate a configuration mapping and fill in defaults.

    ``mesh`` overrides ``geometry.mesh`` (e.g. from the command line);
    relative paths are resolved against ``base_dir``. Returns the normalised
    configuration (a plain nested dict, stresses in MPa) or raises
    :class:`ConfigError` listing every problem.
    """
    errors = []
    if data is None:
        data = {}
    cfg = _merge(DEFAULTS, data, "", errors)
    if mesh is not None:
        cfg["geometry"]["mesh"] = str(mesh)
        cfg["geometry"]["plate"] = None

    unit = cfg["units"]
    if unit not in UNIT_FACTORS:
        errors.append(f"units: unknown stress unit {unit!r} (use one of {', '.join(UNIT_FACTORS)})")
        unit = "MPa"
    for section, key in STRESS_KEYS:
        v = cfg[section][key]
        if v is None:
            continue
        try:
            cfg[section][key] = to_mpa(v, unit)
        except ValueError as exc:
            errors.append(f"{section}.{key}: {exc}")
    cfg["units"] = "MPa"

    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        errors.append(f"seed: must be a non-negative integer, got {cfg['seed']!r}")

    height = _geometry(cfg, base_dir, errors)

    _number(cfg, "load", "n_snap", errors, lo=1, integer=True)
    _number(cfg, "load", "displacement", errors, allow_none=True)
    for k in ("fixed", "driven", "load_cell"):
        if not isinstance(cfg["load"][k], str):
            errors.append(f"load.{k}: expected a node-set name")
    if cfg["load"]["displacement"] is None and height is not None:
        cfg["load"]["displacement"] = 0.5 * height

    _number(cfg, "material", "E", errors, lo=0, strict_lo=True)
    nu = cfg["material"]["nu"]
    if isinstance(nu, bool) or not isinstance(nu, (int, float)) or not -1 < nu < 0.5:
        errors.append(f"material.nu: must lie in (-1, 0.5), got {nu!r}")
    else:
        cfg["material"]["nu"] = float(nu)

    _choice(cfg, "experiment", "mode", ("ideal", "realistic"), errors)
    w = cfg["experiment"]["window"]
    if w is not None:
        if not isinstance(w, (list, tuple)) or len(w) != 2 or not all(isinstance(x, (int, float)) for x in w) \
                or not w[1] > w[0]:
            errors.append(f"experiment.window: expected [y_min, y_max] with y_min < y_max, got {w!r}")
        else:
            cfg["experiment"]["window"] = [float(x) for x in w]

    _number(cfg, "noise", "omega", errors, lo=0)
    _number(cfg, "noise", "eta", errors, lo=0)
    _number(cfg, "noise", "dx", errors, lo=0, strict_lo=True)
    _number(cfg, "noise", "grid", errors, lo=2, integer=True)
    if isinstance(cfg["noise"]["grid"], int) and cfg["noise"]["grid"] & (cfg["noise"]["grid"] - 1):
        errors.append(f"noise.grid: must be a power of two, got {cfg['noise']['grid']}")
    _number(cfg, "noise", "ell", errors, lo=0, strict_lo=True, allow_none=True)

    _choice(cfg, "ddi", "formulation", ("ul", "tl", "tl-adapted"), errors)
    _number(cfg, "ddi", "nstar", errors, lo=1, integer=True, allow_none=True)
    _number(cfg, "ddi", "nstar_ratio", errors, lo=0, hi=1, strict_lo=True)
    _number(cfg, "ddi", "pseudo_stiffness", errors, lo=0, strict_lo=True, allow_none=True)
    _number(cfg, "ddi", "stiffness_factor", errors, lo=0, strict_lo=True)
    _number(cfg, "ddi", "max_iter", errors, lo=1, integer=True)
    _number(cfg, "ddi", "tol", errors, lo=0, strict_lo=True)
    if not isinstance(cfg["ddi"]["reinit"], bool):
        errors.append(f"ddi.reinit: expected true/false, got {cfg['ddi']['reinit']!r}")
    _choice(cfg, "ddi", "solver", ("minres", "schur", "dense"), errors)
    pins = cfg["ddi"]["pin_nodes"]
    if not isinstance(pins, list) or not all(isinstance(x, int) and x >= 0 for x in pins):
        errors.append(f"ddi.pin_nodes: expected a list of node indices, got {pins!r}")

    _number(cfg, "pann", "width", errors, lo=1, integer=True)
    _number(cfg, "pann", "lambda_gr", errors, lo=0, strict_lo=True, allow_none=True)
    _number(cfg, "pann", "lambda_gr_factor", errors, lo=0, strict_lo=True)
    _number(cfg, "pann", "restarts", errors, lo=1, integer=True)
    _number(cfg, "pann", "maxiter", errors, lo=1, integer=True)
    _number(cfg, "pann", "test_fraction", errors, lo=0, hi=0.9)

    from .evaluate import PATHS

    paths = cfg["eval"]["paths"]
    if not isinstance(paths, list) or not paths or any(p not in PATHS for p in paths):
        errors.append(f"eval.paths: expected a nonempty subset of {list(PATHS)}, got {paths!r}")
    _number(cfg, "eval", "stretch_min", errors, lo=0, strict_lo=True)
    _number(cfg, "eval", "stretch_max", errors, lo=0, strict_lo=True)
    _number(cfg, "eval", "n", errors, lo=2, integer=True)
    if isinstance(cfg["eval"]["stretch_min"], float) and isinstance(cfg["eval"]["stretch_max"], float) \
            and not cfg["eval"]["stretch_max"] > cfg["eval"]["stretch_min"]:
        errors.append("eval: stretch_max must exceed stretch_min")

    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, mesh=None):
    """Read and validate a YAML configuration file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from None
    return validate_config(data, base_dir=path.parent, mesh=mesh)


def config_hash(cfg, sections=None):
    """SHA-256 of the canonical JSON form of ``cfg`` (or of some sections).
    The output directory is not part of the hash."""
    c = {k: v for k, v in cfg.items() if k != "output"}
    if sections is not None:
        c = {k: c[k] for k in sections}
    return hashlib.sha256(json.dumps(c, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
