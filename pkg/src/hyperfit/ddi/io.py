"""
Text tables for identification results: the material database, the
mechanical states and the recovered unknown-boundary forces.

Header comment lines (``# key: value``) carry the formulation and the
stiffness estimate so that a database file is self-describing.
"""
import csv
from pathlib import Path

import numpy as np

from .core import Database

__all__ = [
    "DatabaseTable",
    "database_columns",
    "write_database",
    "read_database",
    "write_mechanical_states",
    "read_mechanical_states",
    "write_zeta",
]


def database_columns(formulation):
    """Column names of the database table for a formulation."""
    if formulation == "ul":
        return ["z", "e11", "e22", "e33", "e12", "sigma11", "sigma22", "sigma12", "weight"]
    return ["z", "E11", "E22", "E33", "E12", "T11", "T22", "T12", "weight"]


class DatabaseTable:
    """Material states as read from disk.

    ``strains`` are ``(N*, 4)`` tensor components ``(11, 22, 33, 12)``,
    ``stresses`` are ``(N*, 3)`` ``(11, 22, 12)``. ``metric`` is ``"ul"``
    (Euler-Almansi / Cauchy) or ``"tl"`` (Green-Lagrange / second Piola).
    """

    def __init__(self, strains, stresses, weights, metric, meta=None):
        self.strains = np.asarray(strains, dtype=float)
        self.stresses = np.asarray(stresses, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.metric = metric
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.weights)

    def used(self):
        """Copy restricted to states with positive weight."""
        k = self.weights > 0
        return DatabaseTable(self.strains[k], self.stresses[k], self.weights[k], self.metric, self.meta)


def _write_rows(path, header_meta, columns, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for k, v in header_meta.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def _read_rows(path):
    meta = {}
    body = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line.strip():
                body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ValueError(f"{path}: no header")
    return meta, rows[0], rows[1:]


def write_database(result, path, stiffness_estimate=None):
    """Write the material database of a :class:`DdiResult`."""
    db = result.database
    meta = {"formulation": result.formulation, "pseudo_stiffness": repr(float(result.pseudo_stiffness))}
    if stiffness_estimate is not None:
        meta["stiffness_estimate"] = repr(float(stiffness_estimate))
    strains = db.tensor_strains
    rows = [[z, *strains[z], *db.stress[z], result.weights[z]] for z in range(db.size)]
    return _write_rows(path, meta, database_columns(result.formulation), rows)


def read_database(path):
    """Read a database table; returns a :class:`DatabaseTable`."""
    meta, header, rows = _read_rows(path)
    if header == database_columns("ul"):
        metric = "ul"
    elif header == database_columns("tl"):
        metric = "tl"
    else:
        raise ValueError(f"{path}: unexpected columns {header}")
    a = np.array(rows, dtype=float).reshape(-1, 9)
    if not np.array_equal(a[:, 0], np.arange(len(a))):
        raise ValueError(f"{path}: state indices must run 0..N*-1")
    return DatabaseTable(a[:, 1:5], a[:, 5:8], a[:, 8], metric, meta)


def database_from_table(table):
    """Internal :class:`Database` (engineering shear strain) from a table."""
    s = table.strains
    return Database(np.column_stack([s[:, 0], s[:, 1], 2.0 * s[:, 3]]), s[:, 2].copy(), table.stresses.copy())


MECH_COLUMNS = ["snapshot", "point", "e11", "e22", "e33", "e12", "s11", "s22", "s12", "weight", "state"]


def write_mechanical_states(result, path):
    """Mechanical strains and stresses of every point and snapshot."""
    S, Q = result.mapping.shape
    st = result.strains
    sg = result.stress
    w = result.problem.weight if result.problem is not None else np.zeros((S, Q))
    rows = ([t, g, *st[t, g], *sg[t, g], w[t, g], result.mapping[t, g]] for t in range(S) for g in range(Q))
    return _write_rows(path, {"formulation": result.formulation}, MECH_COLUMNS, rows)


def read_mechanical_states(path):
    """Returns ``(strains (n, 4), stresses (n, 3), weights, mapping, formulation)``."""
    meta, header, rows = _read_rows(path)
    if header != MECH_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    a = np.array(rows, dtype=float).reshape(-1, len(MECH_COLUMNS))
    return a[:, 2:6], a[:, 6:9], a[:, 9], a[:, 10].astype(np.int64), meta.get("formulation", "ul")


def write_zeta(result, path):
    """Recovered forces at the nodes with unknown forces."""
    nodes = np.flatnonzero(~result.problem.pi) if result.problem is not None else np.arange(result.zeta.shape[1])
    rows = ([t, a, result.zeta[t, a, 0], result.zeta[t, a, 1]] for t in range(result.zeta.shape[0]) for a in nodes)
    return _write_rows(path, {"formulation": result.formulation}, ["snapshot", "node", "zeta1", "zeta2"], rows)
