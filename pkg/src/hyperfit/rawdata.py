"""
Raw experiment datasets: snapshot text files plus mesh and metadata.

A dataset directory contains ``mesh.txt`` (see :mod:`hyperfit.mesh`),
``experiment.yaml`` and one ``snapshot_###.txt`` per load increment::

    snapshot <index>
    displacements <N>
    <u1> <u2>                        # N lines, nodal in-plane displacements (mm)
    forces_known <K>
    <node> <f1> <f2>                 # K lines, nodal forces (N) of known nodes
    thickness_quadpoints <M>         # and/or: thickness_nodes <N>
    <h>                              # deformed thickness (mm)
    global_force <F>                 # load-cell force (N)

The ``forces_known`` section is absent for realistic datasets, in which only
the global force is available.
"""
from dataclasses import dataclass, field
from pathlib import Path
import copy

import numpy as np
import yaml

from .fe import Snapshot
from .mesh import TriMesh, read_mesh, write_mesh

__all__ = ["RawDataset", "write_snapshot", "read_snapshot", "write_dataset", "read_dataset"]


@dataclass
class RawDataset:
    mesh: TriMesh
    snapshots: list
    meta: dict = field(default_factory=dict)

    @property
    def mode(self):
        return self.meta.get("mode", "ideal")

    def copy(self):
        return copy.deepcopy(self)


def _fmt(x):
    return repr(float(x))


def write_snapshot(snap, path):
    lines = [f"snapshot {snap.index}", f"displacements {len(snap.u)}"]
    lines += [f"{_fmt(a)} {_fmt(b)}" for a, b in np.asarray(snap.u).tolist()]
    if snap.forces is not None:
        known = np.ones(len(snap.u), dtype=bool) if snap.known is None else np.asarray(snap.known)
        idx = np.flatnonzero(known)
        lines.append(f"forces_known {len(idx)}")
        lines += [f"{i} {_fmt(snap.forces[i, 0])} {_fmt(snap.forces[i, 1])}" for i in idx.tolist()]
    if snap.thickness_quad is not None:
        lines.append(f"thickness_quadpoints {len(snap.thickness_quad)}")
        lines += [_fmt(h) for h in np.asarray(snap.thickness_quad).tolist()]
    if snap.thickness_nodes is not None:
        lines.append(f"thickness_nodes {len(snap.thickness_nodes)}")
        lines += [_fmt(h) for h in np.asarray(snap.thickness_nodes).tolist()]
    lines.append(f"global_force {_fmt(snap.global_force)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path):
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    pos = 0

    def take(n):
        nonlocal pos
        block = lines[pos:pos + n]
        if len(block) != n:
            raise ValueError(f"{path}: truncated section")
        pos += n
        return block

    head = take(1)[0].split()
    if head[0] != "snapshot":
        raise ValueError(f"{path}: expected 'snapshot' header")
    snap = Snapshot(index=int(head[1]), u=None)
    while pos < len(lines):
        key, *rest = take(1)[0].split()
        if key == "displacements":
            snap.u = np.array([[float(v) for v in ln.split()] for ln in take(int(rest[0]))]).reshape(-1, 2)
        elif key == "forces_known":
            rows = [ln.split() for ln in take(int(rest[0]))]
            idx = np.array([int(r[0]) for r in rows], dtype=np.int64)
            vals = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
            snap.forces, snap.known = idx, vals  # resolved below once N is known
        elif key == "thickness_quadpoints":
            snap.thickness_quad = np.array([float(v) for v in take(int(rest[0]))])
        elif key == "thickness_nodes":
            snap.thickness_nodes = np.array([float(v) for v in take(int(rest[0]))])
        elif key == "global_force":
            snap.global_force = float(rest[0])
        else:
            raise ValueError(f"{path}: unknown section {key!r}")
    if snap.u is None:
        raise ValueError(f"{path}: missing displacements")
    if snap.forces is not None:
        idx, vals = snap.forces, snap.known
        n = len(snap.u)
        snap.forces = np.zeros((n, 2))
        snap.known = np.zeros(n, dtype=bool)
        snap.forces[idx] = vals
        snap.known[idx] = True
    return snap


def write_dataset(ds, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(ds.mesh, out / "mesh.txt")
    (out / "experiment.yaml").write_text(yaml.safe_dump(ds.meta, sort_keys=True))
    for old in out.glob("snapshot_*.txt"):
        old.unlink()
    for s in ds.snapshots:
        write_snapshot(s, out / f"snapshot_{s.index:03d}.txt")
    return out


def read_dataset(in_dir):
    d = Path(in_dir)
    mesh = read_mesh(d / "mesh.txt")
    meta = yaml.safe_load((d / "experiment.yaml").read_text()) or {}
    snaps = [read_snapshot(p) for p in sorted(d.glob("snapshot_*.txt"))]
    if not snaps:
        raise ValueError(f"{d}: no snapshot files")
    for s in snaps:
        if len(s.u) != mesh.n_nodes:
            raise ValueError(f"snapshot {s.index}: {len(s.u)} displacements for {mesh.n_nodes} nodes")
    return RawDataset(mesh, snaps, meta)
