"""Reading and writing point clouds.

Two text formats are supported:

* the native ``mccloud v1`` format, one point per line::

      mccloud v1 n=3 normals=1 features=0
      # comment
      0.0 0.0 1.0  0.0 0.0 1.0

* the ASCII subset of PLY (``element vertex`` with ``x y z`` and optional
  ``nx ny nz`` properties). Binary PLY is rejected.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import InvalidParameter, ShapeMismatch

_HEADER = re.compile(r"^mccloud\s+v1\s+n=(\d+)\s+normals=([01])\s+features=(\d+)\s*$")


def write_cloud(path, cloud: PointCloud) -> None:
    n = len(cloud)
    has_normals = cloud.normals is not None
    m = 0 if cloud.features is None else cloud.features.channel_count
    cols = [cloud.positions]
    if has_normals:
        cols.append(cloud.normals)
    if m:
        cols.append(cloud.features.values)
    table = np.hstack(cols) if n else np.zeros((0, 3))
    lines = [f"mccloud v1 n={n} normals={int(has_normals)} features={m}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in table)
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path) -> PointCloud:
    """Read a cloud, dispatching on the file's first line (``ply`` or ``mccloud``)."""
    text = Path(path).read_text()
    if text.startswith("ply"):
        return _parse_ply(text)
    return _parse_mccloud(text)


def _parse_mccloud(text: str) -> PointCloud:
    header = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            m = _HEADER.match(line)
            if m is None:
                raise InvalidParameter(f"line {lineno}: expected 'mccloud v1' header, got {line!r}")
            header = tuple(int(g) for g in m.groups())
            continue
        rows.append(line.split())
    if header is None:
        raise InvalidParameter("missing 'mccloud v1' header")
    n, has_normals, m = header
    width = 3 + 3 * has_normals + m
    if len(rows) != n:
        raise ShapeMismatch(f"header declares {n} points, found {len(rows)}")
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ShapeMismatch(f"point {i}: expected {width} values, got {len(r)}")
    table = np.array(rows, dtype=np.float64).reshape(n, width)
    normals = table[:, 3:6] if has_normals else None
    feats = table[:, 3 + 3 * has_normals:] if m else None
    return PointCloud(table[:, :3], normals, feats)


def _parse_ply(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InvalidParameter("not a PLY file")
    i = 1
    fmt = None
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    skip_after_vertex = []
    current = None
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            current = tok[1]
            in_vertex = current == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
            elif n_vertex is None:
                skip_after_vertex.append((current, int(tok[2])))
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise InvalidParameter("list properties on vertices are not supported")
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    if fmt != "ascii":
        raise InvalidParameter(f"only ASCII PLY is supported, got format {fmt!r}")
    if n_vertex is None:
        raise InvalidParameter("PLY file has no vertex element")
    if skip_after_vertex:
        raise InvalidParameter("PLY elements before 'vertex' are not supported")
    for name in ("x", "y", "z"):
        if name not in props:
            raise InvalidParameter(f"PLY vertex element lacks property {name!r}")
    body = [ln.split() for ln in lines[i:i + n_vertex]]
    if len(body) != n_vertex or any(len(r) < len(props) for r in body):
        raise ShapeMismatch("truncated PLY vertex data")
    table = np.array([r[:len(props)] for r in body], dtype=np.float64).reshape(n_vertex, len(props))
    col = {p: k for k, p in enumerate(props)}
    pos = table[:, [col["x"], col["y"], col["z"]]]
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = table[:, [col["nx"], col["ny"], col["nz"]]]
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        # PLY exporters often write float32 normals; renormalize after widening.
        normals = np.divide(normals, length, out=np.zeros_like(normals), where=length > 0)
    return PointCloud(pos, normals)
