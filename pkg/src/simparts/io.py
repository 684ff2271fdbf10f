"""Plain-text file formats: point clouds, PLY for viewers, model documents,
index lists and key-value metric reports.

Floats are written with ``repr`` so reading and rewriting a file gives the
same bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .model import PARAM_KEYS, PartsModel

MODEL_FORMAT = "simparts-model"
MODEL_VERSION = 1


class Cloud(NamedTuple):
    points: np.ndarray          # (N, 3)
    labels: np.ndarray | None   # (N,) ints or None
    comments: list              # header lines without the leading '#'


def _f(v) -> str:
    return repr(float(v))


def format_cloud(points, labels=None, comments=()) -> str:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [f"#{c}" for c in comments]
    if labels is None:
        lines += [f"{_f(x)} {_f(y)} {_f(z)}" for x, y, z in points]
    else:
        labels = np.asarray(labels)
        if len(labels) != len(points):
            raise ValueError(f"{len(labels)} labels for {len(points)} points")
        lines += [f"{_f(x)} {_f(y)} {_f(z)} {int(l)}" for (x, y, z), l in zip(points, labels)]
    return "\n".join(lines) + "\n" if lines else ""


def parse_cloud(text: str, source: str = "<string>") -> Cloud:
    comments, rows = [], []
    for n, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            comments.append(line[1:])
            continue
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) not in (3, 4):
            raise ValueError(f"{source}:{n}: expected 'x y z [label]', got {line!r}")
        rows.append(fields)
    if rows and len({len(r) for r in rows}) > 1:
        raise ValueError(f"{source}: labels present on some lines only")
    if not rows:
        return Cloud(np.zeros((0, 3)), None, comments)
    try:
        pts = np.array([[float(v) for v in r[:3]] for r in rows])
        labels = np.array([int(r[3]) for r in rows]) if len(rows[0]) == 4 else None
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from None
    return Cloud(pts, labels, comments)


def read_cloud(path) -> Cloud:
    path = Path(path)
    return parse_cloud(path.read_text(), str(path))


def write_cloud(path, points, labels=None, comments=()) -> None:
    Path(path).write_text(format_cloud(points, labels, comments))


def write_ply(path, points, part=None) -> None:
    """ASCII PLY with an optional integer ``part`` vertex property."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    head = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
            "property double x", "property double y", "property double z"]
    if part is not None:
        head.append("property int part")
    head.append("end_header")
    cloud = format_cloud(points, part)
    Path(path).write_text("\n".join(head) + "\n" + cloud)


def write_points(path, points, part=None) -> None:
    """PLY for ``.ply`` paths, the plain cloud format otherwise."""
    if str(path).lower().endswith(".ply"):
        write_ply(path, points, part)
    else:
        write_cloud(path, points, part)


# ---------------------------------------------------------------------------
# model documents


def model_to_dict(model: PartsModel) -> dict:
    d = {"format": MODEL_FORMAT, "version": MODEL_VERSION,
         "M_s": model.M_s, "M_T": model.M_T, "N_p": model.N_p, "tau": float(model.tau)}
    for k in PARAM_KEYS:
        d[k] = getattr(model, k).tolist()
    return d


def model_from_dict(d: dict) -> PartsModel:
    if d.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model document (format={d.get('format')!r})")
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}")
    missing = [k for k in PARAM_KEYS if k not in d]
    if missing:
        raise ValueError(f"model document lacks {missing}")
    return PartsModel(**{k: np.array(d[k], dtype=float) for k in PARAM_KEYS},
                      tau=float(d.get("tau", 1.0)))


def dumps_model(model: PartsModel) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def write_model(path, model: PartsModel) -> None:
    Path(path).write_text(dumps_model(model))


def read_model(path) -> PartsModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return model_from_dict(d)


# ---------------------------------------------------------------------------
# index lists and reports


def write_indices(path, idx) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in idx))


def read_indices(path) -> np.ndarray:
    return np.array([int(s) for s in Path(path).read_text().split()], dtype=int)


def format_report(rows) -> str:
    """``name variant value`` lines; rows are (name, variant, value) triples."""
    return "".join(f"{name} {variant} {_f(value)}\n" for name, variant, value in rows)


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            name, variant, value = line.split()
            out[(name, variant)] = float(value)
    return out
