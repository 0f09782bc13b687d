"""On-disk formats: detection/trajectory/sample JSONL, binary checkpoints, CSV reports.

Floats are written with Python's shortest round-trip ``repr``, so every file
parses back to bit-identical values. All writers go through a temp file plus
``os.replace`` so an interrupted write never leaves a partial output.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .dataset import ForecastSample
from .forecaster import ForecasterParams
from .geometry import Box3D, Trajectory
from .simulator import DetectionFrame

CHECKPOINT_MAGIC = b"TFGCKPT1"


class FormatError(ValueError):
    """A file failed to parse; the message names file, line and field."""


@contextlib.contextmanager
def atomic_open(path, mode: str = "w", **kwargs):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _f(x) -> float:
    return float(x)


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _write_jsonl(path, rows: Iterable[dict]):
    with atomic_open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(_dumps(row))
            fh.write("\n")


def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def _field(row: dict, key: str, path, lineno: int):
    try:
        return row[key]
    except (KeyError, TypeError):
        raise FormatError(f"{path}:{lineno}: missing field {key!r}") from None


# detections.jsonl

def box_to_dict(b: Box3D) -> dict:
    return {"cx": _f(b.cx), "cy": _f(b.cy), "cz": _f(b.cz), "l": _f(b.length), "w": _f(b.width),
            "h": _f(b.height), "yaw": _f(b.yaw), "score": _f(b.score), "class": int(b.class_id)}


def write_detections(path, frames: Sequence[DetectionFrame]):
    _write_jsonl(path, ({"scene_id": f.scene_id, "t": _f(f.t), "boxes": [box_to_dict(b) for b in f.boxes]}
                        for f in frames))


def read_detections(path) -> list[DetectionFrame]:
    frames = []
    for lineno, row in _read_jsonl(path):
        t = _field(row, "t", path, lineno)
        boxes = []
        for k, b in enumerate(_field(row, "boxes", path, lineno)):
            try:
                boxes.append(Box3D(b["cx"], b["cy"], b["cz"], b["l"], b["w"], b["h"], b["yaw"], b["score"],
                                   b["class"], t))
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: box {k} missing field {exc.args[0]!r}") from None
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: box {k}: {exc}") from None
        frames.append(DetectionFrame(_field(row, "scene_id", path, lineno), t, boxes))
    return frames


# trajectories.jsonl

def trajectory_to_dict(tr: Trajectory) -> dict:
    states = []
    for i in range(len(tr)):
        cx, cy, cz, yaw, l, w, h = map(_f, tr.data[i])
        st = {"t": _f(tr.t[i]), "cx": cx, "cy": cy, "cz": cz, "l": l, "w": w, "h": h, "yaw": yaw}
        if tr.score is not None:
            st["score"] = _f(tr.score[i])
        states.append(st)
    return {"scene_id": tr.scene_id, "track_id": tr.track_id, "class": int(tr.class_id),
            "provenance": tr.provenance, "states": states}


def write_trajectories(path, trajs: Sequence[Trajectory]):
    _write_jsonl(path, (trajectory_to_dict(t) for t in trajs))


def read_trajectories(path) -> list[Trajectory]:
    out = []
    for lineno, row in _read_jsonl(path):
        states = _field(row, "states", path, lineno)
        try:
            t = [s["t"] for s in states]
            data = [[s["cx"], s["cy"], s["cz"], s["yaw"], s["l"], s["w"], s["h"]] for s in states]
            score = [s["score"] for s in states] if states and "score" in states[0] else None
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: state missing field {exc.args[0]!r}") from None
        try:
            out.append(Trajectory(_field(row, "scene_id", path, lineno), _field(row, "track_id", path, lineno),
                                  t, data, _field(row, "class", path, lineno),
                                  _field(row, "provenance", path, lineno), score))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


# samples.jsonl

def sample_to_dict(s: ForecastSample) -> dict:
    return {"sample_id": s.sample_id, "scene_id": s.scene_id, "track_id": s.track_id,
            "anchor_t": _f(s.anchor_t), "past": s.past.tolist(), "future": s.future.tolist(),
            "origin": s.origin.tolist(), "heading": _f(s.heading), "provenance": s.provenance}


def write_samples(path, samples: Sequence[ForecastSample]):
    _write_jsonl(path, (sample_to_dict(s) for s in samples))


def read_samples(path) -> list[ForecastSample]:
    out = []
    for lineno, row in _read_jsonl(path):
        get = lambda k: _field(row, k, path, lineno)  # noqa: E731
        out.append(ForecastSample(get("sample_id"), get("scene_id"), get("track_id"), get("anchor_t"),
                                  np.array(get("past"), dtype=float).reshape(-1, 2),
                                  np.array(get("future"), dtype=float).reshape(-1, 2),
                                  np.array(get("origin"), dtype=float), get("heading"), get("provenance")))
    return out


# checkpoints

def checkpoint_bytes(params: ForecasterParams, metadata: dict | None = None) -> bytes:
    header = {"H": params.hidden, "K": params.n_modes, "L": params.past_len, "M": params.future_len,
              "anchors": params.anchors.tolist()}
    header.update(metadata or {})
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    theta = params.flat().astype("<f8")
    return CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + theta.tobytes()


def write_checkpoint(path, params: ForecasterParams, metadata: dict | None = None):
    with atomic_open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, metadata))


def read_checkpoint(path) -> tuple[ForecasterParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
        H, K, L, M = header["H"], header["K"], header["L"], header["M"]
        anchors = np.array(header["anchors"], dtype=float).reshape(K, 2)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from None
    theta = np.frombuffer(raw[12 + n:], dtype="<f8").astype(float)
    D, O = 2 * L + 3, K * (2 * M + 1)
    template = ForecasterParams(np.zeros((H, D)), np.zeros(H), np.zeros((O, H)), np.zeros(O), anchors)
    if len(theta) != template.size:
        raise FormatError(f"{path}: expected {template.size} parameters, found {len(theta)}")
    return template.with_flat(theta), header


# CSV

def write_csv(path, rows: Sequence[dict], columns: Sequence[str]):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                         for k, v in row.items()})
    with atomic_open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj):
    with atomic_open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
