"""Binary scene container and its manifest sidecar.

Layout (all little-endian): magic ``LSSD``, version u16 (=1), kind u8,
n_sp u8, width u32, height u32, frames u32, scenes u32; then per scene and
frame: controls (n_sp f32), u_x ((W+1)*H f32), u_y (W*(H+1) f32),
rho (W*H f32), flags (W*H u8). The sidecar ``<path>.manifest`` holds UTF-8
key=value lines with per-scene seeds, solver constants and normalization
statistics.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import FlagGrid, MacField2, ScalarField, _require
from .scenes import ControlTrack, SceneFrame, SceneKind, SceneSequence

MAGIC = b"LSSD"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIIII")


@dataclass
class DatasetManifest:
    kind: SceneKind
    n_sp: int
    width: int
    height: int
    frames: int
    scenes: int
    seeds: list[int]
    max_abs_u: float
    max_rho: float
    extra: dict[str, str]

    def __post_init__(self):
        if self.scenes > 0:
            _require(self.max_abs_u > 0 and self.max_rho > 0,
                     "normalization statistics must be strictly positive")


def _frame_bytes(width: int, height: int, n_sp: int) -> int:
    return (n_sp * 4 + (width + 1) * height * 4 + width * (height + 1) * 4
            + width * height * 4 + width * height)


def predicted_size(width: int, height: int, frames: int, scenes: int, n_sp: int) -> int:
    return _HEADER.size + scenes * frames * _frame_bytes(width, height, n_sp)


def write_dataset(path, sequences: list[SceneSequence], extra: dict | None = None) -> DatasetManifest:
    """Persist sequences plus a manifest sidecar; returns the manifest."""
    _require(len(sequences) > 0, "no sequences to write")
    first = sequences[0]
    kind, w, h = first.kind, first.width, first.height
    frames = len(first.frames)
    for seq in sequences:
        _require(seq.kind is kind and seq.width == w and seq.height == h
                 and len(seq.frames) == frames,
                 "sequences must share kind, dims and frame count")

    max_u = 0.0
    max_rho = 0.0
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind.code, kind.n_sp, w, h, frames,
                              len(sequences)))
        for seq in sequences:
            ctrl = np.ascontiguousarray(seq.controls.values, dtype="<f4")
            for k, frame in enumerate(seq.frames):
                fh.write(ctrl[k].tobytes())
                fh.write(np.ascontiguousarray(frame.u.u_x, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(frame.u.u_y, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(frame.rho.data, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(frame.flags.labels, dtype=np.uint8).tobytes())
                max_u = max(max_u, float(np.abs(frame.u.u_x).max()),
                            float(np.abs(frame.u.u_y).max()))
                max_rho = max(max_rho, float(np.abs(frame.rho.data).max()))

    manifest = DatasetManifest(kind, kind.n_sp, w, h, frames, len(sequences),
                               [seq.seed for seq in sequences],
                               max(max_u, 1e-12), max(max_rho, 1e-12),
                               dict(extra or {}))
    write_manifest(manifest_path(path), manifest)
    return manifest


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def write_manifest(path, m: DatasetManifest) -> None:
    lines = [
        f"kind={m.kind.value}",
        f"n_sp={m.n_sp}",
        f"width={m.width}",
        f"height={m.height}",
        f"frames={m.frames}",
        f"scenes={m.scenes}",
        "seeds=" + ",".join(str(s) for s in m.seeds),
        f"max_abs_u={m.max_abs_u!r}",
        f"max_rho={m.max_rho!r}",
    ]
    lines += [f"{k}={v}" for k, v in sorted(m.extra.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    text = Path(path).read_text(encoding="utf-8")
    kv: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if line and "=" in line:
            key, _, value = line.partition("=")
            kv[key] = value
    try:
        known = {"kind", "n_sp", "width", "height", "frames", "scenes", "seeds",
                 "max_abs_u", "max_rho"}
        return DatasetManifest(
            kind=SceneKind(kv["kind"]),
            n_sp=int(kv["n_sp"]),
            width=int(kv["width"]),
            height=int(kv["height"]),
            frames=int(kv["frames"]),
            scenes=int(kv["scenes"]),
            seeds=[int(s) for s in kv["seeds"].split(",") if s],
            max_abs_u=float(kv["max_abs_u"]),
            max_rho=float(kv["max_rho"]),
            extra={k: v for k, v in kv.items() if k not in known},
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from exc


def read_dataset(path) -> list[SceneSequence]:
    """Load sequences; scene seeds are restored from the manifest sidecar."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError("file shorter than header", offset=len(blob))
    magic, version, kind_code, n_sp, w, h, frames, scenes = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    kind = SceneKind.from_code(kind_code)
    if n_sp != kind.n_sp:
        raise FormatError(f"n_sp {n_sp} inconsistent with scene kind", offset=7)
    expected = predicted_size(w, h, frames, scenes, n_sp)
    if len(blob) != expected:
        raise FormatError(
            f"payload length {len(blob)} != header-predicted {expected}",
            offset=min(len(blob), expected))

    seeds = [0] * scenes
    mpath = manifest_path(path)
    if mpath.exists():
        m = read_manifest(mpath)
        if len(m.seeds) == scenes:
            seeds = m.seeds

    out: list[SceneSequence] = []
    off = _HEADER.size
    n_ux, n_uy, n_c = (w + 1) * h, w * (h + 1), w * h
    for s in range(scenes):
        controls = np.zeros((frames, n_sp), dtype=np.float32)
        fr: list[SceneFrame] = []
        for k in range(frames):
            controls[k] = np.frombuffer(blob, "<f4", n_sp, off)
            off += n_sp * 4
            u_x = np.frombuffer(blob, "<f4", n_ux, off).reshape(h, w + 1).copy()
            off += n_ux * 4
            u_y = np.frombuffer(blob, "<f4", n_uy, off).reshape(h + 1, w).copy()
            off += n_uy * 4
            rho = np.frombuffer(blob, "<f4", n_c, off).reshape(h, w).copy()
            off += n_c * 4
            labels = np.frombuffer(blob, np.uint8, n_c, off).reshape(h, w).copy()
            off += n_c
            fr.append(SceneFrame(MacField2(w, h, u_x, u_y), ScalarField(w, h, rho),
                                 FlagGrid(w, h, labels)))
        out.append(SceneSequence(kind, fr, ControlTrack(n_sp, controls), seeds[s]))
    return out
