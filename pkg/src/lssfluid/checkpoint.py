"""Named-tensor checkpoint container.

Layout (little-endian): magic ``LSSC``, version u16 (=1), metadata block
(u32 length + UTF-8 JSON), record count u32; per record: name (u16 length +
UTF-8), rank u8, dims u32 x rank, payload float32. The metadata JSON holds
the architecture config, latent layout, normalization statistics and
training provenance (seed, step count).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .nets import LatentLayout, NetConfig, Networks, NormStats, build_networks

MAGIC = b"LSSC"
VERSION = 1


@dataclass
class Checkpoint:
    cfg: NetConfig
    params: dict[str, np.ndarray]  # float32 payloads keyed by parameter name
    stats: NormStats
    seed: int
    step_count: int

    @property
    def layout(self) -> LatentLayout:
        return self.cfg.layout


def checkpoint_from_networks(nets: Networks, seed: int, step_count: int) -> Checkpoint:
    params = {name: p.detach().cpu().to(torch.float32).numpy().copy()
              for name, p in nets.named_parameters()}
    return Checkpoint(nets.cfg, params, nets.stats, seed, step_count)


def networks_from_checkpoint(ckpt: Checkpoint, dtype=torch.float32) -> Networks:
    nets = build_networks(ckpt.cfg, dtype)
    nets.stats = ckpt.stats
    expected = dict(nets.named_parameters())
    for name in expected:
        if name not in ckpt.params:
            raise FormatError(f"checkpoint is missing parameter record '{name}'")
    with torch.no_grad():
        for name, payload in ckpt.params.items():
            if name not in expected:
                raise FormatError(f"checkpoint has unknown parameter record '{name}'")
            p = expected[name]
            if tuple(p.shape) != payload.shape:
                raise FormatError(
                    f"parameter '{name}' shape {payload.shape} != expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(payload).to(dtype))
    return nets.eval_mode()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "config": dataclasses.asdict(ckpt.cfg),
        "stats": dataclasses.asdict(ckpt.stats),
        "seed": ckpt.seed,
        "step_count": ckpt.step_count,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(struct.pack("<4sH", MAGIC, VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(ckpt.params)))
        for name in sorted(ckpt.params):
            payload = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", payload.ndim))
            fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
            fh.write(payload.tobytes())


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    off = 0

    def need(n: int, what: str):
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=off)
        view = blob[off:off + n]
        off += n
        return view

    magic, version = struct.unpack("<4sH", need(6, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    (meta_len,) = struct.unpack("<I", need(4, "metadata length"))
    try:
        meta = json.loads(need(meta_len, "metadata").decode("utf-8"))
        cfg = NetConfig(**meta["config"])
        stats = NormStats(**meta["stats"])
        seed = int(meta["seed"])
        step_count = int(meta["step_count"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint metadata: {exc}", offset=10) from exc

    (count,) = struct.unpack("<I", need(4, "record count"))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(2, "record name length"))
        name = need(name_len, "record name").decode("utf-8")
        (rank,) = struct.unpack("<B", need(1, f"rank of '{name}'"))
        dims = struct.unpack(f"<{rank}I", need(4 * rank, f"dims of '{name}'"))
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = np.frombuffer(need(4 * n_items, f"payload of '{name}'"), "<f4")
        params[name] = payload.reshape(dims).copy()
    if off != len(blob):
        raise FormatError("trailing bytes after last record", offset=off)
    return Checkpoint(cfg, params, stats, seed, step_count)
