"""Versioned binary checkpoints shared by trainer, evaluator, and service.

Layout: magic + version, a sorted-key JSON header (config, class registry,
array index, metadata), the raw float64 array bytes, and a trailing
sha256 over everything before it. Serialisation is canonical, so
save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .tensor import ParameterSet

MAGIC = b"SSHOT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class RegistryEntry:
    class_id: int
    display_name: str
    origin: str               # "base" | "incremental"
    exemplar_count: int

    def __post_init__(self):
        if self.origin not in ("base", "incremental"):
            raise ValueError(f"unknown origin {self.origin!r}")


class ClassRegistry:
    """Ordered class list; order matches the classifier's weight rows."""

    def __init__(self, entries=()):
        self.entries: tuple[RegistryEntry, ...] = tuple(entries)
        ids = [e.class_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class ids in registry")
        names = [e.display_name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate display names in registry")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(e.class_id for e in self.entries)

    def has_name(self, name: str) -> bool:
        return any(e.display_name == name for e in self.entries)

    def next_id(self) -> int:
        return max((e.class_id for e in self.entries), default=-1) + 1

    def with_entry(self, entry: RegistryEntry) -> "ClassRegistry":
        return ClassRegistry(self.entries + (entry,))

    def to_list(self) -> list[dict]:
        return [{"class_id": e.class_id, "display_name": e.display_name,
                 "origin": e.origin, "exemplar_count": e.exemplar_count}
                for e in self.entries]

    @staticmethod
    def from_list(rows: list[dict]) -> "ClassRegistry":
        return ClassRegistry(RegistryEntry(**row) for row in rows)


@dataclass
class Checkpoint:
    backbone_cfg: BackboneConfig
    params: ParameterSet
    registry: ClassRegistry
    scale: float = 10.0
    gat_rounds: int = 1
    metadata: dict = None

    def __post_init__(self):
        if self.metadata is None:
            self.metadata = {}

    def copy(self) -> "Checkpoint":
        return replace(self, params=self.params.copy(),
                       metadata=json.loads(json.dumps(self.metadata)))


def _serialize(ckpt: Checkpoint) -> bytes:
    arrays = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.params.entries):
        arr = np.ascontiguousarray(ckpt.params.entries[name], dtype=np.float64)
        raw = arr.tobytes()
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "backbone": ckpt.backbone_cfg.to_dict(),
        "scale": ckpt.scale,
        "gat_rounds": ckpt.gat_rounds,
        "registry": ckpt.registry.to_list(),
        "metadata": ckpt.metadata,
        "arrays": arrays,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = (MAGIC + FORMAT_VERSION.to_bytes(2, "little")
            + len(hbytes).to_bytes(8, "little") + hbytes + b"".join(blobs))
    return body + hashlib.sha256(body).digest()


def checkpoint_hash(ckpt: Checkpoint) -> str:
    """Short content hash used in reports and the service health endpoint."""
    return hashlib.sha256(_serialize(ckpt)).hexdigest()[:12]


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write atomically; returns the content hash."""
    data = _serialize(ckpt)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()[:12]


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 2 + 8 + 32:
        raise ValueError(f"checkpoint file too short / truncated: {path}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"checksum mismatch in {path}: file corrupted or truncated")
    if body[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)
    version = int.from_bytes(body[pos:pos + 2], "little")
    if version != FORMAT_VERSION:
        raise ValueError(f"checkpoint format version {version} unsupported "
                         f"(this build reads version {FORMAT_VERSION})")
    pos += 2
    hlen = int.from_bytes(body[pos:pos + 8], "little")
    pos += 8
    header = json.loads(body[pos:pos + hlen].decode("utf-8"))
    blob = body[pos + hlen:]
    entries = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        arr = np.frombuffer(blob, dtype=np.float64, count=count, offset=start).reshape(shape)
        entries[spec["name"]] = arr.copy()
    return Checkpoint(
        backbone_cfg=BackboneConfig.from_dict(header["backbone"]),
        params=ParameterSet(entries),
        registry=ClassRegistry.from_list(header["registry"]),
        scale=header["scale"],
        gat_rounds=header["gat_rounds"],
        metadata=header["metadata"],
    )
