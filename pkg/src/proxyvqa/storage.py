"""On-disk artifacts: clip directories, the named-tensor container and CSV tables.

Clip directory layout::

    manifest.txt     one line per clip: content_id level width height frames file
    c0003_l2.f32     raw little-endian float32 luma planes, frame-major

Every CSV starts with a ``#`` provenance comment (config hash and seed).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from proxyvqa.errors import ValidationError
from proxyvqa.synth import Clip

MANIFEST_NAME = "manifest.txt"
MANIFEST_HEADER = "content_id level width height frames file"
CONTAINER_MAGIC = b"PVQT"
CONTAINER_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


# --- provenance ------------------------------------------------------------

def config_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance_line(stage: str, settings: dict, seed) -> str:
    return f"# proxyvqa {stage} config_sha256={config_hash(settings)} seed={seed}"


# --- clips and manifests -----------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    content_id: int
    level: int
    width: int
    height: int
    frames: int
    file: str

    @property
    def key(self):
        return (self.content_id, self.level)


@dataclass
class Manifest:
    root: Path
    entries: list
    meta: dict

    def references(self) -> dict:
        return {e.content_id: e for e in self.entries if e.level == 0}

    def distorted(self) -> list:
        return [e for e in self.entries if e.level > 0]

    def load(self, entry: ManifestEntry) -> Clip:
        return load_clip(self.root, entry)


def clip_file_name(content_id: int, level: int) -> str:
    return f"c{content_id:04d}_l{level}.f32"


def write_clips(out_dir, clips: Sequence[Clip], meta: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# proxyvqa manifest v1"]
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append(MANIFEST_HEADER)
    for c in clips:
        name = clip_file_name(c.content_id, c.distortion_level)
        c.frames.astype("<f4").tofile(out / name)
        lines.append(f"{c.content_id} {c.distortion_level} {c.width} {c.height} {c.n_frames} {name}")
    path = out / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    meta, entries, seen = {}, [], set()
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        if line == MANIFEST_HEADER:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValidationError(f"{path}:{ln}: expected 6 fields, got {len(parts)}")
        try:
            e = ManifestEntry(*(int(p) for p in parts[:5]), parts[5])
        except ValueError as exc:
            raise ValidationError(f"{path}:{ln}: {exc}") from None
        if e.key in seen:
            raise ValidationError(f"{path}:{ln}: duplicate clip {e.key}")
        seen.add(e.key)
        f = path.parent / e.file
        if not f.is_file():
            raise ValidationError(f"{path}:{ln}: missing clip file {e.file}")
        if f.stat().st_size != 4 * e.width * e.height * e.frames:
            raise ValidationError(f"{path}:{ln}: {e.file} has wrong size")
        entries.append(e)
    if not entries:
        raise ValidationError(f"manifest {path} lists no clips")
    refs = {e.content_id for e in entries if e.level == 0}
    for e in entries:
        if e.level > 0 and e.content_id not in refs:
            raise ValidationError(f"clip {e.key} has no reference (level 0) in the manifest")
    return Manifest(path.parent, entries, meta)


def load_clip(root, entry: ManifestEntry) -> Clip:
    data = np.fromfile(Path(root) / entry.file, dtype="<f4")
    return Clip(entry.content_id, entry.level, data.reshape(entry.frames, entry.height, entry.width))


# --- named-tensor container --------------------------------------------------

def write_container(path, tensors: dict, meta: Optional[dict] = None, dtype: str = "f4") -> None:
    code = 0 if dtype == "f4" else 1
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<III", CONTAINER_VERSION, len(meta_blob), len(tensors)))
    buf.write(meta_blob)
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=_DTYPES[code])
        nb = name.encode()
        buf.write(struct.pack("<HBB", len(nb), code, arr.ndim))
        buf.write(nb)
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())


def read_container(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"container not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != CONTAINER_MAGIC:
        raise ValidationError(f"{path} is not a tensor container")
    try:
        version, meta_len, count = struct.unpack_from("<III", raw, 4)
        if version != CONTAINER_VERSION:
            raise ValidationError(f"{path}: unsupported container version {version}")
        pos = 16
        meta = json.loads(raw[pos:pos + meta_len].decode())
        pos += meta_len
        tensors = {}
        for _ in range(count):
            nlen, code, ndim = struct.unpack_from("<HBB", raw, pos)
            pos += 4
            name = raw[pos:pos + nlen].decode()
            pos += nlen
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(raw, dtype=dt, count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += size * dt.itemsize
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: corrupt tensor container ({exc})") from None
    if pos != len(raw):
        raise ValidationError(f"{path}: {len(raw) - pos} trailing bytes in tensor container")
    return tensors, meta


# --- CSV tables ---------------------------------------------------------------

def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, fieldnames: Sequence[str], rows: Iterable, provenance: Optional[str] = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(provenance + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(k) for k in fieldnames]
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"CSV not found: {path}")
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _num(v: str) -> float:
    return float(v) if v != "" else float("nan")


@dataclass
class FeatureTable:
    clip_ids: np.ndarray
    content_ids: np.ndarray
    levels: np.ndarray
    values: np.ndarray  # (n, D)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def write_features(path, table: FeatureTable, provenance: Optional[str] = None) -> None:
    cols = ["clip_id", "content_id", "level"] + [f"f{i}" for i in range(table.dim)]
    rows = ([int(c), int(k), int(lv)] + list(v) for c, k, lv, v in
            zip(table.clip_ids, table.content_ids, table.levels, table.values))
    write_csv(path, cols, rows, provenance)


def read_features(path) -> FeatureTable:
    rows = read_csv(path)
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    fcols = [k for k in rows[0] if k.startswith("f") and k[1:].isdigit()]
    try:
        vals = np.array([[float(r[c]) for c in fcols] for r in rows])
        return FeatureTable(np.array([int(r["clip_id"]) for r in rows]),
                            np.array([int(r["content_id"]) for r in rows]),
                            np.array([int(r["level"]) for r in rows]), vals)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed feature table ({exc})") from None


def write_labels(path, clip_ids, content_ids, labels, provenance: Optional[str] = None) -> None:
    write_csv(path, ["clip_id", "content_id", "label"], zip(clip_ids, content_ids, labels), provenance)


def read_labels(path) -> dict:
    rows = read_csv(path)
    try:
        return {int(r["clip_id"]): float(r["label"]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed label table ({exc})") from None


def align_labels(table: FeatureTable, labels: dict) -> np.ndarray:
    missing = [int(c) for c in table.clip_ids if int(c) not in labels]
    if missing:
        raise ValidationError(f"no label for clip ids {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return np.array([labels[int(c)] for c in table.clip_ids])


def clip_id(content_id: int, level: int) -> int:
    """Stable integer id of a clip."""
    return content_id * 10 + level
