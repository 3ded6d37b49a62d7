"""Binary container for distilled artifacts and model checkpoints, plus budget audits.

Container layout (all integers little-endian)::

    magic     4 bytes   b"SSDA"
    version   u16
    --- payload region (covered by the trailing CRC) ---
    n_meta    u32
    n_meta x  (u32 key length, UTF-8 key, u32 value length, UTF-8 value)
    n_rec     u32
    n_rec x   (u16 name length, UTF-8 name, u8 dtype code, u8 ndim,
               ndim x u32 shape, u32 CRC-32 of the payload, raw payload)
    --- end of payload region ---
    crc       u32       CRC-32 of the payload region

Metadata keys are written sorted.  Artifact records follow the fixed order
``bx, mean_x, cx, by, mean_y, cy, q<a>.fc1.weight, q<a>.fc1.bias,
q<a>.fc2.weight, q<a>.fc2.bias`` (a = 0..A-1), then ``aux.*`` records sorted
by name.  ``aux.*`` records (e.g. the optimised augmentation coefficient
blocks) are kept for analysis and do not count against the storage budget.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .approx import ApproxNet
from .augment import AugmentationSpec, expand_batch
from .errors import BudgetError, ContractError, CorruptionError
from .parameterization import reconstruct_images, reconstruct_targets

MAGIC = b"SSDA"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CORE_FIELDS = ("bx", "mean_x", "cx", "by", "mean_y", "cy")
NET_FIELDS = ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")


# ---------------------------------------------------------------------------
# raw container
# ---------------------------------------------------------------------------


def write_container(metadata: dict[str, str], records: list[tuple[str, np.ndarray]]) -> bytes:
    """Encode metadata and named arrays (float32 or float64) in the given order."""
    body = bytearray()
    body += struct.pack("<I", len(metadata))
    for key in sorted(metadata):
        k, v = key.encode("utf-8"), str(metadata[key]).encode("utf-8")
        body += struct.pack("<I", len(k)) + k + struct.pack("<I", len(v)) + v
    body += struct.pack("<I", len(records))
    for name, arr in records:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise ContractError(f"record {name!r}: unsupported dtype {arr.dtype}")
        payload = np.ascontiguousarray(arr, dtype=dt).tobytes()
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<BB", _CODES[dt], arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += struct.pack("<I", zlib.crc32(payload))
        body += payload
    return MAGIC + struct.pack("<H", VERSION) + bytes(body) + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos
        self.where = "header"

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"container truncated while reading {self.where}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(buf: bytes) -> tuple[dict[str, str], list[tuple[str, np.ndarray]]]:
    """Decode a container; raises :class:`CorruptionError` on any inconsistency."""
    buf = bytes(buf)
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise CorruptionError("bad magic: not an artifact container")
    (version,) = struct.unpack("<H", buf[4:6])
    if version != VERSION:
        raise CorruptionError(f"unsupported container version {version}")
    r = _Reader(buf, 6)
    r.where = "metadata"
    (n_meta,) = r.unpack("<I")
    meta = {}
    for i in range(n_meta):
        r.where = f"metadata entry {i}"
        (kl,) = r.unpack("<I")
        key = r.take(kl).decode("utf-8", errors="replace")
        r.where = f"metadata value {key!r}"
        (vl,) = r.unpack("<I")
        meta[key] = r.take(vl).decode("utf-8", errors="replace")
    r.where = "record count"
    (n_rec,) = r.unpack("<I")
    records = []
    for i in range(n_rec):
        r.where = f"record {i} name"
        (nl,) = r.unpack("<H")
        name = r.take(nl).decode("utf-8", errors="replace")
        r.where = f"field {name!r}"
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CorruptionError(f"field {name!r}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        (crc,) = r.unpack("<I")
        payload = r.take(int(np.prod(shape, dtype=np.int64)) * _DTYPES[code].itemsize)
        if zlib.crc32(payload) != crc:
            raise CorruptionError(f"CRC mismatch in field {name!r}")
        records.append((name, np.frombuffer(payload, dtype=_DTYPES[code]).reshape(shape).copy()))
    r.where = "trailing checksum"
    end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(buf):
        raise CorruptionError(f"{len(buf) - r.pos} unexpected bytes after the checksum")
    if zlib.crc32(buf[6:end]) != crc:
        raise CorruptionError("CRC mismatch in container header/metadata")
    return meta, records


# ---------------------------------------------------------------------------
# distilled artifact
# ---------------------------------------------------------------------------


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).astype(np.float32)


@dataclass
class DistilledArtifact:
    """Everything needed to regenerate the distilled image/target pairs.

    Arrays are held as float32, the storage currency.
    """

    image_shape: tuple[int, int, int]
    scale: int
    bx: np.ndarray
    mean_x: np.ndarray
    cx: np.ndarray
    by: np.ndarray
    mean_y: np.ndarray
    cy: np.ndarray
    spec: AugmentationSpec
    nets: list[dict[str, np.ndarray]] = field(default_factory=list)
    hidden: int = 0
    metadata: dict[str, str] = field(default_factory=dict)
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name in CORE_FIELDS:
            setattr(self, name, _f32(getattr(self, name)))
        self.nets = [{k: _f32(net[k]) for k in NET_FIELDS} for net in self.nets]
        self.aux = {k: _f32(v) for k, v in self.aux.items()}
        self.image_shape = tuple(int(v) for v in self.image_shape)

    @property
    def m(self) -> int:
        return self.cx.shape[0]

    @property
    def A(self) -> int:
        return len(self.spec)

    def records(self) -> list[tuple[str, np.ndarray]]:
        out = [(name, getattr(self, name)) for name in CORE_FIELDS]
        for a, net in enumerate(self.nets):
            out.extend((f"q{a}.{k}", net[k]) for k in NET_FIELDS)
        out.extend((f"aux.{k}", self.aux[k]) for k in sorted(self.aux))
        return out

    def float_count(self) -> int:
        return sum(int(arr.size) for name, arr in self.records() if not name.startswith("aux."))

    def header(self) -> dict[str, str]:
        meta = dict(self.metadata)
        meta.update({
            "image_shape": ",".join(map(str, self.image_shape)),
            "scale": str(self.scale),
            "augmentations": ";".join(self.spec.tags),
            "hidden": str(self.hidden),
        })
        return meta

    def approx_nets(self) -> list[ApproxNet]:
        nets = []
        for w in self.nets:
            net = ApproxNet(w["fc1.weight"].shape[0], w["fc1.weight"].shape[1])
            net.load_state_dict({k: w[k].astype(np.float64) for k in NET_FIELDS})
            nets.append(net)
        return nets

    def images(self) -> np.ndarray:
        f = lambda a: a.astype(np.float64)
        return reconstruct_images(f(self.cx), f(self.bx), f(self.mean_x), self.scale,
                                  self.image_shape).data

    def augmented_images(self) -> np.ndarray:
        return expand_batch(self.images(), self.spec).data

    def aug_blocks(self) -> list[np.ndarray] | None:
        keys = [f"cay.{a}" for a in range(self.A)]
        if not all(k in self.aux for k in keys):
            return None
        return [self.aux[k].astype(np.float64) for k in keys]

    def targets(self, variant: str = "approx") -> np.ndarray:
        """Targets for all augmented rows under a shift model (``approx`` by default)."""
        from .approx import ShiftModel, bias_model, approx_model, ideal_model, predict_targets

        cy, by, mean_y = (a.astype(np.float64) for a in (self.cy, self.by, self.mean_y))
        if self.A == 0:
            return reconstruct_targets(cy, by, mean_y).data
        blocks = self.aug_blocks()
        if variant == "approx":
            if len(self.nets) != self.A:
                raise ContractError(f"artifact holds {len(self.nets)} approximation nets for A={self.A}")
            model = approx_model(self.approx_nets())
        elif variant == "same":
            model = ShiftModel("same", A=self.A)
        elif variant in ("bias", "ideal"):
            if blocks is None:
                raise ContractError(f"shift model {variant!r} needs the stored augmentation blocks")
            model = bias_model(cy, blocks) if variant == "bias" else ideal_model(blocks)
        else:
            raise ContractError(f"unknown shift variant {variant!r}")
        return predict_targets(model, cy, by, mean_y)

    def pairs(self, variant: str = "approx") -> tuple[np.ndarray, np.ndarray]:
        return self.augmented_images(), self.targets(variant)


def artifact_from_params(params, nets=(), hidden: int = 0, metadata=None,
                         keep_blocks: bool = True) -> DistilledArtifact:
    """Snapshot a :class:`~ssdistill.parameterization.BasisParams` (float32-rounded)."""
    aux = {}
    if keep_blocks:
        aux = {f"cay.{a}": b.data for a, b in enumerate(params.cay)}
    return DistilledArtifact(
        image_shape=params.image_shape, scale=params.scale,
        bx=params.bx.data, mean_x=params.mean_x, cx=params.cx.data,
        by=params.by.data, mean_y=params.mean_y, cy=params.cy.data,
        spec=params.spec, nets=[net.state_dict() for net in nets], hidden=hidden,
        metadata={k: str(v) for k, v in (metadata or {}).items()}, aux=aux)


def serialize(artifact: DistilledArtifact) -> bytes:
    if artifact.A and artifact.nets and len(artifact.nets) != artifact.A:
        raise ContractError(f"{len(artifact.nets)} approximation nets for A={artifact.A}")
    return write_container(artifact.header(), artifact.records())


def deserialize(buf: bytes) -> DistilledArtifact:
    meta, records = read_container(buf)
    if meta.get("kind", "artifact") != "artifact":
        raise CorruptionError(f"container holds a {meta.get('kind')!r}, not a distilled artifact")
    rec = dict(records)
    for name in CORE_FIELDS:
        if name not in rec:
            raise CorruptionError(f"artifact is missing field {name!r}")
    try:
        image_shape = tuple(int(v) for v in meta["image_shape"].split(","))
        scale = int(meta["scale"])
        hidden = int(meta["hidden"])
        tags = [t for t in meta["augmentations"].split(";") if t]
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"artifact metadata incomplete: {exc}") from exc
    nets = []
    a = 0
    while f"q{a}.fc1.weight" in rec:
        nets.append({k: rec[f"q{a}.{k}"] for k in NET_FIELDS})
        a += 1
    aux = {k[4:]: v for k, v in rec.items() if k.startswith("aux.")}
    extra = {k: v for k, v in meta.items()
             if k not in ("image_shape", "scale", "hidden", "augmentations")}
    return DistilledArtifact(image_shape, scale, rec["bx"], rec["mean_x"], rec["cx"], rec["by"],
                             rec["mean_y"], rec["cy"], AugmentationSpec.from_tags(tags), nets,
                             hidden, extra, aux)


def save_artifact(artifact: DistilledArtifact, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(artifact))
    return path


def load_artifact(path) -> DistilledArtifact:
    return deserialize(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# budget
# ---------------------------------------------------------------------------


@dataclass
class BudgetLedger:
    N: int
    d_x: int
    items: dict[str, int]
    total: int
    slack: int

    @property
    def budget(self) -> int:
        return self.N * self.d_x

    def lines(self) -> list[str]:
        out = [f"{name}\t{count}" for name, count in self.items.items()]
        out += [f"total\t{self.total}", f"budget\t{self.budget}", f"slack\t{self.slack}"]
        return out


def budget_ledger(artifact: DistilledArtifact, N: int, d_x: int) -> BudgetLedger:
    items = {name: int(arr.size) for name, arr in artifact.records() if not name.startswith("aux.")}
    total = sum(items.values())
    return BudgetLedger(N, d_x, items, total, N * d_x - total)


def audit_budget(artifact: DistilledArtifact, N: int, d_x: int) -> BudgetLedger:
    """Itemised float count; raises :class:`BudgetError` when it exceeds ``N * d_x``."""
    ledger = budget_ledger(artifact, N, d_x)
    if ledger.slack < 0:
        raise BudgetError(f"artifact stores {ledger.total} floats, budget {N}x{d_x}={N * d_x} "
                          f"(over by {-ledger.slack})")
    return ledger


def recount_container(buf: bytes) -> int:
    """Budgeted float count obtained by walking the raw container bytes."""
    pos = 6
    (n_meta,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    for _ in range(n_meta):
        for _ in range(2):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4 + n
    (n_rec,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    total = 0
    for _ in range(n_rec):
        (nl,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2 : pos + 2 + nl]
        pos += 2 + nl
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim + 4
        count = 1
        for s in shape:
            count *= s
        pos += count * _DTYPES[code].itemsize
        if not name.startswith(b"aux."):
            total += count
    return total


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------


def save_module(module, path, kind: str, metadata=None) -> Path:
    """Checkpoint a module's parameters and buffers (float64) with a model-kind tag."""
    meta = {k: str(v) for k, v in (metadata or {}).items()}
    meta["kind"] = kind
    state = module.state_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_container(meta, [(k, state[k]) for k in sorted(state)]))
    return path


def load_module_state(path, kind: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    meta, records = read_container(Path(path).read_bytes())
    if meta.get("kind") != kind:
        raise CorruptionError(f"{path}: expected a {kind!r} checkpoint, found {meta.get('kind')!r}")
    return meta, dict(records)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
