"""On-disk formats: record bundles, beat archives, weights, probability series.

Formats
-------
``.ecgb``  UTF-8 ``key = value`` header, one key per line. Samples are either
           inline (``payload = inline`` plus a ``samples`` line of decimals)
           or in a little-endian float32 sidecar next to the header with the
           ``.f32`` suffix (``payload = binary``).
``.beats`` UTF-8 ``key = value`` header closed by an ``end_header`` line,
           followed by ``n_beats * L`` little-endian float32 values.
``.n1dw``  ``N1DW`` magic, uint32 version, uint32 manifest byte length, JSON
           manifest (config and tensor names/shapes/counts), float32 payloads
           in manifest order, trailing uint32 CRC-32 of all preceding bytes.
``.probs`` ``# key=value`` header lines, then CSV rows
           ``beat_index,rpeak_sample,probability``.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from afbeat.net1d.config import Net1dConfig

BEAT_TYPES = ("N", "A", "V", "other")
WEIGHTS_MAGIC = b"N1DW"
WEIGHTS_VERSION = 1


class FormatError(ValueError):
    """A file does not conform to its schema or violates a type invariant."""


def _normalize_beat_type(code: str) -> str:
    return code if code in ("N", "A", "V") else "other"


@dataclass
class EcgRecordBundle:
    """One annotated single-lead recording."""

    record_id: str
    fs: int
    samples: np.ndarray
    rpeaks: np.ndarray
    beat_types: list[str]
    af_episodes: list[tuple[int, int]]
    patient_label: int
    segment_count: int = 1
    segment_boundaries: list[tuple[int, int]] | None = None
    patient_id: str | None = None

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32).reshape(-1)
        self.rpeaks = np.asarray(self.rpeaks, dtype=np.int64).reshape(-1)
        self.beat_types = [_normalize_beat_type(str(c)) for c in self.beat_types]
        self.af_episodes = [(int(a), int(b)) for a, b in self.af_episodes]
        if self.segment_boundaries is not None:
            self.segment_boundaries = [(int(a), int(b)) for a, b in self.segment_boundaries]
        self.validate()

    @property
    def patient(self) -> str:
        return self.patient_id or self.record_id

    def validate(self) -> None:
        n = len(self.samples)
        if self.fs <= 0:
            raise FormatError("fs must be positive")
        if len(self.rpeaks) != len(self.beat_types):
            raise FormatError("length(rpeaks) must equal length(beat_types)")
        if len(self.rpeaks) and (self.rpeaks.min() < 0 or self.rpeaks.max() >= n):
            raise FormatError("rpeak index outside [0, n_samples)")
        if np.any(np.diff(self.rpeaks) <= 0):
            raise FormatError("rpeaks not strictly increasing")
        for a, b in self.af_episodes:
            if not 0 <= a < b <= n:
                raise FormatError(f"af_episode [{a}, {b}) outside [0, n_samples) or empty")
        eps = sorted(self.af_episodes)
        for (_, b0), (a1, _) in zip(eps, eps[1:]):
            if a1 < b0:
                raise FormatError("af_episodes overlap")
        if self.patient_label not in (0, 1):
            raise FormatError("patient_label must be 0 or 1")
        if self.segment_count < 1:
            raise FormatError("segment_count must be >= 1")
        if self.segment_boundaries is not None:
            pos = 0
            for a, b in self.segment_boundaries:
                if a != pos or b <= a:
                    raise FormatError("segment_boundaries must partition the samples in order")
                pos = b
            if pos != n:
                raise FormatError("segment_boundaries must cover all samples")
            if len(self.segment_boundaries) != self.segment_count:
                raise FormatError("segment_count must equal the number of segment_boundaries")

    def equals(self, other: "EcgRecordBundle") -> bool:
        return (
            self.record_id == other.record_id
            and self.fs == other.fs
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.rpeaks, other.rpeaks)
            and self.beat_types == other.beat_types
            and self.af_episodes == other.af_episodes
            and self.patient_label == other.patient_label
            and self.segment_count == other.segment_count
            and self.segment_boundaries == other.segment_boundaries
            and self.patient_id == other.patient_id
        )


@dataclass
class Beat:
    """A fixed-length window centred on one R-peak."""

    samples: np.ndarray
    rpeak_index: int
    ordinal: int
    beat_type: str
    left: int
    right: int


@dataclass
class BeatArchive:
    record_id: str
    L: int
    beats: list[Beat]
    labels: np.ndarray
    patient_id: str | None = None
    fs: int = 200

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(self.beats):
            raise FormatError("labels length must equal beats length")
        for b in self.beats:
            if len(b.samples) != self.L:
                raise FormatError(f"beat at ordinal {b.ordinal} does not have L={self.L} samples")

    @property
    def patient(self) -> str:
        return self.patient_id or self.record_id

    def matrix(self) -> np.ndarray:
        """Beats stacked as ``(n_beats, L)`` float32."""
        if not self.beats:
            return np.zeros((0, self.L), dtype=np.float32)
        return np.stack([np.asarray(b.samples, dtype=np.float32) for b in self.beats])


@dataclass
class ModelWeights:
    config: "Net1dConfig"
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = WEIGHTS_VERSION

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.format_version)

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(
            self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.format_version
        )


@dataclass
class RiskSeries:
    """Per-beat AF probabilities for one recording, aligned to beat provenance."""

    record_id: str
    probabilities: np.ndarray
    ordinals: np.ndarray
    rpeaks: np.ndarray
    model_checksum: str = ""
    label: int | None = None

    def __post_init__(self) -> None:
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64).reshape(-1)
        self.ordinals = np.asarray(self.ordinals, dtype=np.int64).reshape(-1)
        self.rpeaks = np.asarray(self.rpeaks, dtype=np.int64).reshape(-1)
        k = len(self.probabilities)
        if len(self.ordinals) != k or len(self.rpeaks) != k:
            raise FormatError("probabilities and provenance must have equal length")
        if k and (np.any(~np.isfinite(self.probabilities)) or self.probabilities.min() < 0
                  or self.probabilities.max() > 1):
            raise FormatError("probabilities must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.probabilities)


# --------------------------------------------------------------------------
# key = value headers

def _parse_header_lines(lines, source: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{source}: malformed header line {line[:40]!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise FormatError(f"{source}: duplicate field {key!r}")
        out[key] = value.strip()
    return out


def _require(h: dict[str, str], key: str, source: str) -> str:
    if key not in h:
        raise FormatError(f"{source}: missing field {key!r}")
    return h[key]


def _int_field(h, key, source, default=None) -> int:
    if key not in h and default is not None:
        return default
    v = _require(h, key, source)
    try:
        return int(v)
    except ValueError:
        raise FormatError(f"{source}: field {key!r} is not an integer: {v[:40]!r}") from None


def _int_list(h, key, source) -> list[int]:
    v = h.get(key, "")
    try:
        return [int(t) for t in v.split()]
    except ValueError:
        raise FormatError(f"{source}: field {key!r} must be whitespace-separated integers") from None


def _interval_list(v: str, key: str, source: str) -> list[tuple[int, int]]:
    out = []
    for tok in v.split():
        parts = tok.split(":")
        if len(parts) != 2:
            raise FormatError(f"{source}: field {key!r} expects start:end intervals")
        try:
            out.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise FormatError(f"{source}: field {key!r} expects integer intervals") from None
    return out


def _fmt_intervals(iv) -> str:
    return " ".join(f"{a}:{b}" for a, b in iv)


_BUNDLE_KEYS = {
    "format", "record_id", "fs", "n_samples", "n_rpeaks", "payload", "rpeaks", "beat_types",
    "af_episodes", "patient_label", "segment_count", "segment_boundaries", "patient_id", "samples",
}


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".f32")


def save_record_bundle(path: str | Path, bundle: EcgRecordBundle, payload: str = "binary") -> None:
    """Write ``bundle`` as ``.ecgb`` (plus an ``.f32`` sidecar when binary)."""
    if payload not in ("binary", "inline"):
        raise ValueError("payload must be 'binary' or 'inline'")
    path = Path(path)
    lines = [
        "format = ecgb 1",
        f"record_id = {bundle.record_id}",
        f"fs = {bundle.fs}",
        f"n_samples = {len(bundle.samples)}",
        f"n_rpeaks = {len(bundle.rpeaks)}",
        f"payload = {payload}",
        f"patient_label = {bundle.patient_label}",
        f"segment_count = {bundle.segment_count}",
        "rpeaks = " + " ".join(str(int(r)) for r in bundle.rpeaks),
        "beat_types = " + " ".join(bundle.beat_types),
        "af_episodes = " + _fmt_intervals(bundle.af_episodes),
    ]
    if bundle.patient_id is not None:
        lines.append(f"patient_id = {bundle.patient_id}")
    if bundle.segment_boundaries is not None:
        lines.append("segment_boundaries = " + _fmt_intervals(bundle.segment_boundaries))
    if payload == "inline":
        lines.append("samples = " + " ".join(repr(float(x)) for x in bundle.samples))
    else:
        bundle.samples.astype("<f4").tofile(sidecar_path(path))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_record_bundle(path: str | Path) -> EcgRecordBundle:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"record bundle not found: {path}")
    src = path.name
    h = _parse_header_lines(path.read_text(encoding="utf-8").splitlines(), src)
    unknown = set(h) - _BUNDLE_KEYS
    if unknown:
        raise FormatError(f"{src}: unknown field {sorted(unknown)[0]!r}")
    if h.get("format", "ecgb 1") != "ecgb 1":
        raise FormatError(f"{src}: unsupported format {h['format']!r}")
    record_id = _require(h, "record_id", src)
    if not record_id:
        raise FormatError(f"{src}: field 'record_id' is empty")
    fs = _int_field(h, "fs", src)
    n_samples = _int_field(h, "n_samples", src)
    n_rpeaks = _int_field(h, "n_rpeaks", src)
    payload = _require(h, "payload", src)
    rpeaks = _int_list(h, "rpeaks", src)
    if len(rpeaks) != n_rpeaks:
        raise FormatError(f"{src}: field 'rpeaks' has {len(rpeaks)} entries, n_rpeaks says {n_rpeaks}")
    beat_types = h.get("beat_types", "").split()
    for code in beat_types:
        if code not in BEAT_TYPES:
            raise FormatError(f"{src}: field 'beat_types' has unknown code {code!r}")
    af = _interval_list(h.get("af_episodes", ""), "af_episodes", src)
    label = _int_field(h, "patient_label", src)
    seg_count = _int_field(h, "segment_count", src, default=1)
    seg = h.get("segment_boundaries")
    seg_b = _interval_list(seg, "segment_boundaries", src) if seg is not None else None

    if payload == "inline":
        try:
            samples = np.array([float(t) for t in _require(h, "samples", src).split()], dtype=np.float32)
        except ValueError:
            raise FormatError(f"{src}: field 'samples' must be decimal numbers") from None
    elif payload == "binary":
        if "samples" in h:
            raise FormatError(f"{src}: field 'samples' not allowed with binary payload")
        side = sidecar_path(path)
        if not side.is_file():
            raise FormatError(f"{src}: binary sidecar missing: {side.name}")
        raw = side.read_bytes()
        if len(raw) % 4:
            raise FormatError(f"{src}: sidecar length is not a multiple of 4 bytes")
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    else:
        raise FormatError(f"{src}: field 'payload' must be inline or binary, got {payload!r}")
    if len(samples) != n_samples:
        raise FormatError(f"{src}: field 'n_samples' says {n_samples}, payload has {len(samples)}")
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{src}: samples contain non-finite values")
    return EcgRecordBundle(
        record_id=record_id, fs=fs, samples=samples, rpeaks=np.array(rpeaks, dtype=np.int64),
        beat_types=beat_types, af_episodes=af, patient_label=label, segment_count=seg_count,
        segment_boundaries=seg_b, patient_id=h.get("patient_id"),
    )


# --------------------------------------------------------------------------
# beat archives

def save_beat_archive(path: str | Path, archive: BeatArchive) -> None:
    header = [
        "format = beats 1",
        f"record_id = {archive.record_id}",
        f"L = {archive.L}",
        f"fs = {archive.fs}",
        f"n_beats = {len(archive.beats)}",
        "ordinals = " + " ".join(str(b.ordinal) for b in archive.beats),
        "rpeaks = " + " ".join(str(b.rpeak_index) for b in archive.beats),
        "beat_types = " + " ".join(b.beat_type for b in archive.beats),
        "labels = " + " ".join(str(int(v)) for v in archive.labels),
    ]
    if archive.patient_id is not None:
        header.append(f"patient_id = {archive.patient_id}")
    header.append("end_header")
    body = archive.matrix().astype("<f4").tobytes()
    Path(path).write_bytes(("\n".join(header) + "\n").encode("utf-8") + body)


def load_beat_archive(path: str | Path) -> BeatArchive:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"beat archive not found: {path}")
    src = path.name
    raw = path.read_bytes()
    marker = b"\nend_header\n"
    cut = raw.find(marker)
    if cut < 0:
        raise FormatError(f"{src}: missing end_header line")
    h = _parse_header_lines(raw[:cut].decode("utf-8").splitlines(), src)
    body = raw[cut + len(marker):]
    if h.get("format") != "beats 1":
        raise FormatError(f"{src}: unsupported or missing format")
    L = _int_field(h, "L", src)
    n = _int_field(h, "n_beats", src)
    fs = _int_field(h, "fs", src, default=200)
    if L < 1 or n < 0:
        raise FormatError(f"{src}: invalid L or n_beats")
    ordinals = _int_list(h, "ordinals", src)
    rpeaks = _int_list(h, "rpeaks", src)
    labels = _int_list(h, "labels", src)
    types = h.get("beat_types", "").split()
    for name, seq in (("ordinals", ordinals), ("rpeaks", rpeaks), ("labels", labels), ("beat_types", types)):
        if len(seq) != n:
            raise FormatError(f"{src}: field {name!r} has {len(seq)} entries, n_beats says {n}")
    if any(v not in (0, 1) for v in labels):
        raise FormatError(f"{src}: field 'labels' must be 0/1")
    if any(t not in BEAT_TYPES for t in types):
        raise FormatError(f"{src}: field 'beat_types' has unknown code")
    if len(body) != 4 * n * L:
        raise FormatError(f"{src}: payload has {len(body)} bytes, expected {4 * n * L}")
    mat = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(n, L)
    half = L // 2
    beats = [
        Beat(samples=mat[i].copy(), rpeak_index=rpeaks[i], ordinal=ordinals[i], beat_type=types[i],
             left=rpeaks[i] - half, right=rpeaks[i] - half + L)
        for i in range(n)
    ]
    return BeatArchive(record_id=_require(h, "record_id", src), L=L, beats=beats,
                       labels=np.array(labels, dtype=np.int64), patient_id=h.get("patient_id"), fs=fs)


# --------------------------------------------------------------------------
# weights

def weights_bytes(weights: ModelWeights) -> bytes:
    manifest = {
        "config": weights.config.to_dict(),
        "tensors": [
            {"name": name, "shape": list(arr.shape), "count": int(arr.size)}
            for name, arr in weights.tensors.items()
        ],
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [WEIGHTS_MAGIC, struct.pack("<II", weights.format_version, len(mbytes)), mbytes]
    for arr in weights.tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def save_weights(path: str | Path, weights: ModelWeights) -> None:
    """Write ``.n1dw``. Tensors are stored as float32."""
    if weights.format_version != WEIGHTS_VERSION:
        raise FormatError(f"cannot write weights format version {weights.format_version}")
    Path(path).write_bytes(weights_bytes(weights))


def weights_checksum(weights: ModelWeights) -> str:
    return f"{zlib.crc32(weights_bytes(weights)):08x}"


def parse_weights(blob: bytes, source: str = "<bytes>") -> ModelWeights:
    from afbeat.net1d.config import Net1dConfig

    if len(blob) < 16:
        raise FormatError(f"{source}: truncated payload")
    if blob[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{source}: bad magic bytes")
    version, mlen = struct.unpack_from("<II", blob, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{source}: version mismatch (file {version}, supported {WEIGHTS_VERSION})")
    if 12 + mlen + 4 > len(blob):
        raise FormatError(f"{source}: truncated payload")
    try:
        manifest = json.loads(blob[12:12 + mlen].decode("utf-8"))
        config = Net1dConfig.from_dict(manifest["config"])
        entries = manifest["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: bad manifest: {exc}") from None
    offset = 12 + mlen
    names = set()
    tensors: dict[str, np.ndarray] = {}
    for e in entries:
        name, shape, count = e["name"], tuple(int(s) for s in e["shape"]), int(e["count"])
        if name in names:
            raise FormatError(f"{source}: duplicate tensor name {name!r}")
        names.add(name)
        if math.prod(shape) != count:
            raise FormatError(f"{source}: value-count mismatch for {name!r}: shape {shape} vs {count} values")
        nbytes = 4 * count
        if offset + nbytes > len(blob) - 4:
            raise FormatError(f"{source}: value-count mismatch for {name!r}: truncated payload")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape)
        offset += nbytes
    if offset != len(blob) - 4:
        raise FormatError(f"{source}: trailing bytes after payload")
    (crc,) = struct.unpack_from("<I", blob, offset)
    if crc != zlib.crc32(blob[:offset]):
        raise FormatError(f"{source}: checksum mismatch")
    return ModelWeights(config=config, tensors=tensors, format_version=version)


def load_weights(path: str | Path) -> ModelWeights:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"weights file not found: {path}")
    return parse_weights(path.read_bytes(), path.name)


# --------------------------------------------------------------------------
# probability series

def save_probs(path: str | Path, series: RiskSeries) -> None:
    lines = [f"# record_id={series.record_id}", f"# model_checksum={series.model_checksum}"]
    if series.label is not None:
        lines.append(f"# label={series.label}")
    lines.append("beat_index,rpeak_sample,probability")
    for o, r, p in zip(series.ordinals, series.rpeaks, series.probabilities):
        lines.append(f"{int(o)},{int(r)},{float(p)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_probs(path: str | Path) -> RiskSeries:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"probability series not found: {path}")
    src = path.name
    meta: dict[str, str] = {}
    rows = []
    seen_columns = False
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        if not seen_columns:
            if line.strip() != "beat_index,rpeak_sample,probability":
                raise FormatError(f"{src}: missing column header")
            seen_columns = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{src}: row {line[:40]!r} does not have 3 columns")
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise FormatError(f"{src}: malformed row {line[:40]!r}") from None
    if "record_id" not in meta:
        raise FormatError(f"{src}: missing field 'record_id'")
    if not seen_columns:
        raise FormatError(f"{src}: missing column header")
    label = meta.get("label")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return RiskSeries(
        record_id=meta["record_id"], probabilities=arr[:, 2], ordinals=arr[:, 0].astype(np.int64),
        rpeaks=arr[:, 1].astype(np.int64), model_checksum=meta.get("model_checksum", ""),
        label=int(label) if label not in (None, "") else None,
    )


def write_report(path: str | Path, report: dict) -> None:
    """Reports are JSON documents with sorted keys (byte-stable across runs)."""
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
