"""Binary formats (FMAT, AMAT, DENC), dataset manifests and synthetic data.

All binary formats are little-endian regardless of host.

FMAT / AMAT::

    magic   4 bytes   b"FMAT" or b"AMAT"
    version u32       1
    rows    u32
    cols    u32
    data    rows*cols float32, row-major

DENC (dual-encoder checkpoint)::

    magic    4 bytes  b"DENC"
    version  u32      1
    n_a, n_c u32 x 2  number of layers in the audio / caption head
    dims     u32 x (n_a + 1) then u32 x (n_c + 1)
    params   float64; for each audio layer W (out x in, row-major) then b,
             then the same for the caption head
    meta_len u32
    meta     meta_len bytes of UTF-8 JSON (sorted keys)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderParams
from .errors import ConfigError, ContractError, FormatError, NumericError, ShapeError, ValidationError

VERSION = 1
_MAT_HEADER = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")
SPLITS = ("train", "validation", "test")


# -- FMAT / AMAT -------------------------------------------------------------

def _write_mat(path, m, magic: bytes) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    with np.errstate(over="ignore"):
        data = m.astype("<f4")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(data))):
        raise NumericError(f"refusing to write non-finite values to {path}")
    with open(path, "wb") as fh:
        fh.write(_MAT_HEADER.pack(magic, VERSION, m.shape[0], m.shape[1]))
        fh.write(data.tobytes(order="C"))


def _read_mat(path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MAT_HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(raw)} of {_MAT_HEADER.size} bytes", len(raw))
    got, version, rows, cols = _MAT_HEADER.unpack_from(raw, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    want = _MAT_HEADER.size + 4 * rows * cols
    if len(raw) != want:
        raise FormatError(
            f"{path}: header declares {rows}x{cols} ({want} bytes) but file has {len(raw)} bytes",
            min(len(raw), want),
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_MAT_HEADER.size, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)


def write_fmat(path, m) -> None:
    _write_mat(path, m, b"FMAT")


def read_fmat(path) -> np.ndarray:
    return _read_mat(path, b"FMAT")


def write_amat(path, m) -> None:
    _write_mat(path, m, b"AMAT")


def read_amat(path) -> np.ndarray:
    return _read_mat(path, b"AMAT")


# -- DENC checkpoints --------------------------------------------------------

@dataclass
class Checkpoint:
    audio: EncoderParams
    caption: EncoderParams
    metadata: dict = field(default_factory=dict)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.audio.copy(), self.caption.copy(), dict(self.metadata))

    def equals(self, other: "Checkpoint") -> bool:
        return self.audio.equals(other.audio) and self.caption.equals(other.caption)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    parts = [b"DENC", _U32.pack(VERSION)]
    parts.append(struct.pack("<II", ckpt.audio.num_layers, ckpt.caption.num_layers))
    for enc in (ckpt.audio, ckpt.caption):
        parts.append(struct.pack(f"<{len(enc.layer_dims)}I", *enc.layer_dims))
    for enc in (ckpt.audio, ckpt.caption):
        for a in enc.arrays():
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    meta = json.dumps(ckpt.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [_U32.pack(len(meta)), meta]
    return b"".join(parts)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


class _Cursor:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.raw):
            missing = end - len(self.raw)
            raise FormatError(f"{self.path}: truncated {what}, missing {missing} bytes", len(self.raw))
        out = self.raw[self.pos:end]
        self.pos = end
        return out

    def u32s(self, n: int, what: str):
        return struct.unpack(f"<{n}I", self.take(4 * n, what))


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    cur = _Cursor(raw, path)
    magic = cur.take(4, "magic")
    if magic != b"DENC":
        raise FormatError(f"{path}: bad magic {magic!r}, expected b'DENC'", 0)
    (version,) = cur.u32s(1, "version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    n_a, n_c = cur.u32s(2, "layer counts")
    if n_a < 1 or n_c < 1:
        raise ContractError(f"{path}: each encoder needs at least one layer, got {n_a} and {n_c}")
    dims_a = list(cur.u32s(n_a + 1, "audio layer dims"))
    dims_c = list(cur.u32s(n_c + 1, "caption layer dims"))
    encoders = []
    for name, dims in (("audio", dims_a), ("caption", dims_c)):
        weights, biases = [], []
        for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = np.frombuffer(cur.take(8 * fan_in * fan_out, f"{name} layer {l} weights"), dtype="<f8")
            b = np.frombuffer(cur.take(8 * fan_out, f"{name} layer {l} biases"), dtype="<f8")
            weights.append(w.astype(np.float64).reshape(fan_out, fan_in))
            biases.append(b.astype(np.float64))
        try:
            encoders.append(EncoderParams(dims, weights, biases))
        except (ConfigError, ShapeError) as exc:
            raise ContractError(f"{path}: inconsistent {name} encoder: {exc}") from exc
    (meta_len,) = cur.u32s(1, "metadata length")
    meta_raw = cur.take(meta_len, "metadata")
    if cur.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - cur.pos} trailing bytes after metadata", cur.pos)
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: metadata is not UTF-8 JSON: {exc}", cur.pos - meta_len) from exc
    for enc in encoders:
        if not all(np.all(np.isfinite(a)) for a in enc.arrays()):
            raise ContractError(f"{path}: non-finite parameters")
    return Checkpoint(encoders[0], encoders[1], metadata)


# -- manifests ---------------------------------------------------------------

@dataclass
class DatasetManifest:
    audio_features_path: str
    caption_features_path: str
    caption_to_audio: np.ndarray
    splits: dict
    version: int = VERSION
    base_dir: Path = Path(".")
    audio_features: np.ndarray | None = None
    caption_features: np.ndarray | None = None

    @property
    def num_audios(self) -> int:
        return int(self.audio_features.shape[0])

    @property
    def num_captions(self) -> int:
        return int(self.caption_to_audio.size)

    def split_audios(self, split: str) -> np.ndarray:
        if split not in self.splits:
            raise ConfigError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return self.splits[split]

    def split_captions(self, split: str) -> np.ndarray:
        """Caption indices (ascending) whose audio belongs to ``split``."""
        audios = self.split_audios(split)
        return np.flatnonzero(np.isin(self.caption_to_audio, audios))

    def captions_by_audio(self) -> dict[int, np.ndarray]:
        order = np.argsort(self.caption_to_audio, kind="stable")
        bounds = np.searchsorted(self.caption_to_audio[order], np.arange(self.num_audios + 1))
        return {a: order[bounds[a]:bounds[a + 1]] for a in range(self.num_audios)}

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "audio_features_path": self.audio_features_path,
            "caption_features_path": self.caption_features_path,
            "caption_to_audio": [int(a) for a in self.caption_to_audio],
            "splits": {k: [int(a) for a in self.splits[k]] for k in SPLITS},
        }


def validate_manifest(man: DatasetManifest) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    if man.version != VERSION:
        raise ValidationError(f"version: expected {VERSION}, got {man.version}")
    n_audio = man.audio_features.shape[0]
    c2a = man.caption_to_audio
    if c2a.ndim != 1:
        raise ValidationError("caption_to_audio: must be a flat array")
    if man.caption_features.shape[0] != c2a.size:
        raise ValidationError(
            f"caption_to_audio: has {c2a.size} entries but caption features have "
            f"{man.caption_features.shape[0]} rows"
        )
    bad = np.flatnonzero((c2a < 0) | (c2a >= n_audio))
    if bad.size:
        raise ValidationError(
            f"caption_to_audio[{int(bad[0])}]: audio index {int(c2a[bad[0]])} out of range [0, {n_audio})"
        )
    counts = np.bincount(c2a, minlength=n_audio)
    if n_audio and counts.min() == 0:
        raise ValidationError(f"caption_to_audio: audio {int(np.argmin(counts))} has no caption")
    seen = {}
    for name in SPLITS:
        if name not in man.splits:
            raise ValidationError(f"splits.{name}: missing")
        idx = man.splits[name]
        bad = np.flatnonzero((idx < 0) | (idx >= n_audio))
        if bad.size:
            raise ValidationError(f"splits.{name}[{int(bad[0])}]: audio index {int(idx[bad[0]])} out of range")
        if np.unique(idx).size != idx.size:
            raise ValidationError(f"splits.{name}: duplicate audio indices")
        for a in idx:
            if int(a) in seen:
                raise ValidationError(f"splits.{name}: audio {int(a)} also in splits.{seen[int(a)]}")
            seen[int(a)] = name
    extra = set(man.splits) - set(SPLITS)
    if extra:
        raise ValidationError(f"splits: unexpected split names {sorted(extra)}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("manifest: top level must be an object")
    for key in ("version", "audio_features_path", "caption_features_path", "caption_to_audio", "splits"):
        if key not in doc:
            raise ValidationError(f"{key}: missing")
    if not isinstance(doc["splits"], dict):
        raise ValidationError("splits: must be an object")
    try:
        c2a = np.asarray(doc["caption_to_audio"], dtype=np.int64)
        splits = {k: np.asarray(v, dtype=np.int64).reshape(-1) for k, v in doc["splits"].items()}
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"caption_to_audio/splits: entries must be integers ({exc})") from exc
    man = DatasetManifest(
        audio_features_path=doc["audio_features_path"],
        caption_features_path=doc["caption_features_path"],
        caption_to_audio=c2a,
        splits=splits,
        version=doc["version"],
        base_dir=path.parent,
    )
    man.audio_features = read_fmat(man.base_dir / man.audio_features_path)
    man.caption_features = read_fmat(man.base_dir / man.caption_features_path)
    validate_manifest(man)
    return man


def write_dataset(out_dir, audio, captions, manifest: DatasetManifest) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_fmat(out_dir / manifest.audio_features_path, audio)
    write_fmat(out_dir / manifest.caption_features_path, captions)
    text = json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n"
    (out_dir / "manifest.json").write_text(text, encoding="utf-8")


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic ambiguous-caption dataset.

    Every audio gets a unit "concept" direction mixing one of
    ``num_latent_concepts`` shared directions with an audio-specific one, so
    audios sharing a latent concept are partly described by each other's
    captions. ``noise_scale`` is relative to the unit concept norm.
    """

    num_audios: int = 300
    captions_per_audio: int = 5
    feature_dim: int = 32
    num_latent_concepts: int = 16
    noise_scale: float = 0.3
    ambiguity_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_audios < 3:
            raise ConfigError(f"num_audios must be >= 3, got {self.num_audios}")
        if self.captions_per_audio < 1:
            raise ConfigError(f"captions_per_audio must be >= 1, got {self.captions_per_audio}")
        if self.feature_dim < 2:
            raise ConfigError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.num_latent_concepts < 2:
            raise ConfigError(f"num_latent_concepts must be >= 2, got {self.num_latent_concepts}")
        if not self.noise_scale >= 0:
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not 0.0 <= self.ambiguity_rate <= 1.0:
            raise ConfigError(f"ambiguity_rate must lie in [0, 1], got {self.ambiguity_rate}")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_synthetic(cfg: SyntheticConfig):
    """Return ``(audio_features, caption_features, manifest)``.

    Features are rounded to float32 so they survive an FMAT round trip
    unchanged. The manifest records one ground-truth audio per caption even
    for the ambiguous captions.
    """
    rng = np.random.default_rng(cfg.seed)
    n, k, d = cfg.num_audios, cfg.captions_per_audio, cfg.feature_dim
    shared = _unit_rows(rng.standard_normal((cfg.num_latent_concepts, d)))
    assignment = rng.integers(cfg.num_latent_concepts, size=n)
    own = _unit_rows(rng.standard_normal((n, d)))
    concepts = _unit_rows(shared[assignment] + own)

    def noise(rows):
        return cfg.noise_scale * rng.standard_normal((rows, d)) / np.sqrt(d)

    audio = concepts + noise(n)

    caption_to_audio = np.repeat(np.arange(n), k)
    base = concepts[caption_to_audio].copy()
    ambiguous = rng.random(n * k) < cfg.ambiguity_rate
    # other audio drawn uniformly from the n - 1 audios that are not the owner
    other = rng.integers(n - 1, size=n * k)
    other = other + (other >= caption_to_audio)
    mixed = _unit_rows(concepts[caption_to_audio] + concepts[other])
    base[ambiguous] = mixed[ambiguous]
    captions = base + noise(n * k)

    perm = rng.permutation(n)
    n_train = int(0.7 * n)
    n_val = max(1, int(0.15 * n))
    splits = {
        "train": np.sort(perm[:n_train]),
        "validation": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    audio = audio.astype(np.float32).astype(np.float64)
    captions = captions.astype(np.float32).astype(np.float64)
    manifest = DatasetManifest(
        audio_features_path="audio.fmat",
        caption_features_path="captions.fmat",
        caption_to_audio=caption_to_audio,
        splits=splits,
        audio_features=audio,
        caption_features=captions,
    )
    validate_manifest(manifest)
    return audio, captions, manifest
