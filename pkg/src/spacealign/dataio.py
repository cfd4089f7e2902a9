"""Embedding persistence, manifests, synthetic matched spaces, corruption.

Binary container layout (all integers little-endian):

    bytes 0..3    magic "MWAL"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..15   rows N, uint64
    bytes 16..23  cols d, uint64
    byte  24      dtype code, uint8: 0x01 = float32, 0x02 = float64
    payload       N*d values, row-major
    ids block     uint64 byte length + UTF-8 newline-separated sample ids
    meta block    uint64 byte length + UTF-8 JSON {"space_id", "split"}

Embedding files use dtype 0x01. Model artifacts (orthogonal maps,
projection matrices) reuse the container with dtype 0x02 so orthogonality
survives the round trip.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorrespondenceError, FormatError, InvalidInput, InvalidSpec
from .numkernel import as_matrix
from .seeding import rng_for

MAGIC = b"MWAL"
FORMAT_VERSION = 1
DTYPE_CODES = {0x01: np.dtype("<f4"), 0x02: np.dtype("<f8")}
SPLITS = ("train", "val", "test")


@dataclass
class EmbeddingMatrix:
    """N x d matched-sample representations for one space and split."""

    space_id: str
    split: str
    data: np.ndarray
    sample_ids: list[str]

    def __post_init__(self):
        self.data = as_matrix(self.data, f"embeddings[{self.space_id}]")
        if self.split not in SPLITS:
            raise InvalidInput(f"split must be one of {SPLITS}, got {self.split!r}")
        if len(self.sample_ids) != self.data.shape[0]:
            raise InvalidInput(
                f"{len(self.sample_ids)} sample ids for {self.data.shape[0]} rows"
            )
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise InvalidInput("sample ids must be unique within a split")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class Correspondence:
    """Bijection on {0..N-1} mapping query rows to matched gallery rows."""

    permutation: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        if perm.ndim != 1:
            raise InvalidInput("permutation must be 1-D")
        if not np.array_equal(np.sort(perm), np.arange(perm.shape[0])):
            raise InvalidInput("permutation is not a bijection on {0..N-1}")
        self.permutation = perm

    @classmethod
    def identity(cls, n: int) -> "Correspondence":
        return cls(np.arange(n))

    def __len__(self) -> int:
        return self.permutation.shape[0]


# ---------------------------------------------------------------------------
# binary container


def _write_record(path, data: np.ndarray, sample_ids: list[str], meta: dict, dtype_code: int) -> None:
    dtype = DTYPE_CODES[dtype_code]
    arr = np.ascontiguousarray(data, dtype=dtype)
    ids_blob = "\n".join(sample_ids).encode("utf-8")
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(struct.pack("<B", dtype_code))
        fh.write(arr.tobytes(order="C"))
        fh.write(struct.pack("<Q", len(ids_blob)))
        fh.write(ids_blob)
        fh.write(struct.pack("<Q", len(meta_blob)))
        fh.write(meta_blob)


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    blob = fh.read(n)
    if len(blob) != n:
        raise FormatError(f"truncated while reading {what}: wanted {n} bytes, got {len(blob)}", offset=offset)
    return blob


def _read_record(path) -> tuple[np.ndarray, list[str], dict]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", offset=4)
        rows, cols = struct.unpack("<QQ", _read_exact(fh, 16, "shape header"))
        (dtype_code,) = struct.unpack("<B", _read_exact(fh, 1, "dtype code"))
        if dtype_code not in DTYPE_CODES:
            raise FormatError(f"unknown dtype code 0x{dtype_code:02x}", offset=24)
        dtype = DTYPE_CODES[dtype_code]
        if rows < 1 or cols < 1:
            raise FormatError(f"degenerate shape {rows}x{cols}", offset=8)
        payload = _read_exact(fh, rows * cols * dtype.itemsize, "matrix payload")
        data = np.frombuffer(payload, dtype=dtype).reshape(rows, cols).astype(np.float64)
        (ids_len,) = struct.unpack("<Q", _read_exact(fh, 8, "ids length"))
        ids_blob = _read_exact(fh, ids_len, "ids block")
        sample_ids = ids_blob.decode("utf-8").split("\n") if ids_blob else []
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "meta length"))
        meta = json.loads(_read_exact(fh, meta_len, "meta block").decode("utf-8"))
    return data, sample_ids, meta


def write_embeddings(e: EmbeddingMatrix, path) -> None:
    """Write one embedding matrix (float32 at rest)."""
    _write_record(path, e.data, e.sample_ids, {"space_id": e.space_id, "split": e.split}, 0x01)


def read_embeddings(path) -> EmbeddingMatrix:
    data, sample_ids, meta = _read_record(path)
    if len(sample_ids) != data.shape[0]:
        raise FormatError(f"{len(sample_ids)} ids for {data.shape[0]} rows in {path}")
    return EmbeddingMatrix(space_id=meta["space_id"], split=meta["split"], data=data, sample_ids=sample_ids)


def write_matrix(path, matrix: np.ndarray, name: str = "matrix") -> None:
    """Write a float64 model matrix (maps, consensus, weights) to the container."""
    _write_record(path, matrix, [], {"space_id": name, "split": "train"}, 0x02)


def read_matrix(path) -> np.ndarray:
    data, _, _ = _read_record(path)
    return data


# ---------------------------------------------------------------------------
# synthetic matched spaces

DISTORTIONS = ("none", "orthogonal-only", "linear", "per-space-dropout")


@dataclass
class SynthSpec:
    """Recipe for M matched synthetic spaces with cluster-structured latent.

    `distortion` selects the per-space transform of the padded latent:
    identical spaces ("none"), seeded random rotations ("orthogonal-only"),
    rotation followed by a non-orthogonal linear map ("linear"), or latent
    dimension dropout before rotation ("per-space-dropout").
    `weak_pair=(indices, fraction)` corrupts that fraction of the train rows
    of the named spaces: the selected rows (one shared subset) are replaced
    by views of a shared random corruption source, rotated per space and
    scale-matched. The corrupted rows therefore correlate between the weak
    spaces but carry no information about the true latent, which makes
    their direct link confidently wrong while anchor spaces stay clean.
    Val/test rows are untouched.
    """

    num_spaces: int
    samples: int
    dim: int
    latent_dim: int
    noise_sigma: float = 0.0
    distortion: str = "orthogonal-only"
    distortion_strength: float = 0.2
    num_classes: int = 8
    center_scale: float = 3.0
    val_samples: int | None = None
    test_samples: int | None = None
    weak_pair: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_spaces < 2:
            raise InvalidSpec(f"need at least 2 spaces, got {self.num_spaces}")
        if not 1 <= self.latent_dim <= self.dim:
            raise InvalidSpec(f"latent_dim {self.latent_dim} must be in [1, dim={self.dim}]")
        if self.samples < 1:
            raise InvalidSpec("samples must be >= 1")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise InvalidSpec(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if self.distortion not in DISTORTIONS:
            raise InvalidSpec(f"distortion must be one of {DISTORTIONS}, got {self.distortion!r}")
        if not (math.isfinite(self.distortion_strength) and self.distortion_strength >= 0):
            raise InvalidSpec("distortion_strength must be finite and >= 0")
        if self.num_classes < 1:
            raise InvalidSpec("num_classes must be >= 1")
        if self.val_samples is None:
            self.val_samples = max(self.samples // 5, self.num_classes)
        if self.test_samples is None:
            self.test_samples = max(self.samples // 2, self.num_classes)
        if self.weak_pair is not None:
            indices, strength = self.weak_pair
            indices = tuple(int(i) for i in indices)
            if len(set(indices)) != len(indices) or any(not 0 <= i < self.num_spaces for i in indices):
                raise InvalidSpec(f"weak_pair indices {indices} invalid for {self.num_spaces} spaces")
            if not 0.0 <= float(strength) <= 1.0:
                raise InvalidSpec(f"weak_pair corruption fraction must lie in [0,1], got {strength}")
            self.weak_pair = (indices, float(strength))


@dataclass
class SynthResult:
    space_ids: list[str]
    embeddings: dict  # (space_id, split) -> EmbeddingMatrix
    labels: dict  # split -> np.ndarray of int labels
    weak_space_ids: list[str] = field(default_factory=list)

    def matrices(self, split: str) -> list[EmbeddingMatrix]:
        return [self.embeddings[(sid, split)] for sid in self.space_ids]


def _space_transform(spec: SynthSpec, m: int) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Per-space (rotation, extra linear map); both fixed across splits."""
    d, k = spec.dim, spec.latent_dim
    if spec.distortion == "none":
        return None, None
    rng = rng_for(spec.seed, "rotation", m)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    rotation = q * np.sign(np.diag(r))
    if spec.distortion == "linear":
        g = rng_for(spec.seed, "linear", m).standard_normal((d, d))
        return rotation, np.eye(d) + spec.distortion_strength * g / np.sqrt(d)
    return rotation, None


def _dropout_mask(spec: SynthSpec, m: int) -> np.ndarray:
    k = spec.latent_dim
    n_drop = min(int(round(spec.distortion_strength * k)), k - 1)
    mask = np.ones(k)
    if n_drop > 0:
        drop = rng_for(spec.seed, "dropout", m).choice(k, size=n_drop, replace=False)
        mask[drop] = 0.0
    return mask


def generate_synthetic(spec: SynthSpec) -> SynthResult:
    """M matched spaces over a shared cluster-structured latent, with labels.

    Each space sees the same latent rows (correspondence by sample id), its
    own seeded transform, and independent Gaussian feature noise. Fully
    deterministic in spec.seed; every randomized ingredient draws from its
    own sub-stream so toggling one option never reshuffles another.
    """
    d, k, c = spec.dim, spec.latent_dim, spec.num_classes
    centers = rng_for(spec.seed, "centers").standard_normal((c, k)) * spec.center_scale
    sizes = {"train": spec.samples, "val": spec.val_samples, "test": spec.test_samples}
    space_ids = [f"space{m:02d}" for m in range(spec.num_spaces)]

    labels: dict[str, np.ndarray] = {}
    latent: dict[str, np.ndarray] = {}
    ids: dict[str, list[str]] = {}
    for split, n in sizes.items():
        lab = np.arange(n) % c
        lab = lab[rng_for(spec.seed, "labels", split).permutation(n)]
        labels[split] = lab
        latent[split] = centers[lab] + rng_for(spec.seed, "latent", split).standard_normal((n, k))
        ids[split] = [f"{split}-{i:06d}" for i in range(n)]

    embeddings = {}
    for m, sid in enumerate(space_ids):
        rotation, extra = _space_transform(spec, m)
        drop = _dropout_mask(spec, m) if spec.distortion == "per-space-dropout" else None
        for split, n in sizes.items():
            z = latent[split]
            if drop is not None:
                z = z * drop
            x = np.zeros((n, d))
            x[:, :k] = z
            if rotation is not None:
                x = x @ rotation
            if extra is not None:
                x = x @ extra
            if spec.noise_sigma > 0:
                x = x + spec.noise_sigma * rng_for(spec.seed, "noise", m, split).standard_normal((n, d))
            embeddings[(sid, split)] = EmbeddingMatrix(space_id=sid, split=split, data=x, sample_ids=ids[split])

    weak_ids: list[str] = []
    if spec.weak_pair is not None:
        indices, fraction = spec.weak_pair
        weak_ids = [space_ids[i] for i in indices]
        n_rows = int(math.floor(fraction * spec.samples))
        rows = rng_for(spec.seed, "weakrows").choice(spec.samples, size=n_rows, replace=False)
        source = rng_for(spec.seed, "weaksource").standard_normal((n_rows, d))
        for m in indices:
            q, r = np.linalg.qr(rng_for(spec.seed, "weakview", m).standard_normal((d, d)))
            view = source @ (q * np.sign(np.diag(r)))
            e = embeddings[(space_ids[m], "train")]
            e.data[rows] = float(e.data.std()) * view

    return SynthResult(space_ids=space_ids, embeddings=embeddings, labels=labels, weak_space_ids=weak_ids)


def corrupt_correspondence(c: Correspondence, fraction: float, seed: int) -> Correspondence:
    """Permute floor(fraction*N) entries among themselves, seeded.

    The selected block is rearranged by one random cycle, so every selected
    position actually changes value (for block size >= 2); all other
    entries are untouched and the result stays a bijection.
    """
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInput(f"fraction must lie in [0, 1], got {fraction}")
    n = len(c)
    k = int(math.floor(fraction * n))
    perm = c.permutation.copy()
    if k >= 2:
        rng = rng_for(seed, "corrupt-correspondence")
        block = rng.choice(n, size=k, replace=False)
        perm[block] = perm[np.roll(block, -1)]
    return Correspondence(perm)


def aligned_rows(a: EmbeddingMatrix, b: EmbeddingMatrix) -> None:
    """Raise unless two matrices cover the same samples in the same order."""
    if a.sample_ids != b.sample_ids:
        raise CorrespondenceError(f"sample ids of {a.space_id} and {b.space_id} do not match")


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestSpace:
    id: str
    path: str
    dim: int


@dataclass
class Manifest:
    """Where each space's split files live, plus labels and common dim."""

    spaces: list[ManifestSpace]
    splits: dict[str, str]
    labels: str | None = None
    common_dim: int | None = None
    weak_pair: list[str] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def space_ids(self) -> list[str]:
        return [s.id for s in self.spaces]

    def embedding_path(self, space_id: str, split: str) -> Path:
        space = next((s for s in self.spaces if s.id == space_id), None)
        if space is None:
            raise InvalidInput(f"space {space_id!r} not in manifest")
        if split not in self.splits:
            raise InvalidInput(f"split {split!r} not in manifest")
        return self.root / space.path / self.splits[split]

    def labels_path(self) -> Path | None:
        return self.root / self.labels if self.labels else None

    def to_dict(self) -> dict:
        out = {
            "spaces": [{"id": s.id, "path": s.path, "dim": s.dim} for s in self.spaces],
            "splits": dict(self.splits),
        }
        if self.labels:
            out["labels"] = self.labels
        if self.common_dim is not None:
            out["common_dim"] = self.common_dim
        if self.weak_pair:
            out["weak_pair"] = list(self.weak_pair)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
        spaces = [ManifestSpace(id=s["id"], path=s["path"], dim=int(s["dim"])) for s in raw["spaces"]]
        manifest = cls(
            spaces=spaces,
            splits=dict(raw["splits"]),
            labels=raw.get("labels"),
            common_dim=raw.get("common_dim"),
            weak_pair=list(raw.get("weak_pair", [])),
            root=path.parent,
        )
        for space in spaces:
            if space.dim < 1:
                raise FormatError(f"space {space.id} has non-positive dim {space.dim}")
        if check_files:
            for space in spaces:
                for split in manifest.splits:
                    p = manifest.embedding_path(space.id, split)
                    if not p.exists():
                        raise ConfigError(f"space {space.id}: missing file {p}")
            lp = manifest.labels_path()
            if lp is not None and not lp.exists():
                raise ConfigError(f"missing labels file {lp}")
        return manifest


def write_labels(labels: dict, path) -> None:
    payload = {split: np.asarray(arr).astype(int).tolist() for split, arr in labels.items()}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def read_labels(path) -> dict:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {split: np.asarray(vals, dtype=np.int64) for split, vals in raw.items()}
