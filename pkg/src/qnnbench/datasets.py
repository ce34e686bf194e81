"""Data sets: hypercube generation, IDX / PGM ingestion, PCA reduction, balanced versions, persistence."""
from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuits import DomainError
from .seeding import derive_seed

SCHEMA_VERSION = 1
TRAIN_FRACTION = 0.8


class FormatError(ValueError):
    """Malformed IDX or PGM input."""


class DegenerateCorpusError(ValueError):
    pass


class CapacityError(ValueError):
    """Not enough source samples of a class to build the requested version."""


@dataclass
class ImageCorpus:
    images: np.ndarray  # (M, H, W) in [0, 1]
    labels: np.ndarray  # (M,) in {0, 1}
    source: str = "image_corpus"

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:3])

    def flattened(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1)


@dataclass
class DataSetVersion:
    source: str  # hypercube | mnist | image_corpus
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    seed: int
    reduction: str = "none"  # none | pca
    clamp_count: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int | None:
        return self.features.shape[1] if self.features.ndim == 2 else None

    @property
    def image_shape(self) -> tuple[int, int] | None:
        return tuple(self.features.shape[1:3]) if self.features.ndim == 3 else None

    @property
    def name(self) -> str:
        dims = f"d{self.d}" if self.d is not None else "x".join(map(str, self.image_shape))
        return f"{self.source}-{self.reduction}-{dims}-N{self.N}"

    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    def validation(self):
        return self.features[self.val_idx], self.labels[self.val_idx]

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "source": self.source,
            "seed": self.seed,
            "N": self.N,
            "d": self.d,
            "image_shape": list(self.image_shape) if self.image_shape else None,
            "reduction": self.reduction,
            "labels": self.labels.astype(int).tolist(),
            "train_idx": self.train_idx.astype(int).tolist(),
            "val_idx": self.val_idx.astype(int).tolist(),
            "clamp_count": self.clamp_count,
            "metadata": self.metadata,
        }


def stratified_split(labels: np.ndarray, rng: np.random.Generator, train_fraction: float = TRAIN_FRACTION):
    """Per-class split so both subsets keep equal class counts."""
    train, val = [], []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_fraction * len(idx)))
        train.append(idx[:n_train])
        val.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


# ------------------------------------------------------------------ hypercube


def hypercube_label(x) -> int:
    x = np.asarray(x, dtype=float)
    return int(np.sum(x) > x.shape[-1] / 2)


def generate_hypercube(d: int, N: int, rng_seed: int) -> DataSetVersion:
    """``N/2`` uniform points on each side of the plane ``sum(x) = d/2`` in ``[0, 1]^d``."""
    if d not in (2, 4, 8, 16, 32, 64):
        raise ValueError(f"hypercube dimension must be a power of two in [2, 64], got {d}")
    if N <= 0 or N % 2:
        raise ValueError(f"N must be a positive even number, got {N}")
    rng = np.random.default_rng(rng_seed)
    per_class = N // 2
    buckets: dict[int, list[np.ndarray]] = {0: [], 1: []}
    counts = {0: 0, 1: 0}
    while counts[0] < per_class or counts[1] < per_class:
        pts = rng.random((max(N, 64), d))
        s = pts.sum(axis=1)
        pts = pts[s != d / 2]
        lab = (pts.sum(axis=1) > d / 2).astype(int)
        for c in (0, 1):
            take = pts[lab == c][:per_class - counts[c]]
            buckets[c].append(take)
            counts[c] += len(take)
    X = np.concatenate([np.concatenate(buckets[0]), np.concatenate(buckets[1])])
    y = np.repeat([0, 1], per_class)
    order = rng.permutation(N)
    X, y = X[order], y[order]
    train, val = stratified_split(y, rng)
    return DataSetVersion("hypercube", X, y, train, val, rng_seed)


# ------------------------------------------------------------------------ IDX

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Read an IDX file (optionally gzip-compressed) into an array."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header at byte offset {len(data)}")
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    magic = struct.unpack(">I", data[:4])[0]
    if zero != 0 or dtype_code not in _IDX_TYPES:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: expected magic 0x{expected_magic:08x}, found 0x{magic:08x} at byte offset 0")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise FormatError(f"{path}: truncated dimension header at byte offset {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = np.dtype(_IDX_TYPES[dtype_code])
    need = int(np.prod(dims)) * dtype.itemsize
    if len(data) - header_end < need:
        raise FormatError(f"{path}: truncated payload at byte offset {len(data)} (need {header_end + need} bytes)")
    return np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=header_end).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    big = array.astype(array.dtype.newbyteorder(">"))
    codes = [k for k, v in _IDX_TYPES.items() if np.dtype(v) == big.dtype]
    if not codes:
        raise FormatError(f"dtype {array.dtype} has no IDX type code")
    code = codes[0]
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + big.tobytes())


def load_mnist_binary(idx_image_path, idx_label_path, source: str = "mnist") -> ImageCorpus:
    images = read_idx(idx_image_path, expected_magic=0x00000803)
    labels = read_idx(idx_label_path, expected_magic=0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    keep = (labels == 0) | (labels == 1)
    return ImageCorpus(images[keep].astype(float) / 255.0, labels[keep].astype(int), source)


# ------------------------------------------------------------------------ PGM


def read_pgm(path) -> np.ndarray:
    """Binary (P5) 8-bit PGM -> ``(H, W)`` floats in [0, 1]."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header at byte offset {pos}")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: expected P5 magic at byte offset 0, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1
    if len(data) - pos < w * h:
        raise FormatError(f"{path}: truncated pixel data at byte offset {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return pixels.astype(float) / maxval


def write_pgm(path, image: np.ndarray) -> None:
    img = np.clip(np.round(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def load_pgm_corpus(root) -> ImageCorpus:
    """Two sub-directories of ``*.pgm`` files; sorted directory names map to labels 0 and 1."""
    root = Path(root)
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if len(classes) != 2:
        raise FormatError(f"{root}: expected exactly two label directories, found {len(classes)}")
    images, labels = [], []
    for label, cdir in enumerate(classes):
        for f in sorted(cdir.glob("*.pgm")):
            images.append(read_pgm(f))
            labels.append(label)
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise FormatError(f"{root}: images have differing shapes {sorted(shapes)}")
    return ImageCorpus(np.stack(images), np.array(labels), "image_corpus")


# ------------------------------------------------------------------------ PCA


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d, D), orthonormal rows
    minimum: np.ndarray
    maximum: np.ndarray
    explained_variance: np.ndarray

    @property
    def d(self) -> int:
        return self.components.shape[0]

    def project(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T

    def reconstruct(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) @ self.components + self.mean


def fit_pca(corpus, d: int) -> PcaModel:
    X = np.asarray(corpus, dtype=float)
    X = X.reshape(len(X), -1)
    D = X.shape[1]
    if not 1 <= d <= D:
        raise DomainError(f"cannot keep {d} components of {D}-dimensional data")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(np.abs(Xc) > 0):
        raise DegenerateCorpusError("corpus has zero variance")
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d]
    comps = evecs[:, order].T
    # deterministic sign: the largest-magnitude entry of each component is positive
    flip = np.sign(comps[np.arange(d), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    Z = Xc @ comps.T
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    if np.any(hi - lo <= 0):
        raise DegenerateCorpusError("a retained component has zero spread on the fit corpus")
    return PcaModel(mean, comps, lo, hi, evals[order])


def pca_reduce(model: PcaModel, x) -> tuple[np.ndarray, int]:
    """Project and min-max rescale with the fit-corpus range; returns ``(values, n_clamped)``."""
    Z = (model.project(np.asarray(x, dtype=float).reshape(-1, model.mean.shape[0])) - model.minimum)
    Z = Z / (model.maximum - model.minimum)
    clamped = int(np.sum((Z < 0) | (Z > 1)))
    Z = np.clip(Z, 0.0, 1.0)
    return (Z[0] if np.ndim(x) == 1 else Z), clamped


# ------------------------------------------------------------------- versions


def balanced_subset(labels: np.ndarray, N: int, rng: np.random.Generator) -> np.ndarray:
    per_class = N // 2
    picks = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if len(idx) < per_class:
            raise CapacityError(f"class {c} has {len(idx)} samples, {per_class} needed for N={N}")
        picks.append(rng.choice(idx, size=per_class, replace=False))
    chosen = np.concatenate(picks)
    return chosen[rng.permutation(len(chosen))]


def make_versions(source, sizes, seed: int, d: int | None = None, pca: PcaModel | None = None,
                  ) -> list[DataSetVersion]:
    """One balanced, stratified version per ``N`` in ``sizes``.

    ``source`` is ``"hypercube"`` (needs ``d``) or an :class:`ImageCorpus`; with
    ``pca`` given the images are reduced, otherwise kept at full resolution.
    """
    versions = []
    for N in sizes:
        if N % 2:
            raise ValueError(f"N must be even, got {N}")
        vseed = derive_seed(seed, "data", N)
        if isinstance(source, str):
            if source != "hypercube":
                raise ValueError(f"unknown generated source {source!r}")
            versions.append(generate_hypercube(d, N, vseed))
            continue
        rng = np.random.default_rng(vseed)
        chosen = balanced_subset(source.labels, N, rng)
        labels = source.labels[chosen].astype(int)
        if pca is not None:
            feats, clamps = pca_reduce(pca, source.flattened()[chosen])
            reduction = "pca"
        else:
            feats, clamps, reduction = source.images[chosen], 0, "none"
        train, val = stratified_split(labels, rng)
        versions.append(DataSetVersion(source.source, feats, labels, train, val, vseed, reduction, clamps,
                                       {"source_indices": chosen.astype(int).tolist()}))
    return versions


def save_version(version: DataSetVersion, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "features.npy", version.features)
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(version.manifest(), indent=1, sort_keys=True))
    os.replace(tmp, directory / "manifest.json")
    return directory


def load_version(directory) -> DataSetVersion:
    directory = Path(directory)
    m = json.loads((directory / "manifest.json").read_text())
    feats = np.load(directory / "features.npy")
    return DataSetVersion(m["source"], feats, np.array(m["labels"]), np.array(m["train_idx"], dtype=int),
                          np.array(m["val_idx"], dtype=int), m["seed"], m["reduction"], m["clamp_count"],
                          m.get("metadata", {}))
