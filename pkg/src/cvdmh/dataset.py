"""Multi-modal feature datasets.

Features live on disk as one raw binary matrix file per modality plus a JSON
manifest and a plain-text label file.  The matrix format is fixed so that
save/load round-trips are bit exact:

    magic   4 bytes  b"CVDM"
    version u32      1
    rows    u32      feature dimension of the modality
    cols    u32      number of images
    payload rows*cols float64, column major, little endian

Column ``n`` of every modality is the feature vector of image ``n``; the
label file has one integer landmark id per line, ids starting at 1.

A loaded :class:`Dataset` is immutable in practice: loading and generation
are single-writer, and all downstream stages only read the arrays, so a
dataset can be shared freely across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"CVDM"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class DatasetError(ValueError):
    """Malformed feature file, manifest, or invalid split request."""


def write_matrix(path: str | Path, data: np.ndarray) -> None:
    """Write a 2-D float64 matrix in the CVDM container format."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise DatasetError(f"expected a 2-D matrix, got shape {m.shape}")
    rows, cols = m.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, rows, cols))
        f.write(np.ravel(m, order="F").astype("<f8").tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    """Read a CVDM matrix file back into a (rows, cols) float64 array."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"truncated header in {path}")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise DatasetError(f"bad magic {magic!r} in {path} (expected {MATRIX_MAGIC!r})")
    if version != MATRIX_VERSION:
        raise DatasetError(f"unsupported version {version} in {path}")
    expected = _HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise DatasetError(f"payload size mismatch in {path}: {len(raw)} != {expected}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return flat.reshape((rows, cols), order="F").astype(np.float64)


@dataclass
class ModalityFeatures:
    """One modality's feature matrix, one column per image."""

    modality_id: int
    data: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DatasetError(f"modality {self.modality_id}: need a d x N matrix with d >= 1")
        if not np.isfinite(self.data).all():
            raise DatasetError(f"modality {self.modality_id}: non-finite values")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_images(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Split:
    """Disjoint partition of image indices into query/train/database parts."""

    query: np.ndarray
    train: np.ndarray
    database: np.ndarray

    def parts(self) -> dict[str, np.ndarray]:
        return {"query": self.query, "train": self.train, "database": self.database}


@dataclass
class Dataset:
    modalities: list[ModalityFeatures]
    labels: np.ndarray
    split: Split | None = None
    normalize: bool = False

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.modalities:
            raise DatasetError("dataset needs at least one modality")
        n = self.modalities[0].n_images
        for m in self.modalities:
            if m.n_images != n:
                raise DatasetError(
                    f"column-count mismatch: modality {m.modality_id} has "
                    f"{m.n_images} columns, expected {n}"
                )
        if self.labels.ndim != 1 or self.labels.shape[0] != n:
            raise DatasetError(f"label file has {self.labels.shape[0]} rows, expected {n}")
        if self.labels.size and self.labels.min() < 1:
            raise DatasetError(f"label out of range: {self.labels.min()} (ids start at 1)")
        if self.split is not None:
            self._check_split()

    def _check_split(self) -> None:
        assert self.split is not None
        all_idx = np.concatenate([self.split.query, self.split.train, self.split.database])
        if len(np.unique(all_idx)) != all_idx.size or all_idx.size != self.n_images:
            raise DatasetError("split parts must be disjoint and cover all images")
        db_labels = set(self.labels[self.split.database].tolist())
        missing = set(self.labels.tolist()) - db_labels
        if missing:
            raise DatasetError(f"landmarks absent from database part: {sorted(missing)}")

    @property
    def n_images(self) -> int:
        return self.modalities[0].n_images

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.dim for m in self.modalities)

    @property
    def n_landmarks(self) -> int:
        return len(np.unique(self.labels))


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset described by a JSON manifest.

    Manifest schema::

        {"modalities": [{"path": ..., "name": ...}, ...],
         "labels": <path>, "normalize": <bool>}

    Relative paths resolve against the manifest's directory.  The modality
    order of the returned dataset follows the manifest order.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    try:
        spec = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}") from exc
    base = manifest_path.parent

    entries = spec.get("modalities")
    if not entries:
        raise DatasetError("manifest lists no modalities")
    modalities = []
    for p, entry in enumerate(entries, start=1):
        data = read_matrix(base / entry["path"])
        modalities.append(ModalityFeatures(modality_id=p, data=data, name=entry.get("name", "")))

    label_path = base / spec["labels"]
    if not label_path.is_file():
        raise DatasetError(f"label file not found: {label_path}")
    lines = [ln for ln in label_path.read_text().splitlines() if ln.strip()]
    try:
        labels = np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"label file has a non-integer line: {exc}") from exc

    return Dataset(modalities=modalities, labels=labels, normalize=bool(spec.get("normalize", False)))


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    """Write the dataset's matrices, labels, and manifest; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in ds.modalities:
        fname = f"features_p{m.modality_id}.cvdm"
        write_matrix(out_dir / fname, m.data)
        entries.append({"path": fname, "name": m.name or f"modality{m.modality_id}"})
    label_path = out_dir / "labels.txt"
    label_path.write_text("".join(f"{int(v)}\n" for v in ds.labels))
    manifest = {"modalities": entries, "labels": "labels.txt", "normalize": ds.normalize}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def split_dataset(
    ds: Dataset,
    query_frac: float,
    train_frac: float,
    db_frac: float,
    seed: int,
) -> Dataset:
    """Stratified random split into query/train/database parts.

    Sampling is stratified per landmark label so every landmark is queryable
    and present in the database; per-label rounding errors are absorbed by
    the database part.  If the dataset requests normalization, features are
    z-scored per dimension using statistics of the train part only.
    """
    fracs = (query_frac, train_frac, db_frac)
    if any(f <= 0 for f in fracs):
        raise DatasetError(f"split fractions must be positive, got {fracs}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise DatasetError(f"split fractions must sum to 1, got {sum(fracs)!r}")
    n = ds.n_images
    if n < 10:
        raise DatasetError(f"need at least 10 images to split, got {n}")

    rng = np.random.default_rng(seed)
    query_parts, train_parts, db_parts = [], [], []
    for lab in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == lab)
        n_l = idx.size
        if n_l < 3:
            raise DatasetError(
                f"label {lab} has fewer images ({n_l}) than split parts (3)"
            )
        idx = rng.permutation(idx)
        n_q = max(1, int(round(query_frac * n_l)))
        n_t = max(1, int(round(train_frac * n_l)))
        # keep at least one database image per label
        while n_q + n_t > n_l - 1:
            if n_q >= n_t and n_q > 1:
                n_q -= 1
            elif n_t > 1:
                n_t -= 1
            else:
                n_q -= 1
        query_parts.append(idx[:n_q])
        train_parts.append(idx[n_q : n_q + n_t])
        db_parts.append(idx[n_q + n_t :])

    split = Split(
        query=np.sort(np.concatenate(query_parts)),
        train=np.sort(np.concatenate(train_parts)),
        database=np.sort(np.concatenate(db_parts)),
    )

    modalities = ds.modalities
    if ds.normalize:
        modalities = []
        for m in ds.modalities:
            mean = m.data[:, split.train].mean(axis=1, keepdims=True)
            std = m.data[:, split.train].std(axis=1, keepdims=True)
            scale = np.where(std > 0, std, 1.0)
            modalities.append(
                ModalityFeatures(m.modality_id, (m.data - mean) / scale, name=m.name)
            )
    return replace(ds, modalities=modalities, split=split)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a desk-scale multi-modal landmark dataset.

    Every landmark is a latent vector; each modality observes the latent
    through a fixed random linear map plus isotropic noise.  The noise of
    one image is a mix of a component shared across modalities (weight
    ``cross_modality_correlation``) and modality-private components, with
    total variance held constant.
    """

    num_landmarks: int
    images_per_landmark: int
    dims: tuple[int, ...]
    noise_scale: float = 0.5
    cross_modality_correlation: float = 0.5
    seed: int = 0
    latent_dim: int = 8

    def __post_init__(self) -> None:
        if self.num_landmarks < 1 or self.images_per_landmark < 1 or self.latent_dim < 1:
            raise DatasetError("all synthetic counts must be >= 1")
        if any(d < 1 for d in self.dims) or not self.dims:
            raise DatasetError(f"degenerate modality dims: {self.dims}")
        if self.noise_scale <= 0:
            raise DatasetError("noise scale must be > 0")
        if not 0.0 <= self.cross_modality_correlation <= 1.0:
            raise DatasetError("cross-modality correlation must lie in [0, 1]")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate a labelled multi-modal dataset, deterministic under the seed."""
    rng = np.random.default_rng(spec.seed)
    m, per, q = spec.num_landmarks, spec.images_per_landmark, spec.latent_dim
    n = m * per
    centers = rng.standard_normal((m, q))
    maps = [rng.standard_normal((d, q)) / np.sqrt(q) for d in spec.dims]
    shared = rng.standard_normal((n, q))
    labels = np.repeat(np.arange(1, m + 1), per)

    corr = spec.cross_modality_correlation
    private_w = np.sqrt(1.0 - corr**2)
    modalities = []
    for p, a in enumerate(maps, start=1):
        private = rng.standard_normal((n, q))
        latent = centers[labels - 1] + spec.noise_scale * (corr * shared + private_w * private)
        modalities.append(ModalityFeatures(modality_id=p, data=a @ latent.T, name=f"synthetic{p}"))
    return Dataset(modalities=modalities, labels=labels)
