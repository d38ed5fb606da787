"""Context-attribute schema, folder-name codec, protocol splits and the synthetic catalog.

Records are kept column-wise: one small-int attribute matrix plus one feature
matrix, so that subsetting and pair indexing stay vectorised.  Per-record
``SampleRecord`` objects are materialised on demand.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class Skin(enum.Enum):
    YELLOW = "Y"
    WHITE = "W"
    BLACK = "B"


class SampleType(enum.IntEnum):
    LIVE = 0
    TRANSPARENT = 1
    PLASTER = 2
    RESIN = 3


class Scene(enum.IntEnum):
    WHITE = 1
    GREEN = 2
    TRICOLOR = 3
    SUNSHINE = 4
    SHADOW = 5
    MOTION = 6


class Lighting(enum.IntEnum):
    NORMAL = 1
    DIM = 2
    BRIGHT = 3
    BACK = 4
    SIDE = 5
    TOP = 6


class Sensor(enum.IntEnum):
    IPHONE11 = 1
    IPHONEX = 2
    MI10 = 3
    P40 = 4
    S20 = 5
    VIVO = 6
    HJIM = 7


SKINS: tuple[Skin, ...] = tuple(Skin)
MASK_TYPES = (1, 2, 3)

# Column layout of Catalog.attrs.
SKIN, SUBJECT, TYPE, SCENE, LIGHT, SENSOR, FRAME = range(7)
COLUMNS = {
    "skin": SKIN,
    "subject": SUBJECT,
    "type": TYPE,
    "scene": SCENE,
    "light": LIGHT,
    "sensor": SENSOR,
    "frame": FRAME,
}


class FolderNameError(ValueError):
    """Raised when a folder name cannot be decoded."""


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Attributes:
    """Full context tuple of one frame."""

    skin: Skin
    subject: int
    sample_type: SampleType
    scene: Scene
    lighting: Lighting
    sensor: Sensor
    frame_index: int = 0

    def __post_init__(self):
        if self.subject < 1 or self.subject > 9999:
            raise ValueError(f"subject id out of range: {self.subject}")
        if self.frame_index < 0:
            raise ValueError(f"negative frame index: {self.frame_index}")

    @property
    def label(self) -> int:
        return int(self.sample_type == SampleType.LIVE)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    attributes: Attributes
    feature: np.ndarray
    label: int


def skin_for_subject(subject: int) -> Skin:
    """Skin tone is a property of the subject; assigned round-robin."""
    return SKINS[(subject - 1) % 3]


def encode_folder_name(attributes: Attributes) -> str:
    a = attributes
    return "_".join(
        [
            a.skin.value,
            f"{a.subject:04d}",
            str(int(a.sample_type)),
            str(int(a.scene)),
            str(int(a.lighting)),
            str(int(a.sensor)),
        ]
    )


def _decode_int(token: str, what: str, position: int) -> int:
    if not token.isdigit():
        raise FolderNameError(f"token {position} ({what}) is not numeric: {token!r}")
    return int(token)


def decode_folder_name(name: str, frame_index: int = 0) -> Attributes:
    """Parse ``Skin_Subject_Type_Scene_Light_Sensor``.

    Raises:
        FolderNameError: naming the offending token.
    """
    tokens = name.split("_")
    if len(tokens) != 6:
        raise FolderNameError(f"expected 6 underscore-separated tokens, got {len(tokens)}: {name!r}")
    skin_tok, subj_tok, type_tok, scene_tok, light_tok, sensor_tok = tokens
    try:
        skin = Skin(skin_tok)
    except ValueError:
        raise FolderNameError(f"token 0 (skin) not one of Y/W/B: {skin_tok!r}") from None
    subject = _decode_int(subj_tok, "subject", 1)
    if subject < 1:
        raise FolderNameError(f"token 1 (subject) must be >= 1: {subj_tok!r}")
    decoded = []
    for pos, (tok, what, enum_cls) in enumerate(
        [
            (type_tok, "sample_type", SampleType),
            (scene_tok, "scene", Scene),
            (light_tok, "lighting", Lighting),
            (sensor_tok, "sensor", Sensor),
        ],
        start=2,
    ):
        code = _decode_int(tok, what, pos)
        try:
            decoded.append(enum_cls(code))
        except ValueError:
            raise FolderNameError(f"token {pos} ({what}) code {tok!r} out of range") from None
    return Attributes(skin, subject, *decoded, frame_index=frame_index)


# --------------------------------------------------------------------------
# Catalog


@dataclass
class Catalog:
    """Ordered collection of frames with their context attributes and features.

    ``attrs`` columns follow SKIN, SUBJECT, TYPE, SCENE, LIGHT, SENSOR, FRAME;
    skin is stored as an index into ``SKINS``.
    """

    attrs: np.ndarray
    features: np.ndarray
    generator_seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.attrs = np.ascontiguousarray(self.attrs, dtype=np.int64)
        if self.attrs.ndim != 2 or self.attrs.shape[1] != 7:
            raise CatalogError("attrs must have shape (R, 7)")
        if self.features.ndim != 2 or self.features.shape[0] != self.attrs.shape[0]:
            raise CatalogError("features must have shape (R, d)")

    def __len__(self) -> int:
        return self.attrs.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return (self.attrs[:, TYPE] == SampleType.LIVE).astype(np.int64)

    @property
    def subjects(self) -> np.ndarray:
        return np.unique(self.attrs[:, SUBJECT])

    def attributes(self, i: int) -> Attributes:
        row = self.attrs[i]
        return Attributes(
            SKINS[row[SKIN]],
            int(row[SUBJECT]),
            SampleType(int(row[TYPE])),
            Scene(int(row[SCENE])),
            Lighting(int(row[LIGHT])),
            Sensor(int(row[SENSOR])),
            int(row[FRAME]),
        )

    def folder_name(self, i: int) -> str:
        return encode_folder_name(self.attributes(i))

    def sample_id(self, i: int) -> str:
        return f"{self.folder_name(i)}-{int(self.attrs[i, FRAME]):02d}"

    def sample_ids(self) -> list[str]:
        return [self.sample_id(i) for i in range(len(self))]

    def __getitem__(self, i: int) -> SampleRecord:
        a = self.attributes(i)
        return SampleRecord(self.sample_id(i), a, self.features[i], a.label)

    def subset(self, index) -> "Catalog":
        index = np.asarray(index)
        return Catalog(self.attrs[index], self.features[index], self.generator_seed, dict(self.meta))

    def select(
        self,
        subjects: Iterable[int] | None = None,
        mask_types: Iterable[int] | None = None,
        scenes: Iterable[int] | None = None,
        lights: Iterable[int] | None = None,
    ) -> "Catalog":
        """Filter rows; live samples are always kept by the mask-type filter."""
        keep = np.ones(len(self), dtype=bool)
        if subjects is not None:
            keep &= np.isin(self.attrs[:, SUBJECT], list(subjects))
        if mask_types is not None:
            types = self.attrs[:, TYPE]
            keep &= (types == SampleType.LIVE) | np.isin(types, list(mask_types))
        if scenes is not None:
            keep &= np.isin(self.attrs[:, SCENE], list(scenes))
        if lights is not None:
            keep &= np.isin(self.attrs[:, LIGHT], list(lights))
        return self.subset(np.flatnonzero(keep))

    def video_ids(self) -> np.ndarray:
        """Integer id per row, shared by frames of the same video."""
        _, inverse = np.unique(self.attrs[:, :FRAME], axis=0, return_inverse=True)
        return inverse.reshape(-1)

    def validate(self) -> None:
        ids = self.sample_ids()
        if len(set(ids)) != len(ids):
            raise CatalogError("duplicate sample ids")
        _, counts = np.unique(self.attrs[:, :FRAME], axis=0, return_counts=True)
        if counts.size and counts.min() < 2:
            raise CatalogError("every video needs at least 2 frames")


# --------------------------------------------------------------------------
# Synthetic generator


@dataclass(frozen=True)
class SynthConfig:
    """Settings of the synthetic stand-in for the real dataset.

    Each feature is ``material_weight * e(type) + subject_weight * u(subject)
    + context_weight * v(scene, light, sensor) + noise * eps``.  The mask
    material vectors sit at ``severity * a + spread * b_type`` with ``a`` a
    shared attack axis; transparent masks get the smallest severity.
    """

    subjects: int = 75
    frames: int = 2
    dim: int = 64
    material_weight: float = 1.0
    subject_weight: float = 1.0
    context_weight: float = 1.0
    noise: float = 0.5
    # Strength of the context-dependent linear distortion of the material signal.
    interaction: float = 0.0
    severity: tuple[float, float, float] = (0.35, 0.6, 0.6)
    spread: float = 0.5
    types: tuple[int, ...] = (0, 1, 2, 3)
    scenes: tuple[int, ...] = tuple(int(s) for s in Scene)
    lights: tuple[int, ...] = tuple(int(s) for s in Lighting)
    sensors: tuple[int, ...] = tuple(int(s) for s in Sensor)

    def __post_init__(self):
        if self.subjects < 1 or self.frames < 1 or self.dim < 1:
            raise ValueError("subjects, frames and dim must be positive")
        if not (self.types and self.scenes and self.lights and self.sensors):
            raise ValueError("attribute grid must be non-empty")

    @property
    def size(self) -> int:
        return (
            self.subjects
            * len(self.types)
            * len(self.scenes)
            * len(self.lights)
            * len(self.sensors)
            * self.frames
        )


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def synth_catalog(config: SynthConfig = SynthConfig(), seed: int = 0) -> Catalog:
    """Generate a deterministic synthetic catalog over the attribute grid."""
    rng = np.random.default_rng(seed)
    d = config.dim
    # Draw all latent vectors for the full enum ranges so that restricting the
    # grid does not change the vectors of the remaining attribute values.
    attack_axis = _unit_rows(rng, 1, d)[0]
    type_axes = _unit_rows(rng, 3, d)
    subject_vecs = rng.standard_normal((config.subjects, d)) / math.sqrt(d)
    scene_vecs = rng.standard_normal((len(Scene), d)) / math.sqrt(d)
    light_vecs = rng.standard_normal((len(Lighting), d)) / math.sqrt(d)
    sensor_vecs = rng.standard_normal((len(Sensor), d)) / math.sqrt(d)

    material = np.zeros((4, d))
    for k in range(1, 4):
        material[k] = config.severity[k - 1] * attack_axis + config.spread * type_axes[k - 1]

    grid = np.array(
        np.meshgrid(
            np.arange(1, config.subjects + 1),
            np.asarray(config.types),
            np.asarray(config.scenes),
            np.asarray(config.lights),
            np.asarray(config.sensors),
            np.arange(config.frames),
            indexing="ij",
        )
    ).reshape(6, -1).T
    subj, typ, scene, light, sensor, frame = grid.T
    skin = (subj - 1) % 3
    attrs = np.column_stack([skin, subj, typ, scene, light, sensor, frame])

    signal = material[typ]
    if config.interaction:
        # Separate stream: the additive latents and noise do not depend on it.
        mix_rng = np.random.default_rng([seed, 1])
        mix_scene = mix_rng.standard_normal((len(Scene), d, d)) / math.sqrt(d)
        mix_light = mix_rng.standard_normal((len(Lighting), d, d)) / math.sqrt(d)
        mix_sensor = mix_rng.standard_normal((len(Sensor), d, d)) / math.sqrt(d)
        # Context-specific appearance of each material: (I + k * A_ctx) e(type),
        # evaluated once per (type, scene, light, sensor) cell.
        cells, inverse = np.unique(np.column_stack([typ, scene, light, sensor]), axis=0, return_inverse=True)
        cell_signal = np.empty((len(cells), d))
        for j, (ty, sc, li, se) in enumerate(cells):
            mix = (mix_scene[sc - 1] + mix_light[li - 1] + mix_sensor[se - 1]) / math.sqrt(3.0)
            cell_signal[j] = material[ty] + config.interaction * mix @ material[ty]
        signal = cell_signal[inverse.reshape(-1)]
    context = (scene_vecs[scene - 1] + light_vecs[light - 1] + sensor_vecs[sensor - 1]) / math.sqrt(3.0)
    noise = rng.standard_normal((len(attrs), d)) / math.sqrt(d)
    features = (
        config.material_weight * signal
        + config.subject_weight * subject_vecs[subj - 1]
        + config.context_weight * context
        + config.noise * noise
    )
    meta = {"synth": _config_to_meta(config)}
    return Catalog(attrs, features.astype(np.float32), generator_seed=seed, meta=meta)


def _config_to_meta(config: SynthConfig) -> dict:
    out = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


# --------------------------------------------------------------------------
# Protocols

PROTOCOL_IDS = ("P1", "P2_1", "P2_2", "P2_3", "P3")
CANONICAL_SUBJECTS = (45, 6, 24)

# Representative subset used for Protocol 3 train/dev; configurable.
P3_DEFAULT_SCENES = (int(Scene.WHITE), int(Scene.SUNSHINE))
P3_DEFAULT_LIGHTS = (int(Lighting.NORMAL), int(Lighting.DIM), int(Lighting.BRIGHT))


@dataclass(frozen=True)
class ProtocolSplit:
    protocol_id: str
    train: frozenset[int]
    dev: frozenset[int]
    test: frozenset[int]
    train_mask_types: frozenset[int]
    dev_mask_types: frozenset[int]
    test_mask_types: frozenset[int]
    # None means unrestricted.
    train_scenes: tuple[int, ...] | None = None
    train_lights: tuple[int, ...] | None = None

    def subjects(self, subset: str) -> frozenset[int]:
        return {"train": self.train, "dev": self.dev, "test": self.test}[subset]

    def mask_types(self, subset: str) -> frozenset[int]:
        return {
            "train": self.train_mask_types,
            "dev": self.dev_mask_types,
            "test": self.test_mask_types,
        }[subset]

    def apply(self, catalog: Catalog, subset: str) -> Catalog:
        """Rows of ``catalog`` belonging to ``subset`` ('train', 'dev' or 'test')."""
        restrict = subset in ("train", "dev")
        return catalog.select(
            subjects=self.subjects(subset),
            mask_types=self.mask_types(subset),
            scenes=self.train_scenes if restrict else None,
            lights=self.train_lights if restrict else None,
        )


def split_sizes(n_subjects: int) -> tuple[int, int, int]:
    """Train/dev/test subject counts; floor-proportional 45:6:24, remainder to train."""
    total = sum(CANONICAL_SUBJECTS)
    dev = n_subjects * CANONICAL_SUBJECTS[1] // total
    test = n_subjects * CANONICAL_SUBJECTS[2] // total
    train = n_subjects - dev - test
    if min(train, dev, test) < 1:
        raise CatalogError(f"{n_subjects} subjects cannot form three non-empty partitions")
    return train, dev, test


def build_protocol_split(
    protocol_id: str,
    catalog: Catalog,
    seed: int = 0,
    p3_scenes: Sequence[int] = P3_DEFAULT_SCENES,
    p3_lights: Sequence[int] = P3_DEFAULT_LIGHTS,
) -> ProtocolSplit:
    if protocol_id not in PROTOCOL_IDS:
        raise CatalogError(f"unknown protocol {protocol_id!r}; expected one of {PROTOCOL_IDS}")
    subjects = np.sort(catalog.subjects)
    n_train, n_dev, _ = split_sizes(len(subjects))
    # Independent of protocol id so that P1/P2/P3 share one subject partition.
    perm = np.random.default_rng(seed).permutation(subjects)
    train = frozenset(int(s) for s in perm[:n_train])
    dev = frozenset(int(s) for s in perm[n_train : n_train + n_dev])
    test = frozenset(int(s) for s in perm[n_train + n_dev :])

    all_types = frozenset(MASK_TYPES)
    scenes = lights = None
    if protocol_id == "P1":
        tr = dv = te = all_types
    elif protocol_id.startswith("P2_"):
        held_out = int(protocol_id[-1])
        tr = dv = all_types - {held_out}
        te = frozenset({held_out})
    else:
        tr = dv = frozenset({1, 3})
        te = all_types
        scenes, lights = tuple(p3_scenes), tuple(p3_lights)
    return ProtocolSplit(protocol_id, train, dev, test, tr, dv, te, scenes, lights)


# --------------------------------------------------------------------------
# Persistence

FEATURE_MAGIC = b"CCLF"
_FEATURE_HEADER = struct.Struct("<4sII")
INDEX_NAME = "index.csv"
META_NAME = "catalog.json"
FEATURE_FILE = "features.f32"


def write_feature_file(path: Path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    count, d = features.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, d, count))
        fh.write(features.tobytes())


def read_feature_file(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, d, count = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise CatalogError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(raw, dtype="<f4", offset=_FEATURE_HEADER.size)
    if body.size != d * count:
        raise CatalogError(f"{path}: expected {d * count} floats, found {body.size}")
    return body.reshape(count, d).astype(np.float32)


def save_catalog(catalog: Catalog, directory: str | Path) -> Path:
    """Write one folder per video plus ``index.csv`` and ``catalog.json``.

    Index lines: ``sample_id,folder,frame,label,feature_ref`` where
    ``feature_ref`` is ``<folder>/features.f32#<row>``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    videos = catalog.video_ids()
    order = np.lexsort((catalog.attrs[:, FRAME], videos))
    lines = ["sample_id,folder,frame,label,feature_ref"]
    labels = catalog.labels
    start = 0
    while start < len(order):
        stop = start
        vid = videos[order[start]]
        while stop < len(order) and videos[order[stop]] == vid:
            stop += 1
        rows = order[start:stop]
        folder = catalog.folder_name(int(rows[0]))
        (directory / folder).mkdir(exist_ok=True)
        write_feature_file(directory / folder / FEATURE_FILE, catalog.features[rows])
        for j, r in enumerate(rows):
            frame = int(catalog.attrs[r, FRAME])
            lines.append(f"{folder}-{frame:02d},{folder},{frame},{labels[r]},{folder}/{FEATURE_FILE}#{j}")
        start = stop
    (directory / INDEX_NAME).write_text("\n".join(lines) + "\n")
    meta = {"generator_seed": catalog.generator_seed, "dim": catalog.dim, "count": len(catalog), **catalog.meta}
    (directory / META_NAME).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return directory


def load_catalog(directory: str | Path) -> Catalog:
    directory = Path(directory)
    meta = json.loads((directory / META_NAME).read_text())
    lines = (directory / INDEX_NAME).read_text().splitlines()[1:]
    attrs = np.empty((len(lines), 7), dtype=np.int64)
    features = np.empty((len(lines), meta["dim"]), dtype=np.float32)
    cache: dict[str, np.ndarray] = {}
    for i, line in enumerate(lines):
        sample_id, folder, frame, label, ref = line.split(",")
        a = decode_folder_name(folder, int(frame))
        if a.label != int(label):
            raise CatalogError(f"{sample_id}: label {label} inconsistent with folder name")
        attrs[i] = (SKINS.index(a.skin), a.subject, a.sample_type, a.scene, a.lighting, a.sensor, a.frame_index)
        path, row = ref.rsplit("#", 1)
        if path not in cache:
            cache = {path: read_feature_file(directory / path)}
        features[i] = cache[path][int(row)]
    seed = int(meta.pop("generator_seed"))
    for key in ("dim", "count"):
        meta.pop(key)
    return Catalog(attrs, features, generator_seed=seed, meta=meta)
