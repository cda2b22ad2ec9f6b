"""Labelled synthetic datasets: pose sampling, rendering, splits and manifests.

A manifest is line-delimited JSON.  The first record is a header carrying
the dataset spec and a SHA-256 per label set; every following record
describes one image (relative PGM path, pixel hash, pose, label ids,
noise variance, offset, split).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .posespace import (
    CameraPose,
    DiscretizationSpec,
    LabelIndex,
    PoseLabel,
    camera_attitude_for,
    generate_labels,
    labels_checksum,
)
from .renderer import (
    CameraIntrinsics,
    LightingSpec,
    TargetModel,
    add_gaussian_noise,
    apply_offset,
    encode_pgm,
    make_mock_spacecraft,
    read_pgm,
    render,
)
from .rotmath import Quaternion, hamilton_product, quat_from_axis_angle

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "pose-forge-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "validation", "test")
_ENTRY_FIELDS = ("index", "image", "sha256", "attitude", "position", "labels", "noise_var", "offset", "split")


class ManifestError(ValueError):
    pass


class ManifestIntegrityError(ManifestError):
    pass


@dataclass(frozen=True)
class PoseSampling:
    """How image poses are drawn.

    ``on-grid``: image ``i`` takes label ``i mod L`` and perturbs its attitude
    about a uniform random axis by an angle uniform in ``[0, jitter_deg]``.
    ``random``: viewpoint uniform on the sphere, roll uniform in [0, 360),
    range uniform in ``radius_range`` (defaults to the label range span).
    """

    mode: str = "on-grid"
    count: int = 0
    jitter_deg: float = 0.0
    radius_range: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("on-grid", "random"):
            raise ValueError(f"unknown pose sampling mode {self.mode!r}")
        if self.count < 1:
            raise ValueError("image count must be at least 1")
        if self.jitter_deg < 0:
            raise ValueError("jitter_deg must be non-negative")

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "count": self.count, "jitter_deg": self.jitter_deg}
        if self.radius_range is not None:
            d["radius_range"] = list(self.radius_range)
        return d


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    poses: PoseSampling
    label_set: str = "labels"
    noise_variance: float = 0.0
    offset: tuple | None = None
    split_ratios: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    discretization: DiscretizationSpec | None = None

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.split_ratios)
        object.__setattr__(self, "split_ratios", ratios)
        if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be 3 non-negative values summing to 1, got {ratios}")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        if self.offset is not None:
            off = tuple(float(x) for x in self.offset)
            if len(off) != 3:
                raise ValueError("offset must be a 3-vector")
            object.__setattr__(self, "offset", off)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "label_set": self.label_set,
            "poses": self.poses.to_dict(),
            "noise_variance": self.noise_variance,
            "offset": list(self.offset) if self.offset is not None else None,
            "split_ratios": list(self.split_ratios),
            "seed": self.seed,
            "discretization": self.discretization.to_dict() if self.discretization else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        p = d["poses"]
        rr = p.get("radius_range")
        disc = d.get("discretization")
        return cls(
            name=d["name"],
            label_set=d.get("label_set", "labels"),
            poses=PoseSampling(
                mode=p.get("mode", "on-grid"),
                count=int(p["count"]),
                jitter_deg=float(p.get("jitter_deg", 0.0)),
                radius_range=tuple(rr) if rr is not None else None,
            ),
            noise_variance=float(d.get("noise_variance", 0.0)),
            offset=tuple(d["offset"]) if d.get("offset") is not None else None,
            split_ratios=tuple(d.get("split_ratios", (0.6, 0.2, 0.2))),
            seed=int(d.get("seed", 0)),
            discretization=DiscretizationSpec.from_dict(disc) if disc else None,
        )


@dataclass
class ManifestEntry:
    index: int
    image: str
    sha256: str
    pose: CameraPose
    labels: dict
    noise_var: float
    offset: tuple | None
    split: str

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "image": self.image,
            "sha256": self.sha256,
            "attitude": self.pose.attitude.as_list(),
            "position": [float(x) for x in self.pose.position],
            "labels": dict(self.labels),
            "noise_var": self.noise_var,
            "offset": list(self.offset) if self.offset is not None else None,
            "split": self.split,
        }


@dataclass
class DatasetManifest:
    spec: dict
    label_sets: dict
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = field(default=None, compare=False)

    @property
    def primary_label_set(self) -> str:
        return self.spec.get("label_set") or next(iter(self.label_sets))

    def select(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def image_path(self, entry: ManifestEntry) -> Path:
        return (self.root or Path(".")) / entry.image


# -- pose sampling ---------------------------------------------------------------


def min_label_gap(labels: Sequence[PoseLabel]) -> float:
    """Smallest attitude separation (degrees) between labels sharing a range."""
    gap = math.inf
    ranges = np.array([lab.range for lab in labels])
    for r in np.unique(ranges):
        q = np.array([labels[i].attitude.as_array() for i in np.flatnonzero(ranges == r)])
        if len(q) < 2:
            continue
        dots = np.clip(np.abs(q @ q.T), 0.0, 1.0)
        np.fill_diagonal(dots, 0.0)
        gap = min(gap, math.degrees(2.0 * math.acos(dots.max())))
    return gap


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def sample_pose(spec: DatasetSpec, index: int, labels: Sequence[PoseLabel], jitter_deg: float) -> CameraPose:
    rng = np.random.default_rng([spec.seed, index, 0])
    ps = spec.poses
    if ps.mode == "on-grid":
        lab = labels[index % len(labels)]
        axis = _random_unit(rng)
        angle = rng.uniform(0.0, jitter_deg)
        q = lab.attitude
        if angle > 0:
            j = quat_from_axis_angle((axis, angle))
            q = Quaternion.from_array(hamilton_product(q.as_array(), j.as_array()), normalize=True)
        pose = CameraPose(q, np.array([0.0, 0.0, lab.range]))
    else:
        ranges = [lab.range for lab in labels]
        lo, hi = ps.radius_range if ps.radius_range is not None else (min(ranges), max(ranges))
        viewpoint = _random_unit(rng)
        roll = rng.uniform(0.0, 360.0)
        radius = rng.uniform(lo, hi)
        pose = CameraPose(camera_attitude_for(viewpoint, roll), np.array([0.0, 0.0, radius]))
    if spec.offset is not None:
        pose = apply_offset(pose, spec.offset)
    return pose


# -- build -----------------------------------------------------------------------


def _as_label_sets(labels, spec: DatasetSpec) -> dict[str, list[PoseLabel]]:
    if labels is None:
        if spec.discretization is None:
            raise ValueError("no label set supplied and the spec has no discretization")
        labels = generate_labels(spec.discretization)
    if isinstance(labels, Mapping):
        sets = {k: list(v) for k, v in labels.items()}
    else:
        sets = {spec.label_set: list(labels)}
    if spec.label_set not in sets:
        raise ValueError(f"primary label set {spec.label_set!r} not among {list(sets)}")
    for name, labs in sets.items():
        if not labs:
            raise ValueError(f"label set {name!r} is empty")
    return sets


def build_dataset(
    spec: DatasetSpec,
    labels=None,
    model: TargetModel | None = None,
    intrinsics: CameraIntrinsics | None = None,
    lighting: LightingSpec | None = None,
    out_dir=None,
    threads: int = 1,
) -> DatasetManifest:
    """Sample poses, render, add noise, assign labels and split.

    ``labels`` is one label list or a mapping of named label sets; the spec's
    ``label_set`` names the one driving pose sampling and stratified splits.
    With ``out_dir`` the PGM images and ``manifest.jsonl`` are written there.
    """
    sets = _as_label_sets(labels, spec)
    primary = sets[spec.label_set]
    indexes = {name: LabelIndex(labs) for name, labs in sets.items()}
    model = model or make_mock_spacecraft()
    intrinsics = intrinsics or CameraIntrinsics()
    lighting = lighting or LightingSpec()

    jitter = spec.poses.jitter_deg
    if spec.poses.mode == "on-grid" and jitter > 0:
        cap = 0.5 * min_label_gap(primary)
        if jitter >= cap:
            warnings.warn(f"jitter {jitter} deg capped below half the label gap ({cap:.3f} deg)", stacklevel=2)
            jitter = math.nextafter(cap, 0.0)

    img_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        img_dir = out_dir / "images"
        img_dir.mkdir(parents=True, exist_ok=True)

    def make(i: int) -> ManifestEntry:
        try:
            pose = sample_pose(spec, i, primary, jitter)
            pixels = render(model, pose, intrinsics, lighting)
            pixels = add_gaussian_noise(pixels, spec.noise_variance, seed=[spec.seed, i, 1])
            blob = encode_pgm(pixels)
            rel = f"images/{spec.name}_{i:06d}.pgm"
            if img_dir is not None:
                with open(img_dir / Path(rel).name, "wb") as fh:
                    fh.write(blob)
            ids = {name: idx.assign(pose) for name, idx in indexes.items()}
        except Exception as exc:
            raise RuntimeError(f"dataset {spec.name!r}, image {i}: {exc}") from exc
        return ManifestEntry(i, rel, hashlib.sha256(blob).hexdigest(), pose, ids, spec.noise_variance, spec.offset, "train")

    count = spec.poses.count
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(make, range(count)))
    else:
        entries = [make(i) for i in range(count)]

    manifest = DatasetManifest(
        spec=spec.to_dict(),
        label_sets={name: {"checksum": labels_checksum(labs), "count": len(labs)} for name, labs in sets.items()},
        entries=entries,
        root=out_dir,
    )
    manifest = split(manifest, spec.split_ratios, spec.seed)
    if out_dir is not None:
        write_manifest(manifest, out_dir / "manifest.jsonl")
    log.info("built dataset %s: %d images", spec.name, count)
    return manifest


def split(manifest: DatasetManifest, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetManifest:
    """Stratified train/validation/test assignment by primary label.

    Each label's entries are shuffled; validation and test take
    ``round(ratio * count)`` entries each and the rest go to train.  Labels
    with fewer than 3 entries go entirely to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"invalid split ratios {ratios}")
    name = manifest.primary_label_set
    by_label: dict[int, list[int]] = {}
    for pos, e in enumerate(manifest.entries):
        by_label.setdefault(e.labels[name], []).append(pos)
    assignment = ["train"] * len(manifest.entries)
    for lab in sorted(by_label):
        members = by_label[lab]
        if len(members) < 3:
            warnings.warn(f"label {lab} has {len(members)} entries; all assigned to train", stacklevel=2)
            continue
        rng = np.random.default_rng([seed, lab, 2])
        order = [members[k] for k in rng.permutation(len(members))]
        n_val = int(math.floor(ratios[1] * len(members) + 0.5))
        n_test = int(math.floor(ratios[2] * len(members) + 0.5))
        n_val = min(n_val, len(members))
        n_test = min(n_test, len(members) - n_val)
        for k in order[:n_val]:
            assignment[k] = "validation"
        for k in order[n_val:n_val + n_test]:
            assignment[k] = "test"
    entries = [replace(e, split=s) for e, s in zip(manifest.entries, assignment)]
    return DatasetManifest(dict(manifest.spec), dict(manifest.label_sets), entries, manifest.root)


# -- manifest I/O ----------------------------------------------------------------


def format_manifest(manifest: DatasetManifest) -> str:
    header = {
        "record": "header",
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "spec": manifest.spec,
        "label_sets": manifest.label_sets,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(e.to_record()) for e in manifest.entries]
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_manifest(manifest))


def _parse_entry(rec: dict, lineno: int) -> ManifestEntry:
    missing = [k for k in _ENTRY_FIELDS if k not in rec]
    if missing:
        raise ManifestError(f"record {lineno}: missing field(s) {missing}")
    extra = sorted(set(rec) - set(_ENTRY_FIELDS))
    if extra:
        warnings.warn(f"manifest record {lineno}: ignoring unknown field(s) {extra}", stacklevel=3)
    try:
        pose = CameraPose(Quaternion.from_array(rec["attitude"]), np.array(rec["position"], dtype=float))
        if rec["split"] not in SPLITS:
            raise ValueError(f"unknown split {rec['split']!r}")
        labels = {str(k): int(v) for k, v in rec["labels"].items()}
        offset = tuple(float(x) for x in rec["offset"]) if rec["offset"] is not None else None
        return ManifestEntry(int(rec["index"]), str(rec["image"]), str(rec["sha256"]), pose, labels, float(rec["noise_var"]), offset, rec["split"])
    except (TypeError, ValueError, AttributeError) as exc:
        raise ManifestError(f"record {lineno}: {exc}") from None


def read_manifest(path, verify: bool = False) -> DatasetManifest:
    """Parse a manifest; ``verify`` re-hashes every referenced image."""
    path = Path(path)
    header = None
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"record {lineno}: invalid JSON ({exc})") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"record {lineno}: expected a JSON object")
            if header is None:
                if rec.get("record") != "header" or rec.get("format") != MANIFEST_FORMAT:
                    raise ManifestError(f"record {lineno}: missing manifest header")
                if rec.get("version") != MANIFEST_VERSION:
                    raise ManifestError(f"record {lineno}: unsupported manifest version {rec.get('version')}")
                header = rec
                continue
            entries.append(_parse_entry(rec, lineno))
    if header is None:
        raise ManifestError(f"{path}: empty manifest")
    manifest = DatasetManifest(header["spec"], header["label_sets"], entries, path.parent)
    if verify:
        verify_manifest(manifest)
    return manifest


def verify_manifest(manifest: DatasetManifest) -> None:
    for e in manifest.entries:
        p = manifest.image_path(e)
        if not p.exists():
            raise ManifestIntegrityError(f"image {e.image} (entry {e.index}) is missing")
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        if digest != e.sha256:
            raise ManifestIntegrityError(f"image {e.image} (entry {e.index}) does not match its recorded hash")


# -- loading for training ----------------------------------------------------------


def load_images(manifest: DatasetManifest, entries: Sequence[ManifestEntry]) -> list[np.ndarray]:
    return [read_pgm(manifest.image_path(e)) for e in entries]


def load_split(manifest: DatasetManifest, split_name: str, input_side: int = 64, with_flip: bool = False, label_set: str | None = None):
    """Features, labels (and mirrored features) of one split, in entry order."""
    from .classifier import preprocess_batch

    label_set = label_set or manifest.primary_label_set
    entries = manifest.select(split_name)
    images = load_images(manifest, entries)
    X = preprocess_batch(images, input_side)
    y = np.array([e.labels[label_set] for e in entries], dtype=np.int64)
    X_flip = preprocess_batch(images, input_side, flip=True) if with_flip else None
    return X, y, X_flip

