"""Deterministic software rasterizer for grayscale target images.

Pinhole camera, flat-shaded Lambertian triangles, z-buffer visibility and
back-face culling, black background.  Sampling happens once per pixel at the
pixel center: pixel ``(row, col)`` samples image-plane point
``(col + 0.5, row + 0.5)`` and the principal point sits at
``(width / 2, height / 2)``, top-left origin.  A pixel is covered when all
three barycentric weights are ``>= 0``; on a depth tie the earlier triangle
in model order wins.  Shaded values are rounded to multiples of 1/255.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .posespace import CameraPose
from .rotmath import quat_to_rotmat

NEAR_CLIP = 1e-3
MAX_MODEL_RADIUS = 1.5
DEFAULT_ALBEDO = 0.7


class RenderError(RuntimeError):
    pass


class MeshFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


@dataclass
class TargetModel:
    vertices: np.ndarray
    triangles: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.albedo = np.asarray(self.albedo, dtype=float).reshape(-1)
        if len(self.albedo) != len(self.triangles):
            raise ValueError("need exactly one albedo per triangle")
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle vertex index out of range")
            bad = np.flatnonzero(self.areas() <= 1e-12)
            if bad.size:
                raise ValueError(f"degenerate triangle(s) at index {bad.tolist()}")
        if np.any((self.albedo < 0) | (self.albedo > 1)):
            raise ValueError("albedo values must lie in [0, 1]")

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def normals(self) -> np.ndarray:
        """Outward unit normals, counter-clockwise winding seen from outside."""
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def bounding_radius(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))


@dataclass(frozen=True)
class CameraIntrinsics:
    fov_deg: float = 31.5
    width: int = 227
    height: int = 227

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"field of view must be in (0, 180) degrees, got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def focal_px(self) -> float:
        """Focal length in pixels, from the vertical field of view."""
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


@dataclass(frozen=True)
class LightingSpec:
    direction: tuple = (-0.5, -0.3, -0.8)
    intensity: float = 0.8
    ambient: float = 0.1

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if d.shape != (3,) or n == 0:
            raise ValueError("light direction must be a non-zero 3-vector")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / n))
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError("intensity must lie in (0, 1]")
        if not 0.0 <= self.ambient < 1.0:
            raise ValueError("ambient must lie in [0, 1)")
        if self.intensity + self.ambient > 1.0 + 1e-12:
            raise ValueError("intensity + ambient must not exceed 1")

    def to_dict(self) -> dict:
        return {"direction": list(self.direction), "intensity": self.intensity, "ambient": self.ambient}


@dataclass
class ImageSample:
    pixels: np.ndarray
    pose: CameraPose
    label_ids: dict = field(default_factory=dict)
    noise_var: float = 0.0
    offset: tuple | None = None
    split: str = "train"


# -- models --------------------------------------------------------------------


def _box(lo, hi):
    """Closed box as 12 outward-facing triangles."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array(
        [
            [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
            [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
        ]
    )
    faces = [
        (0, 3, 2), (0, 2, 1),  # -z
        (4, 5, 6), (4, 6, 7),  # +z
        (0, 1, 5), (0, 5, 4),  # -y
        (3, 7, 6), (3, 6, 2),  # +y
        (0, 4, 7), (0, 7, 3),  # -x
        (1, 2, 6), (1, 6, 5),  # +x
    ]
    return v, np.array(faces)


def _merge(parts):
    verts, tris, alb = [], [], []
    offset = 0
    for v, t, a in parts:
        verts.append(v)
        tris.append(t + offset)
        alb.append(np.broadcast_to(np.asarray(a, dtype=float), (len(t),)))
        offset += len(v)
    return TargetModel(np.concatenate(verts), np.concatenate(tris), np.concatenate(alb))


def make_mock_spacecraft() -> TargetModel:
    """Asymmetric stand-in target: bus, one solar panel on +x, one boom on top.

    Bus 0.8 x 0.75 x 0.3 m centred on the origin, with a darker top face;
    panel 0.5 x 0.75 m (2 cm thick) off the +x side, raised toward +z; a
    5 cm square boom rising 0.6 m from the top near the -x/+y corner.
    """
    bus_v, bus_t = _box((-0.4, -0.375, -0.15), (0.4, 0.375, 0.15))
    bus_alb = np.full(len(bus_t), 0.7)
    bus_alb[2:4] = 0.5  # top face
    bus_alb[4:6] = 0.85  # -y face
    panel_v, panel_t = _box((0.4, -0.375, 0.08), (0.9, 0.375, 0.1))
    boom_v, boom_t = _box((-0.3, 0.2, 0.15), (-0.25, 0.25, 0.75))
    return _merge(
        [
            (bus_v, bus_t, bus_alb),
            (panel_v, panel_t, 0.25),
            (boom_v, boom_t, 0.95),
        ]
    )


def make_box_model(size=(0.6, 0.6, 0.6), albedo: float = 0.7) -> TargetModel:
    """Origin-centred box; handy as a symmetric reference target."""
    half = np.asarray(size, dtype=float) / 2.0
    v, t = _box(-half, half)
    return TargetModel(v, t, np.full(len(t), albedo))


def load_mesh(path) -> TargetModel:
    """Read the OBJ subset used for targets.

    Supported records: ``v x y z`` and ``f i j k ...`` (1-based, ``i/...``
    forms allowed, polygons fan-triangulated).  A face may carry its albedo
    as a trailing comment, ``f 1 2 3 # albedo=0.4``; otherwise 0.7 is used.
    Other records are ignored.
    """
    verts, tris, albs = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            body, _, comment = raw.partition("#")
            parts = body.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(path, lineno, "vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(path, lineno, f"bad vertex coordinate in {raw.strip()!r}") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshFormatError(path, lineno, "face needs at least 3 vertices")
                try:
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError:
                    raise MeshFormatError(path, lineno, f"bad face index in {raw.strip()!r}") from None
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if any(i < 0 or i >= len(verts) for i in idx):
                    raise MeshFormatError(path, lineno, f"face index out of range (have {len(verts)} vertices)")
                albedo = DEFAULT_ALBEDO
                comment = comment.strip()
                if comment.startswith("albedo="):
                    try:
                        albedo = float(comment[len("albedo="):])
                    except ValueError:
                        raise MeshFormatError(path, lineno, "bad albedo value") from None
                for k in range(1, len(idx) - 1):
                    tri = [idx[0], idx[k], idx[k + 1]]
                    a, b, c = (np.array(verts[i]) for i in tri)
                    if 0.5 * np.linalg.norm(np.cross(b - a, c - a)) <= 1e-12:
                        raise MeshFormatError(path, lineno, "degenerate triangle")
                    tris.append(tri)
                    albs.append(albedo)
    return TargetModel(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3), np.array(albs))


def write_mesh(model: TargetModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# pose-forge target mesh\n")
        for v in model.vertices:
            fh.write("v {:.9f} {:.9f} {:.9f}\n".format(*v))
        for t, a in zip(model.triangles, model.albedo):
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1} # albedo={float(a)!r}\n")


# -- rendering -----------------------------------------------------------------


def render(
    model: TargetModel,
    pose: CameraPose,
    intr: CameraIntrinsics | None = None,
    light: LightingSpec | None = None,
) -> np.ndarray:
    """Render ``model`` seen from ``pose``; returns ``(height, width)`` floats in [0, 1].

    Shading per triangle is ``albedo * (ambient + intensity * max(0, n . -light))``.
    Triangles with any vertex closer than 1 mm to the camera plane are
    dropped; a model lying wholly behind the camera raises RenderError.
    """
    intr = intr or CameraIntrinsics()
    light = light or LightingSpec()
    H, W = intr.height, intr.width
    image = np.zeros((H, W))
    if len(model.triangles) == 0:
        return image
    if model.bounding_radius > MAX_MODEL_RADIUS:
        warnings.warn(
            f"target bounding radius {model.bounding_radius:.3f} m exceeds {MAX_MODEL_RADIUS} m",
            stacklevel=2,
        )

    R = quat_to_rotmat(pose.attitude)
    cam_body = -R @ pose.position
    verts_cam = model.vertices @ R + pose.position  # R.T @ v for every row
    if np.all(verts_cam[:, 2] <= 0.0):
        raise RenderError("target is entirely behind the camera")

    normals = model.normals()
    tv = model.vertices[model.triangles]
    facing = np.einsum("ij,ij->i", normals, cam_body - tv[:, 0]) > 0.0
    lit = np.maximum(0.0, normals @ -np.asarray(light.direction))
    shade = np.clip(model.albedo * (light.ambient + light.intensity * lit), 0.0, 1.0)

    f = intr.focal_px
    cx, cy = W / 2.0, H / 2.0
    z = verts_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        su = cx + f * verts_cam[:, 0] / z
        sv = cy + f * verts_cam[:, 1] / z

    inv_depth = np.zeros((H, W))
    for t in np.flatnonzero(facing):
        i0, i1, i2 = model.triangles[t]
        zs = z[[i0, i1, i2]]
        if zs.min() < NEAR_CLIP:
            continue
        xs = su[[i0, i1, i2]]
        ys = sv[[i0, i1, i2]]
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue
        c0 = max(int(math.floor(xs.min() - 0.5)), 0)
        c1 = min(int(math.ceil(xs.max() - 0.5)), W - 1)
        r0 = max(int(math.floor(ys.min() - 0.5)), 0)
        r1 = min(int(math.ceil(ys.max() - 0.5)), H - 1)
        if c0 > c1 or r0 > r1:
            continue
        px = np.arange(c0, c1 + 1) + 0.5
        py = (np.arange(r0, r1 + 1) + 0.5)[:, None]
        w0 = ((xs[2] - xs[1]) * (py - ys[1]) - (px - xs[1]) * (ys[2] - ys[1])) / area
        w1 = ((xs[0] - xs[2]) * (py - ys[2]) - (px - xs[2]) * (ys[0] - ys[2])) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        iz = w0 / zs[0] + w1 / zs[1] + w2 / zs[2]
        win = (slice(r0, r1 + 1), slice(c0, c1 + 1))
        closer = inside & (iz > inv_depth[win])
        inv_depth[win][closer] = iz[closer]
        image[win][closer] = shade[t]
    return np.round(image * 255.0) / 255.0


def apply_offset(pose: CameraPose, offset) -> CameraPose:
    """Place the target origin at ``offset`` in camera coordinates, keeping the attitude.

    ``offset`` is ``(x, y, z)`` in meters: lateral image-right, image-down, and
    range along the boresight.
    """
    t = np.asarray(offset, dtype=float).reshape(3)
    if t[2] <= 0.0:
        raise ValueError(f"offset places the target behind the camera (z = {t[2]})")
    return CameraPose(pose.attitude, t)


def add_gaussian_noise(pixels, variance: float, seed=0) -> np.ndarray:
    """Zero-mean white Gaussian noise of the given variance, clamped to [0, 1].

    Draws use a standard-normal field scaled by ``sqrt(variance)``, so one seed
    gives the same noise pattern at every variance.
    """
    if variance < 0:
        raise ValueError("noise variance must be non-negative")
    pixels = np.asarray(pixels, dtype=float)
    if variance == 0:
        return pixels.copy()
    rng = np.random.default_rng(seed)
    noisy = pixels + math.sqrt(variance) * rng.standard_normal(pixels.shape)
    return np.clip(noisy, 0.0, 1.0)


def hflip(pixels) -> np.ndarray:
    """Mirror about the vertical axis."""
    return np.ascontiguousarray(np.asarray(pixels)[..., ::-1])


# -- PGM -------------------------------------------------------------------------


def to_uint8(pixels) -> np.ndarray:
    return np.round(np.clip(np.asarray(pixels, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(pixels) -> bytes:
    data = to_uint8(pixels)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def write_pgm(path, pixels) -> bytes:
    """Write binary PGM (P5, maxval 255); returns the encoded bytes."""
    blob = encode_pgm(pixels)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def decode_pgm(blob: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM is supported (maxval {maxval})")
    pos += 1
    raw = blob[pos:pos + w * h]
    if len(raw) != w * h:
        raise ValueError("truncated PGM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(float) / 255.0


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM into floats in [0, 1]."""
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())
