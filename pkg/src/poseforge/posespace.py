"""Pose-space discretization around a target.

Camera viewpoints are spread over a sphere by minimizing the Thomson
(Coulomb) energy, optionally refined by edge-midpoint subdivision.  Each
viewpoint is combined with ``m`` rolls about the boresight and a set of
ranges to form the pose labels, and images are assigned to labels by the
nearest-attitude search within their range bucket.
"""

from __future__ import annotations

import hashlib
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .rotmath import (
    Quaternion,
    angular_distance,
    hamilton_product,
    quat_to_rotmat,
    rotmat_to_quat,
)

MAX_ITER = 100_000
GRAD_TOL = 1e-6
ARMIJO_C = 1e-4


class ConvergenceWarning(UserWarning):
    """Raised (as a warning) when the Thomson descent stops short of a stationary point."""


@dataclass(frozen=True)
class DiscretizationSpec:
    """Ranges (m), camera locations per sphere and boresight rolls per location."""

    radii: tuple[float, ...]
    n: int
    m: int = 1
    seed: int = 0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if not radii:
            raise ValueError("at least one radius is required")
        if any(r <= 0 for r in radii):
            raise ValueError(f"radii must be strictly positive, got {radii}")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"radii must be strictly increasing, got {radii}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")

    @property
    def label_count(self) -> int:
        return len(self.radii) * self.n * self.m

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "n": self.n, "m": self.m, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscretizationSpec":
        return cls(radii=tuple(d["radii"]), n=int(d["n"]), m=int(d.get("m", 1)), seed=int(d.get("seed", 0)))


@dataclass(frozen=True)
class PoseLabel:
    id: int
    range: float
    attitude: Quaternion
    camera_position: np.ndarray = field(compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoseLabel):
            return NotImplemented
        return (
            self.id == other.id
            and self.range == other.range
            and self.attitude == other.attitude
            and np.array_equal(self.camera_position, other.camera_position)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class CameraPose:
    """Continuous pose of one image.

    ``attitude`` is q(R_BC), the camera frame expressed in the body frame.
    ``position`` is t_BC: the target body origin in camera coordinates
    (x right, y down, z along the boresight), in meters.
    """

    attitude: Quaternion
    position: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        p.flags.writeable = False
        object.__setattr__(self, "position", p)

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.position))

    def camera_position_body(self) -> np.ndarray:
        """Camera origin expressed in the body frame."""
        return -quat_to_rotmat(self.attitude) @ self.position

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return self.attitude == other.attitude and np.array_equal(self.position, other.position)

    __hash__ = None  # type: ignore[assignment]


# -- Thomson problem -----------------------------------------------------------


def _as_points(pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {p.shape}")
    return p


def _pair_terms(p: np.ndarray):
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(len(p), k=1)
    if len(p) > 1 and dist[iu].min() < 1e-12:
        raise ValueError("coincident points (separation < 1e-12)")
    return diff, dist, iu


def thomson_energy(pts) -> float:
    """Sum of inverse chord distances over all unordered pairs."""
    p = _as_points(pts)
    if len(p) < 2:
        raise ValueError("Thomson energy needs at least 2 points")
    _, dist, iu = _pair_terms(p)
    return float(np.sum(1.0 / dist[iu]))


def thomson_gradient(pts) -> np.ndarray:
    """Tangential component of the energy gradient at each point, shape (n, 3)."""
    p = _as_points(pts)
    if len(p) < 2:
        raise ValueError("Thomson gradient needs at least 2 points")
    diff, dist, _ = _pair_terms(p)
    np.fill_diagonal(dist, np.inf)
    g = -np.einsum("ijk,ij->ik", diff, dist**-3)
    pp = np.einsum("ij,ij->i", p, p)
    # the radial part is large (about n/2 per point); a second projection
    # removes what rounding leaves of it after the first
    for _ in range(2):
        g = g - (np.einsum("ij,ij->i", g, p) / pp)[:, None] * p
    return g


def _normalize_rows(p: np.ndarray) -> np.ndarray:
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def _sphere_step(p: np.ndarray, g: np.ndarray, alpha: float) -> np.ndarray:
    """Displacement taking each unit row of ``p`` to ``normalize(p - alpha g)``.

    ``g`` is tangential, so ``|p - alpha g| = sqrt(1 + alpha^2 |g|^2)``; the
    closed form avoids the rounding a numerical renormalization would add.
    """
    a2g2 = alpha * alpha * np.einsum("ij,ij->i", g, g)
    root = np.sqrt(1.0 + a2g2)
    return -(alpha / root)[:, None] * g - (a2g2 / (root * (1.0 + root)))[:, None] * p


def _energy_change(diff: np.ndarray, dist: np.ndarray, iu, step: np.ndarray) -> float:
    """Exact-to-rounding change of the pair energy when every point moves by ``step``."""
    ds = step[:, None, :] - step[None, :, :]
    dd2 = (2.0 * np.einsum("ijk,ijk->ij", diff, ds) + np.einsum("ijk,ijk->ij", ds, ds))[iu]
    d = dist[iu]
    d_new = np.sqrt(d * d + dd2)
    if d_new.min() < 1e-12:
        return math.inf
    return float(np.sum(-dd2 / (d * d_new * (d + d_new))))


def _descend(p: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    """Projected gradient descent with Armijo backtracking.

    Trial steps start from a Barzilai-Borwein estimate and are halved until
    the sufficient-decrease condition holds, so the energy never increases.
    Energy changes are evaluated from the displacements directly, so they
    stay accurate far below the rounding error of the total energy.
    Returns the points, the final gradient norm and the iteration count.
    """
    e = thomson_energy(p)
    diff, dist, iu = _pair_terms(p)
    g = thomson_gradient(p)
    gnorm2 = float(np.sum(g * g))
    step = 0.1 / max(math.sqrt(gnorm2), 1e-12)
    it = 0
    for it in range(1, max_iter + 1):
        if math.sqrt(gnorm2) < GRAD_TOL * 1e-2:
            break
        alpha = step
        while True:
            move = _sphere_step(p, g, alpha)
            delta = _energy_change(diff, dist, iu, move)
            if delta <= -ARMIJO_C * alpha * gnorm2:
                break
            alpha *= 0.5
            if alpha < 1e-20:
                return p, math.sqrt(gnorm2), it
        trial = p + move
        g_new = thomson_gradient(trial)
        s = move.ravel()
        y = (g_new - g).ravel()
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * alpha
        rel = -delta / abs(e)
        p, g = trial, g_new
        e += delta
        diff, dist, iu = _pair_terms(p)
        gnorm2 = float(np.sum(g * g))
        if rel < tol and math.sqrt(gnorm2) < GRAD_TOL:
            break
    return _normalize_rows(p), math.sqrt(gnorm2), it


def distribute_points(n: int, seed: int = 0, tol: float = 1e-12, max_iter: int = MAX_ITER) -> np.ndarray:
    """Spread ``n`` points over the unit sphere by Thomson-energy descent.

    The start is ``n`` seeded Gaussian directions.  The descent stops once the
    relative energy decrease drops below ``tol`` with the tangential gradient
    norm under 1e-6, or after ``max_iter`` iterations; stopping short of the
    gradient threshold is reported through :class:`ConvergenceWarning`.

    Returns an ``(n, 3)`` array of unit vectors.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    rng = np.random.default_rng(seed)
    p = _normalize_rows(rng.normal(size=(int(n), 3)))
    if n == 1:
        return p
    p, gnorm, it = _descend(p, tol, max_iter)
    if gnorm >= GRAD_TOL:
        warnings.warn(
            f"Thomson descent for n={n} stopped after {it} iterations with gradient norm {gnorm:.3e}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return p


def hull_edges(pts) -> np.ndarray:
    """Unique undirected edges ``(i, j), i < j`` of the convex-hull triangulation."""
    p = _as_points(pts)
    try:
        hull = ConvexHull(p)
    except QhullError as exc:
        raise ValueError(f"degenerate point set, no convex hull: {exc}") from None
    if len(hull.vertices) != len(p):
        raise ValueError("not every point lies on the convex hull")
    tri = hull.simplices
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def subdivide(pts, polish_iter: int = 500) -> np.ndarray:
    """Insert the projected midpoint of every hull edge, then polish briefly.

    The output has ``len(pts) + #edges`` points.  The polish is at most
    ``polish_iter`` descent iterations and does not warn on early stop.
    """
    p = _as_points(pts)
    if len(p) < 4:
        raise ValueError("subdivision needs at least 4 points")
    edges = hull_edges(p)
    mid = _normalize_rows(p[edges[:, 0]] + p[edges[:, 1]])
    out = np.concatenate([_normalize_rows(p), mid])
    if polish_iter > 0:
        out, _, _ = _descend(out, 1e-12, polish_iter)
    return out


# -- labels --------------------------------------------------------------------


def camera_attitude_for(viewpoint, roll: float = 0.0) -> Quaternion:
    """Attitude of a camera at ``r * viewpoint`` looking at the body origin.

    Camera axes: +z boresight, +y image-down, +x image-right.  Image-up is the
    body +z axis made orthogonal to the boresight (body +x when the
    boresight is within 1e-6 of the z axis).  ``roll`` (degrees) then turns the
    camera about its boresight.
    """
    u = np.asarray(viewpoint, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("viewpoint must be a unit vector")
    z_c = -u
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[2]) > 1.0 - 1e-6 else np.array([0.0, 0.0, 1.0])
    up = ref - np.dot(ref, z_c) * z_c
    up /= np.linalg.norm(up)
    y_c = -up
    x_c = np.cross(y_c, z_c)
    R = np.column_stack([x_c, y_c, z_c])
    c, s = math.cos(math.radians(roll)), math.sin(math.radians(roll))
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return rotmat_to_quat(R @ Rz)


def generate_labels(spec: DiscretizationSpec, seed: int | None = None) -> list[PoseLabel]:
    """All pose labels of ``spec``, ids in (radius, point, roll) order.

    One point set is solved per call and shared across radii.  Rolls are
    ``k * 360 / m`` for ``k = 0 .. m-1``.
    """
    seed = spec.seed if seed is None else seed
    pts = distribute_points(spec.n, seed=seed)
    attitudes = [
        [camera_attitude_for(u, k * 360.0 / spec.m) for k in range(spec.m)] for u in pts
    ]
    labels = []
    for r in spec.radii:
        for i, u in enumerate(pts):
            cam = r * u
            cam.flags.writeable = False
            for k in range(spec.m):
                labels.append(PoseLabel(len(labels), r, attitudes[i][k], cam))
    return labels


def label_radii(labels: Sequence[PoseLabel]) -> np.ndarray:
    return np.unique(np.array([lab.range for lab in labels], dtype=float))


def radius_bucket(range_m: float, radii) -> float:
    """Grid radius equal to ``range_m``, or the nearest one when off-grid (lower wins ties)."""
    radii = np.asarray(radii, dtype=float)
    hit = np.flatnonzero(radii == range_m)
    if hit.size:
        return float(radii[hit[0]])
    return float(radii[int(np.argmin(np.abs(radii - range_m)))])


class LabelIndex:
    """Precomputed arrays for repeated :func:`assign_label` calls on one label set."""

    def __init__(self, labels: Sequence[PoseLabel]):
        if not labels:
            raise ValueError("label set is empty")
        self.labels = list(labels)
        self.ids = np.array([lab.id for lab in labels])
        self.ranges = np.array([lab.range for lab in labels], dtype=float)
        self.quats = np.array([lab.attitude.as_array() for lab in labels])
        self.radii = np.unique(self.ranges)

    def assign(self, pose: CameraPose) -> int:
        r = radius_bucket(pose.range, self.radii)
        cand = np.flatnonzero(self.ranges == r)
        # angle of q_img ⊗ conj(q_label); canonical sign folds it to [0, 180]
        conj = self.quats[cand] * np.array([1.0, -1.0, -1.0, -1.0])
        z = hamilton_product(pose.attitude.as_array()[None, :], conj)
        ang = 2.0 * np.arctan2(np.linalg.norm(z[:, 1:], axis=1), np.abs(z[:, 0]))
        best = np.flatnonzero(ang == ang.min())
        return int(self.ids[cand[best]].min())


def assign_label(pose: CameraPose, labels: Sequence[PoseLabel] | LabelIndex) -> int:
    """Id of the label nearest in attitude to ``pose`` within its range bucket.

    Ties go to the lowest label id.
    """
    index = labels if isinstance(labels, LabelIndex) else LabelIndex(labels)
    return index.assign(pose)


def assign_label_scan(pose: CameraPose, labels: Iterable[PoseLabel]) -> int:
    """Literal per-label loop of the assignment search, kept as a reference path."""
    labels = list(labels)
    if not labels:
        raise ValueError("label set is empty")
    r = radius_bucket(pose.range, label_radii(labels))
    best, best_d = None, math.inf
    for lab in labels:
        if lab.range != r:
            continue
        d = angular_distance(pose.attitude, lab.attitude)
        if d < best_d or (d == best_d and lab.id < best):
            best, best_d = lab.id, d
    return int(best)


def label_pose(label: PoseLabel) -> CameraPose:
    """The continuous pose a label stands for (target centred at the label's range)."""
    return CameraPose(label.attitude, np.array([0.0, 0.0, label.range]))


# -- label-set files -----------------------------------------------------------

LABELS_HEADER = "# pose-forge labels v1: id range_m q_s q_x q_y q_z cam_x cam_y cam_z"


def format_labels(labels: Sequence[PoseLabel]) -> str:
    buf = io.StringIO()
    buf.write(LABELS_HEADER + "\n")
    for lab in labels:
        vals = [lab.range, *lab.attitude.as_list(), *lab.camera_position]
        buf.write(str(lab.id) + " " + " ".join(repr(float(x)) for x in vals) + "\n")
    return buf.getvalue()


def labels_checksum(labels: Sequence[PoseLabel]) -> str:
    return hashlib.sha256(format_labels(labels).encode()).hexdigest()


def write_labels(labels: Sequence[PoseLabel], path) -> str:
    """Write a label-set file and return its SHA-256."""
    text = format_labels(labels)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_labels(path) -> list[PoseLabel]:
    labels = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 9:
                raise ValueError(f"{path}:{lineno}: expected 9 fields, got {len(parts)}")
            try:
                vals = [float(x) for x in parts[1:]]
                q = Quaternion.from_array(vals[1:5])
                labels.append(PoseLabel(int(parts[0]), vals[0], q, np.array(vals[5:8])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    ids = [lab.id for lab in labels]
    if ids != list(range(len(ids))):
        raise ValueError(f"{path}: label ids must be dense 0..{len(ids) - 1} in order")
    return labels
