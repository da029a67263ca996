"""Scene geometry, occluder shadows and Lambertian angular factors.

Every surface is planar and discretized by a :class:`PlanarPatchGrid`.  Cell
``(i, j)`` of a grid has its center at::

    origin + (i + 1/2) * du * axis_u + (j + 1/2) * dv * axis_v

and flattened arrays over a grid are row-major in ``(i, j)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UNIT_TOL = 1e-9
# Segments grazing a disk rim within this distance count as blocked.
RIM_TOL = 1e-12
# |direction . normal| below this is treated as parallel to the disk plane.
PARALLEL_TOL = 1e-15


class SceneError(ValueError):
    """Raised for an invalid or degenerate scene description."""


def _vec(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise SceneError(f"{name}: expected 3 finite components, got {v!r}")
    return a


def _unit(v, name: str) -> np.ndarray:
    a = _vec(v, name)
    if abs(np.linalg.norm(a) - 1.0) > UNIT_TOL:
        raise SceneError(f"{name}: not a unit vector (norm {np.linalg.norm(a):.12g})")
    return a


def normalize(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    return a / np.linalg.norm(a)


@dataclass(frozen=True, eq=False)
class PlanarPatchGrid:
    origin: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    extent_u: float
    extent_v: float
    counts_u: int
    counts_v: int
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec(self.origin, "origin"))
        object.__setattr__(self, "axis_u", _unit(self.axis_u, "axis_u"))
        object.__setattr__(self, "axis_v", _unit(self.axis_v, "axis_v"))
        object.__setattr__(self, "normal", _unit(self.normal, "normal"))
        for name in ("extent_u", "extent_v"):
            if not float(getattr(self, name)) > 0:
                raise SceneError(f"{name} must be positive")
        for name in ("counts_u", "counts_v"):
            c = getattr(self, name)
            if int(c) != c or c < 1:
                raise SceneError(f"{name} must be a positive integer")
        u, v, n = self.axis_u, self.axis_v, self.normal
        if max(abs(u @ v), abs(u @ n), abs(v @ n)) > UNIT_TOL:
            raise SceneError("patch axes and normal must be mutually orthogonal")

    @classmethod
    def centered(cls, center, axis_u, axis_v, extent_u, extent_v, counts_u, counts_v,
                 normal=None) -> "PlanarPatchGrid":
        """Build a grid from its center point; the normal defaults to ``u x v``."""
        u = np.asarray(axis_u, dtype=float)
        v = np.asarray(axis_v, dtype=float)
        if normal is None:
            normal = np.cross(u, v)
        origin = (np.asarray(center, dtype=float)
                  - 0.5 * extent_u * u - 0.5 * extent_v * v)
        return cls(origin, u, v, float(extent_u), float(extent_v),
                   int(counts_u), int(counts_v), np.asarray(normal, dtype=float))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.counts_u, self.counts_v)

    @property
    def size(self) -> int:
        return self.counts_u * self.counts_v

    @property
    def du(self) -> float:
        return self.extent_u / self.counts_u

    @property
    def dv(self) -> float:
        return self.extent_v / self.counts_v

    @property
    def cell_area(self) -> float:
        return self.du * self.dv

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * self.extent_u * self.axis_u + 0.5 * self.extent_v * self.axis_v

    def cell_center(self, i: int, j: int) -> np.ndarray:
        if not (0 <= i < self.counts_u and 0 <= j < self.counts_v):
            raise IndexError(f"cell ({i}, {j}) outside {self.shape} grid")
        return (self.origin + (i + 0.5) * self.du * self.axis_u
                + (j + 0.5) * self.dv * self.axis_v)

    def centers(self) -> np.ndarray:
        """All cell centers, shape ``(counts_u * counts_v, 3)``, row-major."""
        su = (np.arange(self.counts_u) + 0.5) * self.du
        sv = (np.arange(self.counts_v) + 0.5) * self.dv
        pts = (self.origin[None, None, :]
               + su[:, None, None] * self.axis_u[None, None, :]
               + sv[None, :, None] * self.axis_v[None, None, :])
        return pts.reshape(-1, 3)

    def with_counts(self, counts_u: int, counts_v: int) -> "PlanarPatchGrid":
        return PlanarPatchGrid(self.origin, self.axis_u, self.axis_v, self.extent_u,
                               self.extent_v, counts_u, counts_v, self.normal)

    def plane_offset(self) -> float:
        return float(self.normal @ self.origin)

    def to_dict(self) -> dict:
        return {
            "origin": self.origin.tolist(),
            "axis_u": self.axis_u.tolist(),
            "axis_v": self.axis_v.tolist(),
            "extent_u": float(self.extent_u),
            "extent_v": float(self.extent_v),
            "counts_u": int(self.counts_u),
            "counts_v": int(self.counts_v),
            "normal": self.normal.tolist(),
        }


@dataclass(frozen=True, eq=False)
class DiskOccluder:
    center: np.ndarray
    normal: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        object.__setattr__(self, "normal", _unit(self.normal, "normal"))
        if not float(self.radius) > 0:
            raise SceneError(f"radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "normal": self.normal.tolist(),
                "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Detector:
    position: np.ndarray
    aperture_area: float
    optical_axis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position, "position"))
        object.__setattr__(self, "optical_axis", _unit(self.optical_axis, "optical_axis"))
        if not float(self.aperture_area) > 0:
            raise SceneError("aperture_area must be positive")
        object.__setattr__(self, "aperture_area", float(self.aperture_area))

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "aperture_area": self.aperture_area,
                "optical_axis": self.optical_axis.tolist()}


@dataclass(frozen=True, eq=False)
class SceneGeometry:
    laser_position: np.ndarray
    illumination: PlanarPatchGrid
    hidden_wall: PlanarPatchGrid
    fov: PlanarPatchGrid
    detector: Detector
    occluders: tuple[DiskOccluder, ...] = field(default_factory=tuple)
    visible_reflectivity: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "laser_position", _vec(self.laser_position, "laser_position"))
        object.__setattr__(self, "occluders", tuple(self.occluders))
        if not 0 < self.visible_reflectivity <= 1:
            raise SceneError("visible_reflectivity must lie in (0, 1]")
        ill, fov, hid = self.illumination, self.fov, self.hidden_wall
        if ill.counts_u != ill.counts_v:
            raise SceneError("illumination grid must be square (m x m)")
        if hid.counts_u != hid.counts_v:
            raise SceneError("hidden wall grid must be square (n x n)")
        if (abs(abs(ill.normal @ fov.normal) - 1) > UNIT_TOL
                or abs(ill.normal @ (fov.origin - ill.origin)) > 1e-9):
            raise SceneError("illumination grid and FOV patch must be coplanar")
        if not ill.normal @ hid.normal < 0:
            raise SceneError("hidden wall must face the visible wall")
        # signed heights above the visible wall along its normal
        n = ill.normal
        z_vis = n @ ill.origin
        z_hid = n @ hid.center
        if not z_hid > z_vis:
            raise SceneError("hidden wall must lie in front of the visible wall")
        for k, occ in enumerate(self.occluders):
            z = n @ occ.center
            if not z_vis < z < z_hid:
                raise SceneError(f"occluders[{k}] must lie strictly between the walls")

    @property
    def m(self) -> int:
        return self.illumination.counts_u

    @property
    def n(self) -> int:
        return self.hidden_wall.counts_u

    def without_occluders(self) -> "SceneGeometry":
        return self.replace(occluders=())

    def replace(self, **changes) -> "SceneGeometry":
        fields = dict(laser_position=self.laser_position, illumination=self.illumination,
                      hidden_wall=self.hidden_wall, fov=self.fov, detector=self.detector,
                      occluders=self.occluders,
                      visible_reflectivity=self.visible_reflectivity)
        fields.update(changes)
        return SceneGeometry(**fields)

    def to_dict(self) -> dict:
        return {
            "laser_position": self.laser_position.tolist(),
            "illumination": self.illumination.to_dict(),
            "hidden_wall": self.hidden_wall.to_dict(),
            "fov": self.fov.to_dict(),
            "detector": self.detector.to_dict(),
            "occluders": [o.to_dict() for o in self.occluders],
            "visible_reflectivity": float(self.visible_reflectivity),
        }

    def fingerprint(self) -> str:
        """SHA-256 over a canonical JSON rendering of every geometric field."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- shadows

def shadow(p, q, occluders: Sequence[DiskOccluder]) -> int:
    """1 when the open segment (p, q) misses every occluder disk, else 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    if not np.any(d):
        raise SceneError("shadow: segment endpoints coincide")
    for occ in occluders:
        denom = d @ occ.normal
        if abs(denom) <= PARALLEL_TOL:
            continue
        t = ((occ.center - p) @ occ.normal) / denom
        if not 0.0 < t < 1.0:
            continue
        hit = p + t * d
        if np.linalg.norm(hit - occ.center) <= occ.radius + RIM_TOL:
            return 0
    return 1


def shadow_matrix(P: np.ndarray, Q: np.ndarray,
                  occluders: Sequence[DiskOccluder]) -> np.ndarray:
    """Vectorized :func:`shadow` for every pair ``(P[a], Q[b])``.

    Returns a boolean array of shape ``(len(P), len(Q))`` that is True where
    the line of sight is unobstructed.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    vis = np.ones((P.shape[0], Q.shape[0]), dtype=bool)
    for occ in occluders:
        o, nrm = occ.center, occ.normal
        hp = P @ nrm - o @ nrm            # signed height of p above disk plane
        hq = Q @ nrm - o @ nrm
        denom = hq[None, :] - hp[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -hp[:, None] / denom
        crosses = (np.abs(denom) > PARALLEL_TOL) & (t > 0.0) & (t < 1.0)
        if not crosses.any():
            continue
        # hit - o = (p - o) + t (q - p)
        dist2 = np.zeros_like(t)
        po = P - o
        for k in range(3):
            comp = po[:, k][:, None] + t * (Q[:, k][None, :] - P[:, k][:, None])
            dist2 += comp * comp
        r = occ.radius + RIM_TOL
        vis &= ~(crosses & (dist2 <= r * r))
    return vis


def visible_hidden_set(ell, c, scene: SceneGeometry) -> np.ndarray:
    """Mask over hidden-wall pixels seeing both ``ell`` and ``c`` unobstructed."""
    X = scene.hidden_wall.centers()
    pts = np.vstack([np.asarray(ell, dtype=float), np.asarray(c, dtype=float)])
    vis = shadow_matrix(X, pts, scene.occluders)
    return (vis[:, 0] & vis[:, 1]).reshape(scene.hidden_wall.shape).astype(np.uint8)


# ------------------------------------------------------- angular factors

def _cos_away(src, dst, normal, pair: str) -> float:
    """Cosine between ``dst - src`` and the surface normal at ``src``, clamped at 0."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0.0:
        raise SceneError(f"geometric_factor: coincident points {pair}")
    return max(0.0, float(d @ normal) / norm)


def geometric_factor(laser, ell, x, c, omega, n_ell, n_x, n_c) -> float:
    """Product of the six Lambertian cosines along laser -> ell -> x -> c -> detector.

    Each cosine is taken between a surface normal and the direction leaving
    that surface toward the other endpoint, so front-facing geometry gives
    positive factors and back-facing geometry contributes zero.
    """
    return (_cos_away(ell, laser, n_ell, "(laser, ell)")
            * _cos_away(ell, x, n_ell, "(x, ell)")
            * _cos_away(x, ell, n_x, "(x, ell)")
            * _cos_away(x, c, n_x, "(x, c)")
            * _cos_away(c, x, n_c, "(x, c)")
            * _cos_away(c, omega, n_c, "(c, omega)"))
