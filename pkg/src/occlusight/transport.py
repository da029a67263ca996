"""Discrete three-bounce forward operator.

Row ``r = i * m + j`` of the operator matrix belongs to illumination point
``(i, j)`` and column ``c = k * n + l`` to hidden-wall pixel ``(k, l)``.
Entries are dimensionless photon-transfer fractions; ``K_p`` (mean photons per
laser pulse) is kept outside the matrix.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import SceneError, SceneGeometry, geometric_factor, shadow, shadow_matrix

OPERATOR_MAGIC = b"OCCLSOP\x00"
OPERATOR_VERSION = 1
_HEADER = struct.Struct("<8sIIId32s")


class OperatorError(ValueError):
    """Dimension mismatch or malformed operator data."""


def worker_count(workers: int | None = None) -> int:
    """Resolve a worker count; ``None`` reads ``OCCLUSIGHT_THREADS`` (0 = auto)."""
    if workers is None:
        workers = int(os.environ.get("OCCLUSIGHT_THREADS", "0") or 0)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    matrix: np.ndarray
    kp: float
    m: int
    n: int
    fingerprint: str

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=np.float64)
        if A.shape != (self.m * self.m, self.n * self.n):
            raise OperatorError(f"matrix shape {A.shape} does not match m={self.m}, n={self.n}")
        if not np.all(np.isfinite(A)) or (A < 0).any():
            raise OperatorError("operator entries must be finite and nonnegative")
        object.__setattr__(self, "matrix", A)

    def save(self, path) -> None:
        header = _HEADER.pack(OPERATOR_MAGIC, OPERATOR_VERSION, self.m, self.n,
                              float(self.kp), bytes.fromhex(self.fingerprint))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.matrix.astype("<f8", copy=False).tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ForwardOperator":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise OperatorError(f"{path}: truncated header")
        magic, version, m, n, kp, fp = _HEADER.unpack_from(raw)
        if magic != OPERATOR_MAGIC:
            raise OperatorError(f"{path}: not an operator file")
        if version != OPERATOR_VERSION:
            raise OperatorError(f"{path}: unsupported version {version}")
        body = raw[_HEADER.size:]
        if len(body) != 8 * m * m * n * n:
            raise OperatorError(f"{path}: payload size does not match m={m}, n={n}")
        A = np.frombuffer(body, dtype="<f8").reshape(m * m, n * n).astype(np.float64)
        return cls(A, kp, m, n, fp.hex())


def _check_distance(d2: np.ndarray, what: str) -> None:
    if (d2 <= 0).any():
        raise SceneError(f"zero distance between {what} points")


def _cosines(vec: np.ndarray, normal: np.ndarray, dist: np.ndarray) -> np.ndarray:
    c = (vec[..., 0] * normal[0] + vec[..., 1] * normal[1] + vec[..., 2] * normal[2]) / dist
    return np.maximum(c, 0.0)


def _sqnorm(vec: np.ndarray) -> np.ndarray:
    return vec[..., 0] * vec[..., 0] + vec[..., 1] * vec[..., 1] + vec[..., 2] * vec[..., 2]


def _hidden_to_fov(scene: SceneGeometry, chunk: int = 1024) -> np.ndarray:
    """Per-pixel second-leg factor: sum over FOV nodes c of the x -> c -> detector terms."""
    X_all = scene.hidden_wall.centers()
    C = scene.fov.centers()
    omega = scene.detector.position
    n_x, n_c = scene.hidden_wall.normal, scene.fov.normal

    d_cw = omega[None, :] - C                      # c -> detector
    r_cw2 = _sqnorm(d_cw)
    _check_distance(r_cw2, "FOV and detector")
    leg3 = _cosines(d_cw, n_c, np.sqrt(r_cw2)) / r_cw2

    out = np.empty(X_all.shape[0])
    for start in range(0, X_all.shape[0], chunk):
        X = X_all[start:start + chunk]
        d_xc = C[None, :, :] - X[:, None, :]        # x -> c
        r_xc2 = _sqnorm(d_xc)
        _check_distance(r_xc2, "hidden-wall and FOV")
        r_xc = np.sqrt(r_xc2)
        cos_x = _cosines(d_xc, n_x, r_xc)
        cos_c = _cosines(-d_xc, n_c, r_xc)
        vis = shadow_matrix(X, C, scene.occluders)
        out[start:start + chunk] = (vis * cos_x * cos_c * leg3[None, :] / r_xc2).sum(axis=1)
    return out * scene.fov.cell_area


def _laser_to_hidden_rows(scene: SceneGeometry, rows: slice) -> np.ndarray:
    L = scene.illumination.centers()[rows]
    X = scene.hidden_wall.centers()
    n_l, n_x = scene.illumination.normal, scene.hidden_wall.normal

    d_ll = scene.laser_position[None, :] - L       # ell -> laser
    r_ll = np.sqrt(_sqnorm(d_ll))
    _check_distance(r_ll, "laser and illumination")
    cos_in = _cosines(d_ll, n_l, r_ll)

    d_lx = X[None, :, :] - L[:, None, :]            # ell -> x
    r_lx2 = _sqnorm(d_lx)
    _check_distance(r_lx2, "illumination and hidden-wall")
    r_lx = np.sqrt(r_lx2)
    cos_l = _cosines(d_lx, n_l, r_lx)
    cos_x = _cosines(-d_lx, n_x, r_lx)
    vis = shadow_matrix(L, X, scene.occluders)
    return vis * cos_in[:, None] * cos_l * cos_x / r_lx2


def build_operator(scene: SceneGeometry, kp: float, workers: int | None = None,
                   chunk_rows: int = 256) -> ForwardOperator:
    """Assemble the dense operator for ``scene``.

    The integrand factors into a laser-to-pixel part that depends on the
    illumination point and a pixel-to-detector part summed over the FOV
    quadrature nodes once per pixel; rows are filled in parallel chunks and
    the result does not depend on the worker count.
    """
    if not kp > 0:
        raise OperatorError("K_p must be positive")
    m2, n2 = scene.m ** 2, scene.n ** 2
    q = _hidden_to_fov(scene)
    scale = (scene.visible_reflectivity ** 2 * scene.hidden_wall.cell_area
             * scene.detector.aperture_area)
    weights = q * scale
    A = np.empty((m2, n2), dtype=np.float64)

    def fill(start: int) -> None:
        rows = slice(start, min(start + chunk_rows, m2))
        A[rows] = _laser_to_hidden_rows(scene, rows) * weights[None, :]

    starts = range(0, m2, chunk_rows)
    nworkers = min(worker_count(workers), len(starts))
    if nworkers <= 1:
        for s in starts:
            fill(s)
    else:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            list(pool.map(fill, starts))
    return ForwardOperator(A, float(kp), scene.m, scene.n, scene.fingerprint())


def kernel_entry(scene: SceneGeometry, i: int, j: int, k: int, l: int) -> float:
    """Single operator entry by direct summation over the FOV quadrature nodes."""
    ell = scene.illumination.cell_center(i, j)
    x = scene.hidden_wall.cell_center(k, l)
    laser = scene.laser_position
    omega = scene.detector.position
    n_l, n_x, n_c = (scene.illumination.normal, scene.hidden_wall.normal,
                     scene.fov.normal)
    d1 = np.sum((ell - x) ** 2)
    if d1 == 0:
        raise SceneError(f"zero distance between ell{(i, j)} and x{(k, l)}")
    if not shadow(x, ell, scene.occluders):
        return 0.0
    total = 0.0
    for c in scene.fov.centers():
        d2 = np.sum((x - c) ** 2)
        d3 = np.sum((c - omega) ** 2)
        if d2 == 0 or d3 == 0:
            raise SceneError(f"zero distance on trajectory through x{(k, l)}")
        if not shadow(x, c, scene.occluders):
            continue
        g = geometric_factor(laser, ell, x, c, omega, n_l, n_x, n_c)
        total += g / (d1 * d2 * d3)
    return float(total * scene.fov.cell_area * scene.detector.aperture_area
                 * scene.hidden_wall.cell_area * scene.visible_reflectivity ** 2)


def _as_vector(arr, size: int, what: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.size != size:
        raise OperatorError(f"{what}: expected {size} entries, got shape {a.shape}")
    return a.reshape(-1)


def apply_forward(op: ForwardOperator, F) -> np.ndarray:
    """Mean photons per pulse ``Y = K_p * A f`` as an ``m x m`` array."""
    f = _as_vector(F, op.n * op.n, "reflectivity")
    return (op.kp * (op.matrix @ f)).reshape(op.m, op.m)


def apply_adjoint(op: ForwardOperator, W) -> np.ndarray:
    """``K_p * A^T w`` as an ``n x n`` array."""
    w = _as_vector(W, op.m * op.m, "measurement weights")
    return (op.kp * (op.matrix.T @ w)).reshape(op.n, op.n)
