"""SPAD detection statistics in the low-flux regime.

A SPAD registers at most one count per pulse, so the count for one raster
point over ``N`` pulses is binomial with success probability
``1 - exp(-eta * (Y + B))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln


class CountError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AcquisitionParams:
    pulses: int
    efficiency: float
    background: np.ndarray

    def __post_init__(self):
        if int(self.pulses) != self.pulses or self.pulses < 1:
            raise CountError(f"pulses must be a positive integer, got {self.pulses!r}")
        object.__setattr__(self, "pulses", int(self.pulses))
        if not 0 < self.efficiency <= 1:
            raise CountError("quantum efficiency must lie in (0, 1]")
        B = np.atleast_2d(np.asarray(self.background, dtype=float))
        if not np.all(np.isfinite(B)) or (B < 0).any():
            raise CountError("background must be finite and nonnegative")
        object.__setattr__(self, "background", B)

    @classmethod
    def uniform(cls, pulses: int, efficiency: float, background: float, m: int):
        return cls(pulses, efficiency, np.full((m, m), float(background)))

    def with_pulses(self, pulses: int) -> "AcquisitionParams":
        return AcquisitionParams(pulses, self.efficiency, self.background)


@dataclass(frozen=True, eq=False)
class CountMatrix:
    counts: np.ndarray
    params: AcquisitionParams
    seed: int | None = field(default=None)

    def __post_init__(self):
        R = np.asarray(self.counts)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise CountError(f"counts must be a square matrix, got shape {R.shape}")
        if not np.issubdtype(R.dtype, np.integer):
            if not np.all(R == np.round(R)):
                raise CountError("counts must be integers")
        R = R.astype(np.int64)
        if (R < 0).any() or (R > self.params.pulses).any():
            raise CountError("counts must satisfy 0 <= R <= N")
        if self.params.background.shape != R.shape:
            raise CountError("background grid does not match the count matrix")
        object.__setattr__(self, "counts", R)

    @property
    def m(self) -> int:
        return self.counts.shape[0]


def p0(Y, B, eta):
    """Probability of no detection in one pulse interval."""
    Y = np.asarray(Y, dtype=float)
    B = np.asarray(B, dtype=float)
    if (Y < 0).any() or (B < 0).any():
        raise CountError("mean photon numbers must be nonnegative")
    out = np.exp(-eta * (Y + B))
    return float(out) if out.ndim == 0 else out


def detection_probability(Y, B, eta):
    """``1 - p0`` without cancellation for tiny rates."""
    return -np.expm1(-eta * (np.asarray(Y, dtype=float) + np.asarray(B, dtype=float)))


def entry_rng(seed: int, i: int, j: int) -> np.random.Generator:
    """Independent stream for matrix entry ``(i, j)``, keyed by (seed, i, j)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i, j])))


def simulate_counts(Y, params: AcquisitionParams, seed: int) -> CountMatrix:
    """Draw ``R_ij ~ Binomial(N, 1 - p0(Y_ij, B_ij))`` with per-entry streams."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape != params.background.shape:
        raise CountError(f"mean photon grid {Y.shape} does not match background "
                         f"{params.background.shape}")
    prob = detection_probability(Y, params.background, params.efficiency)
    R = np.empty(Y.shape, dtype=np.int64)
    for (i, j), p in np.ndenumerate(prob):
        R[i, j] = entry_rng(seed, i, j).binomial(params.pulses, p)
    return CountMatrix(R, params, seed)


def binomial_log_pmf(r, N: int, p):
    """log C(N, r) + r log p + (N - r) log(1 - p), with 0 log 0 = 0."""
    r = np.asarray(r)
    p = np.asarray(p, dtype=float)
    if (r < 0).any() or (r > N).any():
        raise CountError(f"count outside [0, {N}]")
    if (p < 0).any() or (p > 1).any():
        raise CountError("probability outside [0, 1]")
    coef = gammaln(N + 1.0) - gammaln(r + 1.0) - gammaln(N - r + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(r > 0, r * np.log(p), 0.0)
        b = np.where(N - r > 0, (N - r) * np.log1p(-p), 0.0)
    out = coef + a + b
    return float(out) if out.ndim == 0 else out


def rate_estimate(R: CountMatrix) -> np.ndarray:
    """Per-point mean signal photons per pulse recovered by inverting ``p0``."""
    N = R.params.pulses
    r = R.counts.astype(float)
    r = np.where(r >= N, N - 0.5, r)
    y = -np.log1p(-r / N) / R.params.efficiency - R.params.background
    return np.maximum(y, 0.0)


def expected_counts(Y, params: AcquisitionParams) -> np.ndarray:
    return params.pulses * detection_probability(Y, params.background, params.efficiency)


def pulses_for_ppp(Y, params: AcquisitionParams, target_ppp: float,
                   max_pulses: int = 10 ** 13) -> int:
    """Pulse count whose expected mean detected counts per point hit ``target_ppp``."""
    q = float(np.mean(detection_probability(Y, params.background, params.efficiency)))
    if not q > 0:
        raise CountError("detection probability is zero; target PPP unreachable")
    N = max(1, int(round(target_ppp / q)))
    if N > max_pulses:
        raise CountError(f"target PPP {target_ppp} needs {N} pulses > cap {max_pulses}")
    return N
