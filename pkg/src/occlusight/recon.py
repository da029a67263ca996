"""Penalized maximum-likelihood reconstruction of hidden-wall reflectivity.

The solver is a monotone proximal-gradient method in the SPIRAL-TAP family:
a gradient step on the smooth likelihood term with backtracking, followed by
a nonnegative total-variation proximal step.  The default accelerates this
with monotone FISTA momentum; ``method="bb"`` uses Barzilai-Borwein steps.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .photoncount import CountMatrix, rate_estimate
from .transport import ForwardOperator, OperatorError

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class ReconstructionError(RuntimeError):
    pass


@dataclass
class StepRule:
    initial_step: float = 1.0       # first trial step, relative to |F0| / |grad|
    shrink: float = 0.5
    sufficient_decrease: float = 1e-5
    max_backtracks: int = 60
    bb_min: float = 1e-30
    bb_max: float = 1e30


@dataclass
class ReconstructionConfig:
    likelihood: str = "binomial"
    lam: float = 0.75
    max_iterations: int = 500
    tolerance: float = 1e-6
    tv_inner_iterations: int = 50
    tv_inner_tolerance: float = 1e-8
    tv: str = "isotropic"
    initialization: str = "uniform"
    initial_value: float = 0.5
    min_iterations: int = 5
    window: int = 10
    method: str = "mfista"
    log_floor: float = LOG_FLOOR
    step: StepRule = field(default_factory=StepRule)

    def __post_init__(self):
        if self.likelihood not in ("binomial", "gaussian"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.tv not in ("isotropic", "anisotropic"):
            raise ValueError(f"unknown TV variant {self.tv!r}")
        if self.method not in ("mfista", "bb"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.initialization not in ("uniform", "adjoint"):
            raise ValueError(f"unknown initialization {self.initialization!r}")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not (self.tolerance > 0 and self.tv_inner_tolerance > 0 and self.log_floor > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1 or self.tv_inner_iterations < 1:
            raise ValueError("iteration limits must be positive")
        if isinstance(self.step, dict):
            self.step = StepRule(**self.step)

    def replace(self, **changes) -> "ReconstructionConfig":
        d = asdict(self)
        d.update(changes)
        return ReconstructionConfig(**d)


@dataclass
class ReconstructionResult:
    estimate: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    config: ReconstructionConfig
    stop_reason: str = ""

    @property
    def display(self) -> np.ndarray:
        return np.clip(self.estimate, 0.0, 1.0)


# ------------------------------------------------------------------ TV

def _grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gk = np.zeros_like(u)
    gl = np.zeros_like(u)
    gk[:-1, :] = u[1:, :] - u[:-1, :]
    gl[:, :-1] = u[:, 1:] - u[:, :-1]
    return gk, gl


def _div(pk: np.ndarray, pl: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`_grad`."""
    d = np.zeros_like(pk)
    d[:-1, :] += pk[:-1, :]
    d[1:, :] -= pk[:-1, :]
    d[:, :-1] += pl[:, :-1]
    d[:, 1:] -= pl[:, :-1]
    return d


def tv_seminorm(F, variant: str = "isotropic") -> float:
    """Total variation with forward differences that vanish off the grid."""
    gk, gl = _grad(np.asarray(F, dtype=float))
    if variant == "anisotropic":
        return float(np.abs(gk).sum() + np.abs(gl).sum())
    return float(np.sqrt(gk * gk + gl * gl).sum())


def _project_dual(pk, pl, variant):
    if variant == "anisotropic":
        return np.clip(pk, -1, 1), np.clip(pl, -1, 1)
    mag = np.maximum(1.0, np.sqrt(pk * pk + pl * pl))
    return pk / mag, pl / mag


def tv_prox(V, weight: float, n_iter: int = 50, tol: float = 1e-8,
            variant: str = "isotropic", nonneg: bool = True, dual=None,
            return_dual: bool = False):
    """Approximate ``argmin_U 1/2 |U - V|^2 + weight * TV(U)`` subject to ``U >= 0``.

    Fast dual projected gradient (Beck-Teboulle).  ``dual`` warm-starts the
    dual field from a previous call.
    """
    V = np.asarray(V, dtype=float)
    lo = 0.0 if nonneg else -np.inf
    if weight == 0:
        U = np.maximum(V, lo)
        return (U, None) if return_dual else U
    if V.ndim != 2 or V.size == 1:
        U = np.maximum(V, lo)
        return (U, None) if return_dual else U
    if dual is None:
        pk = np.zeros_like(V)
        pl = np.zeros_like(V)
    else:
        pk, pl = (a.copy() for a in dual)
    rk, rl = pk, pl
    t = 1.0
    step = 1.0 / (8.0 * weight)
    U = np.maximum(V + weight * _div(pk, pl), lo)
    for _ in range(n_iter):
        U_r = np.maximum(V + weight * _div(rk, rl), lo)
        gk, gl = _grad(U_r)
        pk_new, pl_new = _project_dual(rk + step * gk, rl + step * gl, variant)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        rk = pk_new + beta * (pk_new - pk)
        rl = pl_new + beta * (pl_new - pl)
        pk, pl, t = pk_new, pl_new, t_new
        U_new = np.maximum(V + weight * _div(pk, pl), lo)
        change = np.linalg.norm(U_new - U) / max(np.linalg.norm(U_new), 1e-300)
        U = U_new
        if change < tol:
            break
    return (U, (pk, pl)) if return_dual else U


# ---------------------------------------------------------- likelihoods

def _forward(op: ForwardOperator, F) -> np.ndarray:
    f = np.asarray(F, dtype=float).reshape(-1)
    if f.size != op.n * op.n:
        raise OperatorError(f"reflectivity has {f.size} entries, operator expects {op.n ** 2}")
    return op.kp * (op.matrix @ f)


def _adjoint(op: ForwardOperator, w: np.ndarray) -> np.ndarray:
    return (op.kp * (op.matrix.T @ w)).reshape(op.n, op.n)


def _check_counts(R: CountMatrix, op: ForwardOperator) -> None:
    if R.m != op.m:
        raise OperatorError(f"count matrix is {R.m}x{R.m}, operator expects {op.m}x{op.m}")


def nll_binomial(R: CountMatrix, F, op: ForwardOperator, floor: float = LOG_FLOOR) -> float:
    """Low-flux binomial negative log-likelihood with F-independent terms dropped."""
    _check_counts(R, op)
    eta = R.params.efficiency
    N = R.params.pulses
    r = R.counts.reshape(-1).astype(float)
    y = _forward(op, F)
    arg = np.maximum(eta * y + eta * R.params.background.reshape(-1), floor)
    logs = np.where(r > 0, r * np.log(arg), 0.0)
    return float(np.sum((N - r) * eta * y) - np.sum(logs))


def nll_binomial_grad(R: CountMatrix, F, op: ForwardOperator,
                      floor: float = LOG_FLOOR) -> np.ndarray:
    eta = R.params.efficiency
    N = R.params.pulses
    r = R.counts.reshape(-1).astype(float)
    y = _forward(op, F)
    arg = np.maximum(eta * y + eta * R.params.background.reshape(-1), floor)
    w = eta * (N - r) - eta * r / arg
    return _adjoint(op, w)


def nll_gaussian(Yhat, F, op: ForwardOperator) -> float:
    """Half the squared residual between rate estimates and ``K_p A f``."""
    yh = np.asarray(Yhat, dtype=float).reshape(-1)
    if yh.size != op.m * op.m:
        raise OperatorError(f"rate estimates have {yh.size} entries, expected {op.m ** 2}")
    res = yh - _forward(op, F)
    return float(0.5 * res @ res)


def nll_gaussian_grad(Yhat, F, op: ForwardOperator) -> np.ndarray:
    res = _forward(op, F) - np.asarray(Yhat, dtype=float).reshape(-1)
    return _adjoint(op, res)


def saturated_nll_binomial(R: CountMatrix) -> float:
    """Minimum of each count's term over its own mean; F-independent.

    Subtracting it makes the objective scale comparable across count levels,
    which the relative stopping test needs.
    """
    eta, N = R.params.efficiency, R.params.pulses
    r = R.counts.reshape(-1).astype(float)
    b = eta * R.params.background.reshape(-1)
    with np.errstate(divide="ignore"):
        # per-entry optimum of (N - r) * z - r * log(z + b) over z >= 0
        z = np.where(r > 0, np.maximum(r / np.maximum(N - r, 0.5) - b, 0.0), 0.0)
        logs = np.where(r > 0, r * np.log(np.maximum(z + b, LOG_FLOOR)), 0.0)
    return float(np.sum((N - r) * z) - np.sum(logs))


def matched_gaussian_lambda(lam_binomial: float, R: CountMatrix) -> float:
    """Gaussian weight that regularizes like ``lam_binomial`` does for these counts.

    Near its minimum the binomial term has curvature about ``1/var(Yhat)``
    times the Gaussian one, with ``var(Yhat) ~ R / (eta N)^2``.
    """
    eta, N = R.params.efficiency, R.params.pulses
    var = float(np.mean(R.counts)) / (eta * N) ** 2
    return lam_binomial * var


# --------------------------------------------------------------- solver

def _initial(op: ForwardOperator, cfg: ReconstructionConfig, yhat: np.ndarray) -> np.ndarray:
    if cfg.initialization == "uniform":
        return np.full((op.n, op.n), float(cfg.initial_value))
    b = _adjoint(op, yhat.reshape(-1))
    pred = _forward(op, b)
    denom = float(pred @ pred)
    scale = float(pred @ yhat.reshape(-1)) / denom if denom > 0 else 0.0
    F0 = np.maximum(b * scale, 0.0)
    if not F0.any():
        F0 = np.full((op.n, op.n), float(cfg.initial_value))
    return F0


def reconstruct(R: CountMatrix, op: ForwardOperator,
                cfg: ReconstructionConfig | None = None) -> ReconstructionResult:
    """Minimize likelihood + lambda * TV over F >= 0."""
    cfg = cfg or ReconstructionConfig()
    _check_counts(R, op)
    rule = cfg.step
    yhat = rate_estimate(R)

    if cfg.likelihood == "binomial":
        def smooth(F):
            return nll_binomial(R, F, op, cfg.log_floor)

        def grad(F):
            return nll_binomial_grad(R, F, op, cfg.log_floor)
    else:
        def smooth(F):
            return nll_gaussian(yhat, F, op)

        def grad(F):
            return nll_gaussian_grad(yhat, F, op)

    def objective(F):
        return smooth(F) + cfg.lam * tv_seminorm(F, cfg.tv)

    offset = saturated_nll_binomial(R) if cfg.likelihood == "binomial" else 0.0

    F = _initial(op, cfg, yhat)
    obj = objective(F)
    if not np.isfinite(obj):
        raise ReconstructionError(f"non-finite objective at initialization ({obj})")
    g = grad(F)
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return ReconstructionResult(F, [obj], 0, True, cfg, "zero gradient at start")
    alpha = gnorm / (rule.initial_step * max(np.linalg.norm(F), 1e-12))

    def prox(V, a, dual):
        return tv_prox(V, cfg.lam / a, cfg.tv_inner_iterations, cfg.tv_inner_tolerance,
                       cfg.tv, nonneg=True, dual=dual, return_dual=True)

    def stalled(trace):
        w = cfg.window
        if len(trace) <= max(w, cfg.min_iterations):
            return False
        return trace[-w - 1] - trace[-1] <= cfg.tolerance * w * max(abs(trace[-1] - offset), 1e-300)

    solve = _solve_mfista if cfg.method == "mfista" else _solve_bb
    return solve(F, obj, alpha, smooth, grad, objective, prox, stalled, cfg)


def _solve_bb(F, obj, alpha, smooth, grad, objective, prox, stalled, cfg):
    """Monotone proximal gradient with Barzilai-Borwein steps and backtracking."""
    rule = cfg.step
    trace = [obj]
    g = grad(F)
    dual = None
    reason = "iteration cap"
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        accepted = False
        for _ in range(rule.max_backtracks):
            F_new, dual_new = prox(F - g / alpha, alpha, dual)
            step = F_new - F
            obj_new = objective(F_new)
            if np.isfinite(obj_new) and (
                    obj_new <= obj - 0.5 * rule.sufficient_decrease * alpha * np.sum(step * step)):
                accepted = True
                break
            alpha /= rule.shrink
        if not accepted:
            it, reason = _underflow(it, alpha)
            break
        g_new = grad(F_new)
        s2 = float(np.sum(step * step))
        F, obj, dual = F_new, obj_new, dual_new
        trace.append(obj)
        if s2 == 0:
            converged, reason = True, "stationary"
            break
        curv = float(np.sum(step * (g_new - g))) / s2
        if curv > 0:
            alpha = min(max(curv, rule.bb_min), rule.bb_max)
        g = g_new
        if stalled(trace):
            converged, reason = True, "relative objective change below tolerance"
            break
    return ReconstructionResult(F, trace, it, converged, cfg, reason)


def _solve_mfista(F, obj, alpha, smooth, grad, objective, prox, stalled, cfg):
    """Monotone FISTA with adaptive backtracking and restart on objective increase.

    The candidate ``Z`` is accepted only when it does not increase the full
    objective, so the recorded trace is non-increasing.
    """
    rule = cfg.step
    trace = [obj]
    Yp = F.copy()
    t = 1.0
    dual = None
    reason = "iteration cap"
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gy = grad(Yp)
        sy = smooth(Yp)
        alpha *= rule.shrink ** 0.3   # let the step grow back slowly
        ok = False
        for _ in range(rule.max_backtracks):
            Z, dual_new = prox(Yp - gy / alpha, alpha, dual)
            d = Z - Yp
            sz = smooth(Z)
            if np.isfinite(sz) and sz <= sy + np.sum(gy * d) + 0.5 * alpha * np.sum(d * d):
                ok = True
                break
            alpha /= rule.shrink
        if not ok:
            it, reason = _underflow(it, alpha)
            break
        dual = dual_new
        obj_z = objective(Z)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if obj_z <= obj:
            F_prev, F, obj = F, Z, obj_z
            Yp = np.maximum(F + ((t - 1.0) / t_new) * (F - F_prev), 0.0)
            t = t_new
        else:
            # momentum overshoot: restart from the last accepted iterate
            Yp = F.copy()
            t = 1.0
        trace.append(obj)
        if obj_z <= obj and stalled(trace):
            converged, reason = True, "relative objective change below tolerance"
            break
    return ReconstructionResult(F, trace, it, converged, cfg, reason)


def _underflow(it: int, alpha: float) -> tuple[int, str]:
    if it == 1:
        raise ReconstructionError("backtracking failed on the first iteration "
                                  f"(step underflow, alpha={alpha:.3g})")
    reason = f"step underflow at iteration {it}"
    log.warning("reconstruct: %s; keeping last accepted iterate", reason)
    return it - 1, reason
