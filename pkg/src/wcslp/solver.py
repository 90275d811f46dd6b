"""Worst-case min-max precoder design via block coordinate ascent-descent.

The relaxed design problem is

    min_{u, t >= 0}  max_{||w|| <= eps}  ||G u + w||^2
                     + beta * ||H (G u + w) - (D s + A^{-1} W t)||^2

solved by alternating three steps: the inner maximisation over w (exact, via
the largest root of a secular equation), one accelerated projected-gradient
step on the non-negative slack t, and a closed-form update of u.  The inner
maximiser is w = -(P - mu I)^{-1} q with P = H^T H + (1/beta) I and
q = P G u - H^T Phi(t); the multiplier mu is the largest root of

    f(mu) = q^T (P - mu I)^{-2} q - eps^2,

which lies in (lam_bar_max, ||q||/eps + lam_bar_max] where
lam_bar_max = ||H||^2 + 1/beta, and f is strictly decreasing there, so a
bisection search is exact.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .constellation import CiGeometry
from .realify import RealChannel, RealDistortionMatrix

_TINY = 1e-300
# relative size of q below which the inner maximisation is treated as the
# degenerate (pure eigenvector) case
_DEGENERATE_RTOL = 1e-13


class SecularPoleError(ValueError):
    """Evaluation of the secular function at (or within rounding of) a pole."""


class RootSearchError(RuntimeError):
    """Bisection on the secular equation failed to locate the root."""


@dataclass
class SolverConfig:
    """Tunables of the outer loop and the scalar root search."""

    max_iterations: int = 5000
    outer_tol: float = 1e-8
    mu_tol: float = 1e-12           # relative bisection tolerance on mu
    root_method: str = "bisection"  # "bisection" | "closed-form-approx"
    bracket_inset: float = 1e-10    # relative inset above the pole boundary

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if min(self.outer_tol, self.mu_tol, self.bracket_inset) <= 0:
            raise ValueError("tolerances must be positive")
        if self.root_method not in ("bisection", "closed-form-approx"):
            raise ValueError(f"unknown root method {self.root_method!r}")


@dataclass
class SolverState:
    """Iterates of the block coordinate loop."""

    u: np.ndarray
    t: np.ndarray
    z: np.ndarray
    w: np.ndarray
    mu: float | None = None
    k: int = 0


@dataclass
class SolveReport:
    """Final iterates plus per-run diagnostics."""

    u: np.ndarray
    t: np.ndarray
    w: np.ndarray
    mu: float | None
    objective: float
    iterations: int
    trace: np.ndarray
    converged: bool
    limit_cycle: bool = False
    fixed_point_residual_max: float = 0.0
    w_norm_relerr_max: float = 0.0
    degenerate_w_steps: int = 0


@dataclass
class _ApgdConstants:
    sigma_min_sq: float
    momentum: float
    b: np.ndarray
    a_inv_t: np.ndarray


def _apgd_constants(geometry: CiGeometry) -> _ApgdConstants:
    # Momentum for the strongly convex projected-gradient step; the NNLS
    # Hessian is 2 (A A^T)^{-1}, condition number (sigma_max/sigma_min)^2.
    kappa = (geometry.sigma_max / geometry.sigma_min) ** 2
    momentum = (math.sqrt(kappa) - 1.0) / (math.sqrt(kappa) + 1.0)
    a_inv_t = geometry.a_inv.T
    b = np.eye(geometry.a.shape[0]) - geometry.sigma_min ** 2 * (a_inv_t @ geometry.a_inv)
    return _ApgdConstants(sigma_min_sq=geometry.sigma_min ** 2, momentum=momentum,
                          b=b, a_inv_t=a_inv_t)


@dataclass(repr=False)
class ProblemInstance:
    """One symbol slot's worst-case design problem.

    Construction validates shapes and invertibility and caches the
    eigendecomposition of H^T H; all later root searches and resolvent solves
    reuse it.  Treat instances as immutable and share them freely.
    """

    channel: RealChannel
    distortion: RealDistortionMatrix
    geometry: CiGeometry
    beta: float
    epsilon: float
    h: np.ndarray = field(init=False)
    g: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("penalty beta must be positive")
        if self.epsilon < 0:
            raise ValueError("distortion radius must be non-negative")
        if self.channel.n_t != self.distortion.n_t:
            raise ValueError("channel / distortion dimension mismatch")
        if self.geometry.n_r != self.channel.n_r:
            raise ValueError("geometry / channel user-count mismatch")
        self.h = self.channel.matrix
        self.g = self.distortion.matrix
        svals = np.linalg.svd(self.g, compute_uv=False)
        if svals[-1] <= svals[0] * 1e-12:
            raise ValueError("distortion matrix must be invertible")
        self._g_lu = lu_factor(self.g)
        self._init_channel_cache()
        self._init_geometry_cache()

    def _init_channel_cache(self) -> None:
        self.hth = self.h.T @ self.h
        evals, evecs = np.linalg.eigh(self.hth)
        self.evals = evals
        self.evecs = evecs
        self.poles = evals + 1.0 / self.beta
        self.lam_bar_max = float(evals[-1] + 1.0 / self.beta)

    def _init_geometry_cache(self) -> None:
        self.ds = self.geometry.d @ self.geometry.s
        self.a_inv_w = self.geometry.a_inv @ self.geometry.w
        self.apgd = _apgd_constants(self.geometry)

    def with_geometry(self, geometry: CiGeometry) -> "ProblemInstance":
        """Clone for a new symbol slot, reusing the channel factorisations."""
        if geometry.n_r != self.channel.n_r:
            raise ValueError("geometry / channel user-count mismatch")
        clone = object.__new__(ProblemInstance)
        clone.__dict__.update(self.__dict__)
        clone.geometry = geometry
        clone._init_geometry_cache()
        return clone

    # -- small linear-algebra helpers reused across the ops ---------------
    def apply_p(self, x: np.ndarray) -> np.ndarray:
        return self.hth @ x + x / self.beta

    def apply_p_inv(self, x: np.ndarray) -> np.ndarray:
        return self.evecs @ ((self.evecs.T @ x) / self.poles)

    def solve_g(self, x: np.ndarray) -> np.ndarray:
        return lu_solve(self._g_lu, x)

    def phi_fast(self, t: np.ndarray) -> np.ndarray:
        # same value as phi(t, self.geometry), skipping validation
        return self.ds + self.a_inv_w @ t


def phi(t, geometry: CiGeometry) -> np.ndarray:
    """CI target vector D s + A^{-1} W t for a non-negative slack t."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("slack t must be componentwise non-negative")
    return geometry.d @ geometry.s + geometry.a_inv @ (geometry.w @ t)


def relaxed_objective(u, t, w, instance: ProblemInstance) -> float | np.ndarray:
    """Penalised worst-case objective ||Gu+w||^2 + beta ||H(Gu+w) - Phi(t)||^2.

    ``w`` may carry leading batch axes; the return value then has those axes.
    """
    x = instance.g @ np.asarray(u, dtype=float) + np.asarray(w, dtype=float)
    resid = x @ instance.h.T - phi(t, instance.geometry)
    val = np.sum(x * x, axis=-1) + instance.beta * np.sum(resid * resid, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def _q_vector(u, t, instance: ProblemInstance) -> np.ndarray:
    gu = instance.g @ np.asarray(u, dtype=float)
    return instance.apply_p(gu) - instance.h.T @ instance.phi_fast(np.asarray(t, dtype=float))


def _secular_parts(u, t, instance):
    q = _q_vector(u, t, instance)
    qt = instance.evecs.T @ q
    return q, qt * qt


def _secular_from_parts(mu: float, qt2: np.ndarray, poles: np.ndarray,
                        eps: float) -> float:
    diff = poles - mu
    if np.min(np.abs(diff)) <= 1e-13 * max(1.0, abs(mu)):
        raise SecularPoleError(f"mu={mu!r} is within rounding of a pole of f")
    return float(np.sum(qt2 / (diff * diff)) - eps * eps)


def secular_value(mu: float, u, t, instance: ProblemInstance) -> float:
    """Secular function f(mu) = q^T (P - mu I)^{-2} q - eps^2."""
    _, qt2 = _secular_parts(u, t, instance)
    return _secular_from_parts(mu, qt2, instance.poles, instance.epsilon)


def _q_scale(u, t, instance: ProblemInstance) -> float:
    gu = instance.g @ np.asarray(u, dtype=float)
    pg = instance.apply_p(gu)
    ht_phi = instance.h.T @ phi(t, instance.geometry)
    return max(1.0, float(np.linalg.norm(pg)), float(np.linalg.norm(ht_phi)))


def mu_bracket(u, t, instance: ProblemInstance) -> tuple[float, float]:
    """Root bracket (lam_bar_max, ||q||/eps + lam_bar_max] for the multiplier."""
    if instance.epsilon <= 0:
        raise ValueError("bracket undefined for epsilon = 0 (w is fixed to 0)")
    q = _q_vector(u, t, instance)
    qn = float(np.linalg.norm(q))
    if qn <= _DEGENERATE_RTOL * _q_scale(u, t, instance):
        raise ValueError("degenerate q = 0: no secular root exists")
    return instance.lam_bar_max, qn / instance.epsilon + instance.lam_bar_max


def _root_from_parts(qt2: np.ndarray, poles: np.ndarray, eps: float, lam: float,
                     config: SolverConfig, mu_hint: float | None = None) -> float:
    """Largest secular root from precomputed eigen-parts.

    Bisection on the analytic bracket, with a warm-start window around
    ``mu_hint`` and a bracket-safeguarded Newton finish (f is convex and
    strictly decreasing right of the poles, so Newton stays bracketed).
    """
    eps2 = eps * eps
    qn = math.sqrt(float(qt2.sum()))

    def f(mu):
        diff = poles - mu
        return float(qt2 @ (1.0 / (diff * diff))) - eps2

    lo = lam * (1.0 + config.bracket_inset)
    hi = qn / eps + lam
    f_lo = f(lo)
    if f_lo <= 0.0:
        # Root squeezed between the pole boundary and the inset point: scan
        # log-spaced gaps toward the pole until f turns positive.
        gap = lo - lam
        hi = lo
        found = False
        for _ in range(200):
            gap *= 0.1
            cand = lam + gap
            if cand <= lam or gap < 4.0 * np.finfo(float).eps * lam:
                break
            if f(cand) > 0.0:
                lo, found = cand, True
                break
            hi = cand
        if not found:
            raise RootSearchError(
                "no sign change above the pole boundary: "
                f"lam_bar_max={lam!r}, f at inset={f_lo!r}, ||q||={qn!r}, eps={eps!r}")
    else:
        f_hi = f(hi)
        guard = 0
        while f_hi > 0.0 and guard < 60:  # cannot happen per the bracket bound
            hi = lam + 2.0 * (hi - lam)
            f_hi = f(hi)
            guard += 1
        if f_hi > 0.0:
            raise RootSearchError(
                f"secular function positive beyond the bracket: lam_bar_max={lam!r}")
        if mu_hint is not None and lo < mu_hint < hi:
            # warm start from the previous outer iteration: probe a small
            # window around the hint to collapse most of the bracket
            if f(mu_hint) > 0.0:
                lo = mu_hint
                near = mu_hint * (1.0 + 1e-4)
                if lo < near < hi and f(near) <= 0.0:
                    hi = near
            else:
                hi = mu_hint
                near = mu_hint * (1.0 - 1e-4)
                if lo < near < hi and f(near) > 0.0:
                    lo = near

    steps = 0
    width_target = config.mu_tol * max(1.0, hi)
    while hi - lo > max(width_target, 1e-3 * max(1.0, hi)) and steps < 300:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        steps += 1
    if steps >= 300:
        raise RootSearchError(
            f"bisection failed to converge: bracket=({lo!r}, {hi!r})")

    mu = 0.5 * (lo + hi)
    for _ in range(60):  # bracket-safeguarded Newton to the mu tolerance
        diff = poles - mu
        r = qt2 / (diff * diff)
        f_mu = float(r.sum()) - eps2
        if f_mu > 0.0:
            lo = max(lo, mu)
        else:
            hi = min(hi, mu)
        slope = 2.0 * float((r / diff).sum())
        nxt = mu - f_mu / slope if slope != 0.0 else mu
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - mu) <= config.mu_tol * max(1.0, abs(mu)):
            mu = nxt
            break
        mu = nxt
    return float(mu)


def solve_mu(u, t, instance: ProblemInstance, config: SolverConfig | None = None,
             mu_hint: float | None = None) -> float:
    """Largest root of the secular equation, located by a bisection search.

    f is strictly decreasing right of the pole boundary, so the sign of f
    steers the bisection on the bracket; bracket-safeguarded Newton steps
    finish the root to the configured tolerance.  Returns lam_bar_max for the
    degenerate q = 0 case (the caller then builds w from the top eigenvector
    of P).
    """
    config = config or SolverConfig()
    if instance.epsilon <= 0:
        raise ValueError("solve_mu requires epsilon > 0")
    q, qt2 = _secular_parts(u, t, instance)
    qn = float(np.linalg.norm(q))
    if qn <= _DEGENERATE_RTOL * _q_scale(u, t, instance):
        return instance.lam_bar_max
    return _root_from_parts(qt2, instance.poles, instance.epsilon,
                            instance.lam_bar_max, config, mu_hint)


def approx_mu(u, t, instance: ProblemInstance) -> float:
    """Closed-form small-eps approximation 2 * (||P q||^2 / eps^2)^(1/3)."""
    if instance.epsilon <= 0:
        raise ValueError("approx_mu requires epsilon > 0")
    q = _q_vector(u, t, instance)
    pq = instance.apply_p(q)
    ratio = float(np.dot(pq, pq)) / instance.epsilon ** 2
    return 2.0 * ratio ** (1.0 / 3.0)


def _degenerate_w(u, t, instance: ProblemInstance) -> np.ndarray:
    # q = 0 leaves only the quadratic term: the maximiser is the scaled top
    # eigenvector of P; evaluate both signs in case of numerical asymmetry
    # (ties within rounding resolve to + so all code paths agree).
    v = instance.evecs[:, -1]
    cand = instance.epsilon * v
    obj_p = relaxed_objective(u, t, cand, instance)
    obj_m = relaxed_objective(u, t, -cand, instance)
    if obj_m > obj_p * (1.0 + 1e-12):
        return -cand
    return cand


def worst_case_w(u, t, mu: float, instance: ProblemInstance) -> np.ndarray:
    """Inner maximiser w = -(P - mu I)^{-1} q on the distortion sphere."""
    if instance.epsilon == 0:
        return np.zeros(2 * instance.channel.n_t)
    q, _ = _secular_parts(u, t, instance)
    if float(np.linalg.norm(q)) <= _DEGENERATE_RTOL * _q_scale(u, t, instance):
        return _degenerate_w(u, t, instance)
    diff = instance.poles - mu
    if np.min(np.abs(diff)) <= 1e-13 * max(1.0, abs(mu)):
        raise SecularPoleError(f"shift mu={mu!r} is singular")
    qt = instance.evecs.T @ q
    return -(instance.evecs @ (qt / diff))


def apgd_t_step(state: SolverState, instance: ProblemInstance
                ) -> tuple[np.ndarray, np.ndarray]:
    """One accelerated projected-gradient step on the non-negative slack.

    Equivalent to a projected gradient step of size sigma_min^2 / 2 on
    ||H(Gu+w) - Ds - A^{-1} t||^2 from the momentum iterate z, followed by
    the momentum extrapolation.
    """
    c = instance.apgd
    y = instance.g @ state.u + state.w
    r = instance.h @ y - instance.ds
    t_new = np.maximum(c.b @ state.z + c.sigma_min_sq * (c.a_inv_t @ r), 0.0)
    z_new = t_new + c.momentum * (t_new - state.t)
    return t_new, z_new


def update_u(t, w, instance: ProblemInstance) -> np.ndarray:
    """Closed-form minimiser u = G^{-1} P^{-1} H^T Phi(t) - G^{-1} w."""
    y = instance.apply_p_inv(instance.h.T @ phi(t, instance.geometry))
    return instance.solve_g(y - np.asarray(w, dtype=float))


def _w_step(u, t, instance, config, mu_hint):
    """Shared w-update used by solve(); returns (w, mu, degenerate)."""
    gu = instance.g @ u
    pgu = instance.apply_p(gu)
    ht_phi = instance.h.T @ instance.phi_fast(t)
    q = pgu - ht_phi
    qt = instance.evecs.T @ q
    qt2 = qt * qt
    qn = math.sqrt(float(qt2.sum()))
    scale = max(1.0, math.sqrt(float(pgu @ pgu)), math.sqrt(float(ht_phi @ ht_phi)))
    if qn <= _DEGENERATE_RTOL * scale:
        return _degenerate_w(u, t, instance), instance.lam_bar_max, True
    if config.root_method == "closed-form-approx":
        pq = instance.apply_p(q)
        mu = 2.0 * (float(pq @ pq) / instance.epsilon ** 2) ** (1.0 / 3.0)
        diff = instance.poles - mu
        if np.min(np.abs(diff)) <= 1e-13 * max(1.0, abs(mu)):
            raise SecularPoleError(f"approximate shift mu={mu!r} is singular")
        w = -(instance.evecs @ (qt / diff))
        # keep the iterate on the sphere; the approximate multiplier does not
        w = instance.epsilon * w / float(np.linalg.norm(w))
        return w, mu, False
    mu = _root_from_parts(qt2, instance.poles, instance.epsilon,
                          instance.lam_bar_max, config, mu_hint)
    diff = instance.poles - mu
    return -(instance.evecs @ (qt / diff)), mu, False


def solve(instance: ProblemInstance, config: SolverConfig | None = None) -> SolveReport:
    """Run the three-step block coordinate ascent-descent loop.

    Starts from t = z = 0 and u equal to the regularised channel inversion of
    D s (the w = 0 closed form).  Terminates when the relative change of
    (u, t) over a one- or two-iteration window drops below ``outer_tol``; the
    two-iteration window is needed because the exact u-update makes the inner
    maximiser settle into a sign-flipping two-cycle on the top eigenvector of
    P, which bounds single-step changes away from zero (reported via
    ``limit_cycle``).  Non-convergence is reported, not raised.
    """
    config = config or SolverConfig()
    if config.root_method == "closed-form-approx" and instance.epsilon > 0:
        warnings.warn(
            "closed-form-approx multiplier is a small-eps shortcut; the inner "
            "maximisation is then only approximate", RuntimeWarning, stacklevel=2)
    n_t, n_r = instance.channel.n_t, instance.channel.n_r
    state = SolverState(u=np.zeros(2 * n_t), t=np.zeros(2 * n_r),
                        z=np.zeros(2 * n_r), w=np.zeros(2 * n_t))
    state.u = update_u(state.t, state.w, instance)
    eps = instance.epsilon

    trace: list[float] = []
    fp_max = 0.0
    w_err_max = 0.0
    degenerate_steps = 0
    converged = False
    limit_cycle = False
    u_prev2 = t_prev2 = None

    for k in range(1, config.max_iterations + 1):
        u_old, t_old = state.u, state.t
        if eps > 0:
            state.w, state.mu, degen = _w_step(state.u, state.t, instance,
                                               config, mu_hint=state.mu)
            degenerate_steps += degen
            if not degen:
                w_err_max = max(w_err_max,
                                abs(float(np.linalg.norm(state.w)) / eps - 1.0))
        state.t, state.z = apgd_t_step(state, instance)
        phi_t = instance.phi_fast(state.t)
        y = instance.apply_p_inv(instance.h.T @ phi_t)
        state.u = instance.solve_g(y - state.w)
        state.k = k
        x = instance.g @ state.u + state.w
        resid = x - y
        fp_max = max(fp_max, math.sqrt(float(np.dot(resid, resid)))
                     / max(float(np.linalg.norm(phi_t)), _TINY))
        pen = instance.h @ x - phi_t
        trace.append(float(np.dot(x, x)) + instance.beta * float(np.dot(pen, pen)))

        du = np.linalg.norm(state.u - u_old) / max(np.linalg.norm(state.u), _TINY)
        dt = np.linalg.norm(state.t - t_old) / (1.0 + np.linalg.norm(state.t))
        change1 = max(float(du), float(dt))
        change2 = math.inf
        if u_prev2 is not None:
            du2 = np.linalg.norm(state.u - u_prev2) / max(np.linalg.norm(state.u), _TINY)
            dt2 = np.linalg.norm(state.t - t_prev2) / (1.0 + np.linalg.norm(state.t))
            change2 = max(float(du2), float(dt2))
        u_prev2, t_prev2 = u_old, t_old
        if change1 <= config.outer_tol or change2 <= config.outer_tol:
            converged = True
            limit_cycle = change1 > config.outer_tol
            break

    return SolveReport(u=state.u, t=state.t, w=state.w, mu=state.mu,
                       objective=trace[-1], iterations=state.k,
                       trace=np.asarray(trace), converged=converged,
                       limit_cycle=limit_cycle,
                       fixed_point_residual_max=fp_max,
                       w_norm_relerr_max=w_err_max,
                       degenerate_w_steps=degenerate_steps)


@dataclass
class BatchSolveResult:
    """Per-column outputs of :func:`solve_batch` (one column per symbol slot)."""

    u: np.ndarray
    t: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    limit_cycle: np.ndarray
    fixed_point_residual_max: np.ndarray


def _diag_blocks(mat: np.ndarray, n: int) -> np.ndarray:
    return np.stack([mat[2 * i:2 * i + 2, 2 * i:2 * i + 2] for i in range(n)])


def _bmv(blocks: np.ndarray, vec: np.ndarray) -> np.ndarray:
    s, n = vec.shape[0], blocks.shape[1]
    out = np.einsum("snij,snj->sni", blocks, vec.reshape(s, n, 2))
    return out.reshape(s, 2 * n)


def solve_batch(proto: ProblemInstance, geometries,
                config: SolverConfig | None = None) -> BatchSolveResult:
    """Run :func:`solve` for many symbol slots of one channel simultaneously.

    All slots share the channel, distortion matrix, beta and epsilon of
    ``proto``; ``geometries`` supplies one CiGeometry per slot.  Column j
    follows exactly the update sequence of ``solve`` on slot j (its iterates
    are frozen once its termination fires), so results match the scalar path
    up to BLAS rounding.  Used by the link simulator, where per-symbol
    sequential solves would dominate the runtime.
    """
    config = config or SolverConfig()
    if config.root_method != "bisection":
        raise ValueError("solve_batch supports only the bisection root method")
    n_t, n_r = proto.channel.n_t, proto.channel.n_r
    geometries = list(geometries)
    s_count = len(geometries)
    h, g = proto.h, proto.g
    hth, evecs, poles = proto.hth, proto.evecs, proto.poles
    beta, eps, lam = proto.beta, proto.epsilon, proto.lam_bar_max

    ds = np.stack([gm.d @ gm.s for gm in geometries])
    ainv_b = np.stack([_diag_blocks(gm.a_inv, n_r) for gm in geometries])
    ainv_t_b = np.transpose(ainv_b, (0, 1, 3, 2))
    aat_inv_b = np.einsum("snji,snjk->snik", ainv_b, ainv_b)
    smin_sq = np.array([gm.sigma_min ** 2 for gm in geometries])
    kappa = np.array([(gm.sigma_max / gm.sigma_min) ** 2 for gm in geometries])
    momentum = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
    b_blocks = (np.eye(2)[None, None, :, :]
                - smin_sq[:, None, None, None] * aat_inv_b)

    t_cur = np.zeros((s_count, 2 * n_r))
    z_cur = np.zeros((s_count, 2 * n_r))
    w_cur = np.zeros((s_count, 2 * n_t))
    mu_cur = np.full(s_count, np.nan)
    mu_hint = np.full(s_count, np.nan)
    # initial u: regularised channel inversion of D s (w = 0, t = 0)
    y0 = ((ds @ h) @ evecs / poles) @ evecs.T
    u_cur = lu_solve(proto._g_lu, y0.T).T

    out_u = u_cur.copy()
    out_t = t_cur.copy()
    out_w = w_cur.copy()
    out_mu = mu_cur.copy()
    iterations = np.full(s_count, config.max_iterations)
    converged = np.zeros(s_count, dtype=bool)
    limit_cycle = np.zeros(s_count, dtype=bool)
    fp_max = np.zeros(s_count)
    active = np.ones(s_count, dtype=bool)
    u_prev2 = t_prev2 = None
    v_top = evecs[:, -1]

    def secular_batch(mu_vec, qt2):
        diff = poles[None, :] - mu_vec[:, None]
        return np.sum(qt2 / (diff * diff), axis=1) - eps * eps

    for k in range(1, config.max_iterations + 1):
        u_old, t_old = u_cur, t_cur
        gu = u_cur @ g.T
        if eps > 0:
            pgu = gu @ hth.T + gu / beta
            ht_phi = (ds + _bmv(ainv_b, t_cur)) @ h
            q = pgu - ht_phi
            qt = q @ evecs
            qt2 = qt * qt
            qn = np.sqrt(qt2.sum(axis=1))
            scale = np.maximum(1.0, np.maximum(np.linalg.norm(pgu, axis=1),
                                               np.linalg.norm(ht_phi, axis=1)))
            degen = qn <= _DEGENERATE_RTOL * scale
            idx = ~degen
            if np.any(idx):
                lo = np.full(s_count, lam * (1.0 + config.bracket_inset))
                hi = np.where(idx, qn / max(eps, _TINY) + lam, lam * 2.0)
                f_lo = secular_batch(lo, qt2)
                bad = idx & (f_lo <= 0.0)
                for j in np.flatnonzero(bad):
                    # root squeezed against the pole: scalar fallback
                    mu_j = _root_from_parts(qt2[j], poles, eps, lam, config)
                    lo[j] = hi[j] = mu_j
                hints = mu_hint.copy()
                ok = idx & ~bad & np.isfinite(hints) & (hints > lo) & (hints < hi)
                if np.any(ok):
                    f_h = secular_batch(np.where(ok, hints, lo + 1.0), qt2)
                    pos = ok & (f_h > 0.0)
                    lo = np.where(pos, hints, lo)
                    hi = np.where(ok & ~pos, hints, hi)
                    near = np.where(pos, hints * (1.0 + 1e-4), hints * (1.0 - 1e-4))
                    ok2 = ok & (near > lo) & (near < hi)
                    if np.any(ok2):
                        f_n = secular_batch(np.where(ok2, near, lo + 1.0), qt2)
                        shrink_hi = ok2 & pos & (f_n <= 0.0)
                        shrink_lo = ok2 & ~pos & (f_n > 0.0)
                        hi = np.where(shrink_hi, near, hi)
                        lo = np.where(shrink_lo, near, lo)
                for _ in range(300):
                    width = hi - lo
                    run = idx & (width > config.mu_tol * np.maximum(1.0, hi))
                    if not np.any(run):
                        break
                    mid = 0.5 * (lo + hi)
                    f_mid = secular_batch(mid, qt2)
                    pos = f_mid > 0.0
                    lo = np.where(run & pos, mid, lo)
                    hi = np.where(run & ~pos, mid, hi)
                mu_new = 0.5 * (lo + hi)
                for _ in range(4):  # clamped Newton polish
                    diff = poles[None, :] - mu_new[:, None]
                    f_val = np.sum(qt2 / (diff * diff), axis=1) - eps * eps
                    slope = 2.0 * np.sum(qt2 / (diff * diff * diff), axis=1)
                    with np.errstate(divide="ignore", invalid="ignore"):
                        nxt = mu_new - f_val / slope
                    good = idx & np.isfinite(nxt) & (nxt >= lo) & (nxt <= hi)
                    mu_new = np.where(good, nxt, mu_new)
                mu_cur = np.where(idx, mu_new, lam)
                diff = poles[None, :] - mu_cur[:, None]
                w_new = -(qt / diff) @ evecs.T
                w_cur = np.where(idx[:, None], w_new, w_cur)
                mu_hint = np.where(idx, mu_cur, mu_hint)
            if np.any(degen):
                cand = eps * v_top
                rows = np.flatnonzero(degen)
                x_p = gu[rows] + cand
                x_m = gu[rows] - cand
                phi_rows = ds[rows] + _bmv(ainv_b[rows], t_cur[rows])
                rp = x_p @ h.T - phi_rows
                rm = x_m @ h.T - phi_rows
                obj_p = np.sum(x_p * x_p, 1) + beta * np.sum(rp * rp, 1)
                obj_m = np.sum(x_m * x_m, 1) + beta * np.sum(rm * rm, 1)
                sign = np.where(obj_m > obj_p * (1.0 + 1e-12), -1.0, 1.0)
                w_cur = w_cur.copy()
                w_cur[rows] = sign[:, None] * cand
                mu_cur = np.where(degen, lam, mu_cur)
        # t-step, then closed-form u
        x = gu + w_cur
        r = x @ h.T - ds
        t_new = np.maximum(_bmv(b_blocks, z_cur)
                           + smin_sq[:, None] * _bmv(ainv_t_b, r), 0.0)
        z_cur = t_new + momentum[:, None] * (t_new - t_cur)
        t_cur = t_new
        phi_new = ds + _bmv(ainv_b, t_cur)
        y = ((phi_new @ h) @ evecs / poles) @ evecs.T
        u_cur = lu_solve(proto._g_lu, (y - w_cur).T).T
        resid = np.linalg.norm(u_cur @ g.T + w_cur - y, axis=1)
        fp = resid / np.maximum(np.linalg.norm(phi_new, axis=1), _TINY)
        fp_max = np.where(active, np.maximum(fp_max, fp), fp_max)

        du = (np.linalg.norm(u_cur - u_old, axis=1)
              / np.maximum(np.linalg.norm(u_cur, axis=1), _TINY))
        dt = (np.linalg.norm(t_cur - t_old, axis=1)
              / (1.0 + np.linalg.norm(t_cur, axis=1)))
        change1 = np.maximum(du, dt)
        change2 = np.full(s_count, np.inf)
        if u_prev2 is not None:
            du2 = (np.linalg.norm(u_cur - u_prev2, axis=1)
                   / np.maximum(np.linalg.norm(u_cur, axis=1), _TINY))
            dt2 = (np.linalg.norm(t_cur - t_prev2, axis=1)
                   / (1.0 + np.linalg.norm(t_cur, axis=1)))
            change2 = np.maximum(du2, dt2)
        u_prev2, t_prev2 = u_old, t_old
        done = active & ((change1 <= config.outer_tol)
                         | (change2 <= config.outer_tol))
        if np.any(done):
            rows = np.flatnonzero(done)
            out_u[rows] = u_cur[rows]
            out_t[rows] = t_cur[rows]
            out_w[rows] = w_cur[rows]
            out_mu[rows] = mu_cur[rows]
            iterations[rows] = k
            converged[rows] = True
            limit_cycle[rows] = change1[rows] > config.outer_tol
            active &= ~done
        if not np.any(active):
            break

    rows = np.flatnonzero(active)
    out_u[rows] = u_cur[rows]
    out_t[rows] = t_cur[rows]
    out_w[rows] = w_cur[rows]
    out_mu[rows] = mu_cur[rows]
    return BatchSolveResult(u=out_u, t=out_t, w=out_w, mu=out_mu,
                            iterations=iterations, converged=converged,
                            limit_cycle=limit_cycle,
                            fixed_point_residual_max=fp_max)


def nominal_slp(channel: RealChannel, geometry: CiGeometry
                ) -> tuple[np.ndarray, np.ndarray]:
    """Undistorted power-minimising precoder with hard CI constraints.

    Solves min ||x||^2 subject to H x = D s + A^{-1} W t, t >= 0, by
    eliminating x = H^+ (D s + A^{-1} W t) and handing the reduced problem to
    an exact non-negative least-squares solver.
    """
    from scipy.linalg import cholesky, solve_triangular
    from scipy.optimize import nnls

    h = channel.matrix
    svals = np.linalg.svd(h, compute_uv=False)
    if svals[-1] <= max(h.shape) * np.finfo(float).eps * svals[0]:
        raise ValueError("channel must have full row rank")
    ds = geometry.d @ geometry.s
    a_inv_w = geometry.a_inv @ geometry.w
    chol = cholesky(h @ h.T, lower=True)
    # ||H^+ Phi(t)||^2 = ||L^{-1} Phi(t)||^2 with H H^T = L L^T
    design = solve_triangular(chol, a_inv_w, lower=True)
    target = -solve_triangular(chol, ds, lower=True)
    t, _ = nnls(design, target)
    phi_t = ds + a_inv_w @ t
    x = h.T @ solve_triangular(chol.T, solve_triangular(chol, phi_t, lower=True),
                               lower=False)
    return x, t


def count_secular_roots(u, t, instance: ProblemInstance) -> int:
    """Number of real roots of the secular function (diagnostic, small sizes).

    The real line is partitioned at the distinct poles of f.  On each outer
    tail f is monotone with limit -eps^2, giving one root per tail; on each
    interior interval f is strictly convex, so the sign of its minimum
    (located by bisection on f') decides between zero and two roots.
    Tangential double roots count as two.
    """
    if instance.epsilon <= 0:
        return 0
    _, qt2 = _secular_parts(u, t, instance)
    total = float(qt2.sum())
    if total <= 0.0:
        raise ValueError("count_secular_roots requires q != 0")
    # cluster numerically coincident eigenvalues into single poles
    order = np.argsort(instance.poles)
    poles_sorted = instance.poles[order]
    weights_sorted = qt2[order]
    poles: list[float] = []
    weights: list[float] = []
    for p, wt in zip(poles_sorted, weights_sorted):
        if poles and p - poles[-1] <= 1e-9 * max(1.0, abs(p)):
            weights[-1] += wt
        else:
            poles.append(float(p))
            weights.append(float(wt))
    keep = [i for i, wt in enumerate(weights) if wt > total * 1e-28]
    if not keep:
        raise ValueError("count_secular_roots requires q != 0")
    poles_arr = np.array([poles[i] for i in keep])
    weights_arr = np.array([weights[i] for i in keep])
    eps2 = instance.epsilon ** 2

    def f(mu):
        d = poles_arr - mu
        return float(np.sum(weights_arr / (d * d))) - eps2

    def fprime(mu):
        d = poles_arr - mu
        return float(2.0 * np.sum(weights_arr / (d * d * d)))

    count = 2  # one root on each monotone tail
    for p_left, p_right in zip(poles_arr[:-1], poles_arr[1:]):
        width = p_right - p_left
        lo = p_left + 1e-9 * width
        hi = p_right - 1e-9 * width
        if fprime(lo) >= 0.0 or fprime(hi) <= 0.0:
            continue  # minimum sits inside a guard sliver next to a pole
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if fprime(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        f_min = f(0.5 * (lo + hi))
        if f_min < 0.0:
            count += 2
        elif f_min == 0.0:
            count += 2  # tangency, counted with multiplicity
    return count
