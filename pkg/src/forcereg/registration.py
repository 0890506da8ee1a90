"""Force-driven surface-matching registration.

The unknowns are nodal surface forces ``f``. Displacements follow from the
stabilized FEM, ``u = K'^-1 f``, and the objective is the closest-point
data term ``J = 1/2 ||C (x + u) - y||^2``. Forces are updated with Nesterov
momentum and a closed-form step length; correspondences are rebuilt from
the current displacements at every iteration and held fixed while the
gradient and step are computed.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

from .correspondence import CorrespondenceSet, build_correspondences
from .errors import ConfigError, DimensionMismatch, NonFiniteState, ZeroCurvature
from .fem import ElasticMaterial, StiffnessSystem, build_system
from .geometry import PointCloud, VolumeMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationConfig:
    k_ss: float = 0.01
    poisson_ratio: float = 0.49
    youngs_modulus: float = 1.0
    max_iters: int = 200
    force_mask: Optional[Sequence[int]] = None  # node ids; None -> all surface nodes
    fixed_nodes: Optional[Sequence[int]] = None
    fixed_penalty: float = 1e6
    kss_relative: bool = False
    step_mode: Literal["optimal", "fixed"] = "optimal"
    fixed_alpha: Optional[float] = None  # None -> 1/L at the initial correspondences
    momentum: Literal["nesterov", "none"] = "nesterov"
    # where the residual in the gradient is evaluated: u(f^k) or u(p^k)
    gradient_point: Literal["f", "p"] = "f"
    early_stop: bool = False
    early_stop_rtol: float = 1e-8
    early_stop_window: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ConfigError("poisson_ratio must lie in [0, 0.5)")
        if not self.youngs_modulus > 0:
            raise ConfigError("youngs_modulus must be positive")
        if self.k_ss < 0:
            raise ConfigError("k_ss must be non-negative")
        if self.step_mode not in ("optimal", "fixed"):
            raise ConfigError(f"unknown step_mode {self.step_mode!r}")
        if self.momentum not in ("nesterov", "none"):
            raise ConfigError(f"unknown momentum {self.momentum!r}")
        if self.gradient_point not in ("f", "p"):
            raise ConfigError(f"unknown gradient_point {self.gradient_point!r}")

    @property
    def material(self) -> ElasticMaterial:
        return ElasticMaterial(self.youngs_modulus, self.poisson_ratio)

    def with_overrides(self, **kw) -> "RegistrationConfig":
        return replace(self, **kw)


@dataclass
class TraceRow:
    iter: int
    J: float
    alpha: float
    grad_norm: float
    mean_residual: float


@dataclass
class OptimizerState:
    k: int
    f_curr: np.ndarray
    f_prev: np.ndarray
    p: np.ndarray
    u: np.ndarray
    alpha: float = 0.0
    J: float = 0.0
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class RegistrationResult:
    u_final: np.ndarray
    f_final: np.ndarray
    trace: list
    converged_iterations: int
    wall_time: float

    def write_trace(self, path) -> None:
        write_trace(path, self.trace)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "J", "alpha", "grad_norm", "mean_residual"])
        for r in trace:
            w.writerow([r.iter] + [repr(float(v)) for v in (r.J, r.alpha, r.grad_norm, r.mean_residual)])


def _points(y) -> np.ndarray:
    return (y.points if isinstance(y, PointCloud) else np.asarray(y, dtype=float)).ravel()


def data_term(corr: CorrespondenceSet, x: np.ndarray, u: np.ndarray, y) -> float:
    """``1/2 ||C (x + u) - y||^2`` summed over all 3m residual components."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    yv = _points(y)
    if x.shape != u.shape:
        raise DimensionMismatch("x and u differ in length")
    if yv.size != 3 * corr.m:
        raise DimensionMismatch("cloud size does not match correspondences")
    r = corr.apply_C(x + u) - yv
    return 0.5 * float(r @ r)


def dof_mask(nodes: Optional[Sequence[int]], n: int) -> Optional[np.ndarray]:
    if nodes is None:
        return None
    mask = np.zeros(3 * n, dtype=bool)
    nodes = np.asarray(nodes, dtype=np.int64)
    mask[(3 * nodes[:, None] + np.arange(3)).ravel()] = True
    return mask


def gradient(system: StiffnessSystem, corr: CorrespondenceSet, x, u_lagged, y,
             mask: Optional[np.ndarray] = None) -> np.ndarray:
    """``K'^-1 Cᵀ (C (x + u) - y)`` with C frozen, projected onto ``mask``."""
    x = np.asarray(x, dtype=float).ravel()
    r = corr.apply_C(x + np.asarray(u_lagged, dtype=float).ravel()) - _points(y)
    g = system.solve_adjoint(corr.apply_Ct(r))
    if mask is not None:
        g[~mask] = 0.0
    return g


def step_length(c_dir: np.ndarray, residual: np.ndarray) -> float:
    """Minimizer of ``1/2 ||residual - alpha * c_dir||^2`` over alpha."""
    den = float(c_dir @ c_dir)
    if den < 1e-30:
        raise ZeroCurvature(f"||C K'^-1 g||^2 = {den:.3e}")
    return float(c_dir @ residual) / den


def optimal_step(system: StiffnessSystem, corr: CorrespondenceSet, x, p, y, g) -> float:
    """Exact line minimizer of the frozen-C objective along ``-g`` from ``p``."""
    x = np.asarray(x, dtype=float).ravel()
    w_g = system.solve(g)
    w_p = system.solve(p)
    c_dir = corr.apply_C(w_g)
    residual = corr.apply_C(x + w_p) - _points(y)
    return step_length(c_dir, residual)


def inverse_lipschitz(system: StiffnessSystem, corr: CorrespondenceSet, mask: Optional[np.ndarray] = None,
                      iters: int = 50, seed: int = 0) -> float:
    """``1/L`` for the frozen-C objective, L from power iteration on its Hessian."""
    v = np.random.default_rng(seed).normal(size=system.n_dofs)
    if mask is not None:
        v[~mask] = 0.0
    v /= np.linalg.norm(v)
    L = 0.0
    for _ in range(iters):
        w = system.solve_adjoint(corr.apply_Ct(corr.apply_C(system.solve(v))))
        if mask is not None:
            w[~mask] = 0.0
        L = float(np.linalg.norm(w))
        if L == 0.0:
            raise ZeroCurvature("objective Hessian vanishes on the force mask")
        v = w / L
    return 1.0 / L


def nesterov_point(f_curr: np.ndarray, f_prev: np.ndarray, k: int, momentum: bool = True) -> np.ndarray:
    if not momentum:
        return f_curr.copy()
    return f_curr + (k / (k + 3.0)) * (f_curr - f_prev)


def register(mesh: VolumeMesh, cloud: PointCloud, config: RegistrationConfig = RegistrationConfig(),
             system: Optional[StiffnessSystem] = None) -> RegistrationResult:
    """Nonrigid registration of ``mesh`` to ``cloud``; both must be rigidly pre-aligned.

    ``system`` may be passed to reuse a factorization built with the same
    material, springs and fixed nodes.
    """
    t0 = time.perf_counter()
    if system is None:
        system = build_system(mesh, config.material, config.k_ss, fixed_nodes=config.fixed_nodes,
                              fixed_penalty=config.fixed_penalty, relative=config.kss_relative)
    n = mesh.n
    x = mesh.nodes.ravel()
    y = _points(cloud)
    surface = mesh.surface
    mask_nodes = surface.node_indices if config.force_mask is None else config.force_mask
    mask = dof_mask(mask_nodes, n)
    use_momentum = config.momentum == "nesterov"
    fixed_alpha = config.fixed_alpha

    state = OptimizerState(k=0, f_curr=np.zeros(3 * n), f_prev=np.zeros(3 * n),
                           p=np.zeros(3 * n), u=np.zeros(3 * n))
    history: list[float] = []
    iters_done = 0
    for k in range(config.max_iters):
        state.k = k
        state.u = system.solve(state.f_curr)
        corr = build_correspondences(surface, (x + state.u).reshape(-1, 3), y)
        state.p = nesterov_point(state.f_curr, state.f_prev, k, use_momentum)
        r = corr.apply_C(x + state.u) - y
        state.J = 0.5 * float(r @ r)
        u_grad = state.u if config.gradient_point == "f" else system.solve(state.p)
        g = gradient(system, corr, x, u_grad, y, mask)
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            state.trace.append(TraceRow(k, state.J, 0.0, 0.0, float(corr.distance.mean())))
            break
        if config.step_mode == "optimal":
            try:
                state.alpha = optimal_step(system, corr, x, state.p, y, g)
            except ZeroCurvature:
                logger.info("zero curvature at iteration %d; stopping", k)
                state.trace.append(TraceRow(k, state.J, 0.0, gnorm, float(corr.distance.mean())))
                break
        else:
            if fixed_alpha is None:
                fixed_alpha = inverse_lipschitz(system, corr, mask)
            state.alpha = fixed_alpha
        state.trace.append(TraceRow(k, state.J, state.alpha, gnorm, float(corr.distance.mean())))
        f_next = state.p - state.alpha * g
        if mask is not None:
            f_next[~mask] = 0.0
        if not np.all(np.isfinite(f_next)):
            raise NonFiniteState(f"non-finite forces at iteration {k}", trace=state.trace)
        state.f_prev, state.f_curr = state.f_curr, f_next
        iters_done = k + 1
        history.append(state.J)
        if config.early_stop and len(history) > config.early_stop_window:
            old = history[-1 - config.early_stop_window]
            if abs(old - state.J) <= config.early_stop_rtol * max(old, 1e-300):
                break

    u_final = system.solve(state.f_curr)
    if not np.all(np.isfinite(u_final)):
        raise NonFiniteState("non-finite final displacement", trace=state.trace)
    return RegistrationResult(
        u_final=u_final,
        f_final=state.f_curr.copy(),
        trace=state.trace,
        converged_iterations=iters_done,
        wall_time=time.perf_counter() - t0,
    )


def final_objective(mesh: VolumeMesh, cloud: PointCloud, u: np.ndarray) -> float:
    """Data term with correspondences rebuilt at ``x + u``."""
    pos = mesh.nodes + np.asarray(u).reshape(-1, 3)
    corr = build_correspondences(mesh.surface, pos, cloud)
    return data_term(corr, mesh.nodes, u, cloud)


def surface_residual(mesh: VolumeMesh, cloud: PointCloud, u: np.ndarray) -> np.ndarray:
    """Closest-point distance of each cloud point to the deformed surface."""
    pos = mesh.nodes + np.asarray(u).reshape(-1, 3)
    return build_correspondences(mesh.surface, pos, cloud).distance

