"""Explicit pseudo-time driver for the steady distributed-residual system.

The accumulated per-DOF residual R(sigma) is marched to zero with forward
Euler on the lumped system,

    u_sigma <- u_sigma - (dtau_sigma / mu_sigma) R(sigma),

where mu_sigma is the (positive, diagonal-mass) lumped measure of the DOF
and dtau_sigma = cfl * mu_sigma / Lambda_K with Lambda_K = 0.5 * (2k + 1) *
wavespeed * perimeter, the inverse element time scale of the explicit
stability bound.  Both uniform (global minimum) and per-DOF step modes are
available; the uniform mode keeps the mass-weighted state sum changing only
through boundary fluxes, step by step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import entropy as entropy_mod
from .discretization import BoundaryData, Discretization
from .physics import ConservationLaw
from .residual import assemble_global, compute_residuals


class SolverDiverged(RuntimeError):
    pass


@dataclass
class SolverConfig:
    cfl: float = 0.4
    max_iters: int = 20000
    residual_tol: float = 1e-12
    variant: str = "fr"
    flux: str = "rusanov"
    local_dt: bool = True
    jump_coeff: float = 0.1  # dissipation scale of the "st" variant
    divergence_limit: float = 1e8
    stagnation_window: int = 200
    stagnation_eps: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.residual_tol <= 0.0:
            raise ValueError("residual_tol must be positive")


@dataclass
class SolveTrace:
    res_l2: list[float] = field(default_factory=list)
    res_linf: list[float] = field(default_factory=list)
    entropy_balance: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stagnated: bool = False
    wall_time: float = 0.0


def lumped_measures(disc: Discretization) -> np.ndarray:
    """Positive per-DOF measures (diagonal-mass lumping, sums to |K|)."""
    mu = np.zeros(disc.n_dofs)
    for g in disc.groups:
        mu[g.dof_idx.reshape(-1)] = g.mass_diag.reshape(-1)
    return mu


def _dt_over_mu(disc: Discretization, law: ConservationLaw, u: np.ndarray,
                config: SolverConfig, mu: np.ndarray) -> np.ndarray:
    coef = np.zeros(disc.n_dofs)
    scale = 0.5 * (2 * disc.degree + 1)
    for gi, g in enumerate(disc.groups):
        speeds = law.max_wave_speed(u[g.dof_idx]).max(axis=1)
        lam = np.maximum(scale * speeds * g.perimeters, 1e-14)
        coef[g.dof_idx.reshape(-1)] = np.repeat(config.cfl / lam, g.n_dof)
    if not config.local_dt:
        # uniform step: dtau = min(cfl * mu / Lambda), applied as dtau / mu
        dtau = float((coef * mu).min())
        return dtau / mu
    return coef


def residual_vector(disc: Discretization, law: ConservationLaw, u: np.ndarray,
                    config: SolverConfig, bc) -> tuple[np.ndarray, float]:
    if config.variant == "st":
        fr = compute_residuals(disc, law, u, "fr", config.flux, bc)
        cs = entropy_mod.cs_residuals(disc, law, u, fr)
        rset = entropy_mod.st_residuals(disc, law, u, cs, jump_coeff=config.jump_coeff)
    else:
        rset = compute_residuals(disc, law, u, config.variant, config.flux, bc)
    R = assemble_global(disc, rset)
    gap = float(
        np.einsum(
            "edp,edp->",
            entropy_mod.entropy_nodes(disc, law, u),
            rset.phi,
        )
        - rset.gbal.sum()
    )
    return R, gap


def pseudo_time_step(disc: Discretization, law: ConservationLaw, u: np.ndarray,
                     config: SolverConfig, bc,
                     mu: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """One forward-Euler pseudo-time step; returns the new state and norms."""
    mu = lumped_measures(disc) if mu is None else mu
    R, gap = residual_vector(disc, law, u, config, bc)
    coef = _dt_over_mu(disc, law, u, config, mu)
    u_new = u - coef[:, None] * R
    if not np.isfinite(u_new).all() or np.abs(u_new).max() > config.divergence_limit:
        raise SolverDiverged("pseudo-time iteration produced a non-finite state")
    norms = {
        "l2": float(np.sqrt((mu[:, None] * R * R).sum() / mu.sum())),
        "linf": float(np.abs(R).max()),
        "entropy_gap": gap,
    }
    return u_new, norms


def solve_steady(disc: Discretization, law: ConservationLaw,
                 config: SolverConfig, bc: BoundaryData,
                 initial: np.ndarray | None = None) -> tuple[np.ndarray, SolveTrace]:
    """March the accumulated residual to (relative) tolerance or give up.

    Convergence is relative to the first residual norm; an absolute floor
    catches exact initial data.  Stagnation (no relative progress over a
    trailing window) returns the best iterate with a flag.
    """
    t0 = time.perf_counter()
    u = disc.zero_states() if initial is None else np.array(initial, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    mu = lumped_measures(disc)
    if isinstance(bc, BoundaryData):
        bc = disc.boundary_values(bc)  # Dirichlet data is state-independent
    trace = SolveTrace()

    best_u, best_res = u, np.inf
    res0 = None
    for it in range(config.max_iters):
        R, gap = residual_vector(disc, law, u, config, bc)
        res = float(np.sqrt((mu[:, None] * R * R).sum() / mu.sum()))
        trace.res_l2.append(res)
        trace.res_linf.append(float(np.abs(R).max()))
        trace.entropy_balance.append(gap)
        if res < best_res:
            best_u, best_res = u.copy(), res
        if res0 is None:
            res0 = max(res, 1e-300)
            if res <= 1e-13 * max(1.0, float(np.abs(u).max())):
                trace.converged = True
                break
        if res / res0 <= config.residual_tol:
            trace.converged = True
            break
        w = config.stagnation_window
        if it >= w and trace.res_l2[-w] > 0:
            if abs(trace.res_l2[-w] - res) <= config.stagnation_eps * trace.res_l2[-w]:
                trace.stagnated = True
                break
        coef = _dt_over_mu(disc, law, u, config, mu)
        u = u - coef[:, None] * R
        if not np.isfinite(u).all() or np.abs(u).max() > config.divergence_limit:
            raise SolverDiverged(
                f"pseudo-time iteration diverged after {it + 1} steps"
            )
        trace.iterations = it + 1
    trace.wall_time = time.perf_counter() - t0
    return (best_u if trace.stagnated else u), trace


def manufactured_error(disc: Discretization, u: np.ndarray, exact,
                       order: int | None = None) -> tuple[float, float]:
    """L2 and max errors of a discrete state against an exact field,
    measured with volume quadrature of order 2k+2 by default."""
    from .approximation import volume_quadrature

    order = order if order is not None else 2 * disc.degree + 2
    padded = disc.padded_states(u)
    l2 = 0.0
    linf = 0.0
    for eid in range(disc.mesh.n_elements):
        g = disc.groups[disc.elem_group[eid]]
        space = g.spaces[disc.elem_local[eid]]
        rule = volume_quadrature(
            disc.mesh.element_coords(eid), order,
            kind=g.kind if g.kind != "polygon" else "polygon",
        )
        uh = space.eval(rule.points) @ padded[eid, : g.n_dof]
        ue = np.asarray(exact(rule.points), dtype=float)
        if ue.ndim == 1:
            ue = ue[:, None]
        diff = uh - ue
        l2 += float(np.einsum("q,qp->", rule.weights, diff * diff))
        linf = max(linf, float(np.abs(diff).max()))
    return float(np.sqrt(l2)), linf
