"""Conservation-law definitions and numerical interface fluxes.

A law packages the physical flux together with its entropy machinery: convex
entropy U, entropy variables v = dU/du, entropy flux g, and the potential
theta(v) satisfying d(theta)/dv = f and g = <v, f> - theta.  States carry a
trailing component axis of size ``p``; the shipped laws are scalar (p = 1)
but every evaluator keeps the component axis so systems slot in unchanged.

Interface fluxes follow the usual contract: consistency f_hat(u, u, n) =
f(u).n and conservation f_hat(a, b, n) = -f_hat(b, a, -n).  The dissipation
sign of a flux is measured by the edge functional

    <v_R - v_L, f_hat> - (theta_R - theta_L).n

which vanishes for the entropy-conservative flux and is nonpositive for
dissipative fluxes such as Rusanov.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class UnsupportedLaw(ValueError):
    pass


@dataclass(frozen=True)
class ConservationLaw:
    name: str
    p: int
    flux: Callable  # u (..., p) -> (..., p, 2)
    entropy: Callable  # u -> (...)
    entropy_vars: Callable  # u -> (..., p)
    entropy_flux: Callable  # u -> (..., 2)
    potential: Callable  # v (..., p) -> (..., 2)
    u_from_entropy_vars: Callable  # v -> u
    wave_speed: Callable  # (u, n) -> (...), spectral radius of d(f.n)/du
    max_wave_speed: Callable  # u -> (...), bound over all unit directions
    flux_jac: Callable = None  # u (..., p) -> (..., p, p, 2)
    admissible_box: tuple[float, float] = (-5.0, 5.0)
    ec_flux: Callable | None = None  # optional closed-form EC flux
    convex_entropy: bool = True

    def random_states(self, rng: np.random.Generator, shape) -> np.ndarray:
        lo, hi = self.admissible_box
        if np.isscalar(shape):
            shape = (shape,)
        return rng.uniform(lo, hi, size=tuple(shape) + (self.p,))


def linear_advection(a) -> ConservationLaw:
    """Scalar transport with constant velocity ``a``: flux a*u, entropy u^2/2."""
    a = np.asarray(a, dtype=float)
    if np.hypot(*a) == 0.0:
        raise UnsupportedLaw("advection velocity must be nonzero")

    def flux(u):
        u = np.asarray(u, dtype=float)
        return u[..., :, None] * a

    def entropy(u):
        return 0.5 * np.asarray(u)[..., 0] ** 2

    def entropy_vars(u):
        return np.asarray(u, dtype=float).copy()

    def entropy_flux(u):
        return 0.5 * np.asarray(u)[..., 0, None] ** 2 * a

    def potential(v):
        return 0.5 * np.asarray(v)[..., 0, None] ** 2 * a

    def u_from_v(v):
        return np.asarray(v, dtype=float).copy()

    def wave_speed(u, n):
        n = np.asarray(n, dtype=float)
        return np.broadcast_to(np.abs(n @ a), np.asarray(u).shape[:-1]).copy()

    def max_speed(u):
        return np.full(np.asarray(u).shape[:-1], float(np.hypot(*a)))

    def ec(uL, uR, n):
        an = np.asarray(n, dtype=float) @ a
        return 0.5 * (np.asarray(uL) + np.asarray(uR)) * np.asarray(an)[..., None]


    def flux_jac(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (1, 1, 2))
        out[..., 0, 0, :] = a
        return out

    return ConservationLaw(
        name="advection", p=1, flux=flux, entropy=entropy, entropy_vars=entropy_vars,
        entropy_flux=entropy_flux, potential=potential, u_from_entropy_vars=u_from_v,
        wave_speed=wave_speed, max_wave_speed=max_speed, ec_flux=ec,
        flux_jac=flux_jac,
    )


def burgers_2d() -> ConservationLaw:
    """2D Burgers with identical quadratic flux in both directions."""

    def flux(u):
        u = np.asarray(u, dtype=float)
        f = 0.5 * u[..., 0] ** 2
        return np.stack([f, f], axis=-1)[..., None, :]

    def entropy(u):
        return 0.5 * np.asarray(u)[..., 0] ** 2

    def entropy_vars(u):
        return np.asarray(u, dtype=float).copy()

    def entropy_flux(u):
        g = np.asarray(u)[..., 0] ** 3 / 3.0
        return np.stack([g, g], axis=-1)

    def potential(v):
        th = np.asarray(v)[..., 0] ** 3 / 6.0
        return np.stack([th, th], axis=-1)

    def u_from_v(v):
        return np.asarray(v, dtype=float).copy()

    def wave_speed(u, n):
        n = np.asarray(n, dtype=float)
        return np.abs(np.asarray(u)[..., 0] * (n[..., 0] + n[..., 1]))

    def max_speed(u):
        return np.abs(np.asarray(u)[..., 0]) * np.sqrt(2.0)

    def ec(uL, uR, n):
        uL = np.asarray(uL)[..., 0]
        uR = np.asarray(uR)[..., 0]
        n = np.asarray(n, dtype=float)
        val = (uL * uL + uL * uR + uR * uR) / 6.0 * (n[..., 0] + n[..., 1])
        return val[..., None]


    def flux_jac(u):
        u0 = np.asarray(u, dtype=float)[..., 0]
        out = np.zeros(u0.shape + (1, 1, 2))
        out[..., 0, 0, 0] = u0
        out[..., 0, 0, 1] = u0
        return out

    return ConservationLaw(
        name="burgers", p=1, flux=flux, entropy=entropy, entropy_vars=entropy_vars,
        entropy_flux=entropy_flux, potential=potential, u_from_entropy_vars=u_from_v,
        wave_speed=wave_speed, max_wave_speed=max_speed, ec_flux=ec,
        flux_jac=flux_jac,
    )


def exp_advection(a) -> ConservationLaw:
    """Linear transport equipped with the exponential entropy U = exp(u).

    Useful for exercising the diagnostics on a law whose entropy variables
    differ from the state: v = exp(u), g = a exp(u), theta(v) = a v (ln v - 1).
    """
    a = np.asarray(a, dtype=float)
    if np.hypot(*a) == 0.0:
        raise UnsupportedLaw("advection velocity must be nonzero")

    def flux(u):
        u = np.asarray(u, dtype=float)
        return u[..., :, None] * a

    def entropy(u):
        return np.exp(np.asarray(u)[..., 0])

    def entropy_vars(u):
        return np.exp(np.asarray(u, dtype=float))

    def entropy_flux(u):
        return np.exp(np.asarray(u)[..., 0, None]) * a

    def potential(v):
        v0 = np.asarray(v)[..., 0, None]
        return v0 * (np.log(v0) - 1.0) * a

    def u_from_v(v):
        return np.log(np.asarray(v, dtype=float))

    def wave_speed(u, n):
        n = np.asarray(n, dtype=float)
        return np.broadcast_to(np.abs(n @ a), np.asarray(u).shape[:-1]).copy()

    def max_speed(u):
        return np.full(np.asarray(u).shape[:-1], float(np.hypot(*a)))

    def ec(uL, uR, n):
        vL = np.exp(np.asarray(uL)[..., 0])
        vR = np.exp(np.asarray(uR)[..., 0])
        an = np.asarray(np.asarray(n, dtype=float) @ a)
        dv = vR - vL
        tiny = np.abs(dv) < 1e-12 * np.maximum(vL, vR)
        num = vR * (np.log(vR) - 1.0) - vL * (np.log(vL) - 1.0)
        avg_u = 0.5 * (np.asarray(uL)[..., 0] + np.asarray(uR)[..., 0])
        val = np.where(tiny, avg_u, num / np.where(tiny, 1.0, dv))
        return (val * an)[..., None]


    def flux_jac(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (1, 1, 2))
        out[..., 0, 0, :] = a
        return out

    return ConservationLaw(
        name="exp-advection", p=1, flux=flux, entropy=entropy,
        entropy_vars=entropy_vars, entropy_flux=entropy_flux, potential=potential,
        u_from_entropy_vars=u_from_v, wave_speed=wave_speed, max_wave_speed=max_speed,
        admissible_box=(-2.0, 2.0), ec_flux=ec, flux_jac=flux_jac,
    )


_LAW_BUILDERS = {
    "advection": lambda params: linear_advection(params.get("velocity", [1.0, 0.0])),
    "burgers": lambda params: burgers_2d(),
    "exp-advection": lambda params: exp_advection(params.get("velocity", [1.0, 0.0])),
}


def law_by_name(name: str, params: dict | None = None) -> ConservationLaw:
    if name not in _LAW_BUILDERS:
        raise UnsupportedLaw(f"unknown law {name!r}")
    return _LAW_BUILDERS[name](params or {})


# ---------------------------------------------------------------------------
# numerical fluxes
# ---------------------------------------------------------------------------

def normal_flux(law: ConservationLaw, u, n) -> np.ndarray:
    """Physical flux contracted with a normal: f(u).n, shape (..., p)."""
    f = law.flux(u)
    n = np.asarray(n, dtype=float)
    return (f * n[..., None, :]).sum(-1)


def central_flux(law: ConservationLaw, uL, uR, n) -> np.ndarray:
    return 0.5 * (normal_flux(law, uL, n) + normal_flux(law, uR, n))


def rusanov_flux(law: ConservationLaw, uL, uR, n) -> np.ndarray:
    """Central flux plus spectral-radius dissipation (local Lax-Friedrichs)."""
    lam = np.maximum(law.wave_speed(uL, n), law.wave_speed(uR, n))
    return central_flux(law, uL, uR, n) - 0.5 * lam[..., None] * (
        np.asarray(uR) - np.asarray(uL)
    )


def tadmor_ec_flux(law: ConservationLaw, uL, uR, n) -> np.ndarray:
    """Entropy-conservative flux: <v_R - v_L, f_hat> = (theta_R - theta_L).n.

    Uses the law's closed form when available, otherwise the divided
    difference of the potential along the entropy variable (scalar laws
    only), with a series guard at coincident states.
    """
    if law.ec_flux is not None:
        return law.ec_flux(uL, uR, n)
    if law.p != 1:
        raise UnsupportedLaw("generic entropy-conservative flux needs a scalar law")
    vL = law.entropy_vars(uL)[..., 0]
    vR = law.entropy_vars(uR)[..., 0]
    n = np.asarray(n, dtype=float)
    thL = (law.potential(vL[..., None]) * n[..., :]).sum(-1)
    thR = (law.potential(vR[..., None]) * n[..., :]).sum(-1)
    dv = vR - vL
    tiny = np.abs(dv) < 1e-12 * np.maximum(1.0, np.abs(vL) + np.abs(vR))
    cons = normal_flux(law, 0.5 * (np.asarray(uL) + np.asarray(uR)), n)[..., 0]
    val = np.where(tiny, cons, (thR - thL) / np.where(tiny, 1.0, dv))
    return val[..., None]


FLUX_KINDS: dict[str, Callable] = {
    "central": central_flux,
    "rusanov": rusanov_flux,
    "tadmor_ec": tadmor_ec_flux,
}


def numerical_flux(kind: str) -> Callable:
    if kind not in FLUX_KINDS:
        raise UnsupportedLaw(f"unknown numerical flux kind {kind!r}")
    return FLUX_KINDS[kind]


def entropy_numerical_flux(law: ConservationLaw, fhat, uL, uR, n) -> np.ndarray:
    """Numerical entropy flux paired with a numerical flux:

        g_hat = <{v}, f_hat(uL, uR, n)> - theta({v}).n

    where {v} is the arithmetic average of the two entropy-variable traces.
    ``fhat`` may be a flux callable or precomputed values of shape (..., p).
    """
    if callable(fhat):
        fhat = fhat(law, uL, uR, n)
    v_avg = 0.5 * (law.entropy_vars(uL) + law.entropy_vars(uR))
    n = np.asarray(n, dtype=float)
    th = (law.potential(v_avg) * n[..., :]).sum(-1)
    return (v_avg * np.asarray(fhat)).sum(-1) - th


def tadmor_edge_check(law: ConservationLaw, uL, uR, n, fhat) -> np.ndarray:
    """Edge dissipation functional <[v], f_hat> - [theta].n.

    The jump convention is (right minus left): zero marks an entropy-
    conservative flux, negative values an entropy-stable one.
    """
    if callable(fhat):
        fhat = fhat(law, uL, uR, n)
    dv = law.entropy_vars(uR) - law.entropy_vars(uL)
    n = np.asarray(n, dtype=float)
    dth = (
        (law.potential(law.entropy_vars(uR)) - law.potential(law.entropy_vars(uL)))
        * n[..., :]
    ).sum(-1)
    return (dv * np.asarray(fhat)).sum(-1) - dth


# ---------------------------------------------------------------------------
# validation batteries (finite-difference oracles)
# ---------------------------------------------------------------------------

def validate_law(law: ConservationLaw, rng: np.random.Generator, n_samples: int = 1000,
                 fd_step: float = 1e-6) -> dict[str, float]:
    """Check the defining identities of a law at random admissible states.

    Returns maximum defects of: the entropy-compatibility condition
    dU/du . d(f_j)/du = d(g_j)/du (finite differences), the potential
    identity g = <v, f> - theta(v), the gradient relation d(theta)/dv = f,
    and strict convexity of the entropy.
    """
    lo, hi = law.admissible_box
    margin = fd_step * max(1.0, abs(hi - lo))
    u = rng.uniform(lo + margin, hi - margin, size=(n_samples, law.p))

    def d_du(fn, u):
        out_p = np.asarray(fn(u + 0.0))
        grads = []
        for i in range(law.p):
            du = np.zeros_like(u)
            du[..., i] = fd_step
            grads.append((np.asarray(fn(u + du)) - np.asarray(fn(u - du))) / (2 * fd_step))
        return np.stack(grads, axis=-1), out_p

    report: dict[str, float] = {}

    dU, _ = d_du(law.entropy, u)  # (n, p)
    compat = 0.0
    for j in range(2):
        df, _ = d_du(lambda w, j=j: law.flux(w)[..., :, j], u)  # (n, p, p)
        dg, _ = d_du(lambda w, j=j: law.entropy_flux(w)[..., j], u)  # (n, p)
        lhs = (dU[..., None] * df).sum(-2)
        compat = max(compat, float(np.abs(lhs - dg).max()))
    report["compatibility"] = compat

    v = law.entropy_vars(u)
    g = law.entropy_flux(u)
    vf = (v[..., :, None] * law.flux(u)).sum(-2)
    report["potential_identity"] = float(np.abs(g - (vf - law.potential(v))).max())

    dth = np.stack(
        [
            (np.asarray(law.potential(v + dv)) - np.asarray(law.potential(v - dv)))
            / (2 * fd_step)
            for dv in [np.full_like(v, 0.0) + fd_step * np.eye(law.p)[i] for i in range(law.p)]
        ],
        axis=-2,
    )
    report["potential_gradient"] = float(np.abs(dth - law.flux(u)).max())

    upp = (
        np.asarray(law.entropy(u + fd_step * np.ones(law.p)))
        - 2 * np.asarray(law.entropy(u))
        + np.asarray(law.entropy(u - fd_step * np.ones(law.p)))
    ) / fd_step**2
    report["min_entropy_curvature"] = float(upp.min())
    return report


def validate_flux(law: ConservationLaw, flux: Callable, rng: np.random.Generator,
                  n_samples: int = 1000) -> dict[str, float]:
    """Consistency and conservation defects of a numerical flux at random
    states and unit normals."""
    u = law.random_states(rng, n_samples)
    w = law.random_states(rng, n_samples)
    ang = rng.uniform(0.0, 2.0 * np.pi, n_samples)
    n = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    consistency = float(np.abs(flux(law, u, u, n) - normal_flux(law, u, n)).max())
    conservation = float(np.abs(flux(law, u, w, n) + flux(law, w, u, -n)).max())
    return {"consistency": consistency, "conservation": conservation}
