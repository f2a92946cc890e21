"""Correction fields for flux reconstruction.

The reconstructed flux on an element is the nodal flux interpolant plus a
scaled correction field grad_psi.  Admissibility asks for two things:

* the normal trace of the field matches the interface flux mismatch
  ``alpha = f_hat - f^h . n`` at every edge quadrature point, and
* the induced redistribution vectors ``r_sigma = -oint grad(phi_sigma) .
  grad_psi dx`` sum to zero over the element,

which together keep the distributed residuals conservative.  Two backends
construct such fields:

``rt``
    Cardinal Raviart-Thomas bases on triangles.  Each member is the unique
    RT field of the requested order with unit normal trace at one edge flux
    point, zero at the others, and vanishing interior moments.  Flux points
    coincide with the Gauss points of the edge quadrature, so the trace
    condition holds exactly at the quadrature points.

``neumann``
    On arbitrary polygons the field is sought in a vector polynomial space:
    normal-trace values are imposed as equality constraints, prescribed
    interior moments ``oint grad(phi_sigma) . grad_psi dx = target_r`` enter
    as least-squares rows, and the minimum-norm solution is returned.  Note
    the sign relation: the induced ``r_sigma`` equals ``-target_r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approximation import (
    ElementSpace,
    QuadratureRule,
    gauss_legendre_01,
    volume_quadrature,
)
from .mesh import polygon_centroid, shoelace_area


class CorrectionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Raviart-Thomas cardinal bases on triangles
# ---------------------------------------------------------------------------

def _monomial_exponents(degree: int) -> list[tuple[int, int]]:
    return [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]


def _lagrange_matrix(nodes: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Cardinal Lagrange evaluation matrix: (len(targets), len(nodes))."""
    out = np.ones((len(targets), len(nodes)))
    for i in range(len(nodes)):
        for j in range(len(nodes)):
            if j != i:
                out[:, i] *= (targets - nodes[j]) / (nodes[i] - nodes[j])
    return out


class RTBasis:
    """Cardinal Raviart-Thomas basis of order ``p`` on a physical triangle.

    Members are indexed by (edge, flux point); there are 3*(p+1) of them.
    The space is [P_p]^2 + x * homogeneous(P_p); on straight edges the
    normal trace of any member is a polynomial of degree <= p, and its
    divergence lies in P_p.

    The trace conditions leave p*(p+1) interior degrees of freedom per
    member.  ``interior="min-norm"`` (default) closes them by picking the
    L2-smallest field, which carries nonzero gradient moments and hence a
    genuine redistribution; ``interior="zero-moment"`` zeroes the moments
    against [P_{p-1}]^2, which annihilates every gradient moment and makes
    the corrected scheme coincide with its interpolated-flux reference.
    """

    def __init__(self, p: int, vertices, flux_points: list[np.ndarray] | None = None,
                 interior: str = "min-norm"):
        if not 1 <= p <= 3:
            raise CorrectionError(f"Raviart-Thomas order {p} not supported")
        self.degree = p
        self.vertices = np.asarray(vertices, dtype=float)
        if len(self.vertices) != 3:
            raise CorrectionError("Raviart-Thomas correction bases need a triangle")
        self._center = polygon_centroid(self.vertices)
        self._scale = math.sqrt(abs(shoelace_area(self.vertices)))
        self._poly_exp = _monomial_exponents(p)
        self._hom_exp = [(a, p - a) for a in range(p, -1, -1)]
        self.n_members = 3 * (p + 1)

        self.edge_normals = []
        self.edge_lengths = []
        self.flux_points = []
        t, _ = gauss_legendre_01(p + 1)
        for e in range(3):
            v0, v1 = self.vertices[e], self.vertices[(e + 1) % 3]
            tang = v1 - v0
            length = float(np.hypot(*tang))
            self.edge_normals.append(np.array([tang[1], -tang[0]]) / length)
            self.edge_lengths.append(length)
            if flux_points is None:
                self.flux_points.append(v0[None, :] + t[:, None] * tang[None, :])
            else:
                self.flux_points.append(np.asarray(flux_points[e], dtype=float))

        n_dim = (p + 1) * (p + 3)
        trace_rows = []
        # edge functionals: normal component at the flux points
        for e in range(3):
            vals = self._raw_eval(self.flux_points[e])  # (npts, n_dim, 2)
            trace_rows.append(vals @ self.edge_normals[e])
        tmat = np.vstack(trace_rows)  # (n_members, n_dim)
        rule = volume_quadrature(self.vertices, 2 * p + 2, kind="triangle")
        raw = self._raw_eval(rule.points)

        if interior == "zero-moment":
            rows = [tmat]
            for a, b in _monomial_exponents(p - 1):
                mono = self._local_mono(rule.points, a, b)
                for comp in range(2):
                    rows.append(((rule.weights * mono) @ raw[:, :, comp])[None, :])
            mat = np.vstack(rows)
            if mat.shape != (n_dim, n_dim):
                raise CorrectionError("Raviart-Thomas functional count mismatch")
            cond = np.linalg.cond(mat)
            if not np.isfinite(cond) or cond > 1e12:
                raise CorrectionError(
                    f"singular dual-functional matrix (cond {cond:.2e}); "
                    "choose different flux points"
                )
            rhs = np.zeros((n_dim, self.n_members))
            rhs[: self.n_members] = np.eye(self.n_members)
            self._coeffs = np.linalg.solve(mat, rhs)
        elif interior == "min-norm":
            gram = np.einsum("q,qix,qjx->ij", rule.weights, raw, raw)
            gram_t = np.linalg.solve(gram, tmat.T)  # (n_dim, n_members)
            tgt = tmat @ gram_t
            cond = np.linalg.cond(tgt)
            if not np.isfinite(cond) or cond > 1e12:
                raise CorrectionError(
                    f"singular dual-functional matrix (cond {cond:.2e}); "
                    "choose different flux points"
                )
            self._coeffs = gram_t @ np.linalg.solve(tgt, np.eye(self.n_members))
        else:
            raise CorrectionError(f"unknown interior completion {interior!r}")
        self.interior = interior

    # raw (non-cardinal) span evaluation -----------------------------------
    def _local(self, points):
        return (np.atleast_2d(points) - self._center) / self._scale

    def _local_mono(self, points, a, b):
        u = self._local(points)
        return u[:, 0] ** a * u[:, 1] ** b

    def _raw_eval(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        u = self._local(pts)
        cols = []
        for a, b in self._poly_exp:
            mono = u[:, 0] ** a * u[:, 1] ** b
            cols.append(np.stack([mono, np.zeros_like(mono)], axis=1))
            cols.append(np.stack([np.zeros_like(mono), mono], axis=1))
        for a, b in self._hom_exp:
            mono = u[:, 0] ** a * u[:, 1] ** b
            cols.append(u * mono[:, None])
        return np.stack(cols, axis=1)  # (npts, n_dim, 2)

    def _raw_div(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        u = self._local(pts)
        cols = []
        for a, b in self._poly_exp:
            dx = a * u[:, 0] ** max(a - 1, 0) * u[:, 1] ** b if a else np.zeros(len(u))
            dy = b * u[:, 0] ** a * u[:, 1] ** max(b - 1, 0) if b else np.zeros(len(u))
            cols.append(dx)
            cols.append(dy)
        p = self.degree
        for a, b in self._hom_exp:
            # div(x * x^a y^b) = (2 + a + b) x^a y^b  with a + b = p
            cols.append((2 + p) * u[:, 0] ** a * u[:, 1] ** b)
        return np.stack(cols, axis=1) / self._scale

    # public member evaluation ----------------------------------------------
    def eval(self, points) -> np.ndarray:
        """Member values, shape (npts, n_members, 2)."""
        raw = self._raw_eval(points)  # (npts, n_dim, 2)
        return np.tensordot(raw, self._coeffs, axes=([1], [0])).transpose(0, 2, 1)

    def div(self, points) -> np.ndarray:
        """Member divergences, shape (npts, n_members)."""
        return self._raw_div(points) @ self._coeffs

    def normal_trace(self, edge: int, points) -> np.ndarray:
        """Member normal components on one edge, shape (npts, n_members)."""
        return self.eval(points) @ self.edge_normals[edge]


def build_rt_triangle_basis(p: int, vertices=None, interior: str = "min-norm") -> RTBasis:
    """Cardinal RT basis on a triangle with Gauss flux points (p+1 per edge)."""
    if vertices is None:
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return RTBasis(p, vertices, interior=interior)


# ---------------------------------------------------------------------------
# correction fields
# ---------------------------------------------------------------------------

@dataclass
class CorrectionField:
    """A constructed scaled correction field, tabulated for one element.

    ``traces[e]`` holds the field's normal component at the edge quadrature
    points of local edge ``e`` and ``alpha[e]`` the interface mismatch it was
    built to match; ``r_sigma`` are the induced redistribution vectors and
    ``div_moments[s] = oint phi_s div(grad_psi) dx`` feeds the divergence
    form of the residual.
    """

    traces: list[np.ndarray]  # per local edge, (nq_e, p)
    alpha: list[np.ndarray]  # per local edge, (nq_e, p)
    r_sigma: np.ndarray  # (n_dof, p)
    div_moments: np.ndarray  # (n_dof, p)
    volume_integral: np.ndarray  # (p, 2)
    solve_residual: float = 0.0

    def trace_defect(self) -> float:
        worst = 0.0
        for got, want in zip(self.traces, self.alpha):
            worst = max(worst, float(np.abs(got - want).max(initial=0.0)))
        return worst

    def r_sum(self) -> float:
        return float(np.abs(self.r_sigma.sum(axis=0)).max(initial=0.0))

    def scale(self) -> float:
        mags = [np.abs(a).max(initial=0.0) for a in self.alpha]
        return max(1.0, float(max(mags, default=0.0)), float(np.abs(self.r_sigma).max(initial=0.0)))


@dataclass
class AdmissibilityReport:
    trace_defect: float
    r_sum_defect: float
    scale: float
    trace_tol: float
    r_tol: float

    @property
    def passed(self) -> bool:
        return (
            self.trace_defect <= self.trace_tol * self.scale
            and self.r_sum_defect <= self.r_tol * self.scale
        )


def check_admissibility(field: CorrectionField, trace_tol: float = 1e-11,
                        r_tol: float = 1e-11) -> AdmissibilityReport:
    """Measure the two admissibility defects of a correction field."""
    return AdmissibilityReport(
        trace_defect=field.trace_defect(),
        r_sum_defect=field.r_sum(),
        scale=field.scale(),
        trace_tol=trace_tol,
        r_tol=r_tol,
    )


class RTCorrectionBackend:
    """Per-element tables turning interface mismatches into RT correction
    fields.  Requires the edge quadrature points to coincide with the RT
    flux points (the default Gauss choice)."""

    def __init__(self, basis: RTBasis, space: ElementSpace,
                 vol_rule: QuadratureRule, edge_rules: list[QuadratureRule]):
        self.basis = basis
        self.space = space
        self.n_alpha = basis.n_members
        grad = space.grad(vol_rule.points)  # (nq, nd, 2)
        phi = space.eval(vol_rule.points)
        hval = basis.eval(vol_rule.points)  # (nq, m, 2)
        hdiv = basis.div(vol_rule.points)  # (nq, m)
        w = vol_rule.weights
        self.r_table = -np.einsum("q,qdx,qmx->dm", w, grad, hval)
        self.div_table = np.einsum("q,qd,qm->dm", w, phi, hdiv)
        self.vol_table = np.einsum("q,qmx->mx", w, hval)  # (m, 2)
        self.trace_tables = []
        for e, rule in enumerate(edge_rules):
            if len(rule.points) != basis.degree + 1 or not np.allclose(
                rule.points, basis.flux_points[e], atol=1e-12
            ):
                raise CorrectionError(
                    "edge quadrature points must coincide with the RT flux points"
                )
            self.trace_tables.append(basis.normal_trace(e, rule.points))

    def field(self, alpha: list[np.ndarray]) -> CorrectionField:
        """Correction field for mismatch values ``alpha[e]`` of shape
        (n_flux_points, p) per local edge."""
        coeff = np.vstack(alpha)  # (m, p)
        traces = [tab @ coeff for tab in self.trace_tables]
        return CorrectionField(
            traces=traces,
            alpha=[np.asarray(a, dtype=float) for a in alpha],
            r_sigma=self.r_table @ coeff,
            div_moments=self.div_table @ coeff,
            volume_integral=coeff.T @ self.vol_table,
        )


class NeumannCorrectionBackend:
    """Constrained least-squares construction of correction fields on
    arbitrary (convex) elements.

    The field lives in a vector polynomial space of adaptive degree: the
    smallest degree >= k+1 whose constrained solve reproduces interpolant
    traces and zero-sum interior moments to near machine precision (checked
    with a deterministic probe at build time).  The normal trace per edge is
    pinned, at degree+1 points, to the low-degree interpolant of the
    mismatch data, which keeps edge integrals against the solution basis
    exact.  The solve is linear in the data, so the two solution operators
    are precomputed.
    """

    def __init__(self, space: ElementSpace, vol_rule: QuadratureRule,
                 edge_rules: list[QuadratureRule], edge_normals: list[np.ndarray],
                 max_degree_boost: int = 6):
        self.space = space
        self.edge_rules = edge_rules
        self.n_dof = space.n_dof
        self._center = space.dof_coords.mean(axis=0)
        self._scale = math.sqrt(abs(shoelace_area(space.vertices)))
        self._vol_rule = vol_rule
        self._edge_normals = [np.asarray(n, dtype=float) for n in edge_normals]
        self._grad_tab = space.grad(vol_rule.points)

        chosen = None
        for degree in range(space.degree + 1, space.degree + 1 + max_degree_boost + 1):
            ops = self._build_operators(degree)
            if self._probe_feasible(ops):
                chosen = ops
                break
        if chosen is None:
            raise CorrectionError(
                "no admissible polynomial degree for the correction field "
                f"on a {len(space.vertices)}-gon"
            )
        (self.field_degree, self._exps, self._ncoef, self._basis_at,
         self._a_tr, self._a_mom, self._interp_ops,
         self._s_tr, self._s_mom, self._p_tr) = chosen

        # moment/divergence tables against the field basis
        phi = space.eval(vol_rule.points)
        w = vol_rule.weights
        self._r_table = -self._a_mom  # r_sigma = -oint grad(phi) . field
        db = self._basis_div(vol_rule.points)
        self._div_table = np.einsum("q,qd,qm->dm", w, phi, db)
        self._vol_table = np.einsum("q,qmx->mx", w, self._basis_at(vol_rule.points))
        self._edge_trace = [
            self._basis_at(rule.points) @ nrm
            for rule, nrm in zip(edge_rules, self._edge_normals)
        ]

    def _build_operators(self, degree: int):
        exps = _monomial_exponents(degree)
        ncoef = 2 * len(exps)
        center, scale = self._center, self._scale

        def basis_at(pts, exps=exps, ncoef=ncoef):
            u = (np.atleast_2d(pts) - center) / scale
            mono = np.stack([u[:, 0] ** a * u[:, 1] ** b for a, b in exps], axis=1)
            out = np.zeros((len(u), ncoef, 2))
            out[:, 0::2, 0] = mono
            out[:, 1::2, 1] = mono
            return out

        # trace rows: pin the degree-d normal trace at d+1 points per edge to
        # the interpolant through the edge-rule values of the mismatch data
        t_ext, _ = gauss_legendre_01(degree + 1)
        rows, interp_ops = [], []
        for rule, nrm in zip(self.edge_rules, self._edge_normals):
            npts = len(rule.points)
            if npts == 1:
                raise CorrectionError(
                    "constrained correction needs at least 2 edge points"
                )
            tq, _ = gauss_legendre_01(npts)
            span = rule.points[-1] - rule.points[0]
            p0 = rule.points[0] - tq[0] * span / (tq[-1] - tq[0])
            p1 = p0 + span / (tq[-1] - tq[0])
            pts_ext = p0[None, :] + t_ext[:, None] * (p1 - p0)[None, :]
            rows.append(basis_at(pts_ext) @ nrm)
            interp_ops.append(_lagrange_matrix(tq, t_ext))
        a_tr = np.vstack(rows)
        a_mom = np.einsum(
            "q,qdx,qmx->dm", self._vol_rule.weights, self._grad_tab,
            basis_at(self._vol_rule.points),
        )

        # minimum-norm solve operators: traces as hard constraints, moments
        # least-squares rows restricted to the trace null space
        u_, s_, vt_ = np.linalg.svd(a_tr, full_matrices=True)
        rank = int((s_ > s_[0] * 1e-12).sum())
        p_tr = (vt_[:rank].T / s_[:rank]) @ u_[:, :rank].T
        nullspace = vt_[rank:].T  # (ncoef, nnull)
        q_ = np.linalg.pinv(a_mom @ nullspace, rcond=1e-12)
        s_mom = nullspace @ q_
        s_tr = p_tr - nullspace @ q_ @ (a_mom @ p_tr)
        return (degree, exps, ncoef, basis_at, a_tr, a_mom, interp_ops,
                s_tr, s_mom, p_tr)

    def _probe_feasible(self, ops, tol: float = 1e-9) -> bool:
        """Check that interpolant traces plus zero-sum moments are exactly
        reachable, with a deterministic random probe."""
        _, _, _, _, a_tr, a_mom, interp_ops, s_tr, s_mom, _ = ops
        rng = np.random.default_rng(20240917)
        for _ in range(3):
            alpha = [rng.standard_normal((len(r.points), 1)) for r in self.edge_rules]
            target = rng.standard_normal((self.n_dof, 1))
            target -= target.mean(axis=0, keepdims=True)
            b_tr = np.vstack([op @ a for op, a in zip(interp_ops, alpha)])
            coeffs = s_tr @ b_tr + s_mom @ target
            if np.abs(a_tr @ coeffs - b_tr).max() > tol:
                return False
            if np.abs(a_mom @ coeffs - target).max() > tol:
                return False
        return True

    def _basis_div(self, pts):
        u = (np.atleast_2d(pts) - self._center) / self._scale
        cols = np.zeros((len(u), self._ncoef))
        for m, (a, b) in enumerate(self._exps):
            dx = a * u[:, 0] ** max(a - 1, 0) * u[:, 1] ** b if a else 0.0
            dy = b * u[:, 0] ** a * u[:, 1] ** max(b - 1, 0) if b else 0.0
            cols[:, 2 * m] = dx / self._scale
            cols[:, 2 * m + 1] = dy / self._scale
        return cols

    def solve(self, alpha: list[np.ndarray], target_r: np.ndarray,
              compat_tol: float = 1e-10) -> CorrectionField:
        """Field matching boundary traces ``alpha`` and interior moments
        ``oint grad(phi_s) . grad_psi dx = target_r[s]``.

        ``target_r`` must sum to zero over the element (within ``compat_tol``
        relative); the induced redistribution vectors are ``-target_r``.
        """
        target_r = np.asarray(target_r, dtype=float)
        if target_r.ndim == 1:
            target_r = target_r[:, None]
        scale = max(1.0, float(np.abs(target_r).max()))
        if np.abs(target_r.sum(axis=0)).max() > compat_tol * scale:
            raise CorrectionError(
                "incompatible interior moments: they must sum to zero "
                f"(got {np.abs(target_r.sum(axis=0)).max():.3e})"
            )
        b_tr = np.vstack([
            op @ np.asarray(a, dtype=float)
            for op, a in zip(self._interp_ops, alpha)
        ])  # (n_tr, p)
        coeffs = self._s_tr @ b_tr + self._s_mom @ target_r  # (ncoef, p)
        res_tr = np.abs(self._a_tr @ coeffs - b_tr).max(initial=0.0)
        res_mom = np.abs(self._a_mom @ coeffs - target_r).max(initial=0.0)
        traces = [tab @ coeffs for tab in self._edge_trace]
        return CorrectionField(
            traces=traces,
            alpha=[np.asarray(a, dtype=float) for a in alpha],
            r_sigma=self._r_table @ coeffs,
            div_moments=self._div_table @ coeffs,
            volume_integral=coeffs.T @ self._vol_table,
            solve_residual=float(max(res_tr, res_mom)),
        )

    def zero_moment_field(self, alpha: list[np.ndarray]) -> CorrectionField:
        """Field with all prescribed moments zero: the corrected residuals
        coincide with their interpolated-flux reference."""
        p = np.asarray(alpha[0]).shape[-1]
        return self.solve(alpha, np.zeros((self.n_dof, p)))

    def free_field(self, alpha: list[np.ndarray]) -> CorrectionField:
        """Minimum-norm field matching the boundary traces only; its
        redistribution vectors fall out of the solve (generically nonzero),
        the counterpart of the min-norm cardinal members on triangles."""
        b_tr = np.vstack([
            op @ np.asarray(a, dtype=float)
            for op, a in zip(self._interp_ops, alpha)
        ])
        coeffs = self._p_tr @ b_tr
        res_tr = np.abs(self._a_tr @ coeffs - b_tr).max(initial=0.0)
        traces = [tab @ coeffs for tab in self._edge_trace]
        return CorrectionField(
            traces=traces,
            alpha=[np.asarray(a, dtype=float) for a in alpha],
            r_sigma=self._r_table @ coeffs,
            div_moments=self._div_table @ coeffs,
            volume_integral=coeffs.T @ self._vol_table,
            solve_residual=float(res_tr),
        )
