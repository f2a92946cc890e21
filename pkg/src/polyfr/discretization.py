"""Mesh-level discretization state: batched basis/quadrature tables, the
global DOF layout, interface traces, and per-element correction backends.

Elements are grouped by family (kind, vertex count, dof count) so residual
evaluation reduces to a handful of einsums per group plus vectorized flux
calls over all mesh edges at once.  DOFs are element-local (broken space):
the global index of local DOF ``i`` of element ``e`` is ``offset[e] + i``.

Quadrature orders default to volume 2k and edge 2k+1, strictly above the
minimal orders the error analysis needs, so quadrature never masks scheme
defects; both are configurable down to the minimal regime.  Rational bases
(Wachspress polygons, skewed quads) get their volume order boosted at build
time until the discrete integration-by-parts defect of basis products drops
below 5e-13, which keeps divergence-form residuals conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import correction as corr
from .approximation import (
    ElementSpace,
    PolygonSpace,
    QuadSpace,
    TriangleSpace,
    UnsupportedSpace,
    edge_quadrature,
    volume_quadrature,
)
from .dofgraph import DofGraph, build_dof_graph
from .mesh import Mesh


class BoundaryDataError(KeyError):
    pass


class BoundaryData:
    """Dirichlet data per boundary tag: ``profiles[tag]`` maps an (m, 2)
    point array to (m, p) state values."""

    def __init__(self, profiles: dict[str, Callable], p: int = 1):
        self.profiles = dict(profiles)
        self.p = p

    @classmethod
    def from_function(cls, fn: Callable, tags=("boundary",), p: int = 1):
        return cls({tag: fn for tag in tags}, p=p)

    def evaluate(self, tag: str, points: np.ndarray) -> np.ndarray:
        if tag not in self.profiles:
            raise BoundaryDataError(f"no boundary data for tag {tag!r}")
        vals = np.asarray(self.profiles[tag](np.atleast_2d(points)), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return vals


@dataclass
class ElementGroup:
    kind: str
    n_dof: int
    elem_ids: np.ndarray  # (nE,) mesh element ids
    spaces: list[ElementSpace]
    areas: np.ndarray
    perimeters: np.ndarray
    diameters: np.ndarray
    vol_w: np.ndarray  # (nE, nq)
    vol_pts: np.ndarray  # (nE, nq, 2)
    vol_phi: np.ndarray  # (nE, nq, nd)
    vol_grad: np.ndarray  # (nE, nq, nd, 2)
    stiff: np.ndarray  # (nE, nd, nd, 2): oint grad(phi_s) phi_t dx
    dstrong: np.ndarray  # (nE, nd, nd, 2): oint phi_s grad(phi_t) dx
    mass_diag: np.ndarray  # (nE, nd) positive lumped measures, sum to |K|
    nsigma: np.ndarray  # (nE, nd, 2): -oint_{dK} phi_s n dgamma
    # edge incidence: one row per (element, local edge)
    inc_elem: np.ndarray  # index into this group's element axis
    inc_edge: np.ndarray  # mesh edge id
    inc_side: np.ndarray  # 0 if element is left of the edge, 1 if right
    n_local_edges: int
    dof_idx: np.ndarray | None = None  # (nE, nd) global DOF indices
    correction_kind: str = "rt"
    rt_r: np.ndarray | None = None  # (nE, nd, m)
    rt_div: np.ndarray | None = None
    rt_vol: np.ndarray | None = None  # (nE, m, 2)
    rt_backends: list[corr.RTCorrectionBackend] = field(default_factory=list)
    neumann: list[corr.NeumannCorrectionBackend] | None = None
    boost_order: int = 0

    @property
    def n_elements(self) -> int:
        return len(self.elem_ids)


class Discretization:
    """All state needed to evaluate residual variants on one mesh."""

    def __init__(
        self,
        mesh: Mesh,
        degree: int,
        vol_order: int | None = None,
        edge_order: int | None = None,
        correction: str = "auto",
        p: int = 1,
    ):
        self.mesh = mesh
        self.degree = int(degree)
        self.p = int(p)
        self.vol_order = vol_order if vol_order is not None else 2 * self.degree
        self.edge_order = edge_order if edge_order is not None else 2 * self.degree + 1
        self.correction = correction
        self.nq_edge = max(1, math.ceil((self.edge_order + 1) / 2))

        self._build_edges()
        self._build_groups()
        self._dof_graph: DofGraph | None = None

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    def _build_edges(self) -> None:
        mesh = self.mesh
        n_edges = len(mesh.edges)
        nq = self.nq_edge
        self.edge_pts = np.zeros((n_edges, nq, 2))
        self.edge_w = np.zeros((n_edges, nq))
        self.edge_normal = np.zeros((n_edges, 2))
        self.edge_left = np.full(n_edges, -1, dtype=int)
        self.edge_right = np.full(n_edges, -1, dtype=int)
        for e in mesh.edges:
            v0 = mesh.vertices[e.vertex_ids[0]]
            v1 = mesh.vertices[e.vertex_ids[1]]
            rule = edge_quadrature(v0, v1, self.edge_order)
            self.edge_pts[e.id] = rule.points
            self.edge_w[e.id] = rule.weights
            self.edge_normal[e.id] = e.normal
            self.edge_left[e.id] = e.left_element
            self.edge_right[e.id] = -1 if e.right_element is None else e.right_element
        self.boundary_edge_ids = np.array(
            [e.id for e in mesh.edges if e.is_boundary], dtype=int
        )
        self.interior_edge_ids = np.array(
            [e.id for e in mesh.edges if not e.is_boundary], dtype=int
        )

    def _space_for(self, coords: np.ndarray) -> ElementSpace:
        n = len(coords)
        if n == 3:
            return TriangleSpace(coords, self.degree)
        if n == 4:
            return QuadSpace(coords, self.degree)
        if self.degree != 1:
            raise UnsupportedSpace(
                f"{n}-gon elements support degree 1 only (got {self.degree})"
            )
        return PolygonSpace(coords, 1)

    def _boosted_order(self, coords, space, base_order, kind) -> int:
        # raise the quadrature order until basis-product integration by parts
        # is satisfied to near machine precision (rational integrands)
        n = len(coords)
        edge_tabs = []
        for i in range(n):
            rule = edge_quadrature(coords[i], coords[(i + 1) % n], 2 * self.degree + 3)
            t = coords[(i + 1) % n] - coords[i]
            nrm = np.array([t[1], -t[0]]) / np.hypot(*t)
            phi = space.eval(rule.points)
            edge_tabs.append(np.einsum("q,qs,qt,x->stx", rule.weights, phi, phi, nrm))
        bnd = np.sum(edge_tabs, axis=0)
        scale = max(1.0, float(np.abs(bnd).max()))
        order = max(base_order, 2 * self.degree)
        while order <= 40:
            rule = volume_quadrature(coords, order, kind=kind)
            g = space.grad(rule.points)
            v = space.eval(rule.points)
            lhs = np.einsum("q,qs,qtx->stx", rule.weights, v, g) + np.einsum(
                "q,qsx,qt->stx", rule.weights, g, v
            )
            if np.abs(lhs - bnd).max() <= 5e-13 * scale:
                return order
            order += 4
        return order

    @staticmethod
    def _is_parallelogram(coords: np.ndarray) -> bool:
        scale = float(np.ptp(coords, axis=0).max())
        return bool(
            np.abs(coords[0] + coords[2] - coords[1] - coords[3]).max() <= 1e-12 * scale
        )

    def _build_groups(self) -> None:
        mesh = self.mesh
        by_family: dict[tuple, list[int]] = {}
        for elem in mesh.elements:
            coords = mesh.element_coords(elem.id)
            key = ({3: "triangle", 4: "quad"}.get(len(coords), "polygon"), len(coords))
            by_family.setdefault(key, []).append(elem.id)

        self.groups: list[ElementGroup] = []
        self.elem_group = np.zeros(mesh.n_elements, dtype=int)
        self.elem_local = np.zeros(mesh.n_elements, dtype=int)
        for key in sorted(by_family):
            kind, n_vert = key
            ids = np.array(by_family[key], dtype=int)
            group = self._build_group(kind, n_vert, ids)
            for loc, eid in enumerate(ids):
                self.elem_group[eid] = len(self.groups)
                self.elem_local[eid] = loc
            self.groups.append(group)

        self.nd_max = max(g.n_dof for g in self.groups)
        self.n_dof_elem = np.zeros(mesh.n_elements, dtype=int)
        self.dof_offset = np.zeros(mesh.n_elements, dtype=int)
        off = 0
        for elem in mesh.elements:
            g = self.groups[self.elem_group[elem.id]]
            self.n_dof_elem[elem.id] = g.n_dof
            self.dof_offset[elem.id] = off
            off += g.n_dof
        self.n_dofs = off

        # gather/scatter index maps (hot path of the pseudo-time iteration)
        for g in self.groups:
            g.dof_idx = (
                self.dof_offset[g.elem_ids][:, None] + np.arange(g.n_dof)[None, :]
            )
        self._pad_idx = np.zeros((mesh.n_elements, self.nd_max), dtype=int)
        self._pad_mask = np.zeros((mesh.n_elements, self.nd_max, 1))
        for eid in range(mesh.n_elements):
            nd = self.n_dof_elem[eid]
            self._pad_idx[eid, :nd] = self.dof_offset[eid] + np.arange(nd)
            self._pad_mask[eid, :nd] = 1.0

        # basis traces on edges, padded to nd_max
        nq = self.nq_edge
        n_edges = len(mesh.edges)
        self.edge_phi_left = np.zeros((n_edges, nq, self.nd_max))
        self.edge_phi_right = np.zeros((n_edges, nq, self.nd_max))
        for gi, g in enumerate(self.groups):
            for loc, eid in enumerate(g.elem_ids):
                space = g.spaces[loc]
                for k in range(g.n_local_edges):
                    row = loc * g.n_local_edges + k
                    edge_id = g.inc_edge[row]
                    phi = space.eval(self.edge_pts[edge_id])
                    if g.inc_side[row] == 0:
                        self.edge_phi_left[edge_id, :, : g.n_dof] = phi
                    else:
                        self.edge_phi_right[edge_id, :, : g.n_dof] = phi

        self.boundary_tag = {
            int(eid): self.mesh.boundary_tags[int(eid)] for eid in self.boundary_edge_ids
        }

    def _build_group(self, kind: str, n_vert: int, ids: np.ndarray) -> ElementGroup:
        mesh = self.mesh
        spaces: list[ElementSpace] = []
        vol_rules = []
        boost = 0
        for eid in ids:
            coords = mesh.element_coords(eid)
            space = self._space_for(coords)
            spaces.append(space)
            order = self.vol_order
            if kind == "polygon":
                order = self._boosted_order(coords, space, order, kind)
                boost = max(boost, order)
            elif kind == "quad" and not self._is_parallelogram(coords):
                # mapped bases pull back polynomial under the bilinear map;
                # the extra tensor order covers products with the (higher
                # degree) correction field
                order = max(order, 2 * self.degree) + 10
                boost = max(boost, order)
            vol_rules.append(volume_quadrature(coords, order, kind=kind))

        nE = len(ids)
        nd = spaces[0].n_dof
        nq = max(len(r.points) for r in vol_rules)
        vol_w = np.zeros((nE, nq))
        vol_pts = np.zeros((nE, nq, 2))
        vol_phi = np.zeros((nE, nq, nd))
        vol_grad = np.zeros((nE, nq, nd, 2))
        areas = np.zeros(nE)
        perims = np.zeros(nE)
        diams = np.zeros(nE)
        for i, (eid, space, rule) in enumerate(zip(ids, spaces, vol_rules)):
            m = len(rule.points)
            vol_w[i, :m] = rule.weights
            vol_pts[i, :m] = rule.points
            # unused padded slots keep the first point so flux evaluation of
            # padded entries stays finite (weights are zero there)
            if m < nq:
                vol_pts[i, m:] = rule.points[0]
            vol_phi[i, :m] = space.eval(rule.points)
            vol_grad[i, :m] = space.grad(rule.points)
            elem = mesh.elements[eid]
            areas[i] = elem.area
            coords = mesh.element_coords(eid)
            d = coords[:, None, :] - coords[None, :, :]
            diams[i] = float(np.sqrt((d * d).sum(-1)).max())
            perims[i] = float(
                sum(mesh.edges[k].length for k in elem.edge_ids)
            )

        stiff = np.einsum("eq,eqdx,eqt->edtx", vol_w, vol_grad, vol_phi)
        dstrong = np.einsum("eq,eqd,eqtx->edtx", vol_w, vol_phi, vol_grad)
        mass = np.einsum("eq,eqd,eqd->ed", vol_w, vol_phi, vol_phi)
        mass_diag = areas[:, None] * mass / mass.sum(axis=1, keepdims=True)

        inc_elem, inc_edge, inc_side = [], [], []
        for i, eid in enumerate(ids):
            elem = mesh.elements[eid]
            for edge_id in elem.edge_ids:
                inc_elem.append(i)
                inc_edge.append(edge_id)
                inc_side.append(0 if mesh.edges[edge_id].left_element == eid else 1)
        group = ElementGroup(
            kind=kind,
            n_dof=nd,
            elem_ids=ids,
            spaces=spaces,
            areas=areas,
            perimeters=perims,
            diameters=diams,
            vol_w=vol_w,
            vol_pts=vol_pts,
            vol_phi=vol_phi,
            vol_grad=vol_grad,
            stiff=stiff,
            dstrong=dstrong,
            mass_diag=mass_diag,
            nsigma=np.zeros((nE, nd, 2)),
            inc_elem=np.array(inc_elem, dtype=int),
            inc_edge=np.array(inc_edge, dtype=int),
            inc_side=np.array(inc_side, dtype=int),
            n_local_edges=n_vert,
            boost_order=boost,
        )
        self._attach_edge_geometry(group)
        self._attach_correction(group, vol_rules)
        return group

    def _attach_edge_geometry(self, group: ElementGroup) -> None:
        mesh = self.mesh
        for i, eid in enumerate(group.elem_ids):
            space = group.spaces[i]
            elem = mesh.elements[eid]
            for edge_id in elem.edge_ids:
                edge = mesh.edges[edge_id]
                v0 = mesh.vertices[edge.vertex_ids[0]]
                v1 = mesh.vertices[edge.vertex_ids[1]]
                rule = edge_quadrature(v0, v1, self.edge_order)
                sign = 1.0 if edge.left_element == eid else -1.0
                phi = space.eval(rule.points)
                group.nsigma[i] -= sign * np.einsum(
                    "q,qd,x->dx", rule.weights, phi, edge.normal
                )

    def _attach_correction(self, group: ElementGroup, vol_rules) -> None:
        mode = self.correction
        if mode == "auto":
            mode = "rt" if group.kind == "triangle" else "neumann"
        if mode == "rt" and (group.kind != "triangle" or self.nq_edge != self.degree + 1):
            mode = "neumann"
        group.correction_kind = mode

        mesh = self.mesh
        edge_rule_of = lambda eid: edge_quadrature(
            mesh.vertices[mesh.edges[eid].vertex_ids[0]],
            mesh.vertices[mesh.edges[eid].vertex_ids[1]],
            self.edge_order,
        )

        if mode == "rt":
            nE, nd = group.n_elements, group.n_dof
            m = 3 * (self.degree + 1)
            group.rt_r = np.zeros((nE, nd, m))
            group.rt_div = np.zeros((nE, nd, m))
            group.rt_vol = np.zeros((nE, m, 2))
            group.rt_backends = []
            for i, eid in enumerate(group.elem_ids):
                elem = mesh.elements[eid]
                coords = mesh.element_coords(eid)
                flux_points = [edge_rule_of(k).points for k in elem.edge_ids]
                basis = corr.RTBasis(self.degree, coords, flux_points=flux_points)
                rules = [edge_rule_of(k) for k in elem.edge_ids]
                backend = corr.RTCorrectionBackend(
                    basis, group.spaces[i], vol_rules[i], rules
                )
                group.rt_backends.append(backend)
                group.rt_r[i] = backend.r_table
                group.rt_div[i] = backend.div_table
                group.rt_vol[i] = backend.vol_table
        else:
            group.neumann = []
            for i, eid in enumerate(group.elem_ids):
                elem = mesh.elements[eid]
                rules = [edge_rule_of(k) for k in elem.edge_ids]
                normals = []
                for k in elem.edge_ids:
                    edge = mesh.edges[k]
                    sign = 1.0 if edge.left_element == eid else -1.0
                    normals.append(sign * edge.normal)
                group.neumann.append(
                    corr.NeumannCorrectionBackend(
                        group.spaces[i], vol_rules[i], rules, normals
                    )
                )

    # ------------------------------------------------------------------
    # state handling
    # ------------------------------------------------------------------
    def zero_states(self) -> np.ndarray:
        return np.zeros((self.n_dofs, self.p))

    def dof_coords(self) -> np.ndarray:
        coords = np.zeros((self.n_dofs, 2))
        for g in self.groups:
            for loc, eid in enumerate(g.elem_ids):
                off = self.dof_offset[eid]
                coords[off : off + g.n_dof] = g.spaces[loc].dof_coords
        return coords

    def interpolate_function(self, fn: Callable) -> np.ndarray:
        """Nodal states from a callable mapping (m, 2) points to (m,) or
        (m, p) values."""
        pts = self.dof_coords()
        vals = np.asarray(fn(pts), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return vals

    def element_states(self, u: np.ndarray) -> list[np.ndarray]:
        """Per-group nodal state arrays of shape (nE, nd, p)."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        return [u[g.dof_idx] for g in self.groups]

    def padded_states(self, u: np.ndarray) -> np.ndarray:
        """(n_elements, nd_max, p) zero-padded nodal states in mesh order."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        return u[self._pad_idx] * self._pad_mask

    def scatter_padded(self, padded: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`padded_states` (sums nothing, just re-packs)."""
        p = padded.shape[2]
        u = np.zeros((self.n_dofs, p))
        for g in self.groups:
            u[g.dof_idx.reshape(-1)] = padded[g.elem_ids, : g.n_dof].reshape(-1, p)
        return u

    def edge_traces(self, padded_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element traces at the edge quadrature points.

        Returns (uL, uR) of shape (n_edges, nq_e, p); rows of uR for
        boundary edges are copies of uL (the element's own trace).
        """
        uL = np.einsum("eqd,edp->eqp", self.edge_phi_left, padded_u[self.edge_left])
        right = np.where(self.edge_right >= 0, self.edge_right, self.edge_left)
        uR = np.einsum("eqd,edp->eqp", self.edge_phi_right, padded_u[right])
        if len(self.boundary_edge_ids):
            uR[self.boundary_edge_ids] = uL[self.boundary_edge_ids]
        return uL, uR

    def boundary_values(self, bc: BoundaryData) -> np.ndarray:
        """Dirichlet data at the quadrature points of every boundary edge,
        shape (n_edges, nq_e, p); non-boundary rows are zero."""
        out = np.zeros((len(self.mesh.edges), self.nq_edge, bc.p))
        for eid in self.boundary_edge_ids:
            out[eid] = bc.evaluate(self.boundary_tag[int(eid)], self.edge_pts[eid])
        return out

    # ------------------------------------------------------------------
    def dof_graph(self) -> DofGraph:
        if self._dof_graph is None:
            spaces = [None] * self.mesh.n_elements
            for g in self.groups:
                for loc, eid in enumerate(g.elem_ids):
                    spaces[eid] = g.spaces[loc]
            self._dof_graph = build_dof_graph(self.mesh, spaces)
        return self._dof_graph

    def element_space(self, eid: int) -> ElementSpace:
        g = self.groups[self.elem_group[eid]]
        return g.spaces[self.elem_local[eid]]

    def element_measures(self, eid: int) -> tuple[float, float, float]:
        g = self.groups[self.elem_group[eid]]
        loc = self.elem_local[eid]
        return float(g.areas[loc]), float(g.perimeters[loc]), float(g.diameters[loc])
