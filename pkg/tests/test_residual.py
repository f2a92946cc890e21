import numpy as np
import pytest

from polyfr import entropy as en
from polyfr import mesh as pm
from polyfr import physics as ph
from polyfr import residual as rs
from polyfr.discretization import BoundaryData, Discretization

RNG = np.random.default_rng(31)

MESHES = {
    "tri2-k1": (pm.two_triangle_square(), 1),
    "tri-k2": (pm.structured_triangles(2), 2),
    "quad-k1": (pm.structured_quads(2), 1),
    "hex-k1": (pm.regular_polygon_mesh(6), 1),
}

VARIANTS = ["dg", "dg-interp", "fr", "fr-strong", "cs", "st"]


def _setup(name, law=None):
    mesh, k = MESHES[name]
    disc = Discretization(mesh, k)
    law = law or ph.burgers_2d()
    u = law.random_states(RNG, disc.n_dofs).reshape(disc.n_dofs, law.p)
    lo, hi = law.admissible_box
    bc = RNG.uniform(lo, hi, size=(len(mesh.edges), disc.nq_edge, law.p))
    return disc, law, u, bc


def test_constant_state_zero_residual_on_triangles():
    mesh, k = MESHES["tri-k2"]
    disc = Discretization(mesh, k)
    law = ph.burgers_2d()
    u = np.full((disc.n_dofs, 1), 0.8)
    bc = np.full((len(mesh.edges), disc.nq_edge, 1), 0.8)
    for variant in VARIANTS:
        rset = rs.compute_residuals(disc, law, u, variant, "rusanov", bc)
        assert np.abs(rset.phi).max() <= 1e-13, variant
        assert np.abs(rset.boundary_phi).max() <= 1e-13, variant


def test_exact_linear_steady_state_annihilates_residuals():
    law = ph.linear_advection([1.0, 0.0])
    mesh = pm.structured_triangles(3)
    disc = Discretization(mesh, 1)
    u = disc.interpolate_function(lambda pts: pts[:, 1])
    bc = BoundaryData.from_function(lambda pts: pts[:, 1])
    for variant in ("dg", "fr", "fr-strong"):
        rset = rs.compute_residuals(disc, law, u, variant, "rusanov", bc)
        assert np.abs(rset.phi).max() <= 1e-12
        R = rs.assemble_global(disc, rset)
        assert np.abs(R).max() <= 1e-11


@pytest.mark.parametrize("name", list(MESHES))
@pytest.mark.parametrize("variant", VARIANTS)
def test_element_conservation_random_states(name, variant):
    disc, law, u, bc = _setup(name)
    rset = rs.compute_residuals(disc, law, u, variant, "rusanov", bc)
    assert rs.element_conservation_defects(rset).max() <= 1e-11
    assert rs.boundary_conservation_defects(rset).max() <= 1e-11


@pytest.mark.parametrize("name", list(MESHES))
def test_fr_equals_reference_plus_redistribution(name):
    disc, law, u, bc = _setup(name)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    ref = rs.compute_residuals(disc, law, u, "dg-interp", "rusanov", bc)
    assert np.abs(fr.phi - ref.phi - fr.r_sigma).max() <= 1e-11
    assert np.abs(fr.r_sigma.sum(axis=1)).max() <= 1e-11


@pytest.mark.parametrize("name", list(MESHES))
def test_strong_and_ibp_forms_agree(name):
    disc, law, u, bc = _setup(name)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    strong = rs.compute_residuals(disc, law, u, "fr-strong", "rusanov", bc)
    assert np.abs(fr.phi - strong.phi).max() <= 1e-9


def test_zero_correction_reduces_fr_to_reference():
    # continuous nodal data on a shared-vertex pair of triangles with the
    # central flux leaves no interface mismatch for linear transport
    law = ph.linear_advection([0.4, 1.0])
    mesh = pm.two_triangle_square()
    disc = Discretization(mesh, 1)
    fn = lambda pts: 0.3 + 1.7 * pts[:, 0] - 0.6 * pts[:, 1]
    u = disc.interpolate_function(fn)
    bc = BoundaryData.from_function(fn)
    fr = rs.compute_residuals(disc, law, u, "fr", "central", bc)
    assert np.abs(fr.r_sigma).max() <= 1e-13
    ref = rs.compute_residuals(disc, law, u, "dg-interp", "central", bc)
    assert np.abs(fr.phi - ref.phi).max() <= 1e-13


def test_boundary_residual_vanishes_on_matching_data_and_outflow():
    law = ph.linear_advection([1.0, 0.0])
    mesh = pm.structured_quads(2)
    disc = Discretization(mesh, 1)
    fn = lambda pts: np.sin(pts[:, 1])
    u = disc.interpolate_function(fn)
    bc = BoundaryData.from_function(fn)
    rset = rs.compute_residuals(disc, law, u, "dg", "rusanov", bc)
    # matching Dirichlet data: the interpolated trace equals the data at the
    # quadrature points only where u^h is exact; use exact-linear data instead
    fn_lin = lambda pts: pts[:, 1]
    u = disc.interpolate_function(fn_lin)
    rset = rs.compute_residuals(
        disc, law, u, "dg", "rusanov", BoundaryData.from_function(fn_lin)
    )
    assert np.abs(rset.boundary_phi).max() <= 1e-13

    # pure outflow: upwind flux picks the interior state, residual vanishes
    u = disc.interpolate_function(lambda pts: 1.0 + pts[:, 1])
    bvals = RNG.uniform(-2, 2, size=(len(mesh.edges), disc.nq_edge, 1))
    rset = rs.compute_residuals(disc, law, u, "dg", "rusanov", bvals)
    right = [e.id for e in mesh.boundary_edges() if abs(e.midpoint[0] - 1.0) < 1e-12]
    for eid in right:
        owner = mesh.edges[eid].left_element
        # only the right-edge part of the boundary residual vanishes; check
        # through the per-edge integrand
        diff = rset.fhat_bc[eid] - rset.fhat_star[eid]
        assert np.abs(diff).max() <= 1e-13


def test_global_sum_telescopes_to_domain_boundary_flux():
    disc, law, u, bc = _setup("tri-k2")
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    R = rs.assemble_global(disc, rset)
    total = R.sum(axis=0)
    want = np.zeros(law.p)
    for eid in disc.boundary_edge_ids:
        want += np.einsum("q,qp->p", disc.edge_w[eid], rset.fhat_bc[eid])
    assert np.abs(total - want).max() <= 1e-10 * max(1.0, np.abs(R).max())


@pytest.mark.parametrize("name", list(MESHES))
@pytest.mark.parametrize("variant", ["dg", "fr", "fr-strong", "cs"])
def test_global_identity_random_test_fields(name, variant):
    disc, law, u, bc = _setup(name)
    rset = rs.compute_residuals(disc, law, u, variant, "rusanov", bc)
    v = RNG.normal(size=(disc.n_dofs, law.p))
    defect, scale = rs.global_identity_check(disc, law, u, v, rset, bc)
    assert defect <= 1e-9 * scale


def test_global_identity_constant_field_reduces_to_conservation():
    disc, law, u, bc = _setup("tri2-k1")
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    v = np.ones((disc.n_dofs, law.p))
    defect, scale = rs.global_identity_check(disc, law, u, v, rset, bc)
    assert defect <= 1e-10 * scale


# ---------------------------------------------------------------------------
# residual splitting on linear triangles
# ---------------------------------------------------------------------------

def test_flux_split_reassembles_and_is_antisymmetric():
    disc, law, u, bc = _setup("tri2-k1")
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    for eid in range(disc.mesh.n_elements):
        split = rs.flux_split(disc, law, u, rset, eid)
        nd = disc.n_dof_elem[eid]
        for s in range(nd):
            got = split.reassembled(s)
            assert np.abs(got - rset.phi[eid, s]).max() <= 1e-11
        for a in range(nd):
            for b in range(a + 1, nd):
                assert np.allclose(split.pair(a, b), -split.pair(b, a))


def test_flux_split_constant_flux_reduces_to_geometric_term():
    # constant state: the pairwise flux is the volume-averaged flux through
    # the dual control-volume interface
    law = ph.burgers_2d()
    mesh = pm.two_triangle_square()
    disc = Discretization(mesh, 1)
    u = np.full((disc.n_dofs, 1), 1.3)
    bc = np.full((len(mesh.edges), disc.nq_edge, 1), 1.3)
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    graph = disc.dof_graph()
    for eid in range(mesh.n_elements):
        split = rs.flux_split(disc, law, u, rset, eid)
        area = disc.mesh.elements[eid].area
        for (a, b), val in split.pair_flux.items():
            geo = split.flux_volume_integral @ graph.elements[eid].cv_normal(a, b) / area
            assert np.abs(val - geo).max() <= 1e-12


def test_flux_split_geometric_form_for_random_states():
    disc, law, u, bc = _setup("tri2-k1")
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    graph = disc.dof_graph()
    for eid in range(disc.mesh.n_elements):
        split = rs.flux_split(disc, law, u, rset, eid)
        area = disc.mesh.elements[eid].area
        for (a, b), val in split.pair_flux.items():
            geo = split.flux_volume_integral @ graph.elements[eid].cv_normal(a, b) / area
            assert np.abs(val - geo).max() <= 1e-11


def test_flux_split_rejects_higher_order():
    disc, law, u, bc = _setup("tri-k2")
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    with pytest.raises(ValueError, match="linear triangles"):
        rs.flux_split(disc, law, u, rset, 0)


# ---------------------------------------------------------------------------
# boundedness probe
# ---------------------------------------------------------------------------

def test_lipschitz_probe_constant_states_produce_tiny_residuals():
    mesh = pm.structured_triangles(2)
    disc = Discretization(mesh, 1)
    law = ph.linear_advection([1.0, 0.5])
    u = np.full((disc.n_dofs, 1), 0.7)
    rset = rs.compute_residuals(disc, law, u, "fr", "rusanov")
    assert np.abs(rset.phi).max() <= 1e-12


def test_lipschitz_probe_stable_across_refinement():
    # the raw ratio carries one length factor (residuals are flux * length);
    # normalizing by the mesh size exposes the family constant, which should
    # stay put under refinement
    law = ph.linear_advection([1.0, 0.5])
    consts = []
    for n in (2, 4, 8):
        mesh = pm.structured_triangles(n)
        disc = Discretization(mesh, 1)
        rng = np.random.default_rng(5)
        rep = rs.lipschitz_hypothesis_probe(disc, law, "fr", 2.0, rng, n_samples=30)
        consts.append(rep["constant"] / mesh.h_max())
        assert rep["constant_state_residual"] <= 1e-12
    base = consts[0]
    for c in consts[1:]:
        assert abs(c - base) <= 0.25 * base


def test_lipschitz_probe_finite_for_burgers():
    law = ph.burgers_2d()
    disc = Discretization(pm.structured_triangles(2), 1)
    rng = np.random.default_rng(6)
    rep = rs.lipschitz_hypothesis_probe(disc, law, "fr", 2.0, rng, n_samples=200)
    assert np.isfinite(rep["constant"])
    assert rep["constant"] > 0


def test_per_element_wrappers_match_batched_results():
    disc, law, u, bc = _setup("tri2-k1")
    full_dg = rs.compute_residuals(disc, law, u, "dg", "rusanov", bc)
    full_fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    full_st = rs.compute_residuals(disc, law, u, "fr-strong", "rusanov", bc)
    for eid in range(disc.mesh.n_elements):
        nd = disc.n_dof_elem[eid]
        assert np.allclose(
            rs.dg_element_residual(disc, law, u, eid, bc=bc), full_dg.phi[eid, :nd]
        )
        phi, r = rs.fr_element_residual_gauss(disc, law, u, eid, bc=bc)
        assert np.allclose(phi, full_fr.phi[eid, :nd])
        assert np.allclose(r, full_fr.r_sigma[eid, :nd])
        assert np.allclose(
            rs.fr_element_residual_strong(disc, law, u, eid, bc=bc),
            full_st.phi[eid, :nd],
        )
        assert np.allclose(
            rs.boundary_residual(disc, law, u, eid, bc=bc),
            full_dg.boundary_phi[eid, :nd],
        )
    with pytest.raises(rs.BoundaryDataMissing):
        rs.boundary_residual(disc, law, u, 0, bc=None)
