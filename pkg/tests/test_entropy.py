import numpy as np
import pytest

from polyfr import entropy as en
from polyfr import mesh as pm
from polyfr import physics as ph
from polyfr import residual as rs
from polyfr.discretization import BoundaryData, Discretization

RNG = np.random.default_rng(77)


def _setup(mesh, k, law, seed=0):
    disc = Discretization(mesh, k)
    rng = np.random.default_rng(seed)
    u = law.random_states(rng, disc.n_dofs).reshape(disc.n_dofs, law.p)
    lo, hi = law.admissible_box
    bc = rng.uniform(lo, hi, size=(len(mesh.edges), disc.nq_edge, law.p))
    return disc, u, bc


# ---------------------------------------------------------------------------
# entropy error
# ---------------------------------------------------------------------------

def test_entropy_error_vanishes_on_constant_state():
    law = ph.burgers_2d()
    mesh = pm.structured_triangles(2)
    disc = Discretization(mesh, 1)
    u = np.full((disc.n_dofs, 1), 0.9)
    bc = np.full((len(mesh.edges), disc.nq_edge, 1), 0.9)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    assert np.abs(en.entropy_error(disc, law, u, fr)).max() <= 1e-12


def test_entropy_error_stable_under_quadrature_refinement():
    # advection with linear data: all integrands are polynomial and covered
    # by the default rules, so a much richer quadrature reproduces the same
    # per-element error
    law = ph.linear_advection([0.8, 0.3])
    mesh = pm.mesh_from_arrays([[0, 0], [1, 0], [0.2, 1.1]], [[0, 1, 2]])
    vals = []
    for vol_order, edge_order in ((2, 3), (8, 11)):
        disc = Discretization(mesh, 1, vol_order=vol_order, edge_order=edge_order)
        u = disc.interpolate_function(lambda pts: 0.4 + 1.3 * pts[:, 0] - 0.7 * pts[:, 1])
        bc = BoundaryData.from_function(lambda pts: 0.4 + 1.3 * pts[:, 0] - 0.7 * pts[:, 1])
        fr = rs.compute_residuals(disc, law, u, "fr", "central", bc)
        vals.append(en.entropy_error(disc, law, u, fr))
    assert np.abs(vals[0] - vals[1]).max() <= 1e-11


def test_entropy_error_shift_between_variants_is_redistribution_pairing():
    law = ph.burgers_2d()
    disc, u, bc = _setup(pm.structured_triangles(2), 2, law)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    ref = rs.compute_residuals(disc, law, u, "dg-interp", "rusanov", bc)
    e_fr = en.entropy_error(disc, law, u, fr)
    e_ref = en.entropy_error(disc, law, u, ref)
    vn = en.entropy_nodes(disc, law, u)
    v_dot_r = np.einsum("edp,edp->e", vn, fr.r_sigma)
    assert np.abs(e_ref - e_fr - v_dot_r).max() <= 1e-11


# ---------------------------------------------------------------------------
# conservative correction
# ---------------------------------------------------------------------------

def test_tau_hand_case():
    v = np.array([[0.0], [1.0], [2.0]])
    tau = en.tau_correction(v, 1.0)
    assert np.allclose(tau, [[-0.5], [0.0], [0.5]])
    assert abs(tau.sum()) == 0.0
    assert abs(float((v * tau).sum()) - 1.0) <= 1e-15


def test_tau_zero_error_gives_zero_correction():
    v = RNG.normal(size=(6, 1))
    assert np.abs(en.tau_correction(v, 0.0)).max() == 0.0


def test_tau_degenerate_policy():
    v = np.full((3, 1), 1.7)
    assert np.abs(en.tau_correction(v, 1e-13)).max() == 0.0
    with pytest.raises(en.DegenerateEntropyCorrection):
        en.tau_correction(v, 1.0)


def test_tau_identities_random_batch():
    # the two defining identities at many random draws
    for _ in range(200):
        nd = int(RNG.integers(3, 11))
        v = RNG.normal(size=(nd, 1)) * RNG.uniform(0.5, 3.0)
        e = float(RNG.normal())
        tau = en.tau_correction(v, e)
        assert abs(float(tau.sum())) <= 1e-12 * max(1.0, abs(e))
        assert abs(float((v * tau).sum()) - e) <= 1e-11 * max(1.0, abs(e))


@pytest.mark.parametrize(
    "mesh,k",
    [(pm.structured_triangles(2), 1), (pm.structured_quads(2), 2), (pm.regular_polygon_mesh(6), 1)],
)
def test_cs_balances_entropy_exactly(mesh, k):
    law = ph.burgers_2d()
    disc, u, bc = _setup(mesh, k, law)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    cs = en.cs_residuals(disc, law, u, fr)
    assert np.abs(en.entropy_error(disc, law, u, cs)).max() <= 1e-11
    assert rs.element_conservation_defects(cs).max() <= 1e-11
    # zero entropy error leaves the residuals untouched
    e0 = en.entropy_error(disc, law, u, fr)
    tau = en.tau_all(disc, law, u, np.zeros_like(e0))
    assert np.abs(tau).max() == 0.0


def test_st_adds_nonnegative_dissipation():
    law = ph.burgers_2d()
    disc, u, bc = _setup(pm.structured_triangles(2), 1, law)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    cs = en.cs_residuals(disc, law, u, fr)
    st0 = en.st_residuals(disc, law, u, cs, jump_coeff=0.0)
    assert np.abs(st0.phi - cs.phi).max() == 0.0
    st = en.st_residuals(disc, law, u, cs, jump_coeff=0.3)
    vn = en.entropy_nodes(disc, law, u)
    added = np.einsum("edp,edp->e", vn, st.phi - cs.phi)
    assert added.min() >= 0.0
    assert added.max() > 0.0
    margin = -en.entropy_error(disc, law, u, st)
    assert margin.min() >= -1e-11
    assert rs.element_conservation_defects(st).max() <= 1e-11


def test_interior_entropy_flux_telescopes_to_physical_boundary():
    law = ph.burgers_2d()
    disc, u, bc = _setup(pm.structured_triangles(3), 1, law)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    total = fr.gbal.sum()
    want = 0.0
    for eid in disc.boundary_edge_ids:
        want += float(np.dot(disc.edge_w[eid], fr.ghat[eid]))
    assert abs(total - want) <= 1e-12 * max(1.0, abs(total))


def test_fr_entropy_condition_margin_identity():
    law = ph.burgers_2d()
    disc, u, bc = _setup(pm.structured_triangles(2), 1, law)
    fr = rs.compute_residuals(disc, law, u, "fr", "rusanov", bc)
    rep = en.fr_entropy_condition_check(disc, law, u, fr, bc=bc)
    assert np.abs(rep["margin"] - rep["direct"]).max() <= 1e-11
    # both signs occur on random data (diagnostic, no assertion on sign)
    assert np.isfinite(rep["margin"]).all()


def test_fr_entropy_condition_zero_correction_case():
    # continuous linear data under linear transport: no interface mismatch,
    # so the margin is exactly the negated reference entropy error
    law = ph.linear_advection([1.0, 0.2])
    mesh = pm.two_triangle_square()
    disc = Discretization(mesh, 1)
    fn = lambda pts: 0.2 + pts[:, 0] - 0.5 * pts[:, 1]
    u = disc.interpolate_function(fn)
    bc = BoundaryData.from_function(fn)
    fr = rs.compute_residuals(disc, law, u, "fr", "central", bc)
    assert np.abs(fr.r_sigma).max() <= 1e-13
    rep = en.fr_entropy_condition_check(disc, law, u, fr, bc=bc)
    assert np.abs(rep["margin"] + rep["e_reference"]).max() <= 1e-12


# ---------------------------------------------------------------------------
# entropy-conservative correction through prescribed moments
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "mesh,k,correction",
    [
        (pm.regular_polygon_mesh(6), 1, "auto"),
        (pm.structured_quads(2), 1, "auto"),
        (pm.structured_triangles(2), 1, "neumann"),
    ],
)
def test_entropy_conservative_residuals(mesh, k, correction):
    law = ph.burgers_2d()
    disc = Discretization(mesh, k, correction=correction)
    rng = np.random.default_rng(3)
    u = law.random_states(rng, disc.n_dofs).reshape(disc.n_dofs, 1)
    bc = rng.uniform(-2, 2, size=(len(mesh.edges), disc.nq_edge, 1))
    rset = en.entropy_conservative_residuals(disc, law, u, flux_kind="tadmor_ec", bc=bc)
    gap = en.entropy_error(disc, law, u, rset)
    assert np.abs(gap).max() <= 1e-10
    assert rs.element_conservation_defects(rset).max() <= 1e-10
    assert np.abs(rset.r_sigma.sum(axis=1)).max() <= 1e-10


# ---------------------------------------------------------------------------
# smoothness decomposition
# ---------------------------------------------------------------------------

SMOOTH = lambda pts: 0.8 * np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1]) + 0.1


def _decomposition_values(law, k, ns):
    out = []
    for n in ns:
        mesh = pm.structured_triangles(n)
        disc = Discretization(mesh, k)
        u = disc.interpolate_function(SMOOTH)
        fr = rs.compute_residuals(
            disc, law, u, "fr", "rusanov",
            np.zeros((len(mesh.edges), disc.nq_edge, 1)),
        )
        terms = en.error_decomposition(disc, law, u, fr)
        out.append(
            (mesh.h_max(), {t: float(np.abs(getattr(terms, t)).max())
                            for t in ("sur1", "sur2", "sur3", "bo", "co")})
        )
    return out


def _slope(rows, term):
    (h0, a), (h1, b) = rows[-2], rows[-1]
    return np.log(a[term] / b[term]) / np.log(h0 / h1)


def test_decomposition_exact_regimes_are_zero():
    # linear transport with quadratic entropy: every interpolation gap and
    # every quadrature gap is covered by the default rules
    rows = _decomposition_values(ph.linear_advection([1.0, 0.5]), 1, (2, 4))
    for _, vals in rows:
        assert vals["sur1"] <= 1e-14
        assert vals["sur2"] <= 1e-14
        assert vals["sur3"] <= 1e-14
        assert vals["bo"] <= 1e-14


def test_decomposition_decay_orders_k1():
    law = ph.burgers_2d()
    rows = _decomposition_values(law, 1, (4, 8, 16))
    assert _slope(rows, "co") >= 1 + 3 - 0.4
    # the flux-interpolation term trades one order for its boundary part
    assert _slope(rows, "sur3") >= 1 + 2 - 0.4
    rows = _decomposition_values(ph.exp_advection([1.0, 0.5]), 1, (4, 8, 16))
    assert _slope(rows, "sur2") >= 1 + 3 - 0.6


def test_decomposition_decay_orders_k2():
    law = ph.burgers_2d()
    rows = _decomposition_values(law, 2, (4, 8, 16))
    for term in ("sur1", "sur3", "bo", "co"):
        assert _slope(rows, term) >= 2 + 3 - 0.6, term


# ---------------------------------------------------------------------------
# element-split diagnostics
# ---------------------------------------------------------------------------

def _split_setup(law=None, seed=1):
    law = law or ph.burgers_2d()
    mesh = pm.two_triangle_square()
    disc = Discretization(mesh, 1)
    rng = np.random.default_rng(seed)
    u = law.random_states(rng, disc.n_dofs).reshape(disc.n_dofs, 1)
    bc = rng.uniform(*law.admissible_box, size=(len(mesh.edges), disc.nq_edge, 1))
    fr = rs.compute_residuals(disc, law, u, "fr", "tadmor_ec", bc)
    return disc, law, u, fr


def test_element_split_two_formulations_agree():
    disc, law, u, fr = _split_setup()
    graph = disc.dof_graph()
    for eid in range(disc.mesh.n_elements):
        rep = en.appendix_decomposition(disc, law, u, fr, eid, graph.elements[eid])
        assert abs(rep.c_k - rep.c_k_graph) <= 1e-10 * max(1.0, abs(rep.c_k))


def test_element_split_exact_identity():
    # un-halved pairwise sum minus the boundary jump part reproduces the
    # entropy gap measured with the potential-average interface flux
    disc, law, u, fr = _split_setup()
    graph = disc.dof_graph()
    for eid in range(disc.mesh.n_elements):
        rep = en.appendix_decomposition(disc, law, u, fr, eid, graph.elements[eid])
        got = rep.c_k_full - rep.b_dk
        assert abs(got - rep.entropy_gap) <= 1e-11 * max(1.0, abs(got))


def test_element_split_constant_state_vanishes():
    law = ph.burgers_2d()
    mesh = pm.two_triangle_square()
    disc = Discretization(mesh, 1)
    u = np.full((disc.n_dofs, 1), -0.7)
    bc = np.full((len(mesh.edges), disc.nq_edge, 1), -0.7)
    fr = rs.compute_residuals(disc, law, u, "fr", "tadmor_ec", bc)
    graph = disc.dof_graph()
    for eid in range(mesh.n_elements):
        rep = en.appendix_decomposition(disc, law, u, fr, eid, graph.elements[eid])
        assert abs(rep.c_k) <= 1e-12
        assert abs(rep.b_dk) <= 1e-12


def test_element_split_boundary_part_vanishes_for_continuous_traces():
    # continuous nodal data: interface jumps of both entropy variables and
    # the interpolated potential vanish, so the boundary functional is zero
    law = ph.burgers_2d()
    mesh = pm.two_triangle_square()
    disc = Discretization(mesh, 1)
    fn = lambda pts: 0.3 + 0.8 * pts[:, 0] - 0.2 * pts[:, 1]
    u = disc.interpolate_function(fn)
    bc = BoundaryData.from_function(fn)
    fr = rs.compute_residuals(disc, law, u, "fr", "tadmor_ec", bc)
    graph = disc.dof_graph()
    for eid in range(mesh.n_elements):
        rep = en.appendix_decomposition(disc, law, u, fr, eid, graph.elements[eid])
        assert abs(rep.b_dk) <= 1e-13
