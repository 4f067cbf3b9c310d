import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dispersal.elliptic import (
    hminus1_inner,
    hminus1_norm,
    product_inner,
    product_norm,
    solve_mixed_poisson,
    transition_work,
)
from dispersal.grid import BoundaryPartition, BoundarySplit, build_interval_mesh, build_rect_mesh, divergence_adjoint


def setup_1d(n=64):
    mesh = build_interval_mesh(0, 1, n)
    return mesh, BoundarySplit.from_sides(mesh, {"left": "dirichlet", "right": "neumann"})


def right_charge(mesh, value=1.0):
    pi = np.zeros(mesh.n_facets)
    pi[mesh.facets_on("right")] = value
    return pi


def test_poisson_examples():
    mesh, split = setup_1d()
    x = mesh.points[:, 0]
    assert np.allclose(solve_mixed_poisson(mesh, split, 1.0, pi=right_charge(mesh)), x)
    assert np.allclose(solve_mixed_poisson(mesh, split, 1.0), 0.0)
    z = solve_mixed_poisson(mesh, split, 1.0, mu=np.ones(mesh.n_nodes))
    assert np.max(np.abs(z - (x - x**2 / 2))) < 1e-3


def test_poisson_weak_form_and_dirichlet_values():
    mesh = build_rect_mesh(((0, 1), (0, 1)), 6, 5)
    split = BoundarySplit.from_sides(mesh, {"left": "dirichlet", "right": "neumann", "top": "dirichlet", "bottom": "neumann"})
    rng = np.random.default_rng(1)
    sigma = rng.uniform(0.5, 2, mesh.n_nodes)
    mu = rng.normal(size=mesh.n_nodes)
    chi = rng.normal(size=(mesh.n_cells, 2))
    pi = rng.normal(size=mesh.n_facets)
    g = rng.normal(size=mesh.n_nodes)
    z = solve_mixed_poisson(mesh, split, sigma, mu, chi, pi, g)
    from dispersal.grid import assemble_stiffness, neumann_load

    res = assemble_stiffness(mesh, sigma) @ z - (mesh.lumped_mass * mu - divergence_adjoint(mesh, chi) + neumann_load(mesh, split, pi))
    assert np.max(np.abs(res[split.free_nodes])) < 1e-11
    assert np.array_equal(z[split.dirichlet_nodes], g[split.dirichlet_nodes])


def test_transition_work_examples():
    mesh, split = setup_1d()
    assert transition_work(mesh, split, 1.0, pi=right_charge(mesh)) == pytest.approx(0.5, abs=1e-12)
    assert transition_work(mesh, split, 1.0) == 0.0
    assert transition_work(mesh, split, 1.0, pi=right_charge(mesh, 2.0)) == pytest.approx(2.0, abs=1e-12)


def test_hminus1_examples():
    mesh, split = setup_1d(128)
    assert hminus1_norm(mesh, split, 1.0, np.ones(mesh.n_nodes)) == pytest.approx(1 / np.sqrt(3), abs=1e-3)
    assert hminus1_norm(mesh, split, 1.0, np.zeros(mesh.n_nodes)) == 0.0
    f = np.sin(3 * mesh.points[:, 0])
    assert hminus1_inner(mesh, split, 1.0, f, f) == pytest.approx(hminus1_norm(mesh, split, 1.0, f) ** 2)


def test_hminus1_convergence_order():
    errs = []
    for n in (32, 64, 128):
        mesh, split = setup_1d(n)
        errs.append(abs(hminus1_norm(mesh, split, 1.0, np.ones(mesh.n_nodes)) - 1 / np.sqrt(3)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_transition_work_is_half_squared_norm():
    mesh, split = setup_1d()
    rng = np.random.default_rng(4)
    mu = rng.normal(size=mesh.n_nodes)
    sigma = rng.uniform(0.5, 2.0, mesh.n_nodes)
    assert transition_work(mesh, split, sigma, mu=mu) == pytest.approx(0.5 * hminus1_norm(mesh, split, sigma, mu) ** 2, abs=1e-10)


@given(st.integers(0, 10_000))
def test_inner_product_symmetry_bilinearity_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    mesh = build_rect_mesh(((0, 1), (0, 1)), 4, 4)
    split = BoundarySplit.from_sides(mesh, {"left": "dirichlet", "right": "neumann", "top": "neumann", "bottom": "neumann"})
    f, g, h = rng.normal(size=(3, mesh.n_nodes))
    a, b = rng.normal(size=2)
    ip = lambda u, v: hminus1_inner(mesh, split, 1.0, u, v)
    assert ip(f, g) == pytest.approx(ip(g, f), abs=1e-10)
    assert ip(a * f + b * h, g) == pytest.approx(a * ip(f, g) + b * ip(h, g), abs=1e-9)
    assert abs(ip(f, g)) <= np.sqrt(ip(f, f) * ip(g, g)) + 1e-10


def test_representation_independence():
    # (f0, fbar) and (f0 + div_h w, fbar + w) act identically on every test function
    mesh, split = setup_1d(32)
    rng = np.random.default_rng(5)
    f0 = rng.normal(size=mesh.n_nodes)
    fbar = rng.normal(size=(mesh.n_cells, 1))
    w = rng.normal(size=(mesh.n_cells, 1))
    # nodal field whose lumped load equals the load of -w: only the free nodes matter
    shift = divergence_adjoint(mesh, w) / mesh.lumped_mass
    a = hminus1_norm(mesh, split, 1.0, (f0, fbar))
    b = hminus1_norm(mesh, split, 1.0, (f0 + shift, fbar + w))
    assert a == pytest.approx(b, abs=1e-10)


def test_product_norm_sums_species():
    mesh = build_interval_mesh(0, 1, 16)
    part = BoundaryPartition.from_sides(mesh, {"left": "dirichlet", "right": "neumann"}, {"left": "neumann", "right": "dirichlet"})
    f = np.stack([np.ones(17), mesh.points[:, 0]])
    total = sum(hminus1_norm(mesh, part[k], 1.0, f[k]) ** 2 for k in range(2))
    assert product_norm(mesh, part, 1.0, f) ** 2 == pytest.approx(total)
    assert product_inner(mesh, part, 1.0, f, f) == pytest.approx(total)
