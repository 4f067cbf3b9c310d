import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dispersal.energy_laws import (
    CrowdMotion,
    DomainError,
    PorousMedium,
    QuadraticShifted,
    Tabulated,
    coupled_membership,
    eval_beta,
    eval_conjugate,
    law_from_config,
    prox_conjugate,
    prox_coupled,
    select_density,
    subdiff_interval,
)
from oracles import grid_argmin_1d, grid_argmin_2d
from samplers import law_zoo, member

LAWS = law_zoo() + [Tabulated([0.0, 1.0, 2.0, 3.0], [0.0, 0.5, 2.0, 4.5])]
finite = st.floats(-5, 5, allow_nan=False)
law_index = st.integers(0, len(LAWS) - 1)


def brute_conjugate(law, q, r_max=10.0, step=1e-4):
    r = np.arange(0.0, r_max + step / 2, step)
    with np.errstate(invalid="ignore"):
        vals = q * r - law.beta(r)
    return float(np.nanmax(np.where(np.isfinite(vals), vals, -np.inf)))


# -- evaluation examples ---------------------------------------------------------

def test_beta_examples():
    assert eval_beta(PorousMedium(1), None, 2.0) == 2.0
    assert eval_beta(CrowdMotion(1), None, 0.5) == 0.0
    assert eval_beta(CrowdMotion(1), None, 1.5) == np.inf
    for law in LAWS:
        assert eval_beta(law, None, 0.0) == 0.0
        assert eval_beta(law, None, -3.0) == 0.0


def test_conjugate_examples_against_brute_force():
    # frozen from the brute-force maximisation
    assert eval_conjugate(PorousMedium(1), None, 3.0) == pytest.approx(4.5, abs=1e-12)
    assert brute_conjugate(PorousMedium(1), 3.0) == pytest.approx(4.5, abs=1e-6)
    assert eval_conjugate(CrowdMotion(1), None, 2.0) == pytest.approx(2.0)
    assert brute_conjugate(CrowdMotion(1), 2.0, r_max=1.0) == pytest.approx(2.0, abs=1e-9)
    for law in LAWS:
        assert eval_conjugate(law, None, -1.0) == 0.0


def test_porous_medium_conjugate_closed_form():
    for m in (1.0, 2.0, 3.0):
        for q in (0.3, 1.0, 2.5):
            expected = m / (m + 1) * q ** ((m + 1) / m)
            assert eval_conjugate(PorousMedium(m), None, q) == pytest.approx(expected)
            assert brute_conjugate(PorousMedium(m), q, r_max=4.0) == pytest.approx(expected, abs=1e-6)


def test_subdiff_examples():
    assert subdiff_interval(PorousMedium(2), None, 3.0) == (9.0, 9.0)
    assert subdiff_interval(CrowdMotion(1), None, 1.0) == (0.0, np.inf)
    assert subdiff_interval(PorousMedium(1), None, 0.0) == (-np.inf, 0.0)
    with pytest.raises(DomainError):
        subdiff_interval(CrowdMotion(1), None, 1.5)
    with pytest.raises(DomainError):
        subdiff_interval(PorousMedium(1), None, -0.1)


def test_prox_conjugate_examples():
    assert prox_conjugate(PorousMedium(1), None, 1.0, 3.0) == pytest.approx(1.5)
    assert grid_argmin_1d(lambda a: (a - 3) ** 2 / 2 + PorousMedium(1).conjugate(a)) == pytest.approx(1.5, abs=1e-3)
    assert prox_conjugate(CrowdMotion(1), None, 1.0, 3.0) == pytest.approx(2.0)
    assert prox_conjugate(CrowdMotion(1), None, 1.0, -1.0) == pytest.approx(-1.0)
    for law in LAWS:
        assert prox_conjugate(law, None, 1.0, 0.0) == 0.0
    with pytest.raises(DomainError):
        prox_conjugate(PorousMedium(1), None, 0.0, 1.0)


def test_prox_coupled_examples():
    a = prox_coupled(PorousMedium(1), None, 1.0, 3.0, 1.0)
    assert np.allclose(a, (1.5, 1.0))
    law = PorousMedium(1)
    obj = lambda u, v: ((u - 3) ** 2 + (v - 1) ** 2) / 2 + law.conjugate(np.maximum(u, v))
    assert np.allclose(grid_argmin_2d(obj, -5, 5), (1.5, 1.0), atol=2e-3)
    # the tied candidate (t, t) has value 21/9 > 2.25
    assert float(obj(1.5, 1.0)) == pytest.approx(2.25)
    assert float(obj(4 / 3, 4 / 3)) == pytest.approx(21 / 9)
    assert np.allclose(prox_coupled(CrowdMotion(1), None, 1.0, 3.0, -1.0), (2.0, -1.0))
    for law in LAWS:
        assert np.allclose(prox_coupled(law, None, 1.0, 0.0, 0.0), (0.0, 0.0))


def test_membership_examples():
    law = PorousMedium(1)
    assert coupled_membership(law, None, (1, 2), (3, 3)).member
    assert not coupled_membership(law, None, (1, 2), (3, 2)).member
    assert coupled_membership(law, None, (0, 0), (-1, 0)).member


def test_select_density_examples():
    s = select_density(PorousMedium(1), None, (1, 3))
    assert s.kind == "second_only" and s.total == (3.0, 3.0)
    s = select_density(PorousMedium(1), None, (0, 0))
    assert s.kind == "simplex" and s.total == (0.0, 0.0)
    s = select_density(CrowdMotion(1), None, (2, 0))
    assert s.kind == "first_only" and s.total == (1.0, 1.0)
    # brute force: maximise d . r - beta(r1 + r2) on a nonnegative grid
    g = np.linspace(0, 2, 201)
    R1, R2 = np.meshgrid(g, g, indexing="ij")
    vals = 2 * R1 - CrowdMotion(1).beta(R1 + R2)
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    assert (g[i], g[j]) == (1.0, 0.0)


# -- properties -------------------------------------------------------------------

@given(law_index, st.floats(0, 3), finite)
def test_fenchel_young(i, r, q):
    law = LAWS[i]
    if r > law.domain_sup():
        r = float(law.domain_sup())
    gap = float(law.beta(r) + law.conjugate(q) - q * r)
    assert gap >= -1e-12
    lo, hi = law.subdiff(r)
    inside = float(lo) - 1e-9 <= q <= float(hi) + 1e-9
    assert (gap <= 1e-9) == inside or abs(gap) < 1e-6


@given(law_index, st.floats(0, 3), st.floats(0, 3), st.floats(0, 1))
def test_convexity_midpoint(i, a, b, t):
    law = LAWS[i]
    fa, fb = float(law.beta(a)), float(law.beta(b))
    mid = float(law.beta(t * a + (1 - t) * b))
    if np.isfinite(fa) and np.isfinite(fb):
        assert mid <= t * fa + (1 - t) * fb + 1e-12


@given(law_index, st.floats(0, 5))
def test_coercivity_bound(i, r):
    law = LAWS[i]
    C, M = law.coercivity
    assert C > 0
    assert C * max(abs(r) - M, 0.0) ** 2 <= float(law.beta(r)) + 1e-12


@given(law_index, finite, finite)
def test_conjugate_vanishes_and_increases(i, q1, q2):
    law = LAWS[i]
    lo, hi = sorted((q1, q2))
    assert float(law.conjugate(lo)) <= float(law.conjugate(hi)) + 1e-12
    if hi <= 0:
        assert float(law.conjugate(hi)) == 0.0


@given(law_index, st.floats(0.1, 10), finite)
def test_prox_conjugate_optimality(i, s, q):
    law = LAWS[i]
    a = float(law.prox_conjugate(s, q))
    ref = grid_argmin_1d(lambda t: (t - q) ** 2 / (2 * s) + law.conjugate(t))
    assert abs(a - ref) <= 2e-3
    # (q - a)/s must be a maximiser of a r - beta(r)
    lo, hi = law.conjugate_subdiff(a)
    assert float(lo) - 1e-8 <= (q - a) / s <= float(hi) + 1e-8


@given(law_index, st.floats(0.1, 10), finite, finite)
def test_prox_coupled_optimality(i, s, q1, q2):
    law = LAWS[i]
    obj = lambda u, v: ((u - q1) ** 2 + (v - q2) ** 2) / (2 * s) + law.conjugate(np.maximum(u, v))
    a = prox_coupled(law, None, s, q1, q2)
    ref = grid_argmin_2d(obj)
    assert np.max(np.abs(np.asarray(a) - ref)) <= 2e-3
    assert float(obj(*a)) <= float(obj(*ref)) + 1e-12


def test_prox_coupled_is_vectorised():
    rng = np.random.default_rng(0)
    q = rng.uniform(-5, 5, (2, 50))
    for law in LAWS:
        a1, a2 = prox_coupled(law, None, 0.7, q[0], q[1])
        for j in range(50):
            b = prox_coupled(law, None, 0.7, q[0, j], q[1, j])
            assert np.allclose((a1[j], a2[j]), (float(b[0]), float(b[1])), rtol=1e-13, atol=1e-14)


@given(law_index, st.integers(0, 10_000))
def test_membership_swap_symmetry(i, seed):
    law = LAWS[i] if i < 5 else LAWS[0]
    rng = np.random.default_rng(seed)
    r, d = member(law, rng)
    d = (d[0] + rng.normal(scale=0.3), d[1])
    a = coupled_membership(law, None, r, d, tol=1e-8)
    b = coupled_membership(law, None, r[::-1], d[::-1], tol=1e-8)
    assert a.member == b.member
    assert a.fenchel_residual == pytest.approx(b.fenchel_residual)


@given(law_index, st.integers(0, 10_000))
def test_graph_monotonicity(i, seed):
    law = LAWS[i] if i < 5 else LAWS[0]
    rng = np.random.default_rng(seed)
    (r, d), (r2, d2) = member(law, rng), member(law, rng)
    assert coupled_membership(law, None, r, d, tol=1e-9).member
    assert coupled_membership(law, None, r2, d2, tol=1e-9).member
    assert np.dot(np.subtract(d, d2), np.subtract(r, r2)) >= -1e-9


@given(law_index, st.integers(0, 10_000))
def test_max_potential_nonnegative_where_occupied(i, seed):
    law = LAWS[i] if i < 5 else LAWS[0]
    r, d = member(law, np.random.default_rng(seed))
    if r[0] + r[1] > 1e-9:
        assert max(d) >= -1e-9


def test_member_with_empty_ground_can_have_negative_potential():
    # restricted conjugate: an empty node accepts any nonpositive potential
    assert coupled_membership(PorousMedium(1), None, (0, 0), (-2, -0.5)).member


def test_membership_tolerates_roundoff_above_cap():
    rep = coupled_membership(CrowdMotion(2.0), None, (0.5, 1.5 + 1e-10), (0.3, 0.3), tol=1e-6)
    assert rep.member and rep.agree


# -- tabulated and configuration ----------------------------------------------------

def test_tabulated_matches_quadratic_at_breakpoints():
    r = np.linspace(0, 3, 31)
    tab = Tabulated(r, r**2 / 2)
    assert np.allclose(tab.beta(r), r**2 / 2)
    assert tab.beta(3.5) == np.inf
    q = np.linspace(-1, 2.5, 15)
    assert np.allclose(tab.conjugate(q), [brute_conjugate(tab, v, r_max=3.0) for v in q], atol=1e-6)


def test_tabulated_validation():
    with pytest.raises(DomainError):
        Tabulated([0, 1, 2], [0, 1, 1.5])      # concave
    with pytest.raises(DomainError):
        Tabulated([0.5, 1], [0, 1])
    with pytest.raises(DomainError):
        Tabulated([0, 1], [0, 1], extrapolation="cubic")
    lin = Tabulated([0, 1, 2], [0, 0.5, 2.0], extrapolation="linear")
    assert lin.beta(3.0) == pytest.approx(3.5)
    with pytest.raises(DomainError):
        lin.conjugate(2.0)


def test_law_config_round_trip():
    for law in LAWS:
        again = law_from_config(law.to_config())
        q = np.linspace(-2, 2, 9)
        assert np.allclose(again.conjugate(q), law.conjugate(q))
    assert isinstance(law_from_config({"family": "quadratic"}), PorousMedium)
    with pytest.raises(DomainError):
        law_from_config({"family": "sticky"})
    with pytest.raises(DomainError):
        law_from_config({"family": "crowd_motion", "params": {"capacity": 1}})
    with pytest.raises(DomainError):
        PorousMedium(0.5)
    with pytest.raises(DomainError):
        CrowdMotion(0.0)


def test_spatial_parameters_are_nodal():
    law = law_from_config({"family": "crowd_motion", "params": {"cap": [1.0, 2.0, 3.0]}}, n_nodes=3)
    assert np.allclose(law.domain_sup(), [1, 2, 3])
    assert np.allclose(law.beta(np.array([1.5, 1.5, 1.5])), [np.inf, 0, 0])
    assert eval_conjugate(law, 2, 1.0) == pytest.approx(3.0)
    with pytest.raises(DomainError):
        law_from_config({"family": "crowd_motion", "params": {"cap": [1.0, 2.0]}}, n_nodes=3)
    pm = PorousMedium(np.array([1.0, 2.0]))
    assert np.allclose(pm.prox_conjugate(1.0, np.array([3.0, 3.0])), [1.5, PorousMedium(2.0).prox_conjugate(1.0, 3.0)])
