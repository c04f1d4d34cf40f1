import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symplab.errors import EmptyCensusError, PreconditionError
from symplab.geometry import Annulus, Disk, LatticeTorus
from symplab.maps import DEFAULT_TWIST, GridPermutation, Identity, RigidRotation, perturbed_twist
from symplab.orbits import (OrbitSet, PeriodicOrbit, classify_nondegeneracy, find_orbits,
                            monodromy, orbits_to_rows)

D = Disk(1.0)


def _xcoord(chart, xy):
    return np.atleast_2d(xy)[:, 0]


def _fd_jacobian(phi, chart, z, h=1e-6):
    cols = []
    for e in np.eye(2):
        d = phi.surface.difference(chart, phi(chart, z + h * e), phi(chart, z - h * e))
        cols.append(d[0] / (2 * h))
    return np.stack(cols, axis=-1)


def test_identity_fixed_points_are_degenerate():
    orbits = find_orbits(Identity(D), 1, seeds=4)
    assert len(orbits) >= 4
    for o in orbits:
        assert o.period == 1
        np.testing.assert_allclose(o.floquet, [1, 1], atol=1e-12)
        assert o.nondegenerate is False


def test_rational_rotation_orbits(rotation3, rotation3_orbits):
    fixed = [o for o in rotation3_orbits if o.period == 1]
    assert len(fixed) == 1
    np.testing.assert_allclose(fixed[0].points[0], [0, 0], atol=1e-12)
    w = cmath.exp(2j * math.pi / 3)
    np.testing.assert_allclose(sorted(fixed[0].floquet, key=lambda z: z.imag), [w.conjugate(), w],
                               atol=1e-12)
    assert fixed[0].nondegenerate
    three = [o for o in rotation3_orbits if o.period == 3]
    assert len(three) > 10
    assert not any(o.period == 2 for o in rotation3_orbits)
    for o in three:
        assert o.residual < 1e-10
        np.testing.assert_allclose(o.monodromy, np.eye(2), atol=1e-8)
        assert o.nondegenerate is False


def test_twist_centre_linearization(twist_orbits):
    centre = [o for o in twist_orbits if o.period == 1 and np.allclose(o.points[0], 0, atol=1e-10)]
    assert len(centre) == 1
    # rotation by Theta(0) = pi
    np.testing.assert_allclose(centre[0].monodromy, -np.eye(2), atol=1e-10)
    np.testing.assert_allclose(centre[0].floquet, [-1, -1], atol=1e-10)
    assert centre[0].nondegenerate


def test_quarter_rotation_centre_is_elliptic():
    o = [o for o in find_orbits(RigidRotation(D, math.pi / 2), 1, seeds=4)
         if np.allclose(o.points[0], 0, atol=1e-12)][0]
    np.testing.assert_allclose(sorted(o.floquet, key=lambda z: z.imag), [-1j, 1j], atol=1e-12)
    assert o.nondegenerate


@pytest.fixture(scope="module")
def kicked():
    phi = perturbed_twist(Annulus(1.0), DEFAULT_TWIST, 0.3)
    return phi, find_orbits(phi, 1, seeds=10)


def test_perturbed_twist_hyperbolic_points(kicked):
    phi, orbits = kicked
    interior = [o for o in orbits if o.boundary is None]
    hyp = [o for o in interior if all(abs(z.imag) < 1e-12 for z in o.floquet)
           and max(abs(z) for z in o.floquet) > 1 + 1e-6]
    assert len(hyp) == 2
    for o in hyp:
        mu = max(z.real for z in o.floquet)
        assert mu > 1
        assert min(z.real for z in o.floquet) == pytest.approx(1 / mu, rel=1e-8)
        assert o.nondegenerate
        # oracle: eigenvalues of a finite-difference Jacobian
        ev = np.sort(np.linalg.eigvals(_fd_jacobian(phi, o.charts[0], o.points[:1])).real)
        np.testing.assert_allclose(ev, sorted(z.real for z in o.floquet), rtol=1e-6)
        assert mu == pytest.approx(2.2942, abs=1e-4)
    pts = sorted(tuple(np.round(o.points[0], 4)) for o in hyp)
    assert pts == [(0.2522, 0.4234), (0.7478, 0.5766)]


def test_orbit_closure_and_determinant(kicked, twist, twist_orbits):
    for phi, orbits in (kicked, (twist, twist_orbits)):
        for o in orbits:
            last = phi.apply(o.charts[-1], o.points[-1:])
            back = phi.surface.transition(last.chart, o.charts[0], last.xy)
            assert np.max(np.abs(phi.surface.difference(o.charts[0], back, o.points[:1]))) < 1e-9
            assert o.determinant() == pytest.approx(1.0, abs=1e-6)


@given(st.integers(0, 10))
def test_cyclic_relabeling_invariance(rotation3, rotation3_orbits, k):
    o = [o for o in rotation3_orbits if o.period == 3][k % 5]
    r = classify_nondegeneracy(o.relabeled(k), rotation3)
    assert r.period == o.period
    assert r.functional(_xcoord) == pytest.approx(o.functional(_xcoord), abs=1e-14)
    np.testing.assert_allclose(sorted(r.floquet, key=lambda z: (z.real, z.imag)),
                               sorted(o.floquet, key=lambda z: (z.real, z.imag)), atol=1e-10)


def test_lattice_orbits_match_cycle_enumeration():
    phi = GridPermutation(LatticeTorus(64))
    truth = phi.cycles()
    found = find_orbits(phi, max(len(c) for c in truth), tol=0.0)

    def canon(seq):
        k = seq.index(min(seq))
        return tuple(seq[k:] + seq[:k])

    got = {canon([int(p[0]) * 64 + int(p[1]) for p in o.points]) for o in found}
    assert got == {canon(c) for c in truth}
    assert len(found) == len(truth) == 164


def test_orbit_set_functionals(rotation3_orbits):
    fixed = [o for o in rotation3_orbits if o.period == 1][0]
    O = OrbitSet([(2.0, fixed)])
    f = lambda chart, xy: np.cos(np.atleast_2d(xy)[:, 0]) + 3.0
    assert O.functional(f) == pytest.approx(2 * f("disk", fixed.points)[0], abs=1e-15)
    three = [o for o in rotation3_orbits if o.period == 3][:4]
    O = OrbitSet.from_orbits(three)
    one = lambda chart, xy: np.ones(len(np.atleast_2d(xy)))
    assert O.functional(one) == O.size() == 12.0


def test_weighted_sum_against_direct_summation():
    # two period-2 orbits of the half-turn
    phi = RigidRotation(D, math.pi)
    orbits = [o for o in find_orbits(phi, 2, seeds=6) if o.period == 2][:2]
    assert len(orbits) == 2
    O = OrbitSet([(1.0, orbits[0]), (0.5, orbits[1])])
    direct = 1.0 * sum(orbits[0].points[:, 0]) + 0.5 * sum(orbits[1].points[:, 0])
    assert O.functional(_xcoord) == pytest.approx(direct, abs=1e-15)
    assert O.size() == 3.0


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=6))
def test_orbit_average_within_range(rotation3_orbits, coeffs):
    orbits = rotation3_orbits[:len(coeffs)]
    O = OrbitSet(zip(coeffs, orbits))
    vals = np.concatenate([o.values(_xcoord) for o in orbits])
    assert vals.min() - 1e-12 <= O.average(_xcoord) <= vals.max() + 1e-12


def test_orbit_set_validation(rotation3_orbits):
    with pytest.raises(PreconditionError):
        OrbitSet([(0.0, rotation3_orbits[0])])
    with pytest.raises(EmptyCensusError):
        OrbitSet().average(_xcoord)


def test_deterministic_order_and_rows(rotation3):
    a = find_orbits(rotation3, 3, seeds=6)
    b = find_orbits(rotation3, 3, seeds=6)
    assert orbits_to_rows(a) == orbits_to_rows(b)
    periods = [o.period for o in a]
    assert periods == sorted(periods)


def test_boundary_orbits_carry_tangential_eigenvalue(twist_orbits):
    bnd = [o for o in twist_orbits if o.boundary is not None]
    assert bnd
    for o in bnd:
        assert o.tangential_eigenvalue is not None


def test_monodromy_matches_chained_finite_differences(twist, twist_orbits):
    o = [o for o in twist_orbits if o.period == 2 and o.boundary is None][0]
    J = np.eye(2)
    for i in range(2):
        J = _fd_jacobian(twist, o.charts[i], o.points[i:i + 1]) @ J
    np.testing.assert_allclose(monodromy(twist, o), J, atol=1e-6)


def test_invalid_period():
    with pytest.raises(PreconditionError):
        find_orbits(Identity(D), 0)
