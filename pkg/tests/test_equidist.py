import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from symplab.equidist import (FLAT, TestDictionary, TestFunction, default_dictionary,
                              defect_sequence_experiment, equidistribution_defect, orbit_membership,
                              restrict_orbit_set)
from symplab.errors import EmptyCensusError, InvarianceViolationError, PreconditionError
from symplab.geometry import Disk, _smootherstep, cap_surface
from symplab.maps import RigidRotation, extend_boundary_rotation
from symplab.orbits import OrbitSet, find_orbits


def _xi_disk(u):
    # flattened coordinate as a function of r^2
    return _smootherstep(((1.0 - u) - FLAT) / (1.0 - 2.0 * FLAT))


@pytest.fixture(scope="module")
def dict_disk(disk):
    return default_dictionary(disk, 5)


def test_dictionary_layout(dict_disk, annulus):
    assert dict_disk.names == ["one", "radial-1", "angular-cos-1", "angular-sin-1", "radial-2"]
    assert len(default_dictionary(annulus, 10)) == 10
    assert dict_disk.locality_defect < 1e-10
    with pytest.raises(PreconditionError):
        default_dictionary(disk_ := Disk(1.0), 0)
    with pytest.raises(PreconditionError):
        TestDictionary(disk_, [TestFunction("x", lambda xy: xy[:, 0])])


def test_non_local_function_is_rejected(disk):
    fns = [TestFunction("one", None, 1.0), TestFunction("x", lambda xy: xy[:, 0])]
    with pytest.raises(PreconditionError):
        TestDictionary(disk, fns)
    d = TestDictionary(disk, fns, check=False)
    assert d.locality_defect > 0.5


def test_dictionary_averages_match_polar_quadrature(dict_disk):
    # omega = dx dy / pi, so the disk average of g(r^2) is int_0^1 g(u) du
    for k, name in enumerate(dict_disk.names):
        if name.startswith("radial-"):
            m = int(name.split("-")[1])
            oracle = quad(lambda u: math.cos(math.pi * m * _xi_disk(u)), 0, 1, limit=200)[0]
            assert dict_disk.averages[k] == pytest.approx(oracle, abs=1e-9)
        elif name.startswith("angular"):
            assert abs(dict_disk.averages[k]) < 1e-10
    assert dict_disk.averages[0] == 1.0


def test_constant_function_has_zero_defect(rotation3_orbits, dict_disk):
    O = OrbitSet.from_orbits(rotation3_orbits)
    rep = equidistribution_defect(O, dict_disk)
    assert rep.defects[0] == 0.0
    one = default_dictionary(dict_disk.surface, 1)
    assert equidistribution_defect(O, one).max_defect == 0.0


def test_rational_rotation_defect_matches_direct_sum(rotation3, rotation3_orbits, dict_disk):
    three = [o for o in rotation3_orbits if o.period == 3][:6]
    O = OrbitSet([(1.0 + i, o) for i, o in enumerate(three)])
    rep = equidistribution_defect(O, dict_disk)
    # oracle: rotate each seed point by hand and sum the native functions directly
    R = np.array([[math.cos(2 * math.pi / 3), -math.sin(2 * math.pi / 3)],
                  [math.sin(2 * math.pi / 3), math.cos(2 * math.pi / 3)]])
    for k, fn in enumerate(dict_disk.functions):
        num = den = 0.0
        for a, o in O:
            p = rotation3.surface.transition(o.charts[0], "disk", o.points[:1])[0]
            for _ in range(3):
                val = 1.0 if fn.constant is not None else float(fn.native(p[None])[0])
                num += a * val
                den += a
                p = R @ p
        assert rep.defects[k] == pytest.approx(abs(num / den - dict_disk.averages[k]), abs=1e-12)


@settings(max_examples=15)
@given(c=st.floats(0.01, 100.0))
def test_scaling_invariance(rotation3_orbits, dict_disk, c):
    O = OrbitSet.from_orbits(rotation3_orbits[:8])
    a = equidistribution_defect(O, dict_disk).defects
    b = equidistribution_defect(O.scaled(c), dict_disk).defects
    np.testing.assert_allclose(a, b, atol=1e-13)


@settings(max_examples=15)
@given(w=st.floats(0.0, 1.0))
def test_combination_is_convex(rotation3_orbits, dict_disk, w):
    O1 = OrbitSet.from_orbits(rotation3_orbits[:5])
    O2 = OrbitSet.from_orbits(rotation3_orbits[5:12])
    d1 = equidistribution_defect(O1, dict_disk).defects
    d2 = equidistribution_defect(O2, dict_disk).defects
    d = equidistribution_defect(O1.combine(O2, w), dict_disk).defects
    assert np.all(d <= w * d1 + (1 - w) * d2 + 1e-12)


@pytest.fixture(scope="module")
def capped_rotation():
    D = Disk(1.0)
    capped = cap_surface(D, 2.0, 0.1)
    ext = extend_boundary_rotation(RigidRotation(D, 2 * math.pi / 3), capped)
    return capped, ext, find_orbits(ext, 3, seeds=6)


def test_restriction_matches_brute_force_filter(capped_rotation):
    capped, ext, orbits = capped_rotation
    O = OrbitSet.from_orbits(orbits)
    kept = restrict_orbit_set(O, capped)
    inside = [o for o in orbits
              if all(capped.in_base(c, p[None])[0] for c, p in zip(o.charts, o.points))]
    assert [id(o) for o in kept.orbits] == [id(o) for o in inside]
    in_caps = [o for o in orbits if all(o is not p for p in inside)]
    # the cap centre is a fixed point of the extension and must be dropped
    assert any(o.period == 1 and capped.cap_index(o.charts[0]) is not None
               and np.allclose(o.points[0], 0, atol=1e-10) for o in in_caps)
    assert all(capped.cap_index(c) is None for o in kept.orbits for c in o.charts)


def test_straddling_orbit_is_reported(capped_rotation):
    capped, _, _ = capped_rotation
    fake = SimpleNamespace(period=2, charts=["disk", "cap-0"],
                           points=np.array([[0.1, 0.0], [0.0, 0.0]]))
    assert orbit_membership(fake, capped).tolist() == [True, False]
    with pytest.raises(InvarianceViolationError):
        restrict_orbit_set(OrbitSet([(1.0, fake)]), capped)


def test_empty_restriction(capped_rotation, dict_disk):
    capped, _, orbits = capped_rotation
    only_caps = [o for o in orbits if capped.cap_index(o.charts[0]) is not None]
    kept = restrict_orbit_set(OrbitSet.from_orbits(only_caps), capped)
    assert len(kept) == 0
    with pytest.raises(EmptyCensusError):
        equidistribution_defect(kept, dict_disk)


def test_dictionary_on_capped_surface_is_constant_on_caps(capped_rotation):
    capped, _, _ = capped_rotation
    d = default_dictionary(capped, 5)
    for k in range(len(d)):
        f = d.evaluator(k)
        on_l = f("collar-0", np.array([[0.0, 0.3]]))[0]
        np.testing.assert_allclose(f("cap-0", np.array([[0.0, 0.0], [0.2, 0.1]])), on_l, atol=1e-12)
    assert d.averages[0] == 1.0


def test_defect_sequence(rotation3, rotation3_orbits, dict_disk):
    reps = defect_sequence_experiment(rotation3, dict_disk, [1, 2, 3], orbits=rotation3_orbits)
    assert [r.level for r in reps] == [1, 2, 3]
    # no period-2 orbits: level 2 sees only the centre, like level 1
    np.testing.assert_allclose(reps[0].defects, reps[1].defects, atol=0)
    assert reps[2].max_defect < reps[0].max_defect
    rows = [(r.level, n, d) for r in reps for n, d in zip(r.names, r.defects)]
    assert len(rows) == 15


def test_defect_sequence_skips_empty_levels(dict_disk):
    phi = RigidRotation(Disk(1.0), 2 * math.pi / 3)
    orbits = [o for o in find_orbits(phi, 3, seeds=4) if o.period == 3]
    reps = defect_sequence_experiment(phi, dict_disk, [1, 3], orbits=orbits)
    assert reps[0].note == "skipped: no orbits" and len(reps[0].defects) == 0
    assert reps[1].note == "" and len(reps[1].defects) == 5
    with pytest.raises(PreconditionError):
        defect_sequence_experiment(phi, dict_disk, [])


def test_report_serialization(rotation3_orbits, dict_disk):
    d = equidistribution_defect(OrbitSet.from_orbits(rotation3_orbits), dict_disk, orbit_set_id="x").to_dict()
    assert d["orbit_set_id"] == "x" and len(d["defects"]) == 5
    assert d["max_defect"] == max(d["defects"])


def test_surface_mismatch(rotation3_orbits, dict_disk, annulus):
    with pytest.raises(PreconditionError):
        equidistribution_defect(OrbitSet.from_orbits(rotation3_orbits), dict_disk, surface=annulus)
