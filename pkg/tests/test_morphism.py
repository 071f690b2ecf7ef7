import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdlab.catalog import (COUNTEREXAMPLES, Composition, Dilation, Rotation, Translation,
                           anisotropic_map, catalog_to_map, parse_catalog, parse_map,
                           projection_map, square_map)
from hdlab.heis_core import DimensionError, GroupMap, GroupPoint, HorizontalPath, ScalarField, koranyi_norm
from hdlab.morphism import (HEADER, bm_test_battery, check_conformal, check_contact,
                            check_harmonic, contact_residuals, distortion_check,
                            is_harmonic_morphism, per_path_statistics, sample_points,
                            vertical_bound)
from hdlab.paths import simulate_hbm, uniform_grid
from hdlab.rng import RngSpec, ordered_map
from hdlab.timechange import sigma_clock, simulate_pushforward

CATALOG_H1 = ["identity", "dilation:2", "dilation:0.3", "translation:1,-2,3",
              "rotation:0.9", "compose:rotation:0.4;dilation:1.5;translation:0.5,0.5,-1"]
CATALOG_H2 = ["dilation:1.7", "translation:1,2,3,4,5", "rotation:0.3,-1.2",
              "compose:translation:0,1,0,1,2;rotation:2,1"]


def strip_gradients(f: GroupMap) -> GroupMap:
    return GroupMap(f.n, f.p, [ScalarField(c.n, c.func, name=c.name) for c in f.components],
                    name=f.name + " (fd)")


@pytest.fixture(scope="module")
def pts1():
    return sample_points(1, 1000, 2.0, RngSpec(1))


@pytest.fixture(scope="module")
def pts2():
    return sample_points(2, 1000, 2.0, RngSpec(2))


def test_sample_points_in_ball(pts2):
    assert pts2.shape == (1000, 5)
    assert np.all(koranyi_norm(pts2) < 2.0)
    assert np.array_equal(sample_points(2, 1000, 2.0, RngSpec(2)), pts2)


def test_harmonic_residuals(pts1):
    assert check_harmonic(parse_map("identity"), pts1).overall.max <= 1e-6
    assert check_harmonic(parse_map("dilation:3"), pts1).overall.max <= 1e-6
    sq = check_harmonic(square_map(), pts1)
    assert sq.per_component[0].max == pytest.approx(2.0, abs=1e-6)
    assert sq.per_component[0].mean == pytest.approx(2.0, abs=1e-6)


def test_conformal_factor(pts1, pts2):
    rot = check_conformal(parse_map("rotation:1.1"), pts1)
    np.testing.assert_allclose(rot.lam, 1.0, atol=1e-12)
    assert rot.residual.max <= 1e-6
    d = check_conformal(parse_map("dilation:1.8", 2), pts2)
    np.testing.assert_allclose(d.lam, 1.8 ** 2, rtol=1e-12)
    an = check_conformal(anisotropic_map(), pts1)
    assert an.off_diagonal.max <= 1e-12
    assert an.diagonal_spread.max == pytest.approx(3.0, abs=1e-12)
    assert an.residual.max == pytest.approx(1.5, abs=1e-12)


def test_contact_residuals(pts1, pts2):
    assert check_contact(parse_map("identity"), pts1).overall.max <= 1e-6
    assert check_contact(parse_map("dilation:2.5"), pts1).overall.max <= 1e-6
    res = contact_residuals(projection_map(), pts2)
    # X_2 h = 2 y_2 and Y_2 h = -2 x_2 are not matched by the z_1 part
    np.testing.assert_allclose(np.abs(res[:, 2]), 2 * np.abs(pts2[:, 3]), atol=1e-12)
    np.testing.assert_allclose(np.abs(res[:, 3]), 2 * np.abs(pts2[:, 2]), atol=1e-12)
    np.testing.assert_allclose(res[:, :2], 0, atol=1e-12)


@pytest.mark.parametrize("map_id", CATALOG_H1)
def test_catalog_h1_passes(map_id, pts1):
    f = parse_map(map_id, 1)
    rep = is_harmonic_morphism(f, pts1)
    assert rep.passed and rep.analytic
    assert max(rep.harmonic.overall.max, rep.conformal.residual.max, rep.contact.overall.max) <= 1e-6
    fd = is_harmonic_morphism(strip_gradients(f), pts1)
    assert fd.passed and not fd.analytic and fd.tolerances["contact"] == 1e-4


@pytest.mark.parametrize("map_id", CATALOG_H2)
def test_catalog_h2_passes(map_id, pts2):
    f = parse_map(map_id, 2)
    assert is_harmonic_morphism(f, pts2).passed
    assert is_harmonic_morphism(strip_gradients(f), pts2).passed


def test_counterexamples_fail_the_right_check(pts1, pts2):
    proj = is_harmonic_morphism(projection_map(), pts2)
    assert (proj.is_harmonic, proj.is_conformal, proj.is_contact) == (True, True, False)
    assert proj.contact.overall.max >= 0.1
    an = is_harmonic_morphism(anisotropic_map(), pts1)
    assert (an.is_harmonic, an.is_conformal, an.is_contact) == (True, False, True)
    sq = is_harmonic_morphism(square_map(), pts1)
    assert not sq.is_harmonic and not sq.passed


def test_rigidity_echo(pts1, pts2):
    verdicts = {}
    for map_id in CATALOG_H1 + CATALOG_H2 + list(COUNTEREXAMPLES):
        f = parse_map(map_id)
        verdicts[map_id] = is_harmonic_morphism(f, pts1 if f.n == 1 else pts2).passed
    assert {k for k, v in verdicts.items() if v} == set(CATALOG_H1 + CATALOG_H2)


def test_report_round_trip(pts1):
    rep = is_harmonic_morphism(anisotropic_map(), pts1, {"conformal": 2.0})
    d = rep.to_dict()
    assert d["verdicts"]["conformal"] and d["tolerances"]["conformal"] == 2.0
    assert d["conformal"]["lam_mean"] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        is_harmonic_morphism(anisotropic_map(), np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        is_harmonic_morphism(anisotropic_map(), np.zeros((3, 5)))


maps = st.one_of(
    st.floats(0.2, 4).map(Dilation),
    st.floats(-6.3, 6.3).map(lambda a: Rotation.from_angles([a])),
    st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)).map(
        lambda b: Translation(GroupPoint(b[:2], b[2]))),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(maps, min_size=1, max_size=5))
def test_composition_closure(parts):
    f = catalog_to_map(Composition(tuple(parts)), 1)
    pts = sample_points(1, 200, 2.0, RngSpec(3))
    rep = is_harmonic_morphism(f, pts)
    # residual scale grows with the conformal factor and translation size
    scale = max(1.0, float(np.max(rep.conformal.lam)))
    assert rep.harmonic.overall.max <= 1e-6 * scale
    assert rep.conformal.residual.max <= 1e-6 * scale
    assert rep.contact.overall.max <= 1e-6 * scale


@pytest.mark.parametrize("map_id", ["rotation:0.7,2.0", "compose:dilation:1.3;rotation:1,0.5"])
def test_clock_is_component_independent(map_id):
    f = parse_map(map_id, 2)
    path = simulate_hbm(np.array([0.3, 0.1, -0.2, 0.4, 0.5]), uniform_grid(1.0, 1e-3), RngSpec(5))
    base = sigma_clock(path, f).values
    for j in range(1, 2 * f.p):
        np.testing.assert_allclose(sigma_clock(path, f, component=j).values, base, rtol=1e-6)


# --- distortion ------------------------------------------------------------------

def test_distortion_values(pts1, pts2):
    rot = distortion_check(Rotation.from_angles([0.4, 1.0]), pts2)
    np.testing.assert_allclose(rot.norm_power, 1.0, rtol=1e-12)
    assert rot.residual.max <= 1e-8
    for n, pts in ((1, pts1), (2, pts2)):
        d = distortion_check(Dilation(1.7), pts, n)
        np.testing.assert_allclose(d.jacobian, 1.7 ** (2 * n + 2), rtol=1e-12)
        assert d.residual.max <= 1e-8
    comp = parse_catalog("compose:translation:1,2,3;dilation:0.6;rotation:2")
    assert distortion_check(comp, pts1).residual.max <= 1e-8
    with pytest.raises(DimensionError):
        distortion_check(projection_map(), pts2)


def test_distortion_fd_route(pts1):
    f = strip_gradients(parse_map("compose:dilation:1.4;translation:1,0,2"))
    d = distortion_check(GroupMap(f.n, f.p, f.components), pts1)
    assert d.residual.max <= 1e-6


# --- Brownian motion battery ---------------------------------------------------------

def test_vertical_bound_formula():
    assert vertical_bound(1e-3, 200_000, 1) == pytest.approx(8 / math.pi * 1e-3 * math.log(2e5))


def test_battery_calibration_on_genuine_motion():
    grid = uniform_grid(1.0, 1e-3)

    def run(seed):
        return bm_test_battery(simulate_hbm(np.zeros(3), grid, RngSpec(seed), 200)).passed

    passes = sum(ordered_map(run, range(100), workers=4))
    assert passes >= 95


def test_battery_report_fields():
    W = simulate_hbm(np.zeros(5), uniform_grid(1.0, 1e-3), RngSpec(0), 50)
    rep = bm_test_battery(W)
    d = rep.to_dict()
    assert len(d["ks_pvalue"]) == 4 and len(d["qv_ratio"]) == 4
    assert d["header"] == HEADER and d["increments"] == 50_000
    assert rep.ks_level == pytest.approx(0.01 / 4)
    # W is exactly horizontal with left-point areas, so the identity is exact
    assert rep.vertical_residual <= 1e-12


def test_battery_rejects_dilation_without_time_change():
    z = simulate_pushforward(parse_map("dilation:2"), np.zeros(3), 1.0, 1e-3, 200, RngSpec(1),
                             time_change=False)
    rep = bm_test_battery(z)
    assert not rep.passed and not any(rep.qv_pass)
    np.testing.assert_allclose(rep.qv_ratio, 4.0, rtol=0.05)


def test_battery_rejects_constant_process():
    grid = uniform_grid(1.0, 1e-3)
    rep = bm_test_battery(HorizontalPath(grid, np.zeros((2, grid.size, 3))))
    assert not rep.passed and rep.qv_ratio == [0.0, 0.0]


def test_battery_input_checks():
    grid = uniform_grid(1.0, 1e-2)
    with pytest.raises(ValueError):
        bm_test_battery(HorizontalPath(grid, np.zeros((2, grid.size, 3))))
    g = np.concatenate([np.linspace(0, 1, 1001), [1.5]])
    with pytest.raises(ValueError):
        bm_test_battery(HorizontalPath(g, np.zeros((2, g.size, 3))), min_increments=10)


def test_per_path_statistics():
    W = simulate_hbm(np.zeros(3), uniform_grid(1.0, 1e-3), RngSpec(2), 3)
    rows = per_path_statistics(W)
    assert [r["path"] for r in rows] == [0, 1, 2]
    assert set(rows[0]) == {"path", "qv1", "qv2", "vertical_residual", "ds"}
    assert rows[1]["qv1"] == pytest.approx(np.sum(np.diff(W.points[1, :, 0]) ** 2))
