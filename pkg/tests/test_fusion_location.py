import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from echo_model import SPEED_OF_LIGHT, EchoSymbolMatrix, OfdmConfig, Scenario, noiseless_echo, synthesize_all
from fusion_location import (Lattice, LatticeParams, SensingRegion, closest_approach_point,
                             conjugate_lag_products, cosine_product_weights, estimate_location,
                             evaluate_location_lattice, lattice_weight, lattice_weights, location_lattice,
                             reconstruct_G, rough_location, rough_location_pair, search_location, select_best)
from geometry import IllConditionedGeometryError, InfeasibleGeometryError
from harness import default_bs_layout
from single_bs import BsReport, SingleBsProcessor, compress_to_E, compress_to_F

LATTICE = LatticeParams(5.0, 0.1)


def scenario_for(bs, target, velocity=(0.0, 0.0), **kwargs):
    return Scenario(np.asarray(bs, dtype=float), np.asarray(target, dtype=float), np.asarray(velocity, dtype=float),
                    **kwargs)


class TestLattice:
    def test_center_is_a_node(self):
        lattice = Lattice(np.array([5.0, 5.0]), 5.0, 0.1)
        assert lattice.nodes_per_axis == 101
        assert len(lattice) == 101 ** 2
        np.testing.assert_allclose(lattice.points[len(lattice) // 2], [5.0, 5.0], atol=1e-12)

    def test_x_index_major(self):
        points = Lattice(np.array([0.0, 0.0]), 1.0, 1.0).points
        np.testing.assert_allclose(points[:4], [[-1, -1], [-1, 0], [-1, 1], [0, -1]])

    def test_params(self):
        with pytest.raises(ValueError):
            LatticeParams(1.0, 0.0)
        with pytest.raises(ValueError):
            LatticeParams(0.05, 0.1)
        bigger = LATTICE.enlarged()
        assert (bigger.half_extent, bigger.spacing) == (10.0, 0.1)
        assert LATTICE.around((1.0, 2.0)).nodes_per_axis == 101

    def test_region_pick(self, region):
        inside, outside = np.array([10.0, 0.0]), np.array([300.0, 0.0])
        np.testing.assert_array_equal(region.pick([outside, inside]), inside)
        assert region.contains(inside) and not region.contains(outside)
        with pytest.raises(ValueError):
            region.pick([])
        with pytest.raises(ValueError):
            SensingRegion((0.0, 0.0), 0.0)


class TestReconstructG:
    def test_matches_direct_sum(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(17) + 1j * rng.standard_normal(17)
        expected = [np.mean(x[:17 - k] * np.conj(x[k:])) for k in range(1, 17)]
        np.testing.assert_allclose(conjugate_lag_products(x), expected, rtol=1e-12)

    def test_noiseless_lag_phase(self, table_cfg):
        theta = 2 * math.pi * table_cfg.subcarrier_spacing * 2 * 180.0 / SPEED_OF_LIGHT
        u = 0.8 * np.exp(2.0j)
        e = 256 * u * np.exp(-1j * np.arange(128) * theta)
        g = reconstruct_G(e, bs_index=1)
        assert g.bs_index == 1 and len(g.entries) == 127
        k = np.arange(1, 128)
        np.testing.assert_allclose(g.entries, (256 * 0.8) ** 2 * np.exp(1j * k * theta), rtol=1e-9)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            conjugate_lag_products(np.ones(1))


class TestWeights:
    @given(steps=st.lists(st.floats(-3.0, 3.0), min_size=2, max_size=2))
    def test_cosine_products(self, steps):
        rng = np.random.default_rng(0)
        vectors = [rng.standard_normal(6) + 1j * rng.standard_normal(6) for _ in range(2)]
        k = np.arange(1, 7)
        expected = np.sum(np.real(vectors[0] * np.exp(-1j * k * steps[0]))
                          * np.real(vectors[1] * np.exp(-1j * k * steps[1])))
        got = cosine_product_weights(np.array([steps]), vectors)
        assert got[0] == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_chunking_is_transparent(self, monkeypatch):
        rng = np.random.default_rng(1)
        steps = rng.uniform(-1, 1, size=(50, 3))
        vectors = [rng.standard_normal(9) + 1j * rng.standard_normal(9) for _ in range(3)]
        whole = cosine_product_weights(steps, vectors)
        monkeypatch.setattr('fusion_location.WEIGHT_CHUNK_NODES', 7)
        np.testing.assert_allclose(cosine_product_weights(steps, vectors), whole, rtol=1e-12)

    def test_true_node_reaches_upper_bound(self, small_cfg, three_bs, make_reports):
        target = np.array([5.0, 5.0])
        reports = make_reports(small_cfg, scenario_for(three_bs, target))
        g = [reconstruct_G(r.e, r.bs_index) for r in reports]
        assert lattice_weight(target, reports, three_bs, small_cfg) == pytest.approx(64 ** 6 * 31, rel=1e-9)
        nearby = lattice_weights(target + np.array([[0.5, 0.0], [0.0, -0.5]]), g, three_bs, small_cfg)
        assert np.all(nearby < 64 ** 6 * 31)

    def test_report_count_checked(self, small_cfg, three_bs, make_reports):
        reports = make_reports(small_cfg, scenario_for(three_bs, (5.0, 5.0)))
        with pytest.raises(ValueError):
            search_location(reports[:2], three_bs, small_cfg, LATTICE)
        with pytest.raises(ValueError):
            lattice_weights([[0.0, 0.0]], [reconstruct_G(reports[0].e)], three_bs, small_cfg)


class TestSelectBest:
    def test_clear_maximum(self):
        lattice = Lattice(np.zeros(2), 1.0, 1.0)
        weights = np.zeros(9)
        weights[2] = 1.0
        assert select_best(weights, lattice) == 2

    def test_tie_goes_to_center(self):
        lattice = Lattice(np.zeros(2), 1.0, 1.0)
        assert select_best(np.ones(9), lattice) == 4

    def test_equidistant_tie_takes_lowest_index(self):
        lattice = Lattice(np.zeros(2), 1.0, 1.0)
        weights = np.zeros(9)
        weights[[1, 7]] = 3.0
        assert select_best(weights, lattice) == 1


class TestRoughLocation:
    def test_pair_intersections(self):
        points = rough_location_pair((0.0, 0.0), (10.0, 0.0), math.sqrt(50), math.sqrt(50))
        assert len(points) == 2
        np.testing.assert_allclose(sorted(p[1] for p in points), [-5.0, 5.0], atol=1e-9)
        for p in points:
            assert p[0] == pytest.approx(5.0)

    def test_pair_tangent(self):
        points = rough_location_pair((0.0, 0.0), (10.0, 0.0), 5.0, 5.0)
        assert len(points) == 1
        np.testing.assert_allclose(points[0], [5.0, 0.0], atol=1e-9)

    def test_pair_errors(self):
        with pytest.raises(InfeasibleGeometryError):
            rough_location_pair((0.0, 0.0), (10.0, 0.0), 1.0, 1.0)
        with pytest.raises(IllConditionedGeometryError):
            rough_location_pair((1.0, 1.0), (1.0, 1.0), 5.0, 5.0)

    def test_closest_approach(self):
        np.testing.assert_allclose(closest_approach_point((0.0, 0.0), (100.0, 0.0), 300.0, 50.0), [225.0, 0.0])
        np.testing.assert_allclose(closest_approach_point((0.0, 0.0), (200.0, 0.0), 50.0, 50.0), [100.0, 0.0])

    def test_two_bs_uses_region(self, region):
        bs = np.array([[205.0, 5.0], [5.0, 205.0]])
        target = np.array([7.0, 3.0])
        ranges = np.linalg.norm(bs - target, axis=1)
        np.testing.assert_allclose(rough_location(bs, ranges, region), target, atol=1e-6)

    def test_two_bs_non_intersecting_falls_back(self, region):
        bs = np.array([[0.0, 0.0], [20.0, 0.0]])
        np.testing.assert_allclose(rough_location(bs, [5.0, 5.0], region), [10.0, 0.0])

    def test_least_squares_exact(self, three_bs, region):
        target = np.array([3.0, 8.0])
        ranges = np.linalg.norm(three_bs - target, axis=1)
        np.testing.assert_allclose(rough_location(three_bs, ranges, region), target, atol=1e-8)

    def test_least_squares_perturbed(self, three_bs, region):
        target = np.array([3.0, 8.0])
        ranges = np.linalg.norm(three_bs - target, axis=1) + 1.0
        assert np.linalg.norm(rough_location(three_bs, ranges, region) - target) < 1.0

    def test_collinear_raises(self, region):
        bs = np.array([[0.0, 0.0], [100.0, 0.0], [200.0, 0.0]])
        with pytest.raises(IllConditionedGeometryError):
            rough_location(bs, [50.0, 60.0, 150.0], region)

    def test_input_checks(self, region):
        with pytest.raises(ValueError):
            rough_location([[0.0, 0.0]], [1.0], region)
        with pytest.raises(ValueError):
            rough_location([[0.0, 0.0], [1.0, 0.0]], [1.0], region)

    def test_collinear_lattice_falls_back_to_widest_pair(self, region, caplog):
        bs = np.array([[-200.0, 0.0], [0.0, 1e-13], [200.0, 0.0]])
        target = np.array([5.0, 20.0])
        ranges = np.linalg.norm(bs - target, axis=1)
        with caplog.at_level(logging.WARNING):
            lattice = location_lattice(bs, ranges, LATTICE, region)
        assert "falling back to BS pair (0, 2)" in caplog.text
        assert lattice.half_extent == 10.0
        np.testing.assert_allclose(lattice.center, target, atol=1e-6)


class TestLatticeSearch:
    def test_on_node_target_recovered_exactly(self, small_cfg, three_bs, make_reports):
        center = np.array([5.0, 5.0])
        target = center + np.array([0.3, -0.2])
        reports = make_reports(small_cfg, scenario_for(three_bs, target))
        estimate = estimate_location(reports, three_bs, small_cfg, LATTICE, center=center)
        np.testing.assert_allclose(estimate, target, atol=1e-9)

    def test_off_node_target_nearest_node(self, table_cfg, three_bs, make_reports):
        center = np.array([5.0, 5.0])
        node = center + np.array([-1.2, 0.7])
        reports = make_reports(table_cfg, scenario_for(three_bs, node + np.array([0.02, -0.03])))
        np.testing.assert_allclose(estimate_location(reports, three_bs, table_cfg, LATTICE, center=center), node,
                                   atol=1e-9)

    def test_channel_phase_does_not_matter(self, small_cfg, three_bs, make_reports):
        center = np.array([5.0, 5.0])
        scenario = scenario_for(three_bs, center + np.array([1.0, 1.0]))
        plain = search_location(make_reports(small_cfg, scenario), three_bs, small_cfg, LATTICE, center=center)
        rotated = search_location(make_reports(small_cfg, scenario, gains=np.exp(1j * np.array([0.3, 2.0, -1.0]))),
                                  three_bs, small_cfg, LATTICE, center=center)
        assert plain.best_index == rotated.best_index
        np.testing.assert_allclose(plain.weights, rotated.weights, rtol=1e-9)

    def test_rough_fix_then_lattice(self, small_cfg, three_bs, region, make_reports):
        target = np.array([8.3, 1.7])
        reports = make_reports(small_cfg, scenario_for(three_bs, target))
        np.testing.assert_allclose(estimate_location(reports, three_bs, small_cfg, LATTICE, region=region), target,
                                   atol=1e-6)

    def test_two_bs(self, small_cfg, region, make_reports):
        bs = np.array([[205.0, 5.0], [5.0, 205.0]])
        target = np.array([4.0, 6.0])
        reports = make_reports(small_cfg, scenario_for(bs, target))
        np.testing.assert_allclose(estimate_location(reports, bs, small_cfg, LATTICE, region=region), target,
                                   atol=1e-6)

    def test_noisy_echoes(self, table_cfg, grid, three_bs, region):
        processor = SingleBsProcessor(grid, table_cfg)
        for seed in range(3):
            target = np.array([2.0 + seed, 7.0 - seed])
            scenario = scenario_for(three_bs, target, velocity=(10.0, -20.0),
                                    channel_gains=np.exp(1j * np.array([0.1, 1.2, 2.3])), rng_seed=seed)
            reports = [processor.preprocess(b) for b in synthesize_all(table_cfg, scenario, snr_db=-5.0)]
            estimate = estimate_location(reports, three_bs, table_cfg, LATTICE, region=region)
            assert np.linalg.norm(estimate - target) < 1.0

    def test_weight_grid_files(self, small_cfg, three_bs, make_reports, tmp_path):
        center = np.array([5.0, 5.0])
        reports = make_reports(small_cfg, scenario_for(three_bs, center + np.array([0.4, 0.2])))
        search = evaluate_location_lattice(LatticeParams(1.0, 0.1).around(center), reports, three_bs, small_cfg)
        csv_path, png_path = search.save_weight_grid(tmp_path / 'grids' / 'location')

        n = search.lattice.nodes_per_axis
        np.testing.assert_allclose(np.loadtxt(csv_path, delimiter=','), search.weight_grid(), rtol=1e-8)
        pixels = np.asarray(Image.open(png_path))
        assert pixels.shape == (n, n)
        i, j = np.unravel_index(search.best_index, (n, n))
        assert pixels[n - 1 - j, i] == 255


SMALL_CFG = OfdmConfig(24e9, 32, 64, 32 * 727_343.75, 12.375e-6)
THREE_BS = default_bs_layout(3, (5.0, 5.0), 200.0)
CENTER = np.array([5.0, 5.0])


def noiseless_reports(target, gains=(1.0, 1.0, 1.0)):
    reports = []
    for w, bs in enumerate(THREE_BS):
        r = float(np.linalg.norm(bs - target))
        b = EchoSymbolMatrix(noiseless_echo(SMALL_CFG, r, 0.0, gains[w]), w)
        reports.append(BsReport(w, r, 0.0, compress_to_E(b, 0.0, SMALL_CFG), compress_to_F(b, r, SMALL_CFG)))
    return reports


class TestWeightProperties:
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_cosine_evenness(self, seed):
        rng = np.random.default_rng(seed)
        steps = rng.uniform(-2, 2, size=(4, 3))
        vectors = [rng.standard_normal(7) + 1j * rng.standard_normal(7) for _ in range(3)]
        np.testing.assert_allclose(cosine_product_weights(-steps, [np.conj(v) for v in vectors]),
                                   cosine_product_weights(steps, vectors), rtol=1e-9, atol=1e-9)

    @given(perm=st.permutations(range(3)))
    def test_bs_permutation_invariance(self, perm):
        reports = noiseless_reports(CENTER + np.array([0.6, -0.4]), gains=(1.0, 0.5j, -0.8))
        params = LatticeParams(1.0, 0.1)
        base = search_location(reports, THREE_BS, SMALL_CFG, params, center=CENTER)
        permuted = search_location([reports[i] for i in perm], THREE_BS[list(perm)], SMALL_CFG, params,
                                   center=CENTER)
        assert permuted.best_index == base.best_index
        np.testing.assert_allclose(permuted.weights, base.weights, rtol=1e-9)

    @given(scale=st.floats(1e-3, 1e3))
    def test_argmax_invariant_under_positive_scaling(self, scale):
        reports = noiseless_reports(CENTER + np.array([-0.3, 0.2]))
        params = LatticeParams(1.0, 0.1)
        base = search_location(reports, THREE_BS, SMALL_CFG, params, center=CENTER)
        scaled = [BsReport(r.bs_index, r.r_test, r.v_test, r.e * scale, r.f) for r in reports]
        assert search_location(scaled, THREE_BS, SMALL_CFG, params, center=CENTER).best_index == base.best_index

    @settings(max_examples=100)
    @given(r=st.floats(100.0, 300.0), v=st.floats(-40.0, 40.0), k=st.integers(1, 31))
    def test_g_entries_match_phase_oracle(self, r, v, k):
        e = compress_to_E(EchoSymbolMatrix(noiseless_echo(SMALL_CFG, r, v), 0), v, SMALL_CFG)
        theta = 2 * math.pi * SMALL_CFG.subcarrier_spacing * 2 * r / SPEED_OF_LIGHT
        expected = 64 ** 2 * complex(math.cos(k * theta), math.sin(k * theta))
        assert abs(reconstruct_G(e).entries[k - 1] - expected) <= 1e-9 * 64 ** 2

    @given(samples=st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=40))
    def test_conjugate_input_gives_conjugate_g(self, samples):
        e = np.array([complex(re, im) for re, im in samples])
        scale = max(1.0, float(np.max(np.abs(e))) ** 2)
        np.testing.assert_allclose(reconstruct_G(np.conj(e)).entries, np.conj(reconstruct_G(e).entries),
                                   rtol=1e-12, atol=1e-12 * scale)


def test_region_pick_outside_candidates(region, caplog):
    near, far = np.array([5.0, 80.0]), np.array([5.0, -120.0])
    assert not region.contains(near) and not region.contains(far)
    with caplog.at_level(logging.DEBUG, logger='fusion_location'):
        np.testing.assert_array_equal(region.pick([far, near]), near)
    assert "No candidate inside the sensing region" in caplog.text


def test_random_layouts_peak_at_nearest_node(small_cfg, make_reports):
    rng = np.random.default_rng(2024)
    spacing = 0.1
    params = LatticeParams(0.5, spacing)
    for _ in range(50):
        w = int(rng.integers(3, 5))
        angles = 2 * np.pi * np.arange(w) / w + rng.uniform(-0.35, 0.35, w) + rng.uniform(0, 2 * np.pi)
        radii = rng.uniform(120.0, 250.0, w)
        node = np.round(rng.uniform(-20.0, 20.0, 2) / spacing) * spacing
        bs = node + radii[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
        target = node + rng.uniform(-0.02, 0.02, 2)
        center = node + spacing * rng.integers(-3, 4, 2)
        reports = make_reports(small_cfg, scenario_for(bs, target))
        search = search_location(reports, bs, small_cfg, params, center=center)
        np.testing.assert_allclose(search.best_point, node, atol=1e-9)
