import numpy as np
import pytest

from hetnet_mro.network import (
    GridSpec,
    MACRO_PATHLOSS,
    PICO_PATHLOSS,
    compute_rsrp_map,
    coverage_areas,
    generate_shadow_field,
    make_cell,
    pathloss_dB,
    point_rsrp,
    read_rsrp_csv,
)
from hetnet_mro.scenarios import LINE_M1, LINE_M2, LINE_P1, race_example_matrices


def test_pathloss_reference_values():
    m = make_cell(0, "macro", (0, 0))
    p = make_cell(1, "pico", (0, 0))
    assert pathloss_dB(m, (1000.0, 0.0)) == pytest.approx(128.1, abs=1e-12)
    assert pathloss_dB(m, (0.0, 100.0)) == pytest.approx(90.5, abs=1e-12)
    assert pathloss_dB(p, (600.0, 800.0)) == pytest.approx(140.7, abs=1e-12)


def test_pathloss_clamped_at_one_meter():
    m = make_cell(0, "macro", (5, 5))
    assert pathloss_dB(m, (5.0, 5.0)) == pathloss_dB(m, (5.5, 5.0)) == MACRO_PATHLOSS(1.0)
    assert np.isfinite(PICO_PATHLOSS(0.0))


def test_rsrp_direct_evaluation():
    # tx 15 dBm at 100 m on the macro model, no shadowing
    cell = make_cell(0, "macro", (0, 0), tx_power=15.0)
    grid = GridSpec((100.0, 0.0), 1.0, 1, 1)
    rmap = compute_rsrp_map([cell], grid)
    assert rmap.rsrp[0, 0, 0] == pytest.approx(-75.5, abs=1e-12)


def test_rsrp_decomposition_is_exact(rng):
    cells = [make_cell(0, "macro", (0, 0)), make_cell(1, "pico", (120, 80))]
    grid = GridSpec((0.0, 0.0), 10.0, 30, 20)
    shadow = generate_shadow_field(grid, 6.0, 30.0, 3, n_cells=2)
    rmap = compute_rsrp_map(cells, grid, shadow)
    X, Y = grid.coordinates()
    for k, c in enumerate(cells):
        expected = c.tx_power_rsrp_ref - pathloss_dB(c, (X, Y)) + shadow.values[k]
        np.testing.assert_array_equal(rmap.rsrp[k], expected)


def test_shadow_free_rsrp_monotone_in_distance():
    cell = make_cell(0, "macro", (0, 0))
    grid = GridSpec((0.0, 0.0), 5.0, 60, 60)
    rmap = compute_rsrp_map([cell], grid)
    X, Y = grid.coordinates()
    d = np.hypot(X, Y).ravel()
    r = rmap.rsrp[0].ravel()[np.argsort(d, kind="stable")]
    assert np.all(np.diff(r) <= 1e-12)


def test_zero_sigma_gives_zero_field():
    grid = GridSpec((0.0, 0.0), 5.0, 40, 30)
    f = generate_shadow_field(grid, 0.0, 25.0, 1, n_cells=3)
    assert f.values.shape == (3, 30, 40)
    assert not f.values.any()


def test_shadow_field_deterministic_per_seed():
    grid = GridSpec((0.0, 0.0), 5.0, 50, 50)
    a = generate_shadow_field(grid, 8.0, 25.0, 7, n_cells=2)
    b = generate_shadow_field(grid, 8.0, 25.0, 7, n_cells=2)
    c = generate_shadow_field(grid, 8.0, 25.0, 8, n_cells=2)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_shadow_field_std_on_large_grid():
    grid = GridSpec((0.0, 0.0), 5.0, 200, 200)
    f = generate_shadow_field(grid, 8.0, 25.0, 11, n_cells=2)
    assert 7.2 <= f.values[0].std() <= 8.8
    # cells get independent realizations
    assert abs(np.corrcoef(f.values[0].ravel(), f.values[1].ravel())[0, 1]) < 0.1


def _lag_correlation(v, lag):
    a, b = v[:, :-lag].ravel(), v[:, lag:].ravel()
    return np.mean(a * b) / np.sqrt(np.mean(a * a) * np.mean(b * b))


def test_shadow_autocorrelation_matches_exponential_model():
    # averaged over seeds: at lag d the correlation is exp(-d / 25)
    grid = GridSpec((0.0, 0.0), 5.0, 200, 200)
    est = {lag: [] for lag in (1, 5, 10)}
    for seed in range(8):
        v = generate_shadow_field(grid, 8.0, 25.0, seed).values[0]
        v = v - v.mean()
        for lag in est:
            est[lag].append(_lag_correlation(v, lag))
    for lag, vals in est.items():
        assert np.mean(vals) == pytest.approx(np.exp(-lag * 5.0 / 25.0), abs=0.06)


def test_shadow_field_rejects_bad_parameters():
    grid = GridSpec((0.0, 0.0), 5.0, 10, 10)
    with pytest.raises(ValueError):
        generate_shadow_field(grid, 8.0, 0.0, 1)
    with pytest.raises(ValueError):
        generate_shadow_field(grid, -1.0, 25.0, 1)


def test_shadow_sample_matches_grid_nodes():
    grid = GridSpec((10.0, -5.0), 5.0, 20, 12)
    f = generate_shadow_field(grid, 8.0, 25.0, 2, n_cells=2)
    X, Y = grid.coordinates()
    np.testing.assert_allclose(f.sample(X, Y), f.values, atol=1e-12)
    # midpoint of two nodes is their average
    mid = f.sample(np.array([12.5]), np.array([-5.0]))[:, 0]
    np.testing.assert_allclose(mid, 0.5 * (f.values[:, 0, 0] + f.values[:, 0, 1]))


def test_point_rsrp_agrees_with_map(line, line_map):
    X, Y = line.grid.coordinates()
    np.testing.assert_allclose(point_rsrp(line.cells, X, Y), line_map.rsrp, atol=1e-12)


def test_line_pico_wins_only_near_itself(line, line_map):
    best = line_map.best_server()[0]
    x = line.grid.axes()[0]
    wins = x[best == LINE_P1]
    assert wins.size > 0
    # one bounded interval around the pico
    assert np.all(np.diff(wins) == 1.0)
    assert wins.min() > 100.0 and wins.max() < 900.0
    assert wins.min() < 380.0 < wins.max()
    assert best[0] == LINE_M1 and best[-1] == LINE_M2


def test_best_server_invariant_under_common_offset(street_map):
    from hetnet_mro.network import RsrpMap

    shifted = RsrpMap(street_map.grid, street_map.cells, street_map.rsrp + 13.25)
    assert np.array_equal(shifted.best_server(), street_map.best_server())


def test_single_cell_covers_everything():
    grid = GridSpec((0.0, 0.0), 10.0, 15, 9)
    rmap = compute_rsrp_map([make_cell(0, "macro", (40, 40))], grid)
    cov = coverage_areas(rmap)
    assert cov.area_m2[0] == pytest.approx(15 * 9 * 100.0)


def test_symmetric_cells_split_area_evenly():
    grid = GridSpec((0.0, 0.0), 10.0, 40, 11)
    cells = [make_cell(0, "macro", (0, 50)), make_cell(1, "macro", (390, 50))]
    cov = coverage_areas(compute_rsrp_map(cells, grid))
    assert abs(cov.area_m2[0] - cov.area_m2[1]) <= grid.ny * grid.point_area


def test_pico_bias_grows_pico_area(line_map):
    b = 5.0
    B = race_example_matrices(b)["global_retaining"]
    before = coverage_areas(line_map).area_m2[LINE_P1]
    after = coverage_areas(line_map, B, H_g=1.0).area_m2[LINE_P1]
    assert after > before


def test_coverage_sums_to_grid_when_all_stable(line_map, race_examples):
    cov = coverage_areas(line_map, race_examples["no_race"], H_g=1.0)
    assert cov.unstable_points == 0
    assert cov.total_area == pytest.approx(line_map.grid.n_points * line_map.grid.point_area)


def test_race_points_flagged_unstable(line_map, race_examples):
    cov = coverage_areas(line_map, race_examples["race"], H_g=1.0)
    assert cov.unstable_points > 0
    assert (cov.server == -1).sum() == cov.unstable_points


def test_rsrp_csv_round_trip(line, line_map):
    text = line_map.to_csv()
    assert text.splitlines()[0] == "x,y,cell_0,cell_1,cell_2"
    back = read_rsrp_csv(text, line.grid, line.cells)
    assert np.array_equal(back.rsrp, line_map.rsrp)


def test_rsrp_csv_shape_mismatch(line, line_map):
    with pytest.raises(ValueError, match="cell columns"):
        read_rsrp_csv(line_map.to_csv(), line.grid, line.cells[:2])


def test_macro_pico_cell_labels():
    assert make_cell(3, "pico", (0, 0)).label == "P3"
    assert make_cell(1, "macro", (0, 0), name="M1").label == "M1"
    assert LINE_M2 == 2
