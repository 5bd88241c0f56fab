import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lakecause.preprocess import (
    PixelGrid,
    PreprocessConfig,
    PreprocessError,
    filter_outliers,
    hv_anomaly,
    interpolate_daily,
    mask_pixels,
    preprocess_lakes,
    read_raw_observations,
    rolling_median,
    water_fraction,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


# -- backscatter anomaly and water fraction ---------------------------------------


def test_hv_anomaly_values():
    assert hv_anomaly(-20.0, -12.0) == -8.0
    assert hv_anomaly(-15.5, -10.0) == -5.5
    assert hv_anomaly(-7.25, -7.25) == 0.0
    with pytest.raises(PreprocessError):
        hv_anomaly(float("nan"), 1.0)
    with pytest.raises(PreprocessError):
        hv_anomaly(0.0, float("inf"))


@given(finite, finite)
def test_hv_anomaly_antisymmetric(a, b):
    assert hv_anomaly(a, b) == -hv_anomaly(b, a)


def test_water_fraction_values():
    assert water_fraction(30, 120) == 25.0
    assert water_fraction(0, 17) == 0.0
    assert water_fraction(17, 17) == 100.0
    with pytest.raises(PreprocessError, match="no valid pixels"):
        water_fraction(0, 0)
    with pytest.raises(PreprocessError):
        water_fraction(5, 4)


@given(st.integers(1, 10_000), st.data())
def test_water_fraction_monotone(total, data):
    a = data.draw(st.integers(0, total))
    b = data.draw(st.integers(a, total))
    assert 0.0 <= water_fraction(a, total) <= water_fraction(b, total) <= 100.0


# -- pixel masking ---------------------------------------------------------------------


def _grid(value, sensor="sentinel2", shape=(2, 2), **bands):
    base = {"blue": 0.6, "green": 0.3, "red": 0.2, "swir": 0.0}
    if sensor == "sentinel2":
        base["cirrus"] = 0.0
    base.update(bands)
    return PixelGrid({k: np.full(shape, v) for k, v in base.items()}, sensor)


def test_mask_uniform_water():
    _, cloud, n_water, n_valid = mask_pixels(_grid(None))
    assert (n_water, n_valid) == (4, 4)
    assert not cloud.any()


def test_mask_all_cloud():
    _, cloud, n_water, n_valid = mask_pixels(_grid(None, swir=0.2))
    assert (n_water, n_valid) == (0, 0)
    assert cloud.all()


def test_mask_schema_errors():
    with pytest.raises(PreprocessError):
        PixelGrid({"blue": np.zeros(2), "red": np.zeros(2), "swir": np.zeros(2)}, "sentinel2")
    with pytest.raises(PreprocessError):
        PixelGrid({"blue": np.zeros(2), "red": np.zeros(2), "swir": np.zeros(2), "cirrus": np.zeros(2)}, "landsat8")
    with pytest.raises(PreprocessError):
        PixelGrid({"blue": np.zeros(2), "red": np.zeros(3), "swir": np.zeros(2)}, "landsat8")
    with pytest.raises(PreprocessError):
        mask_pixels(_grid(None, shape=(0, 3)))


def naive_mask_counts(grid, cfg):
    b = grid.bands
    rows, cols = grid.shape
    n_water = n_valid = 0
    for i in range(rows):
        for j in range(cols):
            cloudy = b["swir"][i, j] > cfg.cloud_swir_threshold
            if grid.sensor == "sentinel2" and b["cirrus"][i, j] > cfg.cloud_cirrus_threshold:
                cloudy = True
            s = b["blue"][i, j] + b["red"][i, j]
            if cloudy or s == 0:
                continue
            n_valid += 1
            ndwi = (b["blue"][i, j] - b["red"][i, j]) / s
            limit = cfg.ndwi_threshold_s2 if grid.sensor == "sentinel2" else cfg.ndwi_threshold_l8
            if ndwi > limit:
                n_water += 1
    return n_water, n_valid


def _random_grid(rng, sensor, shape):
    bands = {k: rng.uniform(0, 1, shape) for k in ("blue", "green", "red")}
    bands["swir"] = rng.uniform(0, 0.2, shape)
    if sensor == "sentinel2":
        bands["cirrus"] = rng.uniform(0, 0.15, shape)
    # a few undefined NDWI pixels
    bands["blue"][0, :2] = 0.0
    bands["red"][0, :2] = 0.0
    return PixelGrid(bands, sensor)


@pytest.mark.parametrize("sensor", ["sentinel2", "landsat8"])
def test_mask_matches_pixel_loop_16x16(sensor):
    cfg = PreprocessConfig()
    grid = _random_grid(np.random.default_rng(42), sensor, (16, 16))
    _, _, n_water, n_valid = mask_pixels(grid, cfg)
    assert (n_water, n_valid) == naive_mask_counts(grid, cfg)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 9), cols=st.integers(2, 9), sensor=st.sampled_from(["sentinel2", "landsat8"]))
def test_mask_oracle_property(seed, rows, cols, sensor):
    cfg = PreprocessConfig()
    grid = _random_grid(np.random.default_rng(seed), sensor, (rows, cols))
    assert mask_pixels(grid, cfg)[2:] == naive_mask_counts(grid, cfg)


# -- interpolation ---------------------------------------------------------------------


def test_interpolate_linear_and_constant():
    np.testing.assert_array_equal(interpolate_daily([(1, 0.0), (365, 364.0)]), np.arange(365.0))
    np.testing.assert_array_equal(interpolate_daily([(100, 5.0)]), np.full(365, 5.0))
    with pytest.raises(PreprocessError, match="no observations"):
        interpolate_daily([])
    with pytest.raises(PreprocessError):
        interpolate_daily([(5, 1.0), (5, 2.0)])


def naive_interpolate(sparse):
    out = []
    for day in range(1, 366):
        if day <= sparse[0][0]:
            out.append(sparse[0][1])
        elif day >= sparse[-1][0]:
            out.append(sparse[-1][1])
        else:
            for (d0, v0), (d1, v1) in zip(sparse, sparse[1:]):
                if d0 <= day <= d1:
                    out.append(v0 + (v1 - v0) * (day - d0) / (d1 - d0))
                    break
    return np.array(out)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 365), min_size=1, max_size=40, unique=True), st.integers(0, 2**31))
def test_interpolate_matches_two_point_oracle(days, seed):
    days = sorted(days)
    values = np.random.default_rng(seed).normal(0, 10, len(days))
    sparse = list(zip(days, values))
    dense = interpolate_daily(sparse)
    np.testing.assert_allclose(dense, naive_interpolate(sparse), rtol=0, atol=1e-9)
    # observed days are reproduced exactly
    np.testing.assert_array_equal(dense[np.array(days) - 1], values)


# -- rolling median --------------------------------------------------------------------


def naive_rolling_median(x, w):
    out = []
    for t in range(len(x)):
        lo, hi = max(0, t - w // 2), min(len(x) - 1, t + (w + 1) // 2 - 1)
        out.append(statistics.median(x[lo : hi + 1]))
    return np.array(out)


def test_rolling_median_constant_and_even_window():
    np.testing.assert_array_equal(rolling_median(np.full(365, 3.5), 12), np.full(365, 3.5))
    x = np.zeros(365)
    x[100:112] = np.arange(1, 13)
    # day index 106 covers indices 100..111 with a centred width-12 window
    assert rolling_median(x, 12)[106] == 6.5


def test_rolling_median_spike():
    x = np.zeros(365)
    x[180] = 100.0
    out = rolling_median(x, 12)
    np.testing.assert_array_equal(out, naive_rolling_median(x, 12))
    assert out[180] == 0.0 and not out.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30), st.floats(-100, 100))
def test_rolling_median_oracle_and_equivariance(seed, w, c):
    x = np.random.default_rng(seed).normal(size=365)
    out = rolling_median(x, w)
    np.testing.assert_allclose(out, naive_rolling_median(x.tolist(), w), atol=1e-12)
    np.testing.assert_allclose(rolling_median(x + c, w), out + c, atol=1e-9)
    const = np.full(365, c)
    np.testing.assert_array_equal(rolling_median(rolling_median(const, w), w), const)


# -- outlier filter --------------------------------------------------------------------


def naive_filter(series, cfg):
    kept = [o for o in series if o[2] is None or o[2] <= cfg.zenith_max_deg]
    if len(kept) < 4:
        return kept
    out = []
    for i, obs in enumerate(kept):
        nb = [v for j, (_, v, _) in enumerate(kept) if j != i and abs(j - i) <= 3]
        med = statistics.median(nb)
        mad = max(statistics.median([abs(v - med) for v in nb]), 1e-6)
        if abs(obs[1] - med) <= cfg.spike_mad_factor * mad:
            out.append(obs)
    return out


def test_filter_zenith_cutoff():
    assert filter_outliers([(d, 1.0, 80.0) for d in range(1, 20)]) == []


def test_filter_removes_spike_keeps_rest():
    series = [(d, float(d), 40.0) for d in range(1, 10)]
    series[4] = (5, 100.0, 40.0)
    out = filter_outliers(series)
    assert out == naive_filter(series, PreprocessConfig())
    assert [d for d, _, _ in out] == [1, 2, 3, 4, 6, 7, 8, 9]


def test_filter_identical_values_unchanged():
    series = [(d, 2.5, 10.0) for d in range(1, 30)]
    assert filter_outliers(series) == series


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 40))
def test_filter_matches_rule_oracle(seed, n):
    rng = np.random.default_rng(seed)
    series = [(d + 1, float(v), float(z)) for d, (v, z) in enumerate(zip(rng.standard_t(2, n), rng.uniform(40, 80, n)))]
    assert filter_outliers(series) == naive_filter(series, PreprocessConfig())


# -- config and lake assembly ----------------------------------------------------------


def test_config_validation():
    with pytest.raises(PreprocessError):
        PreprocessConfig(median_window_days=0)
    with pytest.raises(PreprocessError):
        PreprocessConfig(ndwi_threshold_s2=-0.1)
    with pytest.raises(PreprocessError):
        PreprocessConfig(order="sideways")


META = {"region": "SW", "year": "2019", "label": "slow_drainage", "area_m2": "1e5", "elevation_m": "1000"}
NAMES = ("hv_anom", "s2_water", "ls_water", "s2_zenith", "ls_zenith", "t2m", "r2", "sp", "sst")


def test_preprocess_lakes_dense_and_drops_empty():
    raw = {
        "A": {name: [(10, 1.0, 30.0), (200, 3.0, 30.0)] for name in NAMES},
        "B": {name: [(10, 1.0, 85.0)] for name in NAMES},  # nothing survives the zenith cut
    }
    ds, dropped = preprocess_lakes(raw, {"A": META, "B": META})
    assert dropped == ["B"]
    assert len(ds) == 1 and ds[0].is_dense
    # interpolation then median: interior of a straight segment stays on the line
    col = ds[0].column("sst")
    assert col[0] == 1.0 and col[-1] == 3.0


def test_median_first_order():
    cfg = PreprocessConfig(order="median_first", median_window_days=3)
    raw = {"A": {name: [(1, 0.0, None), (2, 9.0, None), (3, 0.0, None), (10, 0.0, None)] for name in NAMES}}
    ds, _ = preprocess_lakes(raw, {"A": META}, cfg)
    assert ds[0].is_dense


def test_read_raw_observations(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("lake_id,day,variable,value,zenith_deg\nA,3,t2m,270.5,\nA,1,t2m,269.0,55\nA,366,t2m,1,\n")
    raw = read_raw_observations(path)
    assert raw["A"]["t2m"] == [(3, 270.5, None), (1, 269.0, 55.0)]
