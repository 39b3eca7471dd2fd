import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from sfsda.datasets import TwoDomainDataset
from sfsda.harness import pipeline_active_set
from sfsda.inference import (
    LineParametrization,
    NumericalDegeneracyError,
    build_eta,
    decompose_line,
    divide_and_conquer,
    infer_feature,
    infer_feature_oc,
    select_features,
    sfs_da,
    sfs_da_oc,
    truncated_two_sided_p,
)
from sfsda.intervals import TruncationRegion
from sfsda.sparse_regression import PenaltyConfig

from conftest import small_dataset


def std_line(z_obs, sigma=1.0):
    return LineParametrization(np.zeros(1), np.ones(1), sigma, z_obs, np.ones(1))


def test_eta_has_zero_source_block():
    ds = small_dataset(seed=1)
    eta = build_eta(ds, (0, 2), 2)
    assert np.all(eta[: ds.n_source] == 0.0)


def test_eta_single_unit_column():
    ds = small_dataset(seed=1)
    x = ds.target_features[:, 1] / np.linalg.norm(ds.target_features[:, 1])
    xt = ds.target_features.copy()
    xt[:, 1] = x
    ds = TwoDomainDataset(ds.source_features, ds.source_response, xt, ds.target_response, ds.source_cov, ds.target_cov)
    eta = build_eta(ds, (1,), 1)
    np.testing.assert_allclose(eta[ds.n_source :], x, atol=1e-14)
    assert eta @ ds.stacked_response == pytest.approx(x @ ds.target_response, abs=1e-12)


def test_statistic_matches_least_squares():
    ds = small_dataset(seed=4, n_t=12, p=4, beta_t=0.5)
    active = (0, 1, 3)
    coef = np.linalg.lstsq(ds.target_features[:, active], ds.target_response, rcond=None)[0]
    for k, j in enumerate(active):
        assert build_eta(ds, active, j) @ ds.stacked_response == pytest.approx(coef[k], abs=1e-10)


def test_eta_errors():
    ds = small_dataset(seed=1)
    with pytest.raises(ValueError):
        build_eta(ds, (0, 1), 2)
    xt = np.column_stack([ds.target_features[:, 0]] * 3)
    bad = TwoDomainDataset(ds.source_features, ds.source_response, xt, ds.target_response, ds.source_cov, ds.target_cov)
    with pytest.raises(np.linalg.LinAlgError):
        build_eta(bad, (0, 1), 0)


@pytest.mark.parametrize("noise_sd", [1.0, 0.3])
def test_line_invariants(noise_sd):
    ds = small_dataset(seed=2, noise_sd=noise_sd)
    eta = build_eta(ds, (0, 1, 2), 1)
    line = decompose_line(ds, eta)
    assert eta @ line.direction == pytest.approx(1.0, abs=1e-10)
    assert eta @ line.anchor == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(line.at(line.observed_statistic), ds.stacked_response, atol=1e-10)
    assert line.statistic_sd**2 == pytest.approx(eta @ ds.stacked_cov @ eta, rel=1e-12)
    if noise_sd == 1.0:
        np.testing.assert_allclose(line.direction, eta / (eta @ eta), atol=1e-14)
        assert line.statistic_sd == pytest.approx(np.linalg.norm(eta), rel=1e-12)


def test_degenerate_variance():
    ds = small_dataset()
    with pytest.raises(NumericalDegeneracyError):
        decompose_line(ds, np.zeros(ds.n_source + ds.n_target))


def test_p_whole_line_at_zero_is_one():
    assert truncated_two_sided_p(std_line(0.0), TruncationRegion.whole(-20, 20)) == 1.0


def test_p_whole_line_matches_normal():
    assert truncated_two_sided_p(std_line(1.959964), TruncationRegion.whole(-20, 20)) == pytest.approx(0.05, abs=1e-6)
    assert truncated_two_sided_p(std_line(3.0, 2.0), TruncationRegion.whole(-40, 40)) == pytest.approx(
        2 * norm.sf(1.5), rel=1e-12
    )


def test_p_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    draws = rng.standard_normal(10_000_000)
    kept = draws[(draws >= 1) & (draws <= 3)]
    hits = np.mean(np.abs(kept) >= 2)
    se = math.sqrt(hits * (1 - hits) / kept.size)
    p = truncated_two_sided_p(std_line(2.0), TruncationRegion.whole(1, 3))
    assert abs(p - hits) <= 3 * se


def test_p_far_tail_is_finite():
    # region deep in the right tail: naive differences of CDFs would give 0/0
    p = truncated_two_sided_p(std_line(31.0), TruncationRegion(((30.0, 32.0),)))
    expected = math.exp(norm.logsf(31) - norm.logsf(30) + math.log1p(-math.exp(norm.logsf(32) - norm.logsf(31)))) / (
        1 - math.exp(norm.logsf(32) - norm.logsf(30))
    )
    assert p == pytest.approx(expected, rel=1e-9)


def test_p_degenerate_region():
    with pytest.raises(NumericalDegeneracyError):
        truncated_two_sided_p(std_line(50.0), TruncationRegion(((50.0, 50.0 + 1e-9),)))
    with pytest.raises(ValueError):
        truncated_two_sided_p(std_line(0.0), TruncationRegion())


@settings(max_examples=100)
@given(
    st.lists(st.tuples(st.floats(-8, 8), st.floats(0.01, 4)), min_size=1, max_size=5),
    st.floats(0, 8),
    st.floats(0, 3),
)
def test_p_monotone_in_statistic(pieces, z, dz):
    region = TruncationRegion.from_intervals([(lo, lo + w) for lo, w in pieces])
    p1 = truncated_two_sided_p(std_line(z), region)
    p2 = truncated_two_sided_p(std_line(z + dz), region)
    assert 0.0 <= p2 <= p1 + 1e-12 <= 1.0 + 1e-12


def _instance(seed, lam=2.0, gam=0.0, beta_t=0.5):
    ds = small_dataset(seed=seed, beta_t=beta_t)
    penalty = PenaltyConfig(lam, gam)
    active = select_features(ds, penalty).active_set
    return ds, penalty, active


def _selected_instances(count, **kw):
    out, seed = [], 0
    while len(out) < count:
        ds, penalty, active = _instance(seed, **kw)
        if active:
            out.append((ds, penalty, active))
        seed += 1
    return out


@pytest.mark.parametrize("gam", [0.0, 1.0])
@pytest.mark.parametrize("case", range(3))
def test_region_sweep_contract(case, gam):
    ds, penalty, active = _selected_instances(3, gam=gam)[case]
    line = decompose_line(ds, build_eta(ds, active, active[0]))
    records, region = divide_and_conquer(ds, line, penalty, active)
    z_min, z_max = line.z_bounds
    delta = line.nudge
    assert region.contains(line.observed_statistic, tol=10 * delta)
    assert records[0].interval[0] == z_min
    assert records[-1].interval[1] >= z_max - delta
    for a, b in zip(records, records[1:]):
        assert abs(b.interval[0] - a.interval[1]) <= 2 * delta
    assert all(lo < hi for lo, hi in region)
    assert z_min <= region.intervals[0][0] and region.intervals[-1][1] <= z_max


@pytest.mark.parametrize("gam", [0.0, 1.0])
def test_region_against_pipeline_grid(gam):
    ds, penalty, active = _selected_instances(1, gam=gam)[0]
    line = decompose_line(ds, build_eta(ds, active, active[-1]))
    _, region = divide_and_conquer(ds, line, penalty, active)
    z_min, z_max = line.z_bounds
    ends = np.array([v for iv in region for v in iv])
    for z in np.linspace(z_min, z_max, 301):
        if np.min(np.abs(ends - z)) < 1e-4:
            continue
        assert region.contains(z) == (pipeline_active_set(ds, line.at(z), penalty) == active)


def test_oc_region_nested_in_full_region():
    for ds, penalty, active in _selected_instances(4):
        for j in active:
            full = infer_feature(ds, penalty, active, j)
            oc = infer_feature_oc(ds, penalty, active, j)
            assert oc.region.intersect(full.region).length == pytest.approx(oc.region.length, abs=1e-9)


def test_reports_and_determinism():
    ds, penalty, active = _selected_instances(1, gam=1.0)[0]
    first, second = sfs_da(ds, penalty), sfs_da(ds, penalty)
    assert [r.feature for r in first] == list(active)
    for a, b in zip(first, second):
        assert a.p_value == b.p_value and a.region == b.region
        assert 0.0 <= a.p_value <= 1.0
    assert [r.feature for r in sfs_da_oc(ds, penalty)] == list(active)


def test_empty_selection_gives_empty_report():
    ds = small_dataset(seed=0)
    assert sfs_da(ds, PenaltyConfig(1e6)) == []
