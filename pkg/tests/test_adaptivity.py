import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from conjac.adaptivity import (AdaptivityState, RegionMap, active_durations, element_stretch_rates,
                               liveliness_metric, region_metrics, regions_by_nearest, update_partition)


def test_metric_of_known_tensor():
    sdot = np.array([[1.0, -2.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, -3.0]])
    assert_allclose(liveliness_metric(sdot), 1.0)


def test_volume_weighting():
    sdot = np.stack([np.full((3, 3), 1.0), np.full((3, 3), 4.0)])
    assert_allclose(liveliness_metric(sdot), 2.5)
    assert_allclose(liveliness_metric(sdot, volumes=[3.0, 1.0]), 1.75)


def test_empty_region_scores_zero():
    assert liveliness_metric(np.zeros((0, 3, 3))) == 0.0


def test_region_metrics_ignore_cut_elements(bar):
    rep = [0, bar.n_nodes - 1]
    regions = regions_by_nearest(bar, rep)
    sdot = np.ones((bar.n_elements, 3, 3))
    sdot[regions.element_to_region == 1] *= 5.0
    m = region_metrics(regions, sdot, bar.rest_volume)
    assert_allclose(m, [1.0, 5.0])
    active = regions.element_to_region == 0
    assert_allclose(region_metrics(regions, sdot, bar.rest_volume, active=active), [1.0, 0.0])


def test_regions_cover_all_elements(bar):
    regions = regions_by_nearest(bar, [0, 7, bar.n_nodes - 1])
    assert regions.element_to_region.shape == (bar.n_elements,)
    assert_allclose(regions.region_volumes.sum(), bar.rest_volume.sum())


def test_bad_labels_rejected(bar):
    with pytest.raises(ValueError):
        RegionMap.from_labels(bar, [0], np.zeros(bar.n_elements - 1, dtype=int))
    with pytest.raises(ValueError):
        RegionMap.from_labels(bar, [0], np.ones(bar.n_elements, dtype=int))


def test_rigid_motion_has_zero_liveliness(bar, rng):
    W = rng.normal(size=(3, 3))
    W = W - W.T
    x = bar.rest_positions.ravel()
    v = (bar.rest_positions @ W.T + [0.1, 0.2, -0.3]).ravel()
    sdot = element_stretch_rates(bar, x, v)
    assert np.abs(sdot).max() < 1e-10


def test_window_average_and_threshold():
    state = AdaptivityState(2, threshold=1.0, window=4)
    on, off = update_partition(state, [5.0, 0.0])
    assert list(on) == [0] and not off.size
    for _ in range(2):
        update_partition(state, [0.0, 0.0])
    assert state.active_flags[0]          # mean 5/3 still above 1
    on, off = update_partition(state, [0.0, 0.0])
    assert_allclose(state.windowed(), [1.25, 0.0])
    on, off = update_partition(state, [0.0, 0.0])   # 5 leaves the window
    assert list(off) == [0]


def test_forced_off_regions_stay_quasistatic():
    state = AdaptivityState(2, threshold=0.1)
    update_partition(state, [1.0, 1.0], forced_off=[1])
    assert_allclose(state.active_flags, [True, False])


def test_metric_shape_checked():
    with pytest.raises(ValueError):
        update_partition(AdaptivityState(2, 1.0), [1.0])
    with pytest.raises(ValueError):
        AdaptivityState(1, 1.0, window=0)


def test_replay_durations():
    trace = np.array([[2.0, 0.0]] * 3 + [[0.0, 0.0]] * 20)
    durations, flags = active_durations(trace, threshold=0.5, window=4)
    # means after each step: 2, 2, 2, 1.5, 1.0, 0.5, 0 ...
    assert list(durations) == [5, 0]
    assert flags.shape == trace.shape


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t1=st.floats(0.01, 1.0), t2=st.floats(1.0, 3.0))
def test_higher_threshold_never_more_active_property(seed, t1, t2):
    trace = np.abs(np.random.default_rng(seed).normal(size=(60, 3))) * 1.5
    lo, _ = active_durations(trace, t1)
    hi, _ = active_durations(trace, t2)
    assert np.all(hi <= lo)
