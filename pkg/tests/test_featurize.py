import numpy as np
import pytest

from rmlearn.blockworld import Block, BlockWorldState, load_task_spec
from rmlearn.exceptions import DimensionError, EmptyInputError, ExtractorKindError
from rmlearn.featurize import (FeatureExtractor, featurize_state, featurize_trajectory,
                               record_demonstration)


def _state(*cells, w=6, h=6):
    return BlockWorldState(w, h, [Block(chr(65 + i), "", c, r) for i, (c, r) in enumerate(cells)])


def test_origin_block():
    x = FeatureExtractor(dim=2)
    assert featurize_state(x, _state((0, 0))).tolist() == [0.0, 0.0]


def test_direct_scaling():
    x = FeatureExtractor(dim=4)
    v = featurize_state(x, _state((2, 3), (5, 1)))
    np.testing.assert_allclose(v, [0.4, 0.6, 1.0, 0.2], rtol=0, atol=1e-15)


def test_noise_is_deterministic_and_bounded():
    x = FeatureExtractor(dim=4, noise_scale=0.05, seed=7)
    s = _state((2, 3), (5, 1))
    a = featurize_state(x, s, frame=3)
    assert np.array_equal(a, featurize_state(x, s, frame=3))
    assert np.array_equal(a, featurize_state(FeatureExtractor(dim=4, noise_scale=0.05, seed=7), s, 3))
    assert not np.array_equal(a, featurize_state(x, s, frame=4))
    clean = featurize_state(FeatureExtractor(dim=4), s)
    for f in range(200):
        assert np.max(np.abs(featurize_state(x, s, f) - clean)) <= 0.05


def test_one_cell_move_changes_one_coordinate():
    x = FeatureExtractor(dim=4)
    a = featurize_state(x, _state((2, 3), (5, 1)))
    b = featurize_state(x, _state((3, 3), (5, 1)))
    diff = b - a
    assert np.count_nonzero(diff) == 1
    assert diff[0] == pytest.approx(1 / 5, abs=1e-15)


def test_kind_and_dimension_checks():
    with pytest.raises(ExtractorKindError):
        featurize_state(FeatureExtractor("precomputed", dim=2), _state((0, 0)))
    with pytest.raises(DimensionError):
        featurize_state(FeatureExtractor(dim=4), _state((0, 0)))


def test_trajectory_map_law():
    x = FeatureExtractor(dim=2, noise_scale=0.01, seed=1)
    states = [_state((i % 6, 0)) for i in range(5)]
    t = featurize_trajectory(x, states)
    assert len(t) == 5
    for i, s in enumerate(states):
        assert np.array_equal(t.frames[i], featurize_state(x, s, i))
    assert len(featurize_trajectory(x, states[:1])) == 1
    with pytest.raises(EmptyInputError):
        featurize_trajectory(x, [])


def test_transform_matches_trajectory():
    x = FeatureExtractor(dim=2, noise_scale=0.01, seed=1).fit()
    states = [_state((1, 1)), _state((2, 2))]
    assert np.array_equal(x.transform(states), featurize_trajectory(x, states).frames)


def test_record_demonstration_dwell_and_transit():
    spec = load_task_spec("stack2")
    x = FeatureExtractor.for_task(spec)
    s0 = spec.initial_state()
    s1 = _state((0, 0), (2, 3))
    traj, source = record_demonstration(x, [s0, s1], dwell=3, transit=2)
    assert len(traj) == 3 + 2 + 3
    assert source == [0, 0, 0, None, None, 1, 1, 1]
    a, b = x.clean(s0), x.clean(s1)
    np.testing.assert_allclose(traj.frames[3], a + (b - a) / 3)
    np.testing.assert_allclose(traj.frames[4], a + 2 * (b - a) / 3)
