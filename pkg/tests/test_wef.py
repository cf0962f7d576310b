import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from wefsim.errors import PreconditionError
from wefsim.wef import wef_init, wef_run_trajectory, wef_threshold, wef_update


def test_init_is_zero():
    t = wef_init(3, 4)
    assert t.counts.shape == (3, 4)
    assert t.counts.dtype == np.int64
    assert not t.counts.any()


@pytest.mark.parametrize("h,w", [(0, 3), (3, 0), (-1, 1)])
def test_init_rejects_bad_shape(h, w):
    with pytest.raises(PreconditionError):
        wef_init(h, w)


def test_threshold_hand_value():
    assert wef_threshold(np.zeros((2, 2)), np.array([[0.1, 0.0], [0.0, 0.3]])) == pytest.approx(0.1)


def test_single_large_change_counts_once():
    t = wef_init(2, 2)
    wef_update(t, np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert t.counts.tolist() == [[0, 0], [1, 0]]
    assert t.last_alpha == pytest.approx(0.25)


def test_uniform_change_counts_nothing():
    # every |change| equals alpha, and the inequality is strict
    t = wef_init(2, 3)
    wef_update(t, np.full((2, 3), 0.5))
    assert not t.counts.any()


def test_two_epoch_hand_example():
    t = wef_init(2, 2)
    wef_run_trajectory(t, [np.array([[0.1, 0], [0, 0]]), np.array([[0.1, 0.3], [0, 0]])])
    assert t.counts.tolist() == [[1, 1], [0, 0]]
    assert t.steps == 2
    assert len(t.alphas) == 2


def test_reset_reference_keeps_counts():
    t = wef_init(1, 2)
    wef_update(t, np.array([[1.0, 0.0]]))
    t.reset_reference(np.array([[5.0, 5.0]]))
    assert t.counts.tolist() == [[1, 0]]
    wef_update(t, np.array([[5.0, 7.0]]))
    assert t.counts.tolist() == [[1, 1]]


def test_shape_mismatch():
    t = wef_init(2, 2)
    with pytest.raises(PreconditionError):
        wef_update(t, np.zeros((2, 3)))
    with pytest.raises(PreconditionError):
        t.reset_reference(np.zeros((3, 2)))
    with pytest.raises(PreconditionError):
        wef_run_trajectory(t, [])


def test_counts_bounded_by_steps():
    rng = np.random.default_rng(3)
    t = wef_init(4, 5)
    wef_run_trajectory(t, [rng.normal(size=(4, 5)) for _ in range(7)])
    assert t.counts.min() >= 0 and t.counts.max() <= 7


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_matches_oracle(h, w, steps, seed):
    rng = np.random.default_rng(seed)
    start = rng.normal(size=(h, w))
    layers = [rng.normal(size=(h, w)) for _ in range(steps)]
    t = wef_init(h, w, start)
    wef_run_trajectory(t, layers)
    assert t.counts.tolist() == oracles.frequency_run((h, w), start.tolist(),
                                                      [l.tolist() for l in layers])
