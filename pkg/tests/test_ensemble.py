import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from opac.diffcore import finite_diff_gradient
from opac.ensemble import (
    CriticTriple,
    TargetStrategy,
    aggregate,
    aggregate_batch,
    critic_loss,
    critic_loss_and_grads,
    shared_q_target,
)
from opac.nets import forward_critic
from opac.replay import Batch

M2, MED, MIN = TargetStrategy.MEAN_SMALLER_TWO, TargetStrategy.MEDIAN_THREE, TargetStrategy.MIN_PAIR
finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_examples():
    assert aggregate(1, 2, 3, M2) == 1.5
    assert aggregate(1, 2, 3, MED) == 2
    assert aggregate(5, 2, -100, MIN) == 2  # third critic ignored
    for g in TargetStrategy:
        assert aggregate(4.25, 4.25, 4.25, g) == 4.25


def test_parse():
    assert TargetStrategy.parse("median3") is MED
    assert TargetStrategy.parse("MEAN_SMALLER_TWO") is M2
    with pytest.raises(ValueError):
        TargetStrategy.parse("min3")


@given(finite, finite, finite)
def test_ordering_chain(x, y, z):
    a, b, c = sorted((x, y, z))
    assert a <= aggregate(a, b, c, M2) <= aggregate(a, b, c, MED) <= c


@given(finite, finite, finite)
def test_permutation_invariance(x, y, z):
    for g in (M2, MED):
        vals = {aggregate(*p, g) for p in itertools.permutations((x, y, z))}
        assert len(vals) == 1


@given(finite, finite, finite, st.floats(0, 1e6), st.integers(0, 2))
def test_monotone(x, y, z, bump, which):
    q = [x, y, z]
    raised = list(q)
    raised[which] += bump
    for g in TargetStrategy:
        assert aggregate(*raised, g) >= aggregate(*q, g)


def test_batch_matches_scalar(rng):
    q = rng.normal(size=(500, 3))
    q[::7, 1] = q[::7, 0]  # ties
    for g in TargetStrategy:
        expected = [aggregate(*row, g) for row in q]
        np.testing.assert_array_equal(aggregate_batch(q, g), expected)
    np.testing.assert_array_equal(aggregate_batch(q[:, :2], MIN), np.minimum(q[:, 0], q[:, 1]))
    with pytest.raises(ValueError):
        aggregate_batch(q[:, :2], MED)


def test_shared_target_examples():
    assert shared_q_target(3.0, 1.0, 0.99, 123.0, 0.7, -5.0) == 3.0
    assert shared_q_target(1.0, 0.0, 0.99, 10.0, 0.0, -3.0) == pytest.approx(10.9)
    assert shared_q_target(0.0, 0.0, 1.0, 10.0, 0.2, -1.0) == pytest.approx(10.2)


def _triple(rng, hidden=(6,)):
    return CriticTriple.create(3, 2, hidden, [11, 12, 13])


def test_critic_loss_zero_when_exact(rng):
    triple = _triple(rng)
    s, a = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    # make critic 2 and 3 copies of critic 1 so one y fits all
    for m in triple.models[1:]:
        m.params.flat[:] = triple.models[0].params.flat
    y = forward_critic(triple.models[0], s, a)
    losses, grads = critic_loss_and_grads(triple.models, s, a, y)
    assert losses == [0.0, 0.0, 0.0]
    assert all(np.all(g == 0.0) for gs in grads for g in gs)


def test_single_row_loss(rng):
    triple = _triple(rng)
    for m in triple.models:
        m.params.flat[:] = 0.0
    batch = Batch(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros(1), np.zeros((1, 3)), np.zeros(1),
                  np.zeros(1, dtype=bool))
    assert critic_loss(triple, batch, np.array([2.0])) == [4.0, 4.0, 4.0]


def test_loss_length_mismatch(rng):
    triple = _triple(rng)
    with pytest.raises(ValueError):
        critic_loss_and_grads(triple.models, np.zeros((3, 3)), np.zeros((3, 2)), np.zeros(2))


def test_critic_gradients_match_finite_differences(rng):
    triple = _triple(rng, hidden=(5, 4))
    for m in triple.models:  # zero biases can leave a relu input exactly at its kink
        m.params.flat[:] += rng.normal(0, 0.2, m.params.size)
    s, a, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=4)
    _, grads = critic_loss_and_grads(triple.models, s, a, y)
    for k, model in enumerate(triple.models):
        base = model.params.flat.copy()

        def f(v):
            model.params.flat[:] = v
            return np.mean((forward_critic(model, s, a) - y) ** 2)

        numeric = finite_diff_gradient(f, base)
        model.params.flat[:] = base
        analytic = np.concatenate([g.ravel() for g in grads[k]])
        assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-6)) < 1e-4


def test_losses_do_not_touch_targets(rng):
    triple = _triple(rng)
    before = [t.params.flat.copy() for t in triple.targets]
    critic_loss_and_grads(triple.models, rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=4))
    assert all(np.array_equal(b, t.params.flat) for b, t in zip(before, triple.targets))


def test_two_critic_triple():
    triple = CriticTriple.create(3, 1, (4,), [1, 2, 3], n_critics=2)
    assert len(triple) == 2
    assert triple.target_values(np.zeros((5, 3)), np.zeros((5, 1))).shape == (5, 2)
