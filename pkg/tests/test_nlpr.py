import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlprfuse.grid import Grid, MultibandImage, PatchSpec, patch_difference
from nlprfuse.linops import FilterBank
from nlprfuse.nlpr import (
    NlprWeights,
    compute_weights,
    prox_stack,
    q_prox,
    regularizer_value,
    soft_threshold,
    unit_weights,
)


def loop_weights(guide, S, K, h):
    """Triple loop over pixels, shifts and patch entries."""
    spec = PatchSpec(K)
    shifts = [(a, b) for a in range(-S, S + 1) for b in range(-S, S + 1) if (a, b) != (0, 0)]
    out = np.zeros((guide.grid.n, len(shifts)))
    for i in range(guide.grid.n):
        for t, tau in enumerate(shifts):
            d = patch_difference(guide, guide.grid.pixel(i), tau, spec)
            out[i, t] = np.exp(-np.sum(d**2) / h**2)
    return out


def loop_regularizer(X, w, K):
    spec = PatchSpec(K)
    total = 0.0
    for i in range(X.grid.n):
        for t, tau in enumerate(w.shifts):
            total += w.values[i, t] * np.abs(patch_difference(X, X.grid.pixel(i), tau, spec)).sum()
    return total


def test_weights_match_loop(rng):
    guide = MultibandImage.from_cube(rng.uniform(size=(5, 6, 2)))
    w = compute_weights(guide, 1, 1, 0.7)
    np.testing.assert_allclose(w.values, loop_weights(guide, 1, 1, 0.7), rtol=1e-12)


def test_weight_examples():
    const = MultibandImage.from_cube(np.full((5, 5, 1), 0.4))
    assert np.all(compute_weights(const, 1, 1, 0.1).values == 1.0)
    big = MultibandImage.from_cube(np.indices((5, 5)).sum(axis=0)[:, :, None] * 10.0)
    assert compute_weights(big, 1, 0, 0.01).values.min() == 0.0
    with pytest.raises(ValueError):
        compute_weights(const, 1, 1, 0.0)


@given(st.integers(0, 2**31 - 1))
def test_weight_symmetry(seed):
    # w(i, tau) == w(i - tau, -tau)
    rng = np.random.default_rng(seed)
    g = Grid(5, 5)
    guide = MultibandImage.from_cube(rng.uniform(size=(5, 5, 1)))
    w = compute_weights(guide, 1, 1, 0.5)
    for tau in w.shifts:
        a = w.column(tau)
        b = w.column((-tau[0], -tau[1]))
        np.testing.assert_allclose(a, np.roll(b, tau, axis=(0, 1)), rtol=1e-12)
    assert np.all((w.values > 0) & (w.values <= 1))


def test_regularizer_matches_double_loop(rng):
    X = MultibandImage.from_cube(rng.standard_normal((5, 4, 2)))
    w = compute_weights(MultibandImage.from_cube(rng.uniform(size=(5, 4, 1))), 1, 1, 0.8)
    bank = FilterBank(w.shifts, 1)
    assert regularizer_value(X, w, bank) == pytest.approx(loop_regularizer(X, w, 1), rel=1e-10)
    assert regularizer_value(X, w, bank.filters) == pytest.approx(loop_regularizer(X, w, 1), rel=1e-10)


def test_regularizer_zero_on_constants():
    g = Grid(4, 4)
    X = MultibandImage.from_cube(np.full((4, 4, 3), 1.7))
    w = unit_weights(g, [(0, 1), (1, 0)])
    assert regularizer_value(X, w, FilterBank(w.shifts, 1)) == 0.0


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_regularizer_convex(seed, t):
    rng = np.random.default_rng(seed)
    g = Grid(4, 4)
    w = unit_weights(g, [(0, 1), (1, 1)])
    bank = FilterBank(w.shifts, 1)
    a = MultibandImage.from_cube(rng.standard_normal((4, 4, 2)))
    b = MultibandImage.from_cube(rng.standard_normal((4, 4, 2)))
    mid = MultibandImage(g, t * a.data + (1 - t) * b.data)
    lhs = regularizer_value(mid, w, bank)
    rhs = t * regularizer_value(a, w, bank) + (1 - t) * regularizer_value(b, w, bank)
    assert lhs <= rhs + 1e-9


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    assert soft_threshold(1.0, 1.0) == 0.0
    assert soft_threshold(-0.7, 0.0) == -0.7
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@given(st.floats(-10, 10), st.floats(0, 5))
def test_soft_threshold_is_prox(x, mu):
    z = soft_threshold(x, mu)
    grid = np.linspace(-12, 12, 4801)
    obj = 0.5 * (grid - x) ** 2 + mu * np.abs(grid)
    assert 0.5 * (z - x) ** 2 + mu * abs(z) <= obj.min() + 1e-12


def test_q_prox_and_prox_stack_agree(rng):
    g = Grid(4, 5)
    w = compute_weights(MultibandImage.from_cube(rng.uniform(size=(4, 5, 1))), 1, 0, 0.5)
    bank = FilterBank(w.shifts, 0)
    V = rng.standard_normal((len(bank), 4, 5, 2))
    full = prox_stack(V, w, bank, 0.3, 0.5)
    for j, tau in enumerate(w.shifts):
        one = q_prox(MultibandImage.from_cube(V[j]), w, tau, 0.3, 0.5).cube
        np.testing.assert_allclose(full[j], one, atol=1e-14)


def test_zero_weights_pass_through(rng):
    g = Grid(4, 4)
    w = NlprWeights(g, [(0, 1)], np.zeros((16, 1)), 1.0)
    V = rng.standard_normal((1, 4, 4, 2))
    np.testing.assert_array_equal(prox_stack(V, w, FilterBank(w.shifts, 0), 1.0, 1e-3), V)
