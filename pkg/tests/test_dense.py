import numpy as np
import pytest

from nlprfuse.dense import (
    cg_x_solve,
    dense_problem,
    dense_x_solve,
    patch_gram,
    subgradient_oracle,
    time_x_updates,
    x_system_matrix,
)
from nlprfuse.frequency import plan, solve_cube
from nlprfuse.grid import Grid
from nlprfuse.linops import BlurFilter, FilterBank, SpectralResponse, build_subspace
from nlprfuse.nlpr import compute_weights
from nlprfuse.simkit import DegradationSpec, degrade, fusion_operators, make_phantom


def test_guard_refuses_large_grids():
    Z = make_phantom("ramp", 32, 32, 2)
    spec = DegradationSpec(factor=2)
    Yl, Yh = degrade(Z, spec)
    ops = fusion_operators(spec, Z.grid, build_subspace(Yl, 2), 2)
    with pytest.raises(ValueError):
        dense_problem(Yl, Yh, ops, compute_weights(Yh, 1, 0, 1.0), 0, 1.0, 0.1, 0.1)


def test_patch_gram_equals_filter_gram(rng):
    g = Grid(5, 5)
    bank = FilterBank.from_window(1, 1)
    x = rng.standard_normal((5, 5, 1))
    G = patch_gram(g, bank.shifts, 1)
    np.testing.assert_allclose(G @ x.ravel(), bank.gram(x).ravel(), atol=1e-10)
    np.testing.assert_allclose(G, G.T)


def test_cg_matches_direct(rng):
    g = Grid(6, 6)
    A = x_system_matrix(g, BlurFilter.starck_murtagh(), FilterBank.from_window(1, 0).shifts, 0)
    C = rng.standard_normal((6, 6, 2))
    np.testing.assert_allclose(cg_x_solve(A, C, rtol=1e-12), dense_x_solve(A, C), atol=1e-9)


def test_time_x_updates_reports_agreement():
    g = Grid(8, 8)
    B = BlurFilter.starck_murtagh()
    bank = FilterBank.from_window(1, 1)
    fp = plan(g, B, bank.filters)
    fast, slow, err = time_x_updates(g, 2, B, bank.shifts, 1, lambda C: solve_cube(fp, C), repeats=1)
    assert fast > 0 and slow > 0 and err < 1e-8


def test_subgradient_oracle_decreases_objective():
    Z = make_phantom("texture", 8, 8, 4)
    spec = DegradationSpec(factor=2, R=SpectralResponse.gaussian_bands(4, 2), snr_l=30, snr_h=30, seed=1)
    Yl, Yh = degrade(Z, spec)
    ops = fusion_operators(spec, Z.grid, build_subspace(Yl, 3), 4)
    w = compute_weights(Yh, 1, 1, 0.3)
    dp = dense_problem(Yl, Yh, ops, w, 1, 0.8, 1e-2, 0.1)
    X0 = np.zeros((64, 3))
    X, best, hist = subgradient_oracle(dp, X0, iters=2000)
    assert best < dp.objective(X0)
    assert best == pytest.approx(dp.objective(X))
    assert hist == sorted(hist, reverse=True)
