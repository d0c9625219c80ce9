import numpy as np
import pytest

from nlprfuse.dense import dense_oracle_solve, least_squares_oracle
from nlprfuse.linops import SpectralResponse, build_subspace
from nlprfuse.simkit import DegradationSpec, degrade, fusion_operators, make_phantom
from nlprfuse.solver import (
    ABLATION_CASES,
    AdmmState,
    DivergenceError,
    SolverConfig,
    admm_step,
    augmented_lagrangian,
    build_problem,
    initial_state,
    objective,
    p1_update,
    p2_update,
    q_update,
    recover_from_stacked,
    run,
    solve,
    stacked_operator,
    x_rhs,
    x_update,
)


def small_instance(snr=30.0, p=8, L=4, Lh=2, L_s=3, d=2, seed=0):
    Z = make_phantom("texture", p, p, L, seed=seed)
    spec = DegradationSpec(factor=d, R=SpectralResponse.gaussian_bands(L, Lh), snr_l=snr, snr_h=snr, seed=1)
    Yl, Yh = degrade(Z, spec)
    ops = fusion_operators(spec, Z.grid, build_subspace(Yl, L_s), L)
    return Z, Yl, Yh, ops


def random_state(pb, rng):
    st = initial_state(pb)
    for name in ("X", "P1", "P2", "Q", "Lam1", "Lam2", "Sig"):
        setattr(st, name, rng.standard_normal(getattr(st, name).shape))
    return st


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rho=0.0)
    with pytest.raises(ValueError):
        SolverConfig(weight_mode="learned")
    assert SolverConfig(structure_mode="pixel").reg_K == 0
    assert SolverConfig(window_mode="local").shifts == [(1, 0), (0, 1)]
    assert len(SolverConfig(S=2).shifts) == 24


def test_ablation_cases_cover_switches():
    assert list(ABLATION_CASES) == ["C1", "C2", "C3", "C4", "C5"]
    assert ABLATION_CASES["C1"] == dict(weight_mode="guided", structure_mode="patch", window_mode="nonlocal")
    assert ABLATION_CASES["C5"]["window_mode"] == "local"


def test_x_update_solves_normal_equations(rng):
    _, Yl, Yh, ops = small_instance()
    pb = build_problem(Yl, Yh, ops, SolverConfig(L_s=3))
    st = random_state(pb, rng)
    X = x_update(st, pb)
    lhs = X + pb.blur(pb.blur(X), adjoint=True) + pb.bank.gram(X)
    np.testing.assert_allclose(lhs, x_rhs(st, pb), atol=1e-10)


def test_p_updates_satisfy_optimality(rng):
    _, Yl, Yh, ops = small_instance()
    cfg = SolverConfig(L_s=3, rho=0.3, lam1=0.7)
    pb = build_problem(Yl, Yh, ops, cfg)
    st = random_state(pb, rng)
    E, R = ops.basis.E, ops.response.R
    BX = pb.blur(st.X)
    P1 = p1_update(st, pb, BX)
    # gradient of 0.5||Y - S P1 E||^2 + rho/2 ||BX - P1 - Lam1||^2 vanishes
    n = pb.grid.n
    grad = np.zeros((n, 3))
    rows = ops.sampling.kept_rows
    grad[rows] = (P1.reshape(n, -1)[rows] @ E - Yl) @ E.T
    grad -= cfg.rho * (BX - st.Lam1 - P1).reshape(n, -1)
    assert np.abs(grad).max() < 1e-10
    P2 = p2_update(st, pb).reshape(n, -1)
    ER = E @ R
    grad2 = cfg.lam1 * (P2 @ ER - Yh.data) @ ER.T - cfg.rho * ((st.X - st.Lam2).reshape(n, -1) - P2)
    assert np.abs(grad2).max() < 1e-10


def test_q_update_brute_force(rng):
    _, Yl, Yh, ops = small_instance()
    cfg = SolverConfig(L_s=3, rho=0.5, lam2=0.4)
    pb = build_problem(Yl, Yh, ops, cfg)
    st = random_state(pb, rng)
    Q = q_update(st, pb)
    V = pb.bank.forward(st.X) - st.Sig
    thr = np.broadcast_to(pb.thresholds, (pb.bank.n_shifts, pb.bank.n_offsets) + V.shape[1:]).reshape(V.shape)
    flat = rng.choice(V.size, 50, replace=False)
    grid = np.linspace(-8, 8, 160001)
    for j in flat:
        v, mu = V.flat[j], thr.flat[j]
        best = grid[np.argmin(0.5 * (grid - v) ** 2 + mu * np.abs(grid))]
        assert abs(Q.flat[j] - best) < 1e-4


def test_fast_admm_matches_dense_admm():
    _, Yl, Yh, ops = small_instance()
    cfg = SolverConfig(L_s=3, rho=0.2, lam2=1e-3, max_iters=15, tol_primal=1e-300)
    pb = build_problem(Yl, Yh, ops, cfg)
    X0 = initial_state(pb).X
    fast = run(pb, initial_state(pb, X0)).X.data
    dense = dense_oracle_solve(Yl, Yh, ops, pb.weights, cfg.K, cfg.lam1, cfg.lam2, cfg.rho, X0.reshape(64, 3), 15)
    np.testing.assert_allclose(fast, dense, rtol=1e-8, atol=1e-10)


def test_lam2_zero_reaches_least_squares():
    # a 3-band guide makes the data terms strictly convex in X
    _, Yl, Yh, ops = small_instance(snr=30.0, Lh=3)
    cfg = SolverConfig(L_s=3, rho=0.05, lam2=0.0, max_iters=3000, tol_primal=1e-12)
    res = solve(Yl, Yh, ops, None, cfg)
    ref = least_squares_oracle(Yl, Yh, ops, cfg.lam1)
    assert res.converged
    np.testing.assert_allclose(res.X.data, ref, atol=1e-8)


def test_objective_decreases_and_log(tmp_path):
    _, Yl, Yh, ops = small_instance()
    res = solve(Yl, Yh, ops, None, SolverConfig(L_s=3, rho=0.1, lam2=1e-3, max_iters=200))
    obj = res.log.objective
    assert obj[-1] <= obj[0]
    text = res.log.to_csv(tmp_path / "log.csv")
    assert text.splitlines()[0] == "iter,objective,r1,r2,r3,ms"
    assert len(text.splitlines()) == len(res.log) + 1


def test_augmented_lagrangian_at_feasible_point(rng):
    _, Yl, Yh, ops = small_instance()
    pb = build_problem(Yl, Yh, ops, SolverConfig(L_s=3, lam2=0.01))
    st = initial_state(pb)
    st.X = rng.standard_normal(st.X.shape)
    st.P1, st.P2, st.Q = pb.blur(st.X), st.X.copy(), pb.bank.forward(st.X)
    assert augmented_lagrangian(st, pb) == pytest.approx(objective(st.X, pb), rel=1e-12)


def test_stacked_operator_left_inverse(rng):
    _, Yl, Yh, ops = small_instance()
    pb = build_problem(Yl, Yh, ops, SolverConfig(L_s=3))
    X = rng.standard_normal((8, 8, 3))
    np.testing.assert_array_equal(recover_from_stacked(stacked_operator(X, pb), pb.grid, 3), X)


def test_errors():
    _, Yl, Yh, ops = small_instance()
    with pytest.raises(ValueError):
        build_problem(Yl[:-1], Yh, ops, SolverConfig(L_s=3))
    with pytest.raises(MemoryError):
        build_problem(Yl, Yh, ops, SolverConfig(L_s=3, memory_budget_mb=1e-3))
    pb = build_problem(Yl, Yh, ops, SolverConfig(L_s=3))
    st = initial_state(pb)
    st.P1[0, 0, 0] = np.nan
    with pytest.raises(DivergenceError):
        admm_step(st, pb)
        st.check_finite()


def test_deterministic_reruns():
    _, Yl, Yh, ops = small_instance()
    cfg = SolverConfig(L_s=3, max_iters=30)
    a = solve(Yl, Yh, ops, None, cfg).Z.data
    b = solve(Yl, Yh, ops, None, cfg).Z.data
    assert a.tobytes() == b.tobytes()
