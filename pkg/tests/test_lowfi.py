import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_gradient_errors, small_cantilever
from hybrid_infill import fea_quad as fq
from hybrid_infill.fields import PASSIVE_SOLID, PASSIVE_VOID, DesignMask, project_derivative, smooth_array_adjoint
from hybrid_infill.lowfi.material import (
    MaterialParams,
    C_aniso_global,
    interpolate_stiffness,
    rotation_matrix,
    stress_state,
)
from hybrid_infill.lowfi.mma import MMA
from hybrid_infill.lowfi.optimize import (
    LowFiState,
    adjoint_gradients,
    evaluate,
    initial_state,
    load_checkpoint,
    pnorm_stress,
    read_history,
    run_lowfi,
    save_checkpoint,
    update_correction,
    volume_fractions,
    write_history,
)

MAT = MaterialParams()


def test_material_invariants():
    with pytest.raises(ValueError):
        MaterialParams(E11=-1.0)
    with pytest.raises(ValueError):
        MaterialParams(nu12=2.0, E22=1.0, E11=1.0)
    assert MAT.nu21 == pytest.approx(0.24)


def test_interpolation_endpoints():
    assert np.array_equal(interpolate_stiffness(1.0, 1.0, 0.7, MAT), MAT.C_iso())
    assert np.allclose(interpolate_stiffness(1.0, 0.0, 0.7, MAT), C_aniso_global(MAT, 0.7), atol=0, rtol=1e-15)
    # rotated orthotropic matrix against a tensor-rotation oracle
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    C0 = MAT.C_aniso_local()
    v2t = lambda C: {(0, 0): C[0, 0], (1, 1): C[1, 1], (0, 1): C[0, 1], (2, 2): C[2, 2]}
    c = v2t(C0)
    Cl = np.zeros((2, 2, 2, 2))
    Cl[0, 0, 0, 0], Cl[1, 1, 1, 1] = c[(0, 0)], c[(1, 1)]
    Cl[0, 0, 1, 1] = Cl[1, 1, 0, 0] = c[(0, 1)]
    for a, b in ((0, 1), (1, 0)):
        for p, q in ((0, 1), (1, 0)):
            Cl[a, b, p, q] = c[(2, 2)]
    Cg = np.einsum("ia,jb,kc,ld,abcd->ijkl", R, R, R, R, Cl)
    voigt = np.array([[Cg[0, 0, 0, 0], Cg[0, 0, 1, 1], Cg[0, 0, 0, 1]],
                      [Cg[1, 1, 0, 0], Cg[1, 1, 1, 1], Cg[1, 1, 0, 1]],
                      [Cg[0, 1, 0, 0], Cg[0, 1, 1, 1], Cg[0, 1, 0, 1]]])
    assert np.allclose(C_aniso_global(MAT, th), voigt, atol=1e-14)


def test_void_interpolation_matches_direct_formula():
    mp = mpmath.mp
    mp.dps = 40
    xi, th, eps = 0.3, 0.2, 1e-9
    got = interpolate_stiffness(0.0, xi, th, MAT, eps=eps)
    Can = C_aniso_global(MAT, th)
    for a in range(3):
        for b in range(3):
            exact = mpmath.mpf(eps) * (mpmath.mpf(xi) ** 3 * MAT.C_iso()[a, b]
                                       + (1 - mpmath.mpf(xi)) ** 3 * mpmath.mpf(Can[a, b]))
            assert abs(got[a, b] - float(exact)) <= 1e-15 * max(abs(float(exact)), 1e-30)


def test_stress_state_axis_cases():
    assert stress_state(np.array([MAT.sigma_S, 0, 0]), 0.0, 1.0, MAT) == pytest.approx(1.0)
    assert stress_state(np.array([MAT.sigma_X, 0, 0]), 0.0, 0.0, MAT) == pytest.approx(1.0)
    assert stress_state(np.array([0, 0, MAT.sigma_S / np.sqrt(3)]), 0.3, 1.0, MAT) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[st.floats(-10, 10)] * 3), st.floats(0, 1))
def test_stress_state_rotation_oracle_and_nonnegative(s, xi):
    s = np.array(s)
    th = fq.principal_angles(*s)
    c, sn = np.cos(th), np.sin(th)
    R = np.array([[c, -sn], [sn, c]])
    loc = R.T @ np.array([[s[0], s[2]], [s[2], s[1]]]) @ R
    s1, s2, s12 = loc[0, 0], loc[1, 1], loc[0, 1]
    X, Y, S = MAT.sigma_X, MAT.sigma_Y, MAT.sigma_XY
    th_oracle = s1 ** 2 / X ** 2 + s2 ** 2 / Y ** 2 - s1 * s2 / (X * Y) + s12 ** 2 / S ** 2
    assert stress_state(s, th, 0.0, MAT) == pytest.approx(th_oracle, rel=1e-12, abs=1e-12)
    assert stress_state(s, th, xi, MAT) >= 0.0


def test_rotation_matrix_inverse_is_transpose_form():
    th = 0.37
    T = rotation_matrix(th)
    Tm = rotation_matrix(-th)
    assert np.allclose(T @ Tm, np.eye(3), atol=1e-15)


def test_pnorm_closed_forms_and_oracle():
    assert pnorm_stress(np.full(50, 0.8), 12) == pytest.approx(0.8 * 50 ** (1 / 12), rel=1e-14)
    assert pnorm_stress(np.r_[0.0, 0.0, 0.37, 0.0], 12) == 0.37
    rng = np.random.default_rng(0)
    mpmath.mp.dps = 50
    for _ in range(20):
        s = rng.random(200) * 10 ** rng.uniform(-3, 3)
        exact = mpmath.fsum(mpmath.mpf(float(v)) ** 12 for v in s) ** (mpmath.mpf(1) / 12)
        assert abs(pnorm_stress(s, 12) / float(exact) - 1) < 1e-12
    # no overflow for huge states
    assert np.isfinite(pnorm_stress(np.full(10, 1e200), 12))
    with pytest.raises(ValueError):
        pnorm_stress(np.array([-1.0]), 12)


def test_correction_update():
    assert update_correction(1.0, 0.5, 0.5, 0.5) == 1.0
    assert update_correction(1.0, 2.0, 1.0, 0.5) == 1.5
    c, r = 1.0, 0.6
    for k in range(1, 30):
        c = update_correction(c, r, 1.0, 0.5)
        assert abs(c - r) == pytest.approx(0.4 * 0.5 ** k, rel=1e-9)
    with pytest.raises(ValueError):
        update_correction(1.0, 1.0, 0.0, 0.5)


def test_volume_fractions():
    assert volume_fractions(np.ones((3, 3)), np.ones((3, 3)), 1.0) == (1.0, 1.0)
    assert volume_fractions(np.zeros((3, 3)), np.ones((3, 3)), 0.5) == (0.0, 0.0)
    rng = np.random.default_rng(1)
    r, x = rng.random((5, 7)), rng.random((5, 7))
    base = solid = 0.0
    for j in range(5):
        for i in range(7):
            base += r[j, i]
            solid += r[j, i] * x[j, i]
    b, s = volume_fractions(r, x, 0.4)
    assert b == pytest.approx(base / 35, abs=1e-14)
    assert s == pytest.approx(solid / (35 * 0.4), abs=1e-14)


def test_adjoint_matches_finite_differences():
    pb = small_cantilever()
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.3, 0.9, pb.grid.shape)
    xi = rng.uniform(0.2, 0.8, pb.grid.shape)
    th = rng.uniform(-1.5, 1.5, pb.grid.shape)
    errs = fd_gradient_errors(pb, rho, xi, th, 4.0, 1.3, rng.choice(36, 20, replace=False))
    assert errs.max() < 1e-3


def test_constraint_gradients_are_filter_chain():
    pb = small_cantilever()
    rho = np.full(pb.grid.shape, 0.4)
    xi = np.zeros(pb.grid.shape)
    ev = evaluate(pb, rho, xi, np.zeros(pb.grid.shape), 2.0)
    gr = adjoint_gradients(pb, ev)
    N = pb.grid.n_elements
    expected = smooth_array_adjoint(np.full(pb.grid.shape, 1 / (N * pb.V_b)) * ev.drho, pb.R_s)
    assert np.allclose(gr.dc_rho[0], expected, atol=1e-15)
    # hand derivation with a dense normalized cone-filter matrix
    ny, nx = pb.grid.shape
    jj, ii = np.divmod(np.arange(N), nx)
    W = np.maximum(0.0, pb.R_s - np.hypot(ii[:, None] - ii[None], jj[:, None] - jj[None]))
    W /= W.sum(axis=1, keepdims=True)
    slope = project_derivative(np.full(N, 0.4), 2.0, 0.5)
    hand = W.T @ (slope / (N * pb.V_b))
    assert np.allclose(gr.dc_rho[0].ravel(), hand, atol=1e-15)


def test_zero_load_zero_gradient():
    pb = small_cantilever()
    pb = type(pb)(**{**pb.__dict__, "loads": np.zeros_like(pb.loads)})
    ev = evaluate(pb, np.full(pb.grid.shape, 0.5), np.full(pb.grid.shape, 0.5), np.zeros(pb.grid.shape))
    gr = adjoint_gradients(pb, ev)
    assert gr.objective == 0.0
    assert not np.any(gr.d_rho) and not np.any(gr.d_xi)


def test_mma_on_constrained_quadratic():
    # min (x0-2)^2 + (x1-2)^2  s.t.  x0 + x1 <= 1, 0 <= x <= 1.5
    opt = MMA(2, 1, 0.0, 1.5, move=0.5)
    x = np.array([0.2, 0.9])
    for _ in range(60):
        f0 = np.sum((x - 2) ** 2)
        x = opt.update(x, f0, 2 * (x - 2), np.array([x.sum() - 1]), np.ones((1, 2)))
    assert np.allclose(x, [0.5, 0.5], atol=1e-4)


def passive_problem():
    pb = small_cantilever(8)
    flags = np.zeros(pb.grid.shape, dtype=np.int8)
    flags[5:, 5:] = PASSIVE_VOID
    flags[0, 7] = PASSIVE_SOLID
    return type(pb)(**{**pb.__dict__, "mask": DesignMask(pb.grid, flags), "max_iters": 12,
                       "beta_interval": 4})


def test_passive_regions_enforced_every_iterate(tmp_path):
    pb = passive_problem()
    seen = []
    orig_eval = evaluate

    import hybrid_infill.lowfi.optimize as O

    def spy(problem, rho, xi, theta, beta=None):
        ev = orig_eval(problem, rho, xi, theta, beta)
        seen.append((rho.copy(), ev.rho_bar.copy()))
        return ev

    O.evaluate = spy
    try:
        st = run_lowfi(pb)
    finally:
        O.evaluate = orig_eval
    void = pb.mask.void
    assert len(seen) >= 12
    for raw, bar in seen:
        assert np.all(raw[void] == 0.0) and np.all(bar[void] == 0.0)
        assert np.all(bar[pb.mask.solid] == 1.0)
    assert np.all(st.rho.values[void] == 0.0)


def test_run_produces_history_and_respects_bounds():
    pb = small_cantilever(10, V_b=0.5, max_iters=30, beta_interval=10)
    st = run_lowfi(pb)
    assert st.iter == 30 and len(st.history) == 30
    assert 0 <= st.rho.values.min() and st.rho.values.max() <= 1
    assert st.history[0]["c"] == 1.0
    assert st.history[-1]["base_vf"] <= 0.5 + 1e-3


def test_singular_failure_carries_iteration():
    from hybrid_infill.lowfi.optimize import LowFiError
    pb = small_cantilever()
    # y-translation left free
    fixed = pb.fixed_dofs[pb.fixed_dofs % 2 == 0]
    pb = type(pb)(**{**pb.__dict__, "fixed_dofs": fixed})
    with pytest.raises(LowFiError) as info:
        run_lowfi(pb)
    assert info.value.iteration == 0
    assert "translation-y" in str(info.value)


def test_checkpoint_and_history_round_trip(tmp_path):
    pb = small_cantilever(V_b=0.5, max_iters=6)
    st = run_lowfi(pb)
    path = tmp_path / "run.edhf"
    save_checkpoint(path, st)
    back = load_checkpoint(path)
    assert np.array_equal(back.rho.values, st.rho.values)
    assert np.array_equal(back.xi.values, st.xi.values)
    assert np.array_equal(back.theta.angles, st.theta.angles)
    assert back.c == st.c and back.iter == st.iter
    hist = read_history(tmp_path / "run.csv")
    assert [h["sigma_pn"] for h in hist] == [h["sigma_pn"] for h in st.history]
    write_history(tmp_path / "again.csv", hist)
    assert (tmp_path / "again.csv").read_text() == (tmp_path / "run.csv").read_text()


def test_resume_matches_uninterrupted(tmp_path):
    pb = small_cantilever(V_b=0.5, max_iters=8)
    full = run_lowfi(pb)
    half = run_lowfi(type(pb)(**{**pb.__dict__, "max_iters": 4}))
    # resume restarts MMA memory, so only the first half must agree exactly
    assert [h["sigma_pn"] for h in half.history] == [h["sigma_pn"] for h in full.history[:4]]
    resumed = run_lowfi(pb, state=half)
    assert resumed.iter == 8 and len(resumed.history) == 8


def test_state_invariants():
    pb = small_cantilever()
    st = initial_state(pb)
    with pytest.raises(ValueError):
        LowFiState(st.rho, st.xi, st.theta, c=0.0)
    assert np.all(st.rho.values == pb.V_b) and np.all(st.xi.values == pb.V_s)


def test_relaxation_values_and_derivative():
    from hybrid_infill.lowfi.optimize import relaxation
    r = np.array([0.0, 0.25, 1.0])
    np.testing.assert_array_equal(relaxation(r, 0.5), [0.0, 0.5, 1.0])
    d = relaxation(r, 0.5, derivative=True)
    assert d[0] == 0.0 and d[2] == 0.5
    h = 1e-7
    fd = (relaxation(0.25 + h, 0.5) - relaxation(0.25 - h, 0.5)) / (2 * h)
    assert d[1] == pytest.approx(fd, rel=1e-8)


def test_full_density_sees_physical_stress():
    pb = small_cantilever(6)
    ones = np.ones(pb.grid.shape)
    ev = evaluate(pb, ones, np.full(pb.grid.shape, 0.5), np.zeros(pb.grid.shape))
    assert np.all(ev.rho_bar == 1.0)
    physical = np.einsum("eab,eb->ea", ev.C, ev.strain)
    np.testing.assert_allclose(ev.stress, physical, rtol=1e-12, atol=1e-15)


def test_backtracking_steps_are_halvings():
    pb = small_cantilever(8, V_b=0.4, max_iters=25, beta_interval=8)
    st = run_lowfi(pb)
    steps = np.array([h["step"] for h in st.history])
    k = -np.log2(steps)
    assert np.all(steps <= 1.0) and np.all(k == np.round(k)) and k.max() <= pb.max_backtracks


def test_zero_backtracks_is_plain_mma():
    pb = small_cantilever(8, V_b=0.4, max_iters=15, beta_interval=8, max_backtracks=0)
    st = run_lowfi(pb)
    assert all(h["step"] == 1.0 for h in st.history)
