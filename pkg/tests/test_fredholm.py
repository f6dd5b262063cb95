import numpy as np
import pytest

from decrem import (
    CapExceeded,
    DensityField,
    NoConvergence,
    OperatorMatrix,
    SolverConfig,
    apply_Q,
    assemble_Q,
    constant_model,
    make_grid,
    mass,
    norm_l2,
    propagator_action,
    realize_gamma,
    resolvent_dense,
    singular_values,
    solve_resolvent,
    spectral_radius,
)
from conftest import sampled_sine

DECAY_1 = np.exp(-np.pi**2 / 2)


def test_apply_Q_zero(grid64, heat):
    out = apply_Q(heat, grid64, SolverConfig(n_steps=16), DensityField.zeros(grid64), 0.5)
    assert not np.any(out.values)


def test_apply_Q_eigen_decay(heat):
    grid = make_grid(1, [0.0], [1.0], [256])
    config = SolverConfig(n_steps=512, scheme="crank-nicolson")
    xi = sampled_sine(grid)
    out = apply_Q(heat, grid, config, xi, 1.0)
    err = norm_l2(xi.with_values(out.values - DECAY_1 * xi.values))
    assert err <= 1e-2 * DECAY_1 * norm_l2(xi)


def test_apply_Q_loses_mass(grid64, heat):
    rng = np.random.default_rng(7)
    config = SolverConfig(n_steps=16)
    for _ in range(20):
        xi = DensityField(grid64, rng.random(64))
        out = apply_Q(heat, grid64, config, xi, 0.25)
        assert mass(out) < mass(xi)


def test_assembled_matches_matrix_free(qhat128, heat, grid128):
    config = SolverConfig(n_steps=128)
    rng = np.random.default_rng(19)
    act = qhat128.coefficient_action()
    for _ in range(5):
        v = rng.random(128)
        direct = apply_Q(heat, grid128, config, DensityField(grid128, v), 0.5)
        assert np.allclose(act @ v, direct.values, rtol=0.0, atol=1e-8)


def test_assembled_columns_are_kernel_slices(qhat128, heat, grid128):
    # column j is the response to a unit of mass concentrated in cell j
    config = SolverConfig(n_steps=128)
    j = 40
    delta = np.zeros(128)
    delta[j] = 1.0 / grid128.cell_volume
    out = apply_Q(heat, grid128, config, DensityField(grid128, delta), 0.5)
    assert np.allclose(qhat128.matrix[:, j], out.values, rtol=0.0, atol=1e-8)


def test_assembled_positivity_and_column_masses(qhat128):
    assert qhat128.matrix.min() >= 0.0
    cm = qhat128.column_masses()
    assert cm.min() > 0.0
    assert cm.max() < 1.0


def test_assembled_symmetric_for_self_adjoint(heat):
    # pure diffusion on a uniform grid gives a symmetric kernel matrix
    grid = make_grid(1, [0.0], [1.0], [16])
    opmat = assemble_Q(heat, grid, SolverConfig(n_steps=64), 0.1)
    scale = np.abs(opmat.matrix).max()
    assert np.abs(opmat.matrix - opmat.matrix.T).max() <= 1e-6 * scale


def test_assembled_long_horizon_vanishes(heat):
    grid = make_grid(1, [0.0], [1.0], [4])
    opmat = assemble_Q(heat, grid, SolverConfig(n_steps=512), 5.0)
    assert np.abs(opmat.matrix).max() <= 1e-8


def test_assembly_cap(heat):
    grid = make_grid(1, [0.0], [1.0], [64])
    with pytest.raises(CapExceeded):
        assemble_Q(heat, grid, SolverConfig(n_steps=8), 0.5, cap=32)


def test_operator_matrix_save_load_round_trip(tmp_path, qhat128, grid128):
    base = str(tmp_path / "qhat")
    qhat128.save(base)
    loaded = OperatorMatrix.load(base, grid128)
    assert np.array_equal(loaded.matrix, qhat128.matrix)
    assert loaded.scheme == qhat128.scheme
    assert loaded.T == qhat128.T
    assert loaded.n_steps == qhat128.n_steps
    wrong = make_grid(1, [0.0], [1.0], [64])
    with pytest.raises(ValueError):
        OperatorMatrix.load(base, wrong)


def test_spectral_radius_decay_oracles(heat, grid128):
    config = SolverConfig(n_steps=256, scheme="crank-nicolson")
    est = spectral_radius(propagator_action(heat, grid128, config, 1.0), n=grid128.n)
    assert est.converged
    assert est.value == pytest.approx(DECAY_1, rel=2e-2)

    config = SolverConfig(n_steps=64, scheme="crank-nicolson")
    est = spectral_radius(propagator_action(heat, grid128, config, 0.1), n=grid128.n)
    assert est.converged
    assert est.value == pytest.approx(np.exp(-np.pi**2 / 20), rel=2e-2)


def test_spectral_radius_of_assembled(qhat128):
    est = spectral_radius(qhat128)
    # implicit euler at K=128 overestimates the decay; stay within its bias
    assert est.converged
    assert est.value == pytest.approx(np.exp(-np.pi**2 / 4), rel=5e-2)


def test_spectral_radius_zero_operator(heat):
    grid = make_grid(1, [0.0], [1.0], [4])
    opmat = assemble_Q(heat, grid, SolverConfig(n_steps=512), 5.0)
    est = spectral_radius(opmat)
    assert est.value <= 1e-8


def test_resolvent_zero_gamma(grid64, heat):
    report = solve_resolvent(
        heat, grid64, SolverConfig(n_steps=16), DensityField.zeros(grid64), 0.5
    )
    assert not np.any(report.zeta.values)
    assert report.iterations == 1
    assert report.residual_norm == 0.0


def test_resolvent_eigenmode_closed_form(heat, grid128):
    # zeta = gamma / (1 - lambda_1), and Neumann contracts at rate ~0.0072
    config = SolverConfig(n_steps=256)
    gamma = sampled_sine(grid128)
    report = solve_resolvent(heat, grid128, config, gamma, 1.0, tol=1e-10)
    expected = gamma.values / (1.0 - DECAY_1)
    err = norm_l2(gamma.with_values(report.zeta.values - expected))
    assert err <= 1e-2 * norm_l2(gamma.with_values(expected))
    assert report.method == "neumann"
    assert report.iterations <= 5


def test_resolvent_bump_residual(heat, grid128):
    config = SolverConfig(n_steps=128)
    gamma = realize_gamma(grid128, {"kind": "bump", "lo": [0.4], "hi": [0.6]})
    report = solve_resolvent(heat, grid128, config, gamma.field, 0.5, tol=1e-8)
    assert report.residual_norm <= 1e-8


def test_resolvent_agrees_with_dense_lu(qhat128, heat, grid128):
    config = SolverConfig(n_steps=128)
    gamma = realize_gamma(grid128, {"kind": "bump", "lo": [0.4], "hi": [0.6]})
    report = solve_resolvent(heat, grid128, config, gamma.field, 0.5, tol=1e-10)
    dense = resolvent_dense(qhat128, gamma.field)
    err = norm_l2(dense.with_values(report.zeta.values - dense.values))
    assert err <= 1e-7 * norm_l2(dense)


def test_resolvent_respects_budget(heat, grid64):
    gamma = sampled_sine(grid64)
    with pytest.raises(NoConvergence):
        solve_resolvent(
            heat, grid64, SolverConfig(n_steps=8), gamma, 0.5, tol=1e-14, max_iter=2
        )


def test_singular_values_decay(qhat128):
    sv = singular_values(qhat128)
    assert sv[0] > 0.0
    assert np.all(np.diff(sv) <= 1e-12)
    # absorbed heat kernel: sigma_k ~ e^{-k^2 pi^2 T / 2} drops fast
    assert sv[0] / sv[3] >= 10.0
