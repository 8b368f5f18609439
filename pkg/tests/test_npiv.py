import math

import numpy as np
import pytest
from scipy import linalg as sla
from scipy.special import eval_hermitenorm

from sievenpiv.basis import BasisSpec, design_matrix
from sievenpiv.exceptions import DomainError, RankError
from sievenpiv.npiv import (
    Dataset,
    EvalGrid,
    e_hat,
    e_hat_from_design,
    fit,
    fit_from_designs,
    l2_distance,
    predict,
    sup_distance,
    tau_hat,
    tau_hat_from_designs,
    whitened_cross,
)


def iv_sample(n=2000, seed=0):
    """Endogenous design on the unit interval with a strong instrument."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=n)
    v = rng.normal(size=n)
    u = 0.5 * v + rng.normal(size=n) * math.sqrt(0.75)
    x = np.clip(0.7 * w + 0.3 * (0.5 + 0.25 * v), 0.0, 1.0)
    y = np.sin(2 * x) + 0.3 * u
    return Dataset(y, x, w)


def hermite_design(z, J):
    # probabilists' Hermite, unit variance under N(0, 1)
    return np.column_stack([eval_hermitenorm(j, z) / math.sqrt(math.factorial(j)) for j in range(J)])


def test_exogenous_collapse_to_least_squares():
    d = iv_sample()
    spec = BasisSpec.bspline(4, 7)
    f = fit(Dataset(d.y, d.x, d.x), spec, spec)
    Psi = design_matrix(spec, d.x[:, 0])
    ls = np.linalg.solve(Psi.T @ Psi, Psi.T @ d.y)
    assert np.max(np.abs(f.coeffs - ls)) <= 1e-10


def test_exact_interpolation_without_noise():
    d = iv_sample(500, 1)
    psi, b = BasisSpec.bspline(3, 6), BasisSpec.bspline(4, 11)
    c = np.linspace(-1, 2, 6)
    y = design_matrix(psi, d.x[:, 0]) @ c
    f = fit(Dataset(y, d.x, d.w), psi, b)
    assert np.max(np.abs(f.coeffs - c)) <= 1e-10
    assert np.max(np.abs(f.residuals)) <= 1e-10


def test_brute_force_normal_equations_n6():
    x = np.array([0.05, 0.2, 0.4, 0.55, 0.8, 0.95])
    w = np.array([0.1, 0.3, 0.35, 0.6, 0.7, 0.9])
    y = np.array([0.3, -0.1, 0.8, 1.1, 0.4, 1.7])
    spec = BasisSpec.bspline(2, 2)
    f = fit(Dataset(y, x, w), spec, spec)
    # hat functions 1 - t and t on [0, 1]
    Psi = np.column_stack([1 - x, x])
    B = np.column_stack([1 - w, w])

    def inv2(M):
        a, b, c, d = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
        return np.array([[d, -b], [-c, a]]) / (a * d - b * c)

    P = Psi.T @ B @ inv2(B.T @ B)
    c = inv2(P @ B.T @ Psi) @ (P @ B.T @ y)
    np.testing.assert_allclose(f.coeffs, c, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(f.residuals, y - Psi @ c, atol=1e-12)


def test_fit_preconditions():
    d = iv_sample(50)
    with pytest.raises(ValueError):
        fit(d, BasisSpec.bspline(4, 7), BasisSpec.bspline(4, 5))
    with pytest.raises(ValueError):
        fit(Dataset(d.y[:5], d.x[:5], d.w[:5]), BasisSpec.bspline(4, 4), BasisSpec.bspline(4, 5))
    with pytest.raises(DomainError):
        fit(Dataset(d.y, d.x + 2.0, d.w), BasisSpec.bspline(4, 5), BasisSpec.bspline(4, 5))


def test_rank_deficient_instruments_raise():
    n = 200
    x = np.linspace(0, 1, n)
    w = np.full(n, 0.5)  # constant instrument: only one usable direction
    with pytest.raises(RankError):
        fit(Dataset(np.sin(x), x, w), BasisSpec.bspline(2, 2), BasisSpec.bspline(2, 3))


def test_predict_values_and_derivatives():
    d = iv_sample(800, 2)
    psi, b = BasisSpec.bspline(4, 7), BasisSpec.bspline(4, 11)
    f = fit(d, psi, b)
    np.testing.assert_allclose(predict(f, d.x[:, 0]), d.y - f.residuals, atol=1e-12)
    pts = np.linspace(0.1, 0.9, 10)
    h = 1e-6
    fd = (predict(f, pts + h) - predict(f, pts - h)) / (2 * h)
    d1 = f(pts, 1)
    assert np.max(np.abs(fd - d1) / np.maximum(np.abs(d1), 1e-3)) < 1e-5

    lin = fit(Dataset(3.0 * d.x[:, 0] - 1.0, d.x, d.w), psi, b)
    np.testing.assert_allclose(lin(pts, 1), 3.0, atol=1e-8)
    with pytest.raises(DomainError):
        predict(f, [1.5])


def test_tau_hat_is_one_when_instruments_equal_regressors():
    d = iv_sample(300)
    spec = BasisSpec.legendre(4)
    assert abs(tau_hat(Dataset(d.y, d.x, d.x), spec, spec) - 1.0) <= 1e-10


def test_tau_hat_mehler_oracle():
    rho, n = 0.8, 100_000
    rng = np.random.default_rng(11)
    z = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=n, method="cholesky")
    tau = tau_hat_from_designs(hermite_design(z[:, 0], 3), hermite_design(z[:, 1], 3))
    assert abs(tau - rho**-2) / rho**-2 < 0.05


def test_tau_hat_toy_matrices_against_explicit_svd():
    Psi = np.array([[1.0, 0.2], [0.5, 1.0], [0.0, 0.3], [1.0, -1.0]])
    B = np.array([[1.0, 0.0, 0.4], [0.3, 1.0, 0.0], [0.0, 0.2, 1.0], [0.7, -0.6, 0.1]])
    n = 4

    def inv_sqrt(G):
        lam, V = np.linalg.eigh(G)
        return V @ np.diag(lam**-0.5) @ V.T

    M = inv_sqrt(B.T @ B / n) @ (B.T @ Psi / n) @ inv_sqrt(Psi.T @ Psi / n)
    assert M.shape == (3, 2)
    np.testing.assert_allclose(whitened_cross(Psi, B), M, atol=1e-12)
    s = np.linalg.svd(M, compute_uv=False)
    assert abs(tau_hat_from_designs(Psi, B) - 1 / s[-1]) <= 1e-10


def test_tau_hat_matches_canonical_correlation_oracle():
    d = iv_sample(1500, 4)
    Psi = design_matrix(BasisSpec.bspline(4, 7), d.x[:, 0])
    B = design_matrix(BasisSpec.bspline(4, 11), d.w[:, 0])
    # principal angles between the column spaces are the canonical correlations
    cos = np.cos(sla.subspace_angles(Psi, B))
    assert abs(tau_hat_from_designs(Psi, B) - 1 / cos.min()) <= 1e-8
    # generalized eigenproblem  Psi'P_B Psi v = mu^2 Psi'Psi v
    PB = B @ np.linalg.solve(B.T @ B, B.T @ Psi)
    mu2 = sla.eigh(Psi.T @ PB, Psi.T @ Psi, eigvals_only=True)
    assert abs(tau_hat_from_designs(Psi, B) - 1 / math.sqrt(mu2.min())) <= 1e-8
    assert tau_hat_from_designs(Psi, B) >= 1 - 1e-10


def test_reparameterization_invariance():
    d = iv_sample(1500, 5)
    psi, b = BasisSpec.bspline(4, 7), BasisSpec.bspline(4, 11)
    Psi = design_matrix(psi, d.x[:, 0])
    B = design_matrix(b, d.w[:, 0])
    rng = np.random.default_rng(9)
    A = np.eye(7) + 0.3 * rng.normal(size=(7, 7))
    C = np.eye(11) + 0.3 * rng.normal(size=(11, 11))
    base = fit_from_designs(Psi, B, d.y, psi, b)
    alt = fit_from_designs(Psi @ A, B @ C, d.y, psi, b)
    np.testing.assert_allclose(Psi @ A @ alt.coeffs, Psi @ base.coeffs, atol=1e-8)
    assert abs(tau_hat_from_designs(Psi @ A, B @ C) - tau_hat_from_designs(Psi, B)) <= 1e-10


def test_residual_orthogonality_just_identified():
    d = iv_sample(1000, 6)
    spec = BasisSpec.bspline(4, 7)
    f = fit(d, spec, spec)
    assert np.max(np.abs(f.b_design.T @ f.residuals / f.n)) <= 1e-8


def test_npiv_fit_caches():
    d = iv_sample(600, 7)
    f = fit(d, BasisSpec.bspline(4, 5), BasisSpec.bspline(4, 7))
    assert (f.J, f.K) == (5, 7)
    assert np.max(np.abs(f.G_b - f.G_b.T)) <= 1e-15
    assert np.linalg.eigvalsh(f.G_b)[0] >= -1e-12
    np.testing.assert_allclose(f.S, f.b_design.T @ design_matrix(f.psi_spec, d.x[:, 0]) / f.n)


def test_e_hat_examples():
    m = 10_000
    grid = (np.arange(m) + 0.5) / m
    d = Dataset(np.zeros(m), grid, grid)
    assert abs(e_hat(d, BasisSpec.legendre(5)) - 1.0) <= 0.05
    # Psi'Psi/n = [[2, 1], [1, 2]] has eigenvalues 1 and 3
    Psi = np.array([[math.sqrt(3), math.sqrt(3)], [1.0, -1.0]])
    np.testing.assert_allclose(Psi.T @ Psi / 2, [[2, 1], [1, 2]])
    assert abs(e_hat_from_design(Psi) - 1.0) <= 1e-12
    dup = Dataset(np.zeros(5), np.full(5, 0.3), np.full(5, 0.3))
    assert abs(e_hat(dup, BasisSpec.legendre(2))) <= 1e-12


def test_grid_distances():
    grid = EvalGrid.uniform(0, 1, 10_000)
    f = lambda t: np.sin(t)  # noqa: E731
    assert sup_distance(f, f, grid) == 0.0 and l2_distance(f, f, grid) == 0.0
    g = lambda t: np.sin(t) - 0.7  # noqa: E731
    assert abs(sup_distance(f, g, grid) - 0.7) <= 1e-12
    assert abs(l2_distance(f, g, grid) - 0.7) <= 1e-12
    heavy = EvalGrid(grid.points, np.full(len(grid), 4.0 / len(grid)))
    assert abs(l2_distance(f, g, heavy) - 0.7 * 2.0) <= 1e-12
    assert abs(l2_distance(lambda t: t, np.zeros(len(grid)), grid) - 1 / math.sqrt(3)) <= 1e-3
    # value arrays without weights get equal weights 1/m
    assert abs(l2_distance(np.ones(4), np.zeros(4), np.linspace(0, 1, 4)) - 1.0) <= 1e-15
    with pytest.raises(ValueError):
        sup_distance(np.ones(3), np.zeros(4), np.linspace(0, 1, 4))


def test_eval_grid_validation():
    with pytest.raises(ValueError):
        EvalGrid(np.array([]))
    with pytest.raises(ValueError):
        EvalGrid(np.linspace(0, 1, 3), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        EvalGrid(np.linspace(0, 1, 3), np.ones(2))


def test_dataset_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        Dataset([1.0, np.nan], [0.1, 0.2], [0.1, 0.2])
    with pytest.raises(ValueError):
        Dataset([1.0, 2.0], [0.1, 0.2, 0.3], [0.1, 0.2])
    d = iv_sample(20, 8)
    p = tmp_path / "d.csv"
    d.to_csv(p)
    back = Dataset.from_csv(p)
    np.testing.assert_array_equal(back.y, d.y)
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.w, d.w)

    (tmp_path / "noy.csv").write_text("x1,w1\n0.1,0.2\n")
    with pytest.raises(ValueError, match="'y'"):
        Dataset.from_csv(tmp_path / "noy.csv")
    (tmp_path / "bad.csv").write_text("y,x1,w1\n1,0.1,0.2\n2,inf,0.3\n")
    with pytest.raises(ValueError, match="row 3"):
        Dataset.from_csv(tmp_path / "bad.csv")
    (tmp_path / "txt.csv").write_text("y,x1,w1,x2\n1,abc,0.2,0\n")
    with pytest.raises(ValueError, match="row 2, column 'x1'"):
        Dataset.from_csv(tmp_path / "txt.csv")
