"""Series two-stage least squares (sieve NPIV) estimation.

The estimator is

    c_hat = [Psi' B (B'B)^- B' Psi]^- Psi' B (B'B)^- B' Y,    h_hat(x) = psi^J(x)' c_hat

with ``^-`` an SVD generalized inverse. ``B (B'B)^- B'`` is the orthogonal
projector onto the column space of ``B``; it is formed from the left singular
vectors of ``B`` rather than by inverting ``B'B``, which is the same matrix
with half the condition number.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .basis import AnySpec, TensorBasisSpec, design_matrix, gram_from_design
from .exceptions import DomainError, RankError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

DOMAIN_PAD = 1e-9


def _rtol(shape: tuple[int, ...]) -> float:
    return np.finfo(float).eps * max(shape)


@dataclass(frozen=True)
class Dataset:
    """Observed sample ``{(Y_i, X_i, W_i)}``: ``y`` is ``(n,)``, ``x`` is ``(n, d)``, ``w`` is ``(n, d_w)``."""

    y: NDArray[np.float64]
    x: NDArray[np.float64]
    w: NDArray[np.float64]

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        w = np.asarray(self.w, dtype=float)
        x = x.reshape(-1, 1) if x.ndim == 1 else x
        w = w.reshape(-1, 1) if w.ndim == 1 else w
        n = y.size
        if n < 1:
            raise ValueError("dataset needs at least one observation")
        if x.shape[0] != n or w.shape[0] != n:
            raise ValueError(f"row counts differ: y={n}, x={x.shape[0]}, w={w.shape[0]}")
        for name, arr in (("y", y), ("x", x), ("w", w)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def d_w(self) -> int:
        return self.w.shape[1]

    def regressors_for(self, spec: AnySpec) -> NDArray[np.float64]:
        return _columns_for(self.x, spec, "x")

    def instruments_for(self, spec: AnySpec) -> NDArray[np.float64]:
        return _columns_for(self.w, spec, "w")

    def x_domain(self, j: int = 0) -> tuple[float, float]:
        return data_domain(self.x[:, j])

    def w_domain(self, j: int = 0) -> tuple[float, float]:
        return data_domain(self.w[:, j])

    @classmethod
    def from_csv(cls, path: str | Path) -> Dataset:
        """Read a CSV with header ``y, x1..xd, w1..wdw`` (extra columns are ignored)."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ValueError(f"{path}: empty file") from None
            rows = list(reader)
        if "y" not in header:
            raise ValueError(f"{path}: missing required column 'y'")
        xcols = _numbered(header, "x")
        wcols = _numbered(header, "w")
        if not xcols:
            raise ValueError(f"{path}: missing required column 'x1'")
        if not wcols:
            raise ValueError(f"{path}: missing required column 'w1'")
        wanted = ["y", *xcols, *wcols]
        pos = [header.index(c) for c in wanted]
        data = np.empty((len(rows), len(wanted)))
        for r, row in enumerate(rows, start=2):
            if len(row) < len(header):
                raise ValueError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            for k, (name, p) in enumerate(zip(wanted, pos)):
                try:
                    v = float(row[p])
                except ValueError:
                    raise ValueError(f"{path}: row {r}, column {name!r}: not a number: {row[p]!r}") from None
                if not math.isfinite(v):
                    raise ValueError(f"{path}: row {r}, column {name!r}: non-finite value {row[p]!r}")
                data[r - 2, k] = v
        nx = len(xcols)
        return cls(data[:, 0], data[:, 1 : 1 + nx], data[:, 1 + nx :])

    def to_csv(self, path: str | Path) -> None:
        header = ["y"] + [f"x{j + 1}" for j in range(self.d)] + [f"w{j + 1}" for j in range(self.d_w)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in np.column_stack([self.y, self.x, self.w]):
                wr.writerow([repr(float(v)) for v in row])


def _numbered(header: list[str], prefix: str) -> list[str]:
    out = []
    k = 1
    while f"{prefix}{k}" in header:
        out.append(f"{prefix}{k}")
        k += 1
    return out


def _columns_for(arr: NDArray[np.float64], spec: AnySpec, name: str) -> NDArray[np.float64]:
    need = spec.n_vars
    if arr.shape[1] < need:
        raise ValueError(f"basis needs {need} {name}-columns, dataset has {arr.shape[1]}")
    return arr[:, 0] if need == 1 else arr[:, :need]


def data_domain(values: ArrayLike, pad: float = DOMAIN_PAD) -> tuple[float, float]:
    """``[min, max]`` of the sample widened by ``pad``: the default basis domain."""
    v = np.asarray(values, dtype=float)
    return float(v.min() - pad), float(v.max() + pad)


@dataclass(frozen=True)
class EvalGrid:
    """Evaluation points with optional nonnegative quadrature weights."""

    points: NDArray[np.float64]
    weights: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            raise ValueError("evaluation grid is empty")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.size != pts.shape[0]:
                raise ValueError("grid weights must match the number of points")
            if (w < 0).any():
                raise ValueError("grid weights must be nonnegative")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def uniform(cls, lo: float, hi: float, size: int = 1000, total_weight: float = 1.0) -> EvalGrid:
        """Equispaced points on ``[lo, hi]`` with equal weights summing to ``total_weight``."""
        pts = np.linspace(lo, hi, size)
        return cls(pts, np.full(size, total_weight / size))

    @classmethod
    def central(cls, values: ArrayLike, size: int = 1000, quantiles: tuple[float, float] = (0.05, 0.95)) -> EvalGrid:
        """Equispaced grid over the central quantile range of a sample."""
        lo, hi = np.quantile(np.asarray(values, dtype=float), quantiles)
        return cls.uniform(float(lo), float(hi), size)


@dataclass(frozen=True)
class NpivFit:
    """Fitted sieve NPIV estimator for one ``(J, K)`` pair.

    Caches ``G_b = B'B/n`` and ``S = B'Psi/n`` and the instrument design
    ``B`` (needed for the variance and bootstrap computations).
    """

    coeffs: NDArray[np.float64]
    psi_spec: AnySpec
    b_spec: AnySpec
    residuals: NDArray[np.float64]
    G_b: NDArray[np.float64]
    S: NDArray[np.float64]
    n: int
    b_design: NDArray[np.float64] = field(repr=False)
    rank_b: int = 0
    s_min: float = 0.0
    s_max: float = 0.0

    @property
    def J(self) -> int:
        return self.coeffs.size

    @property
    def K(self) -> int:
        return self.G_b.shape[0]

    def __call__(self, points, deriv=0) -> NDArray[np.float64]:
        return predict(self, points, deriv)


def fit_designs(Psi: NDArray[np.float64], B: NDArray[np.float64], y: NDArray[np.float64]):
    """Series 2SLS on explicit design matrices.

    Returns ``(coeffs, residuals, rank_b, s_min, s_max)``; raises ``RankError``
    when the projected regressor design is numerically rank deficient.
    """
    n, J = Psi.shape
    K = B.shape[1]
    if K < J:
        raise ValueError(f"need K >= J, got K={K}, J={J}")
    Ub, sb, _ = np.linalg.svd(B, full_matrices=False)
    rank_b = int((sb > _rtol(B.shape) * sb[0]).sum()) if sb.size and sb[0] > 0 else 0
    Ub = Ub[:, :rank_b]
    Q = Ub.T @ Psi
    U, s, Vt = np.linalg.svd(Q, full_matrices=False)
    s_max = float(s[0]) if s.size else 0.0
    if s.size < J or s_max == 0.0 or s[-1] <= _rtol((n, K)) * s_max:
        s_min = float(s[-1]) if s.size else 0.0
        raise RankError(
            f"projected design is rank deficient (J={J}, K={K}, rank(B)={rank_b}, "
            f"smallest singular value {s_min:.3e} vs largest {s_max:.3e})"
        )
    coeffs = Vt.T @ ((U.T @ (Ub.T @ y)) / s)
    residuals = y - Psi @ coeffs
    return coeffs, residuals, rank_b, float(s[-1]), s_max


def fit(dataset: Dataset, psi_spec: AnySpec, b_spec: AnySpec) -> NpivFit:
    """Sieve NPIV estimate of ``h_0`` with regressor basis ``psi_spec`` and instrument basis ``b_spec``."""
    J, K = psi_spec.dim, b_spec.dim
    if K < J:
        raise ValueError(f"instrument dimension K={K} smaller than J={J}")
    if dataset.n <= K:
        raise ValueError(f"need n > K, got n={dataset.n}, K={K}")
    Psi = design_matrix(psi_spec, dataset.regressors_for(psi_spec))
    B = design_matrix(b_spec, dataset.instruments_for(b_spec))
    return fit_from_designs(Psi, B, dataset.y, psi_spec, b_spec)


def fit_from_designs(Psi, B, y, psi_spec: AnySpec, b_spec: AnySpec) -> NpivFit:
    coeffs, resid, rank_b, s_min, s_max = fit_designs(Psi, B, y)
    n = Psi.shape[0]
    return NpivFit(
        coeffs=coeffs,
        psi_spec=psi_spec,
        b_spec=b_spec,
        residuals=resid,
        G_b=gram_from_design(B),
        S=B.T @ Psi / n,
        n=n,
        b_design=B,
        rank_b=rank_b,
        s_min=s_min,
        s_max=s_max,
    )


def predict(fit: NpivFit, points, deriv_multi_index: int | Sequence[int] = 0) -> NDArray[np.float64]:
    """``d^alpha h_hat`` at each point (``points`` is ``(m,)`` or ``(m, 2)`` for tensor bases)."""
    return design_matrix(fit.psi_spec, points, deriv_multi_index) @ fit.coeffs


def _inv_sqrt_psd(G: NDArray[np.float64], what: str, tol: float) -> NDArray[np.float64]:
    lam, V = np.linalg.eigh(G)
    if lam[0] <= tol * max(lam[-1], 1.0):
        raise RankError(f"{what} Gram matrix is singular (min eigenvalue {lam[0]:.3e})")
    return (V / np.sqrt(lam)) @ V.T


def whitened_cross(Psi: NDArray[np.float64], B: NDArray[np.float64], tol: float = 1e-12) -> NDArray[np.float64]:
    """``(B'B/n)^{-1/2} (B'Psi/n) (Psi'Psi/n)^{-1/2}``."""
    n = Psi.shape[0]
    Gb = _inv_sqrt_psd(gram_from_design(B), "instrument", tol)
    Gp = _inv_sqrt_psd(gram_from_design(Psi), "regressor", tol)
    return Gb @ (B.T @ Psi / n) @ Gp


def tau_hat_from_designs(Psi: NDArray[np.float64], B: NDArray[np.float64], tol: float = 1e-12) -> float:
    """Reciprocal smallest singular value of the whitened cross-moment matrix."""
    J = Psi.shape[1]
    if B.shape[1] < J:
        raise ValueError("need K >= J for the ill-posedness estimate")
    s = np.linalg.svd(whitened_cross(Psi, B, tol), compute_uv=False)
    s_min = s[J - 1]
    if s_min <= 0:
        return math.inf
    return float(1.0 / s_min)


def tau_hat(dataset: Dataset, psi_spec: AnySpec, b_spec: AnySpec) -> float:
    """Estimated sieve measure of ill-posedness for the pair ``(psi_spec, b_spec)``."""
    Psi = design_matrix(psi_spec, dataset.regressors_for(psi_spec))
    B = design_matrix(b_spec, dataset.instruments_for(b_spec))
    return tau_hat_from_designs(Psi, B)


def e_hat_from_design(Psi: NDArray[np.float64]) -> float:
    return float(np.linalg.eigvalsh(gram_from_design(Psi))[0])


def e_hat(dataset: Dataset, psi_spec: AnySpec) -> float:
    """Smallest eigenvalue of ``Psi'Psi/n`` (may be ~0; callers decide on rank failure)."""
    return e_hat_from_design(design_matrix(psi_spec, dataset.regressors_for(psi_spec)))


def _values(f, grid: EvalGrid | ArrayLike) -> NDArray[np.float64]:
    pts = grid.points if isinstance(grid, EvalGrid) else np.asarray(grid, dtype=float)
    if callable(f):
        return np.asarray(f(pts), dtype=float).ravel()
    vals = np.asarray(f, dtype=float).ravel()
    if vals.size != pts.shape[0]:
        raise ValueError("function values must match the grid length")
    return vals


def sup_distance(f, g, grid: EvalGrid | ArrayLike) -> float:
    """``max_i |f(t_i) - g(t_i)|``; ``f``/``g`` are callables or value arrays on the grid."""
    return float(np.max(np.abs(_values(f, grid) - _values(g, grid))))


def l2_distance(f, g, grid: EvalGrid | ArrayLike) -> float:
    """``sqrt(sum_i w_i (f(t_i) - g(t_i))^2)``; equal weights ``1/m`` when the grid has none."""
    diff = _values(f, grid) - _values(g, grid)
    w = grid.weights if isinstance(grid, EvalGrid) else None
    if w is None:
        w = np.full(diff.size, 1.0 / diff.size)
    return float(np.sqrt(np.sum(w * diff * diff)))


def as_callable(fit: NpivFit) -> Callable[[NDArray[np.float64]], NDArray[np.float64]]:
    return lambda pts: predict(fit, pts)


__all__ = [
    "Dataset",
    "DomainError",
    "EvalGrid",
    "NpivFit",
    "TensorBasisSpec",
    "data_domain",
    "e_hat",
    "fit",
    "fit_designs",
    "l2_distance",
    "predict",
    "sup_distance",
    "tau_hat",
    "tau_hat_from_designs",
    "whitened_cross",
]
