"""Sieve variance, t-statistics and score-bootstrap uniform confidence bands.

For a functional with derivative vector ``d`` (the functional applied to each
basis element) the sieve sandwich variance is

    d' A Omega A' d,   A = [S' G_b^{-1} S]^{-1} S' G_b^{-1},
    Omega = n^{-1} sum_i u_i^2 b^K(W_i) b^K(W_i)'.

The score bootstrap perturbs the scores ``b^K(W_i) u_i`` with i.i.d. mean-zero,
unit-variance multipliers and studentizes pointwise.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence, Union

import numpy as np

from .basis import design_matrix
from .exceptions import RankError, ZeroVarianceError
from .npiv import EvalGrid, NpivFit, predict
from .rng import SeedLike, substream

if TYPE_CHECKING:
    from numpy.typing import NDArray

SD_TOL = 1e-12

_SQ5 = math.sqrt(5.0)
MAMMEN_LOW = -(_SQ5 - 1.0) / 2.0
MAMMEN_HIGH = (_SQ5 + 1.0) / 2.0
MAMMEN_P_LOW = (_SQ5 + 1.0) / (2.0 * _SQ5)

WeightLaw = Union[str, Callable[[int, np.random.Generator], "NDArray[np.float64]"]]
WEIGHT_LAWS = ("mammen", "rademacher", "gaussian", "exponential")


@dataclass(frozen=True)
class FunctionalVector:
    """Derivative of a functional applied to each basis function."""

    d_vec: NDArray[np.float64]
    label: str = ""

    def __post_init__(self) -> None:
        d = np.asarray(self.d_vec, dtype=float).ravel()
        if not np.all(np.isfinite(d)):
            raise ValueError("functional vector has non-finite entries")
        object.__setattr__(self, "d_vec", d)


@dataclass(frozen=True)
class SieveVariance:
    v_sd_sq: float
    bread: NDArray[np.float64] = field(repr=False)
    meat: NDArray[np.float64] = field(repr=False)

    @property
    def sd(self) -> float:
        return math.sqrt(max(self.v_sd_sq, 0.0))


def omega_hat(fit: NpivFit) -> NDArray[np.float64]:
    """``n^{-1} sum_i u_i^2 b^K(W_i) b^K(W_i)'``."""
    Bu = fit.b_design * fit.residuals[:, None]
    Om = Bu.T @ Bu / fit.n
    return 0.5 * (Om + Om.T)


def _gb_inv_s(fit: NpivFit) -> NDArray[np.float64]:
    lam = np.linalg.eigvalsh(fit.G_b)
    if lam[0] <= SD_TOL * max(lam[-1], 1.0):
        raise RankError(f"instrument Gram matrix singular (min eigenvalue {lam[0]:.3e})")
    return np.linalg.solve(fit.G_b, fit.S)


def bread(fit: NpivFit) -> NDArray[np.float64]:
    """``[S' G_b^{-1} S]^{-1}``."""
    M = fit.S.T @ _gb_inv_s(fit)
    M = 0.5 * (M + M.T)
    lam = np.linalg.eigvalsh(M)
    if lam[0] <= SD_TOL * max(lam[-1], 1.0):
        raise RankError(f"S' G_b^-1 S is singular (min eigenvalue {lam[0]:.3e})")
    return np.linalg.inv(M)


def score_map(fit: NpivFit) -> NDArray[np.float64]:
    """``A = [S' G_b^{-1} S]^{-1} S' G_b^{-1}`` (``J x K``), mapping scores to coefficients."""
    return bread(fit) @ _gb_inv_s(fit).T


def coef_covariance(fit: NpivFit) -> NDArray[np.float64]:
    """``A Omega A'``: the sandwich for the coefficient vector (times ``n``)."""
    A = score_map(fit)
    V = A @ omega_hat(fit) @ A.T
    return 0.5 * (V + V.T)


def _dvec(d) -> NDArray[np.float64]:
    return d.d_vec if isinstance(d, FunctionalVector) else np.asarray(d, dtype=float).ravel()


def sieve_variance(fit: NpivFit, functional_vector) -> SieveVariance:
    d = _dvec(functional_vector)
    if d.size != fit.J:
        raise ValueError(f"functional vector has length {d.size}, fit has J={fit.J}")
    br = bread(fit)
    Om = omega_hat(fit)
    A = br @ _gb_inv_s(fit).T
    v = A.T @ d
    return SieveVariance(float(v @ Om @ v), br, Om)


def sieve_sd(fit: NpivFit, functional_vector) -> float:
    """Estimated sieve standard deviation ``||v*||_sd`` of a functional."""
    return sieve_variance(fit, functional_vector).sd


def t_statistic(fit: NpivFit, functional_vector, estimate: float, null_value: float = 0.0) -> float:
    """``sqrt(n) (estimate - null_value) / ||v*||_sd``."""
    sd = sieve_sd(fit, functional_vector)
    if sd <= SD_TOL:
        raise ZeroVarianceError("sieve standard deviation is zero; t-statistic undefined")
    return math.sqrt(fit.n) * (estimate - null_value) / sd


def draw_weights(law: WeightLaw, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """I.i.d. mean-zero, unit-variance bootstrap multipliers.

    ``mammen``: ``-(sqrt5-1)/2`` w.p. ``(sqrt5+1)/(2 sqrt5)``, else ``(sqrt5+1)/2``;
    ``rademacher``: +-1; ``gaussian``: N(0,1); ``exponential``: Exp(1) - 1.
    A callable ``law(n, rng)`` is used as is.
    """
    if callable(law):
        return np.asarray(law(n, rng), dtype=float)
    if law == "mammen":
        return np.where(rng.random(n) < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)
    if law == "rademacher":
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)
    if law == "gaussian":
        return rng.standard_normal(n)
    if law == "exponential":
        return rng.exponential(1.0, n) - 1.0
    raise ValueError(f"unknown weight law {law!r}; expected one of {WEIGHT_LAWS}")


@dataclass(frozen=True)
class BootstrapConfig:
    """Score-bootstrap settings; rep ``b`` draws from ``substream(seed, b)``."""

    reps: int = 1000
    weight_law: WeightLaw = "mammen"
    seed: SeedLike = 0
    levels: tuple[float, ...] = (0.90, 0.95, 0.99)

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ValueError("need at least one bootstrap replication")
        levels = tuple(sorted(float(a) for a in self.levels))
        if not all(0.0 < a < 1.0 for a in levels):
            raise ValueError("confidence levels must lie in (0, 1)")
        object.__setattr__(self, "levels", levels)
        if isinstance(self.weight_law, str) and self.weight_law not in WEIGHT_LAWS:
            raise ValueError(f"unknown weight law {self.weight_law!r}")


def _grid_points(grid) -> NDArray[np.float64]:
    return grid.points if isinstance(grid, EvalGrid) else np.asarray(grid, dtype=float)


def _pointwise(fit: NpivFit, D: NDArray[np.float64]):
    """``A`` and the per-row sieve sd of the evaluation functionals in ``D``."""
    A = score_map(fit)
    L = D @ A  # G x K
    Om = omega_hat(fit)
    sd = np.sqrt(np.maximum(np.einsum("gk,kl,gl->g", L, Om, L), 0.0))
    return A, sd


def bootstrap_sups_from(
    fit: NpivFit, D: NDArray[np.float64], config: BootstrapConfig
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    """Sup-statistics for the functionals with derivative rows ``D``.

    Returns ``(sups, sd, keep)``; grid rows with zero sieve sd are dropped from
    the sup (with a warning) and flagged in ``keep``.
    """
    A, sd = _pointwise(fit, D)
    keep = sd > SD_TOL * max(1.0, float(sd.max(initial=0.0)))
    if not keep.any():
        raise ZeroVarianceError("sieve standard deviation is zero at every grid point")
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} grid points with zero sieve sd dropped from the sup", stacklevel=3)
    Dk = D[keep] / sd[keep][:, None]  # G' x J
    scores = fit.b_design * fit.residuals[:, None]  # n x K
    root_n = math.sqrt(fit.n)
    sups = np.empty(config.reps)
    chunk = 256
    for start in range(0, config.reps, chunk):
        stop = min(start + chunk, config.reps)
        W = np.stack([draw_weights(config.weight_law, fit.n, substream(config.seed, b)) for b in range(start, stop)])
        V = (W @ scores / root_n) @ A.T  # reps x J, computed once per rep
        sups[start:stop] = np.abs(V @ Dk.T).max(axis=1)
    return sups, sd, keep


def score_bootstrap_sup(fit: NpivFit, grid, config: BootstrapConfig, deriv=0) -> NDArray[np.float64]:
    """``B`` draws of ``sup_t |Z*(t)|`` for the (derivative) evaluation process on ``grid``."""
    D = design_matrix(fit.psi_spec, _grid_points(grid), deriv)
    return bootstrap_sups_from(fit, D, config)[0]


def empirical_quantile(values: NDArray[np.float64], level: float) -> float:
    """Order statistic ``ceil(level * B)`` of the sorted values."""
    v = np.sort(np.asarray(values, dtype=float))
    k = min(max(math.ceil(level * v.size - 1e-12), 1), v.size)
    return float(v[k - 1])


@dataclass(frozen=True)
class UniformBand:
    """``center(t) +- crit(level) * sd(t)``, with ``sd = ||v*_t||_sd / sqrt(n)``."""

    grid: NDArray[np.float64]
    center: NDArray[np.float64]
    sd: NDArray[np.float64]
    crit: dict[float, float]
    sups: NDArray[np.float64] = field(repr=False)

    @property
    def levels(self) -> tuple[float, ...]:
        return tuple(sorted(self.crit))

    def halfwidth(self, level: float) -> NDArray[np.float64]:
        c = self.crit[level]
        if math.isinf(c):
            return np.full(self.sd.shape, math.inf)
        return c * self.sd

    def lower(self, level: float) -> NDArray[np.float64]:
        return self.center - self.halfwidth(level)

    def upper(self, level: float) -> NDArray[np.float64]:
        return self.center + self.halfwidth(level)

    def covers(self, values, level: float) -> bool:
        """True when ``values`` (on the band grid) lie inside the band at every point."""
        v = np.asarray(values, dtype=float)
        return bool(np.all(np.abs(v - self.center) <= self.halfwidth(level)))

    def columns(self) -> list[str]:
        cols = ["t", "center", "sd"]
        for a in self.levels:
            cols += [f"lo_{a:g}", f"hi_{a:g}"]
        return cols

    def to_csv(self, path: str | Path) -> None:
        """Plot-data export: ``t, center, sd`` and one ``lo``/``hi`` pair per level."""
        data = [self.grid.reshape(self.grid.shape[0], -1)[:, 0], self.center, self.sd]
        for a in self.levels:
            data += [self.lower(a), self.upper(a)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.columns())
            for row in np.column_stack(data):
                wr.writerow([f"{v:.10g}" for v in row])


def uniform_band(
    fit: NpivFit,
    grid,
    config: BootstrapConfig,
    deriv: int | Sequence[int] = 0,
    crit_override: dict[float, float] | None = None,
) -> UniformBand:
    """Score-bootstrap uniform confidence band for ``d^alpha h_0`` over ``grid``."""
    pts = _grid_points(grid)
    D = design_matrix(fit.psi_spec, pts, deriv)
    sups, sd, _ = bootstrap_sups_from(fit, D, config)
    crit = {a: empirical_quantile(sups, a) for a in config.levels}
    if crit_override:
        crit.update(crit_override)
    return UniformBand(
        grid=pts,
        center=predict(fit, pts, deriv),
        sd=sd / math.sqrt(fit.n),
        crit=crit,
        sups=sups,
    )
