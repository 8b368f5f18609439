"""Exact consumer surplus and deadweight loss of a price change.

Consumer surplus ``S`` along a price path ``p(t)``, ``t`` in ``[0, 1]``, at fixed
income ``y`` solves

    dS/dt = -h(p(t), y - S(t)) p'(t),    S(1) = 0,

and ``CS = S(0)``.  Deadweight loss is ``CS - (p1 - p0) h(p1, y)``.  The ODE is
integrated backward from ``t = 1`` with the classical fourth-order Runge-Kutta
scheme on a fixed grid; the same grid carries the quadrature for the
derivative vectors used by the sieve variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .basis import TensorBasisSpec, design_matrix
from .exceptions import DomainError
from .inference import FunctionalVector, sieve_sd
from .npiv import NpivFit, predict

if TYPE_CHECKING:
    from numpy.typing import NDArray

Demand = Callable[[float, float], float]


@dataclass(frozen=True)
class PricePath:
    """Price path from ``p0`` to ``p1`` at income ``y``; linear unless ``price``/``dprice`` are given."""

    p0: float
    p1: float
    y: float
    steps: int = 1000
    price: Callable[[float], float] | None = None
    dprice: Callable[[float], float] | None = None

    def __post_init__(self) -> None:
        if self.steps < 2:
            raise ValueError("ODE grid needs at least 2 steps")
        if (self.price is None) != (self.dprice is None):
            raise ValueError("give both price and dprice, or neither")

    def p(self, t):
        if self.price is None:
            return self.p0 + np.asarray(t, dtype=float) * (self.p1 - self.p0)
        return np.vectorize(self.price, otypes=[float])(t) if np.ndim(t) else float(self.price(t))

    def dp(self, t):
        if self.dprice is None:
            return np.full(np.shape(t), self.p1 - self.p0) if np.ndim(t) else self.p1 - self.p0
        return np.vectorize(self.dprice, otypes=[float])(t) if np.ndim(t) else float(self.dprice(t))

    @property
    def nodes(self) -> NDArray[np.float64]:
        return np.linspace(0.0, 1.0, self.steps + 1)


def solve_cs_ode(h: Demand, path: PricePath) -> tuple[float, NDArray[np.float64]]:
    """RK4 solution of the surplus ODE; returns ``(S(0), S at every grid node)``.

    ``h(p, income)`` takes scalars.  A ``DomainError`` raised by ``h`` is
    re-raised naming the first offending ``t``.
    """
    steps = path.steps
    dt = 1.0 / steps
    S = np.empty(steps + 1)
    S[steps] = 0.0

    def rhs(t: float, s: float) -> float:
        try:
            return -float(h(float(path.p(t)), path.y - s)) * float(path.dp(t))
        except DomainError as exc:
            raise DomainError(f"surplus path leaves the demand domain at t={t:.6g}: {exc}") from exc

    for k in range(steps, 0, -1):
        t = k * dt
        s = S[k]
        k1 = rhs(t, s)
        k2 = rhs(t - dt / 2, s - dt / 2 * k1)
        k3 = rhs(t - dt / 2, s - dt / 2 * k2)
        k4 = rhs(t - dt, s - dt * k3)
        S[k - 1] = s - dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(S[0]), S


def _points(fit: NpivFit, p, income) -> NDArray[np.float64]:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    income = np.broadcast_to(np.asarray(income, dtype=float), p.shape)
    if isinstance(fit.psi_spec, TensorBasisSpec):
        return np.column_stack([p, income])
    return p


def _clamp_income(fit: NpivFit, income, clamp: bool):
    if not clamp or not isinstance(fit.psi_spec, TensorBasisSpec):
        return income
    lo, hi = fit.psi_spec.spec_b.domain
    clipped = np.clip(income, lo, hi)
    if np.any(clipped != income):
        warnings.warn("income left the fitted domain along the price path; clamped", stacklevel=4)
    return clipped


def demand_from_fit(fit: NpivFit, clamp: bool = False) -> Demand:
    """``h_hat(p, income)`` as a scalar callable (income ignored for univariate fits)."""

    def h(p: float, income: float) -> float:
        income = _clamp_income(fit, income, clamp)
        return float(predict(fit, _points(fit, p, income))[0])

    return h


def _basis_at(fit: NpivFit, p, income, deriv=0) -> NDArray[np.float64]:
    if isinstance(fit.psi_spec, TensorBasisSpec):
        if deriv == (0, 1) and fit.psi_spec.spec_b.max_deriv < 1:
            # piecewise-constant income factor: no income derivative
            return np.zeros((np.size(p), fit.J))
        return design_matrix(fit.psi_spec, _points(fit, p, income), deriv)
    if deriv not in (0, (0, 0)):
        # univariate demand does not depend on income
        return np.zeros((np.size(p), fit.J))
    return design_matrix(fit.psi_spec, _points(fit, p, income))


def cs_functional(fit: NpivFit, path: PricePath, clamp: bool = False) -> float:
    """Plug-in exact consumer surplus ``f_CS(h_hat)``."""
    return solve_cs_ode(demand_from_fit(fit, clamp), path)[0]


def dwl_functional(fit: NpivFit, path: PricePath, clamp: bool = False) -> float:
    """Plug-in deadweight loss ``f_CS(h_hat) - (p1 - p0) h_hat(p1, y)``."""
    cs = cs_functional(fit, path, clamp)
    return cs - (path.p1 - path.p0) * demand_from_fit(fit, clamp)(path.p1, path.y)


def _cumtrapz(f: NDArray[np.float64], dt: float) -> NDArray[np.float64]:
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * dt * (f[1:] + f[:-1]))
    return out


def _trapz(f: NDArray[np.float64], dt: float) -> NDArray[np.float64]:
    return dt * (0.5 * f[0] + f[1:-1].sum(axis=0) + 0.5 * f[-1])


def deriv_vector_cs(
    fit: NpivFit, path: PricePath, s_path: NDArray[np.float64] | None = None, clamp: bool = False
) -> FunctionalVector:
    """Derivative of ``f_CS`` at ``h_hat`` in the direction of each basis function.

    ``int_0^1 psi(p(t), y - S(t)) exp(-int_0^t d2h(p(v), y - S(v)) p'(v) dv) p'(t) dt``,
    by trapezoid quadrature on the ODE grid.
    """
    if s_path is None:
        _, s_path = solve_cs_ode(demand_from_fit(fit, clamp), path)
    t = path.nodes
    dt = 1.0 / path.steps
    p = np.asarray(path.p(t), dtype=float)
    dp = np.asarray(path.dp(t), dtype=float)
    income = _clamp_income(fit, path.y - s_path, clamp)
    Psi = _basis_at(fit, p, income)
    d2h = _basis_at(fit, p, income, (0, 1)) @ fit.coeffs
    weight = np.exp(-_cumtrapz(d2h * dp, dt)) * dp
    return FunctionalVector(_trapz(Psi * weight[:, None], dt), "d f_CS / d h")


def deriv_vector_dwl(fit: NpivFit, path: PricePath, d_cs: FunctionalVector | None = None, clamp: bool = False) -> FunctionalVector:
    """Derivative of ``f_DWL``: ``d_cs - (p1 - p0) psi(p1, y)``."""
    if d_cs is None:
        d_cs = deriv_vector_cs(fit, path, clamp=clamp)
    psi_end = _basis_at(fit, path.p1, _clamp_income(fit, np.asarray(path.y), clamp))[0]
    return FunctionalVector(d_cs.d_vec - (path.p1 - path.p0) * psi_end, "d f_DWL / d h")


@dataclass(frozen=True)
class WelfareEstimate:
    """Point estimates, derivative vectors and sieve standard deviations.

    ``sd_cs``/``sd_dwl`` are ``V_hat^{1/2}`` (the ``sqrt(n)``-scale sieve sd);
    standard errors are ``sd / sqrt(n)``.  t-statistics are ``None`` when the
    sd is zero.
    """

    cs: float
    dwl: float
    d_cs: FunctionalVector
    d_dwl: FunctionalVector
    sd_cs: float
    sd_dwl: float
    s_path: NDArray[np.float64]
    n: int
    h_end: float

    @property
    def se_cs(self) -> float:
        return self.sd_cs / math.sqrt(self.n)

    @property
    def se_dwl(self) -> float:
        return self.sd_dwl / math.sqrt(self.n)

    def t_cs(self, null_value: float = 0.0) -> float | None:
        return _t(self.cs, null_value, self.sd_cs, self.n)

    def t_dwl(self, null_value: float = 0.0) -> float | None:
        return _t(self.dwl, null_value, self.sd_dwl, self.n)

    def to_dict(self) -> dict:
        return {
            "cs": self.cs,
            "dwl": self.dwl,
            "sd_cs": self.sd_cs,
            "sd_dwl": self.sd_dwl,
            "se_cs": self.se_cs,
            "se_dwl": self.se_dwl,
            "t_cs": self.t_cs(),
            "t_dwl": self.t_dwl(),
        }


def _t(est: float, null: float, sd: float, n: int) -> float | None:
    if sd <= 1e-12:
        return None
    return math.sqrt(n) * (est - null) / sd


def welfare_estimate(fit: NpivFit, path: PricePath, clamp: bool = False) -> WelfareEstimate:
    """CS and DWL with their sieve variances for one price change."""
    h = demand_from_fit(fit, clamp)
    cs, s_path = solve_cs_ode(h, path)
    h_end = h(path.p1, path.y)
    dwl = cs - (path.p1 - path.p0) * h_end
    d_cs = deriv_vector_cs(fit, path, s_path, clamp)
    d_dwl = deriv_vector_dwl(fit, path, d_cs, clamp)
    return WelfareEstimate(
        cs=cs,
        dwl=dwl,
        d_cs=d_cs,
        d_dwl=d_dwl,
        sd_cs=sieve_sd(fit, d_cs),
        sd_dwl=sieve_sd(fit, d_dwl),
        s_path=s_path,
        n=fit.n,
        h_end=h_end,
    )


__all__ = [
    "PricePath",
    "WelfareEstimate",
    "cs_functional",
    "demand_from_fit",
    "deriv_vector_cs",
    "deriv_vector_dwl",
    "dwl_functional",
    "solve_cs_ode",
    "welfare_estimate",
]
