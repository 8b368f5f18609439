"""Data-driven choice of the sieve dimension.

Three pieces:

* ``j_max_hat``   -- upper end of the index set, the first dimension at which
  ``tau_J zeta(J)^2 sqrt(L(J) log(n) / n) >= 1`` with ``L(J) = a log log J``.
* ``v_sup_hat``   -- the variance bound ``tau_j xi_j sqrt(log(n) / (n e_j))``.
* ``lepski_select`` -- the smallest ``j`` whose fit stays within
  ``sqrt(2) sigma_bar (V(j) + V(l))`` (sup norm on a grid) of every larger
  candidate ``l``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Union

import numpy as np

from .basis import Sieve, design_matrix, gram_from_design, xi_sup_l1
from .exceptions import NoCandidatesError, RankError
from .npiv import Dataset, EvalGrid, NpivFit, fit_from_designs, predict, tau_hat_from_designs

if TYPE_CHECKING:
    from numpy.typing import NDArray

KRule = Union[str, Callable[[int], int]]

DEFAULT_J_CAP = 200


@dataclass(frozen=True)
class LepskiConfig:
    """Tuning of the selector.

    ``sigma_bar`` may be the string ``"estimate"``: the residual standard
    deviation of the fit at ``J_max`` is then used.  ``zeta_rule`` is
    ``"auto"`` (``J^2`` when either basis is an orthogonal polynomial family,
    ``J`` otherwise), ``"linear"`` (``J``) or ``"quadratic"`` (``J^2``).

    ``jmax_scan="all"`` evaluates the ``J_max`` threshold at every buildable
    dimension (non-nested B-spline knot counts included); ``"nested"`` only at
    the nested ones.  Candidate fits always use nested dimensions.
    """

    psi_sieve: Sieve = field(default_factory=lambda: Sieve("bspline", 4))
    b_sieve: Sieve = field(default_factory=lambda: Sieve("bspline", 4))
    sigma_bar: float | str = 1.0
    a: float = 0.1
    k_rule: KRule = "identity"
    zeta_rule: str = "auto"
    grid: EvalGrid | None = None
    j_cap: int = DEFAULT_J_CAP
    jmax_scan: str = "all"

    def __post_init__(self) -> None:
        if isinstance(self.sigma_bar, str):
            if self.sigma_bar != "estimate":
                raise ValueError("sigma_bar must be positive or 'estimate'")
        elif not self.sigma_bar > 0:
            raise ValueError("sigma_bar must be positive")
        if not self.a > 0:
            raise ValueError("a must be positive")
        if self.zeta_rule not in ("auto", "linear", "quadratic"):
            raise ValueError(f"unknown zeta rule {self.zeta_rule!r}")
        if isinstance(self.k_rule, str) and self.k_rule not in ("identity", "double"):
            raise ValueError(f"unknown K rule {self.k_rule!r}")
        if self.jmax_scan not in ("all", "nested"):
            raise ValueError(f"unknown J_max scan {self.jmax_scan!r}")

    def k_target(self, j: int) -> int:
        if self.k_rule == "identity":
            return j
        if self.k_rule == "double":
            return 2 * j
        k = int(self.k_rule(j))
        if k < j:
            raise ValueError(f"K rule gave K={k} < J={j}")
        return k

    def k_of(self, j: int, nested: bool = True) -> int:
        """Instrument dimension for ``j``: smallest admissible ``b`` dimension >= the rule's target."""
        return self.b_sieve.smallest_at_least(self.k_target(j), nested)

    def zeta_sq(self, j: int) -> float:
        rule = self.zeta_rule
        if rule == "auto":
            poly = self.psi_sieve.is_polynomial or self.b_sieve.is_polynomial
            rule = "quadratic" if poly else "linear"
        return float(j * j) if rule == "quadratic" else float(j)

    def resolved(self, dataset: Dataset) -> LepskiConfig:
        """Fill data-dependent defaults: basis domains and the sup-norm grid."""
        psi = self.psi_sieve.resolved(_xcols(dataset, self.psi_sieve))
        b = self.b_sieve.resolved(_wcols(dataset, self.b_sieve))
        grid = self.grid if self.grid is not None else default_grid(dataset, psi.tensor)
        return replace(self, psi_sieve=psi, b_sieve=b, grid=grid)


def _xcols(dataset: Dataset, sieve: Sieve) -> NDArray[np.float64]:
    return dataset.x[:, :2] if sieve.tensor else dataset.x[:, 0]


def _wcols(dataset: Dataset, sieve: Sieve) -> NDArray[np.float64]:
    return dataset.w[:, :2] if sieve.tensor else dataset.w[:, 0]


def default_grid(dataset: Dataset, tensor: bool = False, size: int = 1000) -> EvalGrid:
    """1000 points over the central [5%, 95%] quantile range (a 32 x 32 product for tensor bases)."""
    if not tensor:
        return EvalGrid.central(dataset.x[:, 0], size)
    side = int(round(math.sqrt(size)))
    axes = [np.linspace(*np.quantile(dataset.x[:, k], (0.05, 0.95)), side) for k in range(2)]
    g1, g2 = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    return EvalGrid(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))


def j_min(n: int, sieve: Sieve) -> int:
    """``max(floor(log log n), smallest basis dimension)``."""
    base = math.floor(math.log(math.log(n))) if n > math.e else 0
    return max(base, sieve.min_dim, 1)


def _jmax_statistic(tau: float, zeta_sq: float, a: float, j: int, n: int) -> float:
    L = a * math.log(math.log(j)) if j > 1 else -math.inf
    if L <= 0:
        # L(J) <= 0 for J <= e: the threshold cannot be reached
        return 0.0
    return tau * zeta_sq * math.sqrt(L * math.log(n) / n)


class _Designs:
    """Per-dataset cache of design matrices keyed by dimension."""

    def __init__(self, dataset: Dataset, config: LepskiConfig):
        self.dataset = dataset
        self.config = config
        self._psi: dict[int, NDArray[np.float64]] = {}
        self._b: dict[int, NDArray[np.float64]] = {}

    # nested and non-nested specs coincide at nested dimensions, so one cache suffices
    def psi(self, j: int) -> NDArray[np.float64]:
        if j not in self._psi:
            spec = self.config.psi_sieve.spec(j, nested=False)
            self._psi[j] = design_matrix(spec, _xcols(self.dataset, self.config.psi_sieve))
        return self._psi[j]

    def b(self, k: int) -> NDArray[np.float64]:
        if k not in self._b:
            spec = self.config.b_sieve.spec(k, nested=False)
            self._b[k] = design_matrix(spec, _wcols(self.dataset, self.config.b_sieve))
        return self._b[k]

    def tau(self, j: int, nested: bool = True) -> float:
        return tau_hat_from_designs(self.psi(j), self.b(self.config.k_of(j, nested)))


@dataclass
class JmaxScan:
    j_min: int
    j_max_hat: int
    capped: bool
    taus: dict[int, float]
    statistics: dict[int, float]


def _scan_jmax(designs: _Designs, config: LepskiConfig) -> JmaxScan:
    n = designs.dataset.n
    jm = j_min(n, config.psi_sieve)
    taus: dict[int, float] = {}
    stats: dict[int, float] = {}
    nested = config.jmax_scan == "nested"
    scanned = [j for j in config.psi_sieve.dims(jm + 1, config.j_cap, nested) if config.k_of(j, nested) < n]
    prev = None
    for j in scanned:
        try:
            tau = designs.tau(j, nested)
        except RankError:
            # Gram singular: no larger dimension can be estimated on this sample
            fallback = prev if prev is not None else j
            warnings.warn(f"J_max scan stopped at J={j}: singular Gram matrix; using J={fallback}", stacklevel=3)
            return JmaxScan(jm, fallback, True, taus, stats)
        taus[j] = tau
        stats[j] = _jmax_statistic(tau, config.zeta_sq(j), config.a, j, n)
        if stats[j] >= 1.0:
            return JmaxScan(jm, j, False, taus, stats)
        prev = j
    capped_at = prev if prev is not None else jm
    warnings.warn(f"J_max rule not met up to the cap {config.j_cap}; using J={capped_at}", stacklevel=3)
    return JmaxScan(jm, capped_at, True, taus, stats)


def j_max_hat(dataset: Dataset, config: LepskiConfig) -> int:
    """Data-driven upper end of the index set.

    Scans admissible dimensions ``J > J_min`` in increasing order and returns the
    first one meeting the threshold; returns the largest scanned dimension (with a
    warning) when none does below ``config.j_cap``.
    """
    if dataset.n < 10:
        raise ValueError("J_max rule needs n >= 10")
    config = config.resolved(dataset)
    return _scan_jmax(_Designs(dataset, config), config).j_max_hat


def _v_sup(designs: _Designs, config: LepskiConfig, j: int) -> tuple[float, float, float, float]:
    n = designs.dataset.n
    tau = designs.tau(j)
    xi = xi_sup_l1(config.psi_sieve.spec(j), config.grid.points)
    e = float(np.linalg.eigvalsh(gram_from_design(designs.psi(j)))[0])
    if e <= 0:
        raise RankError(f"regressor Gram matrix singular at J={j}")
    return tau * xi * math.sqrt(math.log(n) / (n * e)), tau, xi, e


def v_sup_hat(dataset: Dataset, j: int, config: LepskiConfig) -> float:
    """Estimated sup-norm variance bound at dimension ``j``."""
    config = config.resolved(dataset)
    return _v_sup(_Designs(dataset, config), config, j)[0]


@dataclass
class PairTest:
    l: int
    distance: float
    bound: float
    passed: bool


@dataclass
class LepskiResult:
    """Everything the selector computed, kept for diagnostics."""

    j_min: int
    j_max_hat: int
    candidates: list[int]
    v_hat: dict[int, float]
    tau: dict[int, float]
    xi: dict[int, float]
    e: dict[int, float]
    k: dict[int, int]
    distances: dict[tuple[int, int], float]
    pairwise: dict[int, list[PairTest]]
    j_hat: int
    sigma_bar: float
    fits: dict[int, NpivFit] = field(repr=False)
    capped: bool = False
    grid: EvalGrid | None = field(default=None, repr=False)

    def reselect(self, sigma_bar: float) -> LepskiResult:
        """Rerun the comparison step with another ``sigma_bar`` on the same fits."""
        pairwise, j_hat = _compare(self.candidates, self.distances, self.v_hat, sigma_bar)
        return replace(self, pairwise=pairwise, j_hat=j_hat, sigma_bar=float(sigma_bar))

    def summary(self) -> dict:
        return {
            "j_min": self.j_min,
            "j_max_hat": self.j_max_hat,
            "j_hat": self.j_hat,
            "capped": self.capped,
            "sigma_bar": self.sigma_bar,
            "candidates": [
                {
                    "J": j,
                    "K": self.k[j],
                    "tau_hat": self.tau[j],
                    "xi": self.xi[j],
                    "e_hat": self.e[j],
                    "v_sup_hat": self.v_hat[j],
                    "passed": all(t.passed for t in self.pairwise[j]),
                }
                for j in self.candidates
            ],
        }


def _compare(candidates, distances, v_hat, sigma_bar):
    pairwise: dict[int, list[PairTest]] = {}
    j_hat = None
    root2 = math.sqrt(2.0)
    for j in candidates:
        tests = []
        for l in candidates:
            if l <= j:
                continue
            d = distances[(j, l)]
            bound = root2 * sigma_bar * (v_hat[j] + v_hat[l])
            tests.append(PairTest(l, d, bound, d <= bound))
        pairwise[j] = tests
        if j_hat is None and all(t.passed for t in tests):
            j_hat = j
    return pairwise, j_hat


def lepski_select(dataset: Dataset, config: LepskiConfig) -> LepskiResult:
    """Fit every candidate in ``[J_min, J_max_hat]`` and apply the pairwise sup-norm test."""
    if dataset.n < 10:
        raise ValueError("selection needs n >= 10")
    config = config.resolved(dataset)
    designs = _Designs(dataset, config)
    scan = _scan_jmax(designs, config)
    candidates = config.psi_sieve.dims(scan.j_min, scan.j_max_hat)
    if not candidates:
        raise NoCandidatesError(f"no admissible dimension in [{scan.j_min}, {scan.j_max_hat}]")

    fits: dict[int, NpivFit] = {}
    values: dict[int, NDArray[np.float64]] = {}
    v_hat, taus, xis, es, ks = {}, {}, {}, {}, {}
    for j in candidates:
        k = config.k_of(j)
        f = fit_from_designs(designs.psi(j), designs.b(k), dataset.y, config.psi_sieve.spec(j), config.b_sieve.spec(k))
        fits[j], ks[j] = f, k
        values[j] = predict(f, config.grid.points)
        v_hat[j], taus[j], xis[j], es[j] = _v_sup(designs, config, j)

    sigma_bar = config.sigma_bar
    if sigma_bar == "estimate":
        top = fits[candidates[-1]]
        sigma_bar = float(np.sqrt(np.mean(top.residuals**2)))

    distances = {}
    for a_i, j in enumerate(candidates):
        for l in candidates[a_i + 1 :]:
            distances[(j, l)] = float(np.max(np.abs(values[j] - values[l])))
    pairwise, j_hat = _compare(candidates, distances, v_hat, sigma_bar)
    return LepskiResult(
        j_min=scan.j_min,
        j_max_hat=scan.j_max_hat,
        candidates=candidates,
        v_hat=v_hat,
        tau=taus,
        xi=xis,
        e=es,
        k=ks,
        distances=distances,
        pairwise=pairwise,
        j_hat=j_hat,
        sigma_bar=float(sigma_bar),
        fits=fits,
        capped=scan.capped,
        grid=config.grid,
    )


def adaptive_fit(dataset: Dataset, config: LepskiConfig) -> tuple[NpivFit, LepskiResult]:
    """The data-driven estimator ``h_hat_{J_hat}`` together with the selection diagnostics."""
    result = lepski_select(dataset, config)
    return result.fits[result.j_hat], result
