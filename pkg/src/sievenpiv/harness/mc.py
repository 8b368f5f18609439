"""Replication runners for the selection tables and the band coverage table.

Replication ``r`` draws its sample from ``substream(seed, r)`` and bootstrap
rep ``b`` inside it from ``substream((seed, r), b)``, so every number is a
function of ``(seed, r, b)`` alone.  Replications run through a thread pool
whose results are collected in index order; the thread count never changes
the output.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..adaptive import LepskiConfig, lepski_select
from ..basis import Sieve
from ..exceptions import FailureBudgetError, SieveError
from ..inference import BootstrapConfig, uniform_band
from ..npiv import EvalGrid, predict
from ..rng import substream
from .dgp import NpDesign, gen_np_design

log = logging.getLogger(__name__)

THREADS_ENV = "NPIV_THREADS"
UNIT = (0.0, 1.0)


def sieve_from_label(label: str, domain: tuple[float, float] = UNIT) -> Sieve:
    """``"4"``/``"5"``: B-spline of that order; ``"Leg"``: Legendre; ``"Cos"``: cosine."""
    key = str(label).strip()
    low = key.lower()
    if low in ("leg", "legendre"):
        return Sieve("legendre", None, domain)
    if low in ("cos", "cosine"):
        return Sieve("cosine", None, domain)
    try:
        order = int(key)
    except ValueError:
        raise ValueError(f"unknown basis label {label!r}; use a spline order, 'Leg' or 'Cos'") from None
    if order < 1:
        raise ValueError(f"spline order must be positive, got {order}")
    return Sieve("bspline", order, domain)


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class McConfig:
    """One Monte Carlo experiment: a design, a set of table cells and the grids.

    Cells are the product of ``combos`` (``(r_J, r_K)`` basis labels) and
    ``k_rules``; each cell is evaluated at every ``sigma_bars`` value on the
    same candidate fits.  Coverage runs use ``sigma_bars[0]``.
    """

    design: NpDesign = field(default_factory=NpDesign)
    reps: int = 1000
    combos: tuple[tuple[str, str], ...] = (("4", "4"),)
    k_rules: tuple[str, ...] = ("identity",)
    sigma_bars: tuple[float, ...] = (1.0, 0.1)
    seed: int = 0
    loss_range: tuple[float, float] = UNIT
    loss_points: int = 1000
    select_range: tuple[float, float] = (0.05, 0.95)
    select_points: int = 1000
    boot_reps: int = 1000
    band_range: tuple[float, float] = (0.05, 0.95)
    band_points: int = 100
    levels: tuple[float, ...] = (0.90, 0.95, 0.99)
    failure_budget: float = 0.01

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.combos or not self.k_rules or not self.sigma_bars:
            raise ValueError("need at least one basis combo, K rule and sigma_bar")
        for rj, rk in self.combos:
            sieve_from_label(rj), sieve_from_label(rk)
        for k in self.k_rules:
            if k not in ("identity", "double"):
                raise ValueError(f"unknown K rule {k!r}")
        if any(not s > 0 for s in self.sigma_bars):
            raise ValueError("sigma_bar values must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        object.__setattr__(self, "combos", tuple((str(a), str(b)) for a, b in self.combos))
        object.__setattr__(self, "k_rules", tuple(self.k_rules))
        object.__setattr__(self, "sigma_bars", tuple(float(s) for s in self.sigma_bars))
        object.__setattr__(self, "levels", tuple(sorted(float(a) for a in self.levels)))

    @property
    def cells(self) -> list[tuple[str, str, str]]:
        return [(rj, rk, k) for rj, rk in self.combos for k in self.k_rules]

    def lepski_config(self, rj: str, rk: str, k_rule: str, sigma_bar: float | None = None) -> LepskiConfig:
        return LepskiConfig(
            psi_sieve=sieve_from_label(rj),
            b_sieve=sieve_from_label(rk),
            sigma_bar=self.sigma_bars[0] if sigma_bar is None else sigma_bar,
            k_rule=k_rule,
            grid=EvalGrid.uniform(*self.select_range, self.select_points),
        )

    def loss_grid(self) -> EvalGrid:
        return EvalGrid.uniform(*self.loss_range, self.loss_points)

    def band_grid(self) -> np.ndarray:
        return np.linspace(*self.band_range, self.band_points)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["design"] = {"kind": self.design.kind, "n": self.design.n}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> McConfig:
        d = dict(d)
        d["design"] = NpDesign(**d["design"])
        for key in ("loss_range", "select_range", "band_range", "k_rules", "sigma_bars", "levels"):
            d[key] = tuple(d[key])
        d["combos"] = tuple(tuple(c) for c in d["combos"])
        return cls(**d)


def parallel_map(func: Callable[[int], object], n: int, threads: int | None = None) -> list:
    """``[func(0), ..., func(n-1)]`` computed on ``threads`` workers, in index order."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        return [func(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, range(n)))


def _check_budget(cell: str, failures: int, reps: int, budget: float) -> None:
    if failures > budget * reps:
        raise FailureBudgetError(f"{cell}: {failures} of {reps} replications failed (budget {budget:.0%})")
    if failures:
        log.warning("%s: %d of %d replications failed and were excluded", cell, failures, reps)


def _cell_name(rj: str, rk: str, k_rule: str) -> str:
    return f"{rj}/{rk} K={'J' if k_rule == 'identity' else '2J'}"


# ---------------------------------------------------------------- selection tables


def lepski_replication(config: McConfig, r: int) -> dict:
    """Losses and ratios of one replication for every cell and ``sigma_bar``.

    Failed cells map to ``{"error": message}``.
    """
    design = config.design
    data = gen_np_design(design, substream(config.seed, r))
    loss_grid = config.loss_grid()
    h0 = design.h0(loss_grid.points)
    out: dict = {}
    for rj, rk, k_rule in config.cells:
        name = _cell_name(rj, rk, k_rule)
        try:
            res = lepski_select(data, config.lepski_config(rj, rk, k_rule))
        except (SieveError, np.linalg.LinAlgError) as exc:
            out[name] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        sup_err, l2_err = {}, {}
        for j in res.candidates:
            diff = predict(res.fits[j], loss_grid.points) - h0
            sup_err[j] = float(np.max(np.abs(diff)))
            l2_err[j] = float(np.sqrt(np.sum(loss_grid.weights * diff**2) / np.sum(loss_grid.weights)))
        best_sup = min(sup_err.values())
        best_l2 = min(l2_err.values())
        per_sigma = {}
        for s in config.sigma_bars:
            j_hat = res.reselect(s).j_hat
            sup_ratio = sup_err[j_hat] / best_sup if best_sup > 0 else 1.0
            l2_ratio = l2_err[j_hat] / best_l2 if best_l2 > 0 else 1.0
            if sup_ratio < 1.0 - 1e-12 or l2_ratio < 1.0 - 1e-12:
                raise AssertionError(f"replication {r}, {name}: error ratio below one")
            per_sigma[s] = {
                "j_hat": j_hat,
                "sup_err": sup_err[j_hat],
                "l2_err": l2_err[j_hat],
                "sup_ratio": sup_ratio,
                "l2_ratio": l2_ratio,
            }
        out[name] = {"j_max_hat": res.j_max_hat, "by_sigma": per_sigma}
    return out


def run_lepski_mc(config: McConfig, threads: int | None = None) -> list[dict]:
    """Table rows (one per cell and ``sigma_bar``) averaged over the replications."""
    reps = parallel_map(lambda r: lepski_replication(config, r), config.reps, threads)
    rows = []
    for rj, rk, k_rule in config.cells:
        name = _cell_name(rj, rk, k_rule)
        ok = [rep[name] for rep in reps if "error" not in rep[name]]
        failures = config.reps - len(ok)
        _check_budget(name, failures, config.reps, config.failure_budget)
        if not ok:
            raise FailureBudgetError(f"{name}: every replication failed")
        for s in config.sigma_bars:
            recs = [o["by_sigma"][s] for o in ok]

            def col(key):
                return np.array([rec[key] for rec in recs], dtype=float)

            rows.append(
                {
                    "design": config.design.kind,
                    "n": config.design.n,
                    "r_J": rj,
                    "r_K": rk,
                    "K_rule": "J" if k_rule == "identity" else "2J",
                    "sigma_bar": s,
                    "reps": len(ok),
                    "failures": failures,
                    "sup_ratio": float(col("sup_ratio").mean()),
                    "l2_ratio": float(col("l2_ratio").mean()),
                    "sup_err": float(col("sup_err").mean()),
                    "l2_err": float(col("l2_err").mean()),
                    "median_sup_err": float(np.median(col("sup_err"))),
                    "mean_j_hat": float(col("j_hat").mean()),
                    "mean_j_max_hat": float(np.mean([o["j_max_hat"] for o in ok])),
                }
            )
    return rows


# ---------------------------------------------------------------- coverage table


def coverage_replication(config: McConfig, r: int, crit_override: dict[float, float] | None = None) -> dict:
    """Per cell: a list of booleans, one per level, or ``{"error": message}``."""
    design = config.design
    data = gen_np_design(design, substream(config.seed, r))
    grid = config.band_grid()
    truth = design.h0(grid)
    boot = BootstrapConfig(reps=config.boot_reps, weight_law="mammen", seed=(config.seed, r), levels=config.levels)
    out: dict = {}
    for rj, rk, k_rule in config.cells:
        name = _cell_name(rj, rk, k_rule)
        try:
            res = lepski_select(data, config.lepski_config(rj, rk, k_rule))
            band = uniform_band(res.fits[res.j_hat], grid, boot, crit_override=crit_override)
        except (SieveError, np.linalg.LinAlgError) as exc:
            out[name] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        out[name] = {"covered": [band.covers(truth, a) for a in config.levels], "j_hat": res.j_hat}
    return out


def run_coverage_mc(
    config: McConfig, threads: int | None = None, crit_override: dict[float, float] | None = None
) -> list[dict]:
    """Coverage rows: fraction of replications whose band contains ``h_0`` on the whole grid.

    ``crit_override`` replaces the bootstrap critical values (a test hook:
    ``{level: inf}`` must give coverage one).
    """
    reps = parallel_map(lambda r: coverage_replication(config, r, crit_override), config.reps, threads)
    rows = []
    for rj, rk, k_rule in config.cells:
        name = _cell_name(rj, rk, k_rule)
        ok = [rep[name] for rep in reps if "error" not in rep[name]]
        failures = config.reps - len(ok)
        _check_budget(name, failures, config.reps, config.failure_budget)
        if not ok:
            raise FailureBudgetError(f"{name}: every replication failed")
        hits = np.array([o["covered"] for o in ok], dtype=float)
        row = {
            "design": config.design.kind,
            "n": config.design.n,
            "r_J": rj,
            "r_K": rk,
            "K_rule": "J" if k_rule == "identity" else "2J",
            "reps": len(ok),
            "failures": failures,
            "boot_reps": config.boot_reps,
        }
        for a, p in zip(config.levels, hits.mean(axis=0)):
            row[f"cov_{a:g}"] = float(p)
        row["mean_j_hat"] = float(np.mean([o["j_hat"] for o in ok]))
        rows.append(row)
    return rows


def coverage_columns(levels: Sequence[float]) -> list[str]:
    return [f"cov_{a:g}" for a in levels]


def is_monotone(values: Sequence[float]) -> bool:
    return all(b >= a - 1e-15 for a, b in zip(values, values[1:]))


__all__ = [
    "McConfig",
    "coverage_replication",
    "default_threads",
    "is_monotone",
    "lepski_replication",
    "parallel_map",
    "run_coverage_mc",
    "run_lepski_mc",
    "sieve_from_label",
]

