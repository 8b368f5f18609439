"""Command line front end.

Exit codes: 0 on success, 2 for bad input (flags, CSV contents, points outside
the data range), 3 for numerical failures (rank deficiency, zero variance,
exhausted failure budget).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..adaptive import LepskiConfig, lepski_select
from ..basis import Sieve
from ..exceptions import DomainError, FailureBudgetError, NoCandidatesError, RankError, SieveError, ZeroVarianceError
from ..inference import WEIGHT_LAWS, BootstrapConfig, uniform_band
from ..npiv import Dataset, EvalGrid, e_hat, fit, tau_hat
from ..welfare import PricePath, welfare_estimate
from .dgp import KINDS, NpDesign
from .mc import McConfig, default_threads, run_coverage_mc, run_lepski_mc, sieve_from_label
from .records import RunRecord, write_coverage_table, write_lepski_tables

log = logging.getLogger("sievenpiv")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (RankError, ZeroVarianceError, FailureBudgetError, NoCandidatesError, np.linalg.LinAlgError)


class InputError(Exception):
    """Bad command line input; the message names the offending field."""


def _floats(text: str, name: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise InputError(f"--{name}: empty list")
    return vals


def _range(text: str | None, name: str) -> tuple[float, float] | None:
    if text is None:
        return None
    vals = _floats(text, name)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise InputError(f"--{name}: expected 'lo,hi' with lo < hi, got {text!r}")
    return vals[0], vals[1]


def _combos(text: str) -> tuple[tuple[str, str], ...]:
    out = []
    for item in text.split(","):
        parts = item.strip().split("/")
        if len(parts) != 2:
            raise InputError(f"--combos: expected items like '4/4' or 'Leg/Leg', got {item!r}")
        try:
            sieve_from_label(parts[0]), sieve_from_label(parts[1])
        except ValueError as exc:
            raise InputError(f"--combos: {exc}") from None
        out.append((parts[0], parts[1]))
    return tuple(out)


def _k_rules(text: str) -> tuple[str, ...]:
    table = {"J": "identity", "2J": "double", "identity": "identity", "double": "double"}
    out = []
    for item in text.split(","):
        key = item.strip()
        if key not in table:
            raise InputError(f"--k-rules: expected 'J' or '2J', got {key!r}")
        out.append(table[key])
    return tuple(out)


def _k_rule(text: str) -> str:
    return _k_rules(text)[0]


def _sieve(label: str, tensor: bool, flag: str) -> Sieve:
    try:
        s = sieve_from_label(label, domain=None)
    except ValueError as exc:
        raise InputError(f"--{flag}: {exc}") from None
    return Sieve(s.family, s.order, None, tensor)


def _load(path: str) -> Dataset:
    try:
        return Dataset.from_csv(path)
    except FileNotFoundError:
        raise InputError(f"--data: no such file {path!r}") from None


def _selection_config(args, data: Dataset) -> LepskiConfig:
    tensor = bool(args.tensor)
    if tensor and (data.d < 2 or data.d_w < 2):
        raise InputError("--tensor needs columns x1, x2 and w1, w2")
    sigma = args.sigma_bar
    if sigma != "estimate":
        try:
            sigma = float(sigma)
        except ValueError:
            raise InputError(f"--sigma-bar: expected a positive number or 'estimate', got {sigma!r}") from None
    grid = None
    rng = _range(args.grid_range, "grid-range")
    if rng is not None and not tensor:
        grid = EvalGrid.uniform(*rng, args.grid_points)
    return LepskiConfig(
        psi_sieve=_sieve(args.psi, tensor, "psi"),
        b_sieve=_sieve(args.b, tensor, "b"),
        sigma_bar=sigma,
        a=args.a,
        k_rule=_k_rule(args.k_rule),
        grid=grid,
    )


def _write_json(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite_or_none(v: float | None):
    return None if v is None or not math.isfinite(v) else v


# ---------------------------------------------------------------- subcommands


def cmd_fit(args) -> int:
    data = _load(args.data)
    config = _selection_config(args, data).resolved(data)
    if args.J is None:
        res = lepski_select(data, config)
        J, selected = res.j_hat, True
        K = res.k[J]
        f = res.fits[J]
    else:
        J, selected = args.J, False
        K = args.K if args.K is not None else config.k_of(J)
        try:
            psi, b = config.psi_sieve.spec(J), config.b_sieve.spec(K)
        except ValueError as exc:
            raise InputError(f"--J/--K: {exc}") from None
        f = fit(data, psi, b)
    psi, b = f.psi_spec, f.b_spec
    summary = {
        "n": data.n,
        "J": f.J,
        "K": f.K,
        "selected": selected,
        "psi": config.psi_sieve.label(),
        "b": config.b_sieve.label(),
        "coeffs": f.coeffs,
        "tau_hat": tau_hat(data, psi, b),
        "e_hat": e_hat(data, psi),
        "residual_sd": float(np.sqrt(np.mean(f.residuals**2))),
    }
    _write_json(summary, args.out)
    return EXIT_OK


def cmd_select(args) -> int:
    data = _load(args.data)
    res = lepski_select(data, _selection_config(args, data))
    out = res.summary()
    out["pairwise"] = {
        str(j): [{"l": t.l, "distance": t.distance, "bound": t.bound, "passed": t.passed} for t in tests]
        for j, tests in res.pairwise.items()
    }
    _write_json(out, args.out)
    return EXIT_OK


def cmd_band(args) -> int:
    data = _load(args.data)
    if args.tensor:
        raise InputError("--tensor: bands are drawn over a univariate grid only")
    res = lepski_select(data, _selection_config(args, data))
    f = res.fits[res.j_hat]
    rng = _range(args.grid_range, "grid-range") or tuple(np.quantile(data.x[:, 0], (0.05, 0.95)))
    grid = np.linspace(rng[0], rng[1], args.grid_points)
    levels = _floats(args.levels, "levels")
    if not all(0 < a < 1 for a in levels):
        raise InputError(f"--levels: values must lie in (0, 1), got {args.levels!r}")
    boot = BootstrapConfig(reps=args.boot_reps, weight_law=args.weights, seed=args.seed, levels=levels)
    band = uniform_band(f, grid, boot, deriv=args.deriv)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        band.to_csv(args.out)
    else:
        cols = [band.grid, band.center, band.sd]
        for a in band.levels:
            cols += [band.lower(a), band.upper(a)]
        print(",".join(band.columns()))
        for row in np.column_stack(cols):
            print(",".join(f"{v:.10g}" for v in row))
    return EXIT_OK


def cmd_welfare(args) -> int:
    data = _load(args.data)
    if data.d < 2 or data.d_w < 2:
        raise InputError("--data: welfare needs columns x1 (price), x2 (income) and w1, w2")
    args.tensor = True
    config = _selection_config(args, data).resolved(data)
    if args.J is None:
        res = lepski_select(data, config)
        f = res.fits[res.j_hat]
    else:
        K = args.K if args.K is not None else config.k_of(args.J)
        try:
            f = fit(data, config.psi_sieve.spec(args.J), config.b_sieve.spec(K))
        except ValueError as exc:
            raise InputError(f"--J/--K: {exc}") from None
    path = PricePath(args.p0, args.p1, args.y, steps=args.steps)
    est = welfare_estimate(f, path, clamp=args.clamp)
    out = est.to_dict()
    out["config"] = {
        "p0": args.p0,
        "p1": args.p1,
        "y": args.y,
        "steps": args.steps,
        "J": f.J,
        "K": f.K,
        "psi": config.psi_sieve.label(),
        "b": config.b_sieve.label(),
        "n": data.n,
        "clamp": args.clamp,
    }
    _write_json(out, args.out)
    return EXIT_OK


def _mc_config(args, **extra) -> McConfig:
    if args.n < 10:
        raise InputError(f"--n: need at least 10 observations, got {args.n}")
    if args.reps < 1:
        raise InputError(f"--reps: need at least 1, got {args.reps}")
    kw = dict(
        design=NpDesign(args.design, args.n),
        reps=args.reps,
        combos=_combos(args.combos),
        k_rules=_k_rules(args.k_rules),
        seed=args.seed,
        select_points=args.grid_points,
    )
    rng = _range(args.grid_range, "grid-range")
    if rng is not None:
        kw["select_range"] = rng
    kw.update(extra)
    return McConfig(**kw)


def _save_record(kind: str, config: McConfig, rows: list[dict], out_dir: Path, stem: str) -> Path:
    rec = RunRecord(kind=kind, config=config.to_dict(), rows=rows, seed=config.seed, version=__version__)
    p = out_dir / f"{stem}.json"
    rec.save(p)
    return p


def cmd_mc_lepski(args) -> int:
    extra = {"sigma_bars": _floats(args.sigma_bars, "sigma-bars")}
    loss = _range(args.loss_range, "loss-range")
    if loss is not None:
        extra["loss_range"] = loss
    config = _mc_config(args, **extra)
    rows = run_lepski_mc(config, threads=args.threads)
    out = Path(args.out or ".")
    stem = f"lepski_{config.design.kind}_n{config.design.n}"
    paths = write_lepski_tables(rows, out, stem)
    paths.append(_save_record("lepski", config, rows, out, stem))
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_mc_coverage(args) -> int:
    extra = {
        "boot_reps": args.boot_reps,
        "levels": _floats(args.levels, "levels"),
        "band_points": args.band_points,
        "sigma_bars": (args.sigma_bar,),
    }
    config = _mc_config(args, **extra)
    rows = run_coverage_mc(config, threads=args.threads)
    out = Path(args.out or ".")
    stem = f"coverage_{config.design.kind}_n{config.design.n}"
    paths = [write_coverage_table(rows, out, stem), _save_record("coverage", config, rows, out, stem)]
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    def d(v):
        return argparse.SUPPRESS if suppress else v

    p.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    p.add_argument("--grid-points", type=int, default=d(1000), help="points in the evaluation grid")
    p.add_argument("--grid-range", default=d(None), help="evaluation range 'lo,hi' (default: 5%%-95%% data quantiles)")
    p.add_argument("--threads", type=int, default=d(None), help="worker threads (default $NPIV_THREADS or 1)")
    p.add_argument("--out", default=d(None), help="output file (fit/select/band/welfare) or directory (mc-*)")


def _selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV with columns y, x1.., w1..")
    p.add_argument("--psi", default="4", help="regressor basis: spline order, 'Leg' or 'Cos' (default 4)")
    p.add_argument("--b", default="4", help="instrument basis label (default 4)")
    p.add_argument("--k-rule", default="J", help="K(J) rule: J or 2J")
    p.add_argument("--sigma-bar", default="1", help="sigma_bar, or 'estimate'")
    p.add_argument("--a", type=float, default=0.1, help="J_max threshold constant (default 0.1)")
    p.add_argument("--tensor", action="store_true", help="bivariate tensor bases over (x1, x2) and (w1, w2)")


def _mc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--design", choices=KINDS, default="linear")
    p.add_argument("--n", type=int, default=1000, help="sample size")
    p.add_argument("--reps", type=int, default=1000, help="Monte Carlo replications")
    p.add_argument("--combos", default="4/4", help="comma-separated r_J/r_K pairs, e.g. '4/4,4/5,Leg/Leg'")
    p.add_argument("--k-rules", default="J", help="comma-separated K(J) rules: J, 2J")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sievenpiv", description="Sieve NPIV estimation, selection, bands and welfare.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit at given (J, K), or at the selected J; prints a JSON summary")
    _selection_flags(p)
    p.add_argument("--J", type=int, default=None, help="regressor dimension (default: data-driven)")
    p.add_argument("--K", type=int, default=None, help="instrument dimension (default: the K rule)")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="data-driven choice of J with full diagnostics (JSON)")
    _selection_flags(p)
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("band", help="uniform confidence band at the selected J (CSV)")
    _selection_flags(p)
    p.add_argument("--levels", default="0.9,0.95,0.99")
    p.add_argument("--boot-reps", type=int, default=1000)
    p.add_argument("--weights", choices=sorted(WEIGHT_LAWS), default="mammen")
    p.add_argument("--deriv", type=int, default=0, help="band for this derivative order")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("welfare", help="exact consumer surplus and deadweight loss (JSON)")
    _selection_flags(p)
    p.add_argument("--p0", type=float, required=True, help="initial price")
    p.add_argument("--p1", type=float, required=True, help="final price")
    p.add_argument("--y", type=float, required=True, help="income level")
    p.add_argument("--steps", type=int, default=1000, help="ODE grid steps")
    p.add_argument("--J", type=int, default=None, help="tensor regressor dimension (a square)")
    p.add_argument("--K", type=int, default=None, help="tensor instrument dimension (a square)")
    p.add_argument("--clamp", action="store_true", help="clamp income to the fitted range instead of failing")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_welfare)

    p = sub.add_parser("mc-lepski", help="selection Monte Carlo (ratio and error tables)")
    _mc_flags(p)
    p.add_argument("--sigma-bars", default="1,0.1")
    p.add_argument("--loss-range", default=None, help="range of the loss grid 'lo,hi' (default 0,1)")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_mc_lepski)

    p = sub.add_parser("mc-coverage", help="uniform band coverage Monte Carlo")
    _mc_flags(p)
    p.add_argument("--boot-reps", type=int, default=1000)
    p.add_argument("--levels", default="0.9,0.95,0.99")
    p.add_argument("--band-points", type=int, default=100)
    p.add_argument("--sigma-bar", type=float, default=1.0)
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_mc_coverage)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.threads is None:
        try:
            args.threads = default_threads()
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    if args.grid_points < 2:
        print(f"error: --grid-points: need at least 2, got {args.grid_points}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SieveError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def cli(argv: list[str] | None = None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
