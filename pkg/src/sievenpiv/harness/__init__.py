"""Simulation designs, Monte Carlo runners, run records and the command line."""

from .dgp import NpDesign, gen_np_design
from .mc import McConfig, run_coverage_mc, run_lepski_mc, sieve_from_label
from .records import RunRecord

__all__ = ["McConfig", "NpDesign", "RunRecord", "gen_np_design", "run_coverage_mc", "run_lepski_mc", "sieve_from_label"]
