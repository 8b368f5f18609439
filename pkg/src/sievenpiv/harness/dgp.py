"""The Newey-Powell style simulation design.

``(U, V*, W*)`` is trivariate normal with unit variances, ``corr(U, V*) = 0.5``
and ``W*`` independent of both.  The regressor is ``X = Phi((W* + V*)/sqrt 2)``
and the instrument ``W = Phi(W*)``, so both are exactly Uniform(0, 1) and the
endogeneity comes from ``V*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..npiv import Dataset

KINDS = ("linear", "nonlinear")
RHO_UV = 0.5


def h0_linear(x):
    return 4.0 * np.asarray(x, dtype=float) - 2.0


def h0_nonlinear(x):
    x = np.asarray(x, dtype=float)
    return np.log(np.abs(6.0 * x - 3.0) + 1.0) * np.sign(x - 0.5)


@dataclass(frozen=True)
class NpDesign:
    kind: str = "linear"
    n: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown design {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise ValueError("n must be positive")

    def h0(self, x):
        return h0_linear(x) if self.kind == "linear" else h0_nonlinear(x)

    @property
    def number(self) -> int:
        """Design number as used in the tables (1 linear, 2 nonlinear)."""
        return KINDS.index(self.kind) + 1


def draw_latent(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Latent normals ``u, v_star, w_star`` and ``x_star = w_star + v_star``."""
    cov = np.array([[1.0, RHO_UV, 0.0], [RHO_UV, 1.0, 0.0], [0.0, 0.0, 1.0]])
    z = rng.multivariate_normal(np.zeros(3), cov, size=n, method="cholesky")
    u, v_star, w_star = z[:, 0], z[:, 1], z[:, 2]
    return {"u": u, "v_star": v_star, "w_star": w_star, "x_star": w_star + v_star}


def gen_np_design(design: NpDesign, rng: np.random.Generator) -> Dataset:
    lat = draw_latent(design.n, rng)
    x = norm.cdf(lat["x_star"] / math.sqrt(2.0))
    w = norm.cdf(lat["w_star"])
    return Dataset(design.h0(x) + lat["u"], x, w)
