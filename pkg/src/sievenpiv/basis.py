"""Sieve bases on compact intervals and their bivariate tensor products.

Three univariate families are supported:

* ``bspline``  -- order-``r`` B-splines with evenly spaced interior knots.
  Dimensions are restricted to ``r + m`` with ``m`` in ``0, 1, 3, 7, 15, ...``
  so that the spaces are nested as the dimension grows.
* ``legendre`` -- Legendre polynomials, orthonormal with respect to the
  uniform probability measure on the domain.
* ``cosine``   -- ``{1, sqrt(2) cos(k pi u)}`` with ``u`` the affine image of
  ``x`` in ``[0, 1]``.

All specs are frozen dataclasses; evaluation is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np
from numpy.polynomial import legendre as _leg

from .exceptions import DomainError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

FAMILIES = ("bspline", "legendre", "cosine")
POLYNOMIAL_FAMILIES = frozenset({"legendre"})


def _is_nested_knot_count(m: int) -> bool:
    # m in {0, 1, 3, 7, 15, ...}  <=>  m + 1 is a power of two
    return m >= 0 and ((m + 1) & m) == 0


def admissible_dims(family: str, r: int | None, j_lo: int, j_hi: int) -> list[int]:
    """Dimensions in ``[j_lo, j_hi]`` that give nested sieve spaces.

    For B-splines of order ``r`` these are ``r + m`` with ``m + 1`` a power of
    two; the polynomial and cosine families admit every positive integer.
    An empty range gives an empty list.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown basis family {family!r}")
    j_lo = max(int(j_lo), 1)
    j_hi = int(j_hi)
    if j_hi < j_lo:
        return []
    if family != "bspline":
        return list(range(j_lo, j_hi + 1))
    if r is None or r < 1:
        raise ValueError("B-spline family needs an order r >= 1")
    out = []
    m = 0
    while r + m <= j_hi:
        if r + m >= j_lo:
            out.append(r + m)
        m = 2 * m + 1
    return out


def knot_vector(r: int, m: int, lo: float = 0.0, hi: float = 1.0) -> NDArray[np.float64]:
    """Extended knot sequence with ``r``-fold boundary knots and ``m`` even interior knots."""
    if r < 1 or m < 0:
        raise ValueError(f"need r >= 1 and m >= 0, got r={r}, m={m}")
    interior = lo + np.arange(1, m + 1) * (hi - lo) / (m + 1)
    return np.concatenate([np.full(r, float(lo)), interior, np.full(r, float(hi))])


def _safe_recip(d: NDArray[np.float64]) -> NDArray[np.float64]:
    # 1/0 := 0 convention of the B-spline recursion
    out = np.zeros_like(d)
    nz = d != 0
    out[nz] = 1.0 / d[nz]
    return out


def _bspline_matrix(x: NDArray[np.float64], t: NDArray[np.float64], r: int, deriv: int) -> NDArray[np.float64]:
    """Cox-de Boor recursion; the last ``deriv`` order steps use the derivative recursion."""
    n = x.shape[0]
    n_int = t.size - 1
    idx = np.searchsorted(t, x, side="right") - 1
    # right endpoint belongs to the last nondegenerate interval
    last = int(np.flatnonzero(np.diff(t) > 0)[-1])
    idx = np.clip(idx, 0, last)
    N = np.zeros((n, n_int))
    N[np.arange(n), idx] = 1.0
    for k in range(2, r + 1):
        cnt = t.size - k
        i = np.arange(cnt)
        inv1 = _safe_recip(t[i + k - 1] - t[i])
        inv2 = _safe_recip(t[i + k] - t[i + 1])
        left, right = N[:, :cnt], N[:, 1 : cnt + 1]
        if k <= r - deriv:
            N = (x[:, None] - t[i]) * inv1 * left + (t[i + k] - x[:, None]) * inv2 * right
        else:
            N = (k - 1) * (inv1 * left - inv2 * right)
    return N


def _legendre_matrix(z: NDArray[np.float64], dim: int, deriv: int, scale: float) -> NDArray[np.float64]:
    # z in [-1, 1]; orthonormal w.r.t. uniform probability measure: sqrt(2k+1) P_k
    norms = np.sqrt(2.0 * np.arange(dim) + 1.0)
    if deriv == 0:
        P = np.empty((z.size, dim))
        P[:, 0] = 1.0
        if dim > 1:
            P[:, 1] = z
        for k in range(1, dim - 1):
            P[:, k + 1] = ((2 * k + 1) * z * P[:, k] - k * P[:, k - 1]) / (k + 1)
        return P * norms
    if deriv >= dim:
        return np.zeros((z.size, dim))
    coef = _leg.legder(np.eye(dim), deriv, axis=0)  # (dim - deriv) x dim
    V = _leg.legvander(z, dim - 1 - deriv)
    return (V @ coef) * norms * scale**deriv


def _cosine_matrix(u: NDArray[np.float64], dim: int, deriv: int, width: float) -> NDArray[np.float64]:
    k = np.arange(dim)
    freq = k * np.pi
    out = np.sqrt(2.0) * (freq / width) ** deriv * np.cos(np.outer(u, freq) + deriv * np.pi / 2)
    out[:, 0] = 1.0 if deriv == 0 else 0.0
    return out


@dataclass(frozen=True)
class BasisSpec:
    """Univariate sieve basis: family, dimension and compact domain.

    ``order`` is only meaningful for B-splines (order ``r`` = degree + 1).
    ``nested=False`` lifts the nested-dimension restriction on B-splines (any
    ``m = dim - order >= 0`` evenly spaced interior knots).
    """

    family: str
    dim: int
    domain: tuple[float, float] = (0.0, 1.0)
    order: int | None = None
    nested: bool = True
    knots: NDArray[np.float64] | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise ValueError(f"domain needs lo < hi, got {self.domain}")
        object.__setattr__(self, "domain", (lo, hi))
        if self.dim < 1:
            raise ValueError("dimension must be a positive integer")
        if self.family == "bspline":
            if self.order is None or self.order < 1:
                raise ValueError("B-spline basis needs order >= 1")
            m = self.dim - self.order
            if m < 0 or (self.nested and not _is_nested_knot_count(m)):
                raise ValueError(
                    f"B-spline dim {self.dim} with order {self.order} is not admissible "
                    f"(dim - order must be one of 0, 1, 3, 7, 15, ...)"
                )
            object.__setattr__(self, "knots", knot_vector(self.order, m, lo, hi))
        elif self.order is not None:
            object.__setattr__(self, "order", None)

    @classmethod
    def bspline(cls, order: int, dim: int, domain: tuple[float, float] = (0.0, 1.0)) -> BasisSpec:
        return cls("bspline", dim, domain, order)

    @classmethod
    def legendre(cls, dim: int, domain: tuple[float, float] = (0.0, 1.0)) -> BasisSpec:
        return cls("legendre", dim, domain)

    @classmethod
    def cosine(cls, dim: int, domain: tuple[float, float] = (0.0, 1.0)) -> BasisSpec:
        return cls("cosine", dim, domain)

    @property
    def n_vars(self) -> int:
        return 1

    @property
    def max_deriv(self) -> int:
        if self.family == "bspline":
            return self.order - 1
        return 10**9

    def with_dim(self, dim: int) -> BasisSpec:
        """Same family, order and domain at another dimension."""
        return BasisSpec(self.family, dim, self.domain, self.order, self.nested)

    def check_domain(self, x: NDArray[np.float64]) -> None:
        lo, hi = self.domain
        bad = (x < lo) | (x > hi) | ~np.isfinite(x)
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            raise DomainError(f"point {x[first]!r} (index {first}) outside basis domain [{lo}, {hi}]")

    def evaluate(self, x: ArrayLike, deriv: int = 0) -> NDArray[np.float64]:
        """``len(x) x dim`` matrix of ``deriv``-th derivatives of the basis functions."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
        if deriv < 0:
            raise ValueError("derivative order must be >= 0")
        if deriv > self.max_deriv:
            raise ValueError(f"order-{self.order} B-splines support derivatives up to {self.max_deriv}")
        self.check_domain(x)
        lo, hi = self.domain
        if self.family == "bspline":
            return _bspline_matrix(x, self.knots, self.order, deriv)
        if self.family == "legendre":
            return _legendre_matrix(2.0 * (x - lo) / (hi - lo) - 1.0, self.dim, deriv, 2.0 / (hi - lo))
        return _cosine_matrix((x - lo) / (hi - lo), self.dim, deriv, hi - lo)


@dataclass(frozen=True)
class TensorBasisSpec:
    """Bivariate tensor product; column ``a*dim_b + b`` is ``psi_a(x1) * phi_b(x2)``."""

    spec_a: BasisSpec
    spec_b: BasisSpec

    @property
    def dim(self) -> int:
        return self.spec_a.dim * self.spec_b.dim

    @property
    def n_vars(self) -> int:
        return 2

    @property
    def family(self) -> str:
        fa, fb = self.spec_a.family, self.spec_b.family
        return fa if fa == fb else f"{fa}x{fb}"

    @property
    def domain(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self.spec_a.domain, self.spec_b.domain)

    def evaluate(self, x: ArrayLike, deriv: Sequence[int] | int = (0, 0)) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            if x.size != 2:
                raise ValueError("tensor basis evaluation needs points with 2 coordinates")
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != 2:
            raise ValueError(f"expected an (n, 2) array of points, got shape {x.shape}")
        if isinstance(deriv, (int, np.integer)):
            deriv = (int(deriv), 0)
        da, db = deriv
        A = self.spec_a.evaluate(x[:, 0], da)
        B = self.spec_b.evaluate(x[:, 1], db)
        return (A[:, :, None] * B[:, None, :]).reshape(x.shape[0], -1)


AnySpec = Union[BasisSpec, TensorBasisSpec]


def eval_basis(spec: AnySpec, x, deriv_order: int | Sequence[int] = 0) -> NDArray[np.float64]:
    """Basis vector at a single point (scalar, or a length-2 point for tensor specs)."""
    if isinstance(spec, TensorBasisSpec):
        return spec.evaluate(np.asarray(x, dtype=float).reshape(1, 2), deriv_order)[0]
    return spec.evaluate(np.asarray([x], dtype=float), deriv_order)[0]


def design_matrix(spec: AnySpec, xs, deriv=0) -> NDArray[np.float64]:
    """Stack basis evaluations row by row: the ``n x J`` matrix with rows ``psi^J(x_i)'``."""
    if isinstance(spec, TensorBasisSpec):
        return spec.evaluate(np.asarray(xs, dtype=float).reshape(-1, 2), deriv)
    return spec.evaluate(np.asarray(xs, dtype=float).reshape(-1), deriv)


def gram_from_design(P: NDArray[np.float64]) -> NDArray[np.float64]:
    G = P.T @ P / P.shape[0]
    return 0.5 * (G + G.T)


def gram(spec: AnySpec, xs) -> NDArray[np.float64]:
    """Empirical Gram matrix ``Psi' Psi / n``."""
    return gram_from_design(design_matrix(spec, xs))


def xi_sup_l1(spec: AnySpec, grid) -> float:
    """Largest l1 norm of the basis vector over ``grid`` (domain endpoints are always added)."""
    if isinstance(spec, TensorBasisSpec):
        pts = np.asarray(grid, dtype=float).reshape(-1, 2)
        (a_lo, a_hi), (b_lo, b_hi) = spec.domain
        corners = np.array([[a_lo, b_lo], [a_lo, b_hi], [a_hi, b_lo], [a_hi, b_hi]])
        pts = np.vstack([pts, corners])
    else:
        lo, hi = spec.domain
        pts = np.concatenate([np.asarray(grid, dtype=float).ravel(), [lo, hi]])
    return float(np.abs(design_matrix(spec, pts)).sum(axis=1).max())


@dataclass(frozen=True)
class Sieve:
    """A nested family of bases indexed by dimension (the object the selector scans).

    ``family``/``order``/``domain`` describe one axis; ``tensor=True`` squares it
    into a bivariate product with the same univariate dimension on both axes,
    in which case ``domain`` is a pair of intervals.
    """

    family: str
    order: int | None = None
    domain: tuple | None = None
    tensor: bool = False

    def resolved(self, columns: NDArray[np.float64]) -> Sieve:
        """Fill a missing domain from data (``[min, max]`` widened by 1e-9 per coordinate)."""
        if self.domain is not None:
            return self
        cols = np.asarray(columns, dtype=float).reshape(columns.shape[0], -1)
        doms = tuple((float(c.min() - 1e-9), float(c.max() + 1e-9)) for c in cols.T)
        dom = doms if self.tensor else doms[0]
        return Sieve(self.family, self.order, dom, self.tensor)

    @property
    def is_polynomial(self) -> bool:
        return self.family in POLYNOMIAL_FAMILIES

    @property
    def min_dim(self) -> int:
        base = self.order if self.family == "bspline" else 1
        return base * base if self.tensor else base

    def dims(self, j_lo: int, j_hi: int, nested: bool = True) -> list[int]:
        """Dimensions in ``[j_lo, j_hi]``; ``nested=False`` allows every buildable dimension."""
        base = self.order if self.family == "bspline" else 1
        if not self.tensor:
            if nested:
                return admissible_dims(self.family, self.order, j_lo, j_hi)
            return list(range(max(j_lo, base), j_hi + 1))
        root_hi = int(np.floor(np.sqrt(j_hi) + 1e-9))
        roots = admissible_dims(self.family, self.order, 1, root_hi) if nested else range(base, root_hi + 1)
        return [d * d for d in roots if d * d >= j_lo]

    def is_nested_dim(self, dim: int) -> bool:
        return dim in self.dims(dim, dim)

    def spec(self, dim: int, nested: bool = True) -> AnySpec:
        """Basis of dimension ``dim``; ``nested=False`` also builds non-nested B-spline dimensions."""
        if self.domain is None:
            raise ValueError("sieve domain unresolved; call resolved(data) first")
        strict = nested or self.is_nested_dim(dim)
        if not self.tensor:
            return BasisSpec(self.family, dim, tuple(self.domain), self.order, strict)
        root = int(round(np.sqrt(dim)))
        if root * root != dim:
            raise ValueError(f"tensor sieve dimension {dim} is not a perfect square")
        da, db = self.domain
        return TensorBasisSpec(
            BasisSpec(self.family, root, tuple(da), self.order, strict),
            BasisSpec(self.family, root, tuple(db), self.order, strict),
        )

    def smallest_at_least(self, target: int, nested: bool = True) -> int:
        """Smallest dimension ``>= target`` (admissible nested ones unless ``nested=False``)."""
        for d in self.dims(target, 2 * max(target, self.min_dim) + 64, nested):
            return d
        raise ValueError(f"no admissible dimension >= {target}")

    def label(self) -> str:
        if self.family == "bspline":
            return str(self.order)
        return {"legendre": "Leg", "cosine": "Cos"}[self.family]
