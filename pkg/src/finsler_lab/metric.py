"""Closed-form Finsler metric descriptors.

A descriptor is one of three variants sharing the Randers form

    F(x, y) = sqrt(a_ij(x) y^i y^j) + b_i(x) y^i,

with ``b = 0`` for the Euclidean and Riemannian variants and ``a = I`` for
Euclidean. Coefficients come from small closed-form families so that every
spatial derivative needed by the geodesic spray is exact.

All field evaluations broadcast over leading axes: ``x`` has shape
``(..., n)``, matrices come back as ``(..., n, n)`` and spatial derivatives
put the differentiation index last, ``(..., n, n, n)`` for ``d a_ij / dx^k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np

from .errors import ConfigError, InvalidMetric

VARIANTS = ("euclidean", "riemannian", "randers")


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", x, x)


# --------------------------------------------------------------------------
# matrix-valued coefficient families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixField:
    family: ClassVar[str] = ""
    dim: int

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        return False

    def valid_at(self, x: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(x)[:-1], dtype=bool)

    def to_json(self) -> Any:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantMatrix(MatrixField):
    family: ClassVar[str] = "constant"
    matrix: tuple = ()

    def __post_init__(self):
        m = self.array
        if m.shape != (self.dim, self.dim):
            raise InvalidMetric(f"matrix must be {self.dim}x{self.dim}, got {m.shape}")
        if not np.allclose(m, m.T, atol=1e-14):
            raise InvalidMetric("matrix field must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise InvalidMetric("matrix field must be positive definite")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    @property
    def is_constant(self) -> bool:
        return True

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.array, x.shape[:-1] + (self.dim, self.dim))

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def to_json(self):
        if np.array_equal(self.array, np.eye(self.dim)):
            return "identity"
        return [list(map(float, row)) for row in self.array]


@dataclass(frozen=True)
class GaussianConformal(MatrixField):
    """a(x) = (1 + amplitude * exp(-|x - center|^2 / (2 width^2))) * base."""

    family: ClassVar[str] = "gaussian-conformal"
    amplitude: float = 0.5
    width: float = 1.0
    center: tuple = ()
    base: tuple = ()

    def _base(self):
        return np.eye(self.dim) if not self.base else np.asarray(self.base, float)

    def _center(self):
        return np.zeros(self.dim) if not self.center else np.asarray(self.center, float)

    def __post_init__(self):
        if self.amplitude <= -1:
            raise InvalidMetric("gaussian-conformal amplitude must exceed -1")

    def _factor(self, x):
        d = np.asarray(x, float) - self._center()
        g = np.exp(-_sqnorm(d) / (2 * self.width**2))
        return 1 + self.amplitude * g, -self.amplitude * g[..., None] * d / self.width**2

    def value(self, x):
        f, _ = self._factor(x)
        return f[..., None, None] * self._base()

    def deriv(self, x):
        _, df = self._factor(x)
        return self._base()[..., None] * df[..., None, None, :]

    def to_json(self):
        out = {"family": self.family, "amplitude": self.amplitude, "width": self.width}
        if self.center:
            out["center"] = list(self.center)
        if self.base:
            out["base"] = [list(r) for r in self.base]
        return out


@dataclass(frozen=True)
class PoincareDisk(MatrixField):
    """Hyperbolic metric of curvature -1 on the unit disk, a = 4/(1-|x|^2)^2 I."""

    family: ClassVar[str] = "poincare-disk"

    def valid_at(self, x):
        return _sqnorm(np.asarray(x, float)) < 1.0

    def value(self, x):
        x = np.asarray(x, float)
        lam2 = 4.0 / (1.0 - _sqnorm(x)) ** 2
        return lam2[..., None, None] * np.eye(self.dim)

    def deriv(self, x):
        x = np.asarray(x, float)
        d = 16.0 / (1.0 - _sqnorm(x)) ** 3
        return np.eye(self.dim)[..., None] * (d[..., None] * x)[..., None, None, :]

    def to_json(self):
        return {"family": self.family}


# --------------------------------------------------------------------------
# covector-valued coefficient families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CovectorField:
    family: ClassVar[str] = ""
    dim: int

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def is_constant(self) -> bool:
        return False

    def value(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantCovector(CovectorField):
    family: ClassVar[str] = "constant"
    vector: tuple = ()

    def __post_init__(self):
        if len(self.array) != self.dim:
            raise InvalidMetric(f"covector must have {self.dim} components")

    @property
    def array(self):
        if not self.vector:
            return np.zeros(self.dim)
        return np.asarray(self.vector, dtype=float)

    @property
    def is_zero(self):
        return not np.any(self.array)

    @property
    def is_constant(self):
        return True

    def value(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(self.array, x.shape[:-1] + (self.dim,))

    def deriv(self, x):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1] + (self.dim, self.dim))

    def to_json(self):
        return list(map(float, self.array))


@dataclass(frozen=True)
class GaussianCovector(CovectorField):
    """b(x) = vector * exp(-|x - center|^2 / (2 width^2))."""

    family: ClassVar[str] = "gaussian"
    vector: tuple = ()
    width: float = 1.0
    center: tuple = ()

    def _center(self):
        return np.zeros(self.dim) if not self.center else np.asarray(self.center, float)

    def value(self, x):
        d = np.asarray(x, float) - self._center()
        g = np.exp(-_sqnorm(d) / (2 * self.width**2))
        return g[..., None] * np.asarray(self.vector, float)

    def deriv(self, x):
        d = np.asarray(x, float) - self._center()
        g = np.exp(-_sqnorm(d) / (2 * self.width**2))
        dg = -g[..., None] * d / self.width**2
        return np.asarray(self.vector, float)[:, None] * dg[..., None, :]

    def to_json(self):
        out = {"family": self.family, "vector": list(self.vector), "width": self.width}
        if self.center:
            out["center"] = list(self.center)
        return out


# --------------------------------------------------------------------------
# descriptor
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricDescriptor:
    variant: str
    dimension: int
    a: MatrixField
    b: CovectorField = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidMetric(f"unknown variant {self.variant!r}")
        if self.dimension < 2:
            raise InvalidMetric("dimension must be >= 2")
        if self.b is None:
            object.__setattr__(self, "b", ConstantCovector(self.dimension))
        if self.variant != "randers" and not self.b.is_zero:
            raise InvalidMetric(f"{self.variant} metric cannot carry a drift covector")
        if self.variant == "euclidean" and not (
            isinstance(self.a, ConstantMatrix) and np.array_equal(self.a.array, np.eye(self.dimension))
        ):
            raise InvalidMetric("euclidean metric must have a = identity")
        if self.a.dim != self.dimension or self.b.dim != self.dimension:
            raise InvalidMetric("coefficient dimensions disagree with descriptor")
        if self.variant == "randers" and isinstance(self.b, ConstantCovector) and self.a.is_constant:
            # constant data can be validated eagerly
            self.check_valid(np.zeros(self.dimension))

    @property
    def is_riemannian(self) -> bool:
        return self.variant != "randers" or self.b.is_zero

    @property
    def is_constant(self) -> bool:
        return self.a.is_constant and (self.b.is_zero or self.b.is_constant)

    def coefficients(self, x):
        """Return (a(x), b(x)) with broadcast shapes."""
        x = np.asarray(x, dtype=float)
        return self.a.value(x), self.b.value(x)

    def b_norm(self, x) -> np.ndarray:
        """a-norm of b at x, sqrt(b_i a^{ij} b_j)."""
        a, b = self.coefficients(x)
        bs = np.linalg.solve(a, b[..., None])[..., 0]
        return np.sqrt(np.maximum(np.einsum("...i,...i->...", b, bs), 0.0))

    def check_valid(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if not np.all(self.a.valid_at(x)):
            raise InvalidMetric("point outside the domain of the metric coefficients")
        if self.variant == "randers":
            bn = self.b_norm(x)
            if np.any(bn >= 1.0):
                raise InvalidMetric(f"Randers drift has a-norm {float(np.max(bn)):.6g} >= 1")

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        out = {"variant": self.variant, "dimension": self.dimension, "a": self.a.to_json()}
        if self.variant == "randers":
            out["b"] = self.b.to_json()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricDescriptor":
        try:
            variant = doc["variant"]
            n = int(doc["dimension"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"metric descriptor missing field: {exc}") from exc
        a = _matrix_from_json(doc.get("a", "identity"), n)
        b = _covector_from_json(doc.get("b"), n)
        return cls(variant, n, a, b)

    @classmethod
    def from_json(cls, text: str) -> "MetricDescriptor":
        return cls.from_dict(json.loads(text))


def _matrix_from_json(spec: Any, n: int) -> MatrixField:
    if spec == "identity" or spec is None:
        return ConstantMatrix(n, tuple(map(tuple, np.eye(n))))
    if isinstance(spec, list):
        return ConstantMatrix(n, tuple(tuple(float(v) for v in row) for row in spec))
    if isinstance(spec, dict):
        fam = spec.get("family")
        params = {k: v for k, v in spec.items() if k != "family"}
        params.update(params.pop("params", {}) or {})
        if fam == "constant":
            m = params.get("matrix", "identity")
            return _matrix_from_json(m, n)
        if fam == "gaussian-conformal":
            return GaussianConformal(
                n,
                amplitude=float(params.get("amplitude", 0.5)),
                width=float(params.get("width", 1.0)),
                center=tuple(params.get("center", ())),
                base=tuple(tuple(r) for r in params.get("base", ())),
            )
        if fam == "poincare-disk":
            return PoincareDisk(n)
    raise ConfigError(f"unrecognised matrix field {spec!r}")


def _covector_from_json(spec: Any, n: int) -> CovectorField:
    if spec is None:
        return ConstantCovector(n)
    if isinstance(spec, list):
        return ConstantCovector(n, tuple(float(v) for v in spec))
    if isinstance(spec, dict):
        fam = spec.get("family")
        params = {k: v for k, v in spec.items() if k != "family"}
        params.update(params.pop("params", {}) or {})
        if fam == "constant":
            return ConstantCovector(n, tuple(float(v) for v in params.get("vector", [0.0] * n)))
        if fam == "gaussian":
            return GaussianCovector(
                n,
                vector=tuple(float(v) for v in params["vector"]),
                width=float(params.get("width", 1.0)),
                center=tuple(params.get("center", ())),
            )
    raise ConfigError(f"unrecognised covector field {spec!r}")


# convenience constructors ---------------------------------------------------


def euclidean(n: int = 2) -> MetricDescriptor:
    return MetricDescriptor("euclidean", n, ConstantMatrix(n, tuple(map(tuple, np.eye(n)))))


def riemannian(matrix, n: int | None = None) -> MetricDescriptor:
    if isinstance(matrix, MatrixField):
        return MetricDescriptor("riemannian", matrix.dim, matrix)
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0] if n is None else n
    return MetricDescriptor("riemannian", n, ConstantMatrix(n, tuple(map(tuple, m))))


def randers(matrix, b) -> MetricDescriptor:
    if isinstance(matrix, MatrixField):
        a = matrix
    else:
        m = np.asarray(matrix, dtype=float)
        a = ConstantMatrix(m.shape[0], tuple(map(tuple, m)))
    if not isinstance(b, CovectorField):
        b = ConstantCovector(a.dim, tuple(float(v) for v in b))
    return MetricDescriptor("randers", a.dim, a, b)


def poincare_disk(n: int = 2) -> MetricDescriptor:
    return MetricDescriptor("riemannian", n, PoincareDisk(n))
