"""Measure spaces: a metric descriptor plus a smooth density e^Phi dx."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .errors import ConfigError, ZeroVector
from .metric import MetricDescriptor
from .minkowski import TangentVector, fundamental


@dataclass(frozen=True)
class LogDensity:
    """Phi(x) with dm = exp(Phi) dx; subclasses supply closed-form derivatives."""

    family: ClassVar[str] = ""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def to_json(self) -> dict:
        return {"family": self.family}


@dataclass(frozen=True)
class Lebesgue(LogDensity):
    family: ClassVar[str] = "lebesgue"

    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def grad(self, x):
        return np.zeros(np.shape(x))

    def hess(self, x):
        n = np.shape(x)[-1]
        return np.zeros(np.shape(x)[:-1] + (n, n))


@dataclass(frozen=True)
class GaussianWeight(LogDensity):
    """Phi = -precision |x - center|^2 / 2."""

    family: ClassVar[str] = "gaussian"
    precision: float = 1.0
    center: tuple = ()

    def _d(self, x):
        x = np.asarray(x, float)
        c = np.zeros(x.shape[-1]) if not self.center else np.asarray(self.center, float)
        return x - c

    def value(self, x):
        d = self._d(x)
        return -0.5 * self.precision * np.einsum("...i,...i->...", d, d)

    def grad(self, x):
        return -self.precision * self._d(x)

    def hess(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        return np.broadcast_to(-self.precision * np.eye(n), x.shape[:-1] + (n, n)).copy()

    def to_json(self):
        out = {"family": self.family, "precision": self.precision}
        if self.center:
            out["center"] = list(self.center)
        return out


@dataclass(frozen=True)
class RiemannianVolume(LogDensity):
    """Phi = (1/2) log det a(x), the canonical volume of the quadratic part."""

    family: ClassVar[str] = "riemannian-volume"
    metric: MetricDescriptor = None  # type: ignore[assignment]

    def value(self, x):
        a = self.metric.a.value(np.asarray(x, float))
        return 0.5 * np.linalg.slogdet(a)[1]

    def grad(self, x):
        x = np.asarray(x, float)
        a = self.metric.a.value(x)
        da = self.metric.a.deriv(x)
        ainv = np.linalg.inv(a)
        return 0.5 * np.einsum("...ij,...jik->...k", ainv, da)

    def hess(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        if self.metric.a.is_constant:
            return np.zeros(x.shape[:-1] + (n, n))
        h = 1e-5
        cols = []
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            cols.append((self.grad(x + e) - self.grad(x - e)) / (2 * h))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class CertifiedBounds:
    """Curvature metadata asserted per example space.

    ``K`` is a signed lower bound, Ric_inf >= K F^2. ``k`` bounds |tau| on the
    working domain and ``alpha`` gives S >= -alpha; either may be None.
    """

    K: float
    k: float | None = None
    alpha: float | None = None

    def to_json(self) -> dict:
        return {"K": self.K, "k": self.k, "alpha": self.alpha}


@dataclass(frozen=True)
class MeasureSpace:
    name: str
    metric: MetricDescriptor
    log_density: LogDensity = field(default_factory=Lebesgue)
    certified: CertifiedBounds = field(default_factory=lambda: CertifiedBounds(0.0))
    domain_radius: float = 10.0

    @property
    def n(self) -> int:
        return self.metric.dimension

    def density(self, x):
        return np.exp(self.log_density.value(x))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "metric": self.metric.to_dict(),
            "log_density": self.log_density.to_json(),
            "certified_bounds": self.certified.to_json(),
            "domain_radius": self.domain_radius,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "MeasureSpace":
        try:
            metric = MetricDescriptor.from_dict(doc["metric"])
        except KeyError as exc:
            raise ConfigError("measure space needs a 'metric' section") from exc
        ld = doc.get("log_density", {"family": "lebesgue"})
        if isinstance(ld, str):
            ld = {"family": ld}
        fam = ld.get("family", "lebesgue")
        params = dict(ld.get("params", {}))
        params.update({k: v for k, v in ld.items() if k not in ("family", "params")})
        if fam == "lebesgue":
            dens = Lebesgue()
        elif fam == "gaussian":
            dens = GaussianWeight(float(params.get("precision", 1.0)), tuple(params.get("center", ())))
        elif fam == "riemannian-volume":
            dens = RiemannianVolume(metric)
        else:
            raise ConfigError(f"unknown log-density family {fam!r}")
        cb = doc.get("certified_bounds", {})
        bounds = CertifiedBounds(float(cb.get("K", 0.0)), cb.get("k"), cb.get("alpha"))
        return cls(doc.get("name", "space"), metric, dens, bounds, float(doc.get("domain_radius", 10.0)))

    @classmethod
    def from_json(cls, text: str) -> "MeasureSpace":
        return cls.from_dict(json.loads(text))


def distortion_at(space: MeasureSpace, x, y) -> np.ndarray:
    """tau(x, y) = ln sqrt(det g(x, y)) - Phi(x), broadcasting."""
    g = fundamental(space.metric, x, y)
    return 0.5 * np.linalg.slogdet(g)[1] - space.log_density.value(np.asarray(x, float))


def distortion(space: MeasureSpace, v: TangentVector) -> float:
    if not np.any(v.y):
        raise ZeroVector("distortion undefined at y = 0")
    space.metric.check_valid(v.x)
    return float(distortion_at(space, v.x, v.y))
