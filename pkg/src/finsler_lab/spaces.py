"""Built-in example spaces with analytically certified curvature metadata.

The certified numbers are asserted from closed forms, not computed:

* flat: Euclidean plane with Lebesgue measure. Ric_inf = 0, tau = 0, S = 0.
* hyperbolic: Poincare disk with its Riemannian volume. Ric_inf = -(n-1),
  tau = 0, S = 0.
* gaussian: Euclidean plane with dm = exp(-|x|^2/2) dx. Ric_inf = 1,
  tau = |x|^2/2, S(x, y) = <x, y>.
* randers: constant Randers norm a = I, b = (1/2, 0) with Lebesgue measure.
  Ric = 0 and S = 0 (straight geodesics, tau depends on y only),
  |tau| = (3/2)|ln(F/alpha)| <= (3/2) ln 2.

Lemma-style hypotheses need k > 0 and alpha > 0 strictly, so spaces whose
true bounds are 0 carry a small positive value.
"""

from __future__ import annotations

import math

from .errors import ConfigError
from .measure import CertifiedBounds, GaussianWeight, Lebesgue, MeasureSpace, RiemannianVolume
from .metric import euclidean, poincare_disk, randers

SMALL = 0.01


def flat_space(n: int = 2) -> MeasureSpace:
    return MeasureSpace("flat", euclidean(n), Lebesgue(), CertifiedBounds(0.0, SMALL, SMALL), domain_radius=10.0)


def hyperbolic_space(n: int = 2) -> MeasureSpace:
    metric = poincare_disk(n)
    return MeasureSpace(
        "hyperbolic",
        metric,
        RiemannianVolume(metric),
        CertifiedBounds(-(n - 1.0), SMALL, SMALL),
        domain_radius=0.95,
    )


def gaussian_space(n: int = 2, radius: float = 4.5) -> MeasureSpace:
    # tau = |x|^2/2 and S >= -|x| on the ball of the given radius
    return MeasureSpace(
        "gaussian",
        euclidean(n),
        GaussianWeight(1.0),
        CertifiedBounds(1.0, radius**2 / 2, radius),
        domain_radius=radius,
    )


def randers_space(b1: float = 0.5) -> MeasureSpace:
    k = 1.5 * abs(math.log(1 - b1))
    return MeasureSpace(
        "randers", randers([[1.0, 0.0], [0.0, 1.0]], [b1, 0.0]), Lebesgue(), CertifiedBounds(0.0, k, SMALL), domain_radius=10.0
    )


BUILTIN = {
    "flat": flat_space,
    "hyperbolic": hyperbolic_space,
    "gaussian": gaussian_space,
    "randers": randers_space,
}

CERTIFIED = ("flat", "hyperbolic", "gaussian")


def get_space(name: str) -> MeasureSpace:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ConfigError(f"unknown built-in space {name!r}; choose from {sorted(BUILTIN)}") from None


def space_from_config(spec) -> MeasureSpace:
    """Accept a built-in name, {"builtin": name}, or a full serialized space."""
    if isinstance(spec, str):
        return get_space(spec)
    if isinstance(spec, dict) and "builtin" in spec:
        space = get_space(spec["builtin"])
        return space
    if isinstance(spec, dict):
        return MeasureSpace.from_dict(spec)
    raise ConfigError(f"cannot interpret space entry {spec!r}")
