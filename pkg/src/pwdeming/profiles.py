"""Precision profiles: measurement variance as a function of true concentration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ProfileError

# family name -> (kernel code, ordered parameter names)
FAMILIES: dict[str, tuple[int, tuple[str, ...]]] = {
    "ConstantVariance": (0, ("variance",)),
    "ConstantCV": (1, ("kappa",)),
    "RockeLorenzato": (2, ("sigma", "kappa")),
    "LinearSD": (3, ("sigma", "kappa")),
    "Power": (4, ("a", "b", "p")),
}


@dataclass(frozen=True)
class PrecisionProfile:
    """Immutable variance-vs-concentration model ``g(mu)``.

    ``params`` holds the family parameters in the order listed in
    :data:`FAMILIES`: SD scale for RockeLorenzato / LinearSD, variance scale
    for ConstantVariance, and ``g = a + b * mu**p`` for Power.
    """

    family: str
    params: tuple[float, ...]
    _code: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ProfileError(f"unknown profile family {self.family!r}")
        code, names = FAMILIES[self.family]
        params = tuple(float(p) for p in self.params)
        if len(params) != len(names):
            raise ProfileError(
                f"{self.family} takes {len(names)} parameters {names}, got {len(params)}"
            )
        if not all(math.isfinite(p) for p in params):
            raise ProfileError(f"{self.family} parameters must be finite: {params}")
        if self.family == "Power":
            a, b, p = params
            if a < 0 or b < 0 or p <= 0:
                raise ProfileError("Power profile needs a >= 0, b >= 0, p > 0")
        elif any(p < 0 for p in params):
            raise ProfileError(f"{self.family} parameters must be non-negative: {params}")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_code", code)

    # constructors -----------------------------------------------------------

    @classmethod
    def constant_variance(cls, variance: float) -> "PrecisionProfile":
        return cls("ConstantVariance", (variance,))

    @classmethod
    def constant_cv(cls, kappa: float) -> "PrecisionProfile":
        return cls("ConstantCV", (kappa,))

    @classmethod
    def rocke_lorenzato(cls, sigma: float, kappa: float) -> "PrecisionProfile":
        return cls("RockeLorenzato", (sigma, kappa))

    @classmethod
    def linear_sd(cls, sigma: float, kappa: float) -> "PrecisionProfile":
        return cls("LinearSD", (sigma, kappa))

    @classmethod
    def power(cls, a: float, b: float, p: float) -> "PrecisionProfile":
        return cls("Power", (a, b, p))

    # evaluation ---------------------------------------------------------------

    @property
    def code(self) -> int:
        return self._code

    def as_array(self) -> np.ndarray:
        """Parameters padded to length 3 for the compiled kernels."""
        out = np.zeros(3)
        out[: len(self.params)] = self.params
        return out

    def __call__(self, mu):
        return evaluate(self, mu)

    def is_degenerate(self) -> bool:
        """True when the profile is identically zero for mu > 0."""
        p = self.params
        if self.family == "Power":
            return p[0] == 0 and p[1] == 0
        return all(v == 0 for v in p)

    # serialization ------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        names = FAMILIES[self.family][1]
        return {"family": self.family, "params": dict(zip(names, self.params))}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "PrecisionProfile":
        try:
            family = obj["family"]
            raw = obj["params"]
        except (KeyError, TypeError) as exc:
            raise ProfileError("profile JSON needs 'family' and 'params'") from exc
        if family not in FAMILIES:
            raise ProfileError(f"unknown profile family {family!r}")
        names = FAMILIES[family][1]
        if isinstance(raw, Mapping):
            missing = [n for n in names if n not in raw]
            extra = [k for k in raw if k not in names]
            if missing or extra:
                raise ProfileError(
                    f"{family} params must be exactly {names}; missing={missing} extra={extra}"
                )
            values = tuple(raw[n] for n in names)
        else:
            values = tuple(raw)
        return cls(family, values)


def evaluate(profile: PrecisionProfile, mu):
    """Variance ``g(mu)``; scalar in, float out, array in, array out."""
    scalar = np.ndim(mu) == 0
    m = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ProfileError("concentration must be finite")
    fam = profile.family
    p = profile.params
    if fam == "ConstantVariance":
        out = np.full(m.shape, p[0])
    elif fam == "ConstantCV":
        out = (p[0] * m) ** 2
    elif fam == "RockeLorenzato":
        out = p[0] ** 2 + (p[1] * m) ** 2
    elif fam == "LinearSD":
        out = (p[0] + p[1] * m) ** 2
    else:
        if np.any(m < 0):
            raise ProfileError("Power profile needs mu >= 0")
        out = p[0] + p[1] * m ** p[2]
    return float(out) if scalar else out


def scale(profile: PrecisionProfile, lam: float) -> PrecisionProfile:
    """Profile whose variance is ``lam`` times the input's everywhere."""
    lam = float(lam)
    if not math.isfinite(lam) or lam <= 0:
        raise ProfileError(f"scale factor must be positive and finite, got {lam}")
    r = math.sqrt(lam)
    p = profile.params
    fam = profile.family
    if fam == "ConstantVariance":
        new = (p[0] * lam,)
    elif fam == "ConstantCV":
        new = (p[0] * r,)
    elif fam in ("RockeLorenzato", "LinearSD"):
        new = (p[0] * r, p[1] * r)
    else:
        new = (p[0] * lam, p[1] * lam, p[2])
    return PrecisionProfile(fam, new)
