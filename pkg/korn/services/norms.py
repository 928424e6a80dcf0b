"""
Нормы для неравенств Корна: весовая L^p, Лоренца L^{p,q} и Орлича L^φ.

Все нормы считаются по поточечной величине |f(x)| в ячейках с мерой hⁿ.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from core.exceptions import InvalidOrlicz, MalformedSpec

logger = logging.getLogger(__name__)

DOUBLING_RANGE = (-40, 40)


def weighted_lp(density: np.ndarray, volume: float, p: float, weight: np.ndarray = None) -> float:
    if p < 1:
        raise MalformedSpec(f"Показатель p ≥ 1, получено {p}")
    w = 1.0 if weight is None else weight
    if np.isinf(p):
        return float(np.max(density, initial=0.0))
    return float((np.sum(w * density ** p) * volume) ** (1.0 / p))


def rearrangement(density: np.ndarray, volume: float, weight: np.ndarray = None) -> tuple:
    """Убывающая перестановка f*: значения по убыванию и правые концы ступенек t_i."""
    order = np.argsort(-density, kind="stable")
    values = density[order]
    measures = np.full(values.shape, volume) if weight is None else weight[order] * volume
    return values, np.cumsum(measures)


def lorentz_norm(density: np.ndarray, volume: float, p: float, q: float, weight: np.ndarray = None) -> float:
    """‖f‖_{p,q} = (∫ (t^{1/p} f*(t))^q dt/t)^{1/q}, точно для ступенчатой f*."""
    if p < 1 or q < 1:
        raise MalformedSpec(f"Нужны p, q ≥ 1: p={p}, q={q}")
    values, ends = rearrangement(np.ravel(density), volume, None if weight is None else np.ravel(weight))
    if np.isinf(q):
        return float(np.max(values * ends ** (1.0 / p), initial=0.0))
    starts = np.concatenate([[0.0], ends[:-1]])
    steps = (p / q) * (ends ** (q / p) - starts ** (q / p))
    return float(np.sum(values ** q * steps) ** (1.0 / q))


@dataclass(frozen=True)
class OrliczFunction:
    """φ(t) = t^p (1 + log(1 + t))^β."""

    p: float
    beta: float = 0.0

    def __post_init__(self):
        if self.p < 1:
            raise InvalidOrlicz(f"Показатель φ должен быть ≥ 1: p={self.p}")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidOrlicz(f"β вне [0, 1]: {self.beta}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return t ** self.p * (1.0 + np.log1p(t)) ** self.beta

    def doubling_ratios(self) -> np.ndarray:
        """φ(2t)/φ(t) на диадических t = 2^j."""
        t = 2.0 ** np.arange(*DOUBLING_RANGE, dtype=float)
        return self(2 * t) / self(t)

    def check(self) -> dict:
        """Δ₂: sup φ(2t)/φ(t) < ∞; ∇₂: inf φ(2t)/(2φ(t)) > 1."""
        ratios = self.doubling_ratios()
        delta2 = float(ratios.max())
        nabla2 = float((ratios / 2).min())
        # хвост не должен расти: иначе супремум не ограничен
        tail_growing = ratios[-1] > ratios[-2] * (1 + 1e-6) and ratios[-1] > 2 ** (self.p + 1)
        if not np.isfinite(delta2) or tail_growing:
            raise InvalidOrlicz(f"φ не удовлетворяет Δ₂: sup φ(2t)/φ(t) ≈ {delta2}")
        if nabla2 <= 1 + 1e-3:
            raise InvalidOrlicz(f"φ не удовлетворяет ∇₂: inf φ(2t)/(2φ(t)) ≈ {nabla2}")
        return {"delta2": delta2, "nabla2": nabla2}

    def modular(self, density: np.ndarray, volume: float) -> float:
        return float(np.sum(self(density)) * volume)

    def luxemburg(self, density: np.ndarray, volume: float) -> float:
        """inf{λ > 0: ∫φ(|f|/λ) ≤ 1}."""
        top = float(np.max(density, initial=0.0))
        if top == 0.0:
            return 0.0
        def gap(lam):
            return self.modular(density / lam, volume) - 1.0

        lo, hi = top * 1e-3, top
        while gap(hi) > 0:
            hi *= 2
        while gap(lo) < 0:
            lo /= 2
        return float(brentq(gap, lo, hi, xtol=1e-15 * hi, rtol=1e-14))

    def describe(self) -> dict:
        return {"p": self.p, "beta": self.beta}


@dataclass(frozen=True)
class NormSpec:
    """Какую норму брать в отношениях: lp (с весом), lorentz или orlicz."""

    kind: str = "lp"
    p: float = 2.0
    q: float = None
    orlicz: OrliczFunction = None

    @classmethod
    def build(cls, p: float = 2.0, lorentz: float = None, orlicz_beta: float = None) -> "NormSpec":
        if lorentz is not None and orlicz_beta is not None:
            raise MalformedSpec("Нельзя одновременно задать Лоренца и Орлича")
        if lorentz is not None:
            return cls(kind="lorentz", p=p, q=lorentz)
        if orlicz_beta is not None:
            phi = OrliczFunction(p=p, beta=orlicz_beta)
            phi.check()
            return cls(kind="orlicz", p=p, orlicz=phi)
        return cls(kind="lp", p=p)

    def norm(self, density: np.ndarray, volume: float, weight: np.ndarray = None) -> float:
        if self.kind == "lorentz":
            return lorentz_norm(density, volume, self.p, self.q, weight)
        if self.kind == "orlicz":
            return self.orlicz.luxemburg(density, volume)
        return weighted_lp(density, volume, self.p, weight)

    def describe(self) -> dict:
        data = {"kind": self.kind, "p": self.p}
        if self.q is not None:
            data["q"] = self.q
        if self.orlicz is not None:
            data["beta"] = self.orlicz.beta
        return data
