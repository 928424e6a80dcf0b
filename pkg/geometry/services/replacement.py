"""
Последовательность замен в полосе полупространства ℍ = {y > 0}.

На масштабе s = 2^{−j}: T_j u = u + ρ_j (A_j − u), A_j = Σ_i ρ_{j,i} Π_{j,i} u,
где ρ_j: срезка у границы (1 при y ≤ s, 0 при y ≥ 2s), ρ_{j,i}: разбиение
единицы по касательным переменным с шагом s, Π_{j,i}: проекция на шаре,
отражённом через прямую y = s: центр (x_i, 1.5s), радиус s/2.
Нормальная координата: последняя ось сетки, касательные оси периодичны.
"""
import itertools
import logging
from dataclasses import dataclass, field
from math import isclose

import numpy as np
from scipy.special import betainc

from core.exceptions import MalformedSpec, ScaleTooFine
from core.services.ellipticity import NullspaceProfile
from core.services.grid import GridFunction, apply_operator, gradient_tensor
from core.services.poly import DiffOperator
from core.services.projection import BallSpec, ProjectionOperator, apply_projection, build_projection

logger = logging.getLogger(__name__)

MIN_RADIUS_CELLS = 2


def smoothstep(t: np.ndarray, smoothness: int) -> np.ndarray:
    """S(t) = I_t(k+1, k+1): 0 при t ≤ 0, 1 при t ≥ 1, класс C^k, S(t) + S(1 − t) = 1."""
    return betainc(smoothness + 1, smoothness + 1, np.clip(t, 0.0, 1.0))


def normal_cutoff(y: np.ndarray, j: int, smoothness: int) -> np.ndarray:
    scale = 2.0 ** (-j)
    return 1.0 - smoothstep((y - scale) / scale, smoothness)


def tangential_weight(offset: np.ndarray, j: int, smoothness: int) -> np.ndarray:
    """ρ_{j,i} по одной оси как функция смещения x − x_i (уже свёрнутого)."""
    return smoothstep(1.0 - np.abs(offset) * 2.0 ** j, smoothness)


class ProjectionBuilder:
    """Π_𝔸 на шарах с кэшем по (центр, радиус)."""

    def __init__(self, op: DiffOperator, profile: NullspaceProfile, m: int = None):
        self.op = op
        self.profile = profile
        self.m = m
        self._cache: dict = {}

    def __call__(self, ball: BallSpec) -> ProjectionOperator:
        key = (tuple(round(c, 12) for c in ball.center), round(ball.radius, 12))
        if key not in self._cache:
            self._cache[key] = build_projection(self.op, ball, self.profile, m=self.m)
        return self._cache[key]

    def __len__(self):
        return len(self._cache)


@dataclass(frozen=True, eq=False)
class ReplacementStep:
    j: int
    cutoff: np.ndarray          # ρ_j на ячейках (*shape)
    average: np.ndarray         # A_j: (dim, *shape)
    value: GridFunction         # T_j u
    balls: int


@dataclass(frozen=True, eq=False)
class ReplacementResult:
    j: int
    current: ReplacementStep
    following: ReplacementStep
    first: GridFunction         # I_j[u]
    second: GridFunction        # II_j[u]
    checks: dict = field(default_factory=dict)


def _ball_centers(domain, j: int) -> list:
    scale = 2.0 ** (-j)
    tangential = []
    for d in range(domain.n - 1):
        length = domain.shape[d] * domain.h
        count = length / scale
        if not isclose(count, round(count), abs_tol=1e-9):
            raise MalformedSpec(f"Ширина полосы {length} не кратна масштабу 2^-{j}")
        tangential.append([domain.origin[d] + i * scale for i in range(int(round(count)))])
    height = domain.origin[-1] + 1.5 * scale
    return [tuple(point) + (height,) for point in itertools.product(*tangential)]


def replacement_step(u: GridFunction, op: DiffOperator, builder, j: int, smoothness: int = None) -> ReplacementStep:
    """T_j u на масштабе 2^{−j}."""
    domain = u.domain
    if domain.periodic[:-1] != (True,) * (domain.n - 1) or domain.periodic[-1]:
        raise MalformedSpec("Нужна полоса, периодическая по касательным осям")
    scale = 2.0 ** (-j)
    radius = scale / 2
    if radius < MIN_RADIUS_CELLS * domain.h:
        raise ScaleTooFine(f"Радиус 2^-{j}/2 = {radius} меньше {MIN_RADIUS_CELLS}h = {MIN_RADIUS_CELLS * domain.h}")
    depth = domain.shape[-1] * domain.h
    if 2 * scale >= depth:
        raise MalformedSpec(f"Масштаб 2^-{j} слишком крупный для полосы глубины {depth}")
    smoothness = op.k if smoothness is None else smoothness

    points = domain.centers.reshape(-1, domain.n)
    lengths = np.array([domain.shape[d] * domain.h for d in range(domain.n - 1)])
    average = np.zeros((points.shape[0], u.dim))
    centers = _ball_centers(domain, j)
    for center in centers:
        offset = points[:, :-1] - np.asarray(center[:-1])
        offset -= lengths * np.round(offset / lengths)
        weight = np.prod(tangential_weight(offset, j, smoothness), axis=1)
        active = weight > 0
        if not active.any():
            continue
        poly = apply_projection(builder(BallSpec(center, radius)), u)
        local = points[active].copy()
        local[:, :-1] = np.asarray(center[:-1]) + offset[active]
        average[active] += weight[active, None] * poly.evaluate(local)

    average = average.T.reshape((u.dim,) + domain.shape)
    cutoff = normal_cutoff(domain.centers[..., -1] - domain.origin[-1], j, smoothness)
    value = u.values + cutoff[None] * (average - u.values)
    value[:, ~domain.mask] = 0.0
    return ReplacementStep(j=j, cutoff=cutoff, average=average, value=GridFunction(domain, value), balls=len(centers))


def sobolev_l1(gf: GridFunction, k: int, where: np.ndarray = None) -> float:
    """‖v‖_{W^{k,1}} = Σ_{ℓ ≤ k} ‖D^ℓ v‖₁ по ячейкам, где шаблон целиком в маске."""
    total = 0.0
    for order in range(k + 1):
        tensor, valid = gradient_tensor(gf, order)
        region = valid if where is None else valid & where
        total += float(np.sqrt((tensor ** 2).sum(axis=0))[region].sum() * gf.domain.cell_volume)
    return total


def replacement_sequence(u: GridFunction, op: DiffOperator, builder, j: int,
                         smoothness: int = None) -> ReplacementResult:
    """T_j u, T_{j+1} u и разбиение T_{j+1}u − T_j u = I_j[u] + II_j[u]."""
    domain = u.domain
    logger.info(f"🔄 Замены на масштабе 2^-{j} для {op}")
    current = replacement_step(u, op, builder, j, smoothness)
    following = replacement_step(u, op, builder, j + 1, smoothness)

    first = (following.cutoff - current.cutoff)[None] * (current.average - u.values)
    second = following.cutoff[None] * (following.average - current.average)
    first[:, ~domain.mask] = 0.0
    second[:, ~domain.mask] = 0.0
    first_gf, second_gf = GridFunction(domain, first), GridFunction(domain, second)

    height = domain.centers[..., -1] - domain.origin[-1]
    band = height <= 2.0 ** (-j - 2)
    strip = height < 2.0 ** (-j + 1)
    image, valid = apply_operator(op, u)
    denominator = float(np.sqrt((image ** 2).sum(axis=0))[valid & strip].sum() * domain.cell_volume)
    numerator = sobolev_l1(second_gf, op.k)
    telescope = following.value.values - current.value.values - first - second

    checks = {
        "telescope_error": float(np.abs(telescope).max()),
        "band_max": float(np.abs(first[:, band]).max(initial=0.0)),
        "sup_error": float(np.abs(current.value.values - u.values).max()),
        "second_w_k1": numerator,
        "operator_l1_strip": denominator,
        "second_ratio": numerator / denominator if denominator > 0 else (0.0 if numerator == 0 else float("inf")),
        "balls": current.balls + following.balls,
    }
    logger.info(f"✅ Масштаб 2^-{j}: ‖T_j u − u‖∞ = {checks['sup_error']:.3e}, II/𝔸u = {checks['second_ratio']:.3e}")
    return ReplacementResult(j=j, current=current, following=following, first=first_gf, second=second_gf,
                             checks=checks)
