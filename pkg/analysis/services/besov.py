"""
Осцилляции и однородные нормы Бесова: через осцилляции по шарам и через
кольцевое разбиение Литтлвуда–Пэли на периодической решётке.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import floor

import numpy as np
from scipy.special import betainc

from core.exceptions import MalformedSpec, NonPowerOfTwoGrid, TooFewPoints
from core.services.grid import GridDomain, GridFunction
from core.services.poly import indices_upto, monomial_values

logger = logging.getLogger(__name__)

IRLS_STEPS = 20


@dataclass(frozen=True)
class BesovParams:
    s: float
    p: float = 1.0
    q: float = 1.0
    M: int = None
    t_min: float = None
    t_max: float = None
    ratio: float = 2 ** 0.25

    def __post_init__(self):
        if self.s <= 0:
            raise MalformedSpec(f"Гладкость s должна быть положительной: {self.s}")
        if self.p < 1 or self.q < 1:
            raise MalformedSpec(f"Нужны p, q ≥ 1: p={self.p}, q={self.q}")
        if self.M is None:
            object.__setattr__(self, "M", floor(self.s) + 1)
        if self.M <= floor(self.s):
            raise MalformedSpec(f"Степень подгонки M={self.M} должна превышать ⌊s⌋={floor(self.s)}")
        if not 1 < self.ratio <= 2:
            raise MalformedSpec(f"Отношение масштабов вне (1, 2]: {self.ratio}")

    def with_ratio(self, ratio: float) -> "BesovParams":
        return BesovParams(s=self.s, p=self.p, q=self.q, M=self.M, t_min=self.t_min, t_max=self.t_max, ratio=ratio)

    def scales(self, domain: GridDomain) -> np.ndarray:
        t_min = self.t_min or domain.h
        if t_min < domain.h:
            raise MalformedSpec(f"t_min = {t_min} меньше шага решётки {domain.h}")
        t_max = self.t_max or max(domain.shape) * domain.h / 2
        count = int(np.floor(np.log(t_max / t_min) / np.log(self.ratio) + 1e-9)) + 1
        return t_min * self.ratio ** np.arange(count)


# --- осцилляции ---

@lru_cache(maxsize=256)
def _stencil(n: int, radius_cells: float, M: int) -> tuple:
    """Смещения ячеек с центром в шаре и псевдообратная матрица МНК по локальным мономам."""
    reach = int(np.ceil(radius_cells))
    grids = np.meshgrid(*[np.arange(-reach, reach + 1)] * n, indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1)
    offsets = offsets[(offsets ** 2).sum(axis=1) < radius_cells ** 2]
    design = monomial_values(offsets / radius_cells, indices_upto(n, M))
    return offsets, design, np.linalg.pinv(design)


def _windows(values: np.ndarray, offsets: np.ndarray, periodic: tuple, reach: int, budget: int = 4_000_000):
    """Окна (points, cells, dim) по всем узлам расширенной решётки, порциями.

    Непериодические оси дополняются нулями на reach ячеек: учитываются все шары,
    задевающие носитель.
    """
    n = values.ndim - 1
    pads = [(0, 0)] + [(0, 0) if per else (reach, reach) for per in periodic]
    ext = np.pad(values, pads)
    shape = ext.shape[1:]
    grids = np.meshgrid(*[np.arange(size) for size in shape], indexing="ij")
    base = np.stack([g.ravel() for g in grids], axis=1)
    chunk = max(1, budget // max(1, len(offsets) * values.shape[0]))
    for start in range(0, len(base), chunk):
        index = base[start:start + chunk, None, :] + offsets[None, :, :]
        inside = np.ones(index.shape[:2], dtype=bool)
        for d in range(n):
            if periodic[d]:
                index[..., d] %= shape[d]
            else:
                inside &= (index[..., d] >= 0) & (index[..., d] < shape[d])
                index[..., d] = np.clip(index[..., d], 0, shape[d] - 1)
        windows = ext[(slice(None),) + tuple(index[..., d] for d in range(n))]
        yield np.where(inside[None], windows, 0.0).transpose(1, 2, 0)


def _fit_pmean(windows: np.ndarray, design: np.ndarray, pinv: np.ndarray, p: float) -> np.ndarray:
    """inf_π p-среднее |f − π| по окнам: МНК при p = 2, итеративно перевзвешенный МНК иначе."""
    coeffs = np.einsum("kc,bcd->bkd", pinv, windows)
    residual = windows - np.einsum("ck,bkd->bcd", design, coeffs)
    if p != 2:
        scale = float(np.abs(windows).max(initial=0.0)) or 1.0
        for _ in range(IRLS_STEPS):
            size = np.sqrt((residual ** 2).sum(axis=-1))
            weight = np.maximum(size, 1e-9 * scale) ** (p - 2)
            normal = np.einsum("ck,bc,cl->bkl", design, weight, design)
            rhs = np.einsum("ck,bc,bcd->bkd", design, weight, windows)
            coeffs = np.linalg.solve(normal + 1e-14 * np.eye(design.shape[1]), rhs)
            residual = windows - np.einsum("ck,bkd->bcd", design, coeffs)
    size = np.sqrt((residual ** 2).sum(axis=-1))
    return (size ** p).mean(axis=1) ** (1.0 / p)


def oscillation_field(f: GridFunction, r: float, M: int, p: float = 1.0) -> np.ndarray:
    """osc_{p,M}(x, r) во всех узлах расширенной решётки (периодические оси не расширяются)."""
    radius_cells = r / f.domain.h
    offsets, design, pinv = _stencil(f.domain.n, round(radius_cells, 12), M)
    if len(offsets) < design.shape[1]:
        raise TooFewPoints(f"В шаре радиуса {r} лишь {len(offsets)} узлов, dim 𝒫_{M} = {design.shape[1]}")
    reach = int(np.ceil(radius_cells))
    return np.concatenate([
        _fit_pmean(windows, design, pinv, p) for windows in _windows(f.values, offsets, f.domain.periodic, reach)
    ])


def oscillation(f: GridFunction, x, r: float, M: int, p: float = 1.0) -> float:
    """osc в одной точке x: узлы решётки с центрами в B(x, r)."""
    domain = f.domain
    x = np.asarray(x, dtype=float)
    centers = domain.centers.reshape(-1, domain.n)
    delta = centers - x
    for d, per in enumerate(domain.periodic):
        if per:
            size = domain.shape[d] * domain.h
            delta[:, d] -= size * np.round(delta[:, d] / size)
    inside = (delta ** 2).sum(axis=1) < r ** 2
    indices = indices_upto(domain.n, M)
    if inside.sum() < len(indices):
        raise TooFewPoints(f"В B({x.tolist()}, {r}) лишь {int(inside.sum())} узлов, dim 𝒫_{M} = {len(indices)}")
    design = monomial_values(delta[inside] / r, indices)
    windows = f.values.reshape(f.dim, -1)[:, inside].T[None]
    return float(_fit_pmean(windows, design, np.linalg.pinv(design), p)[0])


@dataclass
class BesovResult:
    value: float
    coarse_value: float
    richardson: float          # относительная разница с отношением масштабов 2^{1/2}
    scales: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"value": self.value, "coarse_value": self.coarse_value, "richardson": self.richardson,
                "scales": len(self.scales), "skipped_scales": self.skipped}


def _osc_quadrature(f: GridFunction, params: BesovParams) -> tuple:
    total, used, skipped = 0.0, [], []
    volume = f.domain.cell_volume
    for t in params.scales(f.domain):
        try:
            osc = oscillation_field(f, t, params.M, params.p)
        except TooFewPoints:
            skipped.append(float(t))
            continue
        norm = float((np.sum(osc ** params.p) * volume) ** (1.0 / params.p))
        total += norm ** params.q * t ** (-params.s * params.q) * np.log(params.ratio)
        used.append(float(t))
    return total ** (1.0 / params.q), used, skipped


def besov_norm_osc(f: GridFunction, params: BesovParams) -> BesovResult:
    """(∫ t^{−sq} ‖osc(·, t)‖_p^q dt/t)^{1/q} по геометрической сетке масштабов."""
    value, used, skipped = _osc_quadrature(f, params)
    coarse, _, _ = _osc_quadrature(f, params.with_ratio(2 ** 0.5))
    richardson = abs(value - coarse) / value if value > 0 else 0.0
    if skipped:
        logger.info(f"⚠️ Пропущено {len(skipped)} масштабов: мало узлов для 𝒫_{params.M}")
    return BesovResult(value=value, coarse_value=coarse, richardson=richardson, scales=used, skipped=skipped)


# --- Литтлвуд–Пэли ---

def radial_profile(r: np.ndarray, smoothness: int = 3) -> np.ndarray:
    """ψ(r) = 1 при r ≤ 1, 0 при r ≥ 2, гладкий переход."""
    return 1.0 - betainc(smoothness + 1, smoothness + 1, np.clip(r - 1.0, 0.0, 1.0))


def _frequencies(domain: GridDomain) -> np.ndarray:
    axes = [2 * np.pi * np.fft.fftfreq(size, d=domain.h) for size in domain.shape]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(sum(g ** 2 for g in grids))


def littlewood_paley(domain: GridDomain) -> tuple:
    """Множители φ_j(ξ) = ψ(2^{−j}|ξ|) − ψ(2^{−j+1}|ξ|) для разрешимых j."""
    for size in domain.shape:
        if size & (size - 1):
            raise NonPowerOfTwoGrid(f"Размер решётки {domain.shape} не степень двойки")
    radius = _frequencies(domain)
    nonzero = radius[radius > 0]
    j_lo = int(np.floor(np.log2(nonzero.min())))
    j_hi = int(np.ceil(np.log2(nonzero.max())))
    levels = list(range(j_lo, j_hi + 1))
    multipliers = [radial_profile(radius / 2.0 ** j) - radial_profile(radius / 2.0 ** (j - 1)) for j in levels]
    return levels, multipliers, radius


def besov_norm_lp(f: GridFunction, params: BesovParams) -> dict:
    """(Σ_j (2^{js} ‖F⁻¹(φ_j f̂)‖_p)^q)^{1/q} на периодической решётке 2^L."""
    domain = f.domain
    levels, multipliers, _ = littlewood_paley(domain)
    spectrum = np.fft.fftn(f.values, axes=tuple(range(1, domain.n + 1)))
    total = 0.0
    for j, phi in zip(levels, multipliers):
        piece = np.real(np.fft.ifftn(spectrum * phi[None], axes=tuple(range(1, domain.n + 1))))
        norm = float((np.sum(np.sqrt((piece ** 2).sum(axis=0)) ** params.p) * domain.cell_volume) ** (1 / params.p))
        total += (2.0 ** (j * params.s) * norm) ** params.q
    return {"value": total ** (1.0 / params.q), "levels": [levels[0], levels[-1]]}


def partition_defect(domain: GridDomain) -> float:
    """max |Σ_j φ_j(ξ) − 1| по ненулевым частотам."""
    _, multipliers, radius = littlewood_paley(domain)
    total = np.sum(multipliers, axis=0)
    return float(np.abs(total[radius > 0] - 1.0).max())


def trace_besov_params(k: int, domain: GridDomain) -> BesovParams:
    """Ḃ^{k−1}_{1,1} для следа: M = k, масштабы [2h, L/2]."""
    if k < 2:
        raise MalformedSpec("След в Ḃ^{k−1}_{1,1} нужен при k ≥ 2")
    return BesovParams(s=k - 1, p=1.0, q=1.0, M=k, t_min=2 * domain.h, t_max=max(domain.shape) * domain.h / 2)
