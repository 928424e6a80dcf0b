"""
Максимальные функции, веса Макенхаупта и разбиение Кальдерона–Зигмунда.

Семейство кубов: решётчатые диадические кубы сторон 1, 2, 4, … ячеек и их
копии, сдвинутые на полстороны. Все супремумы берутся по этому семейству.
"""
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np

from core.exceptions import FileError, MalformedSpec, ThresholdTooSmall
from core.services.grid import GridDomain, GridFunction

if TYPE_CHECKING:
    from geometry.services.decomposition import MomentSubspace

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-12


# --- веса ---

@dataclass(frozen=True)
class Weight:
    kind: str = "unit"
    exponent: float = 0.0
    center: Optional[tuple] = None
    grid: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @classmethod
    def unit(cls) -> "Weight":
        return cls()

    @classmethod
    def power(cls, exponent: float, center) -> "Weight":
        return cls(kind="power", exponent=float(exponent), center=tuple(float(c) for c in center))

    @classmethod
    def custom(cls, values: np.ndarray) -> "Weight":
        values = np.asarray(values, dtype=float)
        if not np.all(values > 0):
            raise MalformedSpec("Вес должен быть строго положительным во всех ячейках")
        return cls(kind="custom", grid=values)

    @classmethod
    def parse(cls, text: str, n: int = 2) -> "Weight":
        """unit | power:a=<float>,cx=<float>,cy=<float> | file:<path.npy>."""
        text = (text or "unit").strip()
        if text == "unit":
            return cls.unit()
        kind, _, rest = text.partition(":")
        if kind == "power":
            params = dict(item.split("=", 1) for item in rest.split(",") if item)
            try:
                exponent = float(params.pop("a"))
                center = [float(params.pop(f"c{axis}", 0.0)) for axis in "xyzw"[:n]]
            except (KeyError, ValueError) as e:
                raise MalformedSpec(f"Неверный степенной вес «{text}»: {e}")
            if params:
                raise MalformedSpec(f"Лишние параметры веса: {', '.join(sorted(params))}")
            return cls.power(exponent, center)
        if kind == "file":
            path = Path(rest)
            if not path.exists():
                raise FileError(f"Файл веса не найден: {path}")
            return cls.custom(np.load(path))
        raise MalformedSpec(f"Неизвестный вес «{text}»")

    def values(self, domain: GridDomain) -> np.ndarray:
        """w в центрах ячеек. Центр степенного веса сдвигается в ближайший узел решётки."""
        if self.kind == "unit":
            return np.ones(domain.shape)
        if self.kind == "custom":
            if self.grid.shape != domain.shape:
                raise MalformedSpec(f"Вес формы {self.grid.shape} не подходит к сетке {domain.shape}")
            return self.grid
        origin = np.asarray(domain.origin)
        vertex = origin + np.round((np.asarray(self.center) - origin) / domain.h) * domain.h
        distance = np.linalg.norm(domain.centers - vertex, axis=-1)
        return distance ** self.exponent

    def describe(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "a": self.exponent, "center": list(self.center)}
        return {"kind": self.kind}


# --- блочные средние ---

def family_sides(shape: tuple) -> list:
    top = 1 << int(np.ceil(np.log2(max(shape))))
    sides, side = [], 1
    while side <= top:
        sides.append(side)
        side *= 2
    return sides


def family_shifts(side: int) -> tuple:
    return (0,) if side == 1 else (0, side // 2)


def _blocks_nd(array: np.ndarray, side: int, shift: int, lead: int) -> tuple:
    """Разрезать (*lead, *shape) на блоки side^n со сдвигом: (*lead, *nb, side^n) и паддинги."""
    shape = array.shape[lead:]
    pads = [(shift, (-(size + shift)) % side) for size in shape]
    ext = np.pad(array, [(0, 0)] * lead + pads)
    split = list(ext.shape[:lead])
    for size in ext.shape[lead:]:
        split += [size // side, side]
    blocks = ext.reshape(split)
    n = len(shape)
    order = list(range(lead)) + [lead + 2 * d for d in range(n)] + [lead + 2 * d + 1 for d in range(n)]
    blocks = blocks.transpose(order)
    counts = blocks.shape[lead:lead + n]
    return blocks.reshape(blocks.shape[:lead] + counts + (side ** n,)), pads


def _expand(per_block: np.ndarray, side: int, pads: list, shape: tuple) -> np.ndarray:
    """Значение блока → всем его ячейкам, затем обрезка паддинга."""
    ext = per_block
    for axis in range(len(shape)):
        ext = np.repeat(ext, side, axis=axis)
    crop = tuple(slice(lo, lo + size) for (lo, _), size in zip(pads, shape))
    return ext[crop]


def _block_corners(counts: tuple, side: int, shift: int) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(c) * side - shift for c in counts], indexing="ij")
    return np.stack(grids, axis=-1)


def _summed_table(values: np.ndarray) -> np.ndarray:
    table = np.pad(values.astype(float), [(1, 0)] * values.ndim)
    for axis in range(values.ndim):
        table = np.cumsum(table, axis=axis)
    return table


def _box_sum(table: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Σ по [lo, hi) для массивов углов (…, n) через включение-исключение."""
    n = lo.shape[-1]
    total = np.zeros(lo.shape[:-1])
    for corner in itertools.product((0, 1), repeat=n):
        index = tuple(np.where(c, hi[..., d], lo[..., d]) for d, c in enumerate(corner))
        sign = (-1) ** (n - sum(corner))
        total += sign * table[index]
    return total


def _eligible(domain: GridDomain, corners: np.ndarray, side: int, sigma: float) -> np.ndarray:
    """σQ ⊂ Ω для кубов с углами corners."""
    center = corners + side / 2
    lo = np.floor(center - sigma * side / 2 + 1e-9).astype(int)
    hi = np.ceil(center + sigma * side / 2 - 1e-9).astype(int)
    shape = np.array(domain.shape)
    inside_box = np.all(lo >= 0, axis=-1) & np.all(hi <= shape, axis=-1)
    table = _summed_table(~domain.mask)
    outside = _box_sum(table, np.clip(lo, 0, shape), np.clip(hi, 0, shape))
    return inside_box & (outside < 0.5)


@dataclass(frozen=True, eq=False)
class MaximalField:
    domain: GridDomain
    values: np.ndarray       # (*shape)
    eligible: np.ndarray     # ячейки, у которых нашёлся допустимый куб
    variant: str

    @property
    def empty_points(self) -> int:
        """Ячейки Ω без допустимого куба (значение 0 по определению)."""
        return int((self.domain.mask & ~self.eligible).sum())

    def lp_norm(self, q: float, weight: np.ndarray = None) -> float:
        return GridFunction(self.domain, self.values[None]).lp_norm(q, weight=weight)


def hl_maximal(density: np.ndarray, domain: GridDomain, p: float = 1.0) -> np.ndarray:
    """sup_Q∋x (⨍_Q |f|^p)^{1/p}, f продолжена нулём вне маски."""
    power = np.abs(np.where(domain.mask, density, 0.0)) ** p
    result = np.zeros(domain.shape)
    for side in family_sides(domain.shape):
        for shift in family_shifts(side):
            blocks, pads = _blocks_nd(power, side, shift, 0)
            result = np.maximum(result, _expand(blocks.mean(axis=-1), side, pads, domain.shape))
    return result ** (1.0 / p)


def _fit_residuals(values: np.ndarray, points: np.ndarray, subspace: "MomentSubspace", p: float) -> np.ndarray:
    """p-среднее |f − π*| по блокам, π*: МНК (при p = 1 с одним перевзвешиванием).

    values: (B, cells, dim), points: (B, cells, n).
    """
    count, cells, dim = values.shape
    basis = subspace.evaluate(points.reshape(-1, points.shape[-1]))
    design = basis.reshape(len(subspace), count, cells, dim).transpose(1, 2, 3, 0).reshape(count, cells * dim, -1)
    target = values.reshape(count, cells * dim)
    coeffs = np.einsum("bkr,br->bk", np.linalg.pinv(design), target)
    residual = target - np.einsum("brk,bk->br", design, coeffs)
    if p == 1:
        size = np.sqrt((residual.reshape(count, cells, dim) ** 2).sum(axis=-1))
        scale = 1.0 / np.sqrt(np.maximum(size, 1e-12 * max(1.0, float(size.max(initial=0.0)))))
        row = np.repeat(scale, dim, axis=1)
        coeffs = np.einsum("bkr,br->bk", np.linalg.pinv(design * row[..., None]), target * row)
        residual = target - np.einsum("brk,bk->br", design, coeffs)
    size = np.sqrt((residual.reshape(count, cells, dim) ** 2).sum(axis=-1))
    return (size ** p).mean(axis=1) ** (1.0 / p)


def maximal(f: GridFunction, variant: str = "hl", sigma: float = 1.0, p: float = 1.0,
            subspace: "MomentSubspace" = None) -> MaximalField:
    """hl | restricted(Ω, σ, p) | sharp(Ω, σ, p, 𝒩)."""
    domain = f.domain
    if variant not in ("hl", "restricted", "sharp"):
        raise MalformedSpec(f"Неизвестный вариант максимальной функции: {variant}")
    if variant != "hl" and (sigma < 1 or p < 1):
        raise MalformedSpec(f"Нужны σ ≥ 1 и p ≥ 1, получено σ={sigma}, p={p}")
    if variant == "sharp" and subspace is None:
        raise MalformedSpec("Для острой максимальной функции нужно подпространство 𝒩")

    density = f.pointwise_norm()
    if variant == "hl":
        values = hl_maximal(density, domain, p)
        return MaximalField(domain, values, np.ones(domain.shape, dtype=bool), variant)

    power = np.where(domain.mask, density, 0.0) ** p
    values = np.zeros(domain.shape)
    eligible_cells = np.zeros(domain.shape, dtype=bool)
    for side in family_sides(domain.shape):
        for shift in family_shifts(side):
            blocks, pads = _blocks_nd(power, side, shift, 0)
            corners = _block_corners(blocks.shape[:-1], side, shift)
            ok = _eligible(domain, corners, side, sigma)
            if not ok.any():
                continue
            means = np.where(ok, blocks.mean(axis=-1), 0.0) ** (1.0 / p)
            if variant == "restricted":
                per_block = means
            else:
                f_blocks, _ = _blocks_nd(f.values, side, shift, 1)
                chosen = np.argwhere(ok)
                local = f_blocks[(slice(None),) + tuple(chosen.T)]          # (dim, B, cells)
                offsets = np.array(list(itertools.product(range(side), repeat=domain.n))) + 0.5
                points = np.asarray(domain.origin) + (corners[tuple(chosen.T)][:, None, :] + offsets[None]) * domain.h
                per_block = np.zeros(ok.shape)
                per_block[tuple(chosen.T)] = _fit_residuals(local.transpose(1, 2, 0), points, subspace, p)
                # π = 0 тоже допустим
                per_block = np.minimum(per_block, means)
            values = np.maximum(values, _expand(per_block, side, pads, domain.shape))
            eligible_cells |= _expand(ok, side, pads, domain.shape)
    values = np.where(domain.mask & eligible_cells, values, 0.0)
    field_ = MaximalField(domain, values, eligible_cells & domain.mask, variant)
    if field_.empty_points:
        logger.info(f"⚠️ {variant}: {field_.empty_points} ячеек без допустимого куба (σ={sigma})")
    return field_


# --- Макенхаупт ---

def muckenhoupt_on_grid(values: np.ndarray, q: float, sides: list = None, shifted: bool = True) -> float:
    """[w]_{A_q} по решётчатому семейству (sup по кубам внутри прямоугольника)."""
    if q < 1:
        raise MalformedSpec(f"q должно быть ≥ 1: {q}")
    values = np.asarray(values, dtype=float)
    sides = sides or [s for s in family_sides(values.shape) if s <= min(values.shape)]
    constant = 1.0
    for side in sides:
        for shift in (family_shifts(side) if shifted else (0,)):
            blocks, pads = _blocks_nd(values, side, shift, 0)
            corners = _block_corners(blocks.shape[:-1], side, shift)
            full = np.all(corners >= 0, axis=-1) & np.all(corners + side <= np.array(values.shape), axis=-1)
            if not full.any():
                continue
            chosen = blocks[full]
            average = chosen.mean(axis=-1)
            if q == 1:
                product = average / chosen.min(axis=-1)
            else:
                product = average * (chosen ** (-1.0 / (q - 1))).mean(axis=-1) ** (q - 1)
            constant = max(constant, float(product.max()))
    return constant


def muckenhoupt_constant(weight: Weight, q: float, depth: int = 6, box: tuple = (-1.0, 1.0), n: int = 2,
                         shifted: bool = True) -> float:
    """[w]_{A_q} по диадическим кубам куба box^n до глубины depth.

    Решётка: 2^{depth+1} ячеек по оси, так что самый мелкий куб семейства: 2 ячейки.
    """
    cells = 2 ** (depth + 1)
    lo, hi = box
    domain = GridDomain(n=n, h=(hi - lo) / cells, mask=np.ones((cells,) * n, dtype=bool), origin=(lo,) * n,
                        kind="box")
    sides = [cells >> level for level in range(depth + 1)]
    constant = muckenhoupt_on_grid(weight.values(domain), q, sides=sides, shifted=shifted)
    logger.info(f"🔍 [w]_A{q} ({weight.kind}, глубина {depth}) = {constant:.6g}")
    return constant


# --- Кальдерон–Зигмунд ---

@dataclass(frozen=True)
class DyadicCube:
    level: int
    corner: tuple
    side: int
    average: float

    def contains(self, other: "DyadicCube") -> bool:
        return all(a <= b and b + other.side <= a + self.side for a, b in zip(self.corner, other.corner))

    def to_json(self) -> dict:
        return {"level": self.level, "corner": list(self.corner), "side": self.side}


def cz_decomposition(density: np.ndarray, alpha: float) -> list:
    """Максимальные диадические кубы с α < ⨍|f| ≤ 2ⁿα внутри куба Q₀ = решётки 2^L."""
    density = np.abs(np.asarray(density, dtype=float))
    n = density.ndim
    side = density.shape[0]
    if any(size != side for size in density.shape) or side & (side - 1):
        raise MalformedSpec(f"Q₀ должен быть кубом со стороной 2^L ячеек: {density.shape}")
    if alpha < density.mean():
        raise ThresholdTooSmall(f"α = {alpha} меньше среднего {density.mean():.6g} по Q₀")
    table = _summed_table(density)
    selected = []
    queue = deque([((0,) * n, side, 0)])
    while queue:
        corner, size, level = queue.popleft()
        if size == 1:
            continue
        half = size // 2
        for offset in itertools.product((0, half), repeat=n):
            child = tuple(c + o for c, o in zip(corner, offset))
            lo = np.array(child)
            total = float(_box_sum(table, lo[None], (lo + half)[None])[0])
            average = total / half ** n
            if average > alpha:
                selected.append(DyadicCube(level + 1, child, half, average))
            else:
                queue.append((child, half, level + 1))
    selected.sort(key=lambda cube: (cube.level, cube.corner))
    return selected


def cz_properties(density: np.ndarray, alpha: float, cubes: list) -> dict:
    """Свойства (a)–(e): оценки средних, непересекаемость, |f| ≤ α вне объединения, покрытие 5Q."""
    density = np.abs(np.asarray(density, dtype=float))
    n = density.ndim
    covered = np.zeros(density.shape, dtype=int)
    for cube in cubes:
        covered[tuple(slice(c, c + cube.side) for c in cube.corner)] += 1
    bounds = all(alpha < cube.average <= 2 ** n * alpha * (1 + 1e-12) for cube in cubes)
    disjoint = bool(covered.max(initial=0) <= 1)
    off_union = bool(np.all(density[covered == 0] <= alpha * (1 + 1e-12)))
    # (d) масса объединения: Σ|Q_j| ≤ ‖f‖₁ / α
    mass = sum(cube.side ** n for cube in cubes) <= density.sum() / alpha * (1 + 1e-12) if alpha > 0 else True

    domain = GridDomain(n=n, h=1.0, mask=np.ones(density.shape, dtype=bool), origin=(0.0,) * n, kind="box")
    level_set = hl_maximal(density, domain) > 2 ** n * alpha * (1 + 1e-12)
    dilated = np.zeros(density.shape, dtype=bool)
    for cube in cubes:
        lo = [max(0, c - 2 * cube.side) for c in cube.corner]
        hi = [min(s, c + 3 * cube.side) for c, s in zip(cube.corner, density.shape)]
        dilated[tuple(slice(a, b) for a, b in zip(lo, hi))] = True
    covering = bool(np.all(dilated[level_set]))
    return {"a": bool(bounds), "b": disjoint, "c": off_union, "d": bool(mass), "e": covering}


def cz_nested(coarse: list, fine: list) -> bool:
    """Каждый куб уровня α лежит в кубе уровня β ≤ α."""
    return all(any(big.contains(small) for big in coarse) for small in fine)


# --- Фефферман–Стейн ---

def weighted_best_approximation(f: GridFunction, subspace: "MomentSubspace", weight: np.ndarray = None,
                                where: np.ndarray = None) -> tuple:
    """argmin_π Σ w|f − π|² по ячейкам where: (коэффициенты, остаток как GridFunction)."""
    domain = f.domain
    where = domain.mask if where is None else where & domain.mask
    w = np.ones(domain.shape) if weight is None else weight
    basis = subspace.evaluate(domain.centers[where])              # (K, P, dim)
    root = np.sqrt(w[where])
    design = (basis * root[None, :, None]).reshape(len(subspace), -1).T
    target = (f.values[:, where].T * root[:, None]).ravel()
    coeffs, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = f.values.copy()
    residual[:, where] -= np.einsum("a,apd->dp", coeffs, basis)
    residual[:, ~where] = 0.0
    return coeffs, GridFunction(domain, residual)


def fefferman_stein_check(f: GridFunction, subspace: "MomentSubspace", q: float = 2.0, weight: Weight = None,
                          sigma: float = 2.0, p: float = 1.0) -> dict:
    """inf_π ‖f − π‖_{L^q_w(Ω)} / ‖ℳ♯_res f‖_{L^q_w(Ω)}; 0/0: Exact."""
    weight = weight or Weight.unit()
    w = weight.values(f.domain)
    _, residual = weighted_best_approximation(f, subspace, w)
    numerator = residual.lp_norm(q, weight=w)
    denominator = maximal(f, "sharp", sigma=sigma, p=p, subspace=subspace).lp_norm(q, weight=w)
    scale = max(1.0, f.lp_norm(q, weight=w))
    exact = numerator <= EXACT_TOL * scale and denominator <= EXACT_TOL * scale
    if exact:
        ratio = None
    elif denominator <= EXACT_TOL * scale:
        ratio = float("inf")
    else:
        ratio = numerator / denominator
    return {"numerator": numerator, "denominator": denominator, "ratio": ratio, "exact": bool(exact),
            "q": q, "sigma": sigma, "weight": weight.describe()}
