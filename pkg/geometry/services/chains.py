"""
Покрытия Уитни и цепочки кубов, сходящиеся к центральному кубу.

Все размеры в единицах ячеек: куб Q = [corner, corner + side) по каждой оси,
W = (3/2)·Q с тем же центром. Расстояние до границы считается в метрике ℓ∞
по решётке.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from core.exceptions import UnreachableCube
from core.services.grid import GridDomain

logger = logging.getLogger(__name__)

DILATION = 1.5
WHITNEY_UPPER = 4
# расстояние в периодическом блоке без границы
UNBOUNDED = np.iinfo(np.int32).max - 1


@dataclass(frozen=True)
class Cube:
    corner: tuple
    side: int

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.corner, dtype=float) + self.side / 2

    @property
    def half(self) -> float:
        """Полуширина W = (3/2)Q."""
        return DILATION * self.side / 2

    def children(self) -> list:
        half = self.side // 2
        return [
            Cube(tuple(c + half * o for c, o in zip(self.corner, offset)), half)
            for offset in product((0, 1), repeat=len(self.corner))
        ]

    def slices(self) -> tuple:
        return tuple(slice(c, c + self.side) for c in self.corner)

    def to_json(self) -> dict:
        return {"center": [float(c) for c in self.center], "side": self.side}


@dataclass(frozen=True)
class OverlapBall:
    """Куб ℓ∞ внутри W_a ∩ W_b: центр и полуширина."""
    a: int
    b: int
    center: tuple
    radius: float

    def to_json(self) -> dict:
        return {"cubes": [self.a, self.b], "center": [float(c) for c in self.center], "radius": self.radius}


def _distance_to_boundary(domain: GridDomain) -> np.ndarray:
    """Шахматное расстояние от каждой ячейки до ближайшей ячейки вне маски."""
    pad = [(s, s) if per else (1, 1) for s, per in zip(domain.shape, domain.periodic)]
    padded = np.pad(domain.mask, [(0, 0) if per else (1, 1) for per in domain.periodic], constant_values=False)
    padded = np.pad(padded, [(s, s) if per else (0, 0) for s, per in zip(domain.shape, domain.periodic)], mode="wrap")
    if padded.all():
        return np.full(domain.shape, np.iinfo(np.int32).max)
    distance = ndimage.distance_transform_cdt(padded, metric="chessboard")
    crop = tuple(slice(lo, lo + s) for (lo, _), s in zip(pad, domain.shape))
    return distance[crop]


def _cube_cells(domain: GridDomain, cube: Cube) -> tuple:
    """(все ячейки куба в маске, хотя бы одна в маске); кубы живут в основном прямоугольнике."""
    block = domain.mask[cube.slices()]
    if not block.size:
        return False, False
    inside = block.shape == (cube.side,) * domain.n
    return inside and bool(block.all()), bool(block.any())


@dataclass(frozen=True, eq=False)
class WhitneyCover:
    domain: GridDomain
    cubes: tuple
    min_side: int
    distances: tuple  # dist(Q, ∂Ω) по кубам

    def __len__(self):
        return len(self.cubes)

    @cached_property
    def core_mask(self) -> np.ndarray:
        """Ячейки, покрытые кубами."""
        covered = np.zeros(self.domain.shape, dtype=bool)
        for cube in self.cubes:
            covered[cube.slices()] = True
        return covered

    def whitney_bounds(self) -> list:
        """Отношения dist/side по кубам."""
        return [d / cube.side for cube, d in zip(self.cubes, self.distances)]


def whitney_cover(domain: GridDomain, min_side: int = 1) -> WhitneyCover:
    """Диадическое покрытие: куб принимается, если side ≤ dist(Q, ∂Ω), иначе делится."""
    distance = _distance_to_boundary(domain)
    top = 1 << int(np.floor(np.log2(max(domain.shape))))
    min_side = max(1, min(int(min_side), top))
    roots = product(*[range(0, size, top) for size in domain.shape])
    queue = deque(Cube(tuple(corner), top) for corner in roots)
    accepted, distances = [], []

    while queue:
        cube = queue.popleft()
        full, touches = _cube_cells(domain, cube)
        if not touches:
            continue
        if full:
            dist = int(distance[cube.slices()].min()) - 1
            if cube.side <= dist:
                accepted.append(cube)
                distances.append(dist)
                continue
        if cube.side > min_side:
            queue.extend(cube.children())

    accepted_order = sorted(range(len(accepted)), key=lambda i: (accepted[i].corner, accepted[i].side))
    cover = WhitneyCover(
        domain=domain,
        cubes=tuple(accepted[i] for i in accepted_order),
        min_side=min_side,
        distances=tuple(distances[i] for i in accepted_order),
    )
    wide = [i for i, (cube, d) in enumerate(zip(cover.cubes, cover.distances))
            if d < UNBOUNDED and d > WHITNEY_UPPER * cube.side]
    if wide:
        logger.warning(f"⚠️ Покрытие Уитни {domain.kind}: dist > {WHITNEY_UPPER}·side у кубов {wide[:10]}")
    logger.info(f"✅ Покрытие Уитни {domain.kind}: {len(cover)} кубов, min_side={min_side}")
    return cover


# --- цепочки ---

def _pair_overlaps(cubes: tuple, domain: GridDomain) -> np.ndarray:
    """Длины пересечений проекций замкнутых кубов: (N, N, n), с учётом периодичности."""
    lo = np.array([c.corner for c in cubes], dtype=float)
    hi = lo + np.array([c.side for c in cubes], dtype=float)[:, None]
    overlaps = np.empty((len(cubes), len(cubes), domain.n))
    for d in range(domain.n):
        shifts = (-domain.shape[d], 0, domain.shape[d]) if domain.periodic[d] else (0,)
        best = np.full((len(cubes), len(cubes)), -np.inf)
        for shift in shifts:
            value = np.minimum(hi[:, None, d], hi[None, :, d] + shift) - np.maximum(lo[:, None, d], lo[None, :, d] + shift)
            best = np.maximum(best, value)
        overlaps[..., d] = best
    return overlaps


def _adjacency(cubes: tuple, domain: GridDomain) -> csr_matrix:
    """Граф соседства по граням; вес ребра 1/min(side), чтобы путь шёл через крупные кубы."""
    overlaps = _pair_overlaps(cubes, domain)
    touching = (np.abs(overlaps) < 1e-12).sum(axis=-1) == 1
    positive = (overlaps > 1e-12).sum(axis=-1) == domain.n - 1
    adjacent = touching & positive
    np.fill_diagonal(adjacent, False)
    sides = np.array([c.side for c in cubes], dtype=float)
    weights = np.where(adjacent, 1.0 / np.minimum(sides[:, None], sides[None, :]), 0.0)
    return csr_matrix(weights)


def _displacement(a: np.ndarray, b: np.ndarray, domain: GridDomain) -> np.ndarray:
    """b − a с минимальным образом по периодическим осям."""
    delta = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    for d, per in enumerate(domain.periodic):
        if per:
            size = domain.shape[d]
            delta[d] -= size * np.round(delta[d] / size)
    return delta


def _overlap_ball(a: int, b: int, cubes: tuple, domain: GridDomain) -> OverlapBall:
    ca = cubes[a].center
    cb = ca + _displacement(ca, cubes[b].center, domain)
    lo = np.maximum(ca - cubes[a].half, cb - cubes[b].half)
    hi = np.minimum(ca + cubes[a].half, cb + cubes[b].half)
    return OverlapBall(a=a, b=b, center=tuple(float(x) for x in (lo + hi) / 2), radius=float((hi - lo).min() / 2))


@dataclass(frozen=True, eq=False)
class ChainCover:
    cover: WhitneyCover
    central: int
    chains: tuple       # chains[i] = (i, …, central)
    balls: dict         # (a, b) → OverlapBall для соседних звеньев
    sigma1: float
    sigma2: float
    constants: dict = field(default_factory=dict)

    @property
    def cubes(self) -> tuple:
        return self.cover.cubes

    @property
    def domain(self) -> GridDomain:
        return self.cover.domain

    def ball(self, a: int, b: int) -> OverlapBall:
        return self.balls[(a, b)]

    def chain_balls(self, i: int) -> list:
        chain = self.chains[i]
        return [self.balls[(chain[l], chain[l + 1])] for l in range(len(chain) - 1)]

    def to_json(self) -> dict:
        return {
            "cubes": [cube.to_json() for cube in self.cubes],
            "central": self.central,
            "chains": [list(chain) for chain in self.chains],
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "overlap_balls": [self.balls[key].to_json() for key in sorted(self.balls)],
            "constants": dict(sorted(self.constants.items())),
        }


def _dilated_cells(domain: GridDomain, center: np.ndarray, half: float) -> tuple:
    """Индексы ячеек, пересекающих открытый куб; out: вышли ли за прямоугольник по непериодической оси."""
    index, out = [], False
    for d in range(domain.n):
        lo = int(np.floor(center[d] - half + 1e-9))
        hi = int(np.ceil(center[d] + half - 1e-9))
        axis = np.arange(lo, hi)
        if domain.periodic[d]:
            axis = np.unique(axis % domain.shape[d])
        else:
            kept = axis[(axis >= 0) & (axis < domain.shape[d])]
            out = out or len(kept) < len(axis)
            axis = kept
        index.append(axis)
    return index, out


def _containment_sigma(inner_center, inner_half, outer_center, outer_half, domain: GridDomain) -> float:
    """Наименьшее σ с куб(inner) ⊂ σ·куб(outer)."""
    gap = np.abs(_displacement(outer_center, inner_center, domain)).max()
    return float((gap + inner_half) / outer_half)


def _measure_constants(cc_cubes: tuple, chains: tuple, balls: dict, domain: GridDomain, sigma1: float) -> dict:
    overlap = np.zeros(domain.shape, dtype=int)
    for cube in cc_cubes:
        index, _ = _dilated_cells(domain, cube.center, sigma1 * cube.half)
        overlap[np.ix_(*index)] += 1

    containment = 1.0
    centers = np.array([cube.center for cube in cc_cubes])
    halves = np.array([cube.half for cube in cc_cubes])
    sizes = np.array([size if per else np.inf for size, per in zip(domain.shape, domain.periodic)])
    for chain in chains:
        if len(chain) < 2:
            continue
        idx = np.asarray(chain)
        delta = centers[idx][:, None, :] - centers[idx][None, :, :]
        periodic = np.isfinite(sizes)
        delta[..., periodic] -= sizes[periodic] * np.round(delta[..., periodic] / sizes[periodic])
        ratio = (np.abs(delta).max(axis=-1) + halves[idx][:, None]) / halves[idx][None, :]
        # звено l₁ вкладывается в σ·W звена l₂ при l₁ ≤ l₂
        containment = max(containment, float(np.triu(ratio).max()))

    ball_sigma, ball_overlap = 1.0, 0
    if balls:
        ball_count = np.zeros(domain.shape, dtype=int)
        for (a, b), ball in balls.items():
            center = np.asarray(ball.center)
            for idx in (a, b):
                ball_sigma = max(ball_sigma, _containment_sigma(
                    cc_cubes[idx].center, cc_cubes[idx].half, center, ball.radius, domain))
            index, _ = _dilated_cells(domain, center, ball.radius)
            ball_count[np.ix_(*index)] += 1
        ball_overlap = int(ball_count.max())

    return {
        "overlap": int(overlap.max()),
        "containment": containment,
        "ball_sigma": ball_sigma,
        "ball_overlap": ball_overlap,
    }


def emanating_chains(cover: WhitneyCover, domain: GridDomain = None, sigma1: float = 2.0) -> ChainCover:
    """Цепочки кратчайших путей к центральному (наибольшему) кубу; константы σ₂ измеряются."""
    domain = domain or cover.domain
    cubes = cover.cubes
    if not cubes:
        raise UnreachableCube(f"Покрытие {domain.kind} пусто")
    central = min(range(len(cubes)), key=lambda i: (-cubes[i].side, tuple(cubes[i].center)))

    _, predecessors = dijkstra(_adjacency(cubes, domain), directed=False, indices=central, return_predecessors=True)
    chains = []
    for i in range(len(cubes)):
        chain = [i]
        while chain[-1] != central:
            previous = predecessors[chain[-1]]
            if previous < 0:
                raise UnreachableCube(f"Куб {i} ({cubes[i].to_json()}) недостижим из центрального куба")
            chain.append(int(previous))
        chains.append(tuple(chain))

    balls = {}
    for chain in chains:
        for a, b in zip(chain, chain[1:]):
            if (a, b) not in balls:
                balls[(a, b)] = _overlap_ball(a, b, cubes, domain)

    constants = _measure_constants(cubes, chains, balls, domain, sigma1)
    sigma2 = float(max(constants.values()))
    logger.info(f"✅ Цепочки {domain.kind}: центральный куб {central}, "
                f"длина ≤ {max(len(c) for c in chains) - 1}, σ₂={sigma2:.3f}")
    return ChainCover(cover=cover, central=central, chains=tuple(chains), balls=balls,
                      sigma1=float(sigma1), sigma2=sigma2, constants=constants)


def check_chain_properties(cc: ChainCover, domain: GridDomain = None) -> dict:
    """Условия (C1)–(C3) покрытия цепочками, достигнутые константы и перекрытие шаров."""
    domain = domain or cc.domain
    offending = []
    for i, cube in enumerate(cc.cubes):
        index, out = _dilated_cells(domain, cube.center, cc.sigma1 * cube.half)
        if out or not domain.mask[np.ix_(*index)].all():
            offending.append(i)

    measured = _measure_constants(cc.cubes, cc.chains, cc.balls, domain, cc.sigma1)
    c1 = not offending and measured["overlap"] <= cc.sigma2
    c2 = (measured["containment"] <= cc.sigma2 + 1e-12
          and measured["ball_sigma"] <= cc.sigma2 + 1e-12
          and measured["ball_overlap"] <= cc.sigma2)

    central = cc.cubes[cc.central]
    central_diam = 2 * central.half * np.sqrt(domain.n) * domain.h
    diam_ratio = float(domain.diam / central_diam)
    report = {
        "C1": bool(c1),
        "C2": bool(c2),
        "C3": True,
        "offending_cubes": offending,
        "sigma1": cc.sigma1,
        "sigma2": cc.sigma2,
        "overlap": measured["overlap"],
        "containment_sigma": measured["containment"],
        "ball_sigma": measured["ball_sigma"],
        "ball_overlap": measured["ball_overlap"],
        "diam_ratio": diam_ratio,
        "diam_ok": bool(diam_ratio <= cc.sigma2),
        "cubes": len(cc.cubes),
        "max_chain_length": max(len(chain) for chain in cc.chains) - 1,
    }
    if offending:
        logger.info(f"⚠️ (C1) нарушено для {len(offending)} кубов при σ₁={cc.sigma1}")
    return report
