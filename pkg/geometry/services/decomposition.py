"""
Разложение f = Σ T_i f по покрытию цепочками.

T_i f = ξ_i f плюс поправки E_B(g) = η_B·P_B(g), переносящие 𝒩-моменты куска
g_j = ξ_j f вдоль цепочки куба W_j к центральному кубу. Сумма поправок по
цепочке телескопична, поэтому Σ T_i f = f, а моменты каждого куска нулевые,
если нулевые моменты у f.
"""
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy as sp

from analysis.services.maximal import Weight, hl_maximal
from core.exceptions import DimensionMismatch, MomentsNotZero, SingularGram
from core.services.ellipticity import NullspaceProfile
from core.services.grid import GridDomain, GridFunction
from core.services.operators import gradient
from core.services.poly import DiffOperator, VPolynomial, apply_to_polynomial, polynomial_basis
from geometry.services.chains import ChainCover

logger = logging.getLogger(__name__)

MOMENT_TOL = 1e-9


# --- подпространство моментов ---

def _independent(polys: Sequence[VPolynomial]) -> list:
    """Линейно независимое подмножество (точная арифметика, порядок сохраняется)."""
    polys = [p for p in polys if not p.is_zero]
    if not polys:
        return []
    n, dim = polys[0].n, polys[0].dim
    degree = max(int(p.degree) for p in polys)
    coords = polynomial_basis(n, dim, degree)
    matrix = sp.Matrix([p.coordinates(coords) for p in polys]).T
    _, pivots = matrix.rref()
    return [polys[i] for i in pivots]


@dataclass(frozen=True, eq=False)
class MomentSubspace:
    n: int
    dim: int
    basis: tuple
    tag: str = "explicit"

    def __post_init__(self):
        for poly in self.basis:
            if poly.n != self.n or poly.dim != self.dim:
                raise DimensionMismatch(f"Базисный полином {poly!r} не лежит в 𝒫(ℝ^{self.n}; ℝ^{self.dim})")

    def __len__(self):
        return len(self.basis)

    @classmethod
    def constants(cls, n: int, dim: int = 1) -> "MomentSubspace":
        return cls(n=n, dim=dim, basis=tuple(VPolynomial.monomial(n, dim, (0,) * n, i) for i in range(dim)),
                   tag="constants")

    @classmethod
    def explicit(cls, basis: Sequence[VPolynomial], tag: str = "explicit") -> "MomentSubspace":
        basis = _independent(basis)
        if not basis:
            raise DimensionMismatch("Пустой базис подпространства моментов")
        return cls(n=basis[0].n, dim=basis[0].dim, basis=tuple(basis), tag=tag)

    @classmethod
    def from_operator(cls, op: DiffOperator, profile: NullspaceProfile, order: int = None) -> "MomentSubspace":
        """𝒩 = D^order ker(𝔸), по умолчанию order = k."""
        order = op.k if order is None else order
        generator = gradient(op.n, order, components=op.dim_v) if order else None
        images = [apply_to_polynomial(generator, p) if generator else p for p in profile.kernel_basis]
        basis = _independent(images)
        if not basis:
            raise DimensionMismatch(f"D^{order} ker({op}) = 0")
        logger.info(f"🔍 𝒩 = D^{order} ker({op}): dim {len(basis)}")
        return cls(n=op.n, dim=basis[0].dim, basis=tuple(basis), tag=f"D{order}ker({op.name or op})")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Значения базиса в точках: (K, P, dim)."""
        return np.stack([poly.evaluate(points) for poly in self.basis])

    def to_json(self) -> dict:
        return {"tag": self.tag, "n": self.n, "dim": self.dim, "basis": [p.to_json() for p in self.basis]}


# --- локальные окна и срезки ---

def _window(domain: GridDomain, center: Sequence[float], half: float) -> tuple:
    """Ячейки, чьи центры лежат в открытом кубе (в единицах ячеек), и их неразвёрнутые координаты."""
    index, coords = [], []
    for d in range(domain.n):
        lo = int(np.ceil(center[d] - half - 0.5 + 1e-9))
        hi = int(np.floor(center[d] + half - 0.5 - 1e-9))
        axis = np.arange(lo, hi + 1)
        if not domain.periodic[d]:
            axis = axis[(axis >= 0) & (axis < domain.shape[d])]
        coords.append(axis + 0.5)
        index.append(axis % domain.shape[d])
    return index, coords


def _bump(coords: list, center: Sequence[float], half: float) -> np.ndarray:
    """Тензорная шапочка Π(1 − t²)³ на кубе."""
    value = np.ones([len(c) for c in coords])
    for d, axis in enumerate(coords):
        t = (axis - center[d]) / half
        profile = np.clip(1 - t ** 2, 0, None) ** 3
        value = value * profile.reshape([-1 if e == d else 1 for e in range(len(coords))])
    return value


def _physical(domain: GridDomain, coords: list) -> np.ndarray:
    grids = np.meshgrid(*[np.asarray(domain.origin[d]) + c * domain.h for d, c in enumerate(coords)], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True, eq=False)
class _LocalGram:
    """η на окне, значения базиса и матрица Σ η φ_a·φ_b."""
    index: list
    eta: np.ndarray         # (cells,)
    basis: np.ndarray       # (K, cells, dim)
    gram: np.ndarray

    def solve(self, moments: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.gram, moments)


def _local_gram(domain: GridDomain, subspace: MomentSubspace, center, half: float) -> _LocalGram:
    index, coords = _window(domain, center, half)
    eta = _bump(coords, center, half).ravel()
    support = eta > 0
    if support.sum() < len(subspace):
        raise SingularGram(f"На шаре полуширины {half} лишь {int(support.sum())} точек, dim 𝒩 = {len(subspace)}")
    eta = eta / (eta.sum() * domain.cell_volume)
    basis = subspace.evaluate(_physical(domain, coords))
    weighted = basis * eta[None, :, None]
    gram = np.einsum("apd,bpd->ab", weighted, basis) * domain.cell_volume
    if np.linalg.cond(gram) > 1e12:
        raise SingularGram(f"Вырожденная матрица Грама на шаре полуширины {half}: cond = {np.linalg.cond(gram):.3e}")
    return _LocalGram(index=index, eta=eta, basis=basis, gram=gram)


def moments(values: np.ndarray, domain: GridDomain, subspace: MomentSubspace, where: np.ndarray = None) -> np.ndarray:
    """∫ f·π_a по ячейкам маски (или where): вектор длины dim 𝒩."""
    where = domain.mask if where is None else where & domain.mask
    basis = subspace.evaluate(domain.centers[where])
    return np.einsum("apd,dp->a", basis, values[:, where]) * domain.cell_volume


@dataclass(frozen=True, eq=False)
class MomentProjection:
    subspace: MomentSubspace
    coeffs: np.ndarray
    center: tuple
    half: float

    def values(self, domain: GridDomain, center: Sequence[float] = None, half: float = None) -> np.ndarray:
        """Значения Σ c_a π_a на окне (center, half); вне окна нули. По умолчанию окно исходного куба."""
        center = self.center if center is None else center
        half = self.half if half is None else half
        result = np.zeros((self.subspace.dim,) + domain.shape)
        index, coords = _window(domain, center, half)
        local = np.einsum("a,apd->dp", self.coeffs, self.subspace.evaluate(_physical(domain, coords)))
        result[(slice(None),) + np.ix_(*index)] = local.reshape((self.subspace.dim,) + tuple(len(i) for i in index))
        return result


def moment_projection(f: GridFunction, center: Sequence[float], half: float, subspace: MomentSubspace,
                      sigma2: float = 1.0) -> MomentProjection:
    """Π f ∈ 𝒩: ∫_W η(Πf)π = ∫_{σ₂W} fπ для всех π базиса; W: куб (center, half) в единицах ячеек."""
    if f.dim != subspace.dim:
        raise DimensionMismatch(f"f размерности {f.dim}, а 𝒩 ⊂ 𝒫(ℝ^{subspace.n}; ℝ^{subspace.dim})")
    local = _local_gram(f.domain, subspace, center, half)
    index, _ = _window(f.domain, center, sigma2 * half)
    region = np.zeros(f.domain.shape, dtype=bool)
    region[np.ix_(*index)] = True
    coeffs = local.solve(moments(f.values, f.domain, subspace, where=region))
    return MomentProjection(subspace=subspace, coeffs=coeffs, center=tuple(center), half=half)


def moment_stability(f: GridFunction, center: Sequence[float], half: float, subspace: MomentSubspace,
                     sigma2: float = 1.0) -> float:
    """‖Πf‖_{L^∞(σ₂W)} / ∫_{σ₂W}|f|."""
    projection = moment_projection(f, center, half, subspace, sigma2)
    image = projection.values(f.domain, center, sigma2 * half)
    index, _ = _window(f.domain, center, sigma2 * half)
    block = (slice(None),) + np.ix_(*index)
    mass = float(np.sqrt((f.values[block] ** 2).sum(axis=0)).sum() * f.domain.cell_volume)
    sup = float(np.sqrt((image[block] ** 2).sum(axis=0)).max())
    return sup / mass if mass > 0 else 0.0


def remove_moments(f: GridFunction, subspace: MomentSubspace, where: np.ndarray = None) -> GridFunction:
    """f − Σ c_a π_a·1_where с нулевыми 𝒩-моментами на where."""
    domain = f.domain
    where = domain.mask if where is None else where & domain.mask
    basis = subspace.evaluate(domain.centers[where])
    gram = np.einsum("apd,bpd->ab", basis, basis) * domain.cell_volume
    coeffs = np.linalg.solve(gram, moments(f.values, domain, subspace, where=where))
    values = f.values.copy()
    values[:, where] -= np.einsum("a,apd->dp", coeffs, basis)
    return GridFunction(domain, values)


# --- разложение ---

def _partition_of_unity(cc: ChainCover) -> list:
    """ξ_i: нормированные тензорные шапочки на W_i, Σ ξ_i = 1 на покрытых ячейках."""
    domain = cc.domain
    bumps, total = [], np.zeros(domain.shape)
    for cube in cc.cubes:
        index, coords = _window(domain, cube.center, cube.half)
        local = _bump(coords, cube.center, cube.half)
        bumps.append((index, local))
        np.add.at(total, np.ix_(*index), local)
    pieces = []
    for index, local in bumps:
        xi = np.zeros(domain.shape)
        block = np.ix_(*index)
        xi[block] = local / np.where(total[block] > 0, total[block], 1.0)
        pieces.append(xi)
    return pieces


@dataclass(frozen=True, eq=False)
class Decomposition:
    pieces: tuple           # (i, GridFunction T_i f)
    source: GridFunction
    cover: ChainCover
    subspace: MomentSubspace
    stats: dict = field(default_factory=dict)

    def total(self, order: Sequence[int] = None) -> np.ndarray:
        order = range(len(self.pieces)) if order is None else order
        result = np.zeros_like(self.source.values)
        for position in order:
            result = result + self.pieces[position][1].values
        return result

    def reconstruction_error(self) -> float:
        """‖Σ T_i f − f‖₁ / ‖f‖₁."""
        norm = self.source.lp_norm(1)
        residual = GridFunction(self.source.domain, self.total() - self.source.values).lp_norm(1)
        return residual / norm if norm > 0 else residual

    def moment_errors(self) -> list:
        """|∫ T_i f·π| / (‖T_i f‖₁·‖π‖_∞) по кускам."""
        domain = self.source.domain
        sup = np.sqrt((self.subspace.evaluate(domain.points) ** 2).sum(axis=-1)).max(axis=1)
        errors = []
        for _, piece in self.pieces:
            mass = piece.lp_norm(1)
            if mass == 0:
                errors.append(0.0)
                continue
            errors.append(float((np.abs(moments(piece.values, domain, self.subspace)) / (mass * sup)).max()))
        return errors

    def support_violations(self) -> list:
        """Куски, отличные от нуля вне своего W_i."""
        violations = []
        for i, piece in self.pieces:
            cube = self.cover.cubes[i]
            index, _ = _window(piece.domain, cube.center, cube.half)
            inside = np.zeros(piece.domain.shape, dtype=bool)
            inside[np.ix_(*index)] = True
            if np.any(piece.values[:, ~inside]):
                violations.append(i)
        return violations

    def order_spread(self, orders: int = 5, seed: int = 0) -> float:
        """Наибольшее расхождение сумм кусков в случайных порядках."""
        rng = np.random.default_rng(seed)
        reference = self.total()
        spread = 0.0
        for _ in range(orders):
            permuted = self.total(rng.permutation(len(self.pieces)))
            spread = max(spread, float(np.abs(permuted - reference).max()))
        return spread

    def to_json(self, include_values: bool = False) -> dict:
        records = []
        for i, piece in self.pieces:
            record = {"cube": i, "l1": piece.lp_norm(1)}
            if include_values:
                support = np.argwhere(np.any(piece.values != 0, axis=0))
                record["cells"] = support.tolist()
                record["values"] = [piece.values[(slice(None),) + tuple(cell)].tolist() for cell in support]
            records.append(record)
        return {"subspace": self.subspace.tag, "pieces": records, **self.stats}


def decompose(f: GridFunction, cc: ChainCover, subspace: MomentSubspace) -> Decomposition:
    """Куски T_i f по формуле переноса моментов вдоль цепочек."""
    domain = f.domain
    if f.dim != subspace.dim:
        raise DimensionMismatch(f"f размерности {f.dim}, а 𝒩 ⊂ 𝒫(ℝ^{subspace.n}; ℝ^{subspace.dim})")
    core = cc.cover.core_mask
    if np.any(f.values[:, ~core]):
        raise DimensionMismatch("f должна быть сосредоточена на ячейках, покрытых кубами")

    mass = f.lp_norm(1)
    sup = np.sqrt((subspace.evaluate(domain.points) ** 2).sum(axis=-1)).max(axis=1)
    residual = np.abs(moments(f.values, domain, subspace))
    if mass > 0 and np.any(residual > MOMENT_TOL * mass * sup):
        raise MomentsNotZero(f"Моменты f не нулевые: max |∫fπ| = {residual.max():.3e}")

    logger.info(f"🔄 Разложение по {len(cc.cubes)} кубам, dim 𝒩 = {len(subspace)}")
    xis = _partition_of_unity(cc)
    pieces = [xi[None] * f.values for xi in xis]
    grams: dict = {}
    for j, chain in enumerate(cc.chains):
        if len(chain) < 2:
            continue
        g_moments = moments(xis[j][None] * f.values, domain, subspace)
        if not np.any(g_moments):
            continue
        for a, b in zip(chain, chain[1:]):
            ball = cc.ball(a, b)
            if (a, b) not in grams:
                grams[(a, b)] = _local_gram(domain, subspace, ball.center, ball.radius)
            local = grams[(a, b)]
            coeffs = local.solve(g_moments)
            transported = local.eta[:, None] * np.einsum("a,apd->pd", coeffs, local.basis)
            block = (slice(None),) + np.ix_(*local.index)
            shape = (subspace.dim,) + tuple(len(i) for i in local.index)
            delta = transported.T.reshape(shape)
            pieces[a][block] -= delta
            pieces[b][block] += delta

    decomposition = Decomposition(
        pieces=tuple((i, GridFunction(domain, values)) for i, values in enumerate(pieces)),
        source=f, cover=cc, subspace=subspace,
    )
    logger.info(f"✅ Разложение готово: ошибка восстановления {decomposition.reconstruction_error():.3e}")
    return decomposition


def majorant_constant(d: Decomposition) -> float:
    """Наименьшее c с |T_i f| ≤ c·1_{W_i}·M(1_Ω f) во всех ячейках."""
    domain = d.source.domain
    maximal = hl_maximal(d.source.pointwise_norm() * domain.mask, domain)
    constant = 0.0
    for _, piece in d.pieces:
        density = piece.pointwise_norm()
        active = density > 0
        if not active.any():
            continue
        if np.any(maximal[active] <= 0):
            return float("inf")
        constant = max(constant, float((density[active] / maximal[active]).max()))
    return constant


def verify_decomposition(d: Decomposition, q: float = 2.0, weight: Weight = None) -> dict:
    """‖f‖_{L^q_w} против (Σ‖T_i f‖^q_{L^q_w})^{1/q} и константа мажоранты."""
    domain = d.source.domain
    w = (weight or Weight.unit()).values(domain)
    norm = d.source.lp_norm(q, weight=w)
    pieces = (sum(piece.lp_norm(q, weight=w) ** q for _, piece in d.pieces)) ** (1.0 / q)
    if norm == 0 or pieces == 0:
        lower = upper = 1.0 if norm == pieces else float("inf")
    else:
        lower, upper = norm / pieces, pieces / norm
    return {
        "q": q,
        "weight": (weight or Weight.unit()).describe(),
        "lower_ratio": lower,
        "upper_ratio": upper,
        "majorant_constant": majorant_constant(d),
    }
