"""
Усреднённый полином Тейлора 𝕋_m^B, проекция Π_𝔸^B на ker(𝔸), ядро Мазьи
K_{α,B} и оценки через потенциалы Рисса.

Скалярное произведение на шаре: нормированное: ⟨p, q⟩_B = ⨍_B p·q.
Вес усреднения ω = c_ρ (1 − |y − c|²/r²)^ρ, ∫ω = 1, по умолчанию ρ = m + k + 2.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import ceil
from typing import Optional, Sequence

import numpy as np
import sympy as sp
from scipy import integrate
from scipy.spatial.distance import cdist

from core.exceptions import (
    BallOutsideGrid,
    CoincidentPoints,
    DegenerateDenominator,
    DimensionMismatch,
    MalformedSpec,
    NotCElliptic,
    SingularGram,
)
from core.models import CVerdict
from core.services.ellipticity import NullspaceProfile
from core.services.grid import GridDomain, GridFunction, apply_operator, gradient_tensor
from core.services.poly import (
    DiffOperator,
    MultiIndex,
    VPolynomial,
    apply_to_polynomial,
    ball_average,
    ball_moment,
    exact,
    indices_upto,
    make_operator,
    polynomial_basis,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BallSpec:
    center: tuple
    radius: float
    bump_exponent: Optional[int] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise MalformedSpec(f"Радиус шара должен быть положительным: {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def n(self) -> int:
        return len(self.center)

    def with_exponent(self, rho: int) -> "BallSpec":
        return BallSpec(self.center, self.radius, rho)

    def rho(self, default: int) -> int:
        return default if self.bump_exponent is None else self.bump_exponent

    def to_json(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "bump_exponent": self.bump_exponent}


class _Moments:
    """Кэш ∫ y^γ ω(y) dy для нормированного веса на шаре."""

    def __init__(self, ball: BallSpec, rho: int):
        self.center = [exact(c) for c in ball.center]
        self.radius = exact(ball.radius)
        self.rho = rho
        self._cache = {}

    def monomial(self, gamma) -> sp.Expr:
        gamma = MultiIndex(gamma)
        if gamma not in self._cache:
            self._cache[gamma] = ball_average({gamma: 1}, self.center, self.radius, self.rho)
        return self._cache[gamma]

    def integrate(self, coeffs: dict) -> sp.Expr:
        return sp.expand(sum((c * self.monomial(gamma) for gamma, c in coeffs.items()), sp.Integer(0)))

    def inner(self, p: VPolynomial, q: VPolynomial) -> sp.Expr:
        return self.integrate(p.dot(q))


# --- усреднённый полином Тейлора ---

def _lower_indices(alpha: MultiIndex):
    for beta in itertools.product(*(range(a + 1) for a in alpha)):
        yield MultiIndex(beta)


def _taylor_exact(u: VPolynomial, m: int, ball: BallSpec, rho: int) -> VPolynomial:
    moments = _Moments(ball, rho)
    result: dict = {}
    for alpha in indices_upto(u.n, m):
        g = u.derivative(alpha)
        if g.is_zero:
            continue
        inv_fact = sp.Rational(1, alpha.factorial())
        components = [g.component(i) for i in range(u.dim)]
        for beta in _lower_indices(alpha):
            delta = alpha.minus(beta)
            coef = inv_fact * alpha.binomial(beta) * (-1) ** delta.order
            vec = [
                coef * moments.integrate({gamma.plus(delta): c for gamma, c in comp.items()})
                for comp in components
            ]
            if beta in result:
                result[beta] = [a + b for a, b in zip(result[beta], vec)]
            else:
                result[beta] = vec
    return VPolynomial.build(u.n, u.dim, {beta: tuple(vec) for beta, vec in result.items()})


@lru_cache(maxsize=32)
def _taylor_kernels(n: int, m: int, rho: int) -> tuple:
    """K_β(z) на единичном шаре: 𝕋_m ũ(z_x) = Σ_β z_x^β ∫ ũ(z) K_β(z) dz."""
    z = sp.symbols(f"z0:{n}", real=True)
    c_rho = 1 / ball_moment([0] * n, 1, rho)
    omega = c_rho * (1 - sum(zi ** 2 for zi in z)) ** rho
    indices = indices_upto(n, m)
    kernels = []
    for beta in indices:
        expr = sp.Integer(0)
        for alpha in indices:
            if not beta.divides(alpha):
                continue
            delta = alpha.minus(beta)
            mono = sp.Integer(1)
            for zi, d in zip(z, delta):
                mono *= zi ** d
            deriv = omega * mono
            for zi, a in zip(z, alpha):
                if a:
                    deriv = sp.diff(deriv, zi, a)
            expr += sp.Rational(alpha.binomial(beta), alpha.factorial()) * (-1) ** beta.order * deriv
        kernels.append(sp.lambdify(z, sp.expand(expr), "numpy"))
    return indices, tuple(kernels)


def _cells_touching_ball(domain: GridDomain, ball: BallSpec) -> tuple:
    """Индексы ячеек, пересекающих шар, и флаг «целиком внутри»."""
    c = np.asarray(ball.center)
    lo = np.floor((c - ball.radius - np.asarray(domain.origin)) / domain.h).astype(int)
    hi = np.floor((c + ball.radius - np.asarray(domain.origin)) / domain.h).astype(int)
    ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    cells = np.array(list(itertools.product(*ranges)), dtype=int)
    lower = np.asarray(domain.origin) + cells * domain.h
    upper = lower + domain.h
    nearest = np.clip(c, lower, upper)
    touches = np.linalg.norm(nearest - c, axis=1) < ball.radius
    farthest = np.where(np.abs(lower - c) > np.abs(upper - c), lower, upper)
    inside = np.linalg.norm(farthest - c, axis=1) <= ball.radius
    return cells[touches], inside[touches]


@lru_cache(maxsize=64)
def _grid_rule(domain: GridDomain, ball: BallSpec, m: int, rho: int, depth: int = 3) -> tuple:
    """Дискретные веса ядер 𝕋_m на ячейках, исправленные так, что 𝒫_m воспроизводится точно."""
    cells, inside = _cells_touching_ball(domain, ball)
    for cell in cells:
        if not domain.inside(cell):
            raise BallOutsideGrid(f"Шар {ball.to_json()} выходит за пределы сетки {domain.kind}")
    indices, kernels = _taylor_kernels(domain.n, m, rho)
    c = np.asarray(ball.center)
    r = ball.radius
    scale = (domain.h / r) ** domain.n

    centers = (np.asarray(domain.origin) + (cells + 0.5) * domain.h - c) / r
    weights = np.zeros((len(indices), len(cells)))
    full = np.where(inside)[0]
    if full.size:
        z = centers[full]
        for b, kernel in enumerate(kernels):
            weights[b, full] = np.broadcast_to(kernel(*z.T), (full.size,)) * scale

    # ячейки на границе шара: подразбиение 2^depth по каждой оси
    sub = 2 ** depth
    offsets = (np.array(list(itertools.product(range(sub), repeat=domain.n))) + 0.5) / sub - 0.5
    for idx in np.where(~inside)[0]:
        z = centers[idx] + offsets * (domain.h / r)
        keep = (z ** 2).sum(axis=1) < 1.0
        if not keep.any():
            continue
        z = z[keep]
        for b, kernel in enumerate(kernels):
            weights[b, idx] = np.sum(np.broadcast_to(kernel(*z.T), (z.shape[0],))) * scale / sub ** domain.n

    # поправка моментов: K' = R⁻¹K, R = K·Q, Q: мономы в центрах ячеек
    powers = np.array(indices, dtype=int)
    basis = np.prod(centers[:, None, :] ** powers[None, :, :], axis=2)
    correction = weights @ basis
    weights = np.linalg.solve(correction, weights)
    flat = [tuple(int(x) for x in cell) for cell in cells]
    return indices, weights, flat


def _local_to_global(local: np.ndarray, indices, ball: BallSpec, dim: int) -> VPolynomial:
    """Σ_β a_β ((x − c)/r)^β → мономиальные коэффициенты по x."""
    c = np.asarray(ball.center)
    coeffs: dict = {}
    for beta, vec in zip(indices, local):
        scale = ball.radius ** (-beta.order)
        for gamma in _lower_indices(beta):
            weight = beta.binomial(gamma) * scale * np.prod((-c) ** np.array(beta.minus(gamma)))
            coeffs[gamma] = coeffs.get(gamma, np.zeros(dim)) + weight * vec
    return VPolynomial.build(len(c), dim, {alpha: tuple(float(x) for x in vec) for alpha, vec in coeffs.items()})


def _taylor_grid(u: GridFunction, m: int, ball: BallSpec, rho: int) -> VPolynomial:
    indices, weights, cells = _grid_rule(u.domain, ball, m, rho)
    shape = u.domain.shape
    samples = np.array([
        u.values[(slice(None),) + tuple(cell[d] % shape[d] for d in range(u.domain.n))] for cell in cells
    ])
    local = weights @ samples
    return _local_to_global(local, indices, ball, u.dim)


def averaged_taylor(u, m: int, ball: BallSpec, rho: int = None) -> VPolynomial:
    """𝕋_m^B u: точно для полиномов, квадратурой для сеточных функций."""
    if m < 0:
        raise MalformedSpec(f"Порядок усреднённого полинома Тейлора должен быть ≥ 0: {m}")
    rho = ball.rho(m + 3) if rho is None else rho
    if isinstance(u, VPolynomial):
        if u.n != ball.n:
            raise DimensionMismatch(f"Полином в ℝ^{u.n}, шар в ℝ^{ball.n}")
        if not u.is_exact:
            raise MalformedSpec("Точный 𝕋_m^B требует точных коэффициентов")
        return _taylor_exact(u, m, ball, rho)
    if isinstance(u, GridFunction):
        if u.domain.n != ball.n:
            raise DimensionMismatch(f"Сетка в ℝ^{u.domain.n}, шар в ℝ^{ball.n}")
        return _taylor_grid(u, m, ball, rho)
    raise MalformedSpec(f"Неподдерживаемый аргумент: {type(u).__name__}")


# --- проекция Π_𝔸^B ---

@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    op: DiffOperator
    ball: BallSpec
    m: int
    coords: tuple          # базис (α, i) пространства 𝒫_{m−1} ⊗ V
    psi_basis: tuple       # ψ_j: сначала ядро, затем дополнение 𝒲
    kernel_size: int
    psi_matrix: sp.Matrix  # столбцы: координаты ψ_j
    gram: sp.Matrix        # Грам ψ-базиса в ⟨·,·⟩_B
    dual_coeffs: sp.Matrix # ψ_j* = Σ_i D_ij ψ_i
    xi_polys: tuple        # корректоры ξ_ℓ ∈ 𝒲 для ℓ из дополнения
    pi_matrix: sp.Matrix

    @cached_property
    def pi_float(self) -> np.ndarray:
        return np.array(self.pi_matrix.evalf(17).tolist(), dtype=float)

    @property
    def kernel_basis(self) -> tuple:
        return self.psi_basis[: self.kernel_size]

    def dual_polynomial(self, j: int) -> VPolynomial:
        result = VPolynomial.zero(self.op.n, self.op.dim_v)
        for i, psi in enumerate(self.psi_basis):
            if self.dual_coeffs[i, j] != 0:
                result = result + psi.scale(self.dual_coeffs[i, j])
        return result

    def to_json(self) -> dict:
        return {
            "op": self.op.to_spec(),
            "ball": self.ball.to_json(),
            "m": self.m,
            "kernel_size": self.kernel_size,
            "psi_basis": [psi.to_json() for psi in self.psi_basis],
            "dual_coeffs": [[str(x) for x in self.dual_coeffs.row(i)] for i in range(self.dual_coeffs.rows)],
            "xi_polys": [xi.to_json() for xi in self.xi_polys],
            "pi_matrix": [[str(x) for x in self.pi_matrix.row(i)] for i in range(self.pi_matrix.rows)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProjectionOperator":
        op = make_operator(data["op"])
        ball = BallSpec(tuple(data["ball"]["center"]), data["ball"]["radius"], data["ball"]["bump_exponent"])
        m = int(data["m"])
        coords = tuple(polynomial_basis(op.n, op.dim_v, m - 1))
        psi = tuple(VPolynomial.from_json(item) for item in data["psi_basis"])
        psi_matrix = sp.Matrix([p.coordinates(coords) for p in psi]).T
        dual = sp.Matrix([[sp.sympify(x, rational=True) for x in row] for row in data["dual_coeffs"]])
        pi = sp.Matrix([[sp.sympify(x, rational=True) for x in row] for row in data["pi_matrix"]])
        gram = dual.inv() if dual.rows else dual
        return cls(op=op, ball=ball, m=m, coords=coords, psi_basis=psi, kernel_size=int(data["kernel_size"]),
                   psi_matrix=psi_matrix, gram=gram, dual_coeffs=dual,
                   xi_polys=tuple(VPolynomial.from_json(item) for item in data["xi_polys"]), pi_matrix=pi)


def _coordinate_gram(coords: Sequence[tuple], moments: _Moments) -> sp.Matrix:
    size = len(coords)
    gram = sp.zeros(size, size)
    for a, (alpha, i) in enumerate(coords):
        for b in range(a, size):
            beta, j = coords[b]
            if i != j:
                continue
            value = moments.monomial(alpha.plus(beta))
            gram[a, b] = value
            gram[b, a] = value
    return gram


def build_projection(op: DiffOperator, ball: BallSpec, profile: NullspaceProfile, m: int = None) -> ProjectionOperator:
    """Базисы, Грам, двойственный базис, корректоры и матрица Π_𝔸^B: всё точно."""
    if profile.verdict != CVerdict.C_ELLIPTIC or profile.deg_p is None:
        raise NotCElliptic(f"{op}: ядро бесконечномерно, проекция не строится")
    if ball.n != op.n:
        raise DimensionMismatch(f"Шар в ℝ^{ball.n}, оператор в ℝ^{op.n}")
    m = profile.deg_p if m is None else m
    if m < profile.deg_p:
        raise MalformedSpec(f"m = {m} меньше deg_𝒫 = {profile.deg_p}")
    ball = ball.with_exponent(ball.rho(m + op.k + 2))
    logger.info(f"🔄 Строим Π для {op}: m={m}, шар {ball.to_json()}")

    flat = _Moments(ball, 0)
    coords = tuple(polynomial_basis(op.n, op.dim_v, m - 1))
    size = len(coords)
    coord_gram = _coordinate_gram(coords, flat)
    kernels = dict(profile.per_degree)

    kernel_vectors, complement_vectors = [], []
    for degree in range(m):
        block = [idx for idx, (alpha, _) in enumerate(coords) if alpha.order == degree]
        basis = kernels.get(degree, []) if degree < profile.deg_p else []
        z_cols = [sp.Matrix(p.coordinates(coords)) for p in basis]
        kernel_vectors.extend(z_cols)
        if z_cols:
            z_block = sp.Matrix.hstack(*[col.extract(block, [0]) for col in z_cols])
            constraint = z_block.T * coord_gram.extract(block, block)
            local = constraint.nullspace()
        else:
            local = [sp.eye(len(block)).col(c) for c in range(len(block))]
        for vec in local:
            full = sp.zeros(size, 1)
            for pos, idx in enumerate(block):
                full[idx] = vec[pos]
            complement_vectors.append(full)

    vectors = kernel_vectors + complement_vectors
    if len(vectors) != size:
        raise SingularGram(f"Базис ψ имеет {len(vectors)} элементов вместо {size}")
    psi_matrix = sp.Matrix.hstack(*vectors)
    psi_basis = tuple(VPolynomial.from_coordinates(op.n, op.dim_v, coords, list(psi_matrix.col(j))) for j in range(size))
    kernel_size = len(kernel_vectors)

    psi_gram = (psi_matrix.T * coord_gram * psi_matrix).applyfunc(sp.expand)
    try:
        dual = psi_gram.inv(method="LU").applyfunc(sp.radsimp)
        psi_inv = psi_matrix.inv(method="LU")
    except (ValueError, ZeroDivisionError) as exc:
        raise SingularGram(f"Вырожденная матрица Грама для {op}") from exc
    if (psi_gram * dual - sp.eye(size)).applyfunc(sp.expand) != sp.zeros(size, size):
        raise SingularGram("Двойственный базис не точен")

    selector = sp.diag(*([1] * kernel_size + [0] * (size - kernel_size))) if size else sp.zeros(0, 0)
    pi_matrix = (psi_matrix * selector * psi_inv).applyfunc(sp.expand)

    complement = psi_basis[kernel_size:]
    images = [apply_to_polynomial(op, psi) for psi in complement]
    a_gram = sp.Matrix(len(complement), len(complement), lambda a, b: flat.inner(images[a], images[b]))
    try:
        a_inv = a_gram.inv(method="LU") if complement else a_gram
    except (ValueError, ZeroDivisionError) as exc:
        raise SingularGram(f"𝔸 вырожден на дополнении 𝒲 для {op}") from exc
    xi_polys = []
    for ell in range(len(complement)):
        xi = VPolynomial.zero(op.n, op.dim_v)
        for b, psi in enumerate(complement):
            if a_inv[b, ell] != 0:
                xi = xi + psi.scale(sp.radsimp(a_inv[b, ell]))
        xi_polys.append(xi)

    logger.info(f"✅ Π построена: dim 𝒫_(m−1)⊗V = {size}, dim ker = {kernel_size}")
    return ProjectionOperator(op=op, ball=ball, m=m, coords=coords, psi_basis=psi_basis, kernel_size=kernel_size,
                              psi_matrix=psi_matrix, gram=psi_gram, dual_coeffs=dual, xi_polys=tuple(xi_polys),
                              pi_matrix=pi_matrix)


def apply_projection(P: ProjectionOperator, u) -> VPolynomial:
    """Π_𝔸^B u = Π̃_𝔸 𝕋_{m−1}^B u."""
    rho = P.ball.bump_exponent
    taylor = averaged_taylor(u, P.m - 1, P.ball, rho=rho)
    if isinstance(u, VPolynomial):
        coords = sp.Matrix(taylor.coordinates(P.coords))
        image = list(P.pi_matrix * coords)
    else:
        coords = np.array([float(x) for x in taylor.coordinates(P.coords)])
        image = list(P.pi_float @ coords)
    return VPolynomial.from_coordinates(P.op.n, P.op.dim_v, P.coords, image)


def projection_stability(P: ProjectionOperator, u: GridFunction) -> float:
    """‖Πu‖_{L^∞(Ω)} / ⨍_B |u|."""
    image = apply_projection(P, u).evaluate(u.domain.points)
    sup = float(np.sqrt((image ** 2).sum(axis=1)).max())
    inside = np.linalg.norm(u.domain.points - np.asarray(P.ball.center), axis=1) < P.ball.radius
    if not inside.any():
        raise BallOutsideGrid("В шаре нет центров ячеек")
    average = float(np.sqrt((u.masked()[inside] ** 2).sum(axis=1)).mean())
    return sup / average if average > 0 else (0.0 if sup == 0 else float("inf"))


# --- проверки свойств ---

def check_dual_exactness(P: ProjectionOperator) -> bool:
    size = P.gram.rows
    return (P.gram * P.dual_coeffs - sp.eye(size)).applyfunc(sp.expand) == sp.zeros(size, size)


def check_corrector_identity(P: ProjectionOperator) -> bool:
    """⟨q, ψ_ℓ*⟩_B = ⟨𝔸q, 𝔸ξ_ℓ⟩_B для всех q из ψ-базиса и ℓ из дополнения."""
    flat = _Moments(P.ball, 0)
    images = [apply_to_polynomial(P.op, psi) for psi in P.psi_basis]
    for offset, xi in enumerate(P.xi_polys):
        ell = P.kernel_size + offset
        dual = P.dual_polynomial(ell)
        a_xi = apply_to_polynomial(P.op, xi)
        for q, aq in zip(P.psi_basis, images):
            if sp.expand(flat.inner(q, dual) - flat.inner(aq, a_xi)) != 0:
                return False
    return True


def check_degree_preservation(P: ProjectionOperator, deg_p: int) -> list:
    """(K4): для мономов степени ℓ < deg_𝒫 образ имеет степень ≤ ℓ и лежит в ker(𝔸). Возвращает нарушения."""
    failures = []
    for idx, (alpha, i) in enumerate(P.coords):
        if alpha.order >= deg_p:
            continue
        image = VPolynomial.from_coordinates(P.op.n, P.op.dim_v, P.coords, list(P.pi_matrix.col(idx)))
        if image.degree > alpha.order or not apply_to_polynomial(P.op, image).is_zero:
            failures.append({"alpha": list(alpha), "component": i})
    return failures


def check_idempotent(P: ProjectionOperator) -> bool:
    size = P.pi_matrix.rows
    return (P.pi_matrix * P.pi_matrix - P.pi_matrix).applyfunc(sp.expand) == sp.zeros(size, size)


# --- ядро Мазьи ---

def _omega_scale(ball: BallSpec, rho: int) -> float:
    return 1.0 / (float(ball_moment([0] * ball.n, 1, rho)) * ball.radius ** ball.n)


def _ray_bounds(x: np.ndarray, directions: np.ndarray, ball: BallSpec) -> tuple:
    """Параметры t₋ ≤ t₊ пересечения лучей x + t·e с шаром (nan, если промах)."""
    offset = x - np.asarray(ball.center)
    b = directions @ offset
    disc = b ** 2 - (offset @ offset - ball.radius ** 2)
    root = np.sqrt(np.where(disc > 0, disc, np.nan))
    return -b - root, -b + root


def maz_kernel(alpha: Sequence[int], ball: BallSpec, x: Sequence[float], y: Sequence[float], rho: int = None) -> float:
    """K_{α,B}(x, y) адаптивной квадратурой ω вдоль луча из x через y."""
    alpha = MultiIndex(alpha)
    m, n = alpha.order, ball.n
    rho = ball.rho(m + 3) if rho is None else rho
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    dist = float(np.linalg.norm(y - x))
    if dist == 0.0:
        raise CoincidentPoints(f"x = y = {tuple(x)}")
    e = (y - x) / dist
    t_minus, t_plus = _ray_bounds(x, e[None, :], ball)
    if np.isnan(t_plus[0]):
        return 0.0
    lower, upper = max(dist, float(t_minus[0])), float(t_plus[0])
    if upper <= lower:
        return 0.0
    scale = _omega_scale(ball, rho)
    c = np.asarray(ball.center)

    def integrand(t):
        z = x + t * e - c
        return scale * max(0.0, 1.0 - (z @ z) / ball.radius ** 2) ** rho * t ** (n - 1)

    value, _ = integrate.quad(integrand, lower, upper, epsabs=1e-14, epsrel=1e-12, limit=200)
    prefactor = (-1) ** m * m / alpha.factorial() * np.prod((y - x) ** np.array(alpha)) / dist ** n
    return float(prefactor * value)


def maz_kernel_batch(alpha: Sequence[int], ball: BallSpec, x: Sequence[float], ys: np.ndarray, rho: int = None) -> np.ndarray:
    """K_{α,B}(x, ·) на многих точках: ω на луче: полином от t, Гаусс–Лежандр точен."""
    alpha = MultiIndex(alpha)
    m, n = alpha.order, ball.n
    rho = ball.rho(m + 3) if rho is None else rho
    x = np.asarray(x, dtype=float)
    ys = np.atleast_2d(ys)
    diff = ys - x
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0.0):
        raise CoincidentPoints("Одна из точек y совпадает с x")
    e = diff / dist[:, None]
    t_minus, t_plus = _ray_bounds(x, e, ball)
    lower = np.maximum(dist, np.nan_to_num(t_minus, nan=np.inf))
    upper = np.nan_to_num(t_plus, nan=-np.inf)
    active = upper > lower

    nodes, gauss = np.polynomial.legendre.leggauss(rho + ceil(n / 2) + 1)
    result = np.zeros(len(ys))
    if active.any():
        lo, hi = lower[active], upper[active]
        t = lo[:, None] + (hi - lo)[:, None] * (nodes[None, :] + 1) / 2
        offset = x - np.asarray(ball.center)
        z2 = (offset @ offset) + 2 * t * (e[active] @ offset)[:, None] + t ** 2
        omega = np.clip(1.0 - z2 / ball.radius ** 2, 0.0, None) ** rho
        integral = (omega * t ** (n - 1)) @ gauss * (hi - lo) / 2 * _omega_scale(ball, rho)
        mono = np.prod(diff[active] ** np.array(alpha)[None, :], axis=1)
        result[active] = (-1) ** m * m / alpha.factorial() * mono / dist[active] ** n * integral
    return result


def kernel_scaling(alpha: Sequence[int], ball: BallSpec, x: Sequence[float], radii: Sequence[float]) -> float:
    """Наклон log|K| против log|x − y| вдоль направления на центр шара."""
    x = np.asarray(x, dtype=float)
    direction = np.asarray(ball.center) - x
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.eye(ball.n)[0]
    if ball.n > 1:
        # наклон меньше угла видимости шара, чтобы моном (y − x)^α не обнулялся на оси
        perp = np.roll(direction, 1) - (np.roll(direction, 1) @ direction) * direction
        if np.linalg.norm(perp) < 1e-12:
            perp = np.eye(ball.n)[1] - direction[1] * direction
        tilt = 0.5 * min(1.0, ball.radius / norm) if norm > 0 else 0.5
        direction = direction + tilt * perp / np.linalg.norm(perp)
        direction = direction / np.linalg.norm(direction)
    radii = np.asarray(radii, dtype=float)
    values = np.abs(maz_kernel_batch(alpha, ball, x, x + radii[:, None] * direction[None, :]))
    keep = values > 0
    slope, _ = np.polyfit(np.log(radii[keep]), np.log(values[keep]), 1)
    return float(slope)


def _duffy_points(x: np.ndarray, h: float, order: int = 8) -> tuple:
    """Квадратура Даффи на 4 ячейках с вершиной в x (8 треугольников)."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    s = (nodes + 1) / 2
    w = weights / 2
    ss, tt = np.meshgrid(s, s, indexing="ij")
    ws = np.outer(w, w)
    points, wts = [], []
    for sx, sy in itertools.product((-1, 1), repeat=2):
        corners = [np.array([sx * h, 0.0]), np.array([sx * h, sy * h]), np.array([0.0, sy * h])]
        for p1, p2 in ((corners[0], corners[1]), (corners[1], corners[2])):
            jac = abs(p1[0] * (p2 - p1)[1] - p1[1] * (p2 - p1)[0])
            pts = x + ss[..., None] * (p1 + tt[..., None] * (p2 - p1))
            points.append(pts.reshape(-1, 2))
            wts.append((ws * ss * jac).reshape(-1))
    return np.vstack(points), np.concatenate(wts)


def representation_error(u: VPolynomial, ball: BallSpec, x: Sequence[float], m: int, cells: int = 256) -> float:
    """
    |u(x) − 𝕋_{m−1}u(x) − Σ_{|α|=m} ∫ K_{α,B}(x,y) ∂^α u(y) dy| в ℝ²: сетка cells² с узлом в x,
    3×3 Гаусс на ячейках и квадратура Даффи на ячейках, касающихся x.
    """
    if ball.n != 2 or u.n != 2:
        raise DimensionMismatch("Проверка представления реализована для n = 2")
    rho = ball.rho(m + 3)
    x = np.asarray(x, dtype=float)
    half = float(np.linalg.norm(x - np.asarray(ball.center)) + ball.radius)
    h = 2 * half / cells

    nodes, weights = np.polynomial.legendre.leggauss(3)
    offsets = np.array(list(itertools.product(nodes, nodes))) * h / 2
    cell_w = np.outer(weights, weights).reshape(-1) * h * h / 4
    idx = np.arange(cells) - cells // 2
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    regular = ~(np.isin(ii, (-1, 0)) & np.isin(jj, (-1, 0)))
    cell_centers = x + (np.stack([ii[regular], jj[regular]], axis=1) + 0.5) * h
    points = (cell_centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    wts = np.tile(cell_w, len(cell_centers))
    duffy_pts, duffy_w = _duffy_points(x, h)
    points = np.vstack([points, duffy_pts])
    wts = np.concatenate([wts, duffy_w])

    total = np.zeros(u.dim)
    for alpha in indices_upto(2, m):
        if alpha.order != m:
            continue
        derivative = u.derivative(alpha)
        if derivative.is_zero:
            continue
        kernel = maz_kernel_batch(alpha, ball, x, points, rho=rho)
        total += (kernel * wts) @ derivative.evaluate(points)

    taylor = averaged_taylor(u, m - 1, ball.with_exponent(rho)).evaluate(x[None, :])[0]
    exact_value = u.evaluate(x[None, :])[0]
    return float(np.linalg.norm(exact_value - taylor - total))


# --- потенциалы Рисса ---

@lru_cache(maxsize=32)
def _self_cell_integral(n: int, beta: float) -> float:
    """∫_{[-1/2,1/2]ⁿ} |y|^{β−n} dy = (n/β) ∫_{[-1/2,1/2]^{n−1}} (|a|² + 1/4)^{(β−n)/2} da."""
    if n == 1:
        return 2.0 * 0.5 ** beta / beta
    nodes, weights = np.polynomial.legendre.leggauss(24)
    nodes, weights = nodes / 2, weights / 2
    grids = np.meshgrid(*([nodes] * (n - 1)), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for axis_weights in np.meshgrid(*([weights] * (n - 1)), indexing="ij"):
        wgrid = wgrid * axis_weights
    radius2 = sum(g ** 2 for g in grids) + 0.25
    return float(n / beta * np.sum(wgrid * radius2 ** ((beta - n) / 2)))


def riesz_potential(density: np.ndarray, sources: np.ndarray, targets: np.ndarray, h: float, beta: float,
                    chunk: int = 2048) -> np.ndarray:
    """(I_β f)(x) = Σ_y f(y)|x − y|^{β−n} hⁿ; собственная ячейка: усреднённое ядро."""
    n = sources.shape[1]
    self_value = _self_cell_integral(n, beta) * h ** beta
    out = np.zeros(len(targets))
    for start in range(0, len(targets), chunk):
        dist = cdist(targets[start:start + chunk], sources)
        with np.errstate(divide="ignore"):
            kernel = np.where(dist > 0, dist, 1.0) ** (beta - n) * h ** n
        kernel[dist == 0] = self_value
        out[start:start + chunk] = kernel @ density
    return out


def riesz_bound_check(op: DiffOperator, P: ProjectionOperator, u: GridFunction, ell: int,
                      domain: GridDomain = None) -> float:
    """max_x |D^ℓ(u − Πu)(x)| / (I_{k−ℓ}|𝔸u|)(x) по внутренним ячейкам."""
    domain = domain or u.domain
    if not 0 <= ell < op.k:
        raise MalformedSpec(f"ℓ = {ell} вне диапазона 0..{op.k - 1}")
    remainder = u - GridFunction.from_polynomial(domain, apply_projection(P, u))
    if ell == 0:
        numerator_values, valid = remainder.values, domain.mask
    else:
        numerator_values, valid = gradient_tensor(remainder, ell)
    numerator = np.sqrt((numerator_values ** 2).sum(axis=0))[valid]

    au, au_valid = apply_operator(op, u)
    density = np.sqrt((au ** 2).sum(axis=0))
    scale = max(float(np.abs(u.values).max()), 1.0)
    if density[au_valid].max(initial=0.0) <= 1e-12 * scale:
        if numerator.max(initial=0.0) <= 1e-9 * scale:
            return 0.0
        raise DegenerateDenominator("𝔸u ≡ 0, но u − Πu ≠ 0")

    potential = riesz_potential(density[au_valid], domain.centers[au_valid], domain.centers[valid],
                                domain.h, float(op.k - ell))
    positive = potential > 0
    ratio = numerator[positive] / potential[positive]
    return float(ratio.max(initial=0.0))
