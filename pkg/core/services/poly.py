"""
Точная полиномиальная алгебра: мультииндексы, дифференциальные операторы
с постоянными коэффициентами, векторные полиномы, символ оператора и
моменты шара.

Линейная алгебра над полиномами ведётся в sympy (рациональные числа и
радикалы sqrt(2), sqrt(3), sqrt(6)); числа с плавающей точкой появляются
только в сеточных путях.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from core.exceptions import DimensionMismatch, InhomogeneousOrder, MalformedSpec, ZeroOperator

logger = logging.getLogger(__name__)

# Степень нулевого полинома: отдельная метка, а не -1
ZERO_DEGREE = float("-inf")

_ALGEBRAIC = [sp.sqrt(2), sp.sqrt(3), sp.sqrt(6)]


def exact(value) -> sp.Expr:
    """Перевести коэффициент (int, float, "p/q", "sqrt(2)/2") в точное sympy-число."""
    if isinstance(value, sp.Basic):
        return value
    if isinstance(value, bool):
        raise MalformedSpec(f"Булево значение вместо числа: {value!r}")
    if isinstance(value, (int, np.integer)):
        return sp.Integer(int(value))
    if isinstance(value, str):
        try:
            parsed = sp.sympify(value, rational=True)
        except (sp.SympifyError, TypeError) as exc:
            raise MalformedSpec(f"Не удалось разобрать коэффициент {value!r}") from exc
        if not parsed.is_number or not parsed.is_real:
            raise MalformedSpec(f"Коэффициент {value!r} не является вещественным числом")
        return parsed
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise MalformedSpec(f"Нечисловой коэффициент: {value!r}")
        guess = sp.nsimplify(value, _ALGEBRAIC, tolerance=1e-12)
        if abs(float(guess) - value) <= 1e-12 * max(1.0, abs(value)):
            return guess
        return sp.Rational(value)
    raise MalformedSpec(f"Неподдерживаемый коэффициент: {value!r}")


def is_exact_zero(value) -> bool:
    if isinstance(value, sp.Basic):
        return sp.expand(value) == 0
    return value == 0


class MultiIndex(tuple):
    """Мультииндекс α ∈ ℕ₀ⁿ. Порядок |α| всегда вычисляется из компонент."""

    __slots__ = ()

    def __new__(cls, entries: Iterable[int]):
        values = []
        for a in entries:
            if isinstance(a, bool) or int(a) != a or a < 0:
                raise MalformedSpec(f"Некорректная компонента мультииндекса: {a!r}")
            values.append(int(a))
        return super().__new__(cls, values)

    @property
    def n(self) -> int:
        return len(self)

    @property
    def order(self) -> int:
        return sum(self)

    def factorial(self) -> int:
        return math.prod(math.factorial(a) for a in self)

    def divides(self, other: "MultiIndex") -> bool:
        return all(a <= b for a, b in zip(self, other))

    def plus(self, other: Sequence[int]) -> "MultiIndex":
        return MultiIndex(a + b for a, b in zip(self, other))

    def minus(self, other: Sequence[int]) -> "MultiIndex":
        return MultiIndex(a - b for a, b in zip(self, other))

    def falling(self, other: Sequence[int]) -> int:
        """∏ αᵢ!/(αᵢ−βᵢ)!: множитель при ∂^β x^α."""
        return math.prod(math.perm(a, b) for a, b in zip(self, other))

    def binomial(self, other: Sequence[int]) -> int:
        return math.prod(math.comb(a, b) for a, b in zip(self, other))

    @classmethod
    def unit(cls, n: int, j: int, power: int = 1) -> "MultiIndex":
        return cls(power if i == j else 0 for i in range(n))

    @classmethod
    def zero(cls, n: int) -> "MultiIndex":
        return cls([0] * n)


@lru_cache(maxsize=None)
def homogeneous_indices(n: int, order: int) -> tuple:
    """Все α с |α| = order в убывающем лексикографическом порядке."""
    if order < 0:
        return ()
    if n == 1:
        return (MultiIndex((order,)),)
    result = []
    for first in range(order, -1, -1):
        for rest in homogeneous_indices(n - 1, order - first):
            result.append(MultiIndex((first,) + tuple(rest)))
    return tuple(result)


@lru_cache(maxsize=None)
def indices_upto(n: int, degree: int) -> tuple:
    result = []
    for order in range(degree + 1):
        result.extend(homogeneous_indices(n, order))
    return tuple(result)


def monomial_values(points: np.ndarray, indices: Sequence[MultiIndex]) -> np.ndarray:
    """Значения мономов x^α в точках: массив (P, len(indices))."""
    points = np.atleast_2d(np.asarray(points))
    if not indices:
        return np.zeros((points.shape[0], 0), dtype=points.dtype)
    powers = np.array(indices, dtype=int)
    return np.prod(points[:, None, :] ** powers[None, :, :], axis=2)


# --- дифференциальный оператор ---

@dataclass(frozen=True)
class DiffOperator:
    """𝔸 = Σ_{|α|=k} A_α ∂^α с матрицами A_α размера dim_w × dim_v."""

    n: int
    k: int
    dim_v: int
    dim_w: int
    terms: tuple  # ((MultiIndex, sympy.ImmutableMatrix), ...) в порядке мультииндексов
    name: str = ""

    def matrix(self, alpha: Sequence[int]) -> sp.ImmutableMatrix:
        for key, mat in self.terms:
            if key == tuple(alpha):
                return mat
        return sp.ImmutableMatrix.zeros(self.dim_w, self.dim_v)

    @cached_property
    def numeric(self) -> tuple:
        """(alphas (T, n) int, matrices (T, dim_w, dim_v) float)."""
        alphas = np.array([alpha for alpha, _ in self.terms], dtype=int).reshape(-1, self.n)
        mats = np.array(
            [np.array(mat.evalf(17).tolist(), dtype=float) for _, mat in self.terms]
        ).reshape(-1, self.dim_w, self.dim_v)
        return alphas, mats

    def to_spec(self) -> dict:
        spec = {
            "n": self.n,
            "k": self.k,
            "dim_v": self.dim_v,
            "dim_w": self.dim_w,
            "terms": [
                {
                    "alpha": list(alpha),
                    "matrix": [[float(entry) for entry in mat.row(i)] for i in range(self.dim_w)],
                }
                for alpha, mat in self.terms
            ],
        }
        if self.name:
            spec["name"] = self.name
        return spec

    @cached_property
    def spec_hash(self) -> str:
        spec = self.to_spec()
        spec.pop("name", None)
        payload = json.dumps(spec, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def __str__(self):
        label = self.name or "A"
        return f"{label}(n={self.n}, k={self.k}, V={self.dim_v}, W={self.dim_w})"


def _build_operator(n, k, dim_v, dim_w, accumulated: Mapping, name: str = "") -> DiffOperator:
    terms = []
    for alpha in homogeneous_indices(n, k):
        mat = accumulated.get(alpha)
        if mat is None:
            continue
        mat = sp.ImmutableMatrix(mat.applyfunc(sp.expand))
        if mat.is_zero_matrix:
            continue
        terms.append((alpha, mat))
    if not terms:
        raise ZeroOperator("Все матрицы оператора нулевые")
    return DiffOperator(n=n, k=k, dim_v=dim_v, dim_w=dim_w, terms=tuple(terms), name=name)


def make_operator(spec: Mapping) -> DiffOperator:
    """Проверить описание оператора (JSON-формат) и построить DiffOperator."""
    if not isinstance(spec, Mapping):
        raise MalformedSpec("Описание оператора должно быть JSON-объектом")
    for key in ("n", "k", "dim_v", "dim_w", "terms"):
        if key not in spec:
            raise MalformedSpec(f"Нет обязательного ключа '{key}'")
    try:
        n, k, dim_v, dim_w = (int(spec[key]) for key in ("n", "k", "dim_v", "dim_w"))
    except (TypeError, ValueError) as exc:
        raise MalformedSpec("n, k, dim_v, dim_w должны быть целыми") from exc
    if n < 1 or k < 1 or dim_v < 1 or dim_w < 1:
        raise MalformedSpec(f"Размерности должны быть ≥ 1: n={n}, k={k}, dim_v={dim_v}, dim_w={dim_w}")
    terms = spec["terms"]
    if not isinstance(terms, list) or not terms:
        raise MalformedSpec("'terms' должен быть непустым списком")

    accumulated: dict = {}
    for term in terms:
        if not isinstance(term, Mapping) or "alpha" not in term or "matrix" not in term:
            raise MalformedSpec(f"Некорректный член оператора: {term!r}")
        alpha = MultiIndex(term["alpha"])
        if alpha.n != n:
            raise MalformedSpec(f"Длина α={tuple(alpha)} не равна n={n}")
        if alpha.order != k:
            raise InhomogeneousOrder(f"|α|={alpha.order} для α={tuple(alpha)}, ожидалось k={k}")
        rows = term["matrix"]
        if not isinstance(rows, list) or len(rows) != dim_w:
            raise MalformedSpec(f"Матрица при α={tuple(alpha)} должна иметь {dim_w} строк")
        for row in rows:
            if not isinstance(row, list) or len(row) != dim_v:
                raise MalformedSpec(f"Строка матрицы при α={tuple(alpha)} должна иметь {dim_v} элементов")
        mat = sp.Matrix([[exact(entry) for entry in row] for row in rows])
        accumulated[alpha] = accumulated[alpha] + mat if alpha in accumulated else mat

    return _build_operator(n, k, dim_v, dim_w, accumulated, name=str(spec.get("name", "")))


def operator_from_terms(n: int, k: int, dim_v: int, dim_w: int, terms: Mapping, name: str = "") -> DiffOperator:
    """Собрать оператор из уже точных матриц (встроенные операторы, композиции)."""
    accumulated = {MultiIndex(alpha): sp.Matrix(mat) for alpha, mat in terms.items()}
    for alpha, mat in accumulated.items():
        if alpha.order != k:
            raise InhomogeneousOrder(f"|α|={alpha.order} для α={tuple(alpha)}, ожидалось k={k}")
        if mat.shape != (dim_w, dim_v):
            raise MalformedSpec(f"Матрица при α={tuple(alpha)} имеет форму {mat.shape}")
    return _build_operator(n, k, dim_v, dim_w, accumulated, name=name)


# --- символ ---

@dataclass(frozen=True)
class SymbolMatrix:
    value: np.ndarray  # (dim_w, dim_v) complex
    at: tuple


def symbol(op: DiffOperator, xi: Sequence[complex]) -> SymbolMatrix:
    """𝔸[ξ] = Σ ξ^α A_α для комплексного ξ."""
    xi = np.asarray(xi, dtype=complex).reshape(-1)
    if xi.shape[0] != op.n:
        raise DimensionMismatch(f"ξ имеет длину {xi.shape[0]}, ожидалось n={op.n}")
    return SymbolMatrix(value=symbol_batch(op, xi[None, :])[0], at=tuple(xi.tolist()))


def symbol_batch(op: DiffOperator, xis: np.ndarray) -> np.ndarray:
    """Символ в пачке точек: (S, n) → (S, dim_w, dim_v)."""
    xis = np.atleast_2d(np.asarray(xis))
    if xis.shape[1] != op.n:
        raise DimensionMismatch(f"ξ имеет длину {xis.shape[1]}, ожидалось n={op.n}")
    alphas, mats = op.numeric
    weights = np.prod(xis[:, None, :] ** alphas[None, :, :], axis=2)
    return np.einsum("st,twv->swv", weights, mats)


def symbol_exact(op: DiffOperator, xi: Sequence) -> sp.Matrix:
    """Точный символ для sympy-значений ξ (рациональные комплексные числа)."""
    if len(xi) != op.n:
        raise DimensionMismatch(f"ξ имеет длину {len(xi)}, ожидалось n={op.n}")
    result = sp.zeros(op.dim_w, op.dim_v)
    for alpha, mat in op.terms:
        weight = sp.Integer(1)
        for x, a in zip(xi, alpha):
            weight *= sp.sympify(x) ** a
        result += weight * mat
    return result.applyfunc(sp.expand)


def sigma_min(matrices: np.ndarray) -> np.ndarray:
    """Наименьшее сингулярное число (для неинъективных по размеру матриц: 0)."""
    matrices = np.asarray(matrices)
    single = matrices.ndim == 2
    if single:
        matrices = matrices[None]
    dim_w, dim_v = matrices.shape[1:]
    if dim_w < dim_v:
        values = np.zeros(matrices.shape[0])
    else:
        values = np.linalg.svd(matrices, compute_uv=False)[:, -1]
    return values[0] if single else values


# --- векторные полиномы ---

def _lift(c):
    if isinstance(c, sp.Basic):
        return sp.expand(c)
    if isinstance(c, (int, np.integer)) and not isinstance(c, bool):
        return sp.Integer(int(c))
    return c


def _normalized(coeffs: Mapping, dim: int) -> dict:
    result = {}
    for alpha, vec in coeffs.items():
        vec = tuple(_lift(c) for c in vec)
        if len(vec) != dim:
            raise DimensionMismatch(f"Коэффициент при {tuple(alpha)} имеет длину {len(vec)}, ожидалось {dim}")
        if all(is_exact_zero(c) for c in vec):
            continue
        result[MultiIndex(alpha)] = vec
    return result


@dataclass(frozen=True, eq=False)
class VPolynomial:
    """Полином ℝⁿ → ℝ^dim в мономиальных координатах: {α: (c_1, …, c_dim)}."""

    n: int
    dim: int
    coeffs: Mapping

    @classmethod
    def build(cls, n: int, dim: int, coeffs: Mapping) -> "VPolynomial":
        return cls(n=n, dim=dim, coeffs=MappingProxyType(_normalized(coeffs, dim)))

    @classmethod
    def zero(cls, n: int, dim: int) -> "VPolynomial":
        return cls.build(n, dim, {})

    @classmethod
    def monomial(cls, n: int, dim: int, alpha: Sequence[int], component: int, value=1) -> "VPolynomial":
        vec = [sp.Integer(0)] * dim
        vec[component] = sp.sympify(value)
        return cls.build(n, dim, {MultiIndex(alpha): tuple(vec)})

    @classmethod
    def constant(cls, n: int, values: Sequence) -> "VPolynomial":
        return cls.build(n, len(values), {MultiIndex.zero(n): tuple(exact(v) for v in values)})

    @property
    def degree(self):
        if not self.coeffs:
            return ZERO_DEGREE
        return max(alpha.order for alpha in self.coeffs)

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def is_exact(self) -> bool:
        return all(isinstance(c, sp.Basic) for vec in self.coeffs.values() for c in vec)

    def is_homogeneous(self, order: int) -> bool:
        return all(alpha.order == order for alpha in self.coeffs)

    def _check(self, other: "VPolynomial"):
        if (self.n, self.dim) != (other.n, other.dim):
            raise DimensionMismatch(f"Полиномы разных размерностей: {(self.n, self.dim)} и {(other.n, other.dim)}")

    def __add__(self, other: "VPolynomial") -> "VPolynomial":
        self._check(other)
        merged = dict(self.coeffs)
        for alpha, vec in other.coeffs.items():
            if alpha in merged:
                merged[alpha] = tuple(a + b for a, b in zip(merged[alpha], vec))
            else:
                merged[alpha] = vec
        return VPolynomial.build(self.n, self.dim, merged)

    def __neg__(self) -> "VPolynomial":
        return self.scale(-1)

    def __sub__(self, other: "VPolynomial") -> "VPolynomial":
        return self + (-other)

    def scale(self, factor) -> "VPolynomial":
        return VPolynomial.build(
            self.n, self.dim, {alpha: tuple(factor * c for c in vec) for alpha, vec in self.coeffs.items()}
        )

    def equals(self, other: "VPolynomial", tol: float = 0.0) -> bool:
        """Точное сравнение (tol = 0) или покоэффициентное с допуском."""
        diff = self - other
        if tol == 0.0:
            return diff.is_zero
        return all(abs(complex(c)) <= tol for vec in diff.coeffs.values() for c in vec)

    def derivative(self, alpha: Sequence[int]) -> "VPolynomial":
        alpha = MultiIndex(alpha)
        result = {}
        for beta, vec in self.coeffs.items():
            if not alpha.divides(beta):
                continue
            factor = beta.falling(alpha)
            result[beta.minus(alpha)] = tuple(factor * c for c in vec)
        return VPolynomial.build(self.n, self.dim, result)

    def partial(self, j: int) -> "VPolynomial":
        return self.derivative(MultiIndex.unit(self.n, j))

    def homogeneous_part(self, order: int) -> "VPolynomial":
        return VPolynomial.build(
            self.n, self.dim, {alpha: vec for alpha, vec in self.coeffs.items() if alpha.order == order}
        )

    def truncate(self, degree: int) -> "VPolynomial":
        return VPolynomial.build(
            self.n, self.dim, {alpha: vec for alpha, vec in self.coeffs.items() if alpha.order <= degree}
        )

    def component(self, i: int) -> dict:
        """Скалярная компонента как словарь {α: c}."""
        return {alpha: vec[i] for alpha, vec in self.coeffs.items() if not is_exact_zero(vec[i])}

    def evaluate(self, points) -> np.ndarray:
        """Значения в точках: (P, n) → (P, dim), float64."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.n:
            raise DimensionMismatch(f"Точки размерности {points.shape[1]}, ожидалось {self.n}")
        if not self.coeffs:
            return np.zeros((points.shape[0], self.dim))
        indices = list(self.coeffs)
        basis = monomial_values(points, indices)
        table = np.array([[float(c) for c in self.coeffs[alpha]] for alpha in indices])
        return basis @ table

    def evaluate_exact(self, point: Sequence) -> tuple:
        point = [sp.sympify(x) for x in point]
        values = [sp.Integer(0)] * self.dim
        for alpha, vec in self.coeffs.items():
            weight = sp.Integer(1)
            for x, a in zip(point, alpha):
                weight *= x ** a
            for i, c in enumerate(vec):
                values[i] += weight * c
        return tuple(sp.expand(v) for v in values)

    def dot(self, other: "VPolynomial") -> dict:
        """Скалярный полином Σ_i p_i q_i как словарь {α: c}."""
        self._check(other)
        result: dict = {}
        for alpha, u in self.coeffs.items():
            for beta, v in other.coeffs.items():
                value = sum((a * b for a, b in zip(u, v)), sp.Integer(0))
                if is_exact_zero(value):
                    continue
                gamma = alpha.plus(beta)
                result[gamma] = result.get(gamma, 0) + value
        return result

    def coordinates(self, basis: Sequence[tuple]) -> list:
        """Координаты в базисе пар (α, компонента); мономы вне базиса запрещены."""
        position = {item: idx for idx, item in enumerate(basis)}
        vector = [sp.Integer(0)] * len(basis)
        for alpha, vec in self.coeffs.items():
            for i, c in enumerate(vec):
                if is_exact_zero(c):
                    continue
                key = (alpha, i)
                if key not in position:
                    raise DimensionMismatch(f"Моном {tuple(alpha)} (компонента {i}) вне базиса")
                vector[position[key]] = c
        return vector

    @classmethod
    def from_coordinates(cls, n: int, dim: int, basis: Sequence[tuple], vector: Sequence) -> "VPolynomial":
        coeffs: dict = {}
        for (alpha, i), c in zip(basis, vector):
            if is_exact_zero(c):
                continue
            vec = list(coeffs.get(alpha, [sp.Integer(0)] * dim))
            vec[i] = vec[i] + c
            coeffs[alpha] = vec
        return cls.build(n, dim, {alpha: tuple(vec) for alpha, vec in coeffs.items()})

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "dim": self.dim,
            "terms": [
                {"alpha": list(alpha), "coeffs": [str(c) if isinstance(c, sp.Basic) else repr(float(c)) for c in vec]}
                for alpha, vec in sorted(self.coeffs.items(), key=lambda item: (item[0].order, [-a for a in item[0]]))
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "VPolynomial":
        coeffs = {
            MultiIndex(term["alpha"]): tuple(sp.sympify(c, rational=True) for c in term["coeffs"])
            for term in data["terms"]
        }
        return cls.build(int(data["n"]), int(data["dim"]), coeffs)

    def __repr__(self):
        return f"VPolynomial(n={self.n}, dim={self.dim}, degree={self.degree}, terms={len(self.coeffs)})"


def polynomial_basis(n: int, dim: int, degree: int, homogeneous: bool = False) -> list:
    """Базис пар (α, компонента) пространства 𝒫_degree ⊗ ℝ^dim (или однородной части)."""
    indices = homogeneous_indices(n, degree) if homogeneous else indices_upto(n, degree)
    return [(alpha, i) for alpha in indices for i in range(dim)]


def apply_to_polynomial(op: DiffOperator, p: VPolynomial) -> VPolynomial:
    """𝔸p с точной арифметикой на точных входах."""
    if p.dim != op.dim_v or p.n != op.n:
        raise DimensionMismatch(f"Полином {p!r} не подходит к оператору {op}")
    exact_input = p.is_exact
    result: dict = {}
    for alpha, mat in op.terms:
        dense = None if exact_input else np.array(mat.evalf(17).tolist(), dtype=float)
        for beta, vec in p.coeffs.items():
            if not alpha.divides(beta):
                continue
            gamma = beta.minus(alpha)
            factor = beta.falling(alpha)
            if exact_input:
                image = list(mat * sp.Matrix(vec) * factor)
            else:
                image = list(factor * (dense @ np.array(vec, dtype=float)))
            if gamma in result:
                result[gamma] = [a + b for a, b in zip(result[gamma], image)]
            else:
                result[gamma] = image
    return VPolynomial.build(op.n, op.dim_w, {alpha: tuple(vec) for alpha, vec in result.items()})


# --- моменты шара ---

@lru_cache(maxsize=None)
def _centered_moment(alpha: tuple, radius: sp.Expr, rho: int, normalized: bool) -> sp.Expr:
    n = len(alpha)
    if any(a % 2 for a in alpha):
        return sp.Integer(0)
    order = sum(alpha)
    value = math.prod((sp.gamma(sp.Rational(a + 1, 2)) for a in alpha), start=sp.Integer(1))
    value = value * sp.gamma(rho + 1) / sp.gamma(rho + 1 + sp.Rational(order + n, 2))
    if normalized:
        total = math.prod((sp.gamma(sp.Rational(1, 2)) for _ in alpha), start=sp.Integer(1))
        total = total * sp.gamma(rho + 1) / sp.gamma(rho + 1 + sp.Rational(n, 2))
        return sp.simplify(value / total) * radius ** order
    return sp.simplify(value) * radius ** (order + n)


def ball_moment(alpha: Sequence[int], radius, bump_exponent: int = 0, normalized: bool = False) -> sp.Expr:
    """
    ∫_{B(0,r)} y^α (1 − |y|²/r²)^ρ dy в замкнутой форме; ρ = 0: плоский вес.
    С normalized=True вес нормирован к единичному интегралу (результат рационален при рациональном r).
    """
    if bump_exponent < 0:
        raise MalformedSpec(f"Показатель веса должен быть ≥ 0: {bump_exponent}")
    return _centered_moment(tuple(MultiIndex(alpha)), exact(radius), int(bump_exponent), normalized)


def shift_scalar(coeffs: Mapping, center: Sequence) -> dict:
    """q(c + z) как полином от z."""
    center = [exact(c) for c in center]
    result: dict = {}
    for beta, value in coeffs.items():
        beta = MultiIndex(beta)
        for order in range(beta.order + 1):
            for gamma in homogeneous_indices(beta.n, order):
                if not gamma.divides(beta):
                    continue
                weight = beta.binomial(gamma)
                for c, a in zip(center, beta.minus(gamma)):
                    weight = weight * c ** a
                if weight == 0:
                    continue
                result[gamma] = result.get(gamma, 0) + weight * value
    return {alpha: sp.expand(v) for alpha, v in result.items() if not is_exact_zero(v)}


def ball_average(coeffs: Mapping, center: Sequence, radius, bump_exponent: int = 0) -> sp.Expr:
    """∫ q ω для нормированного веса ω ∝ (1 − |y−c|²/r²)^ρ на B(c, r)."""
    shifted = shift_scalar(coeffs, center)
    total = sp.Integer(0)
    for gamma, value in shifted.items():
        total += value * ball_moment(gamma, radius, bump_exponent, normalized=True)
    return sp.expand(total)
