"""
Эллиптичность и ℂ-эллиптичность: минимум σ_min символа на сфере,
однородные ядра Z_ℓ, степень deg_𝒫, комплексные свидетели и
пересечение образов символа (условие сокращения).
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy as sp
from scipy import linalg, optimize, stats

from core.exceptions import NotElliptic
from core.models import CVerdict, EllipticVerdict
from core.services.poly import (
    DiffOperator,
    VPolynomial,
    apply_to_polynomial,
    polynomial_basis,
    sigma_min,
    symbol_batch,
    symbol_exact,
)
from ellikorn import config

logger = logging.getLogger(__name__)


# --- вещественная эллиптичность ---

@dataclass(frozen=True)
class EllipticityResult:
    verdict: str
    minimum: float
    argmin: tuple


def _sphere_points(n: int, samples: int, seed: int) -> np.ndarray:
    """Квазислучайные точки на единичной сфере (Соболь + обратная нормальная функция)."""
    sampler = stats.qmc.Sobol(d=n, scramble=True, seed=seed)
    uniform = np.clip(sampler.random(samples), 1e-12, 1 - 1e-12)
    gauss = stats.norm.ppf(uniform)
    norms = np.linalg.norm(gauss, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return gauss / norms


def _real_objective(op: DiffOperator):
    def objective(x):
        norm = np.linalg.norm(x)
        if norm == 0:
            return 1e3
        return float(sigma_min(symbol_batch(op, (x / norm)[None, :])[0]))
    return objective


def is_elliptic(op: DiffOperator, samples: int = None, tol: float = None, seed: int = 0) -> EllipticityResult:
    """Минимизировать σ_min(𝔸[ξ]) по вещественной единичной сфере."""
    samples = samples or config.SPHERE_SAMPLES
    tol = config.ELLIPTIC_TOL if tol is None else tol
    samples = max(samples, 100)

    if op.n == 1:
        points = np.array([[1.0], [-1.0]])
    else:
        points = _sphere_points(op.n, samples, seed)
    values = sigma_min(symbol_batch(op, points))
    order = np.argsort(values, kind="stable")
    best_value, best_point = float(values[order[0]]), points[order[0]]

    if op.n > 1:
        objective = _real_objective(op)
        for idx in order[:5]:
            res = optimize.minimize(objective, points[idx], method="Nelder-Mead",
                                    options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
            if res.fun < best_value:
                best_value, best_point = float(res.fun), res.x / np.linalg.norm(res.x)

    verdict = EllipticVerdict.ELLIPTIC if best_value > tol else EllipticVerdict.NOT_ELLIPTIC
    logger.info(f"🔄 {op}: min σ_min на вещественной сфере = {best_value:.3e} → {verdict}")
    return EllipticityResult(verdict=str(verdict), minimum=best_value, argmin=tuple(float(x) for x in best_point))


# --- однородные ядра ---

def _row_normalized(matrix: sp.Matrix) -> sp.Matrix:
    """Делим каждую строку на первый ненулевой элемент: ядро не меняется, радикалы сокращаются."""
    rows = []
    for i in range(matrix.rows):
        row = matrix.row(i)
        pivot = next((x for x in row if x != 0), None)
        if pivot is None:
            continue
        rows.append([sp.radsimp(x / pivot) for x in row])
    if not rows:
        return sp.zeros(0, matrix.cols)
    return sp.Matrix(rows)


def coefficient_matrix(op: DiffOperator, degree: int) -> sp.Matrix:
    """Матрица 𝔸: 𝒫_ℓ^h(V) → 𝒫_{ℓ−k}^h(W) в мономиальных координатах."""
    columns = polynomial_basis(op.n, op.dim_v, degree, homogeneous=True)
    if degree < op.k:
        return sp.zeros(0, len(columns))
    rows = polynomial_basis(op.n, op.dim_w, degree - op.k, homogeneous=True)
    position = {item: idx for idx, item in enumerate(rows)}
    matrix = sp.zeros(len(rows), len(columns))
    for col, (beta, j) in enumerate(columns):
        for alpha, mat in op.terms:
            if not alpha.divides(beta):
                continue
            gamma = beta.minus(alpha)
            factor = beta.falling(alpha)
            for i in range(op.dim_w):
                if mat[i, j] != 0:
                    matrix[position[(gamma, i)], col] += factor * mat[i, j]
    return matrix


def kernel_homogeneous(op: DiffOperator, degree: int) -> list:
    """Точный базис Z_ℓ = ker(𝔸) ∩ 𝒫_ℓ^h(ℝⁿ; V) в виде VPolynomial."""
    columns = polynomial_basis(op.n, op.dim_v, degree, homogeneous=True)
    if degree < op.k:
        return [VPolynomial.monomial(op.n, op.dim_v, alpha, j) for alpha, j in columns]
    matrix = _row_normalized(coefficient_matrix(op, degree))
    if matrix.rows == 0:
        vectors = [sp.eye(len(columns)).col(c) for c in range(len(columns))]
    else:
        vectors = matrix.nullspace()
    basis = []
    for vec in vectors:
        poly = VPolynomial.from_coordinates(op.n, op.dim_v, columns, list(vec))
        if apply_to_polynomial(op, poly).is_zero:
            basis.append(poly)
        else:
            logger.error(f"❌ Вектор ядра степени {degree} не аннулируется оператором {op}")
            raise ArithmeticError("Ядро вычислено неверно")
    return basis


# --- комплексные свидетели ---

@dataclass(frozen=True)
class ComplexWitness:
    xi: tuple             # комплексный ξ, нормирован: наибольшая компонента равна 1
    v: tuple              # комплексный v, нормирован так же
    residual: float       # ‖𝔸[ξ]v‖ / (|ξ|^k |v|), точное вычисление
    float_residual: float
    xi_exact: tuple = ()
    v_exact: tuple = ()

    def to_json(self) -> dict:
        return {
            "xi": [[float(z.real), float(z.imag)] for z in self.xi],
            "v": [[float(z.real), float(z.imag)] for z in self.v],
            "xi_exact": [str(z) for z in self.xi_exact],
            "v_exact": [str(z) for z in self.v_exact],
            "residual": float(self.residual),
            "float_residual": float(self.float_residual),
        }


def _complex_from_params(params: np.ndarray, n: int, pivot: int) -> np.ndarray:
    """2n−1 параметров → ξ ∈ ℂⁿ с вещественной опорной компонентой (фаза зафиксирована)."""
    re = params[:n]
    im = np.insert(params[n:], pivot, 0.0)
    xi = re + 1j * im
    norm = np.linalg.norm(xi)
    return xi / norm if norm > 0 else xi


def witness_restart(op: DiffOperator, seed: int, index: int) -> tuple:
    """Один рестарт Нелдера–Мида по комплексной сфере. Возвращает (σ_min, Re ξ, Im ξ)."""
    rng = np.random.default_rng([seed, index])
    start = rng.normal(size=op.n) + 1j * rng.normal(size=op.n)
    pivot = int(np.argmax(np.abs(start)))
    start = start * np.exp(-1j * np.angle(start[pivot]))
    x0 = np.concatenate([start.real, np.delete(start.imag, pivot)])

    def objective(params):
        xi = _complex_from_params(params, op.n, pivot)
        return float(sigma_min(symbol_batch(op, xi[None, :])[0]))

    res = optimize.minimize(objective, x0, method="Nelder-Mead",
                            options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000, "adaptive": True})
    xi = _complex_from_params(res.x, op.n, pivot)
    return float(res.fun), [float(x) for x in xi.real], [float(x) for x in xi.imag]


def merge_restarts(results: list) -> tuple:
    """Детерминированное слияние: наименьшая невязка, при равенстве: лексикографический ξ."""
    best = min(results, key=lambda item: (item[0], tuple(item[1]) + tuple(item[2])))
    value, re, im = best
    return value, np.array(re) + 1j * np.array(im)


def local_restarts(op: DiffOperator, restarts: int, seed: int) -> list:
    return [witness_restart(op, seed, index) for index in range(restarts)]


def complex_symbol_infimum(op: DiffOperator, restarts: int = None, seed: int = 0, runner=None) -> tuple:
    """inf σ_min(𝔸[ξ]) по комплексной единичной сфере (приближённо). runner(op, restarts, seed) → рестарты."""
    restarts = max(1, restarts or config.WITNESS_RESTARTS)
    results = (runner or local_restarts)(op, restarts, seed)
    return merge_restarts(results)


def _null_vector(matrix: np.ndarray) -> np.ndarray:
    _, _, vh = np.linalg.svd(matrix)
    return vh[-1].conj()


def _polish(op: DiffOperator, xi: np.ndarray, v: np.ndarray) -> tuple:
    """Шаг Ньютона (least_squares) для системы 𝔸[ξ]v = 0, |ξ| = |v| = 1."""
    n, dv = op.n, op.dim_v

    def unpack(x):
        z = x[:n] + 1j * x[n:2 * n]
        w = x[2 * n:2 * n + dv] + 1j * x[2 * n + dv:]
        return z, w

    def residuals(x):
        z, w = unpack(x)
        image = symbol_batch(op, z[None, :])[0] @ w
        return np.concatenate([
            image.real, image.imag,
            [np.vdot(z, z).real - 1.0, np.vdot(w, w).real - 1.0],
        ])

    x0 = np.concatenate([xi.real, xi.imag, v.real, v.imag])
    res = optimize.least_squares(residuals, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    return unpack(res.x)


def _unit_pivot(vector: np.ndarray) -> np.ndarray:
    pivot = int(np.argmax(np.abs(vector)))
    return vector / vector[pivot]


def _rationalize(vector: np.ndarray) -> tuple:
    return tuple(
        sp.nsimplify(float(z.real), tolerance=1e-9, rational=True)
        + sp.I * sp.nsimplify(float(z.imag), tolerance=1e-9, rational=True)
        for z in vector
    )


def certify_witness(op: DiffOperator, xi: np.ndarray, v: np.ndarray) -> ComplexWitness:
    """Точная проверка: рационализируем ξ, v и вычисляем 𝔸[ξ]v в sympy."""
    xi = _unit_pivot(np.asarray(xi, dtype=complex))
    v = _unit_pivot(np.asarray(v, dtype=complex))
    xi_q, v_q = _rationalize(xi), _rationalize(v)
    image = symbol_exact(op, xi_q) * sp.Matrix(v_q)
    num = sp.sqrt(sum(sp.Abs(sp.expand(c)) ** 2 for c in image))
    xi_norm = sp.sqrt(sum(sp.Abs(c) ** 2 for c in xi_q))
    v_norm = sp.sqrt(sum(sp.Abs(c) ** 2 for c in v_q))
    residual = float(sp.N(num / (xi_norm ** op.k * v_norm), 30))

    float_image = symbol_batch(op, xi[None, :])[0] @ v
    float_residual = float(np.linalg.norm(float_image) / (np.linalg.norm(xi) ** op.k * np.linalg.norm(v)))
    return ComplexWitness(
        xi=tuple(complex(sp.N(c)) for c in xi_q),
        v=tuple(complex(sp.N(c)) for c in v_q),
        residual=residual,
        float_residual=float_residual,
        xi_exact=xi_q,
        v_exact=v_q,
    )


def complex_witness_search(op: DiffOperator, restarts: int = None, tol: float = None, seed: int = 0,
                           runner=None) -> Optional[ComplexWitness]:
    """Поиск ξ ∈ ℂⁿ∖{0}, v ≠ 0 с 𝔸[ξ]v = 0. None, если свидетель не сертифицирован."""
    tol = config.WITNESS_TOL if tol is None else tol
    value, xi = complex_symbol_infimum(op, restarts, seed, runner=runner)
    logger.info(f"🔄 {op}: inf σ_min на комплексной сфере ≈ {value:.3e}")
    if value > max(1e-3, 1e3 * tol):
        return None

    v = _null_vector(symbol_batch(op, xi[None, :])[0])
    xi, v = _polish(op, xi, v)
    witness = certify_witness(op, xi, v)
    if witness.residual <= tol:
        logger.info(f"✅ {op}: свидетель ξ={witness.xi_exact}, v={witness.v_exact}, невязка {witness.residual:.2e}")
        return witness
    logger.warning(f"⚠️ {op}: свидетель не прошёл точную проверку (невязка {witness.residual:.2e})")
    return None


# --- ℂ-эллиптичность ---

@dataclass
class NullspaceProfile:
    per_degree: list = field(default_factory=list)   # [(ℓ, [VPolynomial, ...]), ...]
    verdict: str = CVerdict.UNDECIDED
    deg_p: Optional[int] = None
    witness: Optional[ComplexWitness] = None
    infimum: Optional[float] = None

    @property
    def kernel_dims(self) -> list:
        return [len(basis) for _, basis in self.per_degree]

    @property
    def kernel_basis(self) -> list:
        """Базис ker(𝔸) ∩ 𝒫_{deg_p − 1}, по возрастанию степени."""
        return [poly for _, basis in self.per_degree for poly in basis]

    def verdict_block(self) -> dict:
        return {
            "verdict": str(self.verdict),
            "deg_p": self.deg_p,
            "kernel_dims": self.kernel_dims,
            "witness": self.witness.to_json() if self.witness else None,
        }

    def to_json(self) -> dict:
        data = self.verdict_block()
        data["per_degree"] = [
            {"degree": degree, "basis": [poly.to_json() for poly in basis]} for degree, basis in self.per_degree
        ]
        data["infimum"] = self.infimum
        return data

    @classmethod
    def from_json(cls, data: dict) -> "NullspaceProfile":
        per_degree = [
            (item["degree"], [VPolynomial.from_json(poly) for poly in item["basis"]]) for item in data["per_degree"]
        ]
        return cls(per_degree=per_degree, verdict=data["verdict"], deg_p=data["deg_p"], infimum=data.get("infimum"))


def c_ellipticity(op: DiffOperator, max_degree: int = None, restarts: int = None, tol: float = None,
                  seed: int = 0, runner=None) -> NullspaceProfile:
    """
    Z_ℓ для ℓ = 0, 1, …; первое ℓ₀ с Z_ℓ₀ = {0} даёт ℂ-эллиптичность и deg_𝒫 = ℓ₀.
    ∂_j отображает Z_{ℓ+1} в Z_ℓ и совместно инъективны, поэтому после нуля ядра
    дальше нулевые. Иначе ищем комплексного свидетеля.
    """
    max_degree = config.MAX_DEGREE if max_degree is None else max_degree
    max_degree = max(max_degree, op.k)
    profile = NullspaceProfile()
    for degree in range(max_degree + 1):
        basis = kernel_homogeneous(op, degree)
        profile.per_degree.append((degree, basis))
        logger.debug("dim Z_%s = %s", degree, len(basis))
        if not basis:
            profile.verdict = CVerdict.C_ELLIPTIC
            profile.deg_p = degree
            logger.info(f"✅ {op}: ℂ-эллиптичен, deg_𝒫 = {degree}, dim ker = {sum(profile.kernel_dims)}")
            return profile

    witness = complex_witness_search(op, restarts=restarts, tol=tol, seed=seed, runner=runner)
    if witness is not None:
        profile.verdict = CVerdict.NOT_C_ELLIPTIC
        profile.witness = witness
    else:
        profile.verdict = CVerdict.UNDECIDED
        logger.warning(f"⚠️ {op}: ядра не обнулились до степени {max_degree}, свидетель не найден")
    return profile


# --- условие сокращения ---

@dataclass(frozen=True)
class ImageIntersection:
    dimension: int
    basis: np.ndarray
    samples: list


def _intersect(u: np.ndarray, w: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Пересечение подпространств с ортонормированными базисами-столбцами u, w."""
    if u.shape[1] == 0 or w.shape[1] == 0:
        return np.zeros((u.shape[0], 0))
    coupling = linalg.null_space(np.hstack([u, -w]), rcond=tol)
    if coupling.shape[1] == 0:
        return np.zeros((u.shape[0], 0))
    return linalg.orth(u @ coupling[: u.shape[1]], rcond=tol)


def cancellation_image_intersection(op: DiffOperator, samples: int = 64, seed: int = 0,
                                    window: int = 10) -> ImageIntersection:
    """∩_ξ 𝔸[ξ](V) по случайным вещественным ξ до стабилизации размерности на window шагах."""
    check = is_elliptic(op, samples=128, seed=seed)
    if check.verdict != EllipticVerdict.ELLIPTIC:
        raise NotElliptic(f"{op} не эллиптичен: min σ_min = {check.minimum:.3e}")
    samples = max(samples, op.n + 1)
    rng = np.random.default_rng(seed)
    used = []
    subspace = None
    stable = 0
    for _ in range(samples):
        xi = rng.normal(size=op.n)
        xi = xi / np.linalg.norm(xi)
        used.append([float(x) for x in xi])
        image = linalg.orth(symbol_batch(op, xi[None, :])[0].real, rcond=1e-10)
        if subspace is None:
            subspace = image
            continue
        updated = _intersect(subspace, image)
        stable = stable + 1 if updated.shape[1] == subspace.shape[1] else 0
        subspace = updated
        if stable >= window and len(used) >= op.n + 1:
            break
    logger.info(f"🔄 {op}: dim ∩ 𝔸[ξ](V) = {subspace.shape[1]} после {len(used)} выборок")
    return ImageIntersection(dimension=int(subspace.shape[1]), basis=subspace, samples=used)
