"""
Оценки констант в неравенствах типа Корна на сеточных областях.

C(h) = max ‖D^k u‖² / (diam^{−2k}‖u‖² + ‖𝔸u‖²) по сеточным полям,
то есть наибольшее обобщённое собственное число пучка (K, B). До DENSE_LIMIT
неизвестных решается плотной симметричной задачей, дальше Ланцошем
(ARPACK, режим 2) с внутренними решениями B x = b методом сопряжённых
градиентов. Степенной метод со сдвигом оставлен для перекрёстной проверки.
"""
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import sympy as sp
from scipy import ndimage, sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from analysis.services.maximal import Weight
from core.exceptions import (
    BallOutsideGrid, DimensionMismatch, MalformedSpec, NotCElliptic, SingularPencil, ZeroDenominator,
)
from core.models import CVerdict
from core.services.ellipticity import NullspaceProfile
from core.services.grid import GridDomain, GridFunction, apply_operator, gradient_tensor
from core.services.operators import gradient
from core.services.poly import DiffOperator, MultiIndex, VPolynomial, apply_to_polynomial
from core.services.projection import BallSpec, ProjectionOperator, apply_projection, build_projection
from ellikorn import config
from geometry.services.domains import make_domain
from korn.services.fd import AssembledOperator, assemble_fd, dirichlet_dofs
from korn.services.norms import NormSpec

logger = logging.getLogger(__name__)

EXACT = "exact"
EXACT_TOL = 1e-9
CG_RTOL = 1e-12


# --- пучок и собственные числа ---

@dataclass(frozen=True, eq=False)
class Pencil:
    numerator: AssembledOperator      # D^k
    operator: AssembledOperator       # 𝔸
    stiffness: sparse.csr_matrix
    operator_gram: sparse.csr_matrix
    volume: float

    def denominator(self, mass_factor: float) -> sparse.csr_matrix:
        size = self.stiffness.shape[0]
        return (self.operator_gram + mass_factor * self.volume * sparse.identity(size, format="csr")).tocsr()


def assemble_pencil(op: DiffOperator, domain: GridDomain, dirichlet: bool = False) -> Pencil:
    numerator = assemble_fd(gradient(op.n, op.k, op.dim_v), domain, dirichlet=dirichlet)
    operator = assemble_fd(op, domain, dirichlet=dirichlet)
    volume = domain.cell_volume
    stiffness = (numerator.matrix.T @ numerator.matrix).tocsr() * volume
    operator_gram = (operator.matrix.T @ operator.matrix).tocsr() * volume
    return Pencil(numerator=numerator, operator=operator, stiffness=stiffness, operator_gram=operator_gram,
                  volume=volume)


def _cg_inverse(matrix: sparse.csr_matrix) -> LinearOperator:
    def solve(rhs):
        x, info = cg(matrix, rhs, rtol=CG_RTOL, maxiter=20 * matrix.shape[0])
        if info > 0:
            logger.info(f"⚠️ CG не сошёлся за {info} итераций")
        return x

    return LinearOperator(matrix.shape, matvec=solve, dtype=float)


def dense_top(stiffness: sparse.csr_matrix, denominator: sparse.csr_matrix) -> tuple:
    size = stiffness.shape[0]
    try:
        values, vectors = scipy.linalg.eigh(stiffness.toarray(), denominator.toarray(),
                                            subset_by_index=[size - 1, size - 1])
    except np.linalg.LinAlgError as e:
        raise SingularPencil(f"Знаменатель пучка не положительно определён: {e}")
    return float(values[0]), vectors[:, 0]


def lanczos_top(stiffness: sparse.csr_matrix, denominator: sparse.csr_matrix, tol: float = 1e-12,
                seed: int = 0) -> tuple:
    start = np.random.default_rng(seed).standard_normal(stiffness.shape[0])
    values, vectors = eigsh(stiffness, k=1, M=denominator, Minv=_cg_inverse(denominator), which="LA",
                            v0=start, tol=tol)
    return float(values[0]), vectors[:, 0]


def power_iteration(stiffness: sparse.csr_matrix, denominator: sparse.csr_matrix, shift: float = 0.0,
                    tol: float = 1e-10, maxiter: int = 20000, seed: int = 0) -> tuple:
    """x ← B⁻¹(K − σB)x с нормировкой в B-норме; (λ, x, итерации)."""
    inverse = _cg_inverse(denominator)
    x = np.random.default_rng(seed).standard_normal(stiffness.shape[0])
    value = 0.0
    for iteration in range(1, maxiter + 1):
        y = inverse @ (stiffness @ x) - shift * x
        norm = float(y @ (denominator @ y))
        if norm <= 0:
            raise SingularPencil("B-норма итерации неположительна")
        x = y / np.sqrt(norm)
        updated = float(x @ (stiffness @ x))
        if abs(updated - value) <= tol * abs(updated):
            return updated, x, iteration
        value = updated
    logger.info(f"⚠️ Степенной метод не сошёлся за {maxiter} итераций")
    return value, x, maxiter


def top_eigenpair(stiffness, denominator, method: str = "auto", seed: int = 0) -> tuple:
    if method == "auto":
        method = "dense" if stiffness.shape[0] <= config.DENSE_LIMIT else "lanczos"
    if method == "dense":
        value, vector = dense_top(stiffness, denominator)
    elif method == "lanczos":
        value, vector = lanczos_top(stiffness, denominator, seed=seed)
    elif method == "power":
        value, vector, _ = power_iteration(stiffness, denominator, seed=seed)
    else:
        raise MalformedSpec(f"Неизвестный метод собственных чисел: {method}")
    return value, vector, method


# --- константа Корна при p = 2 ---

def _l2_squared(values: np.ndarray, where: np.ndarray, volume: float) -> float:
    return float((values[:, where] ** 2).sum() * volume)


def korn_quotient(op: DiffOperator, u: GridFunction, mass_factor: float = None) -> float:
    """‖D^k u‖² / (c‖u‖² + ‖𝔸u‖²) теми же разностями, что и в пучке; c = diam^{−2k} по умолчанию."""
    domain = u.domain
    mass_factor = domain.diam ** (-2 * op.k) if mass_factor is None else mass_factor
    grad, grad_valid = gradient_tensor(u, op.k)
    image, valid = apply_operator(op, u)
    numerator = _l2_squared(grad, grad_valid, domain.cell_volume)
    denominator = mass_factor * _l2_squared(u.values, domain.mask, domain.cell_volume) \
        + _l2_squared(image, valid, domain.cell_volume)
    if denominator == 0:
        raise ZeroDenominator("Нулевое поле в отношении Корна")
    return numerator / denominator


@dataclass
class KornConstant:
    h: float
    C: float
    C_unscaled: float
    witness: GridFunction = field(repr=False)
    witness_quotient: float
    method: str
    dofs: int
    diam: float
    dirichlet: bool = False

    def witness_norms(self, op: DiffOperator) -> dict:
        volume = self.witness.domain.cell_volume
        grad, grad_valid = gradient_tensor(self.witness, op.k)
        image, valid = apply_operator(op, self.witness)
        return {
            "u": float(np.sqrt(_l2_squared(self.witness.values, self.witness.domain.mask, volume))),
            "grad_k": float(np.sqrt(_l2_squared(grad, grad_valid, volume))),
            "op": float(np.sqrt(_l2_squared(image, valid, volume))),
        }

    def to_row(self, op: DiffOperator) -> dict:
        return {
            "h": self.h,
            "C": self.C,
            "C_unscaled": self.C_unscaled,
            "witness_quotient": self.witness_quotient,
            "witness_norms": self.witness_norms(op),
            "method": self.method,
            "dofs": self.dofs,
            "diam": self.diam,
            "dirichlet": self.dirichlet,
        }


def korn_constant_p2(op: DiffOperator, domain, h: float = None, dirichlet: bool = False, method: str = "auto",
                     seed: int = 0, params: dict = None) -> KornConstant:
    """Наибольшее отношение Рэлея и поле-свидетель; domain: GridDomain или имя типа области."""
    if isinstance(domain, str):
        domain = make_domain(domain, params, h=h)
    if op.n != domain.n:
        raise DimensionMismatch(f"Оператор в ℝ^{op.n}, область в ℝ^{domain.n}")
    logger.info(f"🔄 Константа Корна {op} на {domain.kind}, h={domain.h}")
    pencil = assemble_pencil(op, domain, dirichlet=dirichlet)
    diam = domain.diam
    scaled = diam ** (-2 * op.k)

    value, vector, used = top_eigenpair(pencil.stiffness, pencil.denominator(scaled), method, seed)
    unscaled, _, _ = top_eigenpair(pencil.stiffness, pencil.denominator(1.0), method, seed)
    if value < 0 or unscaled < 0:
        raise SingularPencil(f"Отрицательное собственное число пучка: {value}, {unscaled}")
    witness = pencil.numerator.to_grid(vector)
    quotient = korn_quotient(op, witness, scaled)
    if abs(quotient - value) > 1e-6 * max(value, 1e-300):
        logger.info(f"⚠️ Свидетель даёт {quotient}, собственное число {value}")
    logger.info(f"✅ C(h={domain.h}) = {value:.6g} ({used}, {pencil.stiffness.shape[0]} неизвестных)")
    return KornConstant(h=domain.h, C=value, C_unscaled=unscaled, witness=witness, witness_quotient=quotient,
                        method=used, dofs=pencil.stiffness.shape[0], diam=diam, dirichlet=dirichlet)


def eigensolver_agreement(op: DiffOperator, domain: GridDomain, dirichlet: bool = False) -> dict:
    """Плотный путь против Ланцоша на одном пучке."""
    pencil = assemble_pencil(op, domain, dirichlet=dirichlet)
    denominator = pencil.denominator(domain.diam ** (-2 * op.k))
    dense, _ = dense_top(pencil.stiffness, denominator)
    iterative, _ = lanczos_top(pencil.stiffness, denominator)
    return {"dense": dense, "iterative": iterative, "relative": abs(dense - iterative) / max(abs(dense), 1e-300)}


def nested_monotonicity(op: DiffOperator, domain: GridDomain) -> dict:
    """Поля с нулевым граничным слоем: подсемейство всех полей: C_dirichlet ≤ C."""
    restricted = korn_constant_p2(op, domain, dirichlet=True).C
    full = korn_constant_p2(op, domain).C
    return {"restricted": restricted, "full": full, "monotone": restricted <= full * (1 + 1e-9)}


# --- голоморфные свидетели ---

def holomorphic_field(m: int, center: Sequence[float] = (0.0, 0.0)) -> VPolynomial:
    """u_m = (Re z^m, Im z^m), z = (x − c₁) + i(y − c₂), точные коэффициенты."""
    x, y = sp.symbols("x y", real=True)
    cx, cy = (sp.nsimplify(c, rational=True) for c in center)
    re, im = sp.expand((x - cx + sp.I * (y - cy)) ** m).as_real_imag()
    coeffs: dict = {}
    for part, component in ((re, 0), (im, 1)):
        for (a, b), c in sp.Poly(part, x, y).terms():
            vec = list(coeffs.get((a, b), (sp.Integer(0), sp.Integer(0))))
            vec[component] = c
            coeffs[(a, b)] = tuple(vec)
    return VPolynomial.build(2, 2, {MultiIndex(alpha): vec for alpha, vec in coeffs.items()})


def holomorphic_witnesses(op: DiffOperator, domain: GridDomain, ms: Sequence[int] = range(2, 9)) -> list:
    """Таблица (m, отношение Рэлея, невязка 𝔸u_m) для u_m = (Re z^m, Im z^m)."""
    if op.n != 2 or op.dim_v != 2:
        raise DimensionMismatch(f"Голоморфные поля заданы для ℝ² → ℝ², получен {op}")
    lo, hi = domain.bbox
    center = tuple(float(domain.origin[d] + (lo[d] + hi[d]) * domain.h / 2) for d in range(2))
    rows = []
    for m in ms:
        poly = holomorphic_field(m, center)
        image = apply_to_polynomial(op, poly)
        residual = float(np.abs(image.evaluate(domain.points)).max(initial=0.0))
        u = GridFunction.from_polynomial(domain, poly)
        rows.append({"m": m, "quotient": korn_quotient(op, u), "op_residual": residual,
                     "op_exact_zero": image.is_zero})
    return rows


# --- семейства полей и выборочные константы ---

def central_ball(domain: GridDomain, fraction: float = 0.5) -> BallSpec:
    """Шар в самой глубокой ячейке области, радиус: доля расстояния до границы."""
    padded = np.pad(domain.mask, 1)
    distance = ndimage.distance_transform_edt(padded)[(slice(1, -1),) * domain.n]
    deepest = np.unravel_index(int(np.argmax(distance)), distance.shape)
    center = tuple(float(domain.origin[d] + (deepest[d] + 0.5) * domain.h) for d in range(domain.n))
    radius = fraction * (float(distance[deepest]) - 1.0) * domain.h
    if radius <= 0:
        raise BallOutsideGrid(f"Область {domain.kind} слишком тонкая для центрального шара")
    return BallSpec(center, radius)


def _smooth_field(domain: GridDomain, dim: int, rng: np.random.Generator, modes: int = 4) -> GridFunction:
    lo, hi = domain.bbox
    length = max(hi[d] - lo[d] for d in range(domain.n)) * domain.h
    waves = rng.integers(-3, 4, size=(dim, modes, domain.n))
    phases = rng.uniform(0, 2 * np.pi, size=(dim, modes))
    amplitudes = rng.standard_normal((dim, modes))

    def sample(points):
        arg = 2 * np.pi * np.einsum("pn,cmn->pcm", points, waves) / length + phases[None]
        return (amplitudes[None] * np.cos(arg)).sum(axis=2)

    return GridFunction.from_callable(domain, sample)


def _kernel_field(domain: GridDomain, basis: list, rng: np.random.Generator) -> GridFunction:
    coeffs = rng.standard_normal(len(basis))
    values = sum(c * poly.evaluate(domain.points) for c, poly in zip(coeffs, basis))
    result = np.zeros((basis[0].dim,) + domain.shape)
    result[:, domain.mask] = values.T
    return GridFunction(domain, result)


def field_family(op: DiffOperator, domain: GridDomain, profile: NullspaceProfile, count: int = 30, seed: int = 0,
                 noise: float = 1e-3) -> list:
    """[(вид, поле)]: гладкие поля, ядро + шум, ядро × срезка."""
    rng = np.random.default_rng(seed)
    basis = profile.kernel_basis
    ball = central_ball(domain, fraction=1.0)
    cutoff_center = np.asarray(ball.center)
    family = []
    for index in range(count):
        kind = ("smooth", "kernel_noise", "kernel_cutoff")[index % 3]
        if kind == "smooth" or not basis:
            family.append(("smooth", _smooth_field(domain, op.dim_v, rng)))
        elif kind == "kernel_noise":
            family.append((kind, _kernel_field(domain, basis, rng) + _smooth_field(domain, op.dim_v, rng).scale(noise)))
        else:
            r = np.linalg.norm(domain.centers - cutoff_center, axis=-1) / ball.radius
            cutoff = np.clip(1 - r ** 2, 0.0, None) ** (op.k + 2)
            field_ = _kernel_field(domain, basis, rng)
            family.append((kind, GridFunction(domain, field_.values * cutoff[None])))
    return family


def _densities(op: DiffOperator, P: ProjectionOperator, u: GridFunction, ell: int = None) -> tuple:
    """(|D^ℓ(u − Πu)|, где вычислимо) и (|𝔸u|, где вычислимо)."""
    ell = op.k if ell is None else ell
    residual = u - GridFunction.from_polynomial(u.domain, apply_projection(P, u))
    grad, grad_valid = gradient_tensor(residual, ell)
    image, valid = apply_operator(op, u)
    return (np.sqrt((grad ** 2).sum(axis=0)), grad_valid), (np.sqrt((image ** 2).sum(axis=0)), valid)


def _ratio(numerator: float, denominator: float, scale: float):
    if denominator <= EXACT_TOL * scale:
        return EXACT if numerator <= EXACT_TOL * scale else float("inf")
    return numerator / denominator


def korn_constant_sampled(op: DiffOperator, domain: GridDomain, profile: NullspaceProfile, norm: NormSpec = None,
                          weight: Weight = None, family: list = None, count: int = 30, seed: int = 0,
                          projection: ProjectionOperator = None) -> dict:
    """max по семейству ‖D^k(u − Πu)‖_X / ‖𝔸u‖_X."""
    if profile.verdict != CVerdict.C_ELLIPTIC:
        raise NotCElliptic(f"{op}: проекция на ядро определена только для ℂ-эллиптических операторов")
    norm = norm or NormSpec()
    weight = weight or Weight.unit()
    w = weight.values(domain)
    volume = domain.cell_volume
    P = projection or build_projection(op, central_ball(domain), profile)
    family = family if family is not None else field_family(op, domain, profile, count=count, seed=seed)
    logger.info(f"🔄 Выборочная константа Корна {op}: {len(family)} полей, норма {norm.describe()}")

    rows = []
    for index, (kind, u) in enumerate(family):
        (top, top_valid), (bottom, valid) = _densities(op, P, u)
        numerator = norm.norm(top[top_valid], volume, w[top_valid])
        denominator = norm.norm(bottom[valid], volume, w[valid])
        scale = max(u.lp_norm(2), 1e-300)
        row = {"index": index, "kind": kind, "ratio": _ratio(numerator, denominator, scale),
               "numerator": numerator, "denominator": denominator}
        if norm.kind == "orlicz":
            modular_bottom = norm.orlicz.modular(bottom[valid], volume)
            row["modular_ratio"] = (norm.orlicz.modular(top[top_valid], volume) / modular_bottom
                                    if modular_bottom > 0 else float("inf"))
        rows.append(row)

    finite = [row for row in rows if isinstance(row["ratio"], float)]
    best = max(finite, key=lambda row: row["ratio"]) if finite else None
    result = {
        "C": best["ratio"] if best else EXACT,
        "argmax": best["index"] if best else None,
        "norm": norm.describe(),
        "weight": weight.describe(),
        "ratios": rows,
        "seed": seed,
    }
    logger.info(f"✅ Выборочная константа: {result['C']}")
    return result


# --- Пуанкаре и наилучшее приближение ---

def _best_kernel_approximation(g: np.ndarray, columns: np.ndarray, w: np.ndarray, p: float, volume: float,
                               competitor: float) -> float:
    """inf_c (Σ w |g − Σ c_i B_i|^p hⁿ)^{1/p}; g: (comp, N), columns: (K, comp, N)."""
    def objective(c):
        rest = g - np.tensordot(c, columns, axes=(0, 0)) if len(c) else g
        return float(np.sum(w * np.sqrt((rest ** 2).sum(axis=0)) ** p) * volume)

    if columns.shape[0] == 0:
        return min(objective(np.zeros(0)) ** (1 / p), competitor)
    root = np.sqrt(w * volume)
    design = (columns * root[None, None]).reshape(columns.shape[0], -1).T
    start, *_ = np.linalg.lstsq(design, (g * root[None]).ravel(), rcond=None)
    value = objective(start)
    if p != 2:
        value = min(value, float(minimize(objective, start, method="BFGS").fun))
    return min(value ** (1 / p), competitor)


def poincare_and_bestapprox(op: DiffOperator, P: ProjectionOperator, domain: GridDomain, u: GridFunction, ell: int,
                            p: float = 2.0, weight: Weight = None) -> dict:
    """‖D^ℓ(u−Πu)‖ / (diam^{k−ℓ}‖𝔸u‖) и ‖D^ℓ(u−Πu)‖ / inf_{q ∈ ker 𝔸} ‖D^ℓ(u−q)‖; 0/0 → exact."""
    if not 0 <= ell <= op.k:
        raise MalformedSpec(f"ℓ должно лежать в 0..{op.k}: {ell}")
    w = (weight or Weight.unit()).values(domain)
    volume = domain.cell_volume
    (top, top_valid), (bottom, valid) = _densities(op, P, u, ell)
    numerator = float((np.sum(w[top_valid] * top[top_valid] ** p) * volume) ** (1 / p))
    operator_norm = float((np.sum(w[valid] * bottom[valid] ** p) * volume) ** (1 / p))

    grad_u, _ = gradient_tensor(u, ell)
    basis = P.kernel_basis
    columns = np.array([gradient_tensor(GridFunction.from_polynomial(domain, q), ell)[0][:, top_valid]
                        for q in basis]).reshape(len(basis), -1, int(top_valid.sum()))
    best = _best_kernel_approximation(grad_u[:, top_valid], columns, w[top_valid], p, volume, numerator)

    scale = max(u.lp_norm(p), 1e-300)
    return {
        "ell": ell,
        "p": p,
        "poincare_ratio": _ratio(numerator, domain.diam ** (op.k - ell) * operator_norm, scale),
        "bestapprox_ratio": _ratio(numerator, best, scale),
        "numerator": numerator,
    }


# --- интерполяционное неравенство ---

def interpolation_check(op: DiffOperator, u: GridFunction, ell: int) -> dict:
    """‖D^ℓu‖₁ / (‖u‖₁^{1−ℓ/k} ‖𝔸u‖₁^{ℓ/k}) для u, обращающейся в нуль у края."""
    if not 1 <= ell <= op.k - 1:
        raise MalformedSpec(f"ℓ должно лежать в 1..{op.k - 1}: {ell}")
    domain = u.domain
    layer = domain.mask & ~dirichlet_dofs(domain, layer=op.k)
    if np.abs(u.values[:, layer]).max(initial=0.0) > 0:
        raise MalformedSpec("Функция должна обращаться в нуль у края области")
    volume = domain.cell_volume
    grad, grad_valid = gradient_tensor(u, ell)
    image, valid = apply_operator(op, u)
    middle = float(np.sqrt((grad ** 2).sum(axis=0))[grad_valid].sum() * volume)
    low = u.lp_norm(1)
    high = float(np.sqrt((image ** 2).sum(axis=0))[valid].sum() * volume)
    if low == 0 or high == 0:
        raise ZeroDenominator(f"Знаменатель интерполяционного отношения равен нулю: ‖u‖₁={low}, ‖𝔸u‖₁={high}")
    theta = ell / op.k
    return {"ell": ell, "ratio": middle / (low ** (1 - theta) * high ** theta), "d_ell": middle, "u": low,
            "op": high}
