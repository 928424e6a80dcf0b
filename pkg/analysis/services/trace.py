"""
Эксперименты со следом на полупространстве и семейство раздувания для
неэллиптических операторов.

Пробные функции задаются выражениями sympy, поэтому 𝔸u вычисляется точно
и затем интегрируется по центрам ячеек полосы [0, L) × [0, depth],
периодической по x. След u(·, 0) берётся из выражения на прямой y = 0.
"""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from numpy.polynomial import Polynomial
from scipy import integrate

from analysis.services.besov import besov_norm_osc, trace_besov_params
from core.exceptions import MalformedSpec, NotCElliptic, OrderTooLow, WitnessInvalid
from core.models import CVerdict
from core.services.ellipticity import NullspaceProfile, c_ellipticity
from core.services.grid import GridDomain, GridFunction
from core.services.poly import DiffOperator, symbol_batch, symbol_exact

logger = logging.getLogger(__name__)

X, Y = sp.symbols("x y", real=True)
EXACT_TOL = 1e-12


def bump(t, power: int = 4):
    """(1 − t²)^power на (−1, 1), ноль вне."""
    return sp.Piecewise(((1 - t ** 2) ** power, sp.Abs(t) < 1), (0, True))


@dataclass(frozen=True)
class TestFunction:
    """u = Σ_i expr_i · e_i в полосе; family: метка подсемейства."""
    ident: str
    components: tuple
    family: str = "bumps"
    degree: int = 0

    def shifted(self, dx: float) -> "TestFunction":
        components = tuple(sp.sympify(c).subs(X, X - sp.nsimplify(dx)) for c in self.components)
        return TestFunction(f"{self.ident}+{dx}", components, self.family, self.degree)

    @cached_property
    def _values(self) -> Callable:
        return sp.lambdify((X, Y), list(self.components), "numpy")

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        values = self._values(x, y)
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), np.shape(x)) for v in values])

    def apply(self, op: DiffOperator) -> Callable:
        """Точное 𝔸u как функция (x, y)."""
        image = [sp.Integer(0)] * op.dim_w
        for alpha, mat in op.terms:
            for i in range(op.dim_w):
                for j, component in enumerate(self.components):
                    if mat[i, j] != 0:
                        image[i] += mat[i, j] * sp.diff(component, X, alpha[0], Y, alpha[1])
        return sp.lambdify((X, Y), image, "numpy")


def strip_domain(cells: int, width: float = 1.0, depth: float = 1.0) -> GridDomain:
    h = width / cells
    rows = int(round(depth / h))
    return GridDomain(n=2, h=h, mask=np.ones((cells, rows), dtype=bool), origin=(0.0, 0.0), kind="halfspace_strip",
                      params={"depth": depth, "width": width}, periodic=(True, False))


def bump_family(dim: int = 1, width: float = 1.0, count: int = 12) -> list:
    """Шапочки × полиномы разных ширин с носителем, задевающим ∂ℍ."""
    members = []
    widths = [0.12, 0.18, 0.25, 0.32]
    polys = [sp.Integer(1), 1 + 2 * X - Y, (X - sp.Rational(1, 2)) ** 2 + Y]
    for idx in range(count):
        w = sp.nsimplify(widths[idx % len(widths)])
        poly = polys[(idx // len(widths)) % len(polys)]
        center = sp.Rational(1, 2) * width
        expr = bump((X - center) / w) * bump(Y / w) * poly
        direction = idx % dim
        components = tuple(expr if i == direction else sp.Integer(0) for i in range(dim))
        members.append(TestFunction(f"bump{idx:02d}", components))
    return members


def harmonic_family(degrees: Sequence[int] = range(1, 8), width: float = 1.0, cutoff: float = 0.25) -> list:
    """χ(y)·e^{−2πdy/L}·cos(2πdx/L): гармонические внутри, срезка по y."""
    members = []
    for d in degrees:
        a = 2 * sp.pi * d / sp.nsimplify(width)
        c = sp.nsimplify(cutoff)
        # χ = 1 на [0, c], плавно до нуля к 2c
        s = (Y - c) / c
        chi = sp.Piecewise((1, Y <= c), (1 - s ** 4 * (35 - 84 * s + 70 * s ** 2 - 20 * s ** 3), Y < 2 * c), (0, True))
        members.append(TestFunction(f"harmonic{d}", (chi * sp.exp(-a * Y) * sp.cos(a * X),), family="harmonic",
                                    degree=d))
    return members


@dataclass
class TraceRatio:
    ident: str
    family: str
    numerator: float
    denominator: float
    ratio: float = None
    exact: bool = False
    richardson: float = 0.0

    def to_row(self) -> dict:
        return {"function_id": self.ident, "ratio": self.ratio, "numerator": self.numerator,
                "denominator": self.denominator}


def trace_ratio(op: DiffOperator, u: TestFunction, domain: GridDomain) -> TraceRatio:
    """‖u(·,0)‖_{Ḃ^{k−1}_{1,1}} / ‖𝔸u‖_{L¹(ℍ)}."""
    points = domain.centers
    image = u.apply(op)(points[..., 0], points[..., 1])
    image = np.stack([np.broadcast_to(np.asarray(v, dtype=float), domain.shape) for v in image])
    denominator = float(np.sqrt((image ** 2).sum(axis=0)).sum() * domain.cell_volume)

    boundary = GridDomain(n=1, h=domain.h, mask=np.ones(domain.shape[:1], dtype=bool), origin=(0.0,),
                          kind="boundary", periodic=(True,))
    x = boundary.centers[..., 0]
    trace = GridFunction(boundary, u.evaluate(x, np.zeros_like(x)))
    besov = besov_norm_osc(trace, trace_besov_params(op.k, boundary))
    numerator = besov.value

    scale = max(1.0, float(np.abs(trace.values).max(initial=0.0)))
    if numerator <= EXACT_TOL * scale and denominator <= EXACT_TOL * scale:
        return TraceRatio(u.ident, u.family, numerator, denominator, None, True, besov.richardson)
    ratio = numerator / denominator if denominator > 0 else float("inf")
    return TraceRatio(u.ident, u.family, numerator, denominator, ratio, False, besov.richardson)


def halfspace_trace_experiment(op: DiffOperator, family: Sequence[TestFunction], cells: int = 128,
                               profile: NullspaceProfile = None, depth: float = 1.0) -> list:
    """Отношения следа к ‖𝔸u‖₁ по семейству; без profile ℂ-эллиптичность проверяется здесь."""
    if op.k < 2:
        raise OrderTooLow(f"Нужен порядок k ≥ 2, у {op} k = {op.k}")
    if op.n != 2:
        raise MalformedSpec("Эксперимент со следом реализован для ℝ²")
    if profile is None:
        profile = c_ellipticity(op)
    if profile.verdict != CVerdict.C_ELLIPTIC:
        raise NotCElliptic(f"{op}: вердикт {profile.verdict}")
    domain = strip_domain(cells, depth=depth)
    logger.info(f"🔄 След для {op}: {len(family)} функций, {cells} ячеек по касательной")
    ratios = [trace_ratio(op, u, domain) for u in family]
    finite = [r.ratio for r in ratios if r.ratio is not None and np.isfinite(r.ratio)]
    if finite:
        logger.info(f"✅ Отношения {op}: min {min(finite):.4g}, max {max(finite):.4g}")
    return ratios


def translation_check(op: DiffOperator, u: TestFunction, shift: float, cells: int = 128) -> float:
    """|ratio(u(· − shift)) − ratio(u)| / ratio(u) на периодической полосе."""
    domain = strip_domain(cells)
    base = trace_ratio(op, u, domain)
    moved = trace_ratio(op, u.shifted(shift), domain)
    if base.exact and moved.exact:
        return 0.0
    return abs(moved.ratio - base.ratio) / base.ratio


def ratio_spread(ratios: Sequence[TraceRatio], family: str = None) -> float:
    values = [r.ratio for r in ratios if not r.exact and (family is None or r.family == family)]
    return max(values) / min(values) if values else 1.0


# --- семейство раздувания ---

@lru_cache(maxsize=None)
def _antiderivative(times: int, power: int = 4) -> Callable:
    """times-кратная первообразная χ(s) = (1 − s²)^power от −1, продолженная полиномом при s ≥ 1."""
    chi = Polynomial([1, 0, -1]) ** power
    primitive = chi
    for _ in range(times):
        primitive = primitive.integ(lbnd=-1)
    # при s ≥ 1 χ = 0, и первообразная: полином степени times − 1: её ряд Тейлора в s = 1
    tail = Polynomial([0.0])
    for m in range(times):
        tail = tail + primitive.deriv(m)(1.0) / factorial(m) * Polynomial([0, 1]) ** m

    def value(s):
        s = np.asarray(s, dtype=float)
        inner = primitive(np.clip(s, -1, 1))
        outer = tail(s - 1.0)
        return np.where(s <= -1, 0.0, np.where(s < 1, inner, outer))

    return value


@lru_cache(maxsize=None)
def _bump_derivative(power: int = 4) -> Callable:
    """χ'(s) на [−1, 1], ноль вне отрезка."""
    chi_prime = (Polynomial([1, 0, -1]) ** power).deriv()

    def value(s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) < 1, chi_prime(np.clip(s, -1, 1)), 0.0)

    return value


def _slice_length(t: float, xi: np.ndarray) -> float:
    """Длина отрезка {x ∈ [0,1]²: x·ξ = t} (ξ: единичный)."""
    a, b = xi
    if abs(b) < 1e-15:
        return 1.0 if 0 <= t / a <= 1 else 0.0
    if abs(a) < 1e-15:
        return 1.0 if 0 <= t / b <= 1 else 0.0
    # x ∈ [0,1], y = (t − a x)/b ∈ [0,1]
    ends = sorted([(t) / a, (t - b) / a])
    lo, hi = max(0.0, ends[0]), min(1.0, ends[1])
    return max(0.0, hi - lo) * np.hypot(a, b) / abs(b)


def nonelliptic_blowup_family(op: DiffOperator, xi: Sequence[float], v: Sequence[float], js: Sequence[int] = range(2, 7),
                              p: float = 2.0, q: float = 4.0, eps: float = 0.0, base: float = 8.0) -> list:
    """u_j(x) = h_j(x·ξ)v на [0,1]², h_j^{(k−1)}(t) = λ_j^{1/p−ε} χ(λ_j(t − t₀)), λ_j = base^j.

    Внутренняя норма ‖u_j‖_{W^{k−1,p}} + ‖𝔸u_j‖_p ограничена, граничная ‖∂^α u_j‖_{L^q(Γ)} растёт.
    По умолчанию eps = 0: при λ_j = 8^j рост граничной нормы виден уже на j ≤ 6,
    запас ε = (1/p − 1/q)/2 остаётся параметром.
    """
    if op.n != 2:
        raise MalformedSpec("Семейство раздувания реализовано для ℝ²")
    xi = np.asarray(xi, dtype=float)
    v = np.asarray(v, dtype=float)
    image = symbol_batch(op, xi[None])[0] @ v
    residual = np.abs(image).max()
    exact = symbol_exact(op, [sp.nsimplify(c) for c in xi]) * sp.Matrix([sp.nsimplify(c) for c in v])
    if residual > EXACT_TOL or any(sp.simplify(entry) != 0 for entry in exact):
        raise WitnessInvalid(f"𝔸[ξ]v ≠ 0: |𝔸[ξ]v| = {residual:.3e}")

    norm = np.linalg.norm(xi)
    unit = xi / norm
    k = op.k
    order = k - 1
    # Γ: грань x₁ = 0, если ξ₂ ≠ 0, иначе x₂ = 0
    face_axis = 1 if abs(unit[1]) > 1e-12 else 0
    t_lo = min(0.0, unit[0]) + min(0.0, unit[1])
    t_hi = max(0.0, unit[0]) + max(0.0, unit[1])
    t0 = float(unit @ np.array([0.5, 0.5]))
    alpha_factor = abs(unit[face_axis]) ** order * norm ** order

    rows = []
    previous = None
    for j in js:
        lam = base ** j
        amplitude = lam ** (1.0 / p - eps)

        def derivative(m, t, lam=lam, amplitude=amplitude):
            # h^{(m)} = amplitude · λ^{m−(k−1)} · χ^{[−(k−1−m)]}(λ(t − t₀))
            return amplitude * lam ** (m - order) * _antiderivative(order - m)(lam * (t - t0))

        breaks = [t0 - 1 / lam, t0, t0 + 1 / lam]
        interior = 0.0
        for m in range(order + 1):
            integrand = lambda t, m=m: abs(derivative(m, t)) ** p * _slice_length(t, unit) * (norm ** m * np.linalg.norm(v)) ** p
            value, _ = integrate.quad(integrand, t_lo, t_hi, points=breaks, limit=200)
            interior += value ** (1.0 / p)
        # 𝔸u_j = h_j^{(k)}(x·ξ̂)·𝔸[ξ]v
        image_norm = float(np.linalg.norm(image))
        operator_integrand = lambda t: (abs(amplitude * lam * _bump_derivative()(lam * (t - t0))) * image_norm) ** p \
            * _slice_length(t, unit)
        operator_norm, _ = integrate.quad(operator_integrand, t_lo, t_hi, points=breaks, limit=200)
        operator_norm = operator_norm ** (1.0 / p)
        interior += operator_norm
        # Γ параметризована s ∈ [0, 1]: x·ξ̂ = s·ξ̂_face
        boundary_integrand = lambda s: abs(derivative(order, s * unit[face_axis])) ** q
        face_breaks = [b / unit[face_axis] for b in breaks if 0 < b / unit[face_axis] < 1]
        boundary, _ = integrate.quad(boundary_integrand, 0.0, 1.0, points=face_breaks or None, limit=200)
        boundary = boundary ** (1.0 / q) * alpha_factor * np.linalg.norm(v)
        rows.append({
            "j": j,
            "lambda": lam,
            "interior": interior,
            "operator_norm": operator_norm,
            "boundary": boundary,
            "growth": boundary / previous if previous else None,
        })
        previous = boundary
    logger.info(f"✅ Семейство раздувания {op}: граничная норма {rows[0]['boundary']:.3g} → {rows[-1]['boundary']:.3g}")
    return rows
