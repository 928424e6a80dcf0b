"""
Встроенные операторы (градиенты, симметрический градиент, его бесследовая
часть, лапласиан, частные производные), композиция и 𝔸*𝔸.

Координаты в W ортонормированы: внедиагональные элементы симметричных
матриц берутся с множителем √2, строки D^k: с весом √(k!/α!), так что
евклидова норма в W совпадает с нормой Фробениуса соответствующего тензора.
"""
import itertools
import math

import sympy as sp

from core.exceptions import DimensionMismatch, MalformedSpec
from core.services.poly import DiffOperator, MultiIndex, homogeneous_indices, operator_from_terms


def gradient(n: int, k: int = 1, components: int = 1) -> DiffOperator:
    """D^k для u: ℝⁿ → ℝ^N; строки упорядочены (компонента, α)."""
    alphas = homogeneous_indices(n, k)
    dim_w = components * len(alphas)
    terms = {}
    for a_idx, alpha in enumerate(alphas):
        weight = sp.sqrt(sp.Rational(math.factorial(k), alpha.factorial()))
        mat = sp.zeros(dim_w, components)
        for i in range(components):
            mat[i * len(alphas) + a_idx, i] = weight
        terms[alpha] = mat
    name = "D" if k == 1 else f"D{k}"
    return operator_from_terms(n, k, components, dim_w, terms, name=f"{name}_n{n}_N{components}")


def _sym_pairs(n: int) -> list:
    return list(itertools.combinations(range(n), 2))


def sym_grad(n: int) -> DiffOperator:
    """ε(u) = (Du + Duᵀ)/2 в координатах (e₁₁, …, eₙₙ, √2·e_ij)."""
    pairs = _sym_pairs(n)
    dim_w = n + len(pairs)
    half_root = 1 / sp.sqrt(2)
    terms = {}
    for l in range(n):
        mat = sp.zeros(dim_w, n)
        mat[l, l] = 1
        for p_idx, (i, j) in enumerate(pairs):
            # √2 · (∂_i u_j + ∂_j u_i)/2
            if l == i:
                mat[n + p_idx, j] += half_root
            if l == j:
                mat[n + p_idx, i] += half_root
        terms[MultiIndex.unit(n, l)] = mat
    return operator_from_terms(n, 1, n, dim_w, terms, name=f"eps_n{n}")


def dev_sym_grad(n: int) -> DiffOperator:
    """ε^D(u) = ε(u) − div(u)/n · E в ортонормированном базисе бесследовых симметричных матриц."""
    if n < 2:
        raise MalformedSpec("Бесследовый симметрический градиент определён при n ≥ 2")
    pairs = _sym_pairs(n)
    dim_w = (n - 1) + len(pairs)
    half_root = 1 / sp.sqrt(2)
    terms = {}
    for l in range(n):
        mat = sp.zeros(dim_w, n)
        # диагональная часть: базис Хельмерта (Σ_{i≤d} e_ii − d·e_{d+1,d+1})/√(d(d+1))
        for d in range(1, n):
            norm = 1 / sp.sqrt(d * (d + 1))
            if l < d:
                mat[d - 1, l] += norm
            elif l == d:
                mat[d - 1, l] += -d * norm
        for p_idx, (i, j) in enumerate(pairs):
            if l == i:
                mat[n - 1 + p_idx, j] += half_root
            if l == j:
                mat[n - 1 + p_idx, i] += half_root
        terms[MultiIndex.unit(n, l)] = mat
    return operator_from_terms(n, 1, n, dim_w, terms, name=f"eps_dev_n{n}")


def laplacian(n: int) -> DiffOperator:
    terms = {MultiIndex.unit(n, j, 2): sp.Matrix([[1]]) for j in range(n)}
    return operator_from_terms(n, 2, 1, 1, terms, name=f"laplace_n{n}")


def partial(j: int, n: int) -> DiffOperator:
    if not 0 <= j < n:
        raise MalformedSpec(f"Направление {j} вне диапазона 0..{n - 1}")
    return operator_from_terms(n, 1, 1, 1, {MultiIndex.unit(n, j): sp.Matrix([[1]])}, name=f"d{j + 1}_n{n}")


def compose(outer: DiffOperator, inner: DiffOperator, name: str = "") -> DiffOperator:
    """𝔹𝔸: символ 𝔹[ξ]𝔸[ξ], порядок k_B + k_A."""
    if outer.n != inner.n or outer.dim_v != inner.dim_w:
        raise DimensionMismatch(f"Нельзя составить {outer} ∘ {inner}")
    terms: dict = {}
    for beta, b_mat in outer.terms:
        for alpha, a_mat in inner.terms:
            gamma = beta.plus(alpha)
            product = b_mat * a_mat
            terms[gamma] = terms[gamma] + product if gamma in terms else product
    return operator_from_terms(
        inner.n, outer.k + inner.k, inner.dim_v, outer.dim_w, terms,
        name=name or f"{outer.name or 'B'}*{inner.name or 'A'}",
    )


def adjoint_laplacian(op: DiffOperator) -> DiffOperator:
    """Δ_𝔸 = 𝔸*𝔸 с символом 𝔸[ξ]ᵀ𝔸[ξ] (V → V, порядок 2k)."""
    terms: dict = {}
    for alpha, a_mat in op.terms:
        for beta, b_mat in op.terms:
            gamma = alpha.plus(beta)
            product = a_mat.T * b_mat
            terms[gamma] = terms[gamma] + product if gamma in terms else product
    return operator_from_terms(op.n, 2 * op.k, op.dim_v, op.dim_v, terms, name=f"lap[{op.name or 'A'}]")


def builtin(name: str) -> DiffOperator:
    """Оператор по короткому имени галереи."""
    table = {
        "grad_2d": lambda: gradient(2, 1),
        "hessian_2d": lambda: gradient(2, 2),
        "grad3_2d": lambda: gradient(2, 3),
        "sym_grad_2d": lambda: sym_grad(2),
        "sym_grad_3d": lambda: sym_grad(3),
        "eps_dev_2d": lambda: dev_sym_grad(2),
        "eps_dev_3d": lambda: dev_sym_grad(3),
        "laplace_2d": lambda: adjoint_laplacian(gradient(2, 1)),
        "grad_eps_dev_3d": lambda: compose(gradient(3, 1, components=5), dev_sym_grad(3), name="D_eps_dev_n3"),
        "partial1_2d": lambda: partial(0, 2),
    }
    if name not in table:
        raise MalformedSpec(f"Неизвестный встроенный оператор: {name}")
    op = table[name]()
    return DiffOperator(n=op.n, k=op.k, dim_v=op.dim_v, dim_w=op.dim_w, terms=op.terms, name=name)
