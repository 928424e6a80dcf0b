"""
Сборка разностных операторов D^ℓ и 𝔸 в разреженные матрицы.

Столбцы: значения V-компонент в узлах-степенях свободы (все ячейки маски
или, в режиме Дирихле, ячейки без граничного слоя). Строки: W-компоненты в
узлах, где весь шаблон лежит в маске. Шаблоны те же, что у apply_operator,
поэтому матрица и сеточное применение совпадают до округления.
"""
import logging
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy import sparse

from core.exceptions import DimensionMismatch, DomainTooThin, MalformedSpec
from core.services.grid import STENCILS, GridDomain, GridFunction, _erode, stencil_radii
from core.services.poly import DiffOperator

logger = logging.getLogger(__name__)

SCHEME = "central-2"


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    op: DiffOperator
    domain: GridDomain
    matrix: sparse.csr_matrix      # (dim_w · rows, dim_v · dofs)
    dofs: np.ndarray               # маска узлов-неизвестных
    rows: np.ndarray               # маска узлов, где оператор вычислим
    scheme: str = SCHEME
    margin: int = 1

    @property
    def dof_count(self) -> int:
        return self.matrix.shape[1]

    def to_vector(self, gf: GridFunction) -> np.ndarray:
        """(dim, *shape) → вектор неизвестных, компонента за компонентой."""
        if gf.dim != self.op.dim_v:
            raise DimensionMismatch(f"Функция размерности {gf.dim}, оператор ждёт {self.op.dim_v}")
        return gf.values[:, self.dofs].reshape(-1)

    def to_grid(self, vector: np.ndarray) -> GridFunction:
        values = np.zeros((self.op.dim_v,) + self.domain.shape)
        values[:, self.dofs] = np.asarray(vector).reshape(self.op.dim_v, -1)
        return GridFunction(self.domain, values)

    def image(self, vector: np.ndarray) -> np.ndarray:
        """𝔸u в узлах-строках: (dim_w, *shape), нули вне rows."""
        result = np.zeros((self.op.dim_w,) + self.domain.shape)
        result[:, self.rows] = (self.matrix @ vector).reshape(self.op.dim_w, -1)
        return result

    def describe(self) -> dict:
        return {
            "op": self.op.name,
            "scheme": self.scheme,
            "margin": self.margin,
            "dofs": int(self.dofs.sum()),
            "rows": int(self.rows.sum()),
        }


def _axis_matrix(size: int, order: int, h: float, periodic: bool) -> sparse.csr_matrix:
    """Одномерная разность порядка order: (Du)_i = Σ_s w_s u_{i+s−r} / h^order."""
    weights = STENCILS[order] / h ** order
    radius = (len(weights) - 1) // 2
    rows, cols, data = [], [], []
    base = np.arange(size)
    for s, w in enumerate(weights):
        if w == 0.0:
            continue
        target = base + s - radius
        keep = np.ones(size, dtype=bool) if periodic else (target >= 0) & (target < size)
        rows.append(base[keep])
        cols.append(target[keep] % size)
        data.append(np.full(int(keep.sum()), w))
    return sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(size, size))


def _partial_matrix(domain: GridDomain, alpha) -> sparse.csr_matrix:
    """∂^α на всём прямоугольнике ячеек в порядке C."""
    factors = []
    for axis, a in enumerate(alpha):
        if a not in STENCILS:
            raise DimensionMismatch(f"Нет шаблона для производной порядка {a}")
        if a == 0:
            factors.append(sparse.identity(domain.shape[axis], format="csr"))
        else:
            factors.append(_axis_matrix(domain.shape[axis], a, domain.h, domain.periodic[axis]))
    return reduce(lambda left, right: sparse.kron(left, right, format="csr"), factors)


def dirichlet_dofs(domain: GridDomain, layer: int = 1) -> np.ndarray:
    """Ячейки маски без граничного слоя толщины layer."""
    return _erode(domain.mask, [layer] * domain.n, domain.periodic)


def assemble_fd(op: DiffOperator, domain: GridDomain, order: int = 2, dirichlet: bool = False) -> AssembledOperator:
    """Центральные разности второго порядка для 𝔸 (или D^k, если op = gradient(n, k, N))."""
    if order != 2:
        raise MalformedSpec(f"Поддерживается только схема второго порядка, запрошен {order}")
    if op.n != domain.n:
        raise DimensionMismatch(f"Оператор в ℝ^{op.n}, область в ℝ^{domain.n}")
    alphas, mats = op.numeric

    rows = domain.mask.copy()
    margin = 0
    for alpha in alphas:
        radii = stencil_radii(alpha)
        margin = max(margin, *radii)
        rows &= _erode(domain.mask, radii, domain.periodic)
    if not rows.any():
        raise DomainTooThin(f"В области {domain.kind} (h={domain.h}) нет узлов с целым шаблоном {op}")
    dofs = dirichlet_dofs(domain) if dirichlet else domain.mask
    if not dofs.any():
        raise DomainTooThin(f"После обнуления границы в области {domain.kind} не осталось узлов")

    row_index = np.flatnonzero(rows.ravel())
    col_index = np.flatnonzero(dofs.ravel())
    blocks = [[None] * op.dim_v for _ in range(op.dim_w)]
    for alpha, mat in zip(alphas, mats):
        local = _partial_matrix(domain, alpha)[row_index][:, col_index]
        for i in range(op.dim_w):
            for j in range(op.dim_v):
                if mat[i, j] == 0.0:
                    continue
                term = mat[i, j] * local
                blocks[i][j] = term if blocks[i][j] is None else blocks[i][j] + term
    empty = sparse.csr_matrix((len(row_index), len(col_index)))
    matrix = sparse.bmat([[block if block is not None else empty for block in line] for line in blocks],
                         format="csr")
    matrix.eliminate_zeros()
    logger.info(f"✅ {op} собран на {domain.kind} (h={domain.h}): {matrix.shape[0]}×{matrix.shape[1]}, "
                f"nnz = {matrix.nnz}")
    return AssembledOperator(op=op, domain=domain, matrix=matrix, dofs=dofs, rows=rows, margin=margin)
