"""
Встроенная галерея операторов: файлы описаний с ожидаемыми вердиктами.
"""
import json
import logging
from pathlib import Path

from core.exceptions import FileError
from core.models import CVerdict, EllipticVerdict
from core.services.operators import builtin
from core.services.poly import DiffOperator

logger = logging.getLogger(__name__)

# (файл, встроенный оператор, ожидаемые вердикты)
GALLERY = (
    ("grad_2d.json", "grad_2d", CVerdict.C_ELLIPTIC, 1),
    ("hessian_2d.json", "hessian_2d", CVerdict.C_ELLIPTIC, 2),
    ("grad3_2d.json", "grad3_2d", CVerdict.C_ELLIPTIC, 3),
    ("sym_grad_2d.json", "sym_grad_2d", CVerdict.C_ELLIPTIC, 2),
    ("sym_grad_3d.json", "sym_grad_3d", CVerdict.C_ELLIPTIC, 2),
    ("eps_dev_2d.json", "eps_dev_2d", CVerdict.NOT_C_ELLIPTIC, None),
    ("eps_dev_3d.json", "eps_dev_3d", CVerdict.C_ELLIPTIC, 3),
    ("laplace_2d.json", "laplace_2d", CVerdict.NOT_C_ELLIPTIC, None),
    ("grad_eps_dev_3d.json", "grad_eps_dev_3d", CVerdict.C_ELLIPTIC, 3),
)


def exact_spec(op: DiffOperator) -> dict:
    """Описание оператора с точными коэффициентами-строками ("sqrt(2)/2")."""
    return {
        "name": op.name,
        "n": op.n,
        "k": op.k,
        "dim_v": op.dim_v,
        "dim_w": op.dim_w,
        "terms": [
            {"alpha": list(alpha), "matrix": [[str(entry) for entry in mat.row(i)] for i in range(op.dim_w)]}
            for alpha, mat in op.terms
        ],
    }


def gallery_specs() -> list:
    specs = []
    for filename, name, verdict, deg_p in GALLERY:
        spec = exact_spec(builtin(name))
        spec["expected"] = {"verdict": str(verdict), "deg_p": deg_p, "elliptic": str(EllipticVerdict.ELLIPTIC)}
        specs.append((filename, spec))
    return specs


def write_gallery(directory) -> list:
    """Записать файлы галереи в directory; вернуть пути."""
    directory = Path(directory)
    paths = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for filename, spec in gallery_specs():
            path = directory / filename
            path.write_text(json.dumps(spec, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
            paths.append(path)
    except OSError as e:
        raise FileError(f"Не удалось записать галерею в {directory}: {e}")
    logger.info(f"✅ Галерея: {len(paths)} файлов в {directory}")
    return paths
