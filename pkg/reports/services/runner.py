"""
Пакетный фронтенд: run(argv) разбирает подкоманду, выполняет эксперимент,
записывает отчёт и возвращает код выхода (0: все проверки прошли,
2: вердикт не определён, 1: ошибка или проваленная проверка).
"""
import json
import logging
from pathlib import Path

import numpy as np
import sympy as sp
from django.core.management.base import CommandError, CommandParser
from scipy import linalg

from analysis.services.maximal import (
    Weight,
    cz_decomposition,
    cz_properties,
    fefferman_stein_check,
    maximal,
    muckenhoupt_constant,
    muckenhoupt_on_grid,
)
from analysis.services.trace import (
    bump_family,
    harmonic_family,
    nonelliptic_blowup_family,
    translation_check,
)
from analysis.tasks import trace_rows
from core.exceptions import EllikornError, FileError, MalformedSpec, NotCElliptic, UsageError
from core.models import CVerdict, EllipticVerdict
from core.services.ellipticity import cancellation_image_intersection, is_elliptic
from core.services.grid import GridFunction
from core.services.operators import builtin
from core.services.poly import (
    DiffOperator,
    VPolynomial,
    apply_to_polynomial,
    make_operator,
    polynomial_basis,
    symbol_batch,
)
from core.services.projection import (
    apply_projection,
    averaged_taylor,
    build_projection,
    check_corrector_identity,
    check_degree_preservation,
    check_dual_exactness,
    check_idempotent,
    projection_stability,
    representation_error,
    riesz_bound_check,
)
from core.tasks import analyze, cached_profile, save_analysis
from ellikorn import config
from geometry.services.chains import check_chain_properties, emanating_chains, whitney_cover
from geometry.services.decomposition import MomentSubspace
from geometry.services.domains import KINDS, make_domain
from geometry.tasks import MIN_SIDE, decomposition_trials
from korn.services.bench import (
    central_ball,
    eigensolver_agreement,
    holomorphic_witnesses,
    korn_constant_sampled,
    nested_monotonicity,
)
from korn.services.norms import NormSpec
from korn.tasks import korn_sweep, parse_steps
from reports.models import ExperimentRun
from reports.services.gallery import write_gallery
from reports.services.report import Report, clean

logger = logging.getLogger(__name__)

# выходные пути не влияют на содержимое отчёта
OUTPUT_FLAGS = ("out", "csv", "record")


# --- разбор аргументов ---

def build_parser() -> CommandParser:
    parser = CommandParser(prog="ellikorn", called_from_command_line=False,
                           description="Проверка констант и вердиктов для дифференциальных операторов")
    commands = parser.add_subparsers(dest="subcommand", required=True)

    def command(name, help_text, domain="square", h="1/32"):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--op", help="файл описания оператора (JSON) или builtin:<имя>")
        sub.add_argument("--domain", default=domain, choices=KINDS)
        sub.add_argument("--param", action="append", default=[], help="параметры области k=v[,k=v]")
        sub.add_argument("--h", default=h, help="шаг решётки или список рациональных шагов через запятую")
        sub.add_argument("--p", type=float)
        sub.add_argument("--q", type=float)
        sub.add_argument("--weight", action="append", default=[])
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--max-degree", dest="max_degree", type=int, default=config.MAX_DEGREE)
        sub.add_argument("--trials", type=int)
        sub.add_argument("--out")
        sub.add_argument("--csv")
        sub.add_argument("--record", action="store_true", help="сохранить запуск в базе")
        return sub

    command("analyze", "вердикты эллиптичности и ℂ-эллиптичности")
    project = command("project", "проекция на ядро и её инварианты")
    project.add_argument("--m", type=int, help="порядок пространства 𝒫_{m−1} (по умолчанию deg_𝒫)")
    project.add_argument("--grid", type=int, help="сетка проверки формулы представления (ячеек по оси)")
    command("decompose", "разложение с сохранением моментов", domain="lshape")
    command("maximal", "максимальные функции, веса, Кальдерон–Зигмунд, Фефферман–Стейн")
    trace = command("trace", "след на полупространстве")
    trace.add_argument("--grid", type=int, default=128)
    trace.add_argument("--family", default="bumps", choices=("bumps", "harmonic", "blowup"))
    korn = command("korn", "константы Корна", h="1/16,1/32")
    korn.add_argument("--dirichlet", action="store_true")
    korn.add_argument("--lorentz", type=float)
    korn.add_argument("--orlicz", type=float)
    korn.add_argument("--method", default="auto", choices=("auto", "dense", "lanczos", "power"))
    domains = command("domains", "покрытия Уитни и цепочки")
    domains.add_argument("--sigma1", type=float, default=2.0)
    gallery = commands.add_parser("gallery", help="файлы встроенных операторов")
    gallery.add_argument("--out", default="gallery")
    gallery.add_argument("--seed", type=int, default=0)
    gallery.add_argument("--record", action="store_true")
    gallery.add_argument("--csv")
    return parser


def parse_params(items: list) -> dict:
    params = {}
    for item in items:
        for pair in item.split(","):
            if not pair.strip():
                continue
            key, sep, value = pair.partition("=")
            if not sep:
                raise UsageError(f"Параметр области должен иметь вид k=v: «{pair}»")
            params[key.strip()] = value.strip()
    return params


def load_operator(path: str) -> DiffOperator:
    """Описание оператора из файла; builtin:<имя>: из галереи."""
    if not path:
        raise UsageError("Нужен флаг --op")
    if path.startswith("builtin:"):
        return builtin(path.split(":", 1)[1])
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise FileError(f"Не удалось прочитать {path}: {e}")
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedSpec(f"{path}: неверный JSON: {e}")
    op = make_operator(spec)
    logger.info(f"🔍 Оператор {op} из {path}")
    return op


def first_step(args) -> float:
    return parse_steps(args.h)[0]


def domain_from(args, h: float = None):
    return make_domain(args.domain, parse_params(args.param), h or first_step(args))


def profile_for(op: DiffOperator, args):
    if args.record:
        return cached_profile(op, args.max_degree, args.seed, record=True)
    return analyze(op, max_degree=args.max_degree, seed=args.seed)


def echo_inputs(args) -> dict:
    return {key: value for key, value in sorted(vars(args).items()) if key not in OUTPUT_FLAGS}


def operator_inputs(op: DiffOperator) -> dict:
    return {"operator": {"name": op.name, "spec_hash": op.spec_hash, "n": op.n, "k": op.k,
                         "dim_v": op.dim_v, "dim_w": op.dim_w, "w_coordinates": "orthonormal"}}


def smooth_fields(domain, dim: int, count: int, seed: int) -> list:
    """Гладкие поля sin(a·x) + c с фиксированным зерном."""
    rng = np.random.default_rng(seed)
    fields = []
    for _ in range(count):
        coeffs = rng.normal(size=(dim, domain.n + 1)) * 3

        def sample(x, coeffs=coeffs):
            return np.stack([np.sin(x @ coeffs[i, :-1]) + coeffs[i, -1] for i in range(dim)], axis=1)

        fields.append(GridFunction.from_callable(domain, sample))
    return fields


def random_polynomial(rng, n: int, dim: int, degree: int) -> VPolynomial:
    basis = polynomial_basis(n, dim, degree)
    values = [sp.Rational(int(rng.integers(-5, 6)), int(rng.integers(1, 4))) for _ in basis]
    return VPolynomial.from_coordinates(n, dim, basis, values)


def spread(values: list) -> float:
    values = [v for v in values if v is not None and np.isfinite(v) and v > 0]
    return max(values) / min(values) if values else 1.0


def finite(values: list) -> bool:
    return all(v is not None and np.isfinite(v) for v in values)


# --- подкоманды ---

def handle_analyze(args, report: Report):
    op = load_operator(args.op)
    report.inputs.update(operator_inputs(op))
    elliptic = is_elliptic(op, seed=args.seed)
    profile = profile_for(op, args)
    report.metrics.update(profile.verdict_block())
    report.metrics["elliptic"] = {"verdict": str(elliptic.verdict), "sigma_min": elliptic.minimum,
                                  "argmin": list(elliptic.argmin)}
    report.metrics["kernel_dimension"] = sum(profile.kernel_dims)

    if profile.verdict == CVerdict.C_ELLIPTIC:
        dims = profile.kernel_dims
        report.check("ellipticity: deg_p is the first vanishing Z_l",
                     dims[profile.deg_p] == 0 and all(d > 0 for d in dims[:profile.deg_p]),
                     value=dims, provenance="ellipticity")
        report.check("ellipticity: C-elliptic implies elliptic", elliptic.verdict == EllipticVerdict.ELLIPTIC,
                     value=elliptic.minimum, tolerance=config.ELLIPTIC_TOL, provenance="ellipticity")
    if profile.witness is not None:
        report.check("ellipticity: witness soundness", profile.witness.residual <= config.WITNESS_TOL,
                     value=profile.witness.residual, tolerance=config.WITNESS_TOL, provenance="ellipticity")
    if profile.verdict == CVerdict.UNDECIDED:
        report.undecided = True
    if elliptic.verdict == EllipticVerdict.ELLIPTIC:
        report.metrics["cancellation_dimension"] = cancellation_image_intersection(op, seed=args.seed).dimension


def handle_project(args, report: Report):
    op = load_operator(args.op)
    domain = domain_from(args)
    report.inputs.update(operator_inputs(op))
    report.inputs["domain"] = domain.describe()
    profile = profile_for(op, args)
    if profile.verdict != CVerdict.C_ELLIPTIC:
        raise NotCElliptic(f"{op}: вердикт {profile.verdict}, проекция не строится")
    ball = central_ball(domain)
    P = build_projection(op, ball, profile, m=args.m)
    if args.record:
        save_analysis(op, profile, args.max_degree, P)
    report.metrics.update({"m": P.m, "kernel_size": P.kernel_size, "ball": ball.to_json()})

    report.check("projection: dual exactness", check_dual_exactness(P), provenance="projection")
    report.check("projection: corrector identity", check_corrector_identity(P), provenance="projection")
    report.check("projection: idempotence", check_idempotent(P), provenance="projection")
    failures = check_degree_preservation(P, profile.deg_p)
    report.check("projection: (K4) degree preservation", not failures, value=len(failures), tolerance=0,
                 provenance="projection")

    rng = np.random.default_rng(args.seed)
    lower = P.m - 1 - op.k
    if lower >= 0:
        fixed = ball.with_exponent(P.m + 3)
        mismatches = 0
        for _ in range(20):
            u = random_polynomial(rng, op.n, op.dim_v, 3)
            left = apply_to_polynomial(op, averaged_taylor(u, P.m - 1, fixed))
            right = averaged_taylor(apply_to_polynomial(op, u), lower, fixed)
            mismatches += not left.equals(right)
        report.check("projection: Taylor commutes with the operator", mismatches == 0, value=mismatches,
                     tolerance=0, provenance="projection")

    fields = smooth_fields(domain, op.dim_v, args.trials or 50, args.seed)
    ratios = [projection_stability(P, u) for u in fields]
    report.check("projection: stability ratios finite", finite(ratios), value=max(ratios), provenance="projection")
    report.metrics["stability_max"] = max(ratios)
    report.metrics["riesz_ratio"] = riesz_bound_check(op, P, fields[0], 0)
    fixed_kernel = all(apply_projection(P, u).equals(u) for u in P.kernel_basis)
    report.check("projection: kernel is fixed", fixed_kernel, provenance="projection")

    if args.grid and op.n == 2:
        u = random_polynomial(rng, 2, op.dim_v, 2)
        points = [np.asarray(ball.center) + 0.5 * ball.radius * np.array([np.cos(t), np.sin(t)])
                  for t in np.linspace(0, 2 * np.pi, 5, endpoint=False)]
        errors = [representation_error(u, ball, x, m=2, cells=args.grid) for x in points]
        report.check("projection: kernel representation formula", max(errors) <= 1e-6, value=max(errors),
                     tolerance=1e-6, provenance="projection")


def chain_checks(report: Report, domain, sigma1: float = 2.0):
    cover = whitney_cover(domain, min_side=MIN_SIDE)
    cc = emanating_chains(cover, domain, sigma1=sigma1)
    properties = check_chain_properties(cc, domain)
    for name in ("C1", "C2", "C3"):
        report.check(f"domains: ({name})", properties[name], provenance="domains")
    report.check("domains: diam bound by central cube", properties["diam_ok"], value=properties["diam_ratio"],
                 tolerance=properties["sigma2"], provenance="domains")
    report.metrics["chains"] = {key: value for key, value in properties.items() if key != "offending_cubes"}
    report.metrics["offending_cubes"] = properties["offending_cubes"]
    return cc


def handle_domains(args, report: Report):
    domain = domain_from(args)
    report.inputs["domain"] = domain.describe()
    cc = chain_checks(report, domain, args.sigma1)
    report.metrics["cover"] = cc.to_json()
    report.rows = [{"cube": i, "corner": list(cube.corner), "side": cube.side, "chain_length": len(chain) - 1}
                   for i, (cube, chain) in enumerate(zip(cc.cubes, cc.chains))]


def handle_decompose(args, report: Report):
    domain = domain_from(args)
    h = first_step(args)
    report.inputs["domain"] = domain.describe()
    if args.op:
        op = load_operator(args.op)
        report.inputs.update(operator_inputs(op))
        profile = profile_for(op, args)
        if profile.verdict != CVerdict.C_ELLIPTIC:
            raise NotCElliptic(f"{op}: вердикт {profile.verdict}")
        subspace = MomentSubspace.from_operator(op, profile)
    else:
        subspace = MomentSubspace.constants(domain.n)
    report.metrics["subspace"] = {"tag": subspace.tag, "dim": len(subspace)}
    chain_checks(report, domain)

    weights = args.weight or ["unit"]
    q = args.q or 2.0
    rows = decomposition_trials(args.domain, parse_params(args.param), h, subspace, args.trials or 20,
                                seed=args.seed, q=q, weights=weights)
    report.rows = rows
    reconstruction = max(row["reconstruction"] for row in rows)
    orthogonality = max(row["moment_error"] for row in rows)
    report.check("decomposition: reconstruction", reconstruction <= 1e-8, value=reconstruction, tolerance=1e-8,
                 provenance="decomposition")
    report.check("decomposition: moment orthogonality", orthogonality <= 1e-9, value=orthogonality,
                 tolerance=1e-9, provenance="decomposition")
    violations = sum(row["support_violations"] for row in rows)
    report.check("decomposition: pieces supported in dilated cubes", violations == 0, value=violations,
                 tolerance=0, provenance="decomposition")
    for text in weights:
        upper = [row[f"upper[{text}]"] for row in rows]
        lower = [row[f"lower[{text}]"] for row in rows]
        report.check(f"decomposition: norm equivalence finite [{text}]", finite(upper) and finite(lower),
                     value=max(upper), provenance="decomposition")
        report.check(f"decomposition: norm equivalence spread [{text}]", spread(upper) <= 2.0,
                     value=spread(upper), tolerance=2.0, provenance="decomposition")
    report.metrics["order_spread"] = max(row["order_spread"] for row in rows)


def handle_maximal(args, report: Report):
    domain = domain_from(args)
    report.inputs["domain"] = domain.describe()
    q = args.q or 2.0
    p = args.p or 1.0
    weight = Weight.parse(args.weight[0] if args.weight else "unit", domain.n)
    subspace = MomentSubspace.constants(domain.n)
    rng = np.random.default_rng(args.seed)

    unit = muckenhoupt_constant(Weight.unit(), q, n=domain.n)
    report.check("maximal_weights: A_q constant of the unit weight", unit == 1.0, value=unit, tolerance=0,
                 provenance="maximal_weights")
    if weight.kind == "power":
        constants = {depth: muckenhoupt_constant(weight, q, depth=depth, n=domain.n) for depth in (4, 5, 6)}
        report.metrics["muckenhoupt"] = {str(depth): value for depth, value in constants.items()}
        if -domain.n < weight.exponent < domain.n * (q - 1):
            drift = abs(constants[6] / constants[5] - 1)
            report.check("maximal_weights: A_q constant stable in range", drift <= 0.1, value=drift,
                         tolerance=0.1, provenance="maximal_weights")
    elif weight.kind == "custom":
        report.metrics["muckenhoupt"] = muckenhoupt_on_grid(weight.values(domain), q)

    rows = []
    cz_flags = {key: True for key in "abcde"}
    for trial in range(args.trials or 10):
        values = rng.normal(size=(1,) + domain.shape) * domain.mask
        values += 3 * (rng.random(domain.shape) < 0.02)
        f = GridFunction(domain, values)
        sharp = maximal(f, "sharp", sigma=2.0, p=p, subspace=subspace)
        restricted = maximal(f, "restricted", sigma=2.0, p=p)
        excess = float((sharp.values - restricted.values).max())
        density = np.abs(values[0])
        cubes = cz_decomposition(density, 2 * density.mean())
        properties = cz_properties(density, 2 * density.mean(), cubes)
        for key in cz_flags:
            cz_flags[key] &= properties[key]
        fs = fefferman_stein_check(f, subspace, q=q, weight=weight, p=p)
        rows.append({"trial": trial, "sharp_excess": excess, "cz_cubes": len(cubes), "fs_ratio": fs["ratio"],
                     "fs_exact": fs["exact"]})

    excess = max(row["sharp_excess"] for row in rows)
    report.check("maximal_weights: sharp <= restricted", excess <= 1e-12, value=excess, tolerance=1e-12,
                 provenance="maximal_weights")
    for key, flag in cz_flags.items():
        report.check(f"maximal_weights: CZ ({key})", flag, provenance="maximal_weights")
    ratios = [row["fs_ratio"] for row in rows if not row["fs_exact"]]
    report.check("maximal_weights: Fefferman-Stein ratios bounded", finite(ratios),
                 value=max(ratios, default=None), provenance="maximal_weights")
    report.check("maximal_weights: Fefferman-Stein spread", spread(ratios) <= 4.0, value=spread(ratios),
                 tolerance=4.0, provenance="maximal_weights")
    report.rows = rows


def _real_witness(op: DiffOperator, seed: int) -> tuple:
    """Вещественные ξ, v с 𝔸[ξ]v = 0 для неэллиптического оператора, округлённые к точным значениям."""
    result = is_elliptic(op, seed=seed)
    if result.verdict == EllipticVerdict.ELLIPTIC:
        raise UsageError(f"{op} эллиптичен: семейство blowup требует неэллиптический оператор")
    xi = np.round(np.asarray(result.argmin, dtype=float), 6)
    xi = xi / np.linalg.norm(xi)
    null = linalg.null_space(np.real(symbol_batch(op, xi[None])[0]), rcond=1e-8)
    v = np.round(null[:, 0] / np.abs(null[:, 0]).max(), 6)
    return xi, v


def handle_trace(args, report: Report):
    op = load_operator(args.op)
    report.inputs.update(operator_inputs(op))
    if args.family == "blowup":
        p, q = args.p or 2.0, args.q or 4.0
        xi, v = _real_witness(op, args.seed)
        rows = nonelliptic_blowup_family(op, xi, v, p=p, q=q)
        report.rows = rows
        interior = [row["interior"] for row in rows]
        growth = [row["growth"] for row in rows if row["growth"] is not None]
        report.metrics.update({"xi": xi, "v": v, "p": p, "q": q})
        operator_norm = max(row["operator_norm"] for row in rows)
        report.check("besov_trace: operator annihilates the family", operator_norm <= 1e-10, value=operator_norm,
                     tolerance=1e-10, provenance="besov_trace")
        report.check("besov_trace: interior norms bounded", spread(interior) <= 1.1, value=spread(interior),
                     tolerance=1.1, provenance="besov_trace")
        report.metrics["exploratory_thresholds"] = ["besov_trace: boundary norms blow up"]
        report.check("besov_trace: boundary norms blow up", min(growth) >= 1.5, value=min(growth), tolerance=1.5,
                     provenance="besov_trace")
        return

    profile = profile_for(op, args)
    if profile.verdict != CVerdict.C_ELLIPTIC:
        raise NotCElliptic(f"{op}: вердикт {profile.verdict}")
    if op.n != 2 or op.k < 2:
        raise MalformedSpec(f"След проверяется для n = 2 и k ≥ 2, получен {op}")
    family = bump_family(op.dim_v) if args.family == "bumps" else harmonic_family()
    if args.family == "harmonic" and op.dim_v != 1:
        raise MalformedSpec("Гармоническое семейство скалярное")
    rows = trace_rows(op, family, args.grid)
    report.rows = rows
    ratios = [row["ratio"] for row in rows if not row["exact"]]
    report.check("besov_trace: trace ratios finite", finite(ratios), value=max(ratios, default=None),
                 provenance="besov_trace")
    if args.family == "bumps":
        report.check("besov_trace: ratio bracket", spread(ratios) <= 5.0, value=spread(ratios), tolerance=5.0,
                     provenance="besov_trace")
    shift = 0.25
    drift = translation_check(op, family[0], shift, cells=args.grid)
    report.check("besov_trace: translation invariance", drift <= 1e-8, value=drift, tolerance=1e-8,
                 provenance="besov_trace")
    report.metrics.update({"max_ratio": max(ratios, default=None), "min_ratio": min(ratios, default=None),
                           "richardson": max(row["richardson"] for row in rows), "grid": args.grid})


def handle_korn(args, report: Report):
    op = load_operator(args.op)
    report.inputs.update(operator_inputs(op))
    params = parse_params(args.param)
    steps = parse_steps(args.h)
    p = args.p or 2.0
    sampled = p != 2.0 or args.weight or args.lorentz is not None or args.orlicz is not None
    profile = profile_for(op, args)
    report.metrics["verdict"] = str(profile.verdict)

    if sampled:
        norm = NormSpec.build(p, lorentz=args.lorentz, orlicz_beta=args.orlicz)
        weight = Weight.parse(args.weight[0] if args.weight else "unit", op.n)
        rows = []
        for h in steps:
            domain = make_domain(args.domain, params, h)
            result = korn_constant_sampled(op, domain, profile, norm=norm, weight=weight,
                                           count=args.trials or 30, seed=args.seed)
            rows.append({"h": h, "C": result["C"], "argmax": result["argmax"]})
        report.rows = rows
        report.metrics.update({"constants": rows, "norm": norm.describe(), "weight": weight.describe()})
        report.check("korn_bench: sampled constants finite", finite([row["C"] for row in rows]),
                     value=max(row["C"] for row in rows), provenance="korn_bench")
        return

    rows = korn_sweep(op, args.domain, steps, params=params, dirichlet=args.dirichlet, method=args.method)
    report.rows = [{key: value for key, value in row.items() if key != "witness_norms"} for row in rows]
    report.metrics["constants"] = rows
    mismatch = max(abs(row["witness_quotient"] - row["C"]) / max(row["C"], 1e-300) for row in rows)
    report.check("korn_bench: witness attains the constant", mismatch <= 1e-6, value=mismatch, tolerance=1e-6,
                 provenance="korn_bench")

    constants = [row["C"] for row in rows]
    if profile.verdict == CVerdict.C_ELLIPTIC and len(rows) > 1:
        drift = max(constants) / min(constants) - 1
        report.check("korn_bench: Korn dichotomy (bounded constants)", drift <= 0.1, value=drift, tolerance=0.1,
                     provenance="korn_bench")
    elif profile.verdict == CVerdict.NOT_C_ELLIPTIC and len(rows) > 1:
        growth = min(row["growth"] for row in rows[1:])
        report.metrics["min_growth"] = growth
        report.metrics["exploratory_thresholds"] = ["korn_bench: Korn dichotomy (growing constants)"]
        report.check("korn_bench: Korn dichotomy (growing constants)", growth >= 1.5, value=growth, tolerance=1.5,
                     provenance="korn_bench")
    elif profile.verdict == CVerdict.UNDECIDED:
        report.undecided = True

    coarse = make_domain(args.domain, params, max(steps))
    if rows[0]["dofs"] <= config.DENSE_LIMIT:
        agreement = eigensolver_agreement(op, coarse, dirichlet=args.dirichlet)
        report.check("korn_bench: eigen cross-validation", agreement["relative"] <= 1e-6,
                     value=agreement["relative"], tolerance=1e-6, provenance="korn_bench")
    nested = nested_monotonicity(op, coarse)
    report.check("korn_bench: Rayleigh monotonicity", nested["monotone"], value=nested, provenance="korn_bench")

    if profile.verdict == CVerdict.NOT_C_ELLIPTIC and op.n == 2 and op.dim_v == 2:
        table = holomorphic_witnesses(op, coarse)
        report.metrics["holomorphic"] = table
        if all(row["op_exact_zero"] for row in table):
            quotients = [row["quotient"] for row in table]
            report.check("korn_bench: holomorphic quotients increase",
                         all(b > a for a, b in zip(quotients, quotients[1:])), value=quotients,
                         provenance="korn_bench")


def handle_gallery(args, report: Report):
    paths = write_gallery(args.out)
    mismatches = []
    for path in paths:
        data = json.loads(path.read_text(encoding="utf-8"))
        op = make_operator(data)
        if op.spec_hash != builtin(op.name).spec_hash:
            mismatches.append(path.name)
    report.metrics["files"] = [path.name for path in paths]
    report.check("cli: gallery files round-trip", not mismatches, value=mismatches, provenance="cli")


HANDLERS = {
    "analyze": handle_analyze,
    "project": handle_project,
    "decompose": handle_decompose,
    "maximal": handle_maximal,
    "trace": handle_trace,
    "korn": handle_korn,
    "domains": handle_domains,
    "gallery": handle_gallery,
}


# --- запуск ---

def report_path(args) -> Path:
    if args.subcommand == "gallery":
        return Path(args.out) / "report.json"
    return Path(args.out or f"{args.subcommand}-report.json")


def run(argv) -> int:
    """Выполнить подкоманду; вернуть код выхода. Отчёт пишется и при ошибке."""
    argv = [str(item) for item in argv]
    try:
        args = build_parser().parse_args(argv)
    except CommandError as e:
        logger.error(f"❌ {e}")
        return 1

    report = Report(subcommand=args.subcommand, inputs=echo_inputs(args))
    record = None
    if args.record:
        record = ExperimentRun.objects.create(subcommand=args.subcommand, argv=argv, seed=args.seed, total=1,
                                              status=ExperimentRun.Status.IN_PROGRESS)
    logger.info(f"🔄 ellikorn {args.subcommand} (seed={args.seed})")
    try:
        HANDLERS[args.subcommand](args, report)
    except EllikornError as e:
        report.error = f"{type(e).__name__}: {e}"
        logger.error(f"❌ {args.subcommand}: {report.error}")
    except Exception as e:
        report.error = f"{type(e).__name__}: {e}"
        logger.exception(f"❌ Неожиданная ошибка в {args.subcommand}: {e}")

    code = report.exit_code
    try:
        report.write(report_path(args))
        if args.csv:
            report.write_csv(args.csv)
    except FileError as e:
        logger.error(f"❌ {e}")
        code = 1

    if record is not None:
        record.completed = 1
        record.exit_code = code
        record.report = clean(report.to_json())
        record.error = report.error or ""
        record.status = ExperimentRun.Status.FAILED if report.error else ExperimentRun.Status.DONE
        record.save()

    marker = "✅" if code == 0 else ("⚠️" if code == 2 else "❌")
    logger.info(f"{marker} ellikorn {args.subcommand}: код выхода {code}")
    return code
