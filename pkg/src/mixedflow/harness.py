"""Built-in manufactured problems, study orchestration and configuration.

Two manufactured example problems are built in:

``example1``      law (1, 1, 1) with alpha = 1/2, alpha_1 = 1; density
                  (e^-t + e^-2t + e^-4t)(x1 + x2)/sqrt(2), spatially
                  constant momentum -e^-2t (1, 1)/sqrt(2).
``example2_F2``   law (0.95, 1, 0.95) with its own manufactured data of the
                  same shape (weights 0.95, 1, 0.95).
``example2_F1``   law (1, 1, 1) paired with example2_F2's data; no exact
                  solution is attached (the pair is not manufactured for
                  this law).  Used by the shared-data variant of the
                  dependence study.

The dependence study solves two problems per level and measures the norms
of the discrete-solution differences.  Its default pairing solves each law
with its own manufactured data ("manufactured"); the "shared_data" pairing
instead solves both laws against example2_F2's data.  With shared data the
two exact solutions differ by a fixed, h-independent momentum gap (the two
laws invert the same pressure gradient differently), so the difference
norms plateau instead of decaying; the manufactured pairing is the one
whose difference norms keep decreasing under refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .analysis import (InequalityReport, LevelResult, final_time_errors,
                       format_table, gronwall_check, inequality_suite,
                       rates, report_to_csv, sample_gronwall_sequences)
from .assembly import (Assembler, DiscretizationOptions, ExactSolution,
                       ProblemData, SystemState)
from .constitutive import (CoefficientVector, GeneralizedPolynomial,
                           PowerSpec)
from .mesh_fem import (QuadratureRule, ScalarP1Space, StructuredTriMesh,
                       VectorP1Space, build_mesh, norm)
from .solver import LinearSolver, MarchConfig, NewtonConfig, march

__all__ = [
    "StudyConfig",
    "StudyReport",
    "builtin_problem",
    "BUILTIN_PROBLEMS",
    "manufactured_problem",
    "consistency_defects",
    "jacobian_fd_error",
    "run_single",
    "run_convergence",
    "run_dependence",
    "run_verify",
    "parse_config_text",
]

SQRT2 = math.sqrt(2.0)


def manufactured_problem(law: GeneralizedPolynomial, name: str) -> ProblemData:
    """Manufactured problem with constant momentum, valid for any law.

    The momentum -e^{-2t} (1, 1)/sqrt(2) has magnitude e^{-2t}, so
    F(|m|) m = -(sum_i a_i e^{-2(1+alpha_i) t}) (1, 1)/sqrt(2); choosing the
    density rho = (sum_i a_i e^{-2(1+alpha_i) t})(x1 + x2)/sqrt(2) closes the
    momentum law exactly, and f = rho_t closes the divergence-free mass
    balance.  The built-in example problems are its (1,1,1) and
    (0.95,1,0.95) instances.
    """
    a = law.coefficients(0.0)
    decay = 2.0 * (1.0 + law.spec.all_exponents())

    def coef(t):
        return sum(ai * np.exp(-di * t) for ai, di in zip(a, decay)) / SQRT2

    def coef_dt(t):
        return sum(-di * ai * np.exp(-di * t) for ai, di in zip(a, decay)) / SQRT2

    def rho(x, t):
        return coef(t) * (x[..., 0] + x[..., 1])

    def m_exact(x, t):
        out = np.empty(np.shape(x), dtype=float)
        out[...] = -np.exp(-2.0 * t) / SQRT2
        return out

    def f(x, t):
        return coef_dt(t) * (x[..., 0] + x[..., 1])

    def grad_psi(x, t):
        out = np.empty(np.shape(x), dtype=float)
        out[...] = coef(t)
        return out

    def rho0(x):
        return rho(x, 0.0)

    return ProblemData(
        law=law,
        phi=lambda x: np.ones(np.shape(x)[:-1]),
        f=f, psi=rho, psi_t=f, grad_psi=grad_psi, rho0=rho0,
        final_time=1.0, phi_bounds=(1.0, 1.0),
        exact=ExactSolution(rho=rho, m=m_exact), name=name)


def _law(coefficients: Sequence[float], alpha: float = 0.5,
         exponents: Sequence[float] = (1.0,), eps_reg: float = 1e-10,
         a_star: float | None = None, a_sup: float | None = None
         ) -> GeneralizedPolynomial:
    return GeneralizedPolynomial(
        PowerSpec(alpha, exponents),
        CoefficientVector(coefficients, a_star=a_star, a_sup=a_sup),
        eps_reg=eps_reg)


def _example1() -> ProblemData:
    return manufactured_problem(_law((1.0, 1.0, 1.0)), "example1")


def _example2_f2() -> ProblemData:
    return manufactured_problem(_law((0.95, 1.0, 0.95)), "example2_F2")


def _example2_f1() -> ProblemData:
    base = _example2_f2()
    return replace(base, law=_law((1.0, 1.0, 1.0)), exact=None,
                   name="example2_F1")


BUILTIN_PROBLEMS: dict[str, Callable[[], ProblemData]] = {
    "example1": _example1,
    "example2_F2": _example2_f2,
    "example2_F1": _example2_f1,
}


def builtin_problem(name: str) -> ProblemData:
    try:
        return BUILTIN_PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown builtin problem {name!r}; "
                         f"choose from {sorted(BUILTIN_PROBLEMS)}") from None


def consistency_defects(data: ProblemData, n_points: int = 100,
                        seed: int = 0) -> tuple[float, float]:
    """Max pointwise defects of the manufactured fields at random (x, t).

    Returns (momentum-law defect, mass-balance defect).  The built-in
    momentum fields are divergence free, so the mass balance reduces to
    rho_t = f / phi, checked through finite differences in t.
    """
    if data.exact is None:
        raise ValueError("consistency check needs an exact solution")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n_points, 2))
    ts = rng.uniform(0.0, data.final_time, size=n_points)
    law_defect = 0.0
    mass_defect = 0.0
    for t in np.unique(ts):
        m = np.asarray(data.exact.m(x, float(t)), dtype=float)
        gp = np.asarray(data.grad_psi(x, float(t)), dtype=float)
        flux = data.law.flux(m, float(t))
        law_defect = max(law_defect, float(np.max(np.abs(flux + gp))))
        try:
            # complex-step derivative: exact to roundoff for analytic rho(t)
            h = 1e-30
            rho_t = np.imag(np.asarray(data.exact.rho(x, complex(t, h)))) / h
        except TypeError:
            h = 1e-5
            rho_t = (np.asarray(data.exact.rho(x, float(t) + h))
                     - np.asarray(data.exact.rho(x, float(t) - h))) / (2.0 * h)
        f_val = np.asarray(data.f(x, float(t)), dtype=float)
        phi = np.asarray(data.phi(x), dtype=float)
        mass_defect = max(mass_defect,
                          float(np.max(np.abs(phi * rho_t - f_val))))
    return law_defect, mass_defect


def jacobian_fd_error(assembler: Assembler, state: SystemState,
                      state_prev: SystemState, dt: float,
                      step_scale: float = 1e-6) -> float:
    """Max entrywise relative deviation of the Jacobian from central differences."""
    x0 = np.concatenate([state.m, state.rho_bar])
    n_m = assembler.vector_space.n_dofs

    def residual_at(x):
        st = SystemState(x[n_m:], x[:n_m], state.t)
        return assembler.residual(st, state_prev, dt)

    jac = assembler.jacobian(state, dt).toarray()
    fd = np.empty_like(jac)
    for j in range(len(x0)):
        h = step_scale * (1.0 + abs(x0[j]))
        xp = x0.copy()
        xp[j] += h
        xm = x0.copy()
        xm[j] -= h
        fd[:, j] = (residual_at(xp) - residual_at(xm)) / (2.0 * h)
    scale = np.abs(jac).max()
    denom = np.maximum(np.abs(jac), 1e-6 * scale)
    return float(np.max(np.abs(fd - jac) / denom))


# ---------------------------------------------------------------------------
# Study configuration
# ---------------------------------------------------------------------------

_DEFAULT_LEVELS = (4, 8, 16, 32, 64, 128, 256)


@dataclass
class StudyConfig:
    """Configuration of one harness invocation."""

    study: str = "convergence"
    problem: str = "example1"
    levels: tuple[int, ...] = _DEFAULT_LEVELS
    dt_ratio: float = 0.5
    final_time: float = 1.0
    # constitutive parameters (dependence study and verify suite)
    alpha: float = 0.5
    exponents: tuple[float, ...] = (1.0,)
    coefficients_a: tuple[float, ...] = (1.0, 1.0, 1.0)
    coefficients_b: tuple[float, ...] = (0.95, 1.0, 0.95)
    eps_reg: float = 1e-10
    pairing: str = "manufactured"  # or "shared_data"
    # solver settings
    newton_tol: float = 1e-6
    newton_max_iter: int = 30
    newton_damping: bool = False
    linear_mode: str = "direct"
    check_linear: bool = False
    # discretization switches
    psi_t_mode: str = "discrete"
    pin_rho_boundary: bool = False
    momentum_bc: str = "none"
    quad_order: int = 4
    # verification
    seed: int = 0
    trials: int = 10_000
    gronwall_trials: int = 1000
    # io
    out: str | None = None
    verbose: bool = False

    def __post_init__(self):
        if self.study not in ("single", "convergence", "dependence", "verify"):
            raise ValueError(f"unknown study {self.study!r}")
        levels = tuple(int(n) for n in self.levels)
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        for n in levels:
            k = n / 4.0
            if n < 4 or abs(k - 2 ** round(math.log2(k))) > 1e-12:
                raise ValueError(f"levels must be 4 * powers of two, got {n}")
        self.levels = levels
        if self.dt_ratio <= 0.0:
            raise ValueError("dt_ratio must be positive")
        if self.pairing not in ("manufactured", "shared_data"):
            raise ValueError(f"unknown pairing {self.pairing!r}")

    def discretization(self) -> DiscretizationOptions:
        return DiscretizationOptions(psi_t_mode=self.psi_t_mode,
                                     pin_rho_boundary=self.pin_rho_boundary,
                                     momentum_bc=self.momentum_bc,
                                     quad_order=self.quad_order)

    def newton(self) -> NewtonConfig:
        return NewtonConfig(tol=self.newton_tol, max_iter=self.newton_max_iter,
                            damping=self.newton_damping)

    def linear_solver(self) -> LinearSolver:
        return LinearSolver(mode=self.linear_mode, check=self.check_linear)

    def march_config(self, n: int) -> MarchConfig:
        return MarchConfig(dt=self.dt_ratio / n, final_time=self.final_time,
                           record_energies=True, verbose=self.verbose)

    def law_a(self) -> GeneralizedPolynomial:
        a_star, a_sup = self._box()
        return _law(self.coefficients_a, self.alpha, self.exponents,
                    self.eps_reg, a_star, a_sup)

    def law_b(self) -> GeneralizedPolynomial:
        a_star, a_sup = self._box()
        return _law(self.coefficients_b, self.alpha, self.exponents,
                    self.eps_reg, a_star, a_sup)

    def _box(self) -> tuple[float, float]:
        anchors = [self.coefficients_a[i] for i in (0, 1, -1)] \
            + [self.coefficients_b[i] for i in (0, 1, -1)]
        return min(anchors), max(max(self.coefficients_a),
                                 max(self.coefficients_b))


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_value(part) for part in raw.split(",") if part.strip())
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat 'key = value' lines; '#' starts a comment, lists use commas."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        out[key.strip()] = _parse_value(raw)
    return out


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

@dataclass
class StudyReport:
    study: str
    problem: str
    levels: list[LevelResult] = field(default_factory=list)
    energies: dict[int, list[tuple[float, float]]] = field(default_factory=dict)
    text: str = ""
    csv: str = ""


def _march_level(cfg: StudyConfig, data: ProblemData, n: int):
    mesh = build_mesh(n)
    final, diags = march(data, mesh, cfg.march_config(n), cfg.newton(),
                         cfg.discretization(), cfg.linear_solver())
    return mesh, final, diags


def run_single(cfg: StudyConfig) -> tuple[SystemState, list]:
    """Full march at the first configured level, with diagnostics."""
    data = builtin_problem(cfg.problem)
    n = cfg.levels[0]
    mesh, final, diags = _march_level(cfg, data, n)
    if cfg.out:
        nodal = final.m.reshape(-1, 2)
        with open(cfg.out, "w") as fh:
            fh.write("# x y rho_bar m_x m_y\n")
            for (x, y), r, (mx, my) in zip(mesh.nodes, final.rho_bar, nodal):
                fh.write(f"{float(x)!r} {float(y)!r} {float(r)!r} {float(mx)!r} {float(my)!r}\n")
    return final, diags


def run_convergence(cfg: StudyConfig) -> StudyReport:
    """Refinement study against the problem's manufactured solution."""
    data = builtin_problem(cfg.problem)
    if data.exact is None:
        raise ValueError(f"problem {cfg.problem!r} has no exact solution")
    report = StudyReport("convergence", cfg.problem)
    for n in cfg.levels:
        mesh, final, diags = _march_level(cfg, data, n)
        asm = Assembler(mesh, data, cfg.discretization())
        err_rho, err_m = final_time_errors(final, data, mesh, asm)
        report.levels.append(LevelResult(
            n_cells=n, h=1.0 / n, dt=cfg.dt_ratio / n,
            err_rho=err_rho, err_m=err_m,
            newton_total=sum(d.newton_iterations for d in diags)))
        report.energies[n] = [(d.energy_rho, d.energy_m_accum) for d in diags]
    report.levels = rates(report.levels)
    report.csv = report_to_csv(report.levels)
    report.text = format_table(report.levels)
    _emit(cfg, report)
    return report


def run_dependence(cfg: StudyConfig) -> StudyReport:
    """Difference-norm study between the two configured coefficient vectors."""
    if cfg.pairing == "manufactured":
        data_a = manufactured_problem(cfg.law_a(), "dependence_a")
        data_b = manufactured_problem(cfg.law_b(), "dependence_b")
    else:
        data_b = manufactured_problem(cfg.law_b(), "dependence_b")
        data_a = replace(data_b, law=cfg.law_a(), exact=None,
                         name="dependence_a")
    s = data_b.law.spec.s
    report = StudyReport("dependence", f"{cfg.pairing}")
    for n in cfg.levels:
        mesh, final_a, diags_a = _march_level(cfg, data_a, n)
        _, final_b, diags_b = _march_level(cfg, data_b, n)
        rule = QuadratureRule.on_triangle(cfg.quad_order)
        sspace = ScalarP1Space(mesh, rule)
        vspace = VectorP1Space(mesh, rule)
        err_rho = norm(sspace, final_a.rho_bar - final_b.rho_bar, 2.0)
        err_m = norm(vspace, final_a.m - final_b.m, s)
        report.levels.append(LevelResult(
            n_cells=n, h=1.0 / n, dt=cfg.dt_ratio / n,
            err_rho=err_rho, err_m=err_m,
            newton_total=sum(d.newton_iterations for d in diags_a + diags_b)))
    report.levels = rates(report.levels)
    report.csv = report_to_csv(report.levels)
    report.text = format_table(report.levels,
                               err_labels=("diff_rho(L2)", "diff_m(Ls)"))
    _emit(cfg, report)
    return report


@dataclass
class VerifyReport:
    inequality: InequalityReport
    gronwall_failures: int
    gronwall_trials: int
    jacobian_fd_max: float
    mesh_area_defect: float
    partition_defect: float
    quadrature_defect: float

    @property
    def ok(self) -> bool:
        return (self.inequality.total_violations == 0
                and self.gronwall_failures == 0
                and self.jacobian_fd_max <= 1e-5
                and self.mesh_area_defect <= 1e-14
                and self.partition_defect <= 1e-13
                and self.quadrature_defect <= 1e-13)

    def summary(self) -> str:
        lines = [self.inequality.summary()]
        lines.append(f"  gronwall       {'ok' if self.gronwall_failures == 0 else 'VIOLATED'}"
                     f"        failures={self.gronwall_failures}/{self.gronwall_trials}")
        lines.append(f"  jacobian_fd    {'ok' if self.jacobian_fd_max <= 1e-5 else 'VIOLATED'}"
                     f"        max_rel_err={self.jacobian_fd_max:.3e}")
        lines.append(f"  mesh/quadrature defects: area={self.mesh_area_defect:.2e} "
                     f"partition={self.partition_defect:.2e} "
                     f"polynomial={self.quadrature_defect:.2e}")
        lines.append("verification " + ("PASSED" if self.ok else "FAILED"))
        return "\n".join(lines)


def run_verify(cfg: StudyConfig) -> VerifyReport:
    """Randomized inequality suite, Gronwall sampling and discrete checks."""
    law = cfg.law_a()
    ineq = inequality_suite(law, seed=cfg.seed, trials=cfg.trials)

    rng = np.random.default_rng(cfg.seed)
    failures = 0
    for _ in range(cfg.gronwall_trials):
        n_steps = int(rng.integers(1, 40))
        dt = float(rng.uniform(0.01, 0.5))
        a, b, g = sample_gronwall_sequences(rng, n_steps, dt)
        if not gronwall_check(a, b, g, dt):
            failures += 1

    data = builtin_problem("example1")
    mesh = build_mesh(2)
    asm = Assembler(mesh, data, cfg.discretization())
    jac_err = 0.0
    for k in range(3):
        state, prev = _random_states(asm, rng)
        jac_err = max(jac_err, jacobian_fd_error(asm, state, prev, dt=0.1))

    mesh8 = build_mesh(8)
    area_defect = abs(mesh8.areas.sum() - 1.0)
    partition_defect = _partition_of_unity_defect(mesh8, rng)
    quad_defect = _quadrature_polynomial_defect()

    return VerifyReport(inequality=ineq, gronwall_failures=failures,
                        gronwall_trials=cfg.gronwall_trials,
                        jacobian_fd_max=jac_err,
                        mesh_area_defect=area_defect,
                        partition_defect=partition_defect,
                        quadrature_defect=quad_defect)


def _random_states(asm: Assembler, rng: np.random.Generator
                   ) -> tuple[SystemState, SystemState]:
    """Random smooth states biased away from the law's singular origin."""
    nv = asm.mesh.n_nodes
    base = np.tile([0.8, -0.6], nv)
    m = base + 0.3 * rng.standard_normal(2 * nv)
    rho = rng.standard_normal(nv)
    prev = SystemState(rho + 0.1 * rng.standard_normal(nv),
                       m + 0.1 * rng.standard_normal(2 * nv), 0.4)
    return SystemState(rho, m, 0.5), prev


def _partition_of_unity_defect(mesh: StructuredTriMesh,
                               rng: np.random.Generator) -> float:
    space = ScalarP1Space(mesh)
    ones = np.ones(space.n_dofs)
    pts = rng.uniform(0.0, 1.0, size=(100, 2))
    # evaluate the all-ones P1 field through barycentric location
    n = mesh.n_cells_per_side
    defect = 0.0
    for x, y in pts:
        i = min(int(x * n), n - 1)
        j = min(int(y * n), n - 1)
        xi, eta = x * n - i, y * n - j
        lam = (1 - max(xi, eta), abs(xi - eta), min(xi, eta))
        defect = max(defect, abs(sum(lam) - 1.0))
    return defect


def _quadrature_polynomial_defect() -> float:
    """Compare degree <= 4 monomial quadrature on [0,1]^2 with closed forms."""
    mesh = build_mesh(3)
    space = ScalarP1Space(mesh, QuadratureRule.on_triangle(4))
    qpts = space.quadrature_coords()
    defect = 0.0
    for px in range(5):
        for py in range(5 - px):
            vals = qpts[..., 0] ** px * qpts[..., 1] ** py
            exact = 1.0 / ((px + 1) * (py + 1))
            defect = max(defect, abs(space.integrate(vals) - exact))
    return defect


def _emit(cfg: StudyConfig, report: StudyReport) -> None:
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(report.csv)
    if cfg.verbose:
        print(report.text)
