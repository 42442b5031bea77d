"""Finite-difference fields on truncated cylinders (-L, L) x omega.

Provides the cylinder energy, a semi-implicit gradient-flow relaxation
toward solutions of Delta u = grad W(u) / 2 with lateral Neumann
conditions, and the slice diagnostics behind the trace-convergence,
Jensen, Hoelder and total-variation checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .cross_section import SectionField, SectionGrid, section_energy
from .curve import Curve
from .potential import (
    PotentialError,
    PotentialSpec,
    Well,
    eval_potential,
    grad_potential,
)

__all__ = [
    "EndCondition",
    "CylinderGrid",
    "CylinderField",
    "SliceDiagnostics",
    "RelaxOptions",
    "RunReport",
    "TraceOptions",
    "TraceVerdict",
    "VTable",
    "OutsideTableError",
    "NumericalAbortError",
    "StepUnderflowError",
    "cylinder_energy",
    "slice_decomposition_energy",
    "relax",
    "stationarity_residual",
    "slice_diagnostics",
    "jensen_check",
    "build_v_table",
    "holder_check",
    "trace_convergence_verdict",
    "make_initial",
    "constant_well_field",
    "heteroclinic_extension",
    "perturb_field",
    "two_connection_interp",
    "divergence_free_perturbation",
    "cylinder_field_to_csv",
    "slice_table_to_csv",
]


class NumericalAbortError(RuntimeError):
    """The relaxation produced a non-finite energy."""


class StepUnderflowError(RuntimeError):
    """Energy-monotone step control halved the time step below 1e-14."""


class OutsideTableError(ValueError):
    """An average left the tabulated range of the interpolated potential."""


@dataclass(frozen=True)
class EndCondition:
    kind: str  # "neumann" or "clamped"
    w_minus: Optional[tuple] = None
    w_plus: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("neumann", "clamped"):
            raise ValueError("end condition must be 'neumann' or 'clamped'")
        if self.kind == "clamped" and (self.w_minus is None or self.w_plus is None):
            raise ValueError("clamped ends need both well values")

    @staticmethod
    def neumann() -> "EndCondition":
        return EndCondition("neumann")

    @staticmethod
    def clamped(w_minus, w_plus) -> "EndCondition":
        return EndCondition(
            "clamped",
            tuple(float(v) for v in np.atleast_1d(w_minus)),
            tuple(float(v) for v in np.atleast_1d(w_plus)),
        )


@dataclass(frozen=True)
class CylinderGrid:
    """Uniform grid on (-L, L) x omega with M1 axial nodes."""

    length: float
    axial_nodes: int
    section: SectionGrid
    end_condition: EndCondition = field(default_factory=EndCondition.neumann)

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.axial_nodes < 16:
            raise ValueError("need at least 16 axial nodes")

    @property
    def h1(self) -> float:
        return 2.0 * self.length / (self.axial_nodes - 1)

    def x1(self) -> np.ndarray:
        return np.linspace(-self.length, self.length, self.axial_nodes)

    def axial_weights(self) -> np.ndarray:
        w = np.full(self.axial_nodes, self.h1)
        w[0] = w[-1] = 0.5 * self.h1
        return w


@dataclass(frozen=True)
class CylinderField:
    grid: CylinderGrid
    values: np.ndarray  # (M1,) + section node shape + (N,)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (self.grid.axial_nodes,) + self.grid.section.node_shape
        if values.shape[:-1] != expected:
            raise ValueError(
                f"values shape {values.shape} does not match grid {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("cylinder field values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def n_components(self) -> int:
        return self.values.shape[-1]

    def slice_field(self, k: int) -> SectionField:
        return SectionField(self.grid.section, self.values[k])

    def flat(self) -> np.ndarray:
        """(M1 * section nodes, N) view in axial-major order."""
        return self.values.reshape(-1, self.n_components)

    def with_values(self, values) -> "CylinderField":
        return CylinderField(self.grid, values)


def _check_cyl_spec(u: CylinderField, spec: PotentialSpec):
    if u.n_components != spec.dimension:
        raise PotentialError("field components do not match potential dimension")
    if spec.masked():
        raise PotentialError("cylinder energies require finite-valued potentials")


def _axial_kinetic(u: CylinderField) -> float:
    """Forward differences on axial cells, integrated over the section."""
    h1 = u.grid.h1
    w_sec = u.grid.section.weights_flat
    vals = u.values.reshape(u.grid.axial_nodes, -1, u.n_components)
    diffs = (vals[1:] - vals[:-1]) / h1
    per_cell = np.einsum("s,ksc->k", w_sec, diffs ** 2)
    return float(h1 * np.sum(per_cell))


def _transverse_grad_sq(u: CylinderField) -> np.ndarray:
    """sum_s w_s |grad' u|^2 per axial node."""
    sec = u.grid.section
    vals = u.values.reshape(u.grid.axial_nodes, sec.n_nodes, u.n_components)
    out = np.zeros(u.grid.axial_nodes)
    moved = vals.transpose(1, 0, 2).reshape(sec.n_nodes, -1)
    for D in sec.diff_ops:
        dv = (D @ moved).reshape(sec.n_nodes, u.grid.axial_nodes, u.n_components)
        out += np.einsum("s,skc->k", sec.weights_flat, dv ** 2)
    return out


def cylinder_energy(u: CylinderField, spec: PotentialSpec) -> float:
    """E(u) = int(|grad u|^2 + W(u)) with the package's grid conventions."""
    _check_cyl_spec(u, spec)
    sec = u.grid.section
    vals = u.values.reshape(u.grid.axial_nodes, sec.n_nodes, u.n_components)
    pot = np.asarray(eval_potential(spec, vals), dtype=float)
    per_node = _transverse_grad_sq(u) + pot @ sec.weights_flat
    return float(_axial_kinetic(u) + u.grid.axial_weights() @ per_node)


def slice_decomposition_energy(u: CylinderField, spec: PotentialSpec) -> float:
    """Same energy assembled slice by slice through the section-energy path."""
    _check_cyl_spec(u, spec)
    slice_e = np.array(
        [section_energy(u.slice_field(k), spec) for k in range(u.grid.axial_nodes)]
    )
    return float(_axial_kinetic(u) + u.grid.axial_weights() @ slice_e)


# ---------------------------------------------------------------------------
# Relaxation
# ---------------------------------------------------------------------------


def _build_operators(grid: CylinderGrid):
    """Stiffness K (quadratic energy = u^T K u) and diagonal mass vector."""
    M1 = grid.axial_nodes
    sec = grid.section
    h1 = grid.h1
    d = sparse.diags([-np.ones(M1 - 1), np.ones(M1 - 1)], [0, 1], shape=(M1 - 1, M1))
    K_ax = (d.T @ d) / h1
    M_ax = sparse.diags(grid.axial_weights())
    M_sec = sparse.diags(sec.weights_flat)
    K = sparse.kron(K_ax, M_sec) + sparse.kron(M_ax, sec.stiffness)
    mass = np.kron(grid.axial_weights(), sec.weights_flat)
    return K.tocsr(), mass


@dataclass
class RelaxOptions:
    dt: float = 0.1
    stall: float = 1e-10
    max_steps: int = 5000
    residual_tol: Optional[float] = None
    cg_tol: float = 1e-10
    seed: Optional[int] = None


@dataclass
class RunReport:
    energy_history: list
    final_energy: float
    slices: list
    verdicts: dict
    config: dict
    converged: bool
    residual: float
    steps_accepted: int


def stationarity_residual(u: CylinderField, spec: PotentialSpec,
                          operators=None) -> float:
    """Max norm of Delta_h u - grad W(u)/2 over the free nodes."""
    _check_cyl_spec(u, spec)
    K, mass = operators if operators is not None else _build_operators(u.grid)
    flat = u.flat()
    lap = -(K @ flat) / mass[:, None]
    res = lap - 0.5 * grad_potential(spec, flat)
    res = res.reshape(u.grid.axial_nodes, -1, u.n_components)
    if u.grid.end_condition.kind == "clamped":
        res = res[1:-1]
    return float(np.max(np.linalg.norm(res, axis=-1)))


def relax(
    u0: CylinderField,
    spec: PotentialSpec,
    opts: Optional[RelaxOptions] = None,
    wells: Optional[Sequence[Well]] = None,
    a: Optional[float] = None,
) -> tuple:
    """Semi-implicit gradient flow for the cylinder energy.

    Each step solves (M + 2 dt K) u_new = M (u - dt grad W(u)) by conjugate
    gradients (warm-started, residual tolerance opts.cg_tol); the Laplacian
    is implicit, the nonlinearity explicit.  Steps that would raise the
    energy are retried with dt halved, so the recorded energy history is
    non-increasing.  Stops when the energy decrease per accepted step falls
    below opts.stall (and, if opts.residual_tol is set, the stationarity
    residual is below it), or at opts.max_steps.
    """
    opts = opts or RelaxOptions()
    _check_cyl_spec(u0, spec)
    grid = u0.grid
    end = grid.end_condition
    if end.kind == "clamped":
        wm = np.asarray(end.w_minus, dtype=float)
        wp = np.asarray(end.w_plus, dtype=float)
        for k, w in ((0, wm), (-1, wp)):
            if float(np.max(np.abs(u0.values[k] - w))) > 1e-8:
                raise PotentialError(
                    "clamped end slices must equal the declared wells"
                )

    K, mass = _build_operators(grid)
    n_total = K.shape[0]
    M_sp = sparse.diags(mass)
    sec_nodes = grid.section.n_nodes
    if end.kind == "clamped":
        free = np.ones(n_total, dtype=bool)
        free[:sec_nodes] = False
        free[-sec_nodes:] = False
    else:
        free = np.ones(n_total, dtype=bool)

    u = u0.values.copy()
    energy = cylinder_energy(u0, spec)
    if not math.isfinite(energy):
        raise NumericalAbortError("initial energy is not finite")
    history = [energy]
    dt = opts.dt
    accepted = 0
    converged = False
    A = (M_sp + 2.0 * dt * K).tocsr()
    A_ff = A[free][:, free]
    A_fc = A[free][:, ~free]

    def solve_step(u_flat, dt, A_ff, A_fc):
        gw = grad_potential(spec, u_flat)
        b = mass[:, None] * (u_flat - dt * gw)
        out = u_flat.copy()
        for c in range(u_flat.shape[1]):
            rhs = b[free, c]
            if A_fc.shape[1]:
                rhs = rhs - A_fc @ u_flat[~free, c]
            x, info = cg(
                A_ff, rhs, x0=u_flat[free, c], rtol=1e-12, atol=opts.cg_tol
            )
            if info != 0:
                raise NumericalAbortError(f"cg failed to converge (info={info})")
            out[free, c] = x
        return out

    for _ in range(opts.max_steps):
        u_flat = u.reshape(n_total, -1)
        while True:
            trial = solve_step(u_flat, dt, A_ff, A_fc)
            trial_field = CylinderField(grid, trial.reshape(u.shape))
            e_trial = cylinder_energy(trial_field, spec)
            if not math.isfinite(e_trial):
                raise NumericalAbortError("energy became non-finite during relaxation")
            if e_trial <= energy + 1e-12 * (1.0 + abs(energy)):
                break
            dt *= 0.5
            if dt < 1e-14:
                raise StepUnderflowError("time step control underflowed")
            A = (M_sp + 2.0 * dt * K).tocsr()
            A_ff = A[free][:, free]
            A_fc = A[free][:, ~free]
        decrease = energy - e_trial
        u = trial.reshape(u.shape)
        energy = e_trial
        history.append(energy)
        accepted += 1
        if decrease < opts.stall:
            field_now = CylinderField(grid, u)
            if opts.residual_tol is None:
                converged = True
                break
            if stationarity_residual(field_now, spec, (K, mass)) <= opts.residual_tol:
                converged = True
                break

    result = CylinderField(grid, u)
    residual = stationarity_residual(result, spec, (K, mass))
    slices = (
        slice_diagnostics(result, spec, wells, a) if wells is not None else []
    )
    report = RunReport(
        energy_history=history,
        final_energy=energy,
        slices=slices,
        verdicts={},
        config={
            "dt": dt,
            "dt_initial": opts.dt,
            "stall": opts.stall,
            "max_steps": opts.max_steps,
            "residual_tol": opts.residual_tol,
            "cg_tol": opts.cg_tol,
            "seed": opts.seed,
            "end_condition": end.kind,
            "L": grid.length,
            "M1": grid.axial_nodes,
            "section_kind": grid.section.kind,
            "P": grid.section.points_per_axis,
        },
        converged=converged,
        residual=residual,
        steps_accepted=accepted,
    )
    return result, report


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SliceDiagnostics:
    x1: float
    dist_to_well: tuple
    average: tuple
    slice_e: float
    kinetic: float
    average_first_component: Optional[float] = None
    div_residual: Optional[float] = None


def slice_diagnostics(
    u: CylinderField,
    spec: PotentialSpec,
    wells: Sequence[Well],
    a: Optional[float] = None,
) -> list:
    """Per-slice record: distances to wells, average, slice energy, kinetic density."""
    _check_cyl_spec(u, spec)
    if not wells:
        raise ValueError("need a nonempty well list")
    grid = u.grid
    sec = grid.section
    locs = np.array([w.location_array() for w in wells])
    vals = u.values.reshape(grid.axial_nodes, sec.n_nodes, u.n_components)
    w_sec = sec.weights_flat

    d1 = np.gradient(vals, grid.h1, axis=0)
    kinetic = np.einsum("s,ksc->k", w_sec, d1 ** 2)
    averages = np.einsum("s,ksc->kc", w_sec, vals)
    dists = np.sqrt(
        np.maximum(
            np.einsum(
                "s,kwsc->kw",
                w_sec,
                (vals[:, None, :, :] - locs[None, :, None, :]) ** 2,
            ),
            0.0,
        )
    )

    div = None
    if (
        a is not None
        and sec.kind == "torus"
        and u.n_components == sec.dim + 1
    ):
        shaped = u.values
        div_field = np.gradient(shaped[..., 0], grid.h1, axis=0)
        for j in range(sec.dim):
            axis = 1 + j
            comp = shaped[..., 1 + j]
            div_field = div_field + (
                np.roll(comp, -1, axis=axis) - np.roll(comp, 1, axis=axis)
            ) / (2.0 * sec.h)
        div = np.max(np.abs(div_field.reshape(grid.axial_nodes, -1)), axis=1)

    out = []
    x1 = grid.x1()
    for k in range(grid.axial_nodes):
        out.append(
            SliceDiagnostics(
                x1=float(x1[k]),
                dist_to_well=tuple(float(v) for v in dists[k]),
                average=tuple(float(v) for v in averages[k]),
                slice_e=section_energy(u.slice_field(k), spec),
                kinetic=float(kinetic[k]),
                average_first_component=(
                    float(averages[k][0]) if a is not None else None
                ),
                div_residual=(float(div[k]) if div is not None else None),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Jensen bound against the averaged potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VTable:
    """Linear interpolation of averaged-potential values on a z grid (N = 1)."""

    z_nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if z.ndim != 1 or z.shape != v.shape:
            raise ValueError("table nodes/values must be matching 1-d arrays")
        if not np.all(np.diff(z) > 0):
            raise ValueError("table nodes must be strictly increasing")
        object.__setattr__(self, "z_nodes", z)
        object.__setattr__(self, "values", v)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if np.any(z < self.z_nodes[0] - 1e-12) or np.any(z > self.z_nodes[-1] + 1e-12):
            raise OutsideTableError(
                f"average range [{z.min():.4g}, {z.max():.4g}] leaves the table "
                f"[{self.z_nodes[0]:.4g}, {self.z_nodes[-1]:.4g}]"
            )
        return np.interp(z, self.z_nodes, self.values)


def build_v_table(spec, z_nodes, grid: SectionGrid, opts=None) -> VTable:
    """Tabulate averaged_potential over a 1-d z grid (scalar potentials)."""
    from .cross_section import averaged_potential

    if spec.dimension != 1:
        raise PotentialError("v tables are supported for scalar potentials")
    values = [
        averaged_potential(spec, np.array([z]), grid, opts).value for z in z_nodes
    ]
    return VTable(np.asarray(z_nodes, dtype=float), np.asarray(values))


def jensen_check(
    u: CylinderField,
    spec: PotentialSpec,
    v_table: VTable,
    interval: tuple,
) -> float:
    """(1/|omega|) E(u, I x omega) minus the averaged 1-d energy of u-bar on I.

    Non-negative up to quadrature and table-interpolation slack: the axial
    kinetic comparison is an exact discrete Jensen inequality, and the
    table entries are upper estimates of the averaged potential.
    """
    _check_cyl_spec(u, spec)
    if spec.dimension != 1:
        raise PotentialError("jensen_check uses a scalar v table")
    lo, hi = interval
    x1 = u.grid.x1()
    idx = np.where((x1 >= lo - 1e-12) & (x1 <= hi + 1e-12))[0]
    if len(idx) < 2:
        raise ValueError("interval contains fewer than two axial nodes")
    i0, i1 = int(idx[0]), int(idx[-1])
    h1 = u.grid.h1
    sec = u.grid.section
    vals = u.values.reshape(u.grid.axial_nodes, sec.n_nodes, u.n_components)

    sub = vals[i0 : i1 + 1]
    diffs = (sub[1:] - sub[:-1]) / h1
    axial_kin = h1 * float(np.einsum("s,ksc->", sec.weights_flat, diffs ** 2))
    trap = np.full(i1 - i0 + 1, h1)
    trap[0] = trap[-1] = 0.5 * h1
    slice_e = np.array(
        [section_energy(u.slice_field(k), spec) for k in range(i0, i1 + 1)]
    )
    lhs = axial_kin + float(trap @ slice_e)

    ubar = np.einsum("s,ksc->kc", sec.weights_flat, sub)[:, 0]
    dbar = (ubar[1:] - ubar[:-1]) / h1
    rhs = h1 * float(np.sum(dbar ** 2)) + float(trap @ v_table(ubar))
    return lhs - rhs


def holder_check(u: CylinderField, n_pairs: int = 200, seed: int = 0) -> float:
    """Worst ratio d(u(t), u(s))^2 / (|t-s| |d1 u|^2) over random slice pairs.

    The 0/0 case (constant fields) counts as ratio 0.  The discrete
    Cauchy-Schwarz structure keeps the ratio at or below 1 up to the cell
    quadrature mismatch at the interval ends.
    """
    grid = u.grid
    sec = grid.section
    vals = u.values.reshape(grid.axial_nodes, sec.n_nodes, u.n_components)
    kinetic = _axial_kinetic(u)
    rng = np.random.default_rng(seed)
    x1 = grid.x1()
    worst = 0.0
    for _ in range(n_pairs):
        i, j = rng.integers(0, grid.axial_nodes, size=2)
        if i == j:
            continue
        diff = vals[i] - vals[j]
        d2 = float(sec.weights_flat @ np.sum(diff ** 2, axis=1))
        denom = abs(x1[i] - x1[j]) * kinetic
        ratio = 0.0 if d2 == 0.0 else d2 / denom
        worst = max(worst, ratio)
    return worst


# ---------------------------------------------------------------------------
# Trace convergence verdict
# ---------------------------------------------------------------------------


@dataclass
class TraceOptions:
    trace_tol: float = 1e-2
    a_tol: float = 1e-6
    div_tol: Optional[float] = None
    theorem2: bool = False
    a: Optional[float] = None
    declared_divergence_free: bool = False


@dataclass(frozen=True)
class TraceVerdict:
    passed: bool
    u_minus: tuple
    u_plus: tuple
    failures: tuple
    margins: dict


def trace_convergence_verdict(
    diags: Sequence[SliceDiagnostics],
    wells: Sequence[Well],
    opts: Optional[TraceOptions] = None,
) -> TraceVerdict:
    """Pass/fail record of trace convergence to wells on the outer slices.

    Picks the nearest well at each end, then requires the L2 distance and
    the average deviation to stay below trace_tol on the outer 10% of
    slices.  In the theorem2 flavor the first-component average must equal
    a across all slices, and declared divergence-free fields must keep the
    divergence residual below div_tol.
    """
    opts = opts or TraceOptions()
    if not diags:
        raise ValueError("empty diagnostics")
    locs = [w.location_array() for w in wells]
    n = len(diags)
    n_outer = max(1, math.ceil(0.1 * n))
    failures = []
    margins: dict = {}

    k_minus = int(np.argmin(diags[0].dist_to_well))
    k_plus = int(np.argmin(diags[-1].dist_to_well))
    u_minus, u_plus = locs[k_minus], locs[k_plus]

    for label, sel, k_well, w in (
        ("minus", range(0, n_outer), k_minus, u_minus),
        ("plus", range(n - n_outer, n), k_plus, u_plus),
    ):
        worst_d = max(diags[i].dist_to_well[k_well] for i in sel)
        worst_avg = max(
            float(np.linalg.norm(np.asarray(diags[i].average) - w)) for i in sel
        )
        margins[f"dist_{label}"] = worst_d
        margins[f"avg_{label}"] = worst_avg
        if worst_d > opts.trace_tol:
            failures.append(f"{label} end: slice distance {worst_d:.3e} > trace_tol")
        if worst_avg > opts.trace_tol:
            failures.append(f"{label} end: average deviation {worst_avg:.3e} > trace_tol")

    if opts.theorem2:
        if opts.a is None:
            raise ValueError("theorem2 verdict needs the average level a")
        devs = [
            abs(d.average_first_component - opts.a)
            for d in diags
            if d.average_first_component is not None
        ]
        if len(devs) != n:
            failures.append("first-component averages missing from diagnostics")
        else:
            worst_a = max(devs)
            margins["a_deviation"] = worst_a
            if worst_a > opts.a_tol:
                failures.append(
                    f"first-component average deviates {worst_a:.3e} > a_tol"
                )
        if opts.declared_divergence_free and opts.div_tol is not None:
            divs = [d.div_residual for d in diags if d.div_residual is not None]
            worst_div = max(divs) if divs else float("inf")
            margins["div_residual"] = worst_div
            if worst_div > opts.div_tol:
                failures.append(f"divergence residual {worst_div:.3e} > div_tol")

    return TraceVerdict(
        passed=not failures,
        u_minus=tuple(float(v) for v in u_minus),
        u_plus=tuple(float(v) for v in u_plus),
        failures=tuple(failures),
        margins=margins,
    )


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------


def constant_well_field(grid: CylinderGrid, well) -> CylinderField:
    w = np.atleast_1d(np.asarray(well, dtype=float))
    shape = (grid.axial_nodes,) + grid.section.node_shape + (len(w),)
    return CylinderField(grid, np.broadcast_to(w, shape).copy())


def heteroclinic_extension(grid: CylinderGrid, curve: Curve) -> CylinderField:
    """x'-independent field tracing the curve along the axis (clamped tails)."""
    x1 = grid.x1()
    t = curve.nodes()
    profile = np.column_stack(
        [np.interp(x1, t, curve.samples[:, j]) for j in range(curve.n_components)]
    )
    shape = (grid.axial_nodes,) + grid.section.node_shape + (curve.n_components,)
    vals = np.zeros(shape)
    vals[...] = profile.reshape(
        (grid.axial_nodes,) + (1,) * len(grid.section.node_shape) + (curve.n_components,)
    )
    return CylinderField(grid, vals)


def perturb_field(
    base: CylinderField, seed: int, amplitude: float, n_modes: int = 3
) -> CylinderField:
    """Reproducible smooth perturbation, vanishing on the end slices."""
    from .cross_section import random_smooth_field

    grid = base.grid
    rng = np.random.default_rng(seed)
    x1 = grid.x1()
    s = (x1 - x1[0]) / (x1[-1] - x1[0])
    out = np.zeros_like(base.values)
    for k in range(1, n_modes + 1):
        axial = np.sin(np.pi * k * s)
        sec_mode = random_smooth_field(
            grid.section, base.n_components, rng, amplitude=1.0, n_modes=n_modes
        )
        out += axial.reshape((-1,) + (1,) * (out.ndim - 1)) * sec_mode[None, ...]
    peak = float(np.max(np.abs(out)))
    if peak > 0:
        out *= amplitude / peak
    return CylinderField(grid, base.values + out)


def two_connection_interp(
    grid: CylinderGrid, curve_a: Curve, curve_b: Curve
) -> CylinderField:
    """Blend two connections across the section (exploratory initial data)."""
    fa = heteroclinic_extension(grid, curve_a).values
    fb = heteroclinic_extension(grid, curve_b).values
    x = grid.section.axis_coords
    lam = x if grid.section.kind == "interval" else 0.5 * (1.0 - np.cos(2 * np.pi * x))
    if grid.section.dim == 1:
        lam_full = lam.reshape(1, -1, 1)
    else:
        lam_full = lam.reshape(1, -1, 1, 1)
    return CylinderField(grid, (1.0 - lam_full) * fa + lam_full * fb)


def divergence_free_perturbation(
    grid: CylinderGrid,
    amplitude: float,
    envelope_width: float = 3.0,
    mode: int = 1,
    phase: float = 0.0,
) -> np.ndarray:
    """Stream-function increment (delta_1, delta_2) = (D' psi, -D_1 psi).

    Defined for a one-dimensional torus section and two components.  Both
    derivatives are the same centered stencils the diagnostics use, so the
    discrete divergence vanishes to roundoff and the slice average of
    delta_1 is exactly zero (perfect periodic cancellation).
    """
    sec = grid.section
    if sec.kind != "torus" or sec.dim != 1:
        raise ValueError("divergence-free construction needs a 1-d torus section")
    x1 = grid.x1()
    xp = sec.axis_coords
    envelope = np.exp(-((x1 / envelope_width) ** 2))
    psi = amplitude * envelope[:, None] * np.cos(2 * np.pi * mode * xp + phase)[None, :]
    dpsi_dxp = (np.roll(psi, -1, axis=1) - np.roll(psi, 1, axis=1)) / (2.0 * sec.h)
    dpsi_dx1 = np.gradient(psi, grid.h1, axis=0)
    out = np.zeros((grid.axial_nodes, sec.points_per_axis, 2))
    out[..., 0] = dpsi_dxp
    out[..., 1] = -dpsi_dx1
    return out


_INITIAL_KINDS = (
    "constant_well",
    "heteroclinic_extension",
    "perturbed",
    "two_connection_interp",
)


def make_initial(grid: CylinderGrid, kind: str, **params) -> CylinderField:
    """Deterministic initial-condition factory (see _INITIAL_KINDS)."""
    if kind == "constant_well":
        return constant_well_field(grid, params["well"])
    if kind == "heteroclinic_extension":
        return heteroclinic_extension(grid, params["curve"])
    if kind == "perturbed":
        base = params.get("base")
        if base is None:
            base = heteroclinic_extension(grid, params["curve"])
        return perturb_field(base, params["seed"], params["amplitude"])
    if kind == "two_connection_interp":
        return two_connection_interp(grid, params["curve_a"], params["curve_b"])
    raise ValueError(f"unknown initial kind {kind!r}; choose from {_INITIAL_KINDS}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def cylinder_field_to_csv(u: CylinderField) -> str:
    grid = u.grid
    coords = grid.section.coords()
    header = ",".join(
        ["x1"]
        + [f"x{j + 2}" for j in range(grid.section.dim)]
        + [f"u{j + 1}" for j in range(u.n_components)]
    )
    rows = [header]
    x1 = grid.x1()
    flat = u.values.reshape(grid.axial_nodes, grid.section.n_nodes, u.n_components)
    for k in range(grid.axial_nodes):
        for s in range(grid.section.n_nodes):
            rows.append(
                ",".join(
                    f"{v:.17g}" for v in (x1[k], *coords[s], *flat[k, s])
                )
            )
    return "\n".join(rows) + "\n"


def slice_table_to_csv(diags: Sequence[SliceDiagnostics]) -> str:
    if not diags:
        return ""
    n_wells = len(diags[0].dist_to_well)
    n_comp = len(diags[0].average)
    header = (
        ["x1"]
        + [f"dist_w{i + 1}" for i in range(n_wells)]
        + [f"avg_{i + 1}" for i in range(n_comp)]
        + ["slice_e", "kinetic", "avg_first", "div_residual"]
    )
    rows = [",".join(header)]
    for d in diags:
        cells = (
            [d.x1]
            + list(d.dist_to_well)
            + list(d.average)
            + [d.slice_e, d.kinetic]
        )
        row = [f"{v:.17g}" for v in cells]
        row.append("" if d.average_first_component is None else f"{d.average_first_component:.17g}")
        row.append("" if d.div_residual is None else f"{d.div_residual:.17g}")
        rows.append(",".join(row))
    return "\n".join(rows) + "\n"
