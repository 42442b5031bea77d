"""Cross-section fields and their slice energy.

The cross-section omega is fixed to unit-measure representatives: the unit
interval with Neumann ends, or the flat torus in one or two dimensions.
This module provides the slice energy e(v) = avg(|grad' v|^2 + W(v)), the
averaged potential V(z) (minimal slice energy at fixed mean), the
mean-constrained variant e_a, and penalized estimates of the constrained
infima k_eps and k^a_eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .potential import (
    Box,
    PotentialError,
    PotentialSpec,
    Well,
    eval_potential,
    find_wells,
    grad_potential,
    restrict_first_component,
)

__all__ = [
    "SectionGrid",
    "SectionField",
    "AveragedPotentialOptions",
    "AveragedPotentialResult",
    "VPropsReport",
    "KEpsOptions",
    "KEpsResult",
    "KEpsInfeasibleError",
    "section_energy",
    "section_energy_gradient",
    "averaged_potential",
    "verify_V_props",
    "k_epsilon",
    "k_epsilon_ladder",
    "section_energy_a",
    "sigma_a_wells",
    "random_smooth_field",
    "section_field_to_csv",
]

MEAN_TOLERANCE_A = 1e-8


class KEpsInfeasibleError(RuntimeError):
    """No restart produced an iterate at the required distance from the wells."""


def _central_diff_interval(P: int, h: float) -> sparse.csr_matrix:
    D = sparse.lil_matrix((P, P))
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[P - 1, P - 2], D[P - 1, P - 1] = -1.0 / h, 1.0 / h
    for i in range(1, P - 1):
        D[i, i - 1] = -0.5 / h
        D[i, i + 1] = 0.5 / h
    return D.tocsr()


def _central_diff_torus(P: int, h: float) -> sparse.csr_matrix:
    D = sparse.lil_matrix((P, P))
    for i in range(P):
        D[i, (i - 1) % P] = -0.5 / h
        D[i, (i + 1) % P] = 0.5 / h
    return D.tocsr()


@dataclass(frozen=True)
class SectionGrid:
    """Unit-measure cross-section grid.

    kind "interval": omega = (0, 1), P nodes, spacing 1/(P-1), trapezoid
    quadrature, central differences with one-sided Neumann ends.
    kind "torus": omega = T^dim (dim in {1, 2}), P nodes per axis at j/P,
    uniform quadrature, wrapped central differences.
    """

    kind: str
    points_per_axis: int
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("interval", "torus"):
            raise ValueError("kind must be 'interval' or 'torus'")
        if self.kind == "interval" and self.dim != 1:
            raise ValueError("the interval section is one-dimensional")
        if self.kind == "torus" and self.dim not in (1, 2):
            raise ValueError("torus sections support dim 1 or 2")
        if self.points_per_axis < 8:
            raise ValueError("need at least 8 points per axis")
        P = self.points_per_axis
        if self.kind == "interval":
            h = 1.0 / (P - 1)
            axis = np.linspace(0.0, 1.0, P)
            w1 = np.full(P, h)
            w1[0] = w1[-1] = 0.5 * h
            D1 = _central_diff_interval(P, h)
        else:
            h = 1.0 / P
            axis = np.arange(P) * h
            w1 = np.full(P, h)
            D1 = _central_diff_torus(P, h)
        object.__setattr__(self, "h", h)
        if self.dim == 1:
            shape = (P,)
            weights = w1
            ops = [D1]
        else:
            shape = (P, P)
            weights = np.outer(w1, w1).ravel()
            eye = sparse.identity(P, format="csr")
            ops = [sparse.kron(D1, eye, format="csr"), sparse.kron(eye, D1, format="csr")]
        object.__setattr__(self, "node_shape", shape)
        object.__setattr__(self, "axis_coords", axis)
        object.__setattr__(self, "weights_flat", weights.ravel())
        object.__setattr__(self, "diff_ops", tuple(ops))
        W = sparse.diags(weights.ravel())
        K = sum(D.T @ W @ D for D in ops)
        object.__setattr__(self, "stiffness", K.tocsr())

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim)."""
        if self.dim == 1:
            return self.axis_coords[:, None]
        X, Y = np.meshgrid(self.axis_coords, self.axis_coords, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    def mean(self, values_flat: np.ndarray) -> np.ndarray:
        return self.weights_flat @ values_flat


@dataclass(frozen=True)
class SectionField:
    """Sampled map omega -> R^N on a SectionGrid."""

    grid: SectionGrid
    values: np.ndarray  # node_shape + (N,)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = self.grid.node_shape
        if values.shape[:-1] != expected:
            raise ValueError(
                f"values shape {values.shape} does not match grid nodes {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def n_components(self) -> int:
        return self.values.shape[-1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(self.grid.n_nodes, self.n_components)

    def mean(self) -> np.ndarray:
        return self.grid.mean(self.flat())

    def l2_distance_to_constant(self, z) -> float:
        z = np.asarray(z, dtype=float)
        diff = self.flat() - z
        return float(np.sqrt(self.grid.weights_flat @ np.sum(diff ** 2, axis=1)))

    def with_values(self, values) -> "SectionField":
        return SectionField(self.grid, values)


def _check_field_spec(v: SectionField, spec: PotentialSpec):
    if v.n_components != spec.dimension:
        raise PotentialError("field components do not match potential dimension")
    if spec.masked():
        raise PotentialError("section energies require finite-valued potentials")


def section_energy(v: SectionField, spec: PotentialSpec) -> float:
    """Slice energy avg(|grad' v|^2 + W(v)) over the unit-measure section."""
    _check_field_spec(v, spec)
    flat = v.flat()
    w = v.grid.weights_flat
    grad_sq = np.zeros(v.grid.n_nodes)
    for D in v.grid.diff_ops:
        dv = D @ flat
        grad_sq += np.sum(dv ** 2, axis=1)
    pot = np.asarray(eval_potential(spec, flat), dtype=float)
    return float(w @ grad_sq + w @ pot)


def section_energy_gradient(v: SectionField, spec: PotentialSpec) -> np.ndarray:
    """Mass-preconditioned gradient of the slice energy, shaped like values."""
    _check_field_spec(v, spec)
    flat = v.flat()
    K = v.grid.stiffness
    g = 2.0 * (K @ flat) / v.grid.weights_flat[:, None]
    g += grad_potential(spec, flat)
    return g.reshape(v.values.shape)


def section_energy_a(v: SectionField, spec: PotentialSpec, a: float) -> float:
    """Mean-constrained slice energy: +inf unless avg(v_1) = a within 1e-8."""
    if v.grid.kind != "torus":
        raise PotentialError("the mean-constrained energy lives on the torus")
    if v.n_components != v.grid.dim + 1:
        raise PotentialError("mean-constrained energy expects d = N (section dim N-1)")
    mean1 = float(v.mean()[0])
    if abs(mean1 - a) > MEAN_TOLERANCE_A:
        return float("inf")
    return section_energy(v, spec)


# ---------------------------------------------------------------------------
# Averaged potential V
# ---------------------------------------------------------------------------


@dataclass
class AveragedPotentialOptions:
    tol: float = 1e-7
    max_iter: int = 5_000
    n_restarts: int = 3
    perturbation_scale: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class AveragedPotentialResult:
    z: tuple
    value: float
    minimizer: SectionField
    constant_candidate_value: float
    iterations: int


def _project_mean(flat: np.ndarray, grid: SectionGrid, target: np.ndarray,
                  first_only: bool = False) -> np.ndarray:
    drift = grid.mean(flat) - target
    if first_only:
        flat = flat.copy()
        flat[:, 0] -= drift[0]
        return flat
    return flat - drift


_SOLVER_CACHE: dict = {}


def _quadratic_solver(grid: SectionGrid, shift: float = 2.0):
    """Prefactorized solve of (2 K + shift M) d = G, the descent metric.

    K is the grid stiffness and M the diagonal quadrature mass; the shift
    models the well curvature scale.  Cached per grid signature.
    """
    key = (grid.kind, grid.points_per_axis, grid.dim, shift)
    if key not in _SOLVER_CACHE:
        from scipy.sparse.linalg import splu

        H = (2.0 * grid.stiffness + shift * sparse.diags(grid.weights_flat)).tocsc()
        _SOLVER_CACHE[key] = splu(H)
    lu = _SOLVER_CACHE[key]
    return lu.solve


def _descend_constrained(
    grid: SectionGrid,
    flat0: np.ndarray,
    objective,
    gradient,
    project,
    tol: float,
    max_iter: int,
    solve=None,
):
    """Projected, preconditioned BB descent with a backtracking safeguard.

    objective/gradient take a flat (n_nodes, N) array (gradient returns the
    mass-preconditioned force); project restores the affine constraints
    exactly; solve (optional) applies the inverse of the quadratic metric.
    Returns (flat, value, iterations).
    """
    w = grid.weights_flat[:, None]
    flat = project(flat0)
    value = objective(flat)

    def force_and_direction(flat):
        g = gradient(flat)  # mass-preconditioned force
        gproj = project(flat - g) - flat  # -(projected force)
        if solve is None:
            d = -gproj
        else:
            d = solve(w * g)  # metric solve of the Euclidean gradient
            d = -(project(flat - d) - flat)
        return gproj, d

    gproj, d = force_and_direction(flat)
    eta0 = 1.0 if solve is not None else 1e-3
    eta = eta0
    prev_x = prev_d = None
    stalled = 0
    it = 0
    for it in range(1, max_iter + 1):
        if float(np.max(np.abs(gproj))) < tol or stalled >= 5:
            break
        if prev_x is not None:
            dx = flat - prev_x
            dd = d - prev_d
            denom = float(np.sum(dx * dd))
            eta = (
                min(max(float(np.sum(dx * dx)) / denom, 1e-4 * eta0), 1e5 * eta0)
                if denom > 0
                else eta0
            )
        prev_x = flat.copy()
        prev_d = d.copy()
        slope = float(np.sum((w * (-gproj)) * d))  # <grad, d> in L2(w)
        if slope <= 0.0:
            d = -gproj
            slope = float(np.sum(w * gproj ** 2))
        ok = False
        for _ in range(60):
            trial = project(flat - eta * d)
            v_trial = objective(trial)
            if v_trial <= value - 1e-4 * eta * slope:
                decrease = value - v_trial
                stalled = stalled + 1 if decrease < 1e-14 * (1.0 + abs(value)) else 0
                flat, value = trial, v_trial
                gproj, d = force_and_direction(flat)
                ok = True
                break
            eta *= 0.5
        if not ok:
            break
    return flat, value, it


def averaged_potential(
    spec: PotentialSpec,
    z,
    grid: SectionGrid,
    opts: Optional[AveragedPotentialOptions] = None,
) -> AveragedPotentialResult:
    """Upper estimate of V(z) = inf{e(v) : avg(v) = z} by projected descent.

    Starts from the constant field plus seeded smooth-perturbation restarts;
    the mean constraint is restored exactly after every step, so the
    reported minimizer has avg = z to roundoff.
    """
    opts = opts or AveragedPotentialOptions()
    z = np.asarray(z, dtype=float).reshape(spec.dimension)
    if spec.masked():
        raise PotentialError("averaged_potential requires finite-valued potentials")
    w_z = float(eval_potential(spec, z))
    rng = np.random.default_rng(opts.seed)

    def objective(flat):
        return section_energy(SectionField(grid, flat.reshape(grid.node_shape + (spec.dimension,))), spec)

    def gradient(flat):
        f = SectionField(grid, flat.reshape(grid.node_shape + (spec.dimension,)))
        return section_energy_gradient(f, spec).reshape(grid.n_nodes, spec.dimension)

    def project(flat):
        return _project_mean(flat, grid, z)

    const = np.tile(z, (grid.n_nodes, 1))
    starts = [const]
    for _ in range(opts.n_restarts):
        pert = random_smooth_field(
            grid, spec.dimension, rng, amplitude=opts.perturbation_scale, zero_mean=True
        )
        starts.append(const + pert.reshape(grid.n_nodes, spec.dimension))

    solve = _quadratic_solver(grid)
    best = None
    total_it = 0
    for s in starts:
        flat, value, it = _descend_constrained(
            grid, s, objective, gradient, project, opts.tol, opts.max_iter,
            solve=solve,
        )
        total_it += it
        if best is None or value < best[0]:
            best = (value, flat)
    value, flat = best
    minimizer = SectionField(grid, flat.reshape(grid.node_shape + (spec.dimension,)))
    return AveragedPotentialResult(
        z=tuple(float(c) for c in z),
        value=float(value),
        minimizer=minimizer,
        constant_candidate_value=w_z,
        iterations=total_it,
    )


@dataclass(frozen=True)
class VPropsReport:
    samples: tuple  # (z, V, W) triples
    v_le_w_ok: bool
    zero_set_ok: bool
    v_infinity_proxy: float
    v_infinity_positive: bool
    lsc_note: str


def verify_V_props(
    spec: PotentialSpec,
    wells: Sequence[Well],
    sample_points,
    grid: SectionGrid,
    opts: Optional[AveragedPotentialOptions] = None,
    R_check: float = 3.0,
    zero_threshold: float = 1e-6,
    v_infinity_threshold: float = 0.1,
    n_sphere: int = 8,
) -> VPropsReport:
    """Sampled checks of the basic properties of the averaged potential.

    Verifies V <= W on the samples, that V vanishes exactly where W does
    (threshold comparison), and that V stays positive on a sphere of radius
    R_check (a finite proxy for positivity at infinity).  Lower
    semicontinuity is not numerically checkable and is only noted.
    """
    opts = opts or AveragedPotentialOptions()
    rows = []
    pts = [np.asarray(p, dtype=float).reshape(spec.dimension) for p in sample_points]
    pts += [w.location_array() for w in wells]
    for z in pts:
        res = averaged_potential(spec, z, grid, opts)
        rows.append((tuple(z), res.value, float(eval_potential(spec, z))))
    v_le_w = all(v <= w + 1e-9 for _, v, w in rows)
    zero_ok = all((v <= zero_threshold) == (w <= zero_threshold) for _, v, w in rows)

    if spec.dimension == 1:
        sphere = np.array([[R_check], [-R_check]])
    else:
        theta = np.linspace(0.0, 2.0 * np.pi, n_sphere, endpoint=False)
        sphere = np.zeros((n_sphere, spec.dimension))
        sphere[:, 0] = R_check * np.cos(theta)
        sphere[:, 1] = R_check * np.sin(theta)
    proxy = min(
        averaged_potential(spec, z, grid, opts).value for z in sphere
    )
    return VPropsReport(
        samples=tuple(rows),
        v_le_w_ok=v_le_w,
        zero_set_ok=zero_ok,
        v_infinity_proxy=float(proxy),
        v_infinity_positive=proxy > v_infinity_threshold,
        lsc_note="lower semicontinuity is not numerically checkable; out of scope",
    )


# ---------------------------------------------------------------------------
# k_eps and the mean-constrained variant
# ---------------------------------------------------------------------------


@dataclass
class KEpsOptions:
    penalty_rounds: int = 6
    mu0: float = 10.0
    mu_factor: float = 10.0
    n_perturbations: int = 2
    inner_max_iter: int = 2000
    tol: float = 1e-7
    seed: int = 0
    perturbation_scale: float = 1.0


@dataclass(frozen=True)
class KEpsResult:
    epsilon: float
    value: float
    witness: SectionField
    constrained_distance: float
    flavor: str


def _distance_to_wells(flat: np.ndarray, grid: SectionGrid, well_locs: np.ndarray):
    """min_w (avg |v - w|^2)^(1/2) and the index of the nearest well."""
    d2 = np.array(
        [
            grid.weights_flat @ np.sum((flat - w) ** 2, axis=1)
            for w in well_locs
        ]
    )
    k = int(np.argmin(d2))
    return float(np.sqrt(max(d2[k], 0.0))), k


def sigma_a_wells(
    spec: PotentialSpec,
    a: float,
    search_box: Optional[Box] = None,
    grid_resolution: int = 64,
) -> list:
    """The zero set of the slice energy e_a: points (a, z') with W(a, z') = 0."""
    restricted = restrict_first_component(spec, a)
    box = search_box or Box.cube(-3.0, 3.0, spec.dimension - 1)
    slice_wells = find_wells(restricted, box, grid_resolution)
    return [
        np.concatenate([[a], w.location_array()]) for w in slice_wells
    ]


def k_epsilon(
    spec: PotentialSpec,
    grid: SectionGrid,
    eps: float,
    wells: Sequence,
    flavor: str = "plain",
    a: Optional[float] = None,
    opts: Optional[KEpsOptions] = None,
    extra_candidates: Optional[Sequence[SectionField]] = None,
) -> KEpsResult:
    """Penalized upper estimate of k_eps (or k^a_eps).

    Minimizes e(v) + mu (eps - d(v, Sigma))_+^2 with mu increasing over
    penalty rounds, restarting from every well plus eps-scaled smooth
    perturbations; a final radial rescale certifies d >= eps for the
    returned witness.  For flavor "mean_constrained_a" the wells must be
    the elements of Sigma^a (see sigma_a_wells) and avg(v_1) = a is
    restored exactly after every step.

    The returned value is an upper bound on the true infimum; restarts use
    smooth perturbations only, which keeps the search in the regime the
    central-difference stencil resolves.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not wells:
        raise ValueError("need a nonempty well set")
    opts = opts or KEpsOptions()
    if flavor not in ("plain", "mean_constrained_a"):
        raise ValueError("flavor must be 'plain' or 'mean_constrained_a'")
    constrained = flavor == "mean_constrained_a"
    if constrained and a is None:
        raise ValueError("flavor mean_constrained_a requires a")
    if constrained and grid.kind != "torus":
        raise PotentialError("the mean-constrained flavor lives on the torus")
    well_locs = np.array(
        [np.asarray(getattr(w, "location", w), dtype=float) for w in wells]
    )
    if constrained:
        for w in well_locs:
            if abs(w[0] - a) > 1e-9:
                raise ValueError("Sigma^a wells must have first component a")
    n = spec.dimension
    rng = np.random.default_rng(opts.seed)

    def project(flat):
        if not constrained:
            return flat
        return _project_mean(flat, grid, np.array([a] + [0.0] * (n - 1)), first_only=True)

    def feasibility_rescale(flat):
        d, k = _distance_to_wells(flat, grid, well_locs)
        if d >= eps or d == 0.0:
            if d == 0.0:
                return None
            return flat
        w = well_locs[k]
        scaled = w + (flat - w) * (eps / d)
        return project(scaled)

    def make_penalized(mu):
        def objective(flat):
            f = SectionField(grid, flat.reshape(grid.node_shape + (n,)))
            d, _ = _distance_to_wells(flat, grid, well_locs)
            gap = max(eps - d, 0.0)
            return section_energy(f, spec) + mu * gap * gap

        def gradient(flat):
            f = SectionField(grid, flat.reshape(grid.node_shape + (n,)))
            g = section_energy_gradient(f, spec).reshape(grid.n_nodes, n)
            d, k = _distance_to_wells(flat, grid, well_locs)
            if d < eps and d > 0.0:
                g = g - (2.0 * mu * (eps - d) / d) * (flat - well_locs[k])
            return g

        return objective, gradient

    starts = []
    for w in well_locs:
        const = np.tile(w, (grid.n_nodes, 1))
        if not constrained:
            direction = rng.standard_normal(n)
            direction /= np.linalg.norm(direction)
            starts.append(const + 1.05 * eps * direction)
        for _ in range(opts.n_perturbations):
            pert = random_smooth_field(
                grid, n, rng, amplitude=opts.perturbation_scale * eps,
                zero_mean=constrained,
            )
            starts.append(const + pert.reshape(grid.n_nodes, n))

    best = None

    def consider(flat):
        nonlocal best
        res = feasibility_rescale(flat)
        if res is None:
            return
        d, _ = _distance_to_wells(res, grid, well_locs)
        if d < eps - 1e-6:
            return
        value = section_energy(
            SectionField(grid, res.reshape(grid.node_shape + (n,))), spec
        )
        if best is None or value < best[0]:
            best = (value, res, d)

    solve = _quadratic_solver(grid)
    for s in starts:
        flat = project(s)
        mu = opts.mu0
        for _ in range(opts.penalty_rounds):
            objective, gradient = make_penalized(mu)
            flat, _, _ = _descend_constrained(
                grid, flat, objective, gradient, project,
                opts.tol, opts.inner_max_iter, solve=solve,
            )
            mu *= opts.mu_factor
        consider(flat)

    for cand in extra_candidates or []:
        consider(project(cand.flat().copy()))

    if best is None:
        raise KEpsInfeasibleError(
            f"no feasible iterate found at eps = {eps} (constraint never met)"
        )
    value, flat, d = best
    return KEpsResult(
        epsilon=float(eps),
        value=float(value),
        witness=SectionField(grid, flat.reshape(grid.node_shape + (n,))),
        constrained_distance=float(d),
        flavor=flavor,
    )


def k_epsilon_ladder(
    spec: PotentialSpec,
    grid: SectionGrid,
    eps_values: Sequence[float],
    wells: Sequence,
    flavor: str = "plain",
    a: Optional[float] = None,
    opts: Optional[KEpsOptions] = None,
) -> list:
    """k_eps estimates over a ladder of eps values, sharing witnesses.

    Solved in decreasing eps order; every witness found for a larger eps is
    admissible for all smaller ones and is offered as a candidate there, so
    the reported upper bounds are nonincreasing as eps shrinks.
    """
    order = np.argsort(eps_values)[::-1]
    results: dict = {}
    carried: list = []
    for i in order:
        res = k_epsilon(
            spec, grid, float(eps_values[i]), wells, flavor, a, opts,
            extra_candidates=carried,
        )
        carried.append(res.witness)
        results[i] = res
    return [results[i] for i in range(len(eps_values))]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def random_smooth_field(
    grid: SectionGrid,
    n_components: int,
    rng: np.random.Generator,
    amplitude: float = 1.0,
    zero_mean: bool = False,
    n_modes: int = 3,
) -> np.ndarray:
    """Seeded low-frequency field on the section, shape node_shape + (N,).

    Interval grids use cosine modes (Neumann compatible); torus grids use
    full Fourier modes.  With zero_mean the constant mode is dropped, which
    keeps exact quadrature mean zero on the torus.
    """
    shape = grid.node_shape + (n_components,)
    out = np.zeros(shape)
    x = grid.axis_coords
    if grid.kind == "interval":
        start = 1 if zero_mean else 0
        for k in range(start, n_modes + 1):
            c = rng.standard_normal(n_components)
            mode = np.cos(np.pi * k * x) if k > 0 else np.ones_like(x)
            out += mode[:, None] * c
        if zero_mean:
            # cosine modes have nonzero trapezoid mean; remove it exactly
            flat = out.reshape(grid.n_nodes, n_components)
            flat -= grid.mean(flat)
            out = flat.reshape(shape)
    else:
        axes = [x] * grid.dim
        if not zero_mean:
            out += rng.standard_normal(n_components)
        for k in range(1, n_modes + 1):
            if grid.dim == 1:
                cs = rng.standard_normal((2, n_components))
                out += np.cos(2 * np.pi * k * x)[:, None] * cs[0]
                out += np.sin(2 * np.pi * k * x)[:, None] * cs[1]
            else:
                cs = rng.standard_normal((4, n_components))
                X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
                out += np.cos(2 * np.pi * k * X)[:, :, None] * cs[0]
                out += np.sin(2 * np.pi * k * X)[:, :, None] * cs[1]
                out += np.cos(2 * np.pi * k * Y)[:, :, None] * cs[2]
                out += np.sin(2 * np.pi * k * Y)[:, :, None] * cs[3]
    peak = float(np.max(np.abs(out)))
    if peak > 0:
        out *= amplitude / peak
    return out


def section_field_to_csv(fieldv: SectionField) -> str:
    """CSV with node coordinates and one column per component."""
    n = fieldv.n_components
    coords = fieldv.grid.coords()
    header = ",".join(
        [f"x{j + 2}" for j in range(fieldv.grid.dim)]
        + [f"v{j + 1}" for j in range(n)]
    )
    rows = [header]
    flat = fieldv.flat()
    for c, vals in zip(coords, flat):
        rows.append(",".join(f"{v:.17g}" for v in (*c, *vals)))
    return "\n".join(rows) + "\n"
