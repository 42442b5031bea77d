"""Sampled curves in R^N: energy, geodesic length, reparametrization,
heteroclinic minimization.

A curve is a polyline sampled at uniform parameter nodes.  The discrete
energy uses the midpoint rule on segment differences for the kinetic term,
the trapezoid rule for the potential term, and midpoint evaluation of
W on segments for the geodesic length, so the discrete Young inequality
total >= geodesic_length holds on resolved curves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .potential import PotentialSpec, eval_potential, grad_potential, PotentialError

__all__ = [
    "Curve",
    "CurveEnergyBreakdown",
    "HeteroclinicOptions",
    "HeteroclinicResult",
    "curve_energy",
    "arclength_reparametrize",
    "minimize_heteroclinic",
    "equipartition_defect",
    "euler_lagrange_residual",
    "curve_to_csv",
    "curve_from_csv",
    "ZeroLengthCurveError",
]


class ZeroLengthCurveError(ValueError):
    pass


@dataclass(frozen=True)
class Curve:
    """Polyline samples at uniform nodes t_k = t_min + k (t_max - t_min)/M."""

    t_min: float
    t_max: float
    samples: np.ndarray  # (M+1, N)

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.shape[0] < 3:
            raise ValueError("a curve needs at least M = 2 segments (3 nodes)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("curve samples must be finite")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")
        object.__setattr__(self, "samples", samples)

    @property
    def n_segments(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def n_components(self) -> int:
        return self.samples.shape[1]

    @property
    def h(self) -> float:
        return (self.t_max - self.t_min) / self.n_segments

    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_segments + 1)

    def chord_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.samples, axis=0), axis=1)))


@dataclass(frozen=True)
class CurveEnergyBreakdown:
    kinetic: float
    potential: float
    total: float
    geodesic_length: float
    equipartition_defect: float


def _potential_on_samples(spec: PotentialSpec, pts: np.ndarray) -> np.ndarray:
    vals = eval_potential(spec, pts)
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise PotentialError(
            "curve leaves the box mask; energies of masked specs are undefined there"
        )
    return vals


def curve_energy(curve: Curve, spec: PotentialSpec) -> CurveEnergyBreakdown:
    """Discrete E_W = int |sigma'|^2 + W(sigma) plus the geodesic length.

    The kinetic term, the potential term and the geodesic length all use
    the segment midpoints as quadrature nodes, so the per-segment Young
    inequality |d|^2/h + h W >= 2 sqrt(W) |d| makes total >=
    geodesic_length structural for every curve, not just resolved ones.
    """
    if curve.n_components != spec.dimension:
        raise PotentialError("curve/spec dimension mismatch")
    h = curve.h
    diffs = np.diff(curve.samples, axis=0)
    seg_len = np.linalg.norm(diffs, axis=1)
    kinetic = float(np.sum(seg_len ** 2) / h)

    mids = 0.5 * (curve.samples[:-1] + curve.samples[1:])
    w_mid = np.maximum(_potential_on_samples(spec, mids), 0.0)
    potential = float(h * np.sum(w_mid))
    geodesic = float(np.sum(2.0 * np.sqrt(w_mid) * seg_len))

    total = kinetic + potential
    return CurveEnergyBreakdown(
        kinetic=kinetic,
        potential=potential,
        total=total,
        geodesic_length=geodesic,
        equipartition_defect=abs(kinetic - potential),
    )


def equipartition_defect(curve: Curve, spec: PotentialSpec) -> float:
    """|kinetic - potential| of the discrete energy (zero for exact minimizers)."""
    return curve_energy(curve, spec).equipartition_defect


def arclength_reparametrize(curve: Curve, n_segments_out: int) -> Curve:
    """Resample the polyline at equal chord-length increments.

    The output lives on [0, L] with L the total chord length; endpoints are
    preserved exactly and the polyline trace is unchanged up to node
    placement.
    """
    if n_segments_out < 2:
        raise ValueError("need at least 2 output segments")
    diffs = np.diff(curve.samples, axis=0)
    seg = np.linalg.norm(diffs, axis=1)
    total = float(np.sum(seg))
    if total <= 0.0:
        raise ZeroLengthCurveError("cannot reparametrize a zero-length curve")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    # collapse zero-length segments so the abscissa is strictly increasing
    keep = np.concatenate([[True], seg > 0.0])
    cum_u = cum[keep]
    pts_u = curve.samples[keep]
    targets = np.linspace(0.0, total, n_segments_out + 1)
    out = np.column_stack(
        [np.interp(targets, cum_u, pts_u[:, j]) for j in range(curve.n_components)]
    )
    out[0] = curve.samples[0]
    out[-1] = curve.samples[-1]
    return Curve(0.0, total, out)


@dataclass
class HeteroclinicOptions:
    """Options for the clamped-endpoint energy minimization.

    method is recorded for reproducibility; "preconditioned-bb" is
    Barzilai-Borwein on the gradient preconditioned by the fixed quadratic
    part of the energy (banded Cholesky), with a backtracking safeguard
    that keeps the energy non-increasing.
    """

    tol: float = 1e-8
    max_iter: int = 200_000
    method: str = "preconditioned-bb"
    seed: Optional[int] = None
    perturbation_amplitude: float = 0.0


@dataclass(frozen=True)
class HeteroclinicResult:
    curve: Curve
    breakdown: CurveEnergyBreakdown
    converged: bool
    iterations: int
    max_gradient: float
    options: HeteroclinicOptions


def _discrete_energy_and_grad(samples, h, spec):
    """Objective of the clamped minimization and its interior-node gradient.

    Uses the trapezoid rule for the potential so that stationarity is the
    plain nodal relation 2 sigma'' = grad W(sigma); the reported breakdown
    re-evaluates the energy with the midpoint convention of curve_energy.
    """
    diffs = np.diff(samples, axis=0)
    kinetic = float(np.sum(diffs ** 2) / h)
    w = eval_potential(spec, samples)
    weights = np.full(len(w), h)
    weights[0] = weights[-1] = 0.5 * h
    energy = kinetic + float(weights @ w)
    # gradient w.r.t. interior nodes
    lap = samples[:-2] - 2.0 * samples[1:-1] + samples[2:]
    grad = -(2.0 / h) * lap + h * grad_potential(spec, samples[1:-1])
    return energy, grad


def minimize_heteroclinic(
    spec: PotentialSpec,
    well_a,
    well_b,
    T: float,
    M: int,
    opts: Optional[HeteroclinicOptions] = None,
) -> HeteroclinicResult:
    """Minimize the discrete curve energy on [-T, T] with clamped well ends.

    The initial curve is the straight segment between the wells, optionally
    perturbed transversally (seeded) to break symmetry in vector problems.
    Iteration stops when the largest nodal gradient norm drops below
    opts.tol; if max_iter is hit first, the best iterate is returned with
    converged = False.
    """
    opts = opts or HeteroclinicOptions()
    well_a = np.asarray(well_a, dtype=float).reshape(spec.dimension)
    well_b = np.asarray(well_b, dtype=float).reshape(spec.dimension)
    for w in (well_a, well_b):
        if eval_potential(spec, w) > 1e-8:
            raise PotentialError("endpoints of a heteroclinic must be wells")
    if T < 5:
        raise ValueError("T must be >= 5")
    if M < 100:
        raise ValueError("M must be >= 100")
    if spec.masked():
        raise PotentialError("solvers require finite-valued (unmasked) potentials")

    h = 2.0 * T / M
    s = np.linspace(0.0, 1.0, M + 1)[:, None]
    samples = (1.0 - s) * well_a + s * well_b

    if opts.perturbation_amplitude > 0.0:
        rng = np.random.default_rng(opts.seed)
        envelope = np.sin(np.pi * s[:, 0])
        if spec.dimension == 1:
            samples[:, 0] += opts.perturbation_amplitude * envelope
        else:
            d = well_b - well_a
            norm_d = np.linalg.norm(d)
            basis = rng.standard_normal(spec.dimension)
            if norm_d > 0:
                basis -= (basis @ d) / norm_d ** 2 * d
            nb = np.linalg.norm(basis)
            if nb > 1e-12:
                basis /= nb
                samples += opts.perturbation_amplitude * envelope[:, None] * basis

    energy, grad = _discrete_energy_and_grad(samples, h, spec)
    # preconditioner: exact kinetic Hessian plus a well-scale diagonal
    from scipy.linalg import cholesky_banded, cho_solve_banded

    n_int = M - 1
    ab = np.zeros((2, n_int))
    ab[0, 1:] = -2.0 / h
    ab[1, :] = 4.0 / h + 2.0 * h
    cho = cholesky_banded(ab)

    def precondition(g):
        return cho_solve_banded((cho, False), g)

    d = precondition(grad)
    eta = 1.0
    prev_x = None
    prev_g = None
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        gmax = float(np.max(np.linalg.norm(grad, axis=1)))
        if gmax < opts.tol:
            converged = True
            break
        if prev_x is not None:
            dx = samples[1:-1] - prev_x
            dg = grad - prev_g
            denom = float(np.sum(dx * dg))
            if denom > 0:
                # BB1 step in the preconditioner metric
                bs = -(2.0 / h) * (np.roll(dx, 1, axis=0) + np.roll(dx, -1, axis=0))
                bs[0] += (2.0 / h) * dx[-1]
                bs[-1] += (2.0 / h) * dx[0]
                bs += (4.0 / h + 2.0 * h) * dx
                eta = min(max(float(np.sum(dx * bs)) / denom, 1e-6), 1e6)
            else:
                eta = 1.0
        prev_x = samples[1:-1].copy()
        prev_g = grad.copy()
        slope = float(np.sum(grad * d))
        accepted = False
        for _ in range(60):
            trial = samples.copy()
            trial[1:-1] = prev_x - eta * d
            e_trial, g_trial = _discrete_energy_and_grad(trial, h, spec)
            if e_trial <= energy - 1e-4 * eta * slope:
                samples, energy, grad = trial, e_trial, g_trial
                d = precondition(grad)
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break  # step underflow: gradient noise floor reached

    curve = Curve(-T, T, samples)
    gmax = float(np.max(np.linalg.norm(grad, axis=1)))
    converged = converged or gmax < opts.tol
    return HeteroclinicResult(
        curve=curve,
        breakdown=curve_energy(curve, spec),
        converged=converged,
        iterations=it,
        max_gradient=gmax,
        options=opts,
    )


def euler_lagrange_residual(curve: Curve, spec: PotentialSpec) -> float:
    """Max norm of 2(s_{k-1} - 2 s_k + s_{k+1})/h^2 - grad W(s_k) at interior nodes."""
    h = curve.h
    s = curve.samples
    lap = (s[:-2] - 2.0 * s[1:-1] + s[2:]) / h ** 2
    res = 2.0 * lap - grad_potential(spec, s[1:-1])
    return float(np.max(np.linalg.norm(res, axis=1)))


def curve_to_csv(curve: Curve) -> str:
    """Serialize as CSV with header t,x1,...,xN (17 significant digits)."""
    n = curve.n_components
    header = "t," + ",".join(f"x{j + 1}" for j in range(n))
    rows = [header]
    for t, row in zip(curve.nodes(), curve.samples):
        rows.append(",".join(f"{v:.17g}" for v in (t, *row)))
    return "\n".join(rows) + "\n"


def curve_from_csv(text: str) -> Curve:
    lines = [ln for ln in text.strip().splitlines() if ln]
    data = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float
    )
    t = data[:, 0]
    return Curve(float(t[0]), float(t[-1]), data[:, 1:])
