"""The degenerate geodesic pseudo-distance induced by 2 sqrt(W).

Two routes are provided: a grid shortest-path oracle (lattice graph with
axis and diagonal neighbors, edge weight 2 sqrt(W(midpoint)) |p - q|) and
a direct relaxation of polyline length (an upper bound by construction).
Neither is certified; callers are expected to report both and their gap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .curve import Curve, arclength_reparametrize, curve_energy
from .potential import Box, PotentialError, PotentialSpec, eval_potential, grad_potential

__all__ = [
    "GridGraph",
    "GeodesicResult",
    "GeodUpperOptions",
    "build_grid_graph",
    "geod_grid_oracle",
    "geod_upper",
    "nondegeneracy_bound",
    "verify_energy_geodesic_bound",
    "total_variation_geod",
    "default_search_box",
    "geodesic_result_to_dict",
]


def _require_unmasked(spec: PotentialSpec):
    if spec.masked():
        raise PotentialError("geodesic routines require finite-valued potentials")


def default_search_box(wells, inflation: float = 1.5) -> Box:
    """Bounding box of the well set, inflated about its center."""
    locs = np.array([np.asarray(getattr(w, "location", w), dtype=float) for w in wells])
    lo, hi = locs.min(axis=0), locs.max(axis=0)
    width = np.maximum(hi - lo, 1.0)
    c = 0.5 * (lo + hi)
    half = 0.5 * width * inflation
    return Box(tuple(c - half), tuple(c + half))


@dataclass(frozen=True)
class GeodesicResult:
    value: float
    witness: Optional[Curve]
    method: str  # "curve_relaxation" or "grid_oracle"
    box: Optional[Box]
    resolution: Optional[int]
    endpoints: tuple  # (x, y) as passed by the caller
    converged: bool = True


class GridGraph:
    """Lattice graph over a box with full diagonal stencil (N <= 3).

    `resolution` counts cells per axis, so doubling it refines the lattice
    in place (every coarse node remains a fine node).  Edge weights are
    2 sqrt(W(midpoint)) times the Euclidean edge length; W is evaluated at
    the midpoint rather than averaged over endpoints so that paths cannot
    tunnel through wells at zero cost.
    """

    def __init__(self, spec: PotentialSpec, box: Box, resolution: int):
        _require_unmasked(spec)
        n = spec.dimension
        if n > 3:
            raise PotentialError("grid oracle supports N <= 3")
        if box.dimension != n:
            raise PotentialError("box dimension mismatch")
        limit = {1: 200_000, 2: 2000, 3: 200}[n]
        if resolution < 2 or resolution > limit:
            raise PotentialError(
                f"resolution must be in [2, {limit}] for N = {n}"
            )
        self.spec = spec
        self.box = box
        self.resolution = int(resolution)
        self.shape = (self.resolution + 1,) * n
        lo, hi = box.lo_array(), box.hi_array()
        self.lo = lo
        self.spacing = (hi - lo) / self.resolution
        self.n_nodes = int(np.prod(self.shape))

        rows, cols, data = [], [], []
        w_max = 0.0
        offsets = [
            off
            for off in itertools.product((-1, 0, 1), repeat=n)
            if any(off) and next(v for v in off if v) > 0
        ]
        for off in offsets:
            slices_src = []
            for o in off:
                if o == 1:
                    slices_src.append(np.arange(0, self.resolution))
                elif o == -1:
                    slices_src.append(np.arange(1, self.resolution + 1))
                else:
                    slices_src.append(np.arange(0, self.resolution + 1))
            mesh = np.meshgrid(*slices_src, indexing="ij")
            src_idx = np.stack([m.ravel() for m in mesh], axis=-1)
            dst_idx = src_idx + np.asarray(off)
            src_flat = np.ravel_multi_index(src_idx.T, self.shape)
            dst_flat = np.ravel_multi_index(dst_idx.T, self.shape)
            mid = lo + (src_idx + 0.5 * np.asarray(off)) * self.spacing
            w_mid = np.maximum(np.asarray(eval_potential(spec, mid), dtype=float), 0.0)
            w_max = max(w_max, float(np.max(w_mid)) if w_mid.size else 0.0)
            length = float(np.linalg.norm(np.asarray(off) * self.spacing))
            rows.append(src_flat)
            cols.append(dst_flat)
            data.append(2.0 * np.sqrt(w_mid) * length)
        self.csr = coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_nodes, self.n_nodes),
        ).tocsr()
        # cost of one worst-case diagonal step; used as snapping slack
        self.snap_slack = 2.0 * np.sqrt(w_max) * float(np.linalg.norm(self.spacing))

    def snap(self, point) -> int:
        z = np.asarray(point, dtype=float).reshape(len(self.shape))
        rel = (z - self.lo) / self.spacing
        scale = np.maximum(np.abs(self.lo), np.abs(self.lo + self.spacing * self.resolution))
        if np.any(rel < -1e-9) or np.any(rel > self.resolution + 1e-9):
            raise PotentialError(f"point {z} lies outside the oracle box")
        idx = np.clip(np.round(rel).astype(int), 0, self.resolution)
        return int(np.ravel_multi_index(idx, self.shape))

    def node_coords(self, flat: int) -> np.ndarray:
        idx = np.array(np.unravel_index(flat, self.shape))
        return self.lo + idx * self.spacing

    def distances_from(self, sources: Sequence[int]) -> np.ndarray:
        return dijkstra(self.csr, directed=False, indices=list(sources))

    def distance_and_path(self, ix: int, iy: int):
        """Shortest distance and node path between two lattice nodes.

        The search always starts from the smaller flat index, so the value
        is exactly symmetric in its arguments.
        """
        if ix == iy:
            return 0.0, [ix]
        src, dst = (ix, iy) if ix < iy else (iy, ix)
        dist, pred = dijkstra(
            self.csr, directed=False, indices=src, return_predecessors=True
        )
        d = float(dist[dst])
        path = [dst]
        while path[-1] != src:
            p = int(pred[path[-1]])
            if p < 0:
                raise PotentialError("grid graph is not connected")
            path.append(p)
        path.reverse()
        if ix != src:
            path.reverse()
        return d, path


def build_grid_graph(spec: PotentialSpec, box: Box, resolution: int) -> GridGraph:
    return GridGraph(spec, box, resolution)


def _witness_from_points(points: np.ndarray) -> Curve:
    pts = np.atleast_2d(points)
    while pts.shape[0] < 3:
        pts = np.vstack([pts, pts[-1]])
    return Curve(0.0, 1.0, pts)


def geod_grid_oracle(
    spec: PotentialSpec,
    x,
    y,
    box: Box,
    resolution: int,
    graph: Optional[GridGraph] = None,
) -> GeodesicResult:
    """Shortest-path value between the lattice nodes nearest to x and y."""
    _require_unmasked(spec)
    g = graph if graph is not None else GridGraph(spec, box, resolution)
    x = np.asarray(x, dtype=float).reshape(spec.dimension)
    y = np.asarray(y, dtype=float).reshape(spec.dimension)
    ix, iy = g.snap(x), g.snap(y)
    value, path = g.distance_and_path(ix, iy)
    pts = np.array([g.node_coords(i) for i in path])
    return GeodesicResult(
        value=value,
        witness=_witness_from_points(pts),
        method="grid_oracle",
        box=g.box,
        resolution=g.resolution,
        endpoints=(tuple(x), tuple(y)),
    )


@dataclass
class GeodUpperOptions:
    n_segments: int = 800
    reparam_every: int = 50
    max_iter: int = 20_000
    tol: float = 1e-7
    stall: float = 1e-10
    init: Optional[Curve] = None


def _geodesic_length_and_grad(samples: np.ndarray, spec: PotentialSpec):
    diffs = samples[1:] - samples[:-1]
    seg = np.linalg.norm(diffs, axis=1)
    mids = 0.5 * (samples[:-1] + samples[1:])
    w = np.maximum(np.asarray(eval_potential(spec, mids), dtype=float), 0.0)
    sq = np.sqrt(w)
    value = float(np.sum(2.0 * sq * seg))
    gw = grad_potential(spec, mids)
    coef = np.where(sq > 1e-15, seg / np.maximum(2.0 * sq, 1e-300), 0.0)
    dirs = np.where(seg[:, None] > 1e-300, diffs / np.maximum(seg[:, None], 1e-300), 0.0)
    term_w = coef[:, None] * gw
    term_d = 2.0 * sq[:, None] * dirs
    grad_nodes = np.zeros_like(samples)
    grad_nodes[:-1] += term_w - term_d
    grad_nodes[1:] += term_w + term_d
    return value, grad_nodes[1:-1]


def geod_upper(
    spec: PotentialSpec,
    x,
    y,
    opts: Optional[GeodUpperOptions] = None,
) -> GeodesicResult:
    """Upper bound on the geodesic value by relaxing a polyline from x to y.

    Node positions follow a Barzilai-Borwein descent of the discrete length
    with periodic arc-length resampling to keep nodes from clustering.
    """
    _require_unmasked(spec)
    opts = opts or GeodUpperOptions()
    x = np.asarray(x, dtype=float).reshape(spec.dimension)
    y = np.asarray(y, dtype=float).reshape(spec.dimension)
    M = opts.n_segments
    if np.linalg.norm(x - y) == 0.0:
        pts = np.tile(x, (3, 1))
        return GeodesicResult(
            value=0.0,
            witness=_witness_from_points(pts),
            method="curve_relaxation",
            box=None,
            resolution=M,
            endpoints=(tuple(x), tuple(y)),
        )
    if opts.init is not None:
        init = opts.init
        if (
            np.linalg.norm(init.samples[0] - x) > 1e-7
            or np.linalg.norm(init.samples[-1] - y) > 1e-7
        ):
            raise PotentialError("init curve endpoints do not match x, y")
        samples = arclength_reparametrize(init, M).samples.copy()
        samples[0], samples[-1] = x, y
    else:
        s = np.linspace(0.0, 1.0, M + 1)[:, None]
        samples = (1.0 - s) * x + s * y

    value, grad = _geodesic_length_and_grad(samples, spec)
    scale = max(np.linalg.norm(x - y), 1.0)
    eta0 = 1e-3 * scale / M
    eta = eta0
    prev_x = prev_g = None
    accepted = 0
    last_block_value = value
    converged = False
    for _ in range(opts.max_iter):
        gmax = float(np.max(np.linalg.norm(grad, axis=1))) if grad.size else 0.0
        if gmax < opts.tol:
            converged = True
            break
        if prev_x is not None:
            dx = samples[1:-1] - prev_x
            dg = grad - prev_g
            denom = float(np.sum(dx * dg))
            eta = (
                min(max(float(np.sum(dx * dx)) / denom, 1e-4 * eta0), 1e7 * eta0)
                if denom > 0
                else eta0
            )
        prev_x = samples[1:-1].copy()
        prev_g = grad.copy()
        gnorm2 = float(np.sum(grad ** 2))
        ok = False
        for _ in range(60):
            trial = samples.copy()
            trial[1:-1] = prev_x - eta * grad
            v_trial, g_trial = _geodesic_length_and_grad(trial, spec)
            if v_trial <= value - 1e-4 * eta * gnorm2:
                samples, value, grad = trial, v_trial, g_trial
                ok = True
                break
            eta *= 0.5
        if not ok:
            converged = True  # at the numerical noise floor
            break
        accepted += 1
        if accepted % opts.reparam_every == 0:
            curve = Curve(0.0, 1.0, samples)
            samples = arclength_reparametrize(curve, M).samples
            samples[0], samples[-1] = x, y
            value, grad = _geodesic_length_and_grad(samples, spec)
            prev_x = prev_g = None
            if abs(last_block_value - value) < opts.stall * (1.0 + abs(value)):
                converged = True
                break
            last_block_value = value

    return GeodesicResult(
        value=value,
        witness=_witness_from_points(samples),
        method="curve_relaxation",
        box=None,
        resolution=M,
        endpoints=(tuple(x), tuple(y)),
        converged=converged,
    )


def nondegeneracy_bound(
    spec: PotentialSpec,
    wells,
    delta: float,
    box: Box,
    resolution: int = 256,
):
    """Sampled floor of W away from the wells and the induced distance bound.

    c_delta is the minimum of W over the box minus the balls of radius
    delta/2 around the wells; the bound delta sqrt(c_delta) / 4 is a lower
    bound for geodesic values between points at least delta apart.
    """
    _require_unmasked(spec)
    locs = np.array(
        [np.asarray(getattr(w, "location", w), dtype=float) for w in wells]
    )
    if len(locs) >= 2:
        min_sep = min(
            np.linalg.norm(a - b)
            for i, a in enumerate(locs)
            for b in locs[i + 1 :]
        )
        if min_sep <= delta:
            raise PotentialError(
                f"delta = {delta} too large: balls of radius delta/2 overlap "
                f"(min well separation {min_sep:.6g})"
            )
    if resolution ** spec.dimension > 20_000_000:
        raise PotentialError("nondegeneracy sampling grid too large")
    pts = box.grid(resolution)
    dists = np.min(
        np.linalg.norm(pts[:, None, :] - locs[None, :, :], axis=-1), axis=1
    )
    outside = dists >= 0.5 * delta
    if not np.any(outside):
        raise PotentialError("no sample points outside the well balls")
    c_delta = float(np.min(np.asarray(eval_potential(spec, pts[outside]))))
    bound = delta * np.sqrt(max(c_delta, 0.0)) / 4.0
    return c_delta, float(bound)


def verify_energy_geodesic_bound(
    curve: Curve, spec: PotentialSpec, reference: GeodesicResult
) -> float:
    """Energy of the curve minus the reference geodesic value (>= -tol expected)."""
    x = np.asarray(reference.endpoints[0], dtype=float)
    y = np.asarray(reference.endpoints[1], dtype=float)
    a, b = curve.samples[0], curve.samples[-1]
    direct = max(np.linalg.norm(a - x), np.linalg.norm(b - y))
    flipped = max(np.linalg.norm(a - y), np.linalg.norm(b - x))
    if min(direct, flipped) > 1e-9:
        raise PotentialError("reference endpoints do not match the curve's")
    return curve_energy(curve, spec).total - reference.value


def total_variation_geod(
    curve: Curve,
    spec: PotentialSpec,
    partition: Sequence[int],
    box: Box,
    resolution: int,
    graph: Optional[GridGraph] = None,
) -> float:
    """Sum of grid-oracle distances along a partition of the curve's nodes."""
    part = list(partition)
    if any(b <= a for a, b in zip(part, part[1:])):
        raise ValueError("partition indices must be strictly increasing")
    if part[0] < 0 or part[-1] > curve.n_segments:
        raise ValueError("partition indices outside the node range")
    pts = curve.samples[part]
    g = graph if graph is not None else GridGraph(spec, box, resolution)
    if not np.all(g.box.contains(pts)):
        raise PotentialError("oracle box does not contain all partition points")
    snapped = [g.snap(p) for p in pts]
    dist = g.distances_from(snapped[:-1])
    return float(sum(dist[i, snapped[i + 1]] for i in range(len(snapped) - 1)))


def geodesic_result_to_dict(result: GeodesicResult) -> dict:
    return {
        "value": result.value,
        "method": result.method,
        "box": None
        if result.box is None
        else {"lo": list(result.box.lo), "hi": list(result.box.hi)},
        "resolution": result.resolution,
        "endpoints": [list(result.endpoints[0]), list(result.endpoints[1])],
        "converged": result.converged,
    }
