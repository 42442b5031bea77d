"""Polynomial multi-well potentials: evaluation, wells, hypothesis checks.

A potential is a finite sum of monomials plus a constant offset,
W(z) = sum_t c_t * prod_i z_i^{e_ti} + offset, with W >= 0 required on a
validation box.  An optional axis-aligned box mask represents the
"+infinity outside" extension; masked specs are evaluable but rejected by
every solver in this package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

__all__ = [
    "Box",
    "PotentialSpec",
    "Well",
    "ASliceReport",
    "HypothesisReport",
    "PotentialError",
    "MaskViolationError",
    "TooManyWellsError",
    "eval_potential",
    "grad_potential",
    "find_wells",
    "check_hypotheses",
    "shift_potential_a",
    "restrict_first_component",
    "ginzburg_landau",
    "four_well",
    "named_potential",
    "spec_to_json",
    "spec_from_json",
]

WELL_TOLERANCE = 1e-10
MERGE_RADIUS = 1e-4
MAX_WELLS = 64
H2_THRESHOLD = 1e-6
DESCENT_STEP = 1e-2
DESCENT_STEP_LIMIT = 1e-12
DESCENT_MAX_ITER = 100_000

_VALIDATION_SEED = 20240 + 1


class PotentialError(ValueError):
    """Malformed spec or dimension mismatch."""


class MaskViolationError(PotentialError):
    """A point outside the box mask was passed where finiteness is required."""


class TooManyWellsError(PotentialError):
    """More candidate wells survived merging than max_wells allows."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_i, hi_i] in R^N."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise PotentialError("box lo/hi must be 1-d and of equal length")
        if np.any(hi <= lo):
            raise PotentialError("box must have hi > lo in every axis")
        object.__setattr__(self, "lo", tuple(float(v) for v in lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in hi))

    @property
    def dimension(self) -> int:
        return len(self.lo)

    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lo, hi = self.lo_array(), self.hi_array()
        return np.all((z >= lo) & (z <= hi), axis=-1)

    def grid(self, resolution: int) -> np.ndarray:
        """Regular lattice with `resolution` nodes per axis, shape (res^N, N)."""
        axes = [np.linspace(l, h, resolution) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def inflated(self, factor: float) -> "Box":
        lo, hi = self.lo_array(), self.hi_array()
        c = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * factor
        return Box(tuple(c - half), tuple(c + half))

    @staticmethod
    def cube(lo: float, hi: float, dimension: int) -> "Box":
        return Box((lo,) * dimension, (hi,) * dimension)


def _normalize_terms(dimension, terms):
    out = []
    for item in terms:
        coeff, exponents = item
        exponents = tuple(int(e) for e in exponents)
        if len(exponents) != dimension:
            raise PotentialError(
                f"term exponents {exponents} do not match dimension {dimension}"
            )
        if any(e < 0 for e in exponents):
            raise PotentialError("monomial exponents must be non-negative")
        out.append((float(coeff), exponents))
    return tuple(out)


@dataclass(frozen=True)
class PotentialSpec:
    """Monomial-sum potential W: R^N -> [0, inf), immutable after construction.

    The constructor scans a validation box (the mask box when present,
    otherwise [-3, 3]^N unless overridden) and rejects specs whose sampled
    minimum is negative beyond roundoff.
    """

    dimension: int
    terms: tuple
    constant_offset: float = 0.0
    box_mask: Optional[Box] = None
    name: str = "potential"
    validation_box: Optional[Box] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise PotentialError("dimension must be >= 1")
        object.__setattr__(self, "terms", _normalize_terms(self.dimension, self.terms))
        object.__setattr__(self, "constant_offset", float(self.constant_offset))
        if self.box_mask is not None and self.box_mask.dimension != self.dimension:
            raise PotentialError("box_mask dimension mismatch")
        coeffs = np.array([c for c, _ in self.terms], dtype=float)
        expo = np.array(
            [e for _, e in self.terms], dtype=float
        ).reshape(len(self.terms), self.dimension)
        object.__setattr__(self, "_coeffs", coeffs)
        object.__setattr__(self, "_expo", expo)
        self._validate_nonnegative()

    def _validate_nonnegative(self):
        box = self.validation_box or self.box_mask or Box.cube(-3.0, 3.0, self.dimension)
        res = {1: 257, 2: 65, 3: 23}.get(self.dimension, 9)
        pts = box.grid(res)
        rng = np.random.default_rng(_VALIDATION_SEED)
        lo, hi = box.lo_array(), box.hi_array()
        pts = np.concatenate(
            [pts, lo + (hi - lo) * rng.random((512, self.dimension))], axis=0
        )
        vals = self._eval_raw(pts)
        scale = 1.0 + float(np.max(np.abs(vals)))
        if float(np.min(vals)) < -1e-9 * scale:
            raise PotentialError(
                f"potential {self.name!r} samples negative "
                f"(min {float(np.min(vals)):.3e} on validation box)"
            )

    def _power_table(self, z: np.ndarray) -> list:
        """pows[e] = z**e computed by cumulative products (fast for small e)."""
        max_e = int(self._expo.max()) if len(self.terms) else 0
        pows = [np.ones_like(z)]
        for _ in range(max_e):
            pows.append(pows[-1] * z)
        return pows

    def _eval_raw(self, z: np.ndarray) -> np.ndarray:
        """Monomial sum without mask handling; z has shape (..., N)."""
        out = np.full(z.shape[:-1], self.constant_offset)
        if len(self.terms) == 0:
            return out
        pows = self._power_table(z)
        for coeff, expo in self.terms:
            mono = None
            for j, e in enumerate(expo):
                if e == 0:
                    continue
                factor = pows[e][..., j]
                mono = factor if mono is None else mono * factor
            out = out + (coeff if mono is None else coeff * mono)
        return out

    def _grad_raw(self, z: np.ndarray) -> np.ndarray:
        g = np.zeros_like(z)
        if len(self.terms) == 0:
            return g
        pows = self._power_table(z)
        for coeff, expo in self.terms:
            for j, ej in enumerate(expo):
                if ej == 0:
                    continue
                mono = coeff * ej * pows[ej - 1][..., j]
                for i, ei in enumerate(expo):
                    if ei == 0 or i == j:
                        continue
                    mono = mono * pows[ei][..., i]
                g[..., j] += mono
        return g

    def masked(self) -> bool:
        return self.box_mask is not None


def _check_point(spec: PotentialSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if spec.dimension == 1 and z.ndim == 0:
        z = z.reshape(1)
    if z.shape[-1] != spec.dimension:
        raise PotentialError(
            f"point of dimension {z.shape[-1] if z.ndim else 0} passed to "
            f"{spec.dimension}-dimensional potential {spec.name!r}"
        )
    return z


def eval_potential(spec: PotentialSpec, z):
    """Evaluate W(z).  Returns +inf where z falls outside the box mask.

    Accepts a single point of shape (N,) (scalar for N = 1) or a batch of
    shape (..., N); the return matches the batch shape.
    """
    z = _check_point(spec, z)
    if not np.all(np.isfinite(z)):
        raise PotentialError("potential evaluated at non-finite point")
    vals = spec._eval_raw(z)
    if spec.box_mask is not None:
        inside = spec.box_mask.contains(z)
        vals = np.where(inside, vals, np.inf)
    if vals.ndim == 0:
        return float(vals)
    return vals


def grad_potential(spec: PotentialSpec, z):
    """Exact gradient of the monomial sum at z (z must lie inside any mask)."""
    z = _check_point(spec, z)
    if not np.all(np.isfinite(z)):
        raise PotentialError("gradient requested at non-finite point")
    if spec.box_mask is not None and not np.all(spec.box_mask.contains(z)):
        raise MaskViolationError("gradient requested outside the box mask")
    return spec._grad_raw(z)


@dataclass(frozen=True)
class Well:
    """A zero of W: refined location, residual value, sampled basin radius."""

    location: tuple
    residual: float
    basin_radius: float

    def location_array(self) -> np.ndarray:
        return np.asarray(self.location, dtype=float)


def _descend(spec: PotentialSpec, z0: np.ndarray) -> np.ndarray:
    """Fixed-step gradient descent, step halved on any increase of W."""
    z = np.array(z0, dtype=float)
    fz = float(spec._eval_raw(z))
    eta = DESCENT_STEP
    for _ in range(DESCENT_MAX_ITER):
        g = spec._grad_raw(z)
        gn = float(np.linalg.norm(g))
        if eta * gn < DESCENT_STEP_LIMIT:
            break
        z_new = z - eta * g
        f_new = float(spec._eval_raw(z_new))
        # slack keeps roundoff noise in W from stalling the descent near a well
        if f_new > fz + 1e-15 * (1.0 + abs(fz)):
            eta *= 0.5
            continue
        z, fz = z_new, f_new
    return z


def _sphere_directions(dimension: int, count: int, seed: int = 7) -> np.ndarray:
    if dimension == 1:
        return np.array([[1.0], [-1.0]])
    if dimension == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if dimension == 3:
        # Fibonacci sphere
        k = np.arange(count, dtype=float)
        phi = np.arccos(1.0 - 2.0 * (k + 0.5) / count)
        golden = np.pi * (3.0 - np.sqrt(5.0))
        theta = golden * k
        return np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
            axis=-1,
        )
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, dimension))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _basin_radius(spec: PotentialSpec, loc: np.ndarray, r_max: float) -> float:
    dirs = _sphere_directions(spec.dimension, 128 if spec.dimension > 1 else 2)
    radii = np.linspace(r_max / 24.0, r_max, 24)
    for r in radii[::-1]:
        pts = loc + r * dirs
        if float(np.min(spec._eval_raw(pts))) > WELL_TOLERANCE:
            return float(r)
    return 0.0


def find_wells(
    spec: PotentialSpec,
    search_box: Box,
    grid_resolution: int = 64,
    well_tolerance: float = WELL_TOLERANCE,
    merge_radius: float = MERGE_RADIUS,
    max_wells: int = MAX_WELLS,
) -> list:
    """Locate the zero set of W inside search_box.

    Grid-scans for local minima of the sampled values, refines each
    candidate by fixed-step gradient descent, keeps refined points with
    W <= well_tolerance, merges duplicates within merge_radius and returns
    the wells sorted lexicographically by location.
    """
    if grid_resolution < 8:
        raise PotentialError("grid_resolution must be >= 8 per axis")
    if search_box.dimension != spec.dimension:
        raise PotentialError("search_box dimension mismatch")
    if grid_resolution ** spec.dimension > 4_000_000:
        raise PotentialError("grid scan too large; lower grid_resolution")

    pts = search_box.grid(grid_resolution)
    vals = spec._eval_raw(pts).reshape((grid_resolution,) * spec.dimension)
    local_min = vals <= ndimage.minimum_filter(vals, size=3, mode="nearest")
    candidates = pts.reshape(vals.shape + (spec.dimension,))[local_min]

    refined = []
    for z0 in candidates:
        z = _descend(spec, z0)
        if float(spec._eval_raw(z)) <= well_tolerance:
            refined.append(z)
    if not refined:
        return []

    refined.sort(key=lambda z: float(spec._eval_raw(z)))
    kept = []
    for z in refined:
        if all(np.linalg.norm(z - k) > merge_radius for k in kept):
            kept.append(z)
    if len(kept) > max_wells:
        raise TooManyWellsError(
            f"{len(kept)} well candidates survive merging (max {max_wells}); "
            "the zero set may not be finite at this resolution"
        )

    if len(kept) >= 2:
        sep = min(
            np.linalg.norm(a - b) for i, a in enumerate(kept) for b in kept[i + 1 :]
        )
        r_max = 0.5 * sep
    else:
        r_max = 1.0

    kept.sort(key=lambda z: tuple(z))
    return [
        Well(
            location=tuple(float(v) for v in z),
            residual=float(spec._eval_raw(z)),
            basin_radius=_basin_radius(spec, z, r_max),
        )
        for z in kept
    ]


@dataclass(frozen=True)
class ASliceReport:
    """Checks of the slice hypotheses for W(a, .)."""

    a: float
    well_count: int
    infimum_near_a: float
    holds: bool


@dataclass(frozen=True)
class HypothesisReport:
    h1_well_count: int
    h2_infimum_at_radius: float
    h2_holds: bool
    a_slice_report: Optional[ASliceReport]
    check_box: Box
    sample_resolution: int


def _mask_boundary_samples(box: Box, per_face: int) -> np.ndarray:
    """Sample points on the faces of a box."""
    n = box.dimension
    lo, hi = box.lo_array(), box.hi_array()
    if n == 1:
        return np.array([[lo[0]], [hi[0]]])
    per_axis = max(2, int(round(per_face ** (1.0 / (n - 1)))))
    faces = []
    for j in range(n):
        axes = [
            np.linspace(lo[i], hi[i], per_axis) for i in range(n) if i != j
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=-1)
        for value in (lo[j], hi[j]):
            face = np.empty((flat.shape[0], n))
            face[:, j] = value
            face[:, [i for i in range(n) if i != j]] = flat
            faces.append(face)
    return np.concatenate(faces, axis=0)


def check_hypotheses(
    spec: PotentialSpec,
    check_box: Box,
    R_check: float,
    a: Optional[float] = None,
    grid_resolution: int = 64,
    delta_a: float = 0.1,
) -> HypothesisReport:
    """Sample-based report on the finite-well and coercivity hypotheses.

    The liminf at infinity is approximated by the minimum of W over a
    single sphere of radius R_check (4096 directions for N <= 3, 1e5
    random directions above), or over the mask boundary when a box mask is
    present.  When `a` is given, the slice variant additionally scans the
    wells of W(a, .) and samples W near {z_1 = a, |z'| = R_check}.
    """
    wells = find_wells(spec, check_box, grid_resolution)
    if wells:
        circumradius = max(np.linalg.norm(w.location_array()) for w in wells)
        if spec.box_mask is None and R_check <= circumradius:
            raise PotentialError(
                f"R_check = {R_check} must exceed the well-set circumradius "
                f"{circumradius:.6g}"
            )

    n_dirs = 4096 if spec.dimension <= 3 else 100_000
    if spec.box_mask is not None:
        sphere = _mask_boundary_samples(spec.box_mask, 2048)
    else:
        sphere = R_check * _sphere_directions(spec.dimension, n_dirs)
    h2_inf = float(np.min(spec._eval_raw(sphere)))
    h2_holds = h2_inf > H2_THRESHOLD

    a_report = None
    if a is not None:
        if spec.dimension < 2:
            raise PotentialError("slice hypotheses need dimension >= 2")
        restricted = restrict_first_component(spec, a)
        sub_box = Box(check_box.lo[1:], check_box.hi[1:])
        slice_wells = find_wells(restricted, sub_box, grid_resolution)
        z1 = a + np.linspace(-delta_a, delta_a, 17)
        dirs = _sphere_directions(spec.dimension - 1, 1024)
        zp = R_check * dirs
        pts = np.concatenate(
            [
                np.column_stack([np.full(len(zp), t), zp])
                for t in z1
            ],
            axis=0,
        )
        inf_a = float(np.min(spec._eval_raw(pts)))
        a_report = ASliceReport(
            a=float(a),
            well_count=len(slice_wells),
            infimum_near_a=inf_a,
            holds=inf_a > H2_THRESHOLD,
        )

    return HypothesisReport(
        h1_well_count=len(wells),
        h2_infimum_at_radius=h2_inf,
        h2_holds=h2_holds,
        a_slice_report=a_report,
        check_box=check_box,
        sample_resolution=grid_resolution,
    )


def shift_potential_a(spec: PotentialSpec, a: float) -> PotentialSpec:
    """Return the spec of W(z) + 4 pi^2 (z_1 - a)^2, expanded in monomials."""
    a = float(a)
    c = 4.0 * np.pi ** 2
    e2 = tuple([2] + [0] * (spec.dimension - 1))
    e1 = tuple([1] + [0] * (spec.dimension - 1))
    terms = list(spec.terms) + [(c, e2)]
    if a != 0.0:
        terms.append((-2.0 * c * a, e1))
    return PotentialSpec(
        dimension=spec.dimension,
        terms=tuple(terms),
        constant_offset=spec.constant_offset + c * a * a,
        box_mask=spec.box_mask,
        name=spec.name + "_a",
        validation_box=spec.validation_box,
    )


def restrict_first_component(spec: PotentialSpec, a: float) -> PotentialSpec:
    """The (N-1)-dimensional potential z' -> W(a, z')."""
    if spec.dimension < 2:
        raise PotentialError("cannot restrict a 1-dimensional potential")
    a = float(a)
    offset = spec.constant_offset
    terms = []
    for coeff, expo in spec.terms:
        c = coeff * a ** expo[0]
        if c == 0.0:
            continue
        rest = expo[1:]
        if all(e == 0 for e in rest):
            offset += c
        else:
            terms.append((c, rest))
    mask = None
    if spec.box_mask is not None:
        mask = Box(spec.box_mask.lo[1:], spec.box_mask.hi[1:])
    return PotentialSpec(
        dimension=spec.dimension - 1,
        terms=tuple(terms),
        constant_offset=offset,
        box_mask=mask,
        name=f"{spec.name}|z1={a:g}",
    )


# ---------------------------------------------------------------------------
# Built-in specs and JSON round trip
# ---------------------------------------------------------------------------

def ginzburg_landau() -> PotentialSpec:
    """Scalar double well W(u) = (1 - u^2)^2 / 2 with wells at -1 and +1."""
    return PotentialSpec(
        dimension=1,
        terms=((0.5, (4,)), (-1.0, (2,))),
        constant_offset=0.5,
        name="gl1d",
    )


def four_well(coupling: float = 2.0) -> PotentialSpec:
    """Planar potential with the four wells (0, +-1), (+-1, 0).

    W(u1, u2) = (u1^2-1)^2/2 + (u2^2-1)^2/2 + coupling u1^2 u2^2 - 1/2;
    non-negative for coupling >= 1.
    """
    if coupling < 1.0:
        raise PotentialError("four_well requires coupling >= 1")
    lam = float(coupling)
    return PotentialSpec(
        dimension=2,
        terms=(
            (0.5, (4, 0)),
            (0.5, (0, 4)),
            (-1.0, (2, 0)),
            (-1.0, (0, 2)),
            (lam, (2, 2)),
        ),
        constant_offset=0.5,
        name=f"fourwell:{lam:g}",
    )


def named_potential(name: str) -> PotentialSpec:
    """Construct a built-in spec from its CLI name (gl1d, fourwell:<coupling>)."""
    if name == "gl1d":
        return ginzburg_landau()
    if name.startswith("fourwell:"):
        return four_well(float(name.split(":", 1)[1]))
    if name == "fourwell":
        return four_well()
    raise PotentialError(f"unknown potential name {name!r}")


def spec_to_json(spec: PotentialSpec) -> str:
    doc = {
        "name": spec.name,
        "dimension": spec.dimension,
        "offset": spec.constant_offset,
        "terms": [
            {"coeff": c, "exponents": list(e)} for c, e in spec.terms
        ],
    }
    if spec.box_mask is not None:
        doc["box_mask"] = {
            "lo": list(spec.box_mask.lo),
            "hi": list(spec.box_mask.hi),
        }
    return json.dumps(doc, indent=2, sort_keys=True)


def spec_from_json(text: str) -> PotentialSpec:
    doc = json.loads(text)
    mask = None
    if "box_mask" in doc and doc["box_mask"] is not None:
        mask = Box(tuple(doc["box_mask"]["lo"]), tuple(doc["box_mask"]["hi"]))
    return PotentialSpec(
        dimension=int(doc["dimension"]),
        terms=tuple(
            (t["coeff"], tuple(t["exponents"])) for t in doc.get("terms", [])
        ),
        constant_offset=float(doc.get("offset", 0.0)),
        box_mask=mask,
        name=str(doc.get("name", "potential")),
    )
