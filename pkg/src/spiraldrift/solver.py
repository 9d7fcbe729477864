"""Barkley-model spiral waves on curved anisotropic surfaces.

Forward evolution uses the divergence-form nine-point stencil with the
densitized inverse metric h^AB = sqrt(g) g^AB sampled at half-node offsets,
explicit Euler in time, and no-flux boundaries imposed by zeroing every
stencil link that crosses the domain edge (which keeps both the zero row sum
and discrete conservation exact).

Spirals are seeded by a cross-field stimulation pre-run in a planar domain of
larger size with the constant metric of the target surface at the origin; the
converged rotating solution is then copied onto the target grid with its
orbit center moved to the requested position.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import (
    ConstantFiber,
    Grid,
    LinearFiber,
    MetricField,
    ParaboloidShape,
    PlaneShape,
    SurfaceSpec,
    christoffel_and_ricci,
)
from .gridio import write_csv, read_csv

__all__ = [
    "BarkleyKinetics",
    "SpiralState",
    "StencilTable",
    "TipPoint",
    "TipTrajectory",
    "PlanarSeed",
    "ExperimentConfig",
    "ExperimentResult",
    "SolverError",
    "NumericalBlowup",
    "AmbiguousTip",
    "SeedingError",
    "STENCIL_OFFSETS",
    "stable_dt",
    "build_stencil",
    "step",
    "evolve",
    "diffusion_step",
    "track_tip",
    "cross_field_state",
    "seed_planar",
    "place_seed",
    "seed_spiral",
    "run_experiment",
    "canonical_config",
    "CANONICAL_NAMES",
]

STENCIL_OFFSETS = tuple((m, n) for m in (-1, 0, 1) for n in (-1, 0, 1))
_CENTER = STENCIL_OFFSETS.index((0, 0))


class SolverError(RuntimeError):
    pass


class NumericalBlowup(SolverError):
    """A state field left the finite range; carries the first bad cell."""

    def __init__(self, cell, t):
        super().__init__(f"non-finite state value at cell {cell} (t = {t:g})")
        self.cell = cell
        self.t = t


class AmbiguousTip(SolverError):
    """Multiple isoline intersections with no previous tip to disambiguate."""


class SeedingError(SolverError):
    """Planar pre-run failed to produce a closed circular tip orbit."""


# ---------------------------------------------------------------------------
# kinetics and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BarkleyKinetics:
    """Two-variable excitable kinetics with diffusion weights per variable.

    f(u, v) = u (1 - u) (u - (v + b)/a) / eps,  g(u, v) = u - v.
    ``D_u`` and ``D_v`` are the diagonal diffusion weights of the fast and
    slow variable (D_v = 0 turns the slow field into a pure relaxation
    variable).
    """

    a: float
    b: float
    eps: float
    D_u: float = 1.0
    D_v: float = 1.0

    def __post_init__(self):
        if self.eps <= 0 or self.a <= 0:
            raise ValueError("Barkley kinetics require a > 0 and eps > 0")
        if self.D_u < 0 or self.D_v < 0:
            raise ValueError("diffusion weights must be non-negative")

    def f(self, u, v):
        return u * (1.0 - u) * (u - (v + self.b) / self.a) / self.eps

    def g(self, u, v):
        return u - v

    @property
    def tip_u_level(self):
        return 0.5

    @property
    def tip_v_level(self):
        # f-nullcline crossing at u = 1/2
        return self.a / 2.0 - self.b

    def to_config(self):
        return {"a": self.a, "b": self.b, "eps": self.eps, "D_u": self.D_u, "D_v": self.D_v}


@dataclass
class SpiralState:
    """State fields on the chart grid at simulation time t."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be 2D arrays of the same shape")

    def copy(self):
        return SpiralState(self.u.copy(), self.v.copy(), self.t)

    @classmethod
    def rest(cls, grid, t=0.0):
        n = grid.n
        return cls(np.zeros((n, n)), np.zeros((n, n)), t)


def _check_finite(state):
    for name, arr in (("u", state.u), ("v", state.v)):
        bad = ~np.isfinite(arr)
        if bad.any():
            cell = tuple(int(k) for k in np.argwhere(bad)[0])
            raise NumericalBlowup(cell, state.t)


# ---------------------------------------------------------------------------
# stencil construction
# ---------------------------------------------------------------------------

@dataclass
class StencilTable:
    """Nine coefficient grids plus the 1/sqrt(g) weights.

    ``coeffs[k]`` is the grid of C_{m,n} for offset ``STENCIL_OFFSETS[k]``.
    The discrete Laplace-Beltrami operator is
    ``lap(w)[i,j] = sum_k coeffs[k][i,j] * w[i+m, j+n] / (dx^2 sqrt(g)[i,j])``.
    Links crossing a domain edge carry zero coefficients (no-flux boundary).
    """

    coeffs: np.ndarray       # (9, n, n)
    inv_sqrt_g: np.ndarray   # (n, n)
    dx: float
    half_node: str

    @property
    def inv_sg_dx2(self):
        if not hasattr(self, "_inv_sg_dx2"):
            self._inv_sg_dx2 = np.ascontiguousarray(self.inv_sqrt_g / (self.dx * self.dx))
        return self._inv_sg_dx2

    def coefficient(self, m, n):
        return self.coeffs[STENCIL_OFFSETS.index((m, n))]

    def row_sums(self):
        return self.coeffs.sum(axis=0)


def _interface_h(metric, half_node):
    """h^AB = sqrt(g) g^AB on the staggered interface grids.

    Returns (h11x, h12x, h22y, h12y): x-interface arrays are (n+1, n) with
    index k for the interface at x_0 + (k - 1/2) dx; y-interface arrays are
    (n, n+1) analogously.  Boundary-crossing interfaces are zeroed.
    """
    grid = metric.grid
    n = grid.n
    xs, ys = grid.xs, grid.ys
    if half_node == "auto":
        half_node = "analytic" if metric.analytic is not None else "mean"

    if half_node == "analytic":
        sym = metric.analytic
        if sym is None:
            raise SolverError("no analytic geometry available for half-node evaluation")
        xh = xs[0] - grid.dx / 2.0 + grid.dx * np.arange(n + 1)
        Xh, Yh = np.meshgrid(xh, ys, indexing="ij")
        hx = sym.h_upper(Xh, Yh)
        h11x, h12x = hx[..., 0, 0].copy(), hx[..., 0, 1].copy()
        Xv, Yv = np.meshgrid(xs, xh, indexing="ij")
        hy = sym.h_upper(Xv, Yv)
        h22y, h12y = hy[..., 1, 1].copy(), hy[..., 0, 1].copy()
    elif half_node == "mean":
        h = metric.g_upper * metric.sqrt_g[..., None, None]
        h11, h12, h22 = h[..., 0, 0], h[..., 0, 1], h[..., 1, 1]
        h11x = np.zeros((n + 1, n))
        h12x = np.zeros((n + 1, n))
        h22y = np.zeros((n, n + 1))
        h12y = np.zeros((n, n + 1))
        h11x[1:n] = 0.5 * (h11[:-1] + h11[1:])
        h12x[1:n] = 0.5 * (h12[:-1] + h12[1:])
        h22y[:, 1:n] = 0.5 * (h22[:, :-1] + h22[:, 1:])
        h12y[:, 1:n] = 0.5 * (h12[:, :-1] + h12[:, 1:])
    else:
        raise SolverError(f"unknown half_node mode {half_node!r}")

    # no-flux: zero every link crossing the domain edge
    h11x[0, :] = h11x[n, :] = 0.0
    h12x[0, :] = h12x[n, :] = 0.0
    h22y[:, 0] = h22y[:, n] = 0.0
    h12y[:, 0] = h12y[:, n] = 0.0
    # cross fluxes reference the diagonal neighbours; drop them along edges
    h12x[:, 0] = h12x[:, n - 1] = 0.0
    h12y[0, :] = h12y[n - 1, :] = 0.0
    return h11x, h12x, h22y, h12y


def build_stencil(metric, half_node="auto"):
    """Coefficient table for the nine-point divergence-form operator.

    ``half_node`` selects how h^AB is sampled at half-node offsets:
    "analytic" evaluates the closed-form expressions on the staggered grids,
    "mean" averages adjacent node values, "auto" prefers analytic when the
    metric carries closed-form geometry.
    """
    grid = metric.grid
    n = grid.n
    h11x, h12x, h22y, h12y = _interface_h(metric, half_node)

    ap = h11x[1:]        # right x-interface of each cell
    am = h11x[:-1]       # left
    bp = h22y[:, 1:]
    bm = h22y[:, :-1]
    cxp = h12x[1:]
    cxm = h12x[:-1]
    cyp = h12y[:, 1:]
    cym = h12y[:, :-1]

    coeffs = np.zeros((9, n, n))
    dy4 = 0.25 * (cyp - cym)
    dx4 = 0.25 * (cxp - cxm)
    coeffs[STENCIL_OFFSETS.index((0, 0))] = -(ap + am + bp + bm)
    coeffs[STENCIL_OFFSETS.index((1, 0))] = ap + dy4
    coeffs[STENCIL_OFFSETS.index((-1, 0))] = am - dy4
    coeffs[STENCIL_OFFSETS.index((0, 1))] = bp + dx4
    coeffs[STENCIL_OFFSETS.index((0, -1))] = bm - dx4
    coeffs[STENCIL_OFFSETS.index((1, 1))] = 0.25 * (cyp + cxp)
    coeffs[STENCIL_OFFSETS.index((-1, -1))] = 0.25 * (cym + cxm)
    coeffs[STENCIL_OFFSETS.index((1, -1))] = -0.25 * (cym + cxp)
    coeffs[STENCIL_OFFSETS.index((-1, 1))] = -0.25 * (cyp + cxm)

    mode = half_node if half_node != "auto" else ("analytic" if metric.analytic is not None else "mean")
    return StencilTable(
        coeffs=np.ascontiguousarray(coeffs),
        inv_sqrt_g=np.ascontiguousarray(1.0 / metric.sqrt_g),
        dx=grid.dx,
        half_node=mode,
    )


def stable_dt(spec):
    """Largest explicit Euler step: 0.9 dx^2 / (4 max(D_L, D_T))."""
    D_L = spec.d_L * spec.D0
    D_T = spec.d_T * spec.D0
    return 0.9 * spec.dx**2 / (4.0 * max(D_L, D_T))


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _call_kernel(u, v, un, vn, stencil, kinetics, dt):
    if kinetics.D_v == 0.0:
        _kernels.step_u_only(
            u, v, un, vn, stencil.coeffs, stencil.inv_sg_dx2,
            dt, kinetics.a, kinetics.b, 1.0 / kinetics.eps, kinetics.D_u,
        )
    else:
        _kernels.step_uv(
            u, v, un, vn, stencil.coeffs, stencil.inv_sg_dx2,
            dt, kinetics.a, kinetics.b, 1.0 / kinetics.eps, kinetics.D_u, kinetics.D_v,
        )


def step(state, stencil, kinetics, dt):
    """One explicit Euler step; returns a new state, aborts on blowup."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    un = np.empty_like(state.u)
    vn = np.empty_like(state.v)
    _call_kernel(state.u, state.v, un, vn, stencil, kinetics, dt)
    out = SpiralState(un, vn, state.t + dt)
    _check_finite(out)
    return out


def evolve(state, stencil, kinetics, dt, n_steps, check_every=200):
    """Advance ``n_steps`` with double buffering; periodic blowup checks."""
    u = state.u.copy()
    v = state.v.copy()
    un = np.empty_like(u)
    vn = np.empty_like(v)
    t = state.t
    for k in range(n_steps):
        _call_kernel(u, v, un, vn, stencil, kinetics, dt)
        u, un = un, u
        v, vn = vn, v
        t += dt
        if check_every and (k + 1) % check_every == 0:
            if not np.isfinite(u[::7, ::7]).all():
                _check_finite(SpiralState(u, v, t))
    out = SpiralState(u, v, t)
    _check_finite(out)
    return out


def diffusion_step(field_values, stencil, dt, weight=1.0):
    """Kinetics-off Euler step of a single field (conservation studies)."""
    out = np.empty_like(field_values)
    _kernels.diffuse(field_values, out, stencil.coeffs, stencil.inv_sg_dx2, dt, weight)
    return out


# ---------------------------------------------------------------------------
# tip tracking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TipPoint:
    x: float
    y: float
    phase: float


def _bilinear_intersections(u, v, ulev, vlev, i, j):
    """Intersections of the two bilinear level sets inside cell (i, j)."""
    a1 = u[i, j] - ulev
    b1 = u[i + 1, j] - u[i, j]
    c1 = u[i, j + 1] - u[i, j]
    d1 = u[i + 1, j + 1] - u[i + 1, j] - u[i, j + 1] + u[i, j]
    a2 = v[i, j] - vlev
    b2 = v[i + 1, j] - v[i, j]
    c2 = v[i, j + 1] - v[i, j]
    d2 = v[i + 1, j + 1] - v[i + 1, j] - v[i, j + 1] + v[i, j]
    # eliminate t: (a1 + b1 s)(c2 + d2 s) = (a2 + b2 s)(c1 + d1 s)
    qa = b1 * d2 - b2 * d1
    qb = a1 * d2 + b1 * c2 - a2 * d1 - b2 * c1
    qc = a1 * c2 - a2 * c1
    eps = 1e-14 * max(1.0, abs(qa), abs(qb), abs(qc))
    roots = []
    if abs(qa) < eps:
        if abs(qb) > eps:
            roots.append(-qc / qb)
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            sq = math.sqrt(disc)
            roots.extend([(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)])
    hits = []
    tol = 1e-9
    for s in roots:
        if not (-tol <= s <= 1.0 + tol):
            continue
        den1 = c1 + d1 * s
        den2 = c2 + d2 * s
        if abs(den1) >= abs(den2):
            if abs(den1) < 1e-300:
                continue
            t = -(a1 + b1 * s) / den1
        else:
            t = -(a2 + b2 * s) / den2
        if -tol <= t <= 1.0 + tol:
            hits.append((min(max(s, 0.0), 1.0), min(max(t, 0.0), 1.0), b1, c1, d1))
    return hits


def track_tip(state, grid, kinetics, prev=None):
    """Locate the spiral tip: crossing of u = 1/2 with v = a/2 - b.

    Candidate cells are those whose corner values bracket both levels; the
    sub-cell position comes from the exact bilinear intersection.  Returns
    ``None`` when no intersection exists.  With several candidates the one
    closest to ``prev`` wins; without a previous tip that situation raises
    `AmbiguousTip`.
    """
    u, v = state.u, state.v
    ulev = kinetics.tip_u_level
    vlev = kinetics.tip_v_level
    u00 = u[:-1, :-1]; u10 = u[1:, :-1]; u01 = u[:-1, 1:]; u11 = u[1:, 1:]
    v00 = v[:-1, :-1]; v10 = v[1:, :-1]; v01 = v[:-1, 1:]; v11 = v[1:, 1:]
    umin = np.minimum(np.minimum(u00, u10), np.minimum(u01, u11))
    umax = np.maximum(np.maximum(u00, u10), np.maximum(u01, u11))
    vmin = np.minimum(np.minimum(v00, v10), np.minimum(v01, v11))
    vmax = np.maximum(np.maximum(v00, v10), np.maximum(v01, v11))
    mask = (umin <= ulev) & (ulev <= umax) & (vmin <= vlev) & (vlev <= vmax)
    cells = np.argwhere(mask)
    if cells.size == 0:
        return None

    xs, ys = grid.xs, grid.ys
    dx = grid.dx
    found = []
    for i, j in cells:
        for s, t, b1, c1, d1 in _bilinear_intersections(u, v, ulev, vlev, i, j):
            x = xs[i] + s * dx
            y = ys[j] + t * dx
            dudx = (b1 + d1 * t) / dx
            dudy = (c1 + d1 * s) / dx
            found.append(TipPoint(x, y, math.atan2(dudy, dudx)))
    if not found:
        return None
    if len(found) == 1:
        return found[0]
    if prev is None:
        raise AmbiguousTip(f"{len(found)} tip candidates and no previous tip")
    return min(found, key=lambda p: (p.x - prev.x) ** 2 + (p.y - prev.y) ** 2)


@dataclass
class TipTrajectory:
    """Raw tip observations over time plus rotation-level summaries."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    phase: np.ndarray
    chirality: int = 0
    status: str = "ok"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.phase = np.asarray(self.phase, dtype=float)
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("tip sample times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def unwrapped_phase(self):
        return np.unwrap(self.phase)

    def winding(self):
        """Total signed phase advance in units of full turns."""
        if len(self.t) < 2:
            return 0.0
        ph = self.unwrapped_phase()
        return (ph[-1] - ph[0]) / (2.0 * np.pi)

    def measured_chirality(self):
        w = self.winding()
        return 0 if w == 0 else (1 if w > 0 else -1)

    def instantaneous_periods(self, window=1.2):
        """Per-sample rotation period from a sliding linear fit of the phase.

        ``window`` is the fit-window width in (estimated) rotations.  Entries
        whose window does not fit inside the data are NaN.
        """
        n = len(self.t)
        out = np.full(n, np.nan)
        if n < 3 or abs(self.winding()) < 1.0:
            return out
        ph = self.unwrapped_phase()
        T0 = abs((self.t[-1] - self.t[0]) / self.winding())
        half = 0.5 * window * T0
        for k in range(n):
            if self.t[k] - half < self.t[0] - 1e-12 or self.t[k] + half > self.t[-1] + 1e-12:
                continue
            lo = np.searchsorted(self.t, self.t[k] - half, side="left")
            hi = np.searchsorted(self.t, self.t[k] + half, side="right")
            if hi - lo < 4:
                continue
            slope = np.polyfit(self.t[lo:hi], ph[lo:hi], 1)[0]
            if slope != 0.0:
                out[k] = 2.0 * np.pi / abs(slope)
        return out

    def rotation_periods(self):
        """Durations of successive full rotations (from phase crossings)."""
        ph = self.unwrapped_phase()
        if len(ph) < 3:
            return np.array([])
        s = 1.0 if ph[-1] >= ph[0] else -1.0
        w = s * (ph - ph[0])
        bounds = []
        target = 2.0 * np.pi
        for k in range(1, len(w)):
            while w[k] >= target:
                # linear interpolation of the crossing time
                frac = (target - w[k - 1]) / (w[k] - w[k - 1])
                bounds.append(self.t[k - 1] + frac * (self.t[k] - self.t[k - 1]))
                target += 2.0 * np.pi
        return np.diff(np.array(bounds)) if len(bounds) > 1 else np.array([])

    def to_csv(self, path):
        periods = self.instantaneous_periods()
        write_csv(path, [self.t, self.x, self.y, self.phase, periods],
                  ["t", "x", "y", "phase", "period_estimate"])

    @classmethod
    def from_csv(cls, path, status="ok"):
        header, data = read_csv(path)
        idx = {name: k for k, name in enumerate(header)}
        traj = cls(
            t=data[:, idx["t"]], x=data[:, idx["x"]], y=data[:, idx["y"]],
            phase=data[:, idx["phase"]], status=status,
        )
        traj.chirality = traj.measured_chirality()
        return traj


# ---------------------------------------------------------------------------
# spiral seeding
# ---------------------------------------------------------------------------

def cross_field_state(grid, kinetics, chirality=1):
    """Cross-field stimulation pattern: excited half-plane against a
    refractory half-plane.  The chirality argument selects which side is
    refractory and hence the rotation sense of the nucleated spiral."""
    n = grid.n
    u = np.zeros((n, n))
    v = np.zeros((n, n))
    X, Y = grid.mesh()
    u[Y < 0.0] = 1.0
    if chirality >= 0:
        v[X < 0.0] = kinetics.a / 2.0
    else:
        v[X > 0.0] = kinetics.a / 2.0
    return SpiralState(u, v, 0.0)


@dataclass
class PlanarSeed:
    """Converged planar spiral plus the measurements taken from its orbit."""

    u: np.ndarray
    v: np.ndarray
    grid: Grid
    kinetics: BarkleyKinetics
    orbit_center: tuple
    omega0: float
    period0: float
    core_radius: float
    chirality: int
    alpha0: float
    d_L: float
    d_T: float
    D0: float
    history: TipTrajectory | None = None

    def save(self, path):
        np.savez_compressed(
            path, u=self.u, v=self.v, L=self.grid.L, dx=self.grid.dx,
            kinetics=np.array([self.kinetics.a, self.kinetics.b, self.kinetics.eps,
                               self.kinetics.D_u, self.kinetics.D_v]),
            orbit_center=np.array(self.orbit_center),
            scalars=np.array([self.omega0, self.period0, self.core_radius,
                              self.chirality, self.alpha0, self.d_L, self.d_T, self.D0]),
        )

    @classmethod
    def load(cls, path):
        z = np.load(path)
        a, b, eps, Du, Dv = z["kinetics"]
        om, T0, rc, ch, al, dL, dT, D0 = z["scalars"]
        return cls(
            u=z["u"], v=z["v"], grid=Grid(float(z["L"]), float(z["dx"])),
            kinetics=BarkleyKinetics(a, b, eps, Du, Dv),
            orbit_center=tuple(z["orbit_center"]),
            omega0=float(om), period0=float(T0), core_radius=float(rc),
            chirality=int(ch), alpha0=float(al), d_L=float(dL), d_T=float(dT),
            D0=float(D0),
        )


def _rotation_centers(times, xs, ys, phases):
    """Time-averaged tip position over each completed rotation."""
    ph = np.unwrap(phases)
    s = 1.0 if ph[-1] >= ph[0] else -1.0
    w = s * (ph - ph[0])
    centers = []
    spans = []
    start = 0
    target = 2.0 * np.pi
    for k in range(1, len(w)):
        if w[k] >= target:
            seg = slice(start, k + 1)
            tt = times[seg]
            if tt[-1] > tt[0]:
                cx = np.trapezoid(xs[seg], tt) / (tt[-1] - tt[0])
                cy = np.trapezoid(ys[seg], tt) / (tt[-1] - tt[0])
                centers.append((cx, cy))
                spans.append((tt[0], tt[-1]))
            start = k
            target += 2.0 * np.pi
    return centers, spans


def seed_planar(kinetics, alpha0=0.0, d_L=1.0, d_T=1.0, D0=1.0, dx=0.1,
                L_seed=40.0, chirality=1, tip_stride=0.25, max_rotations=80,
                center_tol=1e-2, settle_rotations=4, dt=None):
    """Create a rigidly rotating planar spiral by cross-field stimulation.

    Runs in a plane with the constant metric set by ``alpha0, d_L, d_T`` and
    waits until per-rotation orbit centers stop moving (displacement below
    ``center_tol`` per rotation).  Raises `SeedingError` when no closed orbit
    emerges within ``max_rotations`` (parameters outside the spiral regime,
    or the nucleated rotation sense does not match the request).
    """
    spec = SurfaceSpec(PlaneShape(), ConstantFiber(alpha0), d_L, d_T, D0, L=L_seed, dx=dx)
    metric = christoffel_and_ricci(spec)
    stencil = build_stencil(metric)
    if dt is None:
        dt = stable_dt(spec)
    state = cross_field_state(spec.grid, kinetics, chirality)

    n_chunk = max(1, round(tip_stride / dt))
    t_warmup = 4.0  # let the broken front curl before trusting the tip
    times, txs, tys, phs = [], [], [], []
    prev = None
    max_time = 6000.0 * dt * n_chunk  # hard cap, overridden by rotation budget below
    converged = None
    while True:
        state = evolve(state, stencil, kinetics, dt, n_chunk)
        if state.t < t_warmup:
            continue
        try:
            tip = track_tip(state, spec.grid, kinetics, prev)
        except AmbiguousTip:
            tip = None
        if tip is None:
            if state.t > t_warmup + 40.0 and not times:
                raise SeedingError("no spiral tip appeared after stimulation")
            prev = None
            continue
        prev = tip
        times.append(state.t); txs.append(tip.x); tys.append(tip.y); phs.append(tip.phase)
        if len(times) < 8:
            continue
        centers, spans = _rotation_centers(np.array(times), np.array(txs), np.array(tys), np.array(phs))
        if len(centers) > max_rotations:
            raise SeedingError(
                f"tip orbit did not close within {max_rotations} rotations "
                f"(last center drift {np.hypot(*(np.subtract(centers[-1], centers[-2]))):.3g})"
            )
        if len(centers) >= max(3, settle_rotations):
            d = math.hypot(centers[-1][0] - centers[-2][0], centers[-1][1] - centers[-2][1])
            if d < center_tol:
                converged = (centers, spans)
                break
        if state.t > max_time and not centers:
            raise SeedingError("tip found but no full rotation completed")

    centers, spans = converged
    traj = TipTrajectory(np.array(times), np.array(txs), np.array(tys), np.array(phs))
    measured = traj.measured_chirality()
    if measured != chirality:
        raise SeedingError(
            f"nucleated spiral rotates with chirality {measured}, requested {chirality}"
        )
    # rotation-level measurements from the last completed rotation
    t0, t1 = spans[-1]
    period0 = t1 - t0
    omega0 = 2.0 * np.pi / period0
    cx, cy = centers[-1]
    sel = (traj.t >= t0) & (traj.t <= t1)
    core_radius = float(np.mean(np.hypot(traj.x[sel] - cx, traj.y[sel] - cy)))
    return PlanarSeed(
        u=state.u, v=state.v, grid=spec.grid, kinetics=kinetics,
        orbit_center=(cx, cy), omega0=omega0, period0=period0,
        core_radius=core_radius, chirality=measured, alpha0=alpha0,
        d_L=d_L, d_T=d_T, D0=D0, history=traj,
    )


def place_seed(seed, target_grid, position):
    """Copy the planar solution onto the target grid, orbit center moved to
    ``position`` (shift rounded to whole cells; uncovered cells get the rest
    state)."""
    if abs(seed.grid.dx - target_grid.dx) > 1e-12:
        raise SolverError("seed and target grids must share the same spacing")
    dx = target_grid.dx
    kx = round((position[0] - seed.orbit_center[0]) / dx)
    ky = round((position[1] - seed.orbit_center[1]) / dx)
    off = round((seed.grid.L - target_grid.L) / (2.0 * dx))
    nt, ns = target_grid.n, seed.grid.n
    u = np.zeros((nt, nt))
    v = np.zeros((nt, nt))
    # target index -> seed index: i_s = i_t + off - k
    i0 = max(0, kx - off)
    i1 = min(nt, ns + kx - off)
    j0 = max(0, ky - off)
    j1 = min(nt, ns + ky - off)
    if i0 < i1 and j0 < j1:
        for dst, src in ((u, seed.u), (v, seed.v)):
            dst[i0:i1, j0:j1] = src[i0 - kx + off : i1 - kx + off, j0 - ky + off : j1 - ky + off]
    return SpiralState(u, v, 0.0)


def seed_spiral(spec, kinetics, position=(0.0, 0.0), chirality=1,
                seed_margin=10.0, **seed_kwargs):
    """Planar pre-run followed by placement on the target surface.

    The planar domain uses the target's metric at the origin (built-in
    shapes are stationary there, so this is the plane with constant fiber
    angle alpha(0, 0) and the same diffusivities).  Returns the placed state
    and the `PlanarSeed` carrying omega0, core radius and chirality.
    """
    if not spec.grid.contains(*position):
        raise SolverError("requested seed position lies outside the domain")
    margin_cells = math.ceil(max(seed_margin, 2.0 * max(abs(position[0]), abs(position[1]))) / spec.dx)
    L_seed = spec.L + 2 * margin_cells * spec.dx
    alpha0 = float(np.asarray(spec.fiber.value(0.0, 0.0)))
    seed = seed_planar(
        kinetics, alpha0=alpha0, d_L=spec.d_L, d_T=spec.d_T, D0=spec.D0,
        dx=spec.dx, L_seed=L_seed, chirality=chirality, **seed_kwargs,
    )
    state = place_seed(seed, spec.grid, position)
    return state, seed


# ---------------------------------------------------------------------------
# canonical experiment configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One forward-simulation setup (surface + kinetics + run parameters)."""

    a: float
    b: float = 0.19
    eps: float = 0.025
    A: float = 0.0
    B: float = 0.0
    L: float = 40.0
    dx: float = 0.1
    D_v: float = 1.0
    D_L: float = 1.0
    D_T: float = 1.0
    D0: float = 1.0
    t_end: float = 0.0
    seed_position: tuple = (0.0, 0.0)
    chirality: int = 1
    sign: int = -1
    alpha0: float = 0.0
    D_u: float = 1.0
    tip_stride: float = 0.25
    snapshot_stride: float | None = None
    seed_margin: float = 10.0
    name: str = "custom"

    def surface(self):
        shape = ParaboloidShape(self.A, self.sign) if self.A != 0.0 else PlaneShape()
        fiber = LinearFiber(self.B) if self.B != 0.0 else ConstantFiber(self.alpha0)
        return SurfaceSpec(shape, fiber, self.D_L / self.D0, self.D_T / self.D0,
                           self.D0, self.L, self.dx)

    def kinetics(self):
        return BarkleyKinetics(self.a, self.b, self.eps, self.D_u, self.D_v)

    def to_config(self):
        out = {
            "a": self.a, "b": self.b, "eps": self.eps, "A": self.A, "B": self.B,
            "L": self.L, "dx": self.dx, "D_v": self.D_v, "D_L": self.D_L,
            "D_T": self.D_T, "D0": self.D0, "t_end": self.t_end,
            "seed_position": list(self.seed_position), "chirality": self.chirality,
        }
        for key, default in (
            ("sign", -1), ("alpha0", 0.0), ("D_u", 1.0), ("tip_stride", 0.25),
            ("snapshot_stride", None), ("seed_margin", 10.0), ("name", "custom"),
        ):
            val = getattr(self, key)
            if val != default:
                out[key] = val
        return out

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        if "seed_position" in cfg:
            cfg["seed_position"] = tuple(cfg["seed_position"])
        return cls(**cfg)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_config(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_config(json.load(fh))


# Simulation parameter table for the published experiments.  All rows share
# b = 0.19, eps = 0.025, D0 = 1, D_u = 1, D_T = 1.  The fig5a rows use
# A = 0.05 (the paraboloid actually shown; see the decisions ledger for the
# 0.5-vs-0.05 discrepancy in the source table).
_CANONICAL = {
    "fig3":      dict(a=0.7, A=0.1,   B=0.0,           L=40.0, D_v=1.0, D_L=1.0),
    "fig4a":     dict(a=1.3, A=0.0,   B=np.pi / 40.0,  L=30.0, D_v=0.0, D_L=4.0),
    "fig4b":     dict(a=1.1, A=0.0,   B=np.pi / 40.0,  L=30.0, D_v=0.0, D_L=4.0),
    "fig5a":     dict(a=1.3, A=0.05,  B=np.pi / 40.0,  L=40.0, D_v=0.0, D_L=4.0),
    "fig5a_iso": dict(a=1.3, A=0.05,  B=0.0,           L=40.0, D_v=0.0, D_L=1.0),
    "fig5b":     dict(a=1.1, A=0.025, B=np.pi / 80.0,  L=80.0, D_v=0.0, D_L=4.0),
    "fig5b_iso": dict(a=1.1, A=0.025, B=0.0,           L=80.0, D_v=0.0, D_L=1.0),
}

# Desk-scale run lengths and start positions (full-length runs in the source
# material are longer; these show several core diameters of drift).
_DESK = {
    "fig3":      dict(t_end=150.0, seed_position=(3.0, 0.0)),
    "fig4a":     dict(t_end=250.0, seed_position=(0.0, 0.0)),
    "fig4b":     dict(t_end=250.0, seed_position=(0.0, 0.0)),
    "fig5a":     dict(t_end=300.0, seed_position=(0.0, 0.0)),
    "fig5a_iso": dict(t_end=300.0, seed_position=(3.0, 0.0)),
    "fig5b":     dict(t_end=300.0, seed_position=(0.0, 0.0)),
    "fig5b_iso": dict(t_end=300.0, seed_position=(3.0, 0.0)),
}

CANONICAL_NAMES = tuple(_CANONICAL)


def canonical_config(name, desk_scale=True, **overrides):
    """Named experiment setup from the canonical parameter table."""
    if name not in _CANONICAL:
        raise KeyError(f"unknown canonical config {name!r}; know {sorted(_CANONICAL)}")
    kw = dict(a=0.0, b=0.19, eps=0.025, dx=0.1, D_T=1.0, D0=1.0, name=name)
    kw.update(_CANONICAL[name])
    if desk_scale:
        kw.update(_DESK[name])
    kw.update(overrides)
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# forward experiment driver
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trajectory: TipTrajectory
    snapshots: list
    metric: MetricField
    seed: PlanarSeed | None
    dt: float
    n_steps: int
    status: str
    wall_time: float


def run_experiment(config, outdir=None, seed=None, dt=None, metric=None,
                   progress=None):
    """Seed, evolve and track one experiment.

    Returns an `ExperimentResult` with the tip trajectory, any field
    snapshots, and the metric (including the curvature field).  The run
    terminates early, with a flagged status, when the tip is lost or comes
    within two core radii of the boundary.  With ``t_end == 0`` only the
    geometry is produced.

    ``seed`` may carry a precomputed `PlanarSeed` to skip the planar pre-run.
    """
    t_start = time.perf_counter()
    spec = config.surface()
    if metric is None:
        metric = christoffel_and_ricci(spec)
    kin = config.kinetics()
    if dt is None:
        dt = stable_dt(spec)
    bound = stable_dt(spec)
    if dt > bound * (1.0 + 1e-12):
        raise SolverError(f"dt = {dt:g} exceeds the stability bound {bound:g}")

    if config.t_end <= 0.0:
        result = ExperimentResult(
            config=config, trajectory=TipTrajectory([], [], [], [], status="empty"),
            snapshots=[], metric=metric, seed=None, dt=dt, n_steps=0,
            status="geometry-only", wall_time=time.perf_counter() - t_start,
        )
        if outdir is not None:
            _write_experiment(result, outdir)
        return result

    if seed is None:
        _, seed = seed_spiral(spec, kin, config.seed_position, config.chirality,
                              config.seed_margin)
    state = place_seed(seed, spec.grid, config.seed_position)
    stencil = build_stencil(metric)

    n_chunk = max(1, round(config.tip_stride / dt))
    n_total = round(config.t_end / dt)
    jump_bound = max(2.0 * 2.0 * seed.core_radius, 10.0 * spec.dx)
    edge_margin = 2.0 * seed.core_radius
    half = spec.L / 2.0

    times, txs, tys, phs = [], [], [], []
    snapshots = []
    status = "ok"
    prev = None
    snap_due = 0.0
    steps_done = 0
    while steps_done < n_total:
        k = min(n_chunk, n_total - steps_done)
        state = evolve(state, stencil, kin, dt, k)
        steps_done += k
        if config.snapshot_stride is not None and state.t >= snap_due:
            snapshots.append((state.t, state.u.copy(), state.v.copy()))
            snap_due += config.snapshot_stride
        try:
            tip = track_tip(state, spec.grid, kin, prev)
        except AmbiguousTip:
            status = "tracking_lost"
            break
        if tip is None:
            status = "tracking_lost"
            break
        if prev is not None and math.hypot(tip.x - prev.x, tip.y - prev.y) > jump_bound:
            status = "tracking_lost"
            break
        prev = tip
        times.append(state.t); txs.append(tip.x); tys.append(tip.y); phs.append(tip.phase)
        if progress is not None and len(times) % 50 == 0:
            progress(state.t, tip)
        if max(abs(tip.x), abs(tip.y)) > half - edge_margin:
            status = "boundary"
            break

    traj = TipTrajectory(np.array(times), np.array(txs), np.array(tys), np.array(phs),
                         status=status)
    traj.chirality = traj.measured_chirality()
    snapshots.append((state.t, state.u.copy(), state.v.copy()))
    result = ExperimentResult(
        config=config, trajectory=traj, snapshots=snapshots, metric=metric,
        seed=seed, dt=dt, n_steps=steps_done, status=status,
        wall_time=time.perf_counter() - t_start,
    )
    if outdir is not None:
        _write_experiment(result, outdir)
    return result


def _code_version():
    import subprocess

    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    from . import __version__

    return f"spiraldrift-{__version__}"


def _write_experiment(result, outdir):
    import os

    from .gridio import save_grid

    os.makedirs(outdir, exist_ok=True)
    grid = result.metric.grid
    x0 = y0 = -grid.L / 2.0
    save_grid(os.path.join(outdir, "ricci.bin"), result.metric.ricci,
              grid.dx, x0, y0, name="ricci")
    save_grid(os.path.join(outdir, "sqrt_g.bin"), result.metric.sqrt_g,
              grid.dx, x0, y0, name="sqrt_g")
    if len(result.trajectory):
        result.trajectory.to_csv(os.path.join(outdir, "tip.csv"))
    for k, (t, u, v) in enumerate(result.snapshots):
        save_grid(os.path.join(outdir, f"snapshot_{k:04d}_u.bin"), u, grid.dx, x0, y0, name="u")
        save_grid(os.path.join(outdir, f"snapshot_{k:04d}_v.bin"), v, grid.dx, x0, y0, name="v")
    meta = {
        "config": result.config.to_config(),
        "dt": result.dt,
        "n_steps": result.n_steps,
        "status": result.status,
        "wall_time_s": result.wall_time,
        "code_version": _code_version(),
    }
    if result.seed is not None:
        meta["seed"] = {
            "omega0": result.seed.omega0,
            "period0": result.seed.period0,
            "core_radius": result.seed.core_radius,
            "chirality": result.seed.chirality,
        }
    with open(os.path.join(outdir, "run.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
