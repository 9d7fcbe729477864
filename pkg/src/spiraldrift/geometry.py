"""Diffusion-induced metric and curvature fields for anisotropic curved surfaces.

A surface z = f(x, y) carrying a fiber direction field (projected fiber angle
alpha) and principal diffusivities (d_L along fibers, d_T across) induces a
2D Riemannian metric on the (x, y) chart: the metric is the reference
diffusivity D0 times the inverse of the diffusion tensor, restricted to the
surface.  The Ricci curvature scalar of that metric is the quantity whose
gradient drives spiral-wave drift, so this module is the ground truth for
everything downstream.

Two evaluation routes are provided:

* an analytic route (symbolic differentiation, exact to roundoff) available
  whenever shape and fiber field are built-ins with closed-form derivatives;
* a grid route using finite differences (4th-order centered in the interior,
  2nd-order one-sided at edges) for tabulated inputs and cross-checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

__all__ = [
    "PlaneShape",
    "ParaboloidShape",
    "TabulatedShape",
    "ConstantFiber",
    "LinearFiber",
    "TabulatedFiber",
    "Grid",
    "SurfaceSpec",
    "FiberFrame",
    "MetricField",
    "GeometryError",
    "fiber_frame",
    "diffusion_tensor_3d",
    "induced_metric",
    "christoffel_and_ricci",
    "ricci_decomposition",
    "fd_derivative",
]

# Alternating symbol, eps[0,1] = +1 (coordinates (x, y) right-handed,
# surface normal chosen with positive z-component).
LEVI_CIVITA = np.array([[0.0, 1.0], [-1.0, 0.0]])


class GeometryError(ValueError):
    """Invalid surface specification or degenerate geometric data."""


# ---------------------------------------------------------------------------
# scalar fields: surface shape and fiber angle
# ---------------------------------------------------------------------------

def _tabulated_derivative(values, dx, axis):
    return fd_derivative(values, dx, axis=axis)


@dataclass(frozen=True)
class PlaneShape:
    """Flat surface f(x, y) = 0."""

    kind = "plane"

    def value(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def dx(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def dy(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    symbolic = True

    def expr(self, x, y):
        return sp.Integer(0)

    def to_config(self):
        return {"kind": "plane"}


@dataclass(frozen=True)
class ParaboloidShape:
    """Paraboloid of revolution f(x, y) = sign * A * (x^2 + y^2)."""

    A: float
    sign: int = -1

    kind = "paraboloid"
    symbolic = True

    def __post_init__(self):
        if self.A <= 0:
            raise GeometryError("paraboloid coefficient A must be positive")
        if self.sign not in (-1, 1):
            raise GeometryError("paraboloid sign must be +1 or -1")

    def value(self, x, y):
        return self.sign * self.A * (np.asarray(x) ** 2 + np.asarray(y) ** 2)

    def dx(self, x, y):
        return 2.0 * self.sign * self.A * np.asarray(x) * np.ones_like(np.asarray(y, dtype=float))

    def dy(self, x, y):
        return 2.0 * self.sign * self.A * np.asarray(y) * np.ones_like(np.asarray(x, dtype=float))

    def expr(self, x, y):
        return self.sign * sp.Float(self.A) * (x**2 + y**2)

    def to_config(self):
        return {"kind": "paraboloid", "A": self.A, "sign": self.sign}


class TabulatedShape:
    """Surface height sampled on the grid; derivatives by finite differences."""

    kind = "tabulated"
    symbolic = False

    def __init__(self, values, dx):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise GeometryError("tabulated shape must be a 2D array")
        if not np.all(np.isfinite(values)):
            raise GeometryError("tabulated shape contains non-finite samples")
        self.values = values
        self.grid_dx = float(dx)
        self._fx = _tabulated_derivative(values, self.grid_dx, axis=0)
        self._fy = _tabulated_derivative(values, self.grid_dx, axis=1)

    # Tabulated fields are only evaluable on their own grid nodes.
    def node_values(self):
        return self.values

    def node_dx(self):
        return self._fx

    def node_dy(self):
        return self._fy

    def to_config(self):
        return {"kind": "tabulated"}


@dataclass(frozen=True)
class ConstantFiber:
    """Uniform fiber angle alpha(x, y) = alpha0 (radians)."""

    alpha0: float = 0.0

    kind = "constant"
    symbolic = True

    def value(self, x, y):
        return np.full(np.broadcast(x, y).shape, self.alpha0)

    def dx(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def dy(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def expr(self, x, y):
        if self.alpha0 == 0.0:
            return sp.Integer(0)
        return sp.Float(self.alpha0)

    def to_config(self):
        return {"kind": "constant", "alpha0": self.alpha0}


@dataclass(frozen=True)
class LinearFiber:
    """Linearly rotating fiber angle alpha(x, y) = B * (x + y)."""

    B: float

    kind = "linear"
    symbolic = True

    def value(self, x, y):
        return self.B * (np.asarray(x) + np.asarray(y))

    def dx(self, x, y):
        return np.full(np.broadcast(x, y).shape, self.B)

    def dy(self, x, y):
        return np.full(np.broadcast(x, y).shape, self.B)

    def expr(self, x, y):
        if self.B == 0.0:
            return sp.Integer(0)
        return sp.Float(self.B) * (x + y)

    def to_config(self):
        return {"kind": "linear", "B": self.B}


class TabulatedFiber:
    """Fiber angle sampled on the grid; derivatives by finite differences."""

    kind = "tabulated"
    symbolic = False

    def __init__(self, values, dx):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise GeometryError("tabulated fiber angle must be a 2D array")
        self.values = values
        self.grid_dx = float(dx)

    def node_values(self):
        return self.values

    def to_config(self):
        return {"kind": "tabulated"}


def shape_from_config(cfg):
    kind = cfg["kind"]
    if kind == "plane":
        return PlaneShape()
    if kind == "paraboloid":
        return ParaboloidShape(A=float(cfg["A"]), sign=int(cfg.get("sign", -1)))
    raise GeometryError(f"unknown shape kind {kind!r}")


def fiber_from_config(cfg):
    kind = cfg["kind"]
    if kind == "constant":
        return ConstantFiber(alpha0=float(cfg.get("alpha0", 0.0)))
    if kind == "linear":
        return LinearFiber(B=float(cfg["B"]))
    raise GeometryError(f"unknown fiber kind {kind!r}")


# ---------------------------------------------------------------------------
# grid and surface specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform rectangular chart [-L/2, L/2]^2 with spacing dx (dy = dx)."""

    L: float
    dx: float

    def __post_init__(self):
        if self.dx <= 0 or self.L <= 0:
            raise GeometryError("grid requires L > 0 and dx > 0")
        ratio = self.L / self.dx
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise GeometryError("L/dx must be a positive integer")

    @property
    def n(self):
        return int(round(self.L / self.dx)) + 1

    @cached_property
    def xs(self):
        return -self.L / 2.0 + self.dx * np.arange(self.n)

    @property
    def ys(self):
        return self.xs

    def mesh(self):
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def contains(self, x, y):
        h = self.L / 2.0
        return (np.abs(x) <= h) & (np.abs(y) <= h)

    def index_of(self, x, y):
        """Nearest node index (i, j) of a chart point."""
        i = int(round((x + self.L / 2.0) / self.dx))
        j = int(round((y + self.L / 2.0) / self.dx))
        return i, j


@dataclass(frozen=True)
class SurfaceSpec:
    """Physical problem definition: shape + fiber field + diffusivities + grid.

    Parameters
    ----------
    shape : shape field
        Surface height z = f(x, y).  Built-ins (`PlaneShape`,
        `ParaboloidShape`) have exact derivatives and enable the analytic
        curvature route; `TabulatedShape` falls back to finite differences.
    fiber : fiber field
        Projected fiber angle alpha(x, y), defined through
        tan(alpha) = (e_L . e_y) / (e_L . e_x).
    d_L, d_T : float
        Dimensionless principal diffusivities along/across fibers,
        d_L >= d_T > 0.
    D0 : float
        Reference diffusivity used to de-dimensionalize the metric.
    L, dx : float
        Domain is the square [-L/2, L/2]^2 sampled with spacing dx.
    """

    shape: object
    fiber: object
    d_L: float = 1.0
    d_T: float = 1.0
    D0: float = 1.0
    L: float = 40.0
    dx: float = 0.1

    def __post_init__(self):
        if not (self.d_L >= self.d_T > 0.0):
            raise GeometryError("diffusivities must satisfy d_L >= d_T > 0")
        if self.D0 <= 0.0:
            raise GeometryError("reference diffusivity D0 must be positive")
        Grid(self.L, self.dx)  # validates L/dx
        if self.shape.kind in ("plane", "paraboloid"):
            # built-in shapes are stationary at the chart origin
            fx0 = np.asarray(self.shape.dx(0.0, 0.0))
            fy0 = np.asarray(self.shape.dy(0.0, 0.0))
            if abs(float(fx0)) > 1e-12 or abs(float(fy0)) > 1e-12:
                raise GeometryError("built-in shapes must have vanishing gradient at the origin")

    @property
    def grid(self):
        return Grid(self.L, self.dx)

    @property
    def is_symbolic(self):
        return self.shape.symbolic and self.fiber.symbolic

    def isotropic_twin(self):
        """Same surface with d_L = d_T = 1 (auxiliary metric for decomposition)."""
        return SurfaceSpec(self.shape, self.fiber, 1.0, 1.0, self.D0, self.L, self.dx)

    # -- configuration (JSON) --------------------------------------------

    def to_config(self):
        return {
            "shape": self.shape.to_config(),
            "fiber": self.fiber.to_config(),
            "dL": self.d_L,
            "dT": self.d_T,
            "D0": self.D0,
            "L": self.L,
            "dx": self.dx,
        }

    @classmethod
    def from_config(cls, cfg):
        return cls(
            shape=shape_from_config(cfg["shape"]),
            fiber=fiber_from_config(cfg["fiber"]),
            d_L=float(cfg.get("dL", 1.0)),
            d_T=float(cfg.get("dT", 1.0)),
            D0=float(cfg.get("D0", 1.0)),
            L=float(cfg["L"]),
            dx=float(cfg["dx"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_config(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_config(json.load(fh))


# ---------------------------------------------------------------------------
# pointwise frame / tensor / metric evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberFrame:
    """Orthonormal surface frame: fiber tangent, transverse tangent, normal."""

    e_L: np.ndarray
    e_T: np.ndarray
    e_N: np.ndarray


def _shape_gradients(spec, x, y):
    fx = np.asarray(spec.shape.dx(x, y), dtype=float)
    fy = np.asarray(spec.shape.dy(x, y), dtype=float)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
        raise GeometryError("non-finite shape gradient (invalid shape samples)")
    return fx, fy


def fiber_frame(spec, point):
    """Orthonormal frame (e_L, e_T, e_N) at a chart point.

    e_L points along the fiber direction projected onto the surface,
    e_N is the upward surface normal, e_T = e_N x e_L completes the triad.
    Accepts scalar or array coordinates; the frame vectors are stacked on
    the last axis.
    """
    x, y = point
    fx, fy = _shape_gradients(spec, x, y)
    alpha = np.asarray(spec.fiber.value(x, y), dtype=float)
    ca, sa = np.cos(alpha), np.sin(alpha)
    slope = ca * fx + sa * fy
    N = 1.0 / np.sqrt(1.0 + slope**2)
    e_L = np.stack([N * ca, N * sa, N * slope], axis=-1)
    nn = 1.0 / np.sqrt(1.0 + fx**2 + fy**2)
    e_N = np.stack([-nn * fx, -nn * fy, nn * np.ones_like(fx)], axis=-1)
    e_T = np.cross(e_N, e_L)
    return FiberFrame(e_L=e_L, e_T=e_T, e_N=e_N)


def diffusion_tensor_3d(spec, point):
    """Three-dimensional diffusion tensor D_T*I + (D_L - D_T) e_L e_L^T."""
    frame = fiber_frame(spec, point)
    D_L = spec.d_L * spec.D0
    D_T = spec.d_T * spec.D0
    eL = frame.e_L
    outer = eL[..., :, None] * eL[..., None, :]
    eye = np.broadcast_to(np.eye(3), outer.shape)
    return D_T * eye + (D_L - D_T) * outer


def _metric_components_from_fields(fx, fy, alpha, d_L, d_T):
    """Chart metric components from shape gradients and fiber angle.

    The 3D metric is (1/d_T) delta_ij + (1/d_L - 1/d_T) eL_i eL_j; pulling it
    back along (x, y) -> (x, y, f(x, y)) gives the three surface components.
    """
    ca, sa = np.cos(alpha), np.sin(alpha)
    slope = ca * fx + sa * fy
    N2 = 1.0 / (1.0 + slope**2)
    it = 1.0 / d_T
    dl = 1.0 / d_L - 1.0 / d_T
    # 3D inverse-diffusion components (dimensionless)
    g_xx = it + dl * N2 * ca * ca
    g_yy = it + dl * N2 * sa * sa
    g_zz = it + dl * N2 * slope * slope
    g_xy = dl * N2 * ca * sa
    g_xz = dl * N2 * ca * slope
    g_yz = dl * N2 * sa * slope
    g11 = g_xx + 2.0 * g_xz * fx + g_zz * fx * fx
    g22 = g_yy + 2.0 * g_yz * fy + g_zz * fy * fy
    g12 = g_xy + g_xz * fy + g_yz * fx + g_zz * fx * fy
    return g11, g12, g22


def induced_metric(spec, point):
    """Surface metric at a chart point: (g_lower, g_upper, sqrt_g).

    Returns 2x2 arrays (batched on leading axes for array input).  The metric
    is symmetric positive definite for any valid spec; violation signals
    inconsistent inputs and raises.
    """
    x, y = point
    fx, fy = _shape_gradients(spec, x, y)
    alpha = np.asarray(spec.fiber.value(x, y), dtype=float)
    g11, g12, g22 = _metric_components_from_fields(fx, fy, alpha, spec.d_L, spec.d_T)
    det = g11 * g22 - g12 * g12
    if np.any(det <= 0.0) or np.any(g11 <= 0.0):
        raise GeometryError("induced metric is not positive definite")
    g_lower = np.stack(
        [np.stack([g11, g12], axis=-1), np.stack([g12, g22], axis=-1)], axis=-2
    )
    inv_det = 1.0 / det
    g_upper = np.stack(
        [
            np.stack([g22 * inv_det, -g12 * inv_det], axis=-1),
            np.stack([-g12 * inv_det, g11 * inv_det], axis=-1),
        ],
        axis=-2,
    )
    return g_lower, g_upper, np.sqrt(det)


# ---------------------------------------------------------------------------
# symbolic (analytic) route
# ---------------------------------------------------------------------------

class SymbolicSurfaceGeometry:
    """Closed-form metric, Christoffel symbols and Ricci scalar via sympy.

    Built once per spec; every quantity is lambdified to a vectorized numpy
    callable.  Exact up to floating-point roundoff, which makes this the
    reference for the finite-difference route.
    """

    def __init__(self, spec):
        if not spec.is_symbolic:
            raise GeometryError("spec has no closed-form shape/fiber derivatives")
        self.spec = spec
        x, y = sp.symbols("x y", real=True)
        self._xy = (x, y)

        f = spec.shape.expr(x, y)
        alpha = spec.fiber.expr(x, y)
        fx, fy = sp.diff(f, x), sp.diff(f, y)
        ca, sa = sp.cos(alpha), sp.sin(alpha)
        slope = ca * fx + sa * fy
        N2 = 1 / (1 + slope**2)

        d_L, d_T = sp.Float(spec.d_L), sp.Float(spec.d_T)
        if spec.d_L == spec.d_T:
            # keep the isotropic case exactly isotropic
            dl = sp.Integer(0)
        else:
            dl = 1 / d_L - 1 / d_T
        it = 1 / d_T

        g_xx = it + dl * N2 * ca * ca
        g_yy = it + dl * N2 * sa * sa
        g_zz = it + dl * N2 * slope * slope
        g_xy = dl * N2 * ca * sa
        g_xz = dl * N2 * ca * slope
        g_yz = dl * N2 * sa * slope

        g11 = g_xx + 2 * g_xz * fx + g_zz * fx**2
        g22 = g_yy + 2 * g_yz * fy + g_zz * fy**2
        g12 = g_xy + g_xz * fy + g_yz * fx + g_zz * fx * fy

        self._g = sp.Matrix([[g11, g12], [g12, g22]])
        det = g11 * g22 - g12**2
        self._det = det
        self._ginv = sp.Matrix([[g22 / det, -g12 / det], [-g12 / det, g11 / det]])
        self._sqrt_g = sp.sqrt(det)

        self._gamma = self._christoffel(self._g, self._ginv)
        self._ricci = self._ricci_scalar(self._ginv, self._gamma)

        # fiber-structure curvature: -2 div_G [e_L (div_G e_L)] in the
        # isotropic auxiliary metric G of the same surface
        G = sp.Matrix([[1 + fx**2, fx * fy], [fx * fy, 1 + fy**2]])
        sqrtG = sp.sqrt(G.det())
        N = sp.sqrt(N2)
        e1, e2 = N * ca, N * sa
        div_e = (sp.diff(sqrtG * e1, x) + sp.diff(sqrtG * e2, y)) / sqrtG
        self._ricci_aniso = -2 * (
            sp.diff(sqrtG * e1 * div_e, x) + sp.diff(sqrtG * e2 * div_e, y)
        ) / sqrtG
        Ginv = G.inv()
        gammaG = self._christoffel(G, Ginv)
        self._ricci_shape = self._ricci_scalar(Ginv, gammaG)

        self._cache = {}

    @staticmethod
    def _christoffel(g, ginv):
        x, y = sp.symbols("x y", real=True)
        coords = (x, y)
        gamma = [[[sp.Integer(0)] * 2 for _ in range(2)] for _ in range(2)]
        for a in range(2):
            for b in range(2):
                for c in range(b, 2):
                    expr = sp.Integer(0)
                    for d in range(2):
                        expr += ginv[a, d] * (
                            sp.diff(g[c, d], coords[b])
                            + sp.diff(g[b, d], coords[c])
                            - sp.diff(g[b, c], coords[d])
                        )
                    expr = expr / 2
                    gamma[a][b][c] = expr
                    gamma[a][c][b] = expr
        return gamma

    @staticmethod
    def _ricci_scalar(ginv, gamma):
        x, y = sp.symbols("x y", real=True)
        coords = (x, y)
        R = sp.Integer(0)
        for b in range(2):
            for c in range(2):
                term = sp.Integer(0)
                for a in range(2):
                    term += sp.diff(gamma[a][b][c], coords[a])
                    term -= sp.diff(gamma[a][a][b], coords[c])
                    for d in range(2):
                        term += gamma[a][a][d] * gamma[d][b][c]
                        term -= gamma[a][c][d] * gamma[d][a][b]
                R += ginv[b, c] * term
        return R

    def _fn(self, key, expr):
        if key not in self._cache:
            fn = sp.lambdify(self._xy, expr, modules="numpy", cse=True)
            self._cache[key] = fn
        return self._cache[key]

    def _eval(self, key, expr, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = self._fn(key, expr)(x, y)
        out = np.asarray(out, dtype=float)
        if out.shape != np.broadcast(x, y).shape:
            out = np.broadcast_to(out, np.broadcast(x, y).shape).copy()
        return out

    # -- public evaluators (vectorized over x, y) -------------------------

    def g_lower(self, x, y):
        comps = [self._eval(("g", i, j), self._g[i, j], x, y) for i, j in ((0, 0), (0, 1), (1, 1))]
        g11, g12, g22 = comps
        return np.stack(
            [np.stack([g11, g12], axis=-1), np.stack([g12, g22], axis=-1)], axis=-2
        )

    def g_upper(self, x, y):
        comps = [
            self._eval(("gi", i, j), self._ginv[i, j], x, y) for i, j in ((0, 0), (0, 1), (1, 1))
        ]
        G11, G12, G22 = comps
        return np.stack(
            [np.stack([G11, G12], axis=-1), np.stack([G12, G22], axis=-1)], axis=-2
        )

    def sqrt_g(self, x, y):
        return self._eval("sqrt_g", self._sqrt_g, x, y)

    def h_upper(self, x, y):
        """Densitized inverse metric sqrt(g) g^{AB} (the stencil weights)."""
        out = self.g_upper(x, y)
        return out * self.sqrt_g(x, y)[..., None, None]

    def christoffel(self, x, y):
        shape = np.broadcast(np.asarray(x, float), np.asarray(y, float)).shape
        out = np.empty(shape + (2, 2, 2))
        for a in range(2):
            for b in range(2):
                for c in range(b, 2):
                    val = self._eval(("gamma", a, b, c), self._gamma[a][b][c], x, y)
                    out[..., a, b, c] = val
                    out[..., a, c, b] = val
        return out

    def ricci(self, x, y):
        return self._eval("ricci", self._ricci, x, y)

    def ricci_grad(self, x, y):
        rx = self._eval("ricci_x", sp.diff(self._ricci, self._xy[0]), x, y)
        ry = self._eval("ricci_y", sp.diff(self._ricci, self._xy[1]), x, y)
        return np.stack([rx, ry], axis=-1)

    def drift_basis_exprs(self):
        """The four scalar components of the drift-law basis fields:
        (b1_x, b1_y, b2_x, b2_y) with b1 = -g^{AB} dR/ds^B and
        b2 = -g^{-1/2} eps^{BA} dR/ds^B."""
        x, y = self._xy
        Rx, Ry = sp.diff(self._ricci, x), sp.diff(self._ricci, y)
        b1x = -(self._ginv[0, 0] * Rx + self._ginv[0, 1] * Ry)
        b1y = -(self._ginv[1, 0] * Rx + self._ginv[1, 1] * Ry)
        inv_sg = 1 / self._sqrt_g
        return (b1x, b1y, inv_sg * Ry, -inv_sg * Rx)

    def drift_basis_fn(self):
        """One compiled callable (x, y) -> (b1x, b1y, b2x, b2y)."""
        return self._fn("eom_basis", self.drift_basis_exprs())

    def ricci_shape(self, x, y):
        return self._eval("ricci_shape", self._ricci_shape, x, y)

    def ricci_aniso(self, x, y):
        return self._eval("ricci_aniso", self._ricci_aniso, x, y)


def _symbolic_geometry(spec):
    # one symbolic build per identical spec per process
    key = (
        spec.shape.to_config().items().__str__(),
        spec.fiber.to_config().items().__str__(),
        spec.d_L,
        spec.d_T,
        spec.D0,
    )
    cache = _symbolic_geometry._cache
    if key not in cache:
        cache[key] = SymbolicSurfaceGeometry(spec)
    return cache[key]


_symbolic_geometry._cache = {}


# ---------------------------------------------------------------------------
# finite-difference route
# ---------------------------------------------------------------------------

def fd_derivative(F, dx, axis):
    """First derivative of a grid field along one axis.

    4th-order centered in the interior, 2nd-order centered one node from the
    edge, 2nd-order one-sided on the edge itself.  Preserves complex dtypes.
    """
    F = np.asarray(F)
    if not np.issubdtype(F.dtype, np.inexact):
        F = F.astype(float)
    n = F.shape[axis]
    if n < 5:
        raise GeometryError("need at least 5 nodes per axis for derivatives")
    out = np.empty_like(F)
    sl = lambda s: tuple(s if ax == axis else slice(None) for ax in range(F.ndim))
    # interior, 4th order
    out[sl(slice(2, n - 2))] = (
        -F[sl(slice(4, n))]
        + 8.0 * F[sl(slice(3, n - 1))]
        - 8.0 * F[sl(slice(1, n - 3))]
        + F[sl(slice(0, n - 4))]
    ) / (12.0 * dx)
    # one node in, 2nd-order centered
    out[sl(1)] = (F[sl(2)] - F[sl(0)]) / (2.0 * dx)
    out[sl(n - 2)] = (F[sl(n - 1)] - F[sl(n - 3)]) / (2.0 * dx)
    # edges, 2nd-order one-sided
    out[sl(0)] = (-3.0 * F[sl(0)] + 4.0 * F[sl(1)] - F[sl(2)]) / (2.0 * dx)
    out[sl(n - 1)] = (3.0 * F[sl(n - 1)] - 4.0 * F[sl(n - 2)] + F[sl(n - 3)]) / (2.0 * dx)
    return out


def _node_fields(spec):
    """Shape gradients and fiber angle sampled on the grid nodes."""
    grid = spec.grid
    X, Y = grid.mesh()
    if spec.shape.kind == "tabulated":
        if spec.shape.values.shape != (grid.n, grid.n):
            raise GeometryError("tabulated shape does not match the grid")
        fx, fy = spec.shape.node_dx(), spec.shape.node_dy()
    else:
        fx, fy = _shape_gradients(spec, X, Y)
    if spec.fiber.kind == "tabulated":
        alpha = spec.fiber.node_values()
        if alpha.shape != (grid.n, grid.n):
            raise GeometryError("tabulated fiber angle does not match the grid")
    else:
        alpha = np.asarray(spec.fiber.value(X, Y), dtype=float)
    return fx, fy, alpha


def _grid_metric_arrays(spec):
    fx, fy, alpha = _node_fields(spec)
    g11, g12, g22 = _metric_components_from_fields(fx, fy, alpha, spec.d_L, spec.d_T)
    det = g11 * g22 - g12 * g12
    if np.any(det <= 0.0):
        raise GeometryError("induced metric is not positive definite on the grid")
    return g11, g12, g22, det


def _fd_christoffel_ricci(g11, g12, g22, det, dx):
    n1, n2 = g11.shape
    g = np.empty((n1, n2, 2, 2))
    g[..., 0, 0], g[..., 0, 1], g[..., 1, 0], g[..., 1, 1] = g11, g12, g12, g22
    ginv = np.empty_like(g)
    ginv[..., 0, 0] = g22 / det
    ginv[..., 0, 1] = ginv[..., 1, 0] = -g12 / det
    ginv[..., 1, 1] = g11 / det

    dg = np.empty((n1, n2, 2, 2, 2))  # dg[..., d, a, b] = d_d g_ab
    for a in range(2):
        for b in range(a, 2):
            for d in range(2):
                dg[..., d, a, b] = fd_derivative(g[..., a, b], dx, axis=d)
                dg[..., d, b, a] = dg[..., d, a, b]

    gamma = np.zeros((n1, n2, 2, 2, 2))  # gamma[..., a, b, c]
    for a in range(2):
        for b in range(2):
            for c in range(b, 2):
                acc = np.zeros((n1, n2))
                for d in range(2):
                    acc += ginv[..., a, d] * (
                        dg[..., b, c, d] + dg[..., c, b, d] - dg[..., d, b, c]
                    )
                gamma[..., a, b, c] = 0.5 * acc
                gamma[..., a, c, b] = gamma[..., a, b, c]

    dgamma = np.empty((n1, n2, 2, 2, 2, 2))  # dgamma[..., d, a, b, c]
    for a in range(2):
        for b in range(2):
            for c in range(b, 2):
                for d in range(2):
                    dgamma[..., d, a, b, c] = fd_derivative(gamma[..., a, b, c], dx, axis=d)
                    dgamma[..., d, a, c, b] = dgamma[..., d, a, b, c]

    ricci = np.zeros((n1, n2))
    for b in range(2):
        for c in range(2):
            term = np.zeros((n1, n2))
            for a in range(2):
                term += dgamma[..., a, a, b, c]
                term -= dgamma[..., c, a, a, b]
                for d in range(2):
                    term += gamma[..., a, a, d] * gamma[..., d, b, c]
                    term -= gamma[..., a, c, d] * gamma[..., d, a, b]
            ricci += ginv[..., b, c] * term
    return g, ginv, np.sqrt(det), gamma, ricci


# ---------------------------------------------------------------------------
# grid-level products
# ---------------------------------------------------------------------------

@dataclass
class MetricField:
    """Grid-sampled metric data for one surface spec.

    Arrays are indexed ``[i, j]`` with ``x = xs[i]``, ``y = ys[j]``.
    ``boundary_band`` marks how many cells from each edge carry
    lower-accuracy (one-sided finite difference) derivatives; analytic
    fields set it to 0.
    """

    spec: SurfaceSpec
    g_lower: np.ndarray      # (n, n, 2, 2)
    g_upper: np.ndarray      # (n, n, 2, 2)
    sqrt_g: np.ndarray       # (n, n)
    christoffel: np.ndarray  # (n, n, 2, 2, 2), symmetric in the last two slots
    ricci: np.ndarray        # (n, n)
    levi_civita: np.ndarray = field(default_factory=lambda: LEVI_CIVITA.copy())
    method: str = "analytic"
    boundary_band: int = 0
    analytic: SymbolicSurfaceGeometry | None = None
    ricci_shape: np.ndarray | None = None
    ricci_aniso: np.ndarray | None = None

    @property
    def grid(self):
        return self.spec.grid

    def interior_mask(self, extra=0):
        band = self.boundary_band + extra
        n = self.grid.n
        mask = np.zeros((n, n), dtype=bool)
        if 2 * band < n:
            mask[band : n - band, band : n - band] = True
        return mask

    def evaluator(self):
        """Pointwise geometry evaluator (analytic if available, else splines)."""
        from .fields import GridGeometryEvaluator, AnalyticGeometryEvaluator

        if self.analytic is not None:
            return AnalyticGeometryEvaluator(self.analytic, self.grid)
        return GridGeometryEvaluator(self)


def christoffel_and_ricci(spec, method="auto"):
    """Metric, Christoffel symbols and Ricci scalar over the whole grid.

    Parameters
    ----------
    spec : SurfaceSpec
    method : {"auto", "analytic", "fd"}
        "analytic" differentiates closed-form expressions (built-in shape and
        fiber fields only); "fd" samples the metric on the grid and uses
        finite differences for all derivatives; "auto" picks "analytic"
        whenever available.
    """
    if method == "auto":
        method = "analytic" if spec.is_symbolic else "fd"
    grid = spec.grid
    X, Y = grid.mesh()

    if method == "analytic":
        sym = _symbolic_geometry(spec)
        mf = MetricField(
            spec=spec,
            g_lower=sym.g_lower(X, Y),
            g_upper=sym.g_upper(X, Y),
            sqrt_g=sym.sqrt_g(X, Y),
            christoffel=sym.christoffel(X, Y),
            ricci=sym.ricci(X, Y),
            method="analytic",
            boundary_band=0,
            analytic=sym,
        )
        return mf
    if method != "fd":
        raise GeometryError(f"unknown method {method!r}")

    g11, g12, g22, det = _grid_metric_arrays(spec)
    g, ginv, sqrtg, gamma, ricci = _fd_christoffel_ricci(g11, g12, g22, det, grid.dx)
    return MetricField(
        spec=spec,
        g_lower=g,
        g_upper=ginv,
        sqrt_g=sqrtg,
        christoffel=gamma,
        ricci=ricci,
        method="fd",
        boundary_band=4,  # two finite-difference passes, each contaminating 2 cells
        analytic=None,
    )


def ricci_decomposition(spec, method="auto"):
    """Split the curvature into shape and fiber-structure parts.

    Returns ``(ricci_shape, ricci_aniso)`` grid fields satisfying
    ``ricci = d_T * ricci_shape + (d_L - d_T) * ricci_aniso``.
    ``ricci_shape`` is the curvature of the same surface with isotropic
    diffusion (twice the Gaussian curvature); ``ricci_aniso`` is
    ``-2 div[e_L (div e_L)]`` taken with covariant divergences in that
    isotropic metric.
    """
    if method == "auto":
        method = "analytic" if spec.is_symbolic else "fd"
    grid = spec.grid
    X, Y = grid.mesh()

    if method == "analytic":
        sym = _symbolic_geometry(spec)
        return sym.ricci_shape(X, Y), sym.ricci_aniso(X, Y)
    if method != "fd":
        raise GeometryError(f"unknown method {method!r}")

    iso = spec.isotropic_twin()
    G11, G12, G22, detG = _grid_metric_arrays(iso)
    _, _, _, _, ricci_shape = _fd_christoffel_ricci(G11, G12, G22, detG, grid.dx)

    fx, fy, alpha = _node_fields(spec)
    ca, sa = np.cos(alpha), np.sin(alpha)
    slope = ca * fx + sa * fy
    N = 1.0 / np.sqrt(1.0 + slope**2)
    e1, e2 = N * ca, N * sa
    sqrtG = np.sqrt(detG)
    div_e = (
        fd_derivative(sqrtG * e1, grid.dx, axis=0)
        + fd_derivative(sqrtG * e2, grid.dx, axis=1)
    ) / sqrtG
    ricci_aniso = -2.0 * (
        fd_derivative(sqrtG * e1 * div_e, grid.dx, axis=0)
        + fd_derivative(sqrtG * e2 * div_e, grid.dx, axis=1)
    ) / sqrtG
    return ricci_shape, ricci_aniso
