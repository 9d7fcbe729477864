"""Rotation-averaged drift laws for the spiral core.

The averaged laws move the rotation center down (or up) the gradient of the
curvature scalar and shift the rotation frequency in proportion to it:

    d(phi)/dt = omega0 + q0 * R
    dX^A/dt   = -q1 g^{AB} dR/ds^B - q2 g^{-1/2} eps^{BA} dR/ds^B

with eps the alternating symbol (eps^{12} = +1).  Frequencies are stored in
the spiral's own rotation sense (omega0 > 0), which makes q0 and q1
chirality-invariant while q2 flips sign when the rotation sense is reversed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .gridio import write_csv, read_csv

__all__ = [
    "MobilityCoefficients",
    "DriftPath",
    "PureTransverseDrift",
    "eom_velocity",
    "eom_velocity_fiber_form",
    "integrate_drift",
    "rotation_frequency",
    "paraboloid_trajectory",
    "paraboloid_dphi_dr",
    "planar_W",
    "planar_dW_dz",
    "planar_trajectory",
]


class PureTransverseDrift(ValueError):
    """q1 = 0: the closed-form trajectory parameterizations degenerate.

    The motion is purely transverse to the curvature gradient (constant
    curvature level: e.g. a circular orbit at fixed radius on the
    paraboloid), so there is no function phi(r) or W(z) to evaluate.
    """


@dataclass(frozen=True)
class MobilityCoefficients:
    """Drift response of one kinetics parameter set.

    q0 shifts the rotation rate per unit curvature scalar, q1 is the mobility
    along the curvature gradient, q2 the transverse mobility.  ``chirality``
    records the rotation sense (+1 counterclockwise) the values refer to.
    """

    q0: float = 0.0
    q1: float = 0.0
    q2: float = 0.0
    omega0: float = 0.0
    chirality: int = 1

    def with_chirality(self, chirality):
        """Convert to the opposite rotation sense: q2 flips, q1 stays."""
        if chirality == self.chirality:
            return self
        return replace(self, q2=-self.q2, chirality=chirality)

    def to_config(self):
        return {"q0": self.q0, "q1": self.q1, "q2": self.q2,
                "omega0": self.omega0, "chirality": self.chirality}

    @classmethod
    def from_config(cls, cfg):
        return cls(**cfg)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_config(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_config(json.load(fh))


def _evaluator(metric):
    return metric.evaluator() if hasattr(metric, "evaluator") else metric


def drift_basis(points, metric):
    """The two velocity basis fields of the drift law at given points.

    Returns ``(b1, b2)``, each of shape ``points.shape``, such that the
    drift velocity is ``q1 * b1 + q2 * b2``:
    ``b1 = -g^{AB} dR/ds^B`` and ``b2 = -g^{-1/2} eps^{BA} dR/ds^B``.
    """
    ev = _evaluator(metric)
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    if hasattr(ev, "drift_basis"):
        return ev.drift_basis(x, y)
    gup = ev.g_upper(x, y)
    grad = ev.ricci_grad(x, y)
    inv_sg = 1.0 / ev.sqrt_g(x, y)
    b1 = -np.einsum("...ab,...b->...a", gup, grad)
    b2 = np.stack([inv_sg * grad[..., 1], -inv_sg * grad[..., 0]], axis=-1)
    return b1, b2


def eom_velocity(point, metric, q):
    """Drift velocity of the rotation center at a chart point."""
    ev = _evaluator(metric)
    pts = np.asarray(point, dtype=float)
    if not np.all(ev.contains(pts[..., 0], pts[..., 1])):
        raise ValueError("point outside the chart domain")
    b1, b2 = drift_basis(pts, ev)
    return q.q1 * b1 + q.q2 * b2


def eom_velocity_fiber_form(point, frame, grad_ricci, d_L, d_T, q):
    """Drift velocity written in the fiber frame on an isotropic surface.

    ``grad_ricci`` is the 3-vector gradient of the curvature scalar taken
    with the isotropic surface metric.  Agrees with `eom_velocity` on flat
    anisotropic geometry; returns the (x, y) chart components.
    """
    grad = np.asarray(grad_ricci, dtype=float)
    eL, eT, eN = frame.e_L, frame.e_T, frame.e_N
    along = np.sum(eL * grad, axis=-1)[..., None]
    across = np.sum(eT * grad, axis=-1)[..., None]
    vel = -q.q1 * (d_L * eL * along + d_T * eT * across)
    vel = vel - q.q2 * math.sqrt(d_L * d_T) * np.cross(eN, grad)
    return vel[..., :2]


def rotation_frequency(ricci_at_center, q):
    """Shifted rotation rate omega0 + q0 * R (own rotation sense)."""
    return q.omega0 + q.q0 * np.asarray(ricci_at_center)


# ---------------------------------------------------------------------------
# numerical integration of the drift law
# ---------------------------------------------------------------------------

@dataclass
class DriftPath:
    """Time-ordered rotation-center positions with integrator metadata."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    step: float = 0.0
    order: int = 4
    status: str = "ok"
    period: np.ndarray | None = None  # per-sample rotation period, observations only

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("path times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def points(self):
        return np.stack([self.x, self.y], axis=-1)

    def endpoint(self):
        return np.array([self.x[-1], self.y[-1]])

    def arc_length(self):
        if len(self.t) < 2:
            return 0.0
        return float(np.sum(np.hypot(np.diff(self.x), np.diff(self.y))))

    def at_time(self, t):
        return np.array([np.interp(t, self.t, self.x), np.interp(t, self.t, self.y)])

    def to_csv(self, path):
        cols = [self.t, self.x, self.y]
        names = ["t", "x", "y"]
        if self.period is not None:
            cols.append(self.period)
            names.append("period")
        write_csv(path, cols, names)

    @classmethod
    def from_csv(cls, path, status="ok"):
        header, data = read_csv(path)
        idx = {name: k for k, name in enumerate(header)}
        period = data[:, idx["period"]] if "period" in idx else None
        return cls(t=data[:, idx["t"]], x=data[:, idx["x"]], y=data[:, idx["y"]],
                   status=status, period=period)


def _rk4(basis, q1, q2, x0, y0, t_end, n, inside):
    h = t_end / n
    t = np.empty(n + 1)
    xs = np.empty(n + 1)
    ys = np.empty(n + 1)
    t[0], xs[0], ys[0] = 0.0, x0, y0
    x, y = float(x0), float(y0)

    def vel(px, py):
        b1x, b1y, b2x, b2y = basis(px, py)
        return q1 * b1x + q2 * b2x, q1 * b1y + q2 * b2y

    for k in range(n):
        k1x, k1y = vel(x, y)
        k2x, k2y = vel(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
        k3x, k3y = vel(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
        k4x, k4y = vel(x + h * k3x, y + h * k3y)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        if not (math.isfinite(x) and math.isfinite(y)) or not inside(x, y):
            return t[: k + 1], xs[: k + 1], ys[: k + 1], "exited"
        t[k + 1] = (k + 1) * h
        xs[k + 1] = x
        ys[k + 1] = y
    return t, xs, ys, "ok"


def integrate_drift(x0, t_end, metric, q, tol=1e-8, n_start=256, max_doublings=10):
    """Integrate the drift law with classic fixed-step 4th-order steps.

    The step is halved until another halving moves the endpoint by less than
    ``tol``.  A path that leaves the chart domain is truncated and flagged
    with status "exited".
    """
    ev = _evaluator(metric)
    if hasattr(ev, "drift_basis_fn"):
        basis = ev.drift_basis_fn()
    else:
        def basis(px, py):
            b1, b2 = drift_basis(np.array([px, py]), ev)
            return b1[0], b1[1], b2[0], b2[1]

    def inside(px, py):
        return bool(ev.contains(px, py))

    px, py = float(x0[0]), float(x0[1])
    if not inside(px, py):
        raise ValueError("start point outside the chart domain")
    if t_end <= 0:
        return DriftPath(np.array([0.0]), np.array([px]), np.array([py]),
                         step=0.0, status="ok")

    n = n_start
    t, xs, ys, status = _rk4(basis, q.q1, q.q2, px, py, t_end, n, inside)
    for _ in range(max_doublings):
        n2 = 2 * n
        t2, xs2, ys2, status2 = _rk4(basis, q.q1, q.q2, px, py, t_end, n2, inside)
        if status == "ok" and status2 == "ok":
            delta = max(abs(xs2[-1] - xs[-1]), abs(ys2[-1] - ys[-1]))
        else:
            # compare at the common final time of the truncated runs
            t_common = min(t[-1], t2[-1])
            ax, ay = np.interp(t_common, t, xs), np.interp(t_common, t, ys)
            bx, by = np.interp(t_common, t2, xs2), np.interp(t_common, t2, ys2)
            delta = max(abs(ax - bx), abs(ay - by))
        t, xs, ys, status, n = t2, xs2, ys2, status2, n2
        if delta < tol:
            break
    return DriftPath(t, xs, ys, step=(t_end / n), order=4, status=status)


# ---------------------------------------------------------------------------
# closed-form trajectories
# ---------------------------------------------------------------------------

def paraboloid_trajectory(r, A, q1, q2, C1=0.0):
    """Azimuth of the drift path on the isotropic paraboloid z = +-A r^2.

    phi(r) = (q2/q1) (s - acoth(s)) + C1 with s = sqrt(1 + 4 A^2 r^2).
    """
    if q1 == 0.0:
        raise PureTransverseDrift("q1 = 0: circular orbit at constant radius")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("radius must be positive")
    s = np.sqrt(1.0 + 4.0 * A**2 * r**2)
    return (q2 / q1) * (s - np.arctanh(1.0 / s)) + C1


def paraboloid_dphi_dr(r, A, q1, q2):
    """Slope of the paraboloid drift path: (q2/q1) sqrt(1 + 4A^2 r^2) / r."""
    if q1 == 0.0:
        raise PureTransverseDrift("q1 = 0: circular orbit at constant radius")
    r = np.asarray(r, dtype=float)
    return (q2 / q1) * np.sqrt(1.0 + 4.0 * A**2 * r**2) / r


def planar_W(z, B, d_L, d_T, q1, q2, C2=0.0):
    """Antiderivative of the planar drift slope dw/dz in w = x - y, z = x + y.

    With fiber angle alpha = B z the slope integrates to
    W(z) = ln[(d_L - d_T) sin 2a + d_L + d_T] / (2B)
         + (q2 / (q1 B)) atan[((d_L + d_T) tan a + d_L - d_T) / (2 sqrt(d_L d_T))]
         + C2,
    with the arctangent branch unwrapped so W is continuous across
    a = (k + 1/2) pi.
    """
    if q1 == 0.0:
        raise PureTransverseDrift("q1 = 0: no closed-form path parameterization")
    if B == 0.0:
        raise ValueError("linear fiber rotation requires B != 0")
    z = np.asarray(z, dtype=float)
    alpha = B * z
    log_term = np.log((d_L - d_T) * np.sin(2.0 * alpha) + d_L + d_T) / (2.0 * B)
    tana = np.tan(alpha)
    arg = ((d_L + d_T) * tana + (d_L - d_T)) / (2.0 * math.sqrt(d_L * d_T))
    # count the poles of tan as the floating-point tan actually crosses them,
    # so the continuation never disagrees with arctan by one branch
    branch = np.round((alpha - np.arctan(tana)) / np.pi)
    atan_term = (np.arctan(arg) + np.pi * branch) * (q2 / (q1 * B))
    return log_term + atan_term + C2


def planar_dW_dz(z, B, d_L, d_T, q1, q2):
    """Slope of the planar drift path in rotated coordinates:

    dw/dz = (d_L - d_T) cos 2a / D + (q2/q1) 2 sqrt(d_L d_T) / D,
    D = d_L + d_T + (d_L - d_T) sin 2a.
    """
    if q1 == 0.0:
        raise PureTransverseDrift("q1 = 0: no closed-form path parameterization")
    z = np.asarray(z, dtype=float)
    alpha = B * z
    den = d_L + d_T + (d_L - d_T) * np.sin(2.0 * alpha)
    return ((d_L - d_T) * np.cos(2.0 * alpha)
            + (q2 / q1) * 2.0 * math.sqrt(d_L * d_T)) / den


def planar_trajectory(z, B, d_L, d_T, q1, q2, C2=0.0):
    """Chart trajectory of planar drift: x = (z + W)/2, y = (z - W)/2."""
    w = planar_W(z, B, d_L, d_T, q1, q2, C2)
    z = np.asarray(z, dtype=float)
    return (z + w) / 2.0, (z - w) / 2.0
