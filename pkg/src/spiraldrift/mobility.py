"""Mobility coefficients from observed trajectories or response functions.

Two independent routes to (q0, q1, q2):

* regression of rotation-averaged center velocities against the two basis
  fields of the drift law (self-contained; uses only simulation output);
* overlap integrals of externally supplied adjoint eigenmodes (response
  functions) with the curvature source terms, evaluated by the trapezoid
  rule on a polar grid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .driftlaw import DriftPath, drift_basis
from .geometry import fd_derivative

__all__ = [
    "MobilityFit",
    "PolarGrid",
    "ResponseFunctionSet",
    "SourceTermFields",
    "ExtractionError",
    "DegenerateFit",
    "extract_drift",
    "fit_mobility",
    "fit_q0",
    "source_terms",
    "overlap_integrals",
    "polar_inner_product",
]


class ExtractionError(RuntimeError):
    """Trajectory too short or too irregular for rotation averaging."""


class DegenerateFit(RuntimeError):
    """The regression problem has no unique solution."""


# ---------------------------------------------------------------------------
# rotation-averaged center path
# ---------------------------------------------------------------------------

def _window_average(t, f, t_lo, t_hi):
    """Time average of samples f(t) over [t_lo, t_hi] with edge interpolation."""
    lo = np.searchsorted(t, t_lo, side="right")
    hi = np.searchsorted(t, t_hi, side="left")
    tt = np.concatenate(([t_lo], t[lo:hi], [t_hi]))
    ff = np.concatenate(([np.interp(t_lo, t, f)], f[lo:hi], [np.interp(t_hi, t, f)]))
    return np.trapezoid(ff, tt) / (t_hi - t_lo)


def extract_drift(raw, min_rotations=3, jitter_tol=0.05, window=1.0):
    """Rotation-averaged center path of a raw tip trajectory.

    Each output sample is the tip position averaged over exactly one
    instantaneous rotation period, the period being re-estimated per window
    from the unwrapped tip phase.  Also carries the per-sample period for
    frequency fitting.  Raises `ExtractionError` for fewer than
    ``min_rotations`` full rotations or unstable period estimates.
    """
    n = len(raw)
    if n < 8:
        raise ExtractionError("too few tip samples")
    turns = abs(raw.winding())
    if turns < min_rotations:
        raise ExtractionError(
            f"only {turns:.2f} rotations recorded, need at least {min_rotations}"
        )
    periods = raw.instantaneous_periods(window=window)
    valid = np.isfinite(periods)
    if valid.sum() < 3:
        raise ExtractionError("period estimation failed on almost all samples")
    # window-to-window stability: compare each estimate with the one a full
    # period later (overlapping neighbours are trivially close)
    jitter = 0.0
    for k in np.flatnonzero(valid):
        j = int(np.searchsorted(raw.t, raw.t[k] + periods[k]))
        if j < len(raw.t) and np.isfinite(periods[j]):
            jitter = max(jitter, abs(periods[j] - periods[k]) / periods[k])
    if jitter > jitter_tol:
        raise ExtractionError(
            f"period estimate unstable: window-to-window jitter {jitter:.1%}"
        )

    ts, cxs, cys, ps = [], [], [], []
    for k in np.flatnonzero(valid):
        half = 0.5 * periods[k]
        t_lo, t_hi = raw.t[k] - half, raw.t[k] + half
        if t_lo < raw.t[0] - 1e-12 or t_hi > raw.t[-1] + 1e-12:
            continue
        ts.append(raw.t[k])
        cxs.append(_window_average(raw.t, raw.x, t_lo, t_hi))
        cys.append(_window_average(raw.t, raw.y, t_lo, t_hi))
        ps.append(periods[k])
    if len(ts) < 3:
        raise ExtractionError("not enough full-period windows inside the trajectory")
    return DriftPath(np.array(ts), np.array(cxs), np.array(cys),
                     status=raw.status, period=np.array(ps))


# ---------------------------------------------------------------------------
# drift-law regression
# ---------------------------------------------------------------------------

@dataclass
class MobilityFit:
    q1: float
    q2: float
    covariance: np.ndarray          # 2x2
    residual_norm: float
    n_samples: int

    @property
    def q1_stderr(self):
        return float(np.sqrt(self.covariance[0, 0]))

    @property
    def q2_stderr(self):
        return float(np.sqrt(self.covariance[1, 1]))

    def report(self):
        return {
            "q1": self.q1,
            "q2": self.q2,
            "q1_stderr": self.q1_stderr,
            "q2_stderr": self.q2_stderr,
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm,
            "n_samples": self.n_samples,
        }


def _path_velocities(path):
    """Central-difference velocities at interior path samples."""
    t, x, y = path.t, path.x, path.y
    if len(t) < 3:
        raise ExtractionError("need at least 3 center samples for velocities")
    dt = t[2:] - t[:-2]
    vx = (x[2:] - x[:-2]) / dt
    vy = (y[2:] - y[:-2]) / dt
    pts = np.stack([x[1:-1], y[1:-1]], axis=-1)
    return pts, np.stack([vx, vy], axis=-1), t[1:-1]


def fit_mobility(paths, metric):
    """Least-squares (q1, q2) from center paths on a known geometry.

    Observed center velocities (central differences, endpoints dropped) are
    regressed against the two drift-law basis fields evaluated along the
    paths.  All paths must share kinetics and chirality.  Raises
    `DegenerateFit` when the basis does not explore two directions (e.g. the
    curvature gradient vanishes along the data).
    """
    if isinstance(paths, DriftPath):
        paths = [paths]
    rows = []
    rhs = []
    for path in paths:
        pts, vel, _ = _path_velocities(path)
        b1, b2 = drift_basis(pts, metric)
        for k in range(len(pts)):
            rows.append([b1[k, 0], b2[k, 0]])
            rows.append([b1[k, 1], b2[k, 1]])
            rhs.append(vel[k, 0])
            rhs.append(vel[k, 1])
    A = np.asarray(rows)
    b = np.asarray(rhs)
    if len(b) < 4:
        raise ExtractionError("not enough velocity samples to fit")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] < 1e-10 * sv[0]:
        raise DegenerateFit(
            "design matrix is rank deficient: the curvature-gradient basis "
            "fields do not explore two independent directions along the paths"
        )
    coef, res2, _, _ = np.linalg.lstsq(A, b, rcond=None)
    resid = A @ coef - b
    dof = max(len(b) - 2, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(A.T @ A)
    return MobilityFit(
        q1=float(coef[0]), q2=float(coef[1]), covariance=cov,
        residual_norm=float(np.linalg.norm(resid)), n_samples=len(b) // 2,
    )


def fit_q0(periods, ricci_values, omega0, ricci_scale=None):
    """Frequency-shift coefficient from rotation periods along a path.

    Regresses omega = 2 pi / T against the curvature scalar at the matching
    center positions with the intercept pinned to ``omega0``.  Requires the
    curvature samples to span at least 10% of their reference scale
    (``ricci_scale``, defaulting to max |R| of the samples).
    """
    T = np.asarray(periods, dtype=float)
    R = np.asarray(ricci_values, dtype=float)
    good = np.isfinite(T) & np.isfinite(R) & (T > 0)
    T, R = T[good], R[good]
    if len(T) < 3:
        raise ExtractionError("not enough valid period samples")
    scale = float(np.max(np.abs(R))) if ricci_scale is None else float(ricci_scale)
    spread = float(R.max() - R.min())
    if spread <= 0.0 or (scale > 0.0 and spread < 0.1 * scale):
        raise ExtractionError(
            f"curvature variation {spread:.3g} too small relative to scale {scale:.3g}"
        )
    omega = 2.0 * np.pi / T
    return float(np.sum(R * (omega - omega0)) / np.sum(R * R))


# ---------------------------------------------------------------------------
# response functions and overlap integrals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarGrid:
    """Uniform polar grid on a disc: r_i = i R / n_r (i = 1..n_r), periodic
    theta_k = 2 pi k / n_theta.  The puncture at r = 0 contributes nothing to
    area integrals (the radial weight vanishes there)."""

    R: float
    n_r: int
    n_theta: int

    @property
    def dr(self):
        return self.R / self.n_r

    @property
    def dtheta(self):
        return 2.0 * np.pi / self.n_theta

    @property
    def rs(self):
        return self.dr * np.arange(1, self.n_r + 1)

    @property
    def thetas(self):
        return self.dtheta * np.arange(self.n_theta)

    def mesh(self):
        return np.meshgrid(self.rs, self.thetas, indexing="ij")


def polar_inner_product(grid, f, g):
    """<f|g> = int dS f^H g with dS = r dr dtheta, trapezoid rule in r
    (a zero-weight virtual node at r = 0 closes the disc) and the periodic
    rectangle rule in theta."""
    f = np.asarray(f)
    g = np.asarray(g)
    integrand = np.sum(np.conj(f) * g, axis=0)  # over components
    w_r = np.full(grid.n_r, grid.dr)
    w_r[-1] = 0.5 * grid.dr
    weights = grid.rs * w_r
    val = np.sum(weights[:, None] * integrand) * grid.dtheta
    return complex(val) if np.iscomplexobj(integrand) else float(val)


@dataclass
class SourceTermFields:
    """Curvature drift sources on the polar grid.

    ``S_R`` has shape (2, n_r, n_theta); ``S_dR`` has shape
    (2, 2, n_r, n_theta) with the first axis the chart index A."""

    grid: PolarGrid
    S_R: np.ndarray
    S_dR: np.ndarray

    def edge_fraction(self):
        """Max edge magnitude relative to the field maximum (should be small
        for localized overlap data)."""
        out = 0.0
        for f in (self.S_R, self.S_dR):
            peak = np.max(np.abs(f))
            if peak > 0:
                out = max(out, float(np.max(np.abs(f[..., -1, :])) / peak))
        return out


def _theta_derivative(f, order=1):
    n = f.shape[-1]
    k = np.fft.fftfreq(n, d=1.0 / n) * 1j
    fk = np.fft.fft(f, axis=-1)
    return np.fft.ifft(fk * k**order, axis=-1)


def source_terms(u0, grid, P_hat):
    """Curvature source terms of the rotating-frame expansion.

    S_R    = (1/6) (P d2_theta u0 - P r dr u0)
    S_dR_A = -(1/6) P rho_A r dr u0 + (1/12) P rho_A d2_theta u0
             + (1/24) P r^2 dA u0

    with rho_A the Cartesian offsets from the rotation center and dA the
    Cartesian derivatives.  Angular derivatives are spectral; radial ones are
    4th-order finite differences.  ``P_hat`` is the (diagonal) diffusion
    weight matrix, given as a length-2 sequence or a 2x2 matrix.
    """
    u0 = np.asarray(u0)
    if u0.shape != (2, grid.n_r, grid.n_theta):
        raise ValueError("u0 must have shape (2, n_r, n_theta)")
    P = np.asarray(P_hat, dtype=float)
    if P.shape == (2, 2):
        P = np.diag(P)
    if P.shape != (2,):
        raise ValueError("P_hat must be diagonal (length-2) or a 2x2 matrix")

    complex_in = np.iscomplexobj(u0)
    r = grid.rs[None, :, None]
    theta = grid.thetas[None, None, :]

    du_dth = _theta_derivative(u0, 1)
    d2u_dth = _theta_derivative(u0, 2)
    if not complex_in:
        du_dth = du_dth.real
        d2u_dth = d2u_dth.real
    du_dr = fd_derivative(u0, grid.dr, axis=1)
    r_dr_u = r * du_dr

    ct, st = np.cos(theta), np.sin(theta)
    du_dx = ct * du_dr - (st / r) * du_dth
    du_dy = st * du_dr + (ct / r) * du_dth
    rho = (r * ct, r * st)
    dA = (du_dx, du_dy)

    Pc = P[:, None, None]
    S_R = (Pc * d2u_dth - Pc * r_dr_u) / 6.0
    S_dR = np.empty((2,) + u0.shape, dtype=du_dx.dtype)
    for A in range(2):
        S_dR[A] = (
            -Pc * rho[A] * r_dr_u / 6.0
            + Pc * rho[A] * d2u_dth / 12.0
            + Pc * r**2 * dA[A] / 24.0
        )
    return SourceTermFields(grid=grid, S_R=S_R, S_dR=S_dR)


@dataclass
class ResponseFunctionSet:
    """Externally computed spiral solution and adjoint eigenmodes.

    All fields are (2, n_r, n_theta) arrays on the same polar grid: the
    rotating solution u0, its angular and Cartesian derivatives, and the
    three adjoint modes used as projection weights.
    """

    grid: PolarGrid
    u0: np.ndarray
    du0_dtheta: np.ndarray
    du0_dx: np.ndarray
    du0_dy: np.ndarray
    Y_theta: np.ndarray
    Y_x: np.ndarray
    Y_y: np.ndarray
    normalization: str = "unspecified"

    _FIELDS = ("u0", "du0_dtheta", "du0_dx", "du0_dy", "Y_theta", "Y_x", "Y_y")

    def biorthogonality(self):
        """Inner products of the adjoint modes with the symmetry modes; the
        diagonal reflects the declared normalization, off-diagonal entries
        should be near zero (limited by the external data's own accuracy)."""
        modes = (self.du0_dtheta, self.du0_dx, self.du0_dy)
        adj = (self.Y_theta, self.Y_x, self.Y_y)
        table = np.empty((3, 3), dtype=complex)
        for i, Y in enumerate(adj):
            for j, V in enumerate(modes):
                table[i, j] = polar_inner_product(self.grid, Y, V)
        return table.real if not np.iscomplexobj(self.u0) else table

    def save(self, path):
        arrays = [np.asarray(getattr(self, name)) for name in self._FIELDS]
        dtype = "complex128" if any(np.iscomplexobj(a) for a in arrays) else "float64"
        header = (
            "rfset v1\n"
            f"nr {self.grid.n_r}\n"
            f"ntheta {self.grid.n_theta}\n"
            f"radius {self.grid.R!r}\n"
            f"components 2\n"
            f"dtype {dtype}\n"
            f"fields {' '.join(self._FIELDS)}\n"
            f"normalization {self.normalization}\n"
            "\n"
        )
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            for a in arrays:
                fh.write(np.ascontiguousarray(a, dtype=dtype).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        sep = blob.find(b"\n\n")
        if sep < 0:
            raise ValueError("missing response-function header terminator")
        lines = blob[:sep].decode("ascii").splitlines()
        if not lines or lines[0] != "rfset v1":
            raise ValueError("not a response-function file")
        meta = dict(line.split(" ", 1) for line in lines[1:])
        grid = PolarGrid(R=float(meta["radius"]), n_r=int(meta["nr"]),
                         n_theta=int(meta["ntheta"]))
        dtype = np.dtype(meta.get("dtype", "float64"))
        names = meta["fields"].split()
        if tuple(names) != cls._FIELDS:
            raise ValueError(f"unexpected field list {names}")
        count = 2 * grid.n_r * grid.n_theta
        payload = np.frombuffer(blob[sep + 2 :], dtype=dtype)
        if payload.size != count * len(names):
            raise ValueError("payload size does not match the declared grid")
        fields = {}
        for k, name in enumerate(names):
            fields[name] = payload[k * count : (k + 1) * count].reshape(2, grid.n_r, grid.n_theta).copy()
        return cls(grid=grid, normalization=meta.get("normalization", "unspecified"), **fields)

    def digest(self):
        h = hashlib.sha256()
        for name in self._FIELDS:
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return h.hexdigest()


def overlap_integrals(rf, src):
    """(q0, q1, q2) from trapezoid-rule overlaps of the adjoint modes with
    the curvature source terms:

    q0 = <Y_theta | S_R>,  q1 = (<Y_x|S_dR_1> + <Y_y|S_dR_2>) / 2,
    q2 = (<Y_y|S_dR_1> - <Y_x|S_dR_2>) / 2.
    """
    if rf.grid != src.grid:
        raise ValueError("response functions and source terms live on different grids")
    g = rf.grid
    q0 = polar_inner_product(g, rf.Y_theta, src.S_R)
    q1 = 0.5 * (
        polar_inner_product(g, rf.Y_x, src.S_dR[0])
        + polar_inner_product(g, rf.Y_y, src.S_dR[1])
    )
    q2 = 0.5 * (
        polar_inner_product(g, rf.Y_y, src.S_dR[0])
        - polar_inner_product(g, rf.Y_x, src.S_dR[1])
    )
    return (np.real(q0), np.real(q1), np.real(q2))


def fit_report(fit, q0=None, omega0=None, inputs=None):
    """Structured fit summary with a digest of the inputs."""
    out = {"estimates": fit.report()}
    if q0 is not None:
        out["q0"] = q0
    if omega0 is not None:
        out["omega0"] = omega0
    if inputs:
        h = hashlib.sha256()
        for item in inputs:
            h.update(json.dumps(item, sort_keys=True, default=str).encode())
        out["input_digest"] = h.hexdigest()
    return out
