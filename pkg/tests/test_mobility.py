"""Drift extraction, coefficient regression, and overlap quadrature."""

import numpy as np
import pytest

from spiraldrift.driftlaw import DriftPath, MobilityCoefficients, integrate_drift
from spiraldrift.geometry import (
    LinearFiber,
    ParaboloidShape,
    PlaneShape,
    SurfaceSpec,
    ConstantFiber,
    christoffel_and_ricci,
)
from spiraldrift.mobility import (
    DegenerateFit,
    ExtractionError,
    PolarGrid,
    ResponseFunctionSet,
    extract_drift,
    fit_mobility,
    fit_q0,
    overlap_integrals,
    polar_inner_product,
    source_terms,
)
from spiraldrift.solver import TipTrajectory

B0 = np.pi / 40.0


def synthetic_orbit(center=(0.4, -0.2), radius=0.3, omega=1.26, t_end=40.0,
                    stride=0.025, velocity=(0.0, 0.0), phase0=0.3):
    t = np.arange(0.0, t_end, stride)
    cx = center[0] + velocity[0] * t
    cy = center[1] + velocity[1] * t
    ang = omega * t + phase0
    return TipTrajectory(
        t=t,
        x=cx + radius * np.cos(ang),
        y=cy + radius * np.sin(ang),
        phase=ang,
    )


# ---------------------------------------------------------------------------
# rotation averaging
# ---------------------------------------------------------------------------

def test_extract_drift_constant_center():
    raw = synthetic_orbit()
    drift = extract_drift(raw)
    assert np.max(np.abs(drift.x - 0.4)) < 1e-6
    assert np.max(np.abs(drift.y + 0.2)) < 1e-6
    np.testing.assert_allclose(drift.period, 2 * np.pi / 1.26, rtol=1e-6)


def test_extract_drift_cycloid_velocity():
    v = (0.013, -0.009)
    raw = synthetic_orbit(velocity=v, t_end=60.0)
    drift = extract_drift(raw)
    vx = np.polyfit(drift.t, drift.x, 1)[0]
    vy = np.polyfit(drift.t, drift.y, 1)[0]
    assert abs(vx - v[0]) / abs(v[0]) < 0.005
    assert abs(vy - v[1]) / abs(v[1]) < 0.005


def test_extract_drift_requires_three_rotations():
    raw = synthetic_orbit(t_end=10.0)  # two rotations at T ~ 5
    with pytest.raises(ExtractionError):
        extract_drift(raw)


def test_extract_drift_rejects_unstable_period():
    t = np.arange(0.0, 60.0, 0.025)
    # rotation rate wobbles by 30% on a slow envelope: period estimates jitter
    ang = 1.26 * t + 1.5 * np.sin(0.3 * t)
    raw = TipTrajectory(t=t, x=np.cos(ang), y=np.sin(ang), phase=ang)
    with pytest.raises(ExtractionError):
        extract_drift(raw)


def test_extract_drift_incommensurate_stride():
    raw = synthetic_orbit(stride=0.0317, t_end=50.0)
    drift = extract_drift(raw)
    assert np.max(np.hypot(drift.x - 0.4, drift.y + 0.2)) < 1e-6


# ---------------------------------------------------------------------------
# mobility regression
# ---------------------------------------------------------------------------

def fig4a_metric():
    return christoffel_and_ricci(
        SurfaceSpec(PlaneShape(), LinearFiber(B0), 4, 1, 1, 30.0, 0.1)
    )


def test_fit_roundtrip_planar():
    metric = fig4a_metric()
    q = MobilityCoefficients(q1=0.643, q2=0.357)
    path = integrate_drift((0.0, 0.0), 200.0, metric, q)
    k = max(1, int(round(0.5 / path.step)))
    sub = DriftPath(path.t[::k], path.x[::k], path.y[::k])
    fit = fit_mobility(sub, metric)
    assert abs(fit.q1 - q.q1) / abs(q.q1) < 1e-3
    assert abs(fit.q2 - q.q2) / abs(q.q2) < 1e-3
    assert fit.covariance.shape == (2, 2)


def test_fit_roundtrip_paraboloid():
    metric = christoffel_and_ricci(
        SurfaceSpec(ParaboloidShape(A=0.1, sign=-1), ConstantFiber(0.0), 1, 1, 1, 40.0, 0.1)
    )
    q = MobilityCoefficients(q1=0.855, q2=-0.386)
    path = integrate_drift((3.0, 0.0), 150.0, metric, q)
    k = max(1, int(round(0.5 / path.step)))
    sub = DriftPath(path.t[::k], path.x[::k], path.y[::k])
    fit = fit_mobility(sub, metric)
    assert abs(fit.q1 - q.q1) / abs(q.q1) < 1e-3
    assert abs(fit.q2 - q.q2) / abs(q.q2) < 1e-3


def test_fit_degenerate_without_gradient():
    metric = christoffel_and_ricci(
        SurfaceSpec(PlaneShape(), ConstantFiber(0.0), 4, 1, 1, 10.0, 0.1)
    )
    t = np.linspace(0, 10, 30)
    path = DriftPath(t, 0.01 * t, -0.02 * t)
    with pytest.raises(DegenerateFit):
        fit_mobility(path, metric)


def test_fit_q0_roundtrip():
    rng = np.random.default_rng(0)
    R = rng.uniform(-0.05, 0.08, 60)
    omega0 = 1.26
    omega = omega0 + 0.5 * R
    periods = 2 * np.pi / omega
    q0 = fit_q0(periods, R, omega0)
    assert abs(q0 - 0.5) < 1e-6


def test_fit_q0_rejects_constant_curvature():
    with pytest.raises(ExtractionError):
        fit_q0(np.full(20, 5.0), np.full(20, 0.04), 1.26)
    with pytest.raises(ExtractionError):
        fit_q0(np.full(20, 5.0), np.full(20, 0.0), 1.26)


def test_fit_q0_scale_precondition():
    R = np.linspace(0.070, 0.072, 30)  # 3% of scale: too narrow
    periods = 2 * np.pi / (1.0 + 0.5 * R)
    with pytest.raises(ExtractionError):
        fit_q0(periods, R, 1.0, ricci_scale=0.08)


# ---------------------------------------------------------------------------
# source terms
# ---------------------------------------------------------------------------

def test_source_terms_radial_gaussian_closed_form():
    grid = PolarGrid(R=6.0, n_r=800, n_theta=32)
    r, th = grid.mesh()
    u0 = np.stack([np.exp(-(r**2)), np.zeros_like(r)])
    src = source_terms(u0, grid, (1.0, 0.0))
    # S_R = -(1/6) P r dr u0 = (1/3) r^2 exp(-r^2) in the first component
    want = (1.0 / 3.0) * r**2 * np.exp(-(r**2))
    assert np.max(np.abs(src.S_R[0] - want)) < 1e-8
    assert np.max(np.abs(src.S_R[1])) == 0.0
    # S_dR_A = P rho_A r^2 exp(-r^2) / 4
    x = r * np.cos(th)
    y = r * np.sin(th)
    assert np.max(np.abs(src.S_dR[0][0] - x * r**2 * np.exp(-(r**2)) / 4.0)) < 1e-8
    assert np.max(np.abs(src.S_dR[1][0] - y * r**2 * np.exp(-(r**2)) / 4.0)) < 1e-8


def test_source_terms_rotation_eigenfield():
    grid = PolarGrid(R=6.0, n_r=800, n_theta=64)
    r, th = grid.mesh()
    h = r * np.exp(-(r**2))
    u0 = np.stack([h * np.exp(1j * th), np.zeros_like(r, dtype=complex)])
    src = source_terms(u0, grid, (1.0, 0.0))
    # d2_theta u0 = -u0, so S_R = -(1/6)(u0 + r dr u0)
    r_dr = r * (np.exp(-(r**2)) - 2 * r**2 * np.exp(-(r**2)))
    want = -(u0[0] + r_dr * np.exp(1j * th)) / 6.0
    err = np.abs(src.S_R[0] - want)
    assert np.max(err[2:-2]) < 1e-8  # spectral theta, 4th-order radial
    assert np.max(err) < 1e-6        # one-sided rows at the radial edges


def test_source_terms_follow_diffusion_weights():
    grid = PolarGrid(R=6.0, n_r=200, n_theta=16)
    r, _ = grid.mesh()
    u0 = np.stack([np.exp(-(r**2)), 0.5 * np.exp(-(r**2))])
    src = source_terms(u0, grid, (1.0, 0.0))
    assert np.max(np.abs(src.S_R[1])) == 0.0  # D_v = 0 removes the slow field
    src2 = source_terms(u0, grid, (1.0, 1.0))
    np.testing.assert_allclose(src2.S_R[1], 0.5 * src2.S_R[0], atol=1e-14)


def test_source_terms_edge_fraction():
    grid = PolarGrid(R=6.0, n_r=200, n_theta=16)
    r, _ = grid.mesh()
    u0 = np.stack([np.exp(-(r**2)), np.zeros_like(r)])
    src = source_terms(u0, grid, (1.0, 0.0))
    assert src.edge_fraction() < 1e-10


# ---------------------------------------------------------------------------
# overlap quadrature
# ---------------------------------------------------------------------------

def _zero_like(f):
    return np.zeros_like(f)


def _make_rf(grid, Y_theta, Y_x, Y_y, u0=None):
    r, _ = grid.mesh()
    z = np.zeros((2, grid.n_r, grid.n_theta))
    u0 = z if u0 is None else u0
    return ResponseFunctionSet(
        grid=grid, u0=u0, du0_dtheta=z, du0_dx=z, du0_dy=z,
        Y_theta=Y_theta, Y_x=Y_x, Y_y=Y_y, normalization="test",
    )


def test_overlap_zero_sources():
    grid = PolarGrid(R=12.0, n_r=240, n_theta=128)
    r, th = grid.mesh()
    z = np.zeros((2, grid.n_r, grid.n_theta))
    Y = np.stack([np.exp(-(r**2)), np.zeros_like(r)])
    rf = _make_rf(grid, Y, Y, Y)
    from spiraldrift.mobility import SourceTermFields

    src = SourceTermFields(grid=grid, S_R=z, S_dR=np.zeros((2, 2, grid.n_r, grid.n_theta)))
    assert overlap_integrals(rf, src) == (0.0, 0.0, 0.0)


def test_overlap_separable_closed_form():
    grid = PolarGrid(R=12.0, n_r=240, n_theta=128)
    r, th = grid.mesh()
    f = np.stack([np.cos(th) * np.exp(-(r**2)), np.zeros_like(r)])
    g = np.stack([np.cos(th) * r**2 * np.exp(-(r**2)), np.zeros_like(r)])
    # int r^3 exp(-2 r^2) cos^2 dr dtheta = pi/8 (disc radius 12 ~ infinity)
    got = polar_inner_product(grid, f, g)
    assert abs(got - np.pi / 8.0) < 1e-6


def test_overlap_quadrature_second_order():
    exact = 2 * np.pi * (4.0 - np.exp(-6.0) * (2 * 12.0 + 4.0))  # 2pi int_0^12 r e^{-r/2}
    errs = []
    for n_r in (60, 120, 240):
        grid = PolarGrid(R=12.0, n_r=n_r, n_theta=16)
        r, _ = grid.mesh()
        f = np.stack([np.exp(-r / 4.0), np.zeros_like(r)])
        errs.append(abs(polar_inner_product(grid, f, f) - exact))
    o1 = np.log2(errs[0] / errs[1])
    o2 = np.log2(errs[1] / errs[2])
    assert 1.7 < o1 < 2.3 and 1.7 < o2 < 2.3


def test_overlap_integrals_signs_and_shapes():
    grid = PolarGrid(R=10.0, n_r=200, n_theta=64)
    r, th = grid.mesh()
    u0 = np.stack([np.exp(-(r**2) / 4), np.zeros_like(r)])
    src = source_terms(u0, grid, (1.0, 0.0))
    gx = np.stack([np.cos(th) * np.exp(-(r**2) / 4), np.zeros_like(r)])
    gy = np.stack([np.sin(th) * np.exp(-(r**2) / 4), np.zeros_like(r)])
    gth = np.stack([np.exp(-(r**2) / 4), np.zeros_like(r)])
    rf = _make_rf(grid, gth, gx, gy, u0=u0)
    q0, q1, q2 = overlap_integrals(rf, src)
    # radial u0: S_dR_A has pure cos/sin angular structure, so q2 vanishes
    assert abs(q2) < 1e-12
    assert q0 > 0 and q1 > 0


def test_overlap_grid_mismatch():
    g1 = PolarGrid(R=10.0, n_r=100, n_theta=32)
    g2 = PolarGrid(R=10.0, n_r=120, n_theta=32)
    r, _ = g1.mesh()
    u0 = np.stack([np.exp(-(r**2)), np.zeros_like(r)])
    src = source_terms(u0, g1, (1.0, 0.0))
    r2, _ = g2.mesh()
    Y = np.stack([np.exp(-(r2**2)), np.zeros_like(r2)])
    rf = _make_rf(g2, Y, Y, Y)
    with pytest.raises(ValueError):
        overlap_integrals(rf, src)


# ---------------------------------------------------------------------------
# response-function files
# ---------------------------------------------------------------------------

def _synthetic_rfset():
    grid = PolarGrid(R=8.0, n_r=160, n_theta=64)
    r, th = grid.mesh()
    u0 = np.stack([np.exp(-(r**2) / 2) * np.cos(th), 0.5 * np.exp(-(r**2) / 2) * np.sin(th)])
    from spiraldrift.geometry import fd_derivative
    from spiraldrift.mobility import _theta_derivative

    du_dth = _theta_derivative(u0, 1).real
    du_dr = fd_derivative(u0, grid.dr, axis=1)
    ct, st = np.cos(th), np.sin(th)
    du_dx = ct * du_dr - (st / r) * du_dth
    du_dy = st * du_dr + (ct / r) * du_dth
    Y_theta = -du_dth / polar_inner_product(grid, du_dth, du_dth)
    Y_x = du_dx / polar_inner_product(grid, du_dx, du_dx)
    Y_y = du_dy / polar_inner_product(grid, du_dy, du_dy)
    return ResponseFunctionSet(
        grid=grid, u0=u0, du0_dtheta=du_dth, du0_dx=du_dx, du0_dy=du_dy,
        Y_theta=Y_theta, Y_x=Y_x, Y_y=Y_y,
        normalization="<Y_theta|d_theta u0> = -1",
    )


def test_rfset_biorthogonality_structure():
    rf = _synthetic_rfset()
    table = rf.biorthogonality()
    assert table[0, 0] == pytest.approx(-1.0, abs=1e-10)
    assert table[1, 1] == pytest.approx(1.0, abs=1e-10)
    assert table[2, 2] == pytest.approx(1.0, abs=1e-10)
    off = table - np.diag(np.diag(table))
    assert np.max(np.abs(off)) < 1e-3


def test_rfset_file_roundtrip(tmp_path):
    rf = _synthetic_rfset()
    path = tmp_path / "set.rf"
    rf.save(path)
    loaded = ResponseFunctionSet.load(path)
    assert loaded.grid == rf.grid
    assert loaded.normalization == rf.normalization
    for name in ResponseFunctionSet._FIELDS:
        np.testing.assert_array_equal(getattr(loaded, name), getattr(rf, name))
    assert loaded.digest() == rf.digest()


def test_rfset_complex_roundtrip(tmp_path):
    grid = PolarGrid(R=4.0, n_r=40, n_theta=16)
    r, th = grid.mesh()
    base = np.exp(1j * th) * np.exp(-(r**2))
    f = np.stack([base, 0.3 * base])
    rf = ResponseFunctionSet(grid=grid, u0=f, du0_dtheta=f, du0_dx=f, du0_dy=f,
                             Y_theta=f, Y_x=f, Y_y=f, normalization="complex-basis")
    path = tmp_path / "set.rf"
    rf.save(path)
    loaded = ResponseFunctionSet.load(path)
    np.testing.assert_array_equal(loaded.u0, f)
    assert np.iscomplexobj(loaded.u0)
