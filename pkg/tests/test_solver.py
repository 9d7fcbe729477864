"""Stencil construction, time stepping, tip tracking, seeding mechanics."""

import numpy as np
import pytest

from spiraldrift.geometry import (
    ConstantFiber,
    LinearFiber,
    ParaboloidShape,
    PlaneShape,
    SurfaceSpec,
    christoffel_and_ricci,
)
from spiraldrift.solver import (
    AmbiguousTip,
    BarkleyKinetics,
    Grid,
    NumericalBlowup,
    PlanarSeed,
    SpiralState,
    build_stencil,
    canonical_config,
    cross_field_state,
    diffusion_step,
    evolve,
    place_seed,
    stable_dt,
    step,
    track_tip,
)

B0 = np.pi / 40.0


def flat_iso(L=6.0, dx=0.1):
    return SurfaceSpec(PlaneShape(), ConstantFiber(0.0), 1, 1, 1, L, dx)


def curved_aniso(L=6.0, dx=0.1):
    return SurfaceSpec(ParaboloidShape(A=0.05, sign=-1), LinearFiber(B0), 4, 1, 1, L, dx)


KIN = BarkleyKinetics(a=0.7, b=0.19, eps=0.025, D_u=1.0, D_v=1.0)


# ---------------------------------------------------------------------------
# stencil table
# ---------------------------------------------------------------------------

def test_flat_isotropic_reduces_to_five_point():
    st = build_stencil(christoffel_and_ricci(flat_iso()))
    n = st.coeffs.shape[1]
    interior = (slice(1, n - 1), slice(1, n - 1))
    assert np.all(st.coefficient(0, 0)[interior] == -4.0)
    for m, nn in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert np.all(st.coefficient(m, nn)[interior] == 1.0)
    for m, nn in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        assert np.all(st.coefficient(m, nn) == 0.0)


def test_flat_anisotropic_coefficients():
    spec = SurfaceSpec(PlaneShape(), ConstantFiber(0.0), 4, 1, 1, 6.0, 0.1)
    st = build_stencil(christoffel_and_ricci(spec))
    i = j = 30
    assert st.coefficient(1, 0)[i, j] == pytest.approx(2.0, abs=1e-14)
    assert st.coefficient(0, 1)[i, j] == pytest.approx(0.5, abs=1e-14)
    assert st.coefficient(0, 0)[i, j] == pytest.approx(-5.0, abs=1e-14)
    assert st.coefficient(1, 1)[i, j] == 0.0


@pytest.mark.parametrize("half_node", ["analytic", "mean"])
def test_zero_row_sums_everywhere(half_node):
    st = build_stencil(christoffel_and_ricci(curved_aniso()), half_node=half_node)
    assert np.max(np.abs(st.row_sums())) < 1e-12


def test_half_node_modes_agree_closely():
    metric = christoffel_and_ricci(curved_aniso())
    sta = build_stencil(metric, half_node="analytic")
    stm = build_stencil(metric, half_node="mean")
    # metric varies smoothly; averaging differs from midpoint value at O(dx^2)
    assert np.max(np.abs(sta.coeffs - stm.coeffs)) < 5e-4


def test_conservation_kinetics_off():
    spec = curved_aniso()
    metric = christoffel_and_ricci(spec)
    st = build_stencil(metric)
    grid = spec.grid
    X, Y = grid.mesh()
    u = np.exp(-((X - 0.5) ** 2 + Y**2))
    w = metric.sqrt_g * grid.dx**2
    total0 = float(np.sum(w * u))
    dt = stable_dt(spec)
    for _ in range(2000):
        u = diffusion_step(u, st, dt)
    assert abs(float(np.sum(w * u)) - total0) / abs(total0) < 1e-12
    assert np.max(u) < 1.0  # actually diffused


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def test_rest_state_is_exact_fixed_point():
    spec = flat_iso()
    st = build_stencil(christoffel_and_ricci(spec))
    state = SpiralState.rest(spec.grid)
    out = evolve(state, st, KIN, stable_dt(spec), 200)
    assert np.all(out.u == 0.0) and np.all(out.v == 0.0)


def test_excited_uniform_state_is_fixed_point():
    spec = curved_aniso()
    st = build_stencil(christoffel_and_ricci(spec))
    n = spec.grid.n
    state = SpiralState(np.ones((n, n)), np.ones((n, n)))
    out = evolve(state, st, KIN, stable_dt(spec), 1000)
    assert np.max(np.abs(out.u - 1.0)) < 1e-10
    assert np.max(np.abs(out.v - 1.0)) < 1e-10


def test_step_matches_reference_five_point_bit_for_bit():
    spec = flat_iso(L=4.0, dx=0.1)
    st = build_stencil(christoffel_and_ricci(spec))
    n = spec.grid.n
    rng = np.random.default_rng(42)
    u = rng.random((n, n))
    v = rng.random((n, n)) * 0.4
    kin = BarkleyKinetics(a=0.8, b=0.05, eps=0.02, D_u=1.0, D_v=1.0)
    dt = stable_dt(spec)

    # independent reference: hardcoded 5-point coefficients, no-flux links
    # zeroed, identical (m, n) summation order and arithmetic
    def reference(u, v):
        un = np.empty_like(u)
        vn = np.empty_like(v)
        inv_a = 1.0 / kin.a
        inv_eps = 1.0 / kin.eps
        w = 1.0 / (spec.dx * spec.dx * 1.0)
        for i in range(n):
            im, ip = max(i - 1, 0), min(i + 1, n - 1)
            ap = 1.0 if i < n - 1 else 0.0
            am = 1.0 if i > 0 else 0.0
            for j in range(n):
                jm, jp = max(j - 1, 0), min(j + 1, n - 1)
                bp = 1.0 if j < n - 1 else 0.0
                bm = 1.0 if j > 0 else 0.0
                c0 = -(ap + am + bp + bm)
                acc_u = (0.0 * u[im, jm] + am * u[im, j] + 0.0 * u[im, jp]
                         + bm * u[i, jm] + c0 * u[i, j] + bp * u[i, jp]
                         + 0.0 * u[ip, jm] + ap * u[ip, j] + 0.0 * u[ip, jp])
                acc_v = (0.0 * v[im, jm] + am * v[im, j] + 0.0 * v[im, jp]
                         + bm * v[i, jm] + c0 * v[i, j] + bp * v[i, jp]
                         + 0.0 * v[ip, jm] + am * 0.0 + ap * v[ip, j] + 0.0 * v[ip, jp])
                uc = u[i, j]
                vc = v[i, j]
                fu = inv_eps * uc * (1.0 - uc) * (uc - (vc + kin.b) * inv_a)
                un[i, j] = uc + dt * (kin.D_u * acc_u * w + fu)
                vn[i, j] = vc + dt * (kin.D_v * acc_v * w + (uc - vc))
        return un, vn

    state = SpiralState(u, v)
    for _ in range(3):
        got = step(state, st, kin, dt)
        want_u, want_v = reference(state.u, state.v)
        np.testing.assert_array_equal(got.u, want_u)
        np.testing.assert_array_equal(got.v, want_v)
        state = got


def test_determinism_across_thread_counts():
    import numba

    spec = curved_aniso()
    st = build_stencil(christoffel_and_ricci(spec))
    n = spec.grid.n
    rng = np.random.default_rng(3)
    state0 = SpiralState(rng.random((n, n)), rng.random((n, n)) * 0.5)
    dt = stable_dt(spec)
    old = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        a = evolve(state0.copy(), st, KIN, dt, 50)
        numba.set_num_threads(2)
        b = evolve(state0.copy(), st, KIN, dt, 50)
    finally:
        numba.set_num_threads(old)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.v, b.v)


def test_blowup_reports_cell_and_time():
    spec = flat_iso()
    st = build_stencil(christoffel_and_ricci(spec))
    n = spec.grid.n
    u = np.zeros((n, n))
    u[10, 20] = np.inf
    with pytest.raises(NumericalBlowup) as err:
        step(SpiralState(u, np.zeros((n, n)), t=1.5), st, KIN, stable_dt(spec))
    # the non-finite value spreads one cell before detection
    ci, cj = err.value.cell
    assert abs(ci - 10) <= 1 and abs(cj - 20) <= 1
    assert err.value.t > 1.5


def test_diffusion_second_order_convergence():
    # the bump must stay negligible at the boundary: the no-flux link
    # zeroing is a first-order closure in a one-cell band and diffusion
    # would carry that error inward
    T = 0.5
    sols = {}
    for dx in (0.4, 0.2, 0.1):
        spec = SurfaceSpec(ParaboloidShape(A=0.05, sign=-1), LinearFiber(B0),
                           4, 1, 1, 12.0, dx)
        metric = christoffel_and_ricci(spec)
        st = build_stencil(metric)
        X, Y = spec.grid.mesh()
        u = np.exp(-((X - 0.4) ** 2 + (Y + 0.2) ** 2) / 2.0)
        dt_bound = stable_dt(spec)
        nsteps = int(np.ceil(T / dt_bound))
        dt = T / nsteps
        for _ in range(nsteps):
            u = diffusion_step(u, st, dt)
        sols[dx] = u
    # restrict finer grids to the coarse nodes (all grids share node layout)
    s4 = sols[0.4]
    s2 = sols[0.2][::2, ::2]
    s1 = sols[0.1][::4, ::4]
    n = s4.shape[0]
    b = int(2.0 / 0.4)
    sl = (slice(b, n - b), slice(b, n - b))
    e12 = np.max(np.abs((s4 - s2)[sl]))
    e23 = np.max(np.abs((s2 - s1)[sl]))
    order = np.log2(e12 / e23)
    assert order > 1.7, f"observed order {order:.2f}"


# ---------------------------------------------------------------------------
# tip tracking
# ---------------------------------------------------------------------------

def test_tip_none_when_quiescent():
    spec = flat_iso()
    state = SpiralState.rest(spec.grid)
    assert track_tip(state, spec.grid, KIN) is None


def test_tip_exact_on_linear_fields():
    spec = flat_iso(L=4.0, dx=0.1)
    grid = spec.grid
    X, Y = grid.mesh()
    xstar, ystar = 0.537, -0.729
    u = 0.5 + 0.3 * (X - xstar)
    v = (KIN.a / 2 - KIN.b) + 0.2 * (Y - ystar)
    tip = track_tip(SpiralState(u, v), grid, KIN)
    assert tip is not None
    assert abs(tip.x - xstar) < 1e-10
    assert abs(tip.y - ystar) < 1e-10
    # phase is the u-gradient direction: gradient along +x here
    assert abs(tip.phase) < 1e-12


def test_tip_ambiguity_and_disambiguation():
    spec = flat_iso(L=4.0, dx=0.1)
    grid = spec.grid
    X, Y = grid.mesh()
    # two vertical u = 1/2 lines at x = +-1, one horizontal v line at y = 0
    u = 0.5 + 0.3 * (X - 1.0) * (X + 1.0)
    v = (KIN.a / 2 - KIN.b) + 0.2 * Y
    state = SpiralState(u, v)
    with pytest.raises(AmbiguousTip):
        track_tip(state, grid, KIN)
    prev = track_tip(state, grid, KIN,
                     prev=type("P", (), {"x": 0.9, "y": 0.1})())
    assert abs(prev.x - 1.0) < 1e-9 and abs(prev.y) < 1e-9
    other = track_tip(state, grid, KIN,
                      prev=type("P", (), {"x": -1.2, "y": 0.0})())
    assert abs(other.x + 1.0) < 1e-9


# ---------------------------------------------------------------------------
# seeding mechanics
# ---------------------------------------------------------------------------

def _fake_seed(L_seed=12.0, dx=0.1, center=(0.37, -0.22)):
    grid = Grid(L_seed, dx)
    X, Y = grid.mesh()
    u = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2))
    v = 0.3 * u
    return PlanarSeed(
        u=u, v=v, grid=grid, kinetics=KIN, orbit_center=center,
        omega0=1.0, period0=2 * np.pi, core_radius=0.5, chirality=1,
        alpha0=0.0, d_L=1.0, d_T=1.0, D0=1.0,
    )


def test_place_seed_centers_within_two_cells():
    seed = _fake_seed()
    target = Grid(8.0, 0.1)
    for pos in ((0.0, 0.0), (1.23, -0.81), (-2.04, 1.55)):
        state = place_seed(seed, target, pos)
        X, Y = target.mesh()
        k = np.unravel_index(np.argmax(state.u), state.u.shape)
        assert abs(X[k] - pos[0]) <= 2 * target.dx + 1e-12
        assert abs(Y[k] - pos[1]) <= 2 * target.dx + 1e-12
        # shift is whole cells: field values are copied unchanged
        assert abs(np.max(state.u) - np.max(seed.u)) < 1e-15


def test_place_seed_fills_uncovered_cells_with_rest():
    seed = _fake_seed(L_seed=6.0)
    target = Grid(12.0, 0.1)
    state = place_seed(seed, target, (4.0, 4.0))
    assert state.u[0, 0] == 0.0 and state.v[0, 0] == 0.0
    assert np.max(state.u) > 0.9


def test_seed_roundtrip_npz(tmp_path):
    seed = _fake_seed()
    path = tmp_path / "seed.npz"
    seed.save(path)
    loaded = PlanarSeed.load(path)
    np.testing.assert_array_equal(loaded.u, seed.u)
    assert loaded.kinetics == seed.kinetics
    assert loaded.orbit_center == pytest.approx(seed.orbit_center)
    assert loaded.chirality == seed.chirality


def test_cross_field_state_pattern():
    grid = Grid(10.0, 0.1)
    st = cross_field_state(grid, KIN, chirality=1)
    X, Y = grid.mesh()
    assert np.all(st.u[Y < 0] == 1.0)
    assert np.all(st.u[Y > 0] == 0.0)
    assert np.all(st.v[X < 0] == KIN.a / 2)
    st2 = cross_field_state(grid, KIN, chirality=-1)
    assert np.all(st2.v[X > 0] == KIN.a / 2)


def test_stable_dt_follows_max_diffusivity():
    spec = SurfaceSpec(PlaneShape(), ConstantFiber(0.0), 4, 1, 1, 6.0, 0.1)
    assert stable_dt(spec) == pytest.approx(0.9 * 0.01 / 16.0)
    assert stable_dt(flat_iso()) == pytest.approx(0.9 * 0.01 / 4.0)


def test_canonical_configs_match_parameter_table():
    c = canonical_config("fig3", desk_scale=False)
    assert (c.a, c.b, c.eps, c.A, c.B, c.L, c.dx, c.D_v, c.D_L, c.D_T, c.D0) == \
        (0.7, 0.19, 0.025, 0.1, 0.0, 40.0, 0.1, 1.0, 1.0, 1.0, 1.0)
    c4 = canonical_config("fig4a", desk_scale=False)
    assert (c4.a, c4.A, c4.B, c4.L, c4.D_v, c4.D_L) == \
        (1.3, 0.0, np.pi / 40, 30.0, 0.0, 4.0)
    c5 = canonical_config("fig5b", desk_scale=False)
    assert (c5.a, c5.A, c5.B, c5.L) == (1.1, 0.025, np.pi / 80, 80.0)


def test_experiment_config_roundtrip(tmp_path):
    cfg = canonical_config("fig4a")
    path = tmp_path / "cfg.json"
    cfg.save(path)
    from spiraldrift.solver import ExperimentConfig

    loaded = ExperimentConfig.load(path)
    assert loaded == cfg
