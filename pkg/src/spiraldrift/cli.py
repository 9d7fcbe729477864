"""Command-line entry point wiring geometry, solver, mobility and drift law
into reproducible experiments.

The ``pipeline`` verb runs seed -> simulate -> extract -> fit -> predict ->
compare for one experiment manifest and writes a self-describing artifact
bundle; the other verbs expose the individual stages.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .driftlaw import DriftPath, MobilityCoefficients, integrate_drift
from .geometry import SurfaceSpec, christoffel_and_ricci
from .gridio import grid_to_csv, save_grid
from .mobility import (
    ExtractionError,
    ResponseFunctionSet,
    extract_drift,
    fit_mobility,
    fit_q0,
    overlap_integrals,
    source_terms,
)
from .solver import (
    CANONICAL_NAMES,
    ExperimentConfig,
    PlanarSeed,
    canonical_config,
    run_experiment,
    seed_planar,
    stable_dt,
)

__all__ = [
    "ExperimentManifest",
    "DeviationReport",
    "compare_trajectories",
    "run_pipeline",
    "canonical_manifest",
    "main",
]


EXPECTATION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "q1_sign": {"enum": [-1, 1]},
        "q2_sign": {"enum": [-1, 1]},
        "q0_sign": {"enum": [-1, 1]},
        "q1": {"type": "number"},
        "q2": {"type": "number"},
        "q_rtol": {"type": "number", "exclusiveMinimum": 0},
        "q1_much_smaller_than_q2": {"type": "boolean"},
        "drift": {"enum": ["outward", "inward", "toward_min_rcs", "toward_max_rcs"]},
        "max_mean_deviation_core_radii": {"type": "number", "exclusiveMinimum": 0},
        "min_drift_core_diameters": {"type": "number", "minimum": 0},
    },
}


@dataclass
class ExperimentManifest:
    """A named experiment plus the declared expectations checked after it."""

    name: str
    config: ExperimentConfig
    expectations: dict | None = None
    settle_rotations: float = 4.0

    def validate(self):
        if self.expectations is not None:
            import jsonschema

            jsonschema.validate(self.expectations, EXPECTATION_SCHEMA)
        return self

    def to_json(self):
        out = {"name": self.name, "experiment": self.config.to_config(),
               "settle_rotations": self.settle_rotations}
        if self.expectations is not None:
            out["expectations"] = self.expectations
        return out

    @classmethod
    def from_json(cls, data):
        return cls(
            name=data["name"],
            config=ExperimentConfig.from_config(data["experiment"]),
            expectations=data.get("expectations"),
            settle_rotations=float(data.get("settle_rotations", 4.0)),
        ).validate()

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# Declared expectations for the published experiments (fitted values are
# checked loosely; signs exactly).
_MANIFEST_EXPECTATIONS = {
    "fig3": {"drift": "outward", "q0_sign": 1},
    "fig4a": {"q1_sign": 1, "q2_sign": 1, "drift": "toward_min_rcs",
              "q1": 0.643, "q2": 0.357, "q_rtol": 0.25,
              "max_mean_deviation_core_radii": 1.0, "min_drift_core_diameters": 5.0},
    "fig4b": {"q1_sign": -1, "q2_sign": 1, "q1": -0.102, "q2": 2.652,
              "q_rtol": 0.25, "q1_much_smaller_than_q2": True},
    "fig5a": {"q1_sign": 1, "q2_sign": 1,
              "max_mean_deviation_core_radii": 1.0, "min_drift_core_diameters": 5.0},
    "fig5a_iso": {"drift": "outward"},
    "fig5b": {"q1_sign": -1, "q2_sign": 1},
    "fig5b_iso": {},
}


def canonical_manifest(name, desk_scale=True, **overrides):
    cfg = canonical_config(name, desk_scale=desk_scale, **overrides)
    return ExperimentManifest(
        name=name, config=cfg, expectations=dict(_MANIFEST_EXPECTATIONS.get(name, {}))
    ).validate()


# ---------------------------------------------------------------------------
# trajectory comparison
# ---------------------------------------------------------------------------

@dataclass
class DeviationReport:
    max: float
    mean: float
    rms: float
    terminal: float
    observed_arc_length: float
    predicted_arc_length: float

    def to_json(self):
        return {
            "max": self.max, "mean": self.mean, "rms": self.rms,
            "terminal": self.terminal,
            "observed_arc_length": self.observed_arc_length,
            "predicted_arc_length": self.predicted_arc_length,
        }


def _point_to_polyline(px, py, xs, ys):
    """Distance from one point to a polyline (nearest segment projection)."""
    ax, ay = xs[:-1], ys[:-1]
    bx, by = xs[1:], ys[1:]
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    den[den == 0.0] = 1.0
    s = np.clip(((px - ax) * dx + (py - ay) * dy) / den, 0.0, 1.0)
    qx, qy = ax + s * dx, ay + s * dy
    return float(np.min(np.hypot(px - qx, py - qy)))


def compare_trajectories(observed, predicted):
    """Deviation statistics between an observed and a predicted center path.

    Distances are nearest-point deviations of every observed sample from the
    predicted polyline (arc-length parameterized, so time reparameterization
    does not inflate them); the terminal error compares positions at the
    common final time.
    """
    if len(observed) < 2 or len(predicted) < 2:
        raise ValueError("need at least two samples per path")
    t0 = max(observed.t[0], predicted.t[0])
    t1 = min(observed.t[-1], predicted.t[-1])
    if t1 <= t0:
        raise ValueError("paths do not overlap in time")
    sel = (observed.t >= t0) & (observed.t <= t1)
    devs = np.array([
        _point_to_polyline(px, py, predicted.x, predicted.y)
        for px, py in zip(observed.x[sel], observed.y[sel])
    ])
    terminal = float(np.hypot(*(observed.at_time(t1) - predicted.at_time(t1))))
    return DeviationReport(
        max=float(devs.max()), mean=float(devs.mean()),
        rms=float(np.sqrt(np.mean(devs**2))), terminal=terminal,
        observed_arc_length=observed.arc_length(),
        predicted_arc_length=predicted.arc_length(),
    )


# ---------------------------------------------------------------------------
# expectation checks
# ---------------------------------------------------------------------------

def _sign_ok(value, sign):
    return (value > 0) if sign > 0 else (value < 0)


def _check_expectations(exp, summary, metric, drift):
    checks = {}
    fitted = summary.get("fit", {}).get("estimates", {})
    q0 = summary.get("fit", {}).get("q0")
    rtol = exp.get("q_rtol", 0.25)
    if "q1_sign" in exp and "q1" in fitted:
        checks["q1_sign"] = _sign_ok(fitted["q1"], exp["q1_sign"])
    if "q2_sign" in exp and "q2" in fitted:
        checks["q2_sign"] = _sign_ok(fitted["q2"], exp["q2_sign"])
    if "q0_sign" in exp and q0 is not None:
        checks["q0_sign"] = _sign_ok(q0, exp["q0_sign"])
    if "q1" in exp and "q1" in fitted:
        checks["q1_value"] = abs(fitted["q1"] - exp["q1"]) <= rtol * abs(exp["q1"])
    if "q2" in exp and "q2" in fitted:
        checks["q2_value"] = abs(fitted["q2"] - exp["q2"]) <= rtol * abs(exp["q2"])
    if exp.get("q1_much_smaller_than_q2") and "q1" in fitted:
        checks["q1_much_smaller_than_q2"] = abs(fitted["q1"]) < 0.25 * abs(fitted["q2"])
    if "drift" in exp and drift is not None and len(drift) > 2:
        kind = exp["drift"]
        if kind in ("outward", "inward"):
            r = np.hypot(drift.x, drift.y)
            # compare averaged first/last fifths for robustness
            k = max(1, len(r) // 5)
            delta = float(np.mean(r[-k:]) - np.mean(r[:k]))
            checks["drift"] = delta > 0 if kind == "outward" else delta < 0
        else:
            ev = metric.evaluator()
            R = ev.ricci(drift.x, drift.y)
            k = max(1, len(R) // 5)
            delta = float(np.mean(R[-k:]) - np.mean(R[:k]))
            checks["drift"] = delta < 0 if kind == "toward_min_rcs" else delta > 0
    if "max_mean_deviation_core_radii" in exp and "comparison" in summary:
        core = summary.get("seed", {}).get("core_radius")
        if core:
            checks["mean_deviation"] = (
                summary["comparison"]["mean"]
                <= exp["max_mean_deviation_core_radii"] * core
            )
    if "min_drift_core_diameters" in exp and drift is not None and len(drift) > 1:
        core = summary.get("seed", {}).get("core_radius")
        if core:
            span = float(np.hypot(drift.x[-1] - drift.x[0], drift.y[-1] - drift.y[0]))
            checks["drift_span"] = span >= exp["min_drift_core_diameters"] * 2.0 * core
    return checks


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

def _digest_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def run_pipeline(manifest, outdir, seed=None, threads=None, progress=None):
    """Execute one manifest end to end and write the artifact bundle.

    Bundle contents: curvature and metric grids (+ CSV), tip trajectory CSV,
    rotation-averaged drift CSV, fitted-coefficient report, predicted path
    CSV, deviation report, and a summary with pass/fail per declared
    expectation.  Returns the summary dict.
    """
    if threads:
        import numba

        numba.set_num_threads(threads)
    os.makedirs(outdir, exist_ok=True)
    summary = {"name": manifest.name, "stages": {}, "checks": {}}
    cfg = manifest.config
    t_begin = time.perf_counter()

    spec = cfg.surface()
    metric = christoffel_and_ricci(spec)
    grid = spec.grid
    x0 = y0 = -grid.L / 2.0
    save_grid(os.path.join(outdir, "ricci.bin"), metric.ricci, grid.dx, x0, y0, "ricci")
    grid_to_csv(os.path.join(outdir, "ricci.csv"), metric.ricci, grid.dx, x0, y0, "ricci")
    save_grid(os.path.join(outdir, "sqrt_g.bin"), metric.sqrt_g, grid.dx, x0, y0, "sqrt_g")
    summary["stages"]["geometry"] = "ok"

    drift = None
    result = None
    if cfg.t_end > 0:
        try:
            result = run_experiment(cfg, outdir=os.path.join(outdir, "run"),
                                    seed=seed, metric=metric, progress=progress)
            summary["stages"]["simulate"] = result.status
            summary["seed"] = {
                "omega0": result.seed.omega0,
                "period0": result.seed.period0,
                "core_radius": result.seed.core_radius,
                "chirality": result.seed.chirality,
            }
            summary["dt"] = result.dt
            summary["n_steps"] = result.n_steps
            result.trajectory.to_csv(os.path.join(outdir, "tip.csv"))
        except Exception as exc:  # stage failure: record, skip downstream
            summary["stages"]["simulate"] = f"failed: {exc}"
    else:
        summary["stages"]["simulate"] = "skipped (t_end = 0)"

    if result is not None and len(result.trajectory) > 3:
        try:
            drift = extract_drift(result.trajectory)
            settle = manifest.settle_rotations * result.seed.period0
            keep = drift.t >= drift.t[0] + settle
            if keep.sum() >= 8:
                drift = DriftPath(drift.t[keep], drift.x[keep], drift.y[keep],
                                  status=drift.status, period=drift.period[keep])
            drift.to_csv(os.path.join(outdir, "drift.csv"))
            summary["stages"]["extract"] = "ok"
        except ExtractionError as exc:
            summary["stages"]["extract"] = f"failed: {exc}"
            drift = None

    fitted_q = None
    if drift is not None:
        try:
            fit = fit_mobility(drift, metric)
            report = {"estimates": fit.report()}
            ev = metric.evaluator()
            try:
                report["q0"] = fit_q0(
                    drift.period, ev.ricci(drift.x, drift.y), summary["seed"]["omega0"],
                    ricci_scale=float(np.max(np.abs(metric.ricci))),
                )
            except ExtractionError as exc:
                report["q0_error"] = str(exc)
            report["omega0"] = summary["seed"]["omega0"]
            report["input_digest"] = _digest_file(os.path.join(outdir, "drift.csv"))
            with open(os.path.join(outdir, "fit.json"), "w") as fh:
                json.dump(report, fh, indent=2)
                fh.write("\n")
            summary["fit"] = report
            summary["stages"]["fit"] = "ok"
            fitted_q = MobilityCoefficients(
                q0=report.get("q0", 0.0), q1=fit.q1, q2=fit.q2,
                omega0=summary["seed"]["omega0"],
                chirality=summary["seed"]["chirality"],
            )
        except Exception as exc:
            summary["stages"]["fit"] = f"failed: {exc}"

    if fitted_q is not None:
        try:
            predicted = integrate_drift(
                (drift.x[0], drift.y[0]), drift.t[-1] - drift.t[0], metric, fitted_q
            )
            shifted = DriftPath(predicted.t + drift.t[0], predicted.x, predicted.y,
                                step=predicted.step, status=predicted.status)
            shifted.to_csv(os.path.join(outdir, "prediction.csv"))
            summary["stages"]["predict"] = shifted.status
            comparison = compare_trajectories(drift, shifted)
            summary["comparison"] = comparison.to_json()
            summary["stages"]["compare"] = "ok"
        except Exception as exc:
            summary["stages"]["predict"] = f"failed: {exc}"

    if manifest.expectations:
        summary["checks"] = _check_expectations(manifest.expectations, summary, metric, drift)
    summary["passed"] = all(summary["checks"].values()) if summary["checks"] else True
    summary["wall_time_s"] = time.perf_counter() - t_begin
    summary["manifest"] = manifest.to_json()
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _load_manifest(ref):
    if ref in CANONICAL_NAMES:
        return canonical_manifest(ref)
    return ExperimentManifest.load(ref)


def _cmd_geometry(args):
    spec = SurfaceSpec.load(args.config)
    metric = christoffel_and_ricci(spec, method=args.method)
    grid = spec.grid
    x0 = y0 = -grid.L / 2.0
    os.makedirs(args.out, exist_ok=True)
    for name, values in (("ricci", metric.ricci), ("sqrt_g", metric.sqrt_g),
                         ("g11", metric.g_lower[..., 0, 0]),
                         ("g12", metric.g_lower[..., 0, 1]),
                         ("g22", metric.g_lower[..., 1, 1])):
        save_grid(os.path.join(args.out, f"{name}.bin"), values, grid.dx, x0, y0, name)
        if args.csv:
            grid_to_csv(os.path.join(args.out, f"{name}.csv"), values, grid.dx, x0, y0, name)
    print(f"geometry written to {args.out} (method: {metric.method})")
    return 0


def _cmd_seed(args):
    cfg = _load_manifest(args.config).config if args.config in CANONICAL_NAMES \
        else ExperimentConfig.load(args.config)
    spec = cfg.surface()
    alpha0 = float(np.asarray(spec.fiber.value(0.0, 0.0)))
    seed = seed_planar(
        cfg.kinetics(), alpha0=alpha0, d_L=spec.d_L, d_T=spec.d_T, D0=spec.D0,
        dx=cfg.dx, L_seed=cfg.L + 2 * cfg.seed_margin, chirality=cfg.chirality,
    )
    seed.save(args.out)
    print(f"planar seed: omega0={seed.omega0:.5f} period={seed.period0:.5f} "
          f"core_radius={seed.core_radius:.4f} chirality={seed.chirality:+d} -> {args.out}")
    return 0


def _cmd_simulate(args):
    if args.config in CANONICAL_NAMES:
        cfg = canonical_config(args.config)
    else:
        cfg = ExperimentConfig.load(args.config)
    if args.t_end is not None:
        cfg = ExperimentConfig.from_config({**cfg.to_config(), "t_end": args.t_end})
    seed = PlanarSeed.load(args.seed) if args.seed else None
    if args.threads:
        import numba

        numba.set_num_threads(args.threads)
    res = run_experiment(cfg, outdir=args.out, seed=seed)
    print(f"simulate: status={res.status} steps={res.n_steps} tips={len(res.trajectory)} "
          f"dt={res.dt:g} wall={res.wall_time:.1f}s -> {args.out}")
    return 0 if res.status in ("ok", "boundary", "geometry-only") else 1


def _cmd_resume(args):
    import glob

    with open(os.path.join(args.snapshot, "run.json")) as fh:
        meta = json.load(fh)
    cfg = ExperimentConfig.from_config(meta["config"])
    snaps = sorted(glob.glob(os.path.join(args.snapshot, "snapshot_*_u.bin")))
    if not snaps:
        print("no snapshots in bundle", file=sys.stderr)
        return 1
    from .gridio import load_grid
    from .solver import SpiralState, build_stencil, evolve, track_tip

    u, _ = load_grid(snaps[-1])
    v, _ = load_grid(snaps[-1].replace("_u.bin", "_v.bin"))
    spec = cfg.surface()
    metric = christoffel_and_ricci(spec)
    stencil = build_stencil(metric)
    kin = cfg.kinetics()
    dt = meta["dt"]
    state = SpiralState(u, v, 0.0)
    n = round(args.t_extra / dt)
    state = evolve(state, stencil, kin, dt, n)
    tip = track_tip(state, spec.grid, kin)
    print(f"resumed {n} steps; tip now: {tip}")
    return 0


def _cmd_fit(args):
    spec = SurfaceSpec.load(args.geometry)
    metric = christoffel_and_ricci(spec)
    paths = [DriftPath.from_csv(p) for p in args.trajectories]
    fit = fit_mobility(paths, metric)
    report = {"estimates": fit.report(),
              "input_digest": [_digest_file(p) for p in args.trajectories]}
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _cmd_predict(args):
    spec = SurfaceSpec.load(args.geometry)
    metric = christoffel_and_ricci(spec)
    q = MobilityCoefficients.load(args.q_file)
    path = integrate_drift(tuple(args.x0), args.t_end, metric, q)
    path.to_csv(args.out)
    print(f"predicted path ({path.status}, {len(path)} samples) -> {args.out}")
    return 0


def _cmd_coeffs(args):
    rf = ResponseFunctionSet.load(args.rf_file)
    with open(args.kinetics) as fh:
        kcfg = json.load(fh)
    P = (kcfg.get("D_u", 1.0), kcfg.get("D_v", 1.0))
    src = source_terms(rf.u0, rf.grid, P)
    q0, q1, q2 = overlap_integrals(rf, src)
    print(json.dumps({"q0": q0, "q1": q1, "q2": q2,
                      "normalization": rf.normalization,
                      "input_digest": rf.digest()}, indent=2))
    return 0


def _cmd_pipeline(args):
    manifest = _load_manifest(args.manifest)
    if args.t_end is not None:
        cfg = ExperimentConfig.from_config({**manifest.config.to_config(), "t_end": args.t_end})
        manifest = ExperimentManifest(manifest.name, cfg, manifest.expectations,
                                      manifest.settle_rotations)
    seed = PlanarSeed.load(args.seed) if args.seed else None
    summary = run_pipeline(manifest, args.out, seed=seed, threads=args.threads)
    for stage, status in summary["stages"].items():
        print(f"  {stage}: {status}")
    for check, ok in summary["checks"].items():
        print(f"  check {check}: {'PASS' if ok else 'FAIL'}")
    print(f"pipeline {'PASSED' if summary['passed'] else 'FAILED'} "
          f"({summary['wall_time_s']:.1f}s) -> {args.out}")
    return 0 if summary["passed"] else 1


def _cmd_compare(args):
    obs = DriftPath.from_csv(args.observed)
    pred = DriftPath.from_csv(args.predicted)
    rep = compare_trajectories(obs, pred)
    print(json.dumps(rep.to_json(), indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="spiraldrift",
        description="Spiral-wave drift on curved anisotropic surfaces",
    )
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("geometry", help="write metric and curvature grids")
    g.add_argument("config", help="surface spec JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--method", default="auto", choices=["auto", "analytic", "fd"])
    g.add_argument("--csv", action="store_true", help="also write CSV exports")
    g.set_defaults(fn=_cmd_geometry)

    s = sub.add_parser("seed", help="planar spiral pre-run only")
    s.add_argument("config", help="experiment config JSON or canonical name")
    s.add_argument("--out", required=True, help="seed .npz file")
    s.set_defaults(fn=_cmd_seed)

    r = sub.add_parser("simulate", help="run one experiment")
    r.add_argument("config", help="experiment config JSON or canonical name")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", help="reuse a saved planar seed")
    r.add_argument("--t-end", type=float, dest="t_end")
    r.add_argument("--threads", type=int)
    r.set_defaults(fn=_cmd_simulate)

    z = sub.add_parser("resume", help="continue from the last snapshot of a bundle")
    z.add_argument("snapshot", help="bundle directory with snapshots + run.json")
    z.add_argument("--t-extra", type=float, default=10.0, dest="t_extra")
    z.set_defaults(fn=_cmd_resume)

    f = sub.add_parser("fit", help="fit mobility coefficients from drift CSVs")
    f.add_argument("trajectories", nargs="+")
    f.add_argument("geometry", help="surface spec JSON")
    f.add_argument("--out")
    f.set_defaults(fn=_cmd_fit)

    q = sub.add_parser("predict", help="integrate the drift law")
    q.add_argument("geometry", help="surface spec JSON")
    q.add_argument("q_file", help="mobility coefficients JSON")
    q.add_argument("--x0", type=float, nargs=2, required=True)
    q.add_argument("--t-end", type=float, required=True, dest="t_end")
    q.add_argument("--out", required=True)
    q.set_defaults(fn=_cmd_predict)

    c = sub.add_parser("coeffs", help="overlap-integral coefficients from response functions")
    c.add_argument("rf_file")
    c.add_argument("kinetics", help="kinetics config JSON")
    c.set_defaults(fn=_cmd_coeffs)

    w = sub.add_parser("pipeline", help="full experiment pipeline")
    w.add_argument("manifest", help="manifest JSON or canonical name")
    w.add_argument("--out", required=True)
    w.add_argument("--seed", help="reuse a saved planar seed")
    w.add_argument("--t-end", type=float, dest="t_end")
    w.add_argument("--threads", type=int)
    w.set_defaults(fn=_cmd_pipeline)

    v = sub.add_parser("compare", help="deviation report between two path CSVs")
    v.add_argument("observed")
    v.add_argument("predicted")
    v.set_defaults(fn=_cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
