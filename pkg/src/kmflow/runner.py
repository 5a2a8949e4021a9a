"""Scenario execution and report emission.

Every run writes report.json; flow-type scenarios additionally write
series.csv (the strided monitor rows) and final_map.csv (per node wrapped
displacements). Floats are serialized with 17 significant digits so repeated
runs with one seed reproduce the files byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import geometry as geo
from .config import build_densities, build_initial_state
from .costs import sample_guarded_pairs, verify_partials
from .errors import KmflowError
from .flow import run_flow
from .graph import map_displacement, wedge_identity_check
from .oracle import compare_maps, rearrangement_1d, sinkhorn

__all__ = ["run_scenario", "format_float", "write_series_csv", "write_final_map_csv"]

SERIES_COLUMNS = (
    "t",
    "theta_min",
    "theta_max",
    "theta_osc",
    "slope_ratio_max",
    "lagrangian_defect",
)


def format_float(v):
    return f"{float(v):.17g}"


def write_series_csv(path, report):
    rows = zip(
        report.times,
        report.theta_min,
        report.theta_max,
        report.theta_osc,
        report.slope_ratio_max,
        report.lagrangian_defect,
    )
    with open(path, "w") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def write_final_map_csv(path, state):
    grid = state.grid
    disp = map_displacement(grid, state.T.values).reshape(-1, grid.n_dims)
    cols = ["node"] + [f"disp_{a}" for a in range(grid.n_dims)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for node in range(disp.shape[0]):
            fh.write(
                str(node) + "," + ",".join(format_float(v) for v in disp[node]) + "\n"
            )


def _write_report(out_dir, payload):
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _run_flow_scenario(config, out_dir):
    densities = build_densities(config)
    initial = build_initial_state(config, densities)
    report, final = run_flow(config.model, densities, initial, config.flow)
    write_series_csv(os.path.join(out_dir, "series.csv"), report)
    write_final_map_csv(os.path.join(out_dir, "final_map.csv"), final)
    payload = {
        "scenario": config.scenario,
        "seed": config.seed,
        "flow_report": report.to_dict(),
    }
    if config.scenario == "oracle_compare":
        method = config.oracle.get(
            "method", "rearrangement" if config.grid.n_dims == 1 else "sinkhorn"
        )
        if method == "rearrangement":
            oracle = rearrangement_1d(densities.rho, densities.rho_bar, config.grid)
        elif method == "sinkhorn":
            oracle = sinkhorn(
                densities.rho,
                densities.rho_bar,
                config.model,
                eps=float(config.oracle.get("eps", 1e-3)),
                max_iters=int(config.oracle.get("max_iters", 20000)),
                tol=float(config.oracle.get("tol", 1e-9)),
            )
        else:
            raise KmflowError(f"unknown oracle method {method!r}")
        payload["oracle"] = {
            "method": oracle.method,
            "params": {k: v for k, v in oracle.params.items()},
            "comparison": compare_maps(final.T, oracle.T_star, config.grid),
        }
    _write_report(out_dir, payload)
    if report.termination.startswith("error("):
        return 1
    if report.property_violations:
        return 2
    return 0


def _run_mtw_scenario(config, out_dir):
    report = geo.mtw_scan(
        config.model,
        config.grid,
        directions_per_point=int(config.mtw.get("directions_per_point", 8)),
        seed=config.seed,
        points_per_axis=int(config.mtw.get("points_per_axis", 6)),
    )
    _write_report(
        out_dir,
        {"scenario": config.scenario, "seed": config.seed, "mtw_report": report.to_dict()},
    )
    return 0


def _run_geometry_verify(config, out_dir):
    gv = config.geometry_verify
    samples = int(gv.get("samples", 25))
    curvature_points = int(gv.get("curvature_points", 50))
    wedge_points = int(gv.get("wedge_points", 100))
    densities = build_densities(config)

    partials_report = verify_partials(config.model, sample_count=samples, seed=config.seed)

    xs, xbars = sample_guarded_pairs(config.model, curvature_points, config.seed + 1)
    worst_curv = 0.0
    worst_gamma = 0.0
    for x, xbar in zip(xs, xbars):
        r4 = geo.curvature(config.model, x, xbar)
        oracle = geo.curvature_fd_oracle(config.model, x, xbar)
        scale = max(np.max(np.abs(oracle)), 1e-10)
        worst_curv = max(worst_curv, float(np.max(np.abs(r4 - oracle)) / scale))
        gu, gb = geo.christoffel(config.model, x, xbar)
        full = geo.christoffel_fd_oracle(config.model, x, xbar)
        n = config.grid.n_dims
        gscale = max(np.max(np.abs(gu)), np.max(np.abs(gb)), 1e-10)
        gap = max(
            float(np.max(np.abs(gu - full[:n, :n, :n]))),
            float(np.max(np.abs(gb - full[n:, n:, n:]))),
        )
        worst_gamma = max(worst_gamma, gap / gscale)

    xs, xbars = sample_guarded_pairs(config.model, wedge_points, config.seed + 2)
    worst_wedge = max(
        wedge_identity_check(config.model, densities, x, xbar)
        for x, xbar in zip(xs, xbars)
    )

    flat = config.model.kind in ("torus_squared_distance", "bilinear_flat")
    curv_tol = 1e-12 if flat else 1e-5
    gamma_tol = 1e-12 if flat else 1e-6
    passed = (
        partials_report.passed
        and worst_curv < curv_tol
        and worst_gamma < gamma_tol
        and worst_wedge < 1e-10
    )
    _write_report(
        out_dir,
        {
            "scenario": config.scenario,
            "seed": config.seed,
            "verification": {
                "cost_partials": partials_report.to_dict(),
                "curvature_rel_error_max": worst_curv,
                "christoffel_rel_error_max": worst_gamma,
                "wedge_residual_max": worst_wedge,
                "curvature_points": curvature_points,
                "wedge_points": wedge_points,
                "passed": bool(passed),
            },
        },
    )
    return 0 if passed else 2


def run_scenario(config, out_dir=None, seed=None):
    """Execute one scenario; returns the process exit status (0, 1 or 2)."""
    if seed is not None:
        config.seed = int(seed)
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        if config.scenario in ("flow", "oracle_compare"):
            return _run_flow_scenario(config, out_dir)
        if config.scenario == "mtw_scan":
            return _run_mtw_scenario(config, out_dir)
        if config.scenario == "geometry_verify":
            return _run_geometry_verify(config, out_dir)
        raise KmflowError(f"unknown scenario {config.scenario!r}")
    except KmflowError as exc:
        _write_report(
            out_dir,
            {"scenario": config.scenario, "seed": config.seed, "error": str(exc)},
        )
        return 1
