"""Run configuration: TOML parsing, validation, and object construction.

Validation is collective: every problem found is reported, not just the first.
The schema is documented in the repository README.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .costs import COST_KINDS, make_cost
from .errors import ParseError, ValidationError
from .flow import FlowConfig
from .graph import DensityPair
from .grid import ScalarField, VectorField, make_grid

__all__ = ["RunConfig", "parse_config", "build_densities", "build_initial_state"]

SCENARIOS = ("flow", "mtw_scan", "geometry_verify", "oracle_compare")
DENSITY_KINDS = ("constant", "sine", "product", "csv")
INITIAL_KINDS = ("identity", "potential", "perturbed_map")


@dataclass
class RunConfig:
    scenario: str
    seed: int
    grid: object
    model: object
    density_spec: dict
    initial_spec: dict
    flow: FlowConfig
    mtw: dict = field(default_factory=dict)
    geometry_verify: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    out_dir: str = "out"


def _density_values(spec, grid, base_dir, problems, label):
    kind = spec.get("kind", "constant")
    x = grid.coords()
    if kind == "constant":
        return np.full(grid.shape, float(spec.get("value", 1.0)))
    if kind == "sine":
        amp = float(spec.get("amplitude", 0.0))
        freq = int(spec.get("frequency", 1))
        axis = int(spec.get("axis", 0))
        if not 0 <= axis < grid.n_dims:
            problems.append(f"{label}: axis {axis} out of range")
            return np.ones(grid.shape)
        return 1.0 + amp * np.sin(2.0 * np.pi * freq * x[..., axis] / grid.period[axis])
    if kind == "product":
        amps = spec.get("amplitude", [0.0] * grid.n_dims)
        freqs = spec.get("frequency", [1] * grid.n_dims)
        if np.isscalar(amps):
            amps = [amps] * grid.n_dims
        if np.isscalar(freqs):
            freqs = [freqs] * grid.n_dims
        if len(amps) != grid.n_dims or len(freqs) != grid.n_dims:
            problems.append(f"{label}: product factors must match n_dims")
            return np.ones(grid.shape)
        vals = np.ones(grid.shape)
        for a in range(grid.n_dims):
            vals *= 1.0 + float(amps[a]) * np.sin(
                2.0 * np.pi * int(freqs[a]) * x[..., a] / grid.period[a]
            )
        return vals
    if kind == "csv":
        path = spec.get("path")
        if not path:
            problems.append(f"{label}: csv density needs a path")
            return np.ones(grid.shape)
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(full):
            problems.append(f"{label}: file {full} does not exist")
            return np.ones(grid.shape)
        try:
            vals = np.loadtxt(full, delimiter=",", dtype=float).reshape(grid.shape)
        except Exception as exc:
            problems.append(f"{label}: failed to load {full}: {exc}")
            return np.ones(grid.shape)
        return vals
    problems.append(f"{label}: unknown density kind {kind!r}")
    return np.ones(grid.shape)


def _analytic_log_eval(spec, grid, scale):
    """Closed-form ln(density) evaluator for the built-in families, or None."""
    kind = spec.get("kind", "constant")
    if kind == "constant":
        value = float(spec.get("value", 1.0)) * scale
        return lambda points: np.full(np.asarray(points).shape[:-1], np.log(value))
    if kind == "sine":
        amp = float(spec.get("amplitude", 0.0))
        freq = int(spec.get("frequency", 1))
        axis = int(spec.get("axis", 0))
        L = grid.period[axis]

        def eval_sine(points):
            p = np.asarray(points)
            return np.log(scale * (1.0 + amp * np.sin(2.0 * np.pi * freq * p[..., axis] / L)))

        return eval_sine
    if kind == "product":
        amps = spec.get("amplitude", [0.0] * grid.n_dims)
        freqs = spec.get("frequency", [1] * grid.n_dims)
        if np.isscalar(amps):
            amps = [amps] * grid.n_dims
        if np.isscalar(freqs):
            freqs = [freqs] * grid.n_dims

        def eval_product(points):
            p = np.asarray(points)
            out = np.full(p.shape[:-1], np.log(scale))
            for a in range(grid.n_dims):
                out += np.log(
                    1.0
                    + float(amps[a])
                    * np.sin(2.0 * np.pi * int(freqs[a]) * p[..., a] / grid.period[a])
                )
            return out

        return eval_product
    return None  # tabulated densities fall back to cubic interpolation


def build_densities(config):
    """Construct the DensityPair from a validated RunConfig."""
    problems = []
    base_dir = config.density_spec.get("_base_dir", ".")
    rho_spec = config.density_spec.get("rho", {})
    bar_spec = config.density_spec.get("rho_bar", {})
    rho_vals = _density_values(rho_spec, config.grid, base_dir, problems, "density.rho")
    bar_vals = _density_values(bar_spec, config.grid, base_dir, problems, "density.rho_bar")
    if problems:
        raise ValidationError(problems)
    volume = float(np.prod(config.grid.period))
    bar_scale = 1.0
    if rho_spec.get("normalize", False):
        rho_vals = rho_vals / (np.mean(rho_vals) * volume)
    if bar_spec.get("normalize", False):
        bar_scale = 1.0 / (np.mean(bar_vals) * volume)
        bar_vals = bar_vals * bar_scale
    return DensityPair(
        ScalarField(config.grid, rho_vals),
        ScalarField(config.grid, bar_vals),
        log_rho_bar_eval=_analytic_log_eval(bar_spec, config.grid, bar_scale),
    )


def build_initial_state(config, densities):
    """Initial flow state per the [initial] section."""
    from .graph import build_state

    grid = config.grid
    spec = config.initial_spec
    kind = spec.get("kind", "identity")
    amp = float(spec.get("amplitude", 0.0))
    freq = int(spec.get("frequency", 1))
    c = grid.coords()
    if kind == "identity":
        u = ScalarField(grid, np.zeros(grid.shape))
        if config.flow.formulation == "map":
            T = VectorField(grid, c.copy())
            return build_state(config.model, densities, T=T)
        return build_state(config.model, densities, u=u)
    if kind == "potential":
        vals = amp * np.sin(2.0 * np.pi * freq * c[..., 0] / grid.period[0])
        if grid.n_dims == 2:
            vals = vals * np.cos(2.0 * np.pi * freq * c[..., 1] / grid.period[1])
        u = ScalarField(grid, vals)
        if config.flow.formulation == "map":
            from .graph import c_exponential

            return build_state(config.model, densities, T=c_exponential(config.model, u))
        return build_state(config.model, densities, u=u)
    # perturbed_map: exact c-exponential of zero plus a non-gradient displacement
    disp = np.zeros(grid.shape + (grid.n_dims,))
    disp[..., 0] = amp * np.sin(2.0 * np.pi * freq * c[..., 1] / grid.period[1])
    T = VectorField(grid, c + disp)
    return build_state(config.model, densities, T=T, route_check=False)


def parse_config(path):
    """Load and validate a run configuration; collects all validation errors."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ParseError(f"config file {path} does not exist")
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}")

    problems = []

    scenario = raw.get("scenario", "flow")
    if scenario not in SCENARIOS:
        problems.append(f"scenario: unknown scenario {scenario!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        problems.append("seed: must be an integer")
        seed = 0

    gspec = raw.get("grid", {})
    grid = None
    try:
        grid = make_grid(
            int(gspec.get("n_dims", 1)),
            gspec.get("resolution", [64]),
            gspec.get("period"),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"grid: {exc}")

    cspec = raw.get("cost", {})
    model = None
    kind = cspec.get("kind", "torus_squared_distance")
    if kind not in COST_KINDS:
        problems.append(f"cost.kind: unknown cost kind {kind!r}")
    elif grid is not None:
        try:
            model = make_cost(
                kind,
                grid.n_dims,
                period=grid.period,
                epsilon=float(cspec.get("epsilon", 0.0)),
                frequency=cspec.get("frequency"),
                margin=float(cspec.get("margin", 0.1)),
            )
        except (ValueError, TypeError) as exc:
            problems.append(f"cost: {exc}")

    fspec = raw.get("flow", {})
    flow = None
    try:
        flow = FlowConfig(
            formulation=fspec.get("formulation", "potential"),
            dt_policy=fspec.get("dt_policy", "cfl"),
            dt=float(fspec.get("dt", 1e-4)),
            safety=float(fspec.get("safety", 0.5)),
            t_max=float(fspec.get("t_max", 1.0)),
            stop_grad_theta=float(fspec.get("stop_grad_theta", 1e-8)),
            monitor_stride=int(fspec.get("monitor_stride", 10)),
            integrator=fspec.get("integrator", "euler"),
            max_halvings=int(fspec.get("max_halvings", 10)),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"flow: {exc}")

    ispec = raw.get("initial", {"kind": "identity"})
    if ispec.get("kind", "identity") not in INITIAL_KINDS:
        problems.append(f"initial.kind: unknown kind {ispec.get('kind')!r}")
    if (
        ispec.get("kind") == "perturbed_map"
        and grid is not None
        and grid.n_dims != 2
    ):
        problems.append("initial: perturbed_map needs a 2-d grid (non-gradient field)")

    density_spec = dict(raw.get("density", {}))
    density_spec["_base_dir"] = os.path.dirname(os.path.abspath(path))
    for label in ("rho", "rho_bar"):
        sub = density_spec.get(label, {"kind": "constant"})
        dkind = sub.get("kind", "constant")
        if dkind not in DENSITY_KINDS:
            problems.append(f"density.{label}.kind: unknown kind {dkind!r}")

    config = RunConfig(
        scenario=scenario,
        seed=seed,
        grid=grid,
        model=model,
        density_spec=density_spec,
        initial_spec=dict(ispec),
        flow=flow,
        mtw=dict(raw.get("mtw", {})),
        geometry_verify=dict(raw.get("geometry_verify", {})),
        oracle=dict(raw.get("oracle", {})),
        out_dir=raw.get("output", {}).get("dir", "out"),
    )

    # density positivity is checked on the constructed fields
    if grid is not None and not problems:
        try:
            build_densities(config)
        except ValidationError as exc:
            problems.extend(exc.problems)
        except ValueError as exc:
            problems.append(f"density: {exc}")

    if problems:
        raise ValidationError(problems)
    return config
