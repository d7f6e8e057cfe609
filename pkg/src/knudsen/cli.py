"""Experiment driver: flat key=value configs, per-experiment pipelines, CSV artifacts and run manifests.

Config files hold one ``key = value`` per line; ``#`` starts a comment. Keys
are either top-level experiment settings or ``grid.*``, ``kernel.*`` and
``evolve.*`` fields. Lists are comma separated. Norms are written as
``k=3,p=1,q=1`` with several norms separated by ``;``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import tempfile
import time
import traceback
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .collision import KernelConfig
from .evolve import (
    EvolveConfig,
    build_operators,
    default_transient,
    evolve_linear,
    evolve_nonlinear,
    evolve_split_system,
    fit_decay_rate,
    scale_to_norm,
    well_prepared_data,
)
from .grid import GridConfig, NormSpec, build_phase_grid, weighted_norm
from .hydro import (
    HydroState,
    estimate_transport_coeffs,
    first_order_correction,
    hydro_limit_error,
    moments,
    solve_ns,
)
from .linop import LinearOperator, assemble_L, dissipativity_samples, measure_dissipativity, spectral_gap

EXPERIMENTS = (
    "spectrum",
    "linear-decay",
    "nonlinear-decay",
    "split-consistency",
    "hydro-limit",
    "dissipativity-scan",
)

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "spectrum"
    grid: GridConfig = GridConfig()
    kernel: KernelConfig = KernelConfig()
    evolve: EvolveConfig = EvolveConfig()
    sweep: tuple[float, ...] = (1.0, 0.5, 0.25)
    delta: float = 0.25
    norms: tuple[NormSpec, ...] = (NormSpec(k=3.0),)
    output_dir: str = "runs"
    rng_seed: int = 0
    amplitude: float = 0.01  # initial ||h_in|| in the first norm (nonlinear experiments)
    kinetic_fraction: float = 0.3
    record_interval: float = 0.25
    n_random: int = 100
    oversample: int = 4
    rate_tolerance: float = 0.2

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        self.grid.validate()
        self.kernel.validate()
        self.evolve.validate()
        if not self.sweep:
            raise ConfigError("sweep needs at least one epsilon")
        for eps in self.sweep:
            if not 0.0 < eps <= 1.0:
                raise ConfigError(f"epsilon {eps} outside (0, 1]")
        if any(b >= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ConfigError(f"sweep must be strictly descending, got {list(self.sweep)}")
        if not 0.0 < self.delta <= 0.5:
            raise ConfigError(f"delta must lie in (0, 1/2], got {self.delta}")
        for spec in self.norms:
            spec.validate()
        if self.record_interval <= 0 or self.amplitude <= 0 or self.n_random < 0 or self.oversample < 1:
            raise ConfigError("record_interval, amplitude, oversample must be positive and n_random >= 0")

    def as_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self), default=str))


def default_config(experiment: str) -> ExperimentConfig:
    """Desk-scale defaults for each experiment."""
    small = GridConfig(spatial_dim=2, n_x=8, n_v=16, v_max=5.0, torus_period=2 * math.pi)
    wide = GridConfig(spatial_dim=2, n_x=16, n_v=24, v_max=6.0, torus_period=4 * math.pi)
    base = ExperimentConfig(experiment=experiment)
    if experiment == "spectrum":
        return replace(base, grid=GridConfig(n_x=4, n_v=24, v_max=6.0), sweep=(1.0,))
    if experiment == "linear-decay":
        return replace(base, grid=wide, evolve=EvolveConfig(t_end=20.0), sweep=(1.0, 0.5, 0.25))
    if experiment == "nonlinear-decay":
        return replace(
            base, grid=small, evolve=EvolveConfig(t_end=4.0, mode="nonlinear"), sweep=(0.5, 0.25), rate_tolerance=0.25
        )
    if experiment == "split-consistency":
        return replace(base, grid=small, evolve=EvolveConfig(t_end=0.5, mode="split_system"), sweep=(0.5,))
    if experiment == "hydro-limit":
        return replace(
            base,
            grid=small,
            evolve=EvolveConfig(t_end=1.0, mode="nonlinear"),
            sweep=(0.5, 0.25, 0.125),
            amplitude=0.03,
            kinetic_fraction=0.0,
            record_interval=0.0625,
        )
    if experiment == "dissipativity-scan":
        return replace(base, grid=wide, sweep=(1.0, 0.25), norms=(NormSpec(k=4.0),), rate_tolerance=0.1)
    raise ConfigError(f"unknown experiment {experiment!r}")


def _parse_norms(text: str) -> tuple[NormSpec, ...]:
    specs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        kw = {}
        for item in chunk.split(","):
            if "=" not in item:
                raise ValueError(f"norm entry {item!r} is not key=value")
            key, val = (s.strip() for s in item.split("=", 1))
            if key in ("alpha", "beta"):
                kw[key] = int(val)
            elif key == "weight_kind":
                kw[key] = val
            elif key in ("p", "q", "k"):
                kw[key] = math.inf if val == "inf" else float(val)
            else:
                raise ValueError(f"unknown norm key {key!r}")
        specs.append(NormSpec(**kw))
    if not specs:
        raise ValueError("empty norm list")
    return tuple(specs)


def _convert(value: str, kind, key: str):
    kind = str(kind)
    if "tuple[float" in kind:
        return tuple(float(v) for v in value.split(",") if v.strip())
    if "NormSpec" in kind:
        return _parse_norms(value)
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    if kind.startswith("str"):
        return value
    raise ValueError(f"no parser for key {key!r}")


_SECTIONS = {"grid": GridConfig, "kernel": KernelConfig, "evolve": EvolveConfig}


def parse_config_text(text: str, source: str = "<config>", experiment: str | None = None) -> ExperimentConfig:
    """Parse the flat format; every error names the offending line.

    ``experiment`` selects the defaults when the text has no ``experiment`` key.
    """
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {raw[key][1]})")
        raw[key] = (value, lineno)

    value, line = raw.get("experiment", (experiment or "spectrum", 0))
    if value not in EXPERIMENTS:
        raise ConfigError(f"{source}:{line}: unknown experiment {value!r}")
    if experiment is not None and value != experiment:
        raise ConfigError(f"{source}:{line}: config is for {value!r}, not {experiment!r}")
    experiment = value
    cfg = default_config(experiment)
    top = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    updates: dict[str, dict] = {name: {} for name in _SECTIONS}
    flat = {}
    for key, (value, lineno) in raw.items():
        try:
            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise ConfigError(f"unknown section {section!r}")
                types = {f.name: f.type for f in dataclasses.fields(_SECTIONS[section])}
                if name not in types:
                    raise ConfigError(f"unknown key {key!r}")
                updates[section][name] = _convert(value, types[name], key)
            else:
                if key not in top or key in _SECTIONS:
                    raise ConfigError(f"unknown key {key!r}")
                flat[key] = _convert(value, top[key], key)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    for section, upd in updates.items():
        if upd:
            flat[section] = replace(getattr(cfg, section), **upd)
    cfg = replace(cfg, **flat)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path: str | os.PathLike, experiment: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path), experiment)


# ---------------------------------------------------------------- artifacts


@dataclass
class RunManifest:
    config: dict
    code_version: str = __version__
    wall_clock: float = 0.0
    artifacts: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    status: str = "running"
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.status == "complete" and all(self.checks.values())

    def write(self, path: str | os.PathLike) -> None:
        """Atomic write: the manifest either exists complete or not at all."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path: str | os.PathLike) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12e}"
    return str(x)


class _Artifacts:
    def __init__(self, out: Path, manifest: RunManifest):
        self.out = out
        self.manifest = manifest

    def table(self, name: str, header, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["# manifest=manifest.json"])
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        self.manifest.artifacts.append(name)
        return path


def _within(values, tol: float) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(values.size and np.all(values > 0) and (values.max() - values.min()) <= tol * values.max())


def _strictly_decreasing(values) -> bool:
    values = list(values)
    return all(b < a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- experiments


def _stride(dt_bound: float, interval: float) -> int:
    return max(1, int(round(interval / dt_bound)))


def _initial_datum(cfg: ExperimentConfig, grid) -> np.ndarray:
    rng = np.random.default_rng(cfg.rng_seed)
    h = well_prepared_data(grid, rng, kinetic_fraction=cfg.kinetic_fraction)
    return scale_to_norm(h, grid, cfg.norms[0], cfg.amplitude)


def _spectrum(cfg: ExperimentConfig, art: _Artifacts) -> dict[str, bool]:
    grid = build_phase_grid(cfg.grid)
    rep = spectral_gap(assemble_L(cfg.kernel, grid), grid, strict=False)
    ev = np.sort(rep.eigenvalues)[::-1]
    art.table("eigenvalues.csv", ["index", "eigenvalue"], enumerate(ev))
    art.table(
        "spectrum_summary.csv",
        ["kernel_dim", "expected_kernel_dim", "lambda_0", "kernel_basis_error", "max_nonkernel_eigenvalue"],
        [(rep.kernel_dim, grid.d + 2, rep.lambda_0, rep.kernel_basis_error, rep.max_nonkernel_eigenvalue)],
    )
    return {
        "kernel_dim_is_d_plus_2": rep.kernel_dim == grid.d + 2 and len(set(rep.plateau.values())) == 1,
        "nonkernel_eigenvalues_negative": rep.max_nonkernel_eigenvalue < 0,
    }


def _decay_rows(cfg: ExperimentConfig, art: _Artifacts, nonlinear: bool) -> dict[str, bool]:
    grid = build_phase_grid(cfg.grid)
    ops = build_operators(cfg.kernel, grid)
    h_in = _initial_datum(cfg, grid) if nonlinear else well_prepared_data(
        grid, np.random.default_rng(cfg.rng_seed), kinetic_fraction=cfg.kinetic_fraction
    )
    label = cfg.norms[0].label
    rows, fits, drifts, mono = [], [], [], []
    for eps in cfg.sweep:
        dt = cfg.evolve.dt_ctrl * eps**2 / ops.nu.max()
        ecfg = replace(
            cfg.evolve,
            epsilon=eps,
            mode="nonlinear" if nonlinear else "linear",
            record_norms=cfg.norms,
            record_stride=_stride(dt, cfg.record_interval),
        )
        run = evolve_nonlinear if nonlinear else evolve_linear
        traj = run(h_in, ecfg, cfg.kernel, grid, ops)
        traj.write_csv(art.out / f"trajectory_eps{eps:g}.csv")
        art.manifest.artifacts.append(f"trajectory_eps{eps:g}.csv")
        fit = fit_decay_rate(traj.t, traj.norm(label), transient=default_transient(eps))
        post = traj.norm(label)[traj.t >= default_transient(eps)]
        fits.append(fit)
        drifts.append(traj.conservation_drift())
        mono.append(bool(np.all(np.diff(post) < 0)))
        rows.append((eps, fit.rate, fit.amplitude, fit.r2, fit.reliable, drifts[-1], mono[-1]))
    art.table(
        "decay_summary.csv", ["epsilon", "rate", "amplitude", "r2", "reliable", "conservation_drift", "monotone"], rows
    )
    checks = {
        "rates_agree": _within([f.rate for f in fits], cfg.rate_tolerance),
        "fits_r2_above_0.95": all(f.r2 > 0.95 for f in fits),
    }
    if nonlinear:
        checks["conservation_drift_below_1e-4"] = max(drifts) < 1e-4
        checks["monotone_after_transient"] = all(mono)
    return checks


def _split(cfg: ExperimentConfig, art: _Artifacts) -> dict[str, bool]:
    grid = build_phase_grid(cfg.grid)
    ops = build_operators(cfg.kernel, grid, cfg.delta)
    h_in = _initial_datum(cfg, grid)
    spec = cfg.norms[0]
    rows, ok_small, ok_order = [], True, True
    for eps in cfg.sweep:
        dt0 = cfg.evolve.dt if cfg.evolve.dt > 0 else eps**2 / 16.0
        errs = []
        for dt in (dt0, dt0 / 2):
            ecfg = replace(
                cfg.evolve, epsilon=eps, delta=cfg.delta, dt=dt, record_norms=cfg.norms, snapshot_stride=10**9
            )
            direct = evolve_nonlinear(h_in, ecfg, cfg.kernel, grid, ops).snapshots[-1]
            split = evolve_split_system(h_in, ecfg, cfg.kernel, grid, ops)
            err = weighted_norm(split.final - direct, spec, grid) / weighted_norm(direct, spec, grid)
            errs.append(err)
            rows.append((eps, dt, err, weighted_norm(split.final_h0, spec, grid), weighted_norm(split.final_h1, spec, grid)))
        ok_small &= errs[0] < 1e-3
        ok_order &= 3.0 <= errs[0] / errs[1] <= 5.0
    art.table("split_consistency.csv", ["epsilon", "dt", "relative_deviation", "norm_h0", "norm_h1"], rows)
    return {"split_deviation_below_1e-3": bool(ok_small), "second_order_in_dt": bool(ok_order)}


def _dissipativity(cfg: ExperimentConfig, art: _Artifacts) -> dict[str, bool]:
    grid = build_phase_grid(cfg.grid)
    ops = build_operators(cfg.kernel, grid, cfg.delta)
    A = LinearOperator(ops.A, "A_delta", cfg.delta)
    B2 = LinearOperator(ops.B2, "B2_delta", cfg.delta)
    fields = dissipativity_samples(grid, np.random.default_rng(cfg.rng_seed), cfg.n_random)
    rows, results = [], []
    for spec in cfg.norms:
        for eps in cfg.sweep:
            res = measure_dissipativity(
                A, B2, ops.nu, grid, spec.k, spec.q, cfg.delta, eps, p=spec.p, fields=fields,
                gamma=cfg.kernel.gamma, check=False, oversample=cfg.oversample,
            )
            results.append((spec, eps, res))
            rows.extend((spec.k, eps, i, r, r * eps**2) for i, r in enumerate(res.rates))
    art.table("dissipativity.csv", ["k", "epsilon", "sample", "rate", "rate_times_eps2"], rows)
    checks = {"all_rates_positive": all(r.all_positive for _, _, r in results)}
    if len(cfg.sweep) >= 2:
        hi, lo = cfg.sweep[0], cfg.sweep[-1]
        for spec in cfg.norms:
            r_hi = next(r for s, e, r in results if s == spec and e == hi)
            r_lo = next(r for s, e, r in results if s == spec and e == lo)
            ratio = r_lo.rates / r_hi.rates
            target = (hi / lo) ** 2
            checks[f"rate_ratio_k{spec.k:g}"] = bool(np.all(np.abs(ratio / target - 1.0) <= cfg.rate_tolerance))
    return checks


def _hydro_epsilon(cfg: ExperimentConfig, eps: float, grid, ops, coeffs, h_hydro) -> tuple:
    """Kinetic run against Navier-Stokes for one epsilon; returns (error table, fitted rate)."""
    h_in = h_hydro + eps * first_order_correction(h_hydro, ops.L, grid)
    dt = eps**2 / 4.0
    ecfg = replace(
        cfg.evolve,
        epsilon=eps,
        mode="nonlinear",
        dt=dt,
        record_norms=cfg.norms,
        snapshot_stride=_stride(dt, cfg.record_interval),
        record_stride=_stride(dt, cfg.record_interval),
        smallness=max(cfg.evolve.smallness, 2.0 * cfg.amplitude),
    )
    traj = evolve_nonlinear(h_in, ecfg, cfg.kernel, grid, ops)
    m0 = moments(h_hydro, grid)
    ns = solve_ns(
        HydroState(m0.rho, m0.u, m0.theta, coeffs.nu_visc, coeffs.kappa),
        ecfg.t_end,
        grid,
        times=traj.snapshot_times,
    )
    table = hydro_limit_error(traj.snapshot_times, traj.snapshots, ns, grid, eps)
    # the rate is a diagnostic here; keep at least half the run for the fit
    transient = min(default_transient(eps), 0.5 * ecfg.t_end)
    fit = fit_decay_rate(traj.t, traj.norm(), transient=transient, min_samples=3)
    return table, fit.rate


def knudsen_sweep(cfg: ExperimentConfig, art: _Artifacts | None = None) -> list[dict]:
    """Per-epsilon decay rate, hydrodynamic errors and Boussinesq residual, with monotonicity flags.

    A failing epsilon is recorded in its row and the sweep continues.
    """
    if any(b >= a for a, b in zip(cfg.sweep, cfg.sweep[1:])):
        raise ConfigError(f"sweep must be strictly descending, got {list(cfg.sweep)}")
    grid = build_phase_grid(cfg.grid)
    ops = build_operators(cfg.kernel, grid)
    coeffs = estimate_transport_coeffs(assemble_L(cfg.kernel, grid), grid)
    h_hydro = _initial_datum(cfg, grid)
    rows, tables = [], []
    for eps in cfg.sweep:
        try:
            table, rate = _hydro_epsilon(cfg, eps, grid, ops, coeffs, h_hydro)
            mx = table.max_errors()
            tables.append(table)
            rows.append({"epsilon": eps, "decay_rate": rate, **{f"max_{k}": v for k, v in mx.items()}, "error": ""})
        except Exception as exc:  # a failing epsilon must not stop the sweep
            rows.append({"epsilon": eps, "error": f"{type(exc).__name__}: {exc}"})
    keys = ("max_err_u", "max_err_theta", "max_boussinesq_residual")
    ok = [r for r in rows if not r["error"]]
    for key in keys:
        flag = _strictly_decreasing(r[key] for r in ok) if len(rows) >= 2 and len(ok) == len(rows) else None
        for r in rows:
            r[f"{key}_decreasing"] = "" if flag is None else flag
    if art is not None:
        header = ["epsilon", "decay_rate", "max_err_rho", "max_err_u", "max_err_theta", "max_boussinesq_residual"]
        header += [f"{k}_decreasing" for k in keys] + ["error"]
        art.table("knudsen_sweep.csv", header, ([r.get(h, "") for h in header] for r in rows))
        art.table(
            "hydro_errors.csv",
            ["epsilon", "t", "err_rho", "err_u", "err_theta", "boussinesq_residual"],
            (row for t in tables for row in t.rows()),
        )
        art.table(
            "transport_coefficients.csv",
            ["nu_visc", "kappa", "solve_residual", "factorization_gap"],
            [(coeffs.nu_visc, coeffs.kappa, coeffs.residual, coeffs.factorization_gap)],
        )
    return rows


def _hydro(cfg: ExperimentConfig, art: _Artifacts) -> dict[str, bool]:
    rows = knudsen_sweep(cfg, art)
    checks = {"all_epsilon_completed": all(not r["error"] for r in rows)}
    if len(rows) >= 2:
        for key in ("max_err_u", "max_err_theta", "max_boussinesq_residual"):
            checks[f"{key}_strictly_decreasing"] = rows[0].get(f"{key}_decreasing") is True
    return checks


_RUNNERS = {
    "spectrum": _spectrum,
    "linear-decay": lambda c, a: _decay_rows(c, a, nonlinear=False),
    "nonlinear-decay": lambda c, a: _decay_rows(c, a, nonlinear=True),
    "split-consistency": _split,
    "hydro-limit": _hydro,
    "dissipativity-scan": _dissipativity,
}


def run(config: ExperimentConfig | str | os.PathLike, out_dir: str | os.PathLike | None = None) -> RunManifest:
    """Execute the configured experiment, writing CSVs and manifest.json into the output directory."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    cfg.validate()
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.as_dict())
    art = _Artifacts(out, manifest)
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            manifest.checks = {k: bool(v) for k, v in _RUNNERS[cfg.experiment](cfg, art).items()}
        manifest.status = "complete"
    except Exception as exc:
        manifest.status = "failed"
        manifest.failure = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    manifest.wall_clock = time.perf_counter() - start
    manifest.write(out / "manifest.json")
    return manifest


# ---------------------------------------------------------------- reporting


def emit_report(manifests: list[RunManifest], out_dir: str | os.PathLike) -> int:
    """Write report.md and checks.csv; return the exit code for the bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# Run report", ""]
    rows, failing, errored = [], [], False
    for i, m in enumerate(manifests):
        name = m.config.get("experiment", f"run{i}")
        lines.append(f"## {name} ({m.status}, {m.wall_clock:.1f} s)")
        if m.failure:
            errored = True
            lines.append(f"- run failed: {m.failure}")
        if not m.checks:
            lines.append("- no checks run")
        for check, ok in m.checks.items():
            lines.append(f"- {'PASS' if ok else 'FAIL'} {check}")
            rows.append((name, check, "pass" if ok else "fail"))
            if not ok:
                failing.append(f"{name}:{check}")
        lines.append("")
    if not rows:
        lines.append("no checks run")
    if failing:
        lines.append("Failing checks: " + ", ".join(failing))
    (out / "report.md").write_text("\n".join(lines) + "\n")
    with open(out / "checks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "check", "result"])
        w.writerows(rows)
    if errored:
        return EXIT_ERROR
    return EXIT_FAIL if failing else EXIT_PASS


# ---------------------------------------------------------------- command line


def _set_threads(n: int | None) -> None:
    if not n:
        return
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knudsen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat key=value config file (defaults are used when omitted)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed for random initial data and sample fields")
        p.add_argument("--epsilon-override", help="comma separated epsilon values replacing the sweep")
        p.add_argument("--threads", type=int, help="number of threads for compiled loops")
    rp = sub.add_parser("report", help="summarize manifests into report.md")
    rp.add_argument("manifests", nargs="+")
    rp.add_argument("--out", default=".")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            manifests = [RunManifest.read(p) for p in args.manifests]
            code = emit_report(manifests, args.out)
            print((Path(args.out) / "report.md").read_text(), end="")
            return code
        _set_threads(args.threads)
        cfg = load_config(args.config, args.command) if args.config else default_config(args.command)
        if args.seed is not None:
            cfg = replace(cfg, rng_seed=args.seed)
        if args.epsilon_override:
            cfg = replace(cfg, sweep=tuple(float(x) for x in args.epsilon_override.split(",")))
        cfg.validate()
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    manifest = run(cfg, args.out or cfg.output_dir)
    out = Path(args.out or cfg.output_dir)
    code = emit_report([manifest], out)
    print((out / "report.md").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
