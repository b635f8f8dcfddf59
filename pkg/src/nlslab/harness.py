"""Experiment harness: flat dotted-key configs, reproducible runs, sweeps,
and CSV emission.

Config grammar (one assignment per line):

    key.subkey = value        # comment
    # full-line comment

Values are parsed as int, float, bool (true/false), comma-separated lists
of those, or bare strings.  Keys are dotted paths; list-like structures use
integer path segments (ensemble.solitons.0.omega = 1.0).  The only
environment override honored is OUTPUT_DIR.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import boundstate as bs
from . import evolution as ev
from . import grid as gridmod
from . import linearization as lin
from . import multisoliton as ms
from . import profile as prof
from .grid import GridSpec
from .nonlinearity import CubicQuintic, PurePower

EXPERIMENTS = ("boundstate", "spectrum", "profile", "backward", "instability",
               "glued", "fundsol-check")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_EXPERIMENT = 2
EXIT_CHECK_FAILED = 3


class ConfigError(ValueError):
    pass


def _parse_scalar(tok: str):
    t = tok.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def parse_config(text: str) -> dict:
    """Parse the flat dotted-key grammar; errors carry line/column positions."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            col = len(raw) - len(raw.lstrip()) + 1
            raise ConfigError(f"line {lineno}, col {col}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if not val:
            raise ConfigError(f"line {lineno}: empty value for key {key!r}")
        if any(not seg for seg in key.split(".")):
            raise ConfigError(f"line {lineno}: malformed dotted key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if "," in val:
            out[key] = [_parse_scalar(v) for v in val.split(",")]
        else:
            out[key] = _parse_scalar(val)
    return out


def _fmt_value(v) -> str:
    if isinstance(v, list):
        return ", ".join(_fmt_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(values: dict) -> str:
    return "".join(f"{k} = {_fmt_value(values[k])}\n" for k in sorted(values))


def config_hash(values: dict) -> str:
    return hashlib.sha256(serialize_config(values).encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    experiment: str
    values: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = parse_config(text)
        exp = values.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(
                f"key 'experiment' must be one of {EXPERIMENTS}, got {exp!r}")
        cfg = cls(experiment=exp, values=values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def validate(self):
        n = self.get("run.n", 512)
        if not (isinstance(n, int) and n >= 8 and (n & (n - 1)) == 0):
            raise ConfigError(f"run.n must be a power of two >= 8, got {n}")
        if self.get("run.dt", 1e-3) <= 0:
            raise ConfigError("run.dt must be positive")
        if self.get("run.box", 20.0) <= 0:
            raise ConfigError("run.box must be positive")
        if self.get("run.dim", 1) not in (1, 2, 3):
            raise ConfigError("run.dim must be 1, 2 or 3")
        if not isinstance(self.get("seed", 0), int):
            raise ConfigError("seed must be an integer")
        for key, val in self.values.items():
            if key.endswith("_path") and not os.path.exists(str(val)):
                raise ConfigError(f"referenced file does not exist: {key} = {val}")

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r}")
        return self.values[key]

    def output_dir(self) -> str:
        return os.environ.get("OUTPUT_DIR") or str(self.get("output_dir", "out"))

    def hash(self) -> str:
        return config_hash(self.values)

    def with_override(self, key: str, value) -> "RunConfig":
        vals = dict(self.values)
        vals[key] = value
        cfg = RunConfig(experiment=self.experiment, values=vals)
        cfg.validate()
        return cfg


def build_nonlinearity(cfg: RunConfig):
    kind = cfg.get("nonlinearity.kind", "power")
    dim = cfg.get("run.dim", 1)
    if kind == "power":
        return PurePower(p=float(cfg.get("nonlinearity.p", 3.0)), dim=dim)
    if kind in ("cubic-quintic", "cubicquintic"):
        return CubicQuintic(c3=float(cfg.get("nonlinearity.c3", 1.0)),
                            c5=float(cfg.get("nonlinearity.c5", 0.0)), dim=dim)
    raise ConfigError(f"unknown nonlinearity.kind {kind!r}")


def build_grid(cfg: RunConfig) -> GridSpec:
    return GridSpec(dim=cfg.get("run.dim", 1), n=cfg.get("run.n", 512),
                    ell=float(cfg.get("run.box", 20.0)))


# ---------------------------------------------------------------------------
# CSV helpers (deterministic formatting, no timestamps)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def write_series_csv(path, series: dict):
    keys = ["t"] + sorted(k for k in series if k != "t")
    rows = zip(*[np.asarray(series[k], dtype=float) for k in keys])
    _write_csv(path, keys, [[float(v) for v in row] for row in rows])


def write_summary_csv(path, fields: dict):
    _write_csv(path, ["key", "value"],
               [[k, fields[k]] for k in sorted(fields)])


# ---------------------------------------------------------------------------
# experiments


def _ensemble_from_config(cfg: RunConfig, nl, grid):
    sols = []
    i = 0
    while f"ensemble.solitons.{i}.omega" in cfg.values:
        om = float(cfg.require(f"ensemble.solitons.{i}.omega"))
        nodes = int(cfg.get(f"ensemble.solitons.{i}.nodes", 0))
        v = cfg.get(f"ensemble.solitons.{i}.v", 0.0)
        x0 = cfg.get(f"ensemble.solitons.{i}.x0", 0.0)
        gam = float(cfg.get(f"ensemble.solitons.{i}.gamma", 0.0))
        v = tuple(np.atleast_1d(np.asarray(v, dtype=float)))
        x0 = tuple(np.atleast_1d(np.asarray(x0, dtype=float)))
        state = bs.compute_bound_state(nl, om, nodes, grid)
        sols.append(ms.SolitonParams(state=state, gamma=gam,
                                     v=ms.quantize_speed(v, grid.ell), x0=x0))
        i += 1
    if not sols:
        raise ConfigError("no ensemble.solitons.* entries in config")
    return sols


def _exp_boundstate(cfg: RunConfig, outdir: str) -> dict:
    nl = build_nonlinearity(cfg)
    grid = build_grid(cfg)
    omega = float(cfg.get("boundstate.omega", 1.0))
    nodes = int(cfg.get("boundstate.nodes", 0))
    state = bs.compute_bound_state(nl, omega, nodes, grid)
    snap = os.path.join(outdir, "boundstate.nlsf")
    side = os.path.join(outdir, "boundstate.json")
    bs.save_bound_state(state, snap, side)
    return {"summary": {"omega": omega, "nodes": state.node_count,
                        "residual_linf": state.residual_linf,
                        "action": state.action,
                        "amplitude": float(np.max(np.abs(state.profile.values))),
                        "boundary_ratio": state.boundary_ratio()},
            "artifacts": [snap, side]}


def _exp_spectrum(cfg: RunConfig, outdir: str) -> dict:
    nl = build_nonlinearity(cfg)
    grid = build_grid(cfg)
    omega = float(cfg.get("boundstate.omega", 1.0))
    nodes = int(cfg.get("boundstate.nodes", 0))
    state = bs.compute_bound_state(nl, omega, nodes, grid)
    op = lin.assemble(nl, state)
    spec = lin.spectrum(op, count=int(cfg.get("spectrum.count", 8)))
    rows = [[float(m.real), float(m.imag), spec.residual if i == 0 else float("nan")]
            for i, m in enumerate(spec.all_eigenvalues)]
    eig_csv = os.path.join(outdir, "eigenvalues.csv")
    _write_csv(eig_csv, ["re", "im", "residual"], rows)
    zp = os.path.join(outdir, "Z_plus.nlsf")
    zm = os.path.join(outdir, "Z_minus.nlsf")
    gridmod.write_snapshot(spec.Z[0], zp)
    gridmod.write_snapshot(spec.Z[1], zm)
    return {"summary": {"rho": spec.rho, "theta": spec.theta,
                        "residual": spec.residual,
                        "quadruple_defect": lin.quadruple_symmetry_defect(
                            spec.all_eigenvalues)},
            "artifacts": [eig_csv, zp, zm]}


def _profile_pipeline(cfg: RunConfig):
    nl = build_nonlinearity(cfg)
    grid = build_grid(cfg)
    omega = float(cfg.get("boundstate.omega", 1.0))
    state = bs.compute_bound_state(nl, omega, int(cfg.get("boundstate.nodes", 0)), grid)
    op = lin.assemble(nl, state)
    spec = lin.spectrum(op, count=4)
    N0 = int(cfg.get("profile.N0", 2))
    a = float(cfg.get("profile.a", 0.1))
    profile = prof.build_profile(nl, state, op, spec, N0, a)
    return nl, grid, state, op, spec, profile


def _exp_profile(cfg: RunConfig, outdir: str) -> dict:
    nl, grid, state, op, spec, profile = _profile_pipeline(cfg)
    rho = spec.rho
    ts = np.linspace(2.0 / rho, 5.0 / rho, 25)
    errs = [gridmod.norm_l2(prof.residual_err(profile, state, nl, t)) for t in ts]
    rate, _, r2 = lin.fit_log_slope(ts, np.asarray(errs))
    devs = [prof.deviation_from_linear(profile, spec, t) for t in ts]
    dev_rate, _, _ = lin.fit_log_slope(ts, np.asarray(devs))
    pdir = os.path.join(outdir, "profile")
    prof.save_profile(profile, pdir)
    series = {"t": ts, "err_l2": np.asarray(errs), "dev_linear": np.asarray(devs)}
    return {"summary": {"rho": rho, "theta": spec.theta, "N0": profile.order,
                        "a": profile.a, "err_rate": -rate, "err_rate_r2": r2,
                        "err_rate_over_rho": -rate / rho,
                        "dev_rate": -dev_rate,
                        "max_level_residual": max(profile.level_residuals.values())},
            "series": series, "artifacts": [pdir]}


def _exp_backward(cfg: RunConfig, outdir: str) -> dict:
    nl = build_nonlinearity(cfg)
    grid = build_grid(cfg)
    sols = _ensemble_from_config(cfg, nl, grid)
    target = cfg.get("ensemble.v_star_target")
    if target is not None:
        ens0 = ms.EnsembleConfig(tuple(sols))
        scale = float(target) / ens0.v_star
        sols = [ms.SolitonParams(state=p.state, gamma=p.gamma,
                                 v=ms.quantize_speed(np.asarray(p.v) * scale, grid.ell),
                                 x0=p.x0) for p in sols]
    ensemble = ms.EnsembleConfig(tuple(sols))
    T0 = float(cfg.get("ensemble.T0", 1.0))
    Tn = float(cfg.get("ensemble.Tn", 11.0))
    dt = float(cfg.get("run.dt", 1e-3))
    result = ms.backward_construct(nl, ensemble, grid, dt, Tn, T0,
                                   sample_every=int(cfg.get("run.sample_every", 50)))
    series = result["series"]
    rate, _, r2 = lin.fit_log_slope(series["t"], series["err_h1"])
    bound_rate = ensemble.decay_exponent()
    summary = {"v_star": ensemble.v_star, "omega_star": ensemble.omega_star,
               "alpha": ensemble.alpha, "bound_rate": bound_rate,
               "fitted_rate": rate, "fit_r2": r2,
               "weighted_sup": ms.weighted_error_sup(series, bound_rate),
               "max_err_h1": float(np.max(series["err_h1"]))}
    path = os.path.join(outdir, "series.csv")
    write_series_csv(path, series)
    return {"summary": summary, "series": series, "artifacts": [path]}


def _exp_instability(cfg: RunConfig, outdir: str) -> dict:
    nl, grid, state, op, spec, profile = _profile_pipeline(cfg)
    dt = float(cfg.get("run.dt", 2e-4))
    S = float(cfg.get("instability.S", 6.0))
    T0 = float(cfg.get("instability.T0", 0.5))
    floor = float(cfg.get("instability.floor", 0.0))
    result = ms.instability_run(nl, state, spec, profile, dt, S, T0=T0,
                                sample_every=int(cfg.get("run.sample_every", 20)),
                                floor=floor)
    path = os.path.join(outdir, "series.csv")
    write_series_csv(path, result["series"])
    fit = result["fit"] or {"rate": float("nan"), "r2": float("nan")}
    return {"summary": {"rho": spec.rho, "a": profile.a,
                        "fitted_rate": fit["rate"], "fit_r2": fit["r2"],
                        "S": result["S"],
                        "max_pert": float(np.max(result["series"]["pert_h1"]))},
            "series": result["series"], "artifacts": [path]}


def _exp_glued(cfg: RunConfig, outdir: str) -> dict:
    nl, grid, state, op, spec, profile = _profile_pipeline(cfg)
    sols = [ms.SolitonParams(state=state)] + _ensemble_from_config(cfg, nl, grid)
    ensemble = ms.EnsembleConfig(tuple(sols))
    dt = float(cfg.get("run.dt", 2e-4))
    S = float(cfg.get("instability.S", 6.0))
    result = ms.glued_instability_run(nl, ensemble, state, spec, profile, grid,
                                      dt, S, T0=float(cfg.get("instability.T0", 0.5)),
                                      sample_every=int(cfg.get("run.sample_every", 40)),
                                      floor=float(cfg.get("instability.floor", 0.0)))
    path = os.path.join(outdir, "series.csv")
    write_series_csv(path, result["series"])
    fit = result["fit"] or {"rate": float("nan"), "r2": float("nan")}
    return {"summary": {"rho": spec.rho, "fitted_rate": fit["rate"],
                        "max_interaction": float(np.max(result["series"]["interaction"]))},
            "series": result["series"], "artifacts": [path]}


def _exp_fundsol(cfg: RunConfig, outdir: str) -> dict:
    seed = int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    rr = np.linspace(0.5, 5.0, 40)
    for i in range(10):
        mu = complex(rng.normal(), rng.normal())
        if abs(mu.imag) < 1e-3:
            mu = complex(mu.real, 0.3 + abs(mu.imag))
        for d in (1, 2, 3):
            fs_d = lin.FundamentalSolution(d, mu)
            fs_d2 = lin.FundamentalSolution(d + 2, mu)
            h = 1e-5
            dg = (fs_d(rr + h) - fs_d(rr - h)) / (2 * h)
            rec = -dg / (2.0 * np.pi * rr)
            resid = float(np.max(np.abs(rec - fs_d2(rr))))
            worst = max(worst, resid)
            rows.append([mu.real, mu.imag, d, resid])
    path = os.path.join(outdir, "recurrence.csv")
    _write_csv(path, ["mu_re", "mu_im", "dim", "residual"], rows)
    return {"summary": {"worst_recurrence_residual": worst},
            "artifacts": [path]}


_DISPATCH = {
    "boundstate": _exp_boundstate,
    "spectrum": _exp_spectrum,
    "profile": _exp_profile,
    "backward": _exp_backward,
    "instability": _exp_instability,
    "glued": _exp_glued,
    "fundsol-check": _exp_fundsol,
}


def run_config(cfg: RunConfig, outdir: str | None = None) -> dict:
    outdir = outdir or cfg.output_dir()
    os.makedirs(outdir, exist_ok=True)
    result = _DISPATCH[cfg.experiment](cfg, outdir)
    summary = dict(result.get("summary", {}))
    summary["config_hash"] = cfg.hash()
    summary["experiment"] = cfg.experiment
    write_summary_csv(os.path.join(outdir, "summary.csv"), summary)
    with open(os.path.join(outdir, "config.cfg"), "w") as fh:
        fh.write(serialize_config(cfg.values))
    result["summary"] = summary
    result["outdir"] = outdir
    return result


def run(config_path: str) -> int:
    try:
        cfg = RunConfig.from_file(config_path)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG
    try:
        result = run_config(cfg)
    except Exception as exc:  # noqa: BLE001 - experiment failures map to exit 2
        outdir = cfg.output_dir()
        os.makedirs(outdir, exist_ok=True)
        write_summary_csv(os.path.join(outdir, "summary.csv"),
                          {"experiment": cfg.experiment, "config_hash": cfg.hash(),
                           "error": str(exc)})
        print(f"experiment error: {exc}")
        return EXIT_EXPERIMENT
    for k in sorted(result["summary"]):
        print(f"{k} = {result['summary'][k]}")
    return EXIT_OK


def _sweep_job(args):
    text, axis, value, outdir = args
    cfg = RunConfig.from_text(text).with_override(axis, value)
    try:
        result = run_config(cfg, outdir=outdir)
        return value, result["summary"], None
    except Exception as exc:  # noqa: BLE001
        return value, None, str(exc)


def sweep(config_path: str, axis: str, values: list, workers: int = 1) -> int:
    try:
        base = RunConfig.from_file(config_path)
        text = serialize_config(base.values)
        for v in values:
            base.with_override(axis, v)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG
    outroot = base.output_dir()
    os.makedirs(outroot, exist_ok=True)
    jobs = [(text, axis, v, os.path.join(outroot, f"{axis.replace('.', '_')}_{i}"))
            for i, v in enumerate(values)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    keys = set()
    for _, summ, _ in results:
        if summ:
            keys |= set(summ)
    keys = sorted(keys - {"experiment", "config_hash"})
    rows = []
    failures = 0
    for value, summ, err in results:
        if err is not None:
            failures += 1
            rows.append([value] + ["error"] * len(keys))
        else:
            rows.append([value] + [summ.get(k, "") for k in keys])
    path = os.path.join(outroot, "sweep_summary.csv")
    _write_csv(path, [axis] + keys, rows)
    print(f"wrote {path} ({len(values)} jobs, {failures} failed)")
    return EXIT_OK if failures == 0 else EXIT_EXPERIMENT


# ---------------------------------------------------------------------------
# built-in property battery (`nlslab check`)


def _check_battery():
    rng = np.random.default_rng(12345)
    checks = []

    g = GridSpec(1, 256, 10.0)
    f = gridmod.from_function(g, lambda x: np.sin(np.pi * x / g.ell))
    lap = gridmod.laplacian(f)
    exact = -((np.pi / g.ell) ** 2) * f.values
    checks.append(("laplacian of grid sine", float(np.max(np.abs(lap.values - exact))) < 1e-10))

    vals = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    fr = gridmod.Field(g, vals)
    phys = gridmod.norm_l2(fr) ** 2
    spec_norm = float(np.sum(np.abs(np.fft.fftn(fr.values)) ** 2)) * g.dx / g.n
    checks.append(("Parseval", abs(phys - spec_norm) <= 1e-10 * phys))

    nl = PurePower(p=3.0, dim=1)
    gg = GridSpec(1, 512, 20.0)
    state = bs.compute_bound_state(nl, 1.0, 0, gg)
    x = gg.axis_coords()
    exact_prof = np.sqrt(2.0) / np.cosh(x)
    checks.append(("cubic ground state vs closed form",
                   float(np.max(np.abs(state.profile.values.real - exact_prof))) < 1e-6))
    checks.append(("stationary residual", state.residual_linf < 1e-8))

    fs1 = lin.FundamentalSolution(1, -1.0 + 0j)
    fs3 = lin.FundamentalSolution(3, -1.0 + 0j)
    r = np.linspace(0.5, 4.0, 17)
    ok1 = float(np.max(np.abs(fs1(r) - 0.5 * np.exp(-r)))) < 1e-10
    ok3 = float(np.max(np.abs(fs3(r) - np.exp(-r) / (4 * np.pi * r)))) < 1e-10
    checks.append(("Helmholtz kernels d=1,3 closed forms", ok1 and ok3))

    vels = [rng.normal(size=3) for _ in range(4)]
    basis = ms.select_direction(vels, alpha=ms.direction_alpha(3, 4))
    pairs = ms._pair_directions(vels)
    got = float(np.min(np.abs(pairs @ basis[0])))
    checks.append(("direction selection meets bound", got >= ms.direction_alpha(3, 4)))

    intg = ev.Integrator(dt=1e-3)
    u0 = gridmod.from_function(gg, lambda x: np.sqrt(2.0) / np.cosh(x))
    u1, _ = ev.evolve(intg, nl, u0, 0.5)
    back = ev.Integrator(dt=1e-3, direction=-1)
    u2, _ = ev.evolve(back, nl, u1, 0.0)
    checks.append(("forward-backward round trip",
                   gridmod.norm_l2(gridmod.Field(gg, u2.values - u0.values)) < 1e-9))
    _, M0, _ = ev.conserved(nl, u0)
    _, M1, _ = ev.conserved(nl, u1)
    checks.append(("mass conservation", abs(M1 - M0) < 1e-10 * M0))
    return checks


def check() -> int:
    checks = _check_battery()
    failed = 0
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} of {len(checks)} checks failed")
        return EXIT_CHECK_FAILED
    print(f"all {len(checks)} checks passed")
    return EXIT_OK
