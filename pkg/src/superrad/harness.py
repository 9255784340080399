"""Ensemble execution, experiments and file output.

Every trajectory is a pure function of ``(config, index)``, so an ensemble
is a map over indices.  Workers only integrate; records come back in index
order and all reductions and writes happen in the calling process, which
makes outputs byte-identical for any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bounds, dtwa, exact, qsdmf
from . import observables as obs
from .model import CavityCount, DisorderKind, DisorderRealization, SystemConfig, sample_disorder

__version__ = "0.1.0"

FAILURE_LIMIT = 0.01
WORKERS_ENV = "SUPERRAD_WORKERS"
ENGINE_ALIASES = {
    "dtwa-elim": "dtwa-eliminated", "dtwa-eliminated": "dtwa-eliminated", "dtwa": "dtwa-eliminated",
    "dtwa-full": "dtwa-full", "qsdmf": "qsdmf", "qj": "qj", "quantum-jump": "qj",
}
EXPERIMENTS = ("decay", "sweep", "g2", "bounds", "ordering", "nonmarkov", "benchmark")


class ConfigError(ValueError):
    """Bad configuration or command line; exit status 2."""


class NumericalFailure(RuntimeError):
    """Too many trajectories failed; exit status 3."""


def canonical_engine(name: str) -> str:
    try:
        return ENGINE_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown engine {name!r}; choose from {sorted(set(ENGINE_ALIASES))}") from None


def worker_count(requested: int | None = None) -> int:
    """Worker processes: the environment override wins, then the request, then the CPU count."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    elif requested is not None:
        n = int(requested)
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("worker count must be at least 1")
    return n


# ------------------------------------------------------------- ensembles

def run_one(engine: str, config: SystemConfig, index: int, realization: DisorderRealization | None = None,
            snapshot_times=None, with_g2: bool = True):
    """Integrate trajectory ``index`` with the named engine."""
    engine = canonical_engine(engine)
    real = realization if realization is not None else sample_disorder(config, index)
    if engine == "dtwa-eliminated":
        return dtwa.run_trajectory(config, real, index, "eliminated", snapshot_times, with_g2)
    if engine == "dtwa-full":
        return dtwa.run_trajectory(config, real, index, "full", snapshot_times, with_g2)
    if engine == "qsdmf":
        return qsdmf.run_trajectory(config, real, index, snapshot_times, with_g2)
    return exact.quantum_jump_run(config, real, index)


def _task(args):
    return run_one(*args)


@dataclass
class EnsembleRun:
    engine: str
    config: SystemConfig
    records: list
    n_failed: int
    seconds: float

    @property
    def good(self) -> list:
        return [r for r in self.records if not r.failed]


def run_ensemble(config: SystemConfig, engine: str, n_trajectories: int | None = None,
                 realization: DisorderRealization | None = None, snapshot_times=None,
                 with_g2: bool = True, workers: int | None = None, first_index: int = 0) -> EnsembleRun:
    """Run trajectories ``first_index ...`` and return their records in index order.

    Raises NumericalFailure when more than 1% of the trajectories failed.
    """
    engine = canonical_engine(engine)
    m = config.n_trajectories if n_trajectories is None else int(n_trajectories)
    tasks = [(engine, config, first_index + i, realization, snapshot_times, with_g2) for i in range(m)]
    n_workers = min(worker_count(workers), max(m, 1))
    start = time.perf_counter()
    if n_workers == 1:
        records = [_task(t) for t in tasks]
    else:
        chunk = max(1, m // (8 * n_workers))
        with ProcessPoolExecutor(n_workers) as pool:
            records = list(pool.map(_task, tasks, chunksize=chunk))
    seconds = time.perf_counter() - start
    n_failed = sum(r.failed for r in records)
    if n_failed > FAILURE_LIMIT * m:
        first = next(r for r in records if r.failed)
        raise NumericalFailure(f"{n_failed} of {m} {engine} trajectories failed "
                               f"(first: index {first.index}, {first.message})")
    return EnsembleRun(engine, config, records, n_failed, seconds)


def snapshot_window(t_star: float, count: int = 9, width: float = 0.2) -> np.ndarray:
    """Snapshot times spanning t★(1 ± width)."""
    return np.linspace((1 - width) * t_star, (1 + width) * t_star, count)


def pilot_burst_time(config: SystemConfig, engine: str, fraction: float = 0.1,
                     realization: DisorderRealization | None = None, workers: int | None = None) -> float:
    """Ensemble t★ from the first ``fraction`` of the trajectories."""
    m = max(2, int(round(fraction * config.n_trajectories)))
    run = run_ensemble(config, engine, m, realization, with_g2=False, workers=workers)
    r, _ = obs.decay_rate_estimate(run.good)
    return obs.find_peak(r, config.grid).t_star


def scaled_burst_time(t_star: float, n_atoms: int, gamma: float = 1.0) -> float:
    """t★γN/ln N (NaN for a single atom)."""
    return t_star * gamma * n_atoms / math.log(n_atoms) if n_atoms > 1 else float("nan")


def peak_standard_error(rates: np.ndarray, grid, n_boot: int = 200, seed: int = 0) -> tuple[float, float]:
    """Bootstrap standard errors of (R★, t★) over trajectories."""
    rng = np.random.default_rng(seed)
    m = rates.shape[0]
    if m < 2:
        return 0.0, 0.0
    peaks = []
    for _ in range(n_boot):
        pick = rng.integers(0, m, m)
        p = obs.find_peak(rates[pick].mean(0), grid)
        peaks.append((p.r_star, p.t_star))
    sd = np.std(np.array(peaks), axis=0, ddof=1)
    return float(sd[0]), float(sd[1])


@dataclass
class PeakSummary:
    theta: float
    n_atoms: int
    r_scaled: float
    r_scaled_se: float
    t_scaled: float
    t_scaled_se: float
    t_star: float
    at_boundary: bool
    trajectories: int
    failed: int
    seconds: float


def summarize_peak(run: EnsembleRun) -> PeakSummary:
    cfg = run.config
    good = run.good
    rates = np.stack([r.decay_rate() for r in good])
    peak = obs.find_peak(rates.mean(0), cfg.grid)
    r_se, t_se = peak_standard_error(rates, cfg.grid, seed=cfg.master_seed)
    n, g = cfg.n_atoms, cfg.gamma
    tscale = scaled_burst_time(1.0, n, g)
    return PeakSummary(cfg.theta, n, peak.r_star / (g * n * n), r_se / (g * n * n), peak.t_star * tscale,
                       t_se * tscale, peak.t_star, peak.at_boundary, len(good), run.n_failed, run.seconds)


# ------------------------------------------------------------------ output

def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as err:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(f"could not write {path}: {err}") from err


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _csv_bytes(header, rows) -> bytes:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("ascii")


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(path) -> Path:
    return Path(path).with_suffix(".json")


@dataclass
class ExperimentManifest:
    experiment: str
    engine: str
    config: dict
    master_seed: int
    code_version: str = __version__
    outputs: dict = field(default_factory=dict)
    trajectories: int = 0
    failed: int = 0
    seconds: float = 0.0
    results: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (DisorderKind, CavityCount)):
        return obj.value
    return obj


def write_manifest(path, manifest: ExperimentManifest) -> Path:
    target = manifest_path(path)
    _atomic_write(target, manifest.to_json().encode())
    return target


def _register(manifest: ExperimentManifest | None, path: Path) -> None:
    if manifest is not None:
        manifest.outputs[Path(path).name] = file_checksum(path)


def write_series(path, grid, columns: dict, manifest: ExperimentManifest | None = None) -> Path:
    """CSV ``t,<name>,<name>_se,...`` with 17 significant digits.

    ``columns`` maps names to ``(values, standard_errors)``.  When a
    manifest is given its checksum table is updated and it is written
    next to the CSV.
    """
    grid = np.asarray(grid, dtype=float)
    header = ["t"]
    cols = [grid]
    for name, (vals, se) in columns.items():
        vals = np.asarray(vals, dtype=float)
        se = np.zeros_like(vals) if se is None else np.asarray(se, dtype=float)
        if vals.shape != grid.shape or se.shape != grid.shape:
            raise ValueError(f"column {name!r} does not match the grid length {grid.size}")
        header += [name, f"{name}_se"]
        cols += [vals, se]
    path = Path(path)
    _atomic_write(path, _csv_bytes(header, np.column_stack(cols)))
    _register(manifest, path)
    if manifest is not None:
        write_manifest(path, manifest)
    return path


def write_table(path, header, rows, manifest: ExperimentManifest | None = None) -> Path:
    """Plain numeric CSV table."""
    path = Path(path)
    _atomic_write(path, _csv_bytes(header, rows))
    _register(manifest, path)
    return path


def write_histogram(path, hist: obs.HistogramGrid, names=("dxi", "dphi"),
                    manifest: ExperimentManifest | None = None) -> Path:
    """Long-format ``<x>_bin,<y>_bin,density`` CSV at bin centres."""
    xc, yc = hist.centers()
    dens = hist.density
    rows = [(xc[i], yc[j], dens[i, j]) for i in range(xc.size) for j in range(yc.size)]
    return write_table(path, [f"{names[0]}_bin", f"{names[1]}_bin", "density"], rows, manifest)


def read_series(path) -> dict:
    """Inverse of :func:`write_series`: column name to array."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    header = Path(path).read_text().split("\n", 1)[0].split(",")
    return {name: data[:, i] for i, name in enumerate(header)}


# ---------------------------------------------------------- configuration

def _as_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_optional_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _float_list(s: str) -> list:
    return [float(v) for v in s.split(",") if v.strip()]


def _int_list(s: str) -> list:
    return [int(v) for v in s.split(",") if v.strip()]


# key: (parser, default, description)
SCHEMA = {
    "engine": (str, "dtwa-elim", "dtwa-elim, dtwa-full, qsdmf or qj"),
    "n_atoms": (int, 100, "number of atoms N"),
    "gamma": (float, 1.0, "single-atom decay rate γ"),
    "theta": (float, 0.0, "disorder strength Θ in radians"),
    "disorder_kind": (str, "uniform", "uniform, gaussian or lattice"),
    "k0d": (float, 2 * math.pi, "lattice phase for disorder_kind = lattice"),
    "delta_omega": (float, 0.0, "spectral disorder width Δω"),
    "kappa": (_as_optional_float, None, "cavity decay κ (explicit-cavity runs)"),
    "coupling_g": (_as_optional_float, None, "atom-cavity coupling; sqrt(γκ)/2 if unset"),
    "include_hamiltonian": (_as_bool, True, "keep the coherent exchange term"),
    "cavity_count": (str, "two", "two (waveguide) or one (homogeneous benchmark)"),
    "t_end": (_as_optional_float, None, "final time; 5 ln N/(γN) if unset"),
    "n_samples": (int, 2000, "number of sample times"),
    "dt": (_as_optional_float, None, "integrator step; 1e-3/(γN) if unset"),
    "trajectories": (int, 1000, "ensemble size"),
    "master_seed": (int, 0, "master seed"),
    "frozen_disorder": (_as_bool, False, "one disorder draw shared by every trajectory"),
    "with_g2": (_as_bool, True, "accumulate fourth-order sums"),
    "theta_list": (_float_list, [0.0, math.pi / 2, math.pi, 2 * math.pi], "sweep: Θ values"),
    "n_list": (_int_list, [25, 50, 100, 200, 400], "sweep: N values"),
    "kappa_ratios": (_float_list, [1.0, 2.0, 5.0, 10.0, 50.0], "nonmarkov: κ/(γN) values"),
    "ed_atoms": (int, 10, "nonmarkov: N of the exact collective-cavity comparison (0 skips it)"),
    "realizations": (int, 100, "bounds: disorder realizations per Θ"),
    "restarts": (int, 8, "bounds: random restarts of the phase optimiser"),
    "bins": (int, 32, "ordering: histogram bins per axis"),
    "pair_budget": (int, 2_000_000, "ordering: atom pairs sampled for the histogram"),
    "pilot_fraction": (float, 0.1, "ordering: share of trajectories in the t★ pilot"),
    "snapshots": (int, 9, "ordering: Bloch snapshots across t★ ± 20%"),
    "output_dir": (str, "results", "directory for CSV and manifest files"),
    "workers": (int, 0, "worker processes; 0 means one per CPU"),
}


def default_settings() -> dict:
    return {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in SCHEMA.items()}


def parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    parser = SCHEMA[key][0]
    try:
        return parser(text.strip())
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {text!r} ({err})") from None


def load_config(path) -> dict:
    """Read a flat ``key = value`` file; ``#`` starts a comment.

    Unknown or repeated keys are errors.
    """
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    settings = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in settings:
            raise ConfigError(f"{path}:{lineno}: {key!r} given twice")
        try:
            settings[key] = parse_value(key, value)
        except ConfigError as err:
            raise ConfigError(f"{path}:{lineno}: {err}") from None
    return settings


def system_config(settings: dict, **overrides) -> SystemConfig:
    """SystemConfig from merged settings; invalid ranges become ConfigError."""
    s = {**default_settings(), **settings, **overrides}
    try:
        return SystemConfig(
            n_atoms=s["n_atoms"], gamma=s["gamma"], theta=s["theta"],
            disorder_kind=DisorderKind(s["disorder_kind"]), k0d=s["k0d"], delta_omega=s["delta_omega"],
            kappa=s["kappa"], coupling_g=s["coupling_g"], include_hamiltonian=s["include_hamiltonian"],
            cavity_count=CavityCount(s["cavity_count"]), t_end=s["t_end"], n_samples=s["n_samples"],
            dt=s["dt"], n_trajectories=s["trajectories"], master_seed=s["master_seed"],
            frozen_disorder=s["frozen_disorder"],
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None


def config_echo(config: SystemConfig) -> dict:
    return _jsonable({f.name: getattr(config, f.name) for f in fields(config)})


# ------------------------------------------------------------ experiments

@dataclass
class ExperimentResult:
    """What an experiment wrote and the headline numbers for the summary line."""

    name: str
    outputs: list
    summary: dict
    manifest: ExperimentManifest

    def summary_line(self) -> str:
        parts = [self.name]
        for k, v in self.summary.items():
            parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
        return " ".join(parts)


class _Outputs:
    """Output paths of one experiment, refusing to clobber without ``force``."""

    def __init__(self, out_dir, stem: str, force: bool):
        self.dir = Path(out_dir)
        self.stem = stem
        self.force = force
        self.paths = []

    def path(self, suffix: str) -> Path:
        p = self.dir / f"{self.stem}_{suffix}.csv"
        for q in (p, manifest_path(p)):
            if q.exists() and not self.force:
                raise ConfigError(f"output {q} exists; pass --force to overwrite")
        self.paths.append(p)
        return p


def _workers(settings: dict):
    w = settings.get("workers", 0)
    return w if w else None


def _theta_tag(theta: float) -> str:
    return f"{theta:.4f}".replace(".", "p")


def experiment_decay(settings: dict, out_dir, force: bool = False) -> ExperimentResult:
    """R(t), P_e(t) and, if requested, g²(t) for one (N, Θ) ensemble."""
    s = {**default_settings(), **settings}
    cfg = system_config(s)
    engine = canonical_engine(s["engine"])
    outs = _Outputs(out_dir, f"decay_{engine}_N{cfg.n_atoms}_theta{_theta_tag(cfg.theta)}", force)
    path = outs.path("series")
    run = run_ensemble(cfg, engine, with_g2=s["with_g2"], workers=_workers(s))
    good = run.good
    r, r_se = obs.decay_rate_estimate(good)
    p, p_se = obs.excited_population(good)
    cols = {"R": (r, r_se), "P_e": (p, p_se)}
    if s["with_g2"] and all(rec.g2_num is not None for rec in good):
        (a, a_se), (c, c_se), (tot, tot_se) = obs.g2_estimates(good, with_errors=True)
        cols.update({"g2_RR": (a, a_se), "g2_RL": (c, c_se), "g2_total": (tot, tot_se)})
    peak = summarize_peak(run)
    man = ExperimentManifest("decay", engine, config_echo(cfg), cfg.master_seed, trajectories=len(run.records),
                             failed=run.n_failed, seconds=run.seconds, results=asdict(peak))
    write_series(path, cfg.grid, cols, man)
    summary = {"R*/gN^2": peak.r_scaled, "t*gN/lnN": peak.t_scaled, "trajectories": len(good),
               "seconds": round(run.seconds, 2)}
    return ExperimentResult("decay", outs.paths, summary, man)


def sweep_points(settings: dict, engine: str | None = None, log=None) -> list:
    """Peak summaries over the Θ × N grid of the settings."""
    s = {**default_settings(), **settings}
    engine = canonical_engine(engine or s["engine"])
    rows = []
    for theta in s["theta_list"]:
        for n in s["n_list"]:
            cfg = system_config(s, theta=theta, n_atoms=n)
            run = run_ensemble(cfg, engine, with_g2=False, workers=_workers(s))
            pk = summarize_peak(run)
            rows.append(pk)
            if log is not None:
                print(f"  theta={theta:.4f} N={n} R*/gN^2={pk.r_scaled:.5f}±{pk.r_scaled_se:.5f} "
                      f"t*gN/lnN={pk.t_scaled:.4f} ({run.seconds:.1f}s)", file=log, flush=True)
            del run
    return rows


def fit_both_powers(points: list, theta: float) -> dict:
    """Finite-size fits with p = 1/2 and p = 1 plus the automatically chosen one."""
    data = [(p.n_atoms, p.r_scaled) for p in points if p.theta == theta]
    half = bounds.fit_finite_size(data, theta, power=0.5)
    one = bounds.fit_finite_size(data, theta, power=1.0)
    auto = bounds.fit_finite_size(data, theta)
    return {"half": half._asdict(), "one": one._asdict(), "chosen": auto._asdict()}


def experiment_sweep(settings: dict, out_dir, force: bool = False, log=sys.stderr) -> ExperimentResult:
    """Peak table over Θ × N and the finite-size fits per Θ."""
    s = {**default_settings(), **settings}
    engine = canonical_engine(s["engine"])
    outs = _Outputs(out_dir, f"sweep_{engine}", force)
    table, fits_path = outs.path("peaks"), outs.path("fits")
    t0 = time.perf_counter()
    points = sweep_points(s, engine, log)
    seconds = time.perf_counter() - t0
    header = ["theta", "n_atoms", "r_scaled", "r_scaled_se", "t_scaled", "t_scaled_se", "at_boundary",
              "trajectories", "failed"]
    rows = [(p.theta, p.n_atoms, p.r_scaled, p.r_scaled_se, p.t_scaled, p.t_scaled_se, float(p.at_boundary),
             p.trajectories, p.failed) for p in points]
    cfg = system_config(s)
    man = ExperimentManifest("sweep", engine, config_echo(cfg), cfg.master_seed,
                             trajectories=sum(p.trajectories + p.failed for p in points),
                             failed=sum(p.failed for p in points), seconds=seconds)
    write_table(table, header, rows, man)
    fits, fit_rows = {}, []
    for theta in s["theta_list"]:
        if len({p.n_atoms for p in points if p.theta == theta}) < 2:
            continue
        f = fit_both_powers(points, theta)
        fits[f"{theta:.6f}"] = f
        fit_rows.append((theta, f["chosen"]["power"], f["chosen"]["r0"], f["chosen"]["r1"],
                         f["half"]["residual_norm"], f["one"]["residual_norm"]))
    write_table(fits_path, ["theta", "power", "r0", "r1", "residual_half", "residual_one"], fit_rows, man)
    man.results = {"points": [asdict(p) for p in points], "fits": fits}
    write_manifest(table, man)
    last = points[-1]
    summary = {"R*/gN^2": last.r_scaled, "t*gN/lnN": last.t_scaled, "points": len(points),
               "trajectories": man.trajectories, "seconds": round(seconds, 2)}
    return ExperimentResult("sweep", outs.paths, summary, man)


def experiment_g2(settings: dict, out_dir, force: bool = False) -> ExperimentResult:
    """g²(t) with its t = 0 closed forms recorded in the manifest."""
    s = {**default_settings(), **settings, "with_g2": True}
    cfg = system_config(s)
    engine = canonical_engine(s["engine"])
    outs = _Outputs(out_dir, f"g2_{engine}_N{cfg.n_atoms}_theta{_theta_tag(cfg.theta)}", force)
    path = outs.path("series")
    run = run_ensemble(cfg, engine, with_g2=True, workers=_workers(s))
    (a, a_se), (c, c_se), (tot, tot_se) = obs.g2_estimates(run.good, with_errors=True)
    r, r_se = obs.decay_rate_estimate(run.good)
    n = cfg.n_atoms
    mu2 = initial_cross_factor(cfg.theta, cfg.disorder_kind)
    expected = {"auto": 2 * (n - 1) / n, "cross": (n - 1) / n * (1 + mu2), "total": (n - 1) / n * (1.5 + mu2 / 2)}
    man = ExperimentManifest("g2", engine, config_echo(cfg), cfg.master_seed, trajectories=len(run.records),
                             failed=run.n_failed, seconds=run.seconds,
                             results={"initial_expected": expected,
                                      "initial_measured": {"auto": a[0], "cross": c[0], "total": tot[0]}})
    write_series(path, cfg.grid, {"R": (r, r_se), "g2_RR": (a, a_se), "g2_RL": (c, c_se),
                                  "g2_total": (tot, tot_se)}, man)
    pk = summarize_peak(run)
    summary = {"R*/gN^2": pk.r_scaled, "t*gN/lnN": pk.t_scaled, "g2_RR(0)": float(a[0]),
               "trajectories": len(run.good), "seconds": round(run.seconds, 2)}
    return ExperimentResult("g2", outs.paths, summary, man)


def initial_cross_factor(theta: float, kind: DisorderKind = DisorderKind.UNIFORM) -> float:
    """Disorder average of |⟨e^{2iξ}⟩|²-type factor entering g²_RL(0): (sinΘ/Θ)² for uniform offsets."""
    kind = DisorderKind(kind)
    if kind is DisorderKind.UNIFORM:
        return 1.0 if theta == 0 else (math.sin(theta) / theta) ** 2
    if kind is DisorderKind.GAUSSIAN:
        return math.exp(-theta ** 2)
    raise ConfigError("closed-form g² factors exist for uniform and Gaussian offsets only")


def bound_reports(settings: dict) -> dict:
    """BoundReport per Θ over independent realizations."""
    s = {**default_settings(), **settings}
    reports = {}
    for theta in s["theta_list"]:
        cfg = system_config(s, theta=theta)
        reals = [sample_disorder(cfg, i) for i in range(s["realizations"])]
        reports[theta] = bounds.bound_report(reals, theta, cfg.gamma, s["restarts"], cfg.master_seed)
    return reports


def experiment_bounds(settings: dict, out_dir, force: bool = False) -> ExperimentResult:
    """ℝ<, variational ℝ and ℝ> per realization for each Θ."""
    s = {**default_settings(), **settings}
    cfg = system_config(s)
    outs = _Outputs(out_dir, f"bounds_N{cfg.n_atoms}", force)
    path = outs.path("table")
    t0 = time.perf_counter()
    reports = bound_reports(s)
    seconds = time.perf_counter() - t0
    n2 = cfg.gamma * cfg.n_atoms ** 2
    rows = []
    for theta, rep in reports.items():
        exact_val = rep.r_exact_weak if rep.r_exact_weak is not None else float("nan")
        for i, (lo, var, hi) in enumerate(zip(rep.r_lower_estimate, rep.r_variational, rep.r_loose)):
            rows.append((theta, i, lo / n2, var / n2, hi / n2, exact_val / n2))
    man = ExperimentManifest("bounds", "bounds", config_echo(cfg), cfg.master_seed,
                             trajectories=0, seconds=seconds,
                             results={f"{t:.6f}": json.loads(rep.to_json()) for t, rep in reports.items()})
    write_table(path, ["theta", "realization", "r_lower", "r_variational", "r_loose", "r_exact_weak"], rows, man)
    write_manifest(path, man)
    chain = all(lo <= var * (1 + 1e-9) and var <= hi * (1 + 1e-9) for _, _, lo, var, hi, _ in rows)
    summary = {"realizations": len(rows), "chain_holds": chain, "seconds": round(seconds, 2)}
    return ExperimentResult("bounds", outs.paths, summary, man)


@dataclass
class OrderingResult:
    t_star: float
    stats: obs.EnsembleStatistics
    bands: dict
    dropped_fraction: float
    pearson: float
    ordering_hist: obs.HistogramGrid
    rate_hist: obs.HistogramGrid
    run: EnsembleRun


def ordering_analysis(cfg: SystemConfig, settings: dict) -> OrderingResult:
    """Pilot t★, QSDMF run with snapshots around it, then ordering and mirror statistics."""
    s = {**default_settings(), **settings}
    w = _workers(s)
    t_pilot = pilot_burst_time(cfg, "qsdmf", s["pilot_fraction"], workers=w)
    run = run_ensemble(cfg, "qsdmf", snapshot_times=snapshot_window(t_pilot, s["snapshots"]),
                       with_g2=False, workers=w)
    stats = obs.ensemble_statistics(run.good, with_g2=False)
    dxi, dphi, dropped = obs.spin_ordering_pairs(run.good, stats.t_star, s["pair_budget"], cfg.master_seed)
    edges = np.linspace(-np.pi, np.pi, s["bins"] + 1)
    counts, _, _ = np.histogram2d(dxi, dphi, bins=(edges, edges))
    hist = obs.HistogramGrid(edges, edges.copy(), counts, float(counts.sum()), "dxi,dphi", stats.t_star)
    rr, rl = obs.rate_pair_samples(run.good, stats.t_star)
    pearson = float(np.corrcoef(rr, rl)[0, 1])
    return OrderingResult(stats.t_star, stats, obs.band_fractions(dxi, dphi), dropped, pearson, hist,
                          obs.rate_pair_histogram(run.good, stats.t_star, s["bins"]), run)


def experiment_ordering(settings: dict, out_dir, force: bool = False) -> ExperimentResult:
    """Spin-ordering and directional-rate histograms from QSDMF at the burst."""
    s = {**default_settings(), **settings}
    cfg = system_config(s)
    outs = _Outputs(out_dir, f"ordering_N{cfg.n_atoms}_theta{_theta_tag(cfg.theta)}", force)
    p_hist, p_rates, p_series = outs.path("phases"), outs.path("rates"), outs.path("series")
    res = ordering_analysis(cfg, s)
    man = ExperimentManifest("ordering", "qsdmf", config_echo(cfg), cfg.master_seed,
                             trajectories=len(res.run.records), failed=res.run.n_failed, seconds=res.run.seconds,
                             results={"t_star": res.t_star, "bands": res.bands, "pearson_rr_rl": res.pearson,
                                      "dropped_fraction": res.dropped_fraction})
    write_histogram(p_hist, res.ordering_hist, ("dxi", "dphi"), man)
    write_histogram(p_rates, res.rate_hist, ("rate_r", "rate_l"), man)
    st = res.stats
    write_series(p_series, st.grid, {"R": (st.r_of_t, st.r_se), "P_e": (st.p_e, st.p_e_se)}, man)
    summary = {"R*/gN^2": st.scaled_peak(cfg.n_atoms, cfg.gamma),
               "t*gN/lnN": scaled_burst_time(st.t_star, cfg.n_atoms, cfg.gamma),
               "diagonal/baseline": res.bands["diagonal"] / res.bands["diagonal_baseline"],
               "row/baseline": res.bands["row"] / res.bands["row_baseline"], "pearson": res.pearson,
               "trajectories": len(res.run.good), "seconds": round(res.run.seconds, 2)}
    return ExperimentResult("ordering", outs.paths, summary, man)


def cavity_config(settings: dict, n_atoms: int, kappa_ratio: float, homogeneous: bool = False) -> SystemConfig:
    s = {**default_settings(), **settings}
    kappa = kappa_ratio * s["gamma"] * n_atoms
    extra = {"cavity_count": "one", "theta": 0.0, "delta_omega": 0.0} if homogeneous else {}
    return system_config({**s, **extra}, n_atoms=n_atoms, kappa=kappa)


def experiment_nonmarkov(settings: dict, out_dir, force: bool = False, log=sys.stderr) -> ExperimentResult:
    """Explicit-cavity DTWA over κ/(γN), plus the exact single-cavity comparison."""
    s = {**default_settings(), **settings}
    base = system_config(s)
    outs = _Outputs(out_dir, f"nonmarkov_N{base.n_atoms}", force)
    table = outs.path("kappa")
    t0 = time.perf_counter()
    rows, points = [], []
    homogeneous = base.cavity_count is CavityCount.ONE_HOMOGENEOUS
    for ratio in s["kappa_ratios"]:
        cfg = cavity_config(s, base.n_atoms, ratio, homogeneous)
        run = run_ensemble(cfg, "dtwa-full", with_g2=False, workers=_workers(s))
        pk = summarize_peak(run)
        points.append(pk)
        rows.append((ratio, cfg.kappa, pk.r_scaled, pk.r_scaled_se, pk.t_scaled, pk.trajectories, pk.failed))
        if log is not None:
            print(f"  kappa/gN={ratio:g} R*/gN^2={pk.r_scaled:.5f}±{pk.r_scaled_se:.5f} ({run.seconds:.1f}s)",
                  file=log, flush=True)
    man = ExperimentManifest("nonmarkov", "dtwa-full", config_echo(base), base.master_seed,
                             trajectories=sum(p.trajectories + p.failed for p in points),
                             failed=sum(p.failed for p in points))
    write_table(table, ["kappa_ratio", "kappa", "r_scaled", "r_scaled_se", "t_scaled", "trajectories", "failed"],
                rows, man)
    results = {"points": [asdict(p) for p in points]}
    if s["ed_atoms"] > 0:
        cmp = cavity_benchmark(s, s["ed_atoms"], s["kappa_ratios"][0])
        series = outs.path("ed")
        write_series(series, cmp["grid"], {"R_ed": (cmp["r_ed"], None), "R_dtwa": (cmp["r_dtwa"], cmp["r_dtwa_se"])},
                     man)
        results["ed_comparison"] = {k: v for k, v in cmp.items() if k not in ("grid", "r_ed", "r_dtwa", "r_dtwa_se")}
    man.seconds = time.perf_counter() - t0
    man.results = results
    write_manifest(table, man)
    summary = {"R*/gN^2": points[-1].r_scaled, "t*gN/lnN": points[-1].t_scaled,
               "trajectories": man.trajectories, "seconds": round(man.seconds, 2)}
    return ExperimentResult("nonmarkov", outs.paths, summary, man)


def cavity_benchmark(settings: dict, n_atoms: int, kappa_ratio: float) -> dict:
    """DTWA with one cavity against the exact collective-spin + cavity solution."""
    s = {**default_settings(), **settings}
    cfg = cavity_config(s, n_atoms, kappa_ratio, homogeneous=True)
    run = run_ensemble(cfg, "dtwa-full", with_g2=False, workers=_workers(s))
    r, r_se = obs.decay_rate_estimate(run.good)
    ed = exact.ed_collective_cavity_evolve(n_atoms, cfg.gamma, cfg.kappa, cfg.grid, cfg.coupling_g)
    pk = obs.find_peak(r, cfg.grid)
    return {"grid": cfg.grid, "r_ed": ed.r_of_t, "r_dtwa": r, "r_dtwa_se": r_se,
            "peak_ed": ed.r_star, "peak_dtwa": pk.r_star, "relative_peak_error": abs(pk.r_star / ed.r_star - 1),
            "n_atoms": n_atoms, "kappa": cfg.kappa, "trajectories": len(run.good)}


def benchmark_curves(settings: dict) -> dict:
    """QJ, eliminated DTWA and QSDMF on one frozen realization."""
    s = {**default_settings(), **settings, "frozen_disorder": True}
    cfg = system_config(s)
    real = sample_disorder(cfg, 0)
    w = _workers(s)
    out = {"grid": cfg.grid, "config": cfg, "realization": real}
    for eng in ("qj", "dtwa-eliminated", "qsdmf"):
        run = run_ensemble(cfg, eng, realization=real, with_g2=False, workers=w)
        r, se = obs.decay_rate_estimate(run.good)
        out[eng] = (r, se, run.seconds, run.n_failed)
    r_qj = out["qj"][0]
    pk = obs.find_peak(r_qj, cfg.grid)
    out["t_star_qj"] = pk.t_star
    window = cfg.grid <= 2 * pk.t_star
    n2 = cfg.gamma * cfg.n_atoms ** 2
    out["max_diff"] = {eng: float(np.max(np.abs(out[eng][0] - r_qj)[window]) / n2)
                       for eng in ("dtwa-eliminated", "qsdmf")}
    return out


def experiment_benchmark(settings: dict, out_dir, force: bool = False) -> ExperimentResult:
    """Three-method comparison on one disorder realization."""
    s = {**default_settings(), **settings}
    cfg = system_config(s)
    outs = _Outputs(out_dir, f"benchmark_N{cfg.n_atoms}_theta{_theta_tag(cfg.theta)}", force)
    path = outs.path("series")
    t0 = time.perf_counter()
    res = benchmark_curves(s)
    seconds = time.perf_counter() - t0
    r_qj, se_qj = res["qj"][:2]
    cols = {"R_qj": (r_qj, se_qj)}
    for eng, tag in (("dtwa-eliminated", "dtwa"), ("qsdmf", "qsdmf")):
        r, se = res[eng][:2]
        cols[f"R_{tag}"] = (r, se)
        cols[f"absdiff_{tag}"] = (np.abs(r - r_qj), np.hypot(se, se_qj))
    n_traj = 3 * res["config"].n_trajectories
    man = ExperimentManifest("benchmark", "qj,dtwa-eliminated,qsdmf", config_echo(res["config"]), cfg.master_seed,
                             trajectories=n_traj, failed=sum(res[e][3] for e in ("qj", "dtwa-eliminated", "qsdmf")),
                             seconds=seconds,
                             results={"max_abs_diff_over_gN2": res["max_diff"], "t_star_qj": res["t_star_qj"],
                                      "xi": res["realization"].xi})
    write_series(path, cfg.grid, cols, man)
    pk = obs.find_peak(r_qj, cfg.grid)
    summary = {"R*/gN^2": pk.r_star / (cfg.gamma * cfg.n_atoms ** 2),
               "t*gN/lnN": scaled_burst_time(pk.t_star, cfg.n_atoms, cfg.gamma),
               "maxdiff_dtwa": res["max_diff"]["dtwa-eliminated"], "maxdiff_qsdmf": res["max_diff"]["qsdmf"],
               "trajectories": n_traj, "seconds": round(seconds, 2)}
    return ExperimentResult("benchmark", outs.paths, summary, man)


RUNNERS = {
    "decay": experiment_decay, "sweep": experiment_sweep, "g2": experiment_g2, "bounds": experiment_bounds,
    "ordering": experiment_ordering, "nonmarkov": experiment_nonmarkov, "benchmark": experiment_benchmark,
}


def run_experiment(name: str, settings: dict, out_dir=None, force: bool = False) -> ExperimentResult:
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    s = {**default_settings(), **settings}
    return RUNNERS[name](s, out_dir if out_dir is not None else s["output_dir"], force)
