"""Seeded Monte Carlo runner, parameter sweeps and CSV output."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .bounds import bound_report
from .codebooks import build_codebooks
from .config import SystemConfig
from .errors import ConfigError, HrisLocError
from .estimator import EstimatorConfig, run_pipeline
from .scene import ETA_NAMES, SceneState, channel_params_from_state, reference_scene, wrap_angle
from .waveform import path_gains, random_scatter_points, synth_observations

PARAM_NAMES = ETA_NAMES + ("p_R", "p_U", "alpha", "b_R", "b_U")
ANGLE_NAMES = frozenset(ETA_NAMES[3:]) | {"alpha"}
SWEEP_VARS = ("Pt_dBm", "rho", "num_scatterers")
_SWEEP_ALIASES = {"P_t_dBm": "Pt_dBm", "Pt": "Pt_dBm", "N_s": "num_scatterers"}

SCENE_KEYS = ("p_B", "p_R", "p_U", "alpha", "b_R", "b_U")
EXPERIMENT_KEYS = ("sweep", "values", "trials", "seed", "out", "num_scatterers", "noiseless", "workers", "with_crb")
ESTIMATOR_KEYS = ("angle_grid_points", "los_refinement_passes", "newton_max_iters")


@dataclass(frozen=True)
class ExperimentSpec:
    system: SystemConfig = field(default_factory=SystemConfig)
    scene: SceneState = field(default_factory=reference_scene)
    sweep_var: str = "Pt_dBm"
    sweep_values: tuple = (0.0,)
    trials: int = 500
    seed: int = 0
    out: str | None = None
    num_scatterers: int = 0
    noiseless: bool = False
    workers: int = 1
    with_crb: bool = True
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        var = _SWEEP_ALIASES.get(self.sweep_var, self.sweep_var)
        if var not in SWEEP_VARS:
            raise ConfigError(f"sweep: unknown sweep variable {self.sweep_var!r}, expected one of {SWEEP_VARS}")
        object.__setattr__(self, "sweep_var", var)
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.num_scatterers < 0:
            raise ConfigError(f"num_scatterers must be >= 0, got {self.num_scatterers}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for v in self.sweep_values:
            if var == "rho" and not 0.0 <= v <= 1.0:
                raise ConfigError(f"values: rho must lie in [0, 1], got {v}")
            if var == "num_scatterers" and (v < 0 or v != int(v)):
                raise ConfigError(f"values: num_scatterers must be a non-negative integer, got {v}")
            if not math.isfinite(v):
                raise ConfigError(f"values: non-finite sweep value {v}")

    def point(self, i: int) -> tuple[SystemConfig, int]:
        """System config and scatter-point count at sweep point ``i``."""
        v = self.sweep_values[i]
        if self.sweep_var == "Pt_dBm":
            return self.system.with_(P_t_dBm=v), self.num_scatterers
        if self.sweep_var == "rho":
            return self.system.with_(rho=v), self.num_scatterers
        return self.system, int(v)


@dataclass
class TrialResult:
    point: int
    index: int
    seed: tuple
    errors: dict | None  # signed, except Euclidean position errors
    crb: dict | None
    cause: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.errors is not None


@dataclass
class SweepRow:
    sweep_value: float
    rmse: dict
    crb: dict
    trials: int
    failures: int


@dataclass
class SweepTable:
    sweep_var: str
    rows: list = field(default_factory=list)
    trial_results: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# configuration


def parse_values(raw) -> tuple:
    """Sweep values from a list, ``"a,b,c"`` or an inclusive ``"start:stop:step"``."""
    if isinstance(raw, (int, float)):
        return (float(raw),)
    if isinstance(raw, dict):
        raw = f"{raw['start']}:{raw['stop']}:{raw['step']}"
    if isinstance(raw, str):
        if ":" in raw:
            try:
                start, stop, step = (float(x) for x in raw.split(":"))
            except ValueError as e:
                raise ConfigError(f"values: cannot parse range {raw!r}") from e
            if step == 0 or (stop - start) / step < 0:
                raise ConfigError(f"values: empty or infinite range {raw!r}")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(start + k * step for k in range(n))
        raw = [x for x in raw.replace(" ", "").split(",") if x]
    try:
        return tuple(float(x) for x in raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"values: cannot parse {raw!r}") from e


def spec_from_mapping(data: dict | None) -> ExperimentSpec:
    """Build a validated spec from flat keys; omitted keys take the reference defaults."""
    data = dict(data or {})
    sys_names = SystemConfig.field_names()
    known = set(sys_names) | set(SCENE_KEYS) | set(EXPERIMENT_KEYS) | set(ESTIMATOR_KEYS)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")

    def typed(name, value, kind):
        try:
            return kind(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{name}: expected {kind.__name__}, got {value!r}") from e

    sys_types = {f.name: f.type for f in fields(SystemConfig)}
    sys_kw = {}
    for k in sys_names:
        if k in data:
            sys_kw[k] = typed(k, data[k], int if sys_types[k] in (int, "int") else float)
    system = SystemConfig(**sys_kw)

    base = reference_scene()
    scene_kw = {k: getattr(base, k) for k in SCENE_KEYS}
    for k in SCENE_KEYS:
        if k in data:
            v = data[k]
            if k.startswith("p_"):
                arr = np.asarray(v, dtype=float) if isinstance(v, (list, tuple)) else None
                if arr is None or arr.shape != (2,) or not np.all(np.isfinite(arr)):
                    raise ConfigError(f"{k}: expected a 2-vector, got {v!r}")
                scene_kw[k] = arr
            else:
                scene_kw[k] = typed(k, v, float)
    scene = SceneState(**scene_kw)
    channel_params_from_state(scene, system)  # unambiguous-delay check

    est = EstimatorConfig(**{k: typed(k, data[k], int) for k in ESTIMATOR_KEYS if k in data})
    kw = {}
    if "sweep" in data:
        kw["sweep_var"] = str(data["sweep"])
    if "values" in data:
        kw["sweep_values"] = parse_values(data["values"])
    for k, kind in (("trials", int), ("seed", int), ("num_scatterers", int), ("workers", int)):
        if k in data:
            kw[k] = typed(k, data[k], kind)
    for k in ("noiseless", "with_crb"):
        if k in data:
            if not isinstance(data[k], bool):
                raise ConfigError(f"{k}: expected true/false, got {data[k]!r}")
            kw[k] = data[k]
    if "out" in data:
        kw["out"] = str(data["out"])
    if "sweep_values" not in kw:
        var = _SWEEP_ALIASES.get(kw.get("sweep_var", "Pt_dBm"), kw.get("sweep_var", "Pt_dBm"))
        kw["sweep_values"] = {"Pt_dBm": (system.P_t_dBm,), "rho": (system.rho,)}.get(var, (0.0,))
    return ExperimentSpec(system=system, scene=scene, estimator=est, **kw)


def load_config(path) -> ExperimentSpec:
    """Read a flat YAML (or JSON) key-value file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of field names to values")
    return spec_from_mapping(data)


# ---------------------------------------------------------------------------
# trials


def trial_seed(master: int, point: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=(point, index))


def _errors(est, se, truth, scene) -> dict:
    e = {n: float(v) for n, v in zip(ETA_NAMES, est.eta() - truth.eta())}
    for n in ETA_NAMES[3:]:
        e[n] = wrap_angle(e[n])
    e["p_R"] = float(np.linalg.norm(se.p_R_hat - scene.p_R))
    e["p_U"] = float(np.linalg.norm(se.p_U_hat - scene.p_U))
    e["alpha"] = wrap_angle(se.alpha_hat - scene.alpha)
    e["b_R"] = float(se.b_R_hat - scene.b_R)
    e["b_U"] = float(se.b_U_hat - scene.b_U)
    return e


def run_trial(spec: ExperimentSpec, point: int, trial_index: int) -> TrialResult:
    """One seeded trial at a sweep point; pipeline failures are recorded, not raised."""
    cfg, n_sp = spec.point(point)
    rng = np.random.default_rng(trial_seed(spec.seed, point, trial_index))
    codebooks = build_codebooks(cfg, rng)
    gains = path_gains(spec.scene, cfg, rng)
    truth = channel_params_from_state(spec.scene, cfg, gains=gains)
    sps = random_scatter_points(n_sp, rng)
    obs = synth_observations(spec.scene, cfg, codebooks, sps, rng=rng, noiseless=spec.noiseless, params=truth)

    crb = None
    if spec.with_crb:
        try:
            crb = bound_report(spec.scene, cfg, codebooks, gains).as_dict()
        except HrisLocError:
            crb = None
    seed = (spec.seed, point, trial_index)
    try:
        est, se = run_pipeline(obs, cfg, spec.estimator, spec.scene.p_B)
    except (HrisLocError, np.linalg.LinAlgError, FloatingPointError) as e:
        return TrialResult(point, trial_index, seed, None, crb, cause=f"{type(e).__name__}: {e}")
    errors = _errors(est, se, truth, spec.scene)
    if not all(math.isfinite(v) for v in errors.values()):
        return TrialResult(point, trial_index, seed, None, crb, cause="non-finite estimate")
    return TrialResult(point, trial_index, seed, errors, crb, diagnostics=dict(est.diagnostics, flags=se.flags))


def _run_task(args):
    spec, point, index = args
    return run_trial(spec, point, index)


def _rms(values) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return float(np.sqrt(np.mean(np.square(vals))))


def aggregate(value: float, results) -> SweepRow:
    good = [r for r in results if r.ok]
    rmse = {n: _rms(r.errors[n] for r in good) for n in PARAM_NAMES}
    crb = {n: _rms(r.crb[n] for r in results if r.crb is not None) for n in PARAM_NAMES}
    return SweepRow(value, rmse, crb, trials=len(results), failures=len(results) - len(good))


def run_sweep(spec: ExperimentSpec) -> SweepTable:
    """RMSE over successful trials and RMS-averaged CRBs at every sweep point.

    Results are ordered by (point, trial) regardless of ``spec.workers``.
    """
    tasks = [(spec, p, k) for p in range(len(spec.sweep_values)) for k in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * spec.workers))))
    else:
        results = [_run_task(t) for t in tasks]
    table = SweepTable(spec.sweep_var, trial_results=results)
    for p, v in enumerate(spec.sweep_values):
        table.rows.append(aggregate(v, [r for r in results if r.point == p]))
    return table


def bounds_sweep(spec: ExperimentSpec) -> SweepTable:
    """CRB columns only, RMS-averaged over ``spec.trials`` codebook and gain draws."""
    table = SweepTable(spec.sweep_var)
    for p, v in enumerate(spec.sweep_values):
        cfg, _ = spec.point(p)
        crbs, failures = [], 0
        for k in range(spec.trials):
            rng = np.random.default_rng(trial_seed(spec.seed, p, k))
            codebooks = build_codebooks(cfg, rng)
            gains = path_gains(spec.scene, cfg, rng)
            try:
                crbs.append(bound_report(spec.scene, cfg, codebooks, gains).as_dict())
            except HrisLocError:
                failures += 1
        crb = {n: _rms(c[n] for c in crbs) for n in PARAM_NAMES}
        table.rows.append(SweepRow(v, {n: None for n in PARAM_NAMES}, crb, spec.trials, failures))
    return table


# ---------------------------------------------------------------------------
# output


def csv_header() -> list[str]:
    cols = ["sweep_var", "sweep_value"]
    for n in PARAM_NAMES:
        cols += [f"rmse_{n}", f"crb_{n}"]
    return cols + ["trials", "failures"]


def _fmt(x) -> str:
    return "" if x is None else format(x, ".9g")


def write_results(table: SweepTable | None, path) -> None:
    """CSV with one row per sweep point; absent values are empty cells.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_csv(table, path)
        return
    with open(path, "w", newline="") as fh:
        _write_csv(table, fh)


def _write_csv(table, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(csv_header())
    if table is None:
        return
    for row in table.rows:
        cells = [table.sweep_var, _fmt(row.sweep_value)]
        for n in PARAM_NAMES:
            cells += [_fmt(row.rmse.get(n)), _fmt(row.crb.get(n))]
        w.writerow(cells + [str(row.trials), str(row.failures)])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "sweep_var" else (float(v) if v else None)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


def with_overrides(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return replace(spec, **{k: v for k, v in changes.items() if v is not None})
