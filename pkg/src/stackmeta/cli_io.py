"""Run configuration, artifact I/O and the ``stackmeta`` command line.

Config files are YAML with the sections ``scenario``, ``followers``,
``type_distribution``, ``train``, ``bench``, ``experiments``, ``output_dir``
and ``seed``; see ``configs/robot_teaming.yaml`` for the full schema. Unknown
keys are rejected. Every default filled in at load time is recorded in
``RunConfig.provenance``.

Exit codes: 0 success, 1 validation or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from . import streams
from .lqg_core import (
    FollowerType,
    GameSpec,
    SpecError,
    TypeDistribution,
    build_double_integrator_spec,
    expected_cost,
)
from .meta_trainer import DivergenceError, Task, TrainConfig, adapt, train_individual, train_meta
from .sim_bench import (
    EXP_SIMULATE,
    EXP_TRANSFER,
    BenchConfig,
    monte_carlo_cost,
    rollout,
    run_adaptation_experiment,
    run_individual_experiment,
    run_unilateral_experiment,
)

log = logging.getLogger("stackmeta")

PAPER = "paper"
UNSPECIFIED = "default (unspecified in paper)"

TRACE_SCHEMA = ["iteration", "meta_cost", "mean_expected_cost", "grad_norm"]


class ConfigError(ValueError):
    """Invalid or unreadable configuration; maps to exit code 1."""


# (value, provenance) for every optional key
SCENARIO_DEFAULTS: dict[str, tuple[Any, str]] = {
    "kind": ("double_integrator", UNSPECIFIED),
    "dt": (0.5, PAPER),
    "T": (10, PAPER),
    "leader_start": ([5.0, 6.5], PAPER),
    "follower_start": ([7.0, 4.5], PAPER),
    "noise_variance": (0.5, PAPER),
    "position_weight": (3.0, UNSPECIFIED),
    "relative_weight": (0.1, UNSPECIFIED),
    "velocity_weight": (0.0, UNSPECIFIED),
    "terminal_scale": (3.0, UNSPECIFIED),
    "control_weight": (1.0, UNSPECIFIED),
}
MATRIX_SCENARIO_KEYS = {"kind", "A", "B_L", "Sigma", "Q_L", "R_L", "Q_Lf", "T", "x0"}
FOLLOWER_KEYS = {"gain", "control_weight", "position_weight", "relative_weight", "velocity_weight"}
MATRIX_FOLLOWER_KEYS = {"B_F", "Q_F", "R_F"}
DEFAULT_FOLLOWERS = [
    {"gain": g, "control_weight": r, "position_weight": 1.0, "relative_weight": 100.0, "velocity_weight": 0.0}
    for g, r in zip((1.0, 0.8, 1.2, 0.6, 1.5), (0.5, 1.0, 2.0, 4.0, 8.0))
]
PAPER_TRAIN_KEYS = {"gamma", "lam", "eta", "kappa", "N"}
TRAIN_OVERRIDES = {"gamma": 5.0, "lam": 100.0, "kappa": 2.0, "N": 6}
EXPERIMENT_KEYS = ("adaptation", "unilateral", "individual")


@dataclass
class RunConfig:
    scenario: dict
    followers: list[dict]
    type_distribution: TypeDistribution
    train: TrainConfig
    bench: BenchConfig
    experiments: dict
    output_dir: str
    seed: int
    spec: GameSpec = field(repr=False, compare=False, default=None)
    types: list[FollowerType] = field(repr=False, compare=False, default_factory=list)
    provenance: list[tuple[str, Any, str]] = field(repr=False, compare=False, default_factory=list)

    @property
    def tasks(self) -> list[Task]:
        return [Task(self.spec, f) for f in self.types]

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train["state_range"] = list(train["state_range"])
        train["control_range"] = list(train["control_range"])
        train.pop("seed")
        return {
            "scenario": _plain(self.scenario),
            "followers": _plain(self.followers),
            "type_distribution": list(self.type_distribution.probs),
            "train": train,
            "bench": asdict(self.bench),
            "experiments": dict(self.experiments),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _reject_unknown(section: str, data: dict, allowed: Iterable[str]) -> None:
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) in {section}: {', '.join(extra)}")


def _selector(idx: int) -> np.ndarray:
    S = np.zeros((2, 8))
    S[:, idx:idx + 2] = np.eye(2)
    return S


def _leader_cost(sc: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pL, vL, pF, vF = (_selector(i) for i in (0, 2, 4, 6))
    rel = pL - pF
    Q = (sc["position_weight"] * (pL.T @ pL + pF.T @ pF)
         + sc["relative_weight"] * rel.T @ rel
         + sc["velocity_weight"] * (vL.T @ vL + vF.T @ vF))
    return Q, sc["control_weight"] * np.eye(2), sc["terminal_scale"] * Q


def _follower_cost(f: dict) -> tuple[np.ndarray, np.ndarray]:
    pL, pF, vF = _selector(0), _selector(4), _selector(6)
    rel = pF - pL
    Q = (f["position_weight"] * pF.T @ pF + f["relative_weight"] * rel.T @ rel
         + f["velocity_weight"] * vF.T @ vF)
    return Q, f["control_weight"] * np.eye(2)


def _number(section: str, key: str, value, positive=False, nonneg=False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{section}.{key} must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{section}.{key} must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"{section}.{key} must be non-negative")
    return v


def build_run_config(raw: dict, origin: str = "<dict>") -> RunConfig:
    """Validate a parsed config mapping and fill defaults."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    _reject_unknown("config", raw, {"scenario", "followers", "type_distribution", "train", "bench",
                                    "experiments", "output_dir", "seed"})
    prov: list[tuple[str, Any, str]] = []

    def take(section: str, data: dict, key: str, default: Any, source: str):
        if key in data:
            return data[key]
        prov.append((f"{section}.{key}", default, source))
        return default

    sc_raw = raw.get("scenario") or {}
    kind = sc_raw.get("kind", "double_integrator")
    if kind == "double_integrator":
        _reject_unknown("scenario", sc_raw, SCENARIO_DEFAULTS)
        sc = {k: take("scenario", sc_raw, k, v, src) for k, (v, src) in SCENARIO_DEFAULTS.items()}
        for k in ("position_weight", "relative_weight", "velocity_weight", "terminal_scale", "noise_variance"):
            sc[k] = _number("scenario", k, sc[k], nonneg=True)
        sc["control_weight"] = _number("scenario", "control_weight", sc["control_weight"], positive=True)
        sc["dt"] = _number("scenario", "dt", sc["dt"], positive=True)
        fl_raw = raw.get("followers")
        if fl_raw is None:
            prov.append(("followers", "five default types", UNSPECIFIED))
            fl_raw = DEFAULT_FOLLOWERS
        followers = []
        for i, f in enumerate(fl_raw):
            if not isinstance(f, dict):
                raise ConfigError(f"followers[{i}] must be a mapping")
            _reject_unknown(f"followers[{i}]", f, FOLLOWER_KEYS)
            missing = FOLLOWER_KEYS - set(f)
            if missing:
                raise ConfigError(f"followers[{i}] is missing {', '.join(sorted(missing))}")
            followers.append({k: _number(f"followers[{i}]", k, f[k], nonneg=True) for k in sorted(FOLLOWER_KEYS)})
        Q_L, R_L, Q_Lf = _leader_cost(sc)
        cost = {
            "Q_L": Q_L, "R_L": R_L, "Q_Lf": Q_Lf, "Sigma": sc["noise_variance"] * np.eye(8), "T": sc["T"],
            "followers": [],
        }
        for f in followers:
            Q_F, R_F = _follower_cost(f)
            cost["followers"].append({"gain": f["gain"], "Q_F": Q_F, "R_F": R_F})
        try:
            spec, types = build_double_integrator_spec(sc["dt"], sc["leader_start"], sc["follower_start"], cost)
        except (SpecError, ValueError, TypeError) as exc:
            raise ConfigError(f"scenario: {exc}") from None
    elif kind == "matrices":
        _reject_unknown("scenario", sc_raw, MATRIX_SCENARIO_KEYS)
        missing = MATRIX_SCENARIO_KEYS - set(sc_raw)
        if missing:
            raise ConfigError(f"scenario is missing {', '.join(sorted(missing))}")
        sc = dict(sc_raw)
        followers = []
        types = []
        try:
            spec = GameSpec(*(sc[k] for k in ("A", "B_L", "Sigma", "Q_L", "R_L", "Q_Lf", "T", "x0")))
            for i, f in enumerate(raw.get("followers") or []):
                _reject_unknown(f"followers[{i}]", f, MATRIX_FOLLOWER_KEYS)
                followers.append(dict(f))
                types.append(FollowerType(i, f["B_F"], f["Q_F"], f["R_F"]))
                if types[-1].B_F.shape[0] != spec.n:
                    raise SpecError(f"followers[{i}].B_F must have {spec.n} rows")
        except (SpecError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from None
        if not types:
            raise ConfigError("followers: at least one follower type is required")
    else:
        raise ConfigError(f"scenario.kind must be 'double_integrator' or 'matrices', got {kind!r}")

    p = raw.get("type_distribution")
    if p is None:
        p = [0.2, 0.3, 0.1, 0.2, 0.2]
        prov.append(("type_distribution", p, PAPER))
    try:
        dist = TypeDistribution(tuple(float(v) for v in p))
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"type_distribution: {exc}") from None
    if len(dist) != len(types):
        raise ConfigError(f"type_distribution has {len(dist)} entries for {len(types)} follower types")

    seed = raw.get("seed")
    if seed is None:
        seed = 0
        prov.append(("seed", 0, UNSPECIFIED))
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    tr_raw = raw.get("train") or {}
    known = {f.name for f in fields(TrainConfig)} - {"seed"}
    _reject_unknown("train", tr_raw, known)
    tr = {}
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        if f.name in tr_raw:
            tr[f.name] = tr_raw[f.name]
        else:
            default = TRAIN_OVERRIDES.get(f.name, f.default)
            tr[f.name] = default
            prov.append((f"train.{f.name}", default, PAPER if f.name in PAPER_TRAIN_KEYS else UNSPECIFIED))
    for k in ("alpha", "beta", "gamma", "lam", "kappa", "sigma_nbhd", "init_scale", "eps", "divergence_bound"):
        tr[k] = _number("train", k, tr[k], nonneg=True)
    if tr["eta"] is not None:
        tr["eta"] = _number("train", "eta", tr["eta"], nonneg=True)
    for k in ("N", "max_iter", "max_gd", "batch_size", "adapt_iters"):
        if not isinstance(tr[k], int) or isinstance(tr[k], bool):
            raise ConfigError(f"train.{k} must be an integer")
    for k in ("state_range", "control_range"):
        if not (isinstance(tr[k], (list, tuple)) and len(tr[k]) == 2):
            raise ConfigError(f"train.{k} must be a [low, high] pair")
    try:
        train = TrainConfig(seed=seed, **tr)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from None

    b_raw = raw.get("bench") or {}
    _reject_unknown("bench", b_raw, {f.name for f in fields(BenchConfig)})
    b = {f.name: take("bench", b_raw, f.name, f.default, UNSPECIFIED) for f in fields(BenchConfig)}
    for k in ("runs", "individual_iters", "transfer_source"):
        if not isinstance(b[k], int) or b[k] < 0:
            raise ConfigError(f"bench.{k} must be a non-negative integer")
    if b["runs"] < 1:
        raise ConfigError("bench.runs must be at least 1")
    if b["transfer_source"] >= len(types):
        raise ConfigError("bench.transfer_source is not a valid type index")
    b["sim_gap"] = _number("bench", "sim_gap", b["sim_gap"], positive=True)
    bench = BenchConfig(**b)

    ex_raw = raw.get("experiments") or {}
    _reject_unknown("experiments", ex_raw, EXPERIMENT_KEYS)
    experiments = {k: bool(take("experiments", ex_raw, k, True, UNSPECIFIED)) for k in EXPERIMENT_KEYS}
    out = take("config", raw, "output_dir", "out", UNSPECIFIED)

    return RunConfig(sc, followers, dist, train, bench, experiments, str(out), seed, spec, types, prov)


def default_config_path(name: str = "robot_teaming") -> Path:
    return Path(str(resources.files("stackmeta") / "configs" / f"{name}.yaml"))


def load_config(path) -> RunConfig:
    """Parse and validate a YAML config; ``path`` may also name a shipped config."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = default_config_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{p}: parse error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: parse error: {exc}") from None
    cfg = build_run_config(raw, str(p))
    for key, value, source in cfg.provenance:
        log.info("config default %s = %r [%s]", key, value, source)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(rows: Sequence[dict], schema: Sequence[str], path) -> None:
    """Write ``rows`` with header ``schema``; floats use 17 significant digits."""
    path = Path(path)
    for i, r in enumerate(rows):
        missing = [c for c in schema if c not in r]
        if missing:
            raise ValueError(f"row {i} lacks column(s) {missing}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in schema])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def trajectory_schema(n: int, r_L: int, r_F: int) -> list[str]:
    return (["t"] + [f"x{i}" for i in range(n)] + [f"uL{i}" for i in range(r_L)]
            + [f"uF{i}" for i in range(r_F)])


def trajectory_rows(tr) -> list[dict]:
    n, r_L, r_F = tr.states.shape[1], tr.u_L.shape[1], tr.u_F.shape[1]
    schema = trajectory_schema(n, r_L, r_F)
    rows = []
    for t in range(tr.states.shape[0]):
        last = t == tr.T
        vals = ([t] + list(tr.states[t]) + ([float("nan")] * (r_L + r_F) if last
                                            else list(tr.u_L[t]) + list(tr.u_F[t])))
        rows.append(dict(zip(schema, vals)))
    return rows


def save_model(M, path) -> None:
    """Plain-text matrix with a ``rows cols`` header line."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# stackmeta response model", f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(format(float(v), ".17g") for v in row) for row in M]
    path.write_text("\n".join(lines) + "\n")


def load_model(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from None
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        rows, cols = (int(v) for v in lines[0].split())
        M = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    except (ValueError, IndexError):
        raise ConfigError(f"{path}: malformed model file") from None
    if M.shape != (rows, cols):
        raise ConfigError(f"{path}: header says {rows}x{cols} but data is {M.shape}")
    if shape is not None and M.shape != tuple(shape):
        raise ConfigError(f"{path}: model has shape {M.shape}, scenario needs {tuple(shape)}")
    return M


def _write_summary(out: Path, command: str, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = {"command": command, **_plain(payload)}
    (out / "summary.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _report_rows(report) -> list[dict]:
    return [dict(r) for r in report.rows]


def _model_shape(cfg: RunConfig) -> tuple[int, int]:
    return cfg.types[0].r_F, cfg.spec.n


def cmd_train(cfg: RunConfig, out: Path, args) -> dict:
    M, trace = train_meta(cfg.tasks, cfg.type_distribution, cfg.train)
    rows = [{"iteration": r.iteration, "meta_cost": r.meta_cost, "mean_expected_cost": r.mean_expected_cost,
             "grad_norm": r.grad_norm} for r in trace.records]
    write_csv(rows, TRACE_SCHEMA, out / "meta_trace.csv")
    save_model(M, out / "model_meta.txt")
    mc = trace.meta_costs()
    return {"iterations": len(trace), "initial_meta_cost": mc[0] if len(mc) else None,
            "final_meta_cost": mc[-1] if len(mc) else None, "model": "model_meta.txt"}


def _meta_model(cfg: RunConfig, args, out: Path) -> np.ndarray:
    if args.model:
        return load_model(args.model, _model_shape(cfg))
    log.info("no --model given; training the meta model in-line")
    M, _ = train_meta(cfg.tasks, cfg.type_distribution, cfg.train)
    save_model(M, out / "model_meta.txt")
    return M


def cmd_adapt(cfg: RunConfig, out: Path, args) -> dict:
    M_meta = _meta_model(cfg, args, out)
    bench = replace(cfg.bench, runs=args.runs or cfg.bench.runs)
    report, _, adapted = run_adaptation_experiment(cfg.tasks, cfg.type_distribution, cfg.train, bench, M_meta)
    write_csv(_report_rows(report), report.columns, out / "adaptation_report.csv")
    for task, M in zip(cfg.tasks, adapted):
        save_model(M, out / f"model_adapted_{task.ftype.theta}.txt")
        tr = rollout(task, M, noise=False)
        write_csv(trajectory_rows(tr), trajectory_schema(cfg.spec.n, cfg.spec.r_L, task.ftype.r_F),
                  out / f"trajectory_adapted_{task.ftype.theta}.csv")
    ea, em, sa = report.column("expected_adapted"), report.column("expected_meta"), report.column("simulated_adapted")
    return {"types": len(adapted), "adapted_not_worse": int(np.sum(ea <= em * 1.01)),
            "simulated_within_gap": int(np.sum((sa >= ea) & (sa < (1 + bench.sim_gap) * ea)))}


def cmd_simulate(cfg: RunConfig, out: Path, args) -> dict:
    if not args.model:
        raise ConfigError("simulate requires --model")
    M = load_model(args.model, _model_shape(cfg))
    runs = args.runs or cfg.bench.runs
    rows = []
    for task in cfg.tasks:
        sim = monte_carlo_cost(task, M, runs, cfg.seed, EXP_SIMULATE, keep=True)
        rows.append({"type": task.ftype.theta, "expected": expected_cost(task.spec, task.ftype, M),
                     "simulated_mean": sim.mean_cost, "simulated_var": sim.cost_variance, "runs": runs})
        write_csv(trajectory_rows(sim.trajectories[0]),
                  trajectory_schema(cfg.spec.n, cfg.spec.r_L, task.ftype.r_F),
                  out / f"trajectory_type{task.ftype.theta}_run0.csv")
    write_csv(rows, ["type", "expected", "simulated_mean", "simulated_var", "runs"], out / "simulation_report.csv")
    return {"runs": runs, "types": len(rows)}


def cmd_unilateral(cfg: RunConfig, out: Path, args) -> dict:
    bench = replace(cfg.bench, runs=args.runs or cfg.bench.runs)
    report, models = run_unilateral_experiment(cfg.tasks, cfg.type_distribution, cfg.train, bench)
    write_csv(_report_rows(report), report.columns, out / "unilateral_report.csv")
    save_model(models[0], out / "model_unilateral.txt")
    identical = all(np.array_equal(models[0], m) for m in models)
    return {"gamma": 0.0, "models_identical": identical}


def cmd_individual(cfg: RunConfig, out: Path, args) -> dict:
    bench = replace(cfg.bench, runs=args.runs or cfg.bench.runs)
    report, individual, transferred = run_individual_experiment(cfg.tasks, cfg.train, bench)
    write_csv(_report_rows(report), report.columns, out / "individual_report.csv")
    for task, M in zip(cfg.tasks, individual):
        save_model(M, out / f"model_individual_{task.ftype.theta}.txt")
    return {"types": len(individual), "transfer_source": bench.transfer_source}


def cmd_transfer(cfg: RunConfig, out: Path, args) -> dict:
    bench = replace(cfg.bench, runs=args.runs or cfg.bench.runs)
    src = bench.transfer_source
    if args.model:
        source = load_model(args.model, _model_shape(cfg))
    else:
        ind_cfg = replace(cfg.train, alpha=bench.individual_alpha)
        source = train_individual(cfg.tasks[src], ind_cfg, bench.individual_iters, seed_key=src)
        save_model(source, out / f"model_individual_{src}.txt")
    rows = []
    for task in cfg.tasks:
        theta = task.ftype.theta
        M_tr, _ = adapt(source, task, cfg.train, streams.stream(cfg.seed, streams.ADAPT, theta))
        sim = monte_carlo_cost(task, M_tr, bench.runs, cfg.seed, EXP_TRANSFER)
        rows.append({"type": theta, "expected_transfer": expected_cost(task.spec, task.ftype, M_tr),
                     "simulated_transfer": sim.mean_cost})
        save_model(M_tr, out / f"model_transfer_{theta}.txt")
    write_csv(rows, ["type", "expected_transfer", "simulated_transfer"], out / "transfer_report.csv")
    return {"transfer_source": src, "types": len(rows)}


def cmd_check_gradients(cfg: RunConfig, out: Path, args) -> dict:
    from .gradcheck import run_gradient_checks

    results = run_gradient_checks(cfg.tasks, instances=args.instances, seed=cfg.seed)
    write_csv(results, ["check", "instance", "rel_error", "tol", "passed"], out / "gradient_checks.csv")
    failed = [r for r in results if not r["passed"]]
    return {"checks": len(results), "failed": len(failed), "max_rel_error": max(r["rel_error"] for r in results)}


COMMANDS = {
    "train": cmd_train,
    "adapt": cmd_adapt,
    "simulate": cmd_simulate,
    "baseline-unilateral": cmd_unilateral,
    "baseline-individual": cmd_individual,
    "transfer": cmd_transfer,
    "check-gradients": cmd_check_gradients,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stackmeta", description="Stackelberg meta-learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default="robot_teaming", help="YAML config path or shipped config name")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory (else STACKMETA_OUT or config)")
        p.add_argument("--model", default=None, help="stored model artifact")
        p.add_argument("--runs", type=int, default=None, help="Monte-Carlo runs per type")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "check-gradients":
            p.add_argument("--instances", type=int, default=50, help="random small instances")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
        if args.runs is not None and args.runs < 1:
            raise ConfigError("--runs must be at least 1")
        out = Path(args.out or os.environ.get("STACKMETA_OUT") or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = COMMANDS[args.command](cfg, out, args)
        payload["seed"] = cfg.seed
        _write_summary(out, args.command, payload)
        (out / "config_resolved.yaml").write_text(dump_config(cfg))
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    if args.command == "check-gradients" and payload["failed"]:
        print(f"{payload['failed']} gradient check(s) exceeded tolerance", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
