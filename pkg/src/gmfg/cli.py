"""Command-line driver: ``gmfg run|compare|sweep``.

A run is described by one JSON document (see ``RunConfig``).  Each run writes
a bundle directory holding

* ``config.json``       normalized config echo; feeding it back reproduces the run
* ``metrics.csv``       per-epoch metrics (per-iteration residuals for exact FPI)
* ``equilibrium.json``  M, Q and policy tables with state/action labels
* ``provenance.json``   package version, timestamp, seed

Relative output directories are resolved against ``$GMFG_OUTPUT_ROOT`` when
set, else the working directory.  Only ``provenance.json`` carries a
timestamp, so the other files are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, seeding
from .env import EnvironmentSpec, make_env, state_labels
from .exact import Equilibrium, TOL_BELLMAN, TOL_FPI, TOL_STAT, exact_fpi
from .graphon import Graphon, LabelDiscretization, precompute_weights
from .learner import LearnConfig, StepSchedule, learn_finite, learn_infinite
from .metrics import MetricsRow, exploitability, policy_distance, tv_distance, w1_for_env
from .nplayer import approx_equilibrium_sweep, sweep_csv

log = logging.getLogger("gmfg")

MODES = ("exact-fpi", "learn-infinite", "learn-finite", "nplayer-sweep", "toy-check")
OUTPUT_ROOT_ENV = "GMFG_OUTPUT_ROOT"
TOY_TOLERANCE = 0.05


class ConfigError(ValueError):
    pass


def _block(cls, raw: dict | None, name: str):
    raw = dict(raw or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}' block: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' block: {exc}") from exc


@dataclass(frozen=True)
class LearnerBlock:
    K: int = 50
    H: int = 20_000
    alpha0: float = 1.0
    beta0: float = 1.0
    global_tau: bool = False
    workers: int = 1
    snapshot_population: bool = True
    track_exploitability: bool = True


@dataclass(frozen=True)
class ExactBlock:
    K: int = 500
    damping: float = 1.0
    tol_fpi: float = TOL_FPI
    tol_bellman: float = TOL_BELLMAN
    tol_stat: float = TOL_STAT


@dataclass(frozen=True)
class NPlayerBlock:
    n_list: tuple = (5, 20, 80)
    replications: int = 200
    players: int = 10

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if not self.n_list or min(self.n_list) < 1:
            raise ValueError("n_list must hold positive player counts")
        if self.replications < 2 or self.players < 1:
            raise ValueError("replications must be >= 2 and players >= 1")


@dataclass(frozen=True)
class RunConfig:
    mode: str
    env: dict
    graphon: dict
    disc: int
    eta: float = 0.1
    seed: int = 0
    record_every: int = 1
    benchmark: bool = True
    output_dir: str = "gmfg_run"
    learner: LearnerBlock = field(default_factory=LearnerBlock)
    exact: ExactBlock = field(default_factory=ExactBlock)
    nplayer: NPlayerBlock = field(default_factory=NPlayerBlock)

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        mode = raw.get("mode")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {mode!r}")
        if mode == "toy-check":
            raw = {**toy_defaults(), **raw}
        for key in ("env", "graphon", "disc"):
            if key not in raw:
                raise ConfigError(f"missing required key '{key}' for mode {mode}")
        blocks = {
            "learner": _block(LearnerBlock, raw.pop("learner", None), "learner"),
            "exact": _block(ExactBlock, raw.pop("exact", None), "exact"),
            "nplayer": _block(NPlayerBlock, raw.pop("nplayer", None), "nplayer"),
        }
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw, **blocks)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["nplayer"]["n_list"] = list(self.nplayer.n_list)
        return out

    def validate(self):
        if not isinstance(self.disc, int) or isinstance(self.disc, bool) or self.disc < 1:
            raise ConfigError(f"disc must be a positive integer, got {self.disc!r}")
        if not (isinstance(self.eta, (int, float)) and self.eta > 0):
            raise ConfigError(f"eta must be positive, got {self.eta!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        try:
            env = self.build_env()
            Graphon.from_config(self.graphon)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid env/graphon block: {exc}") from exc
        if self.mode == "learn-infinite" and env.finite:
            raise ConfigError("learn-infinite needs an infinite-horizon env (set \"horizon\": null)")
        if self.mode in ("learn-finite", "nplayer-sweep", "toy-check") and not env.finite:
            raise ConfigError(f"{self.mode} needs a finite-horizon env")
        if self.mode == "toy-check" and env.name != "toy":
            raise ConfigError("toy-check runs on the toy env")

    def build_env(self) -> EnvironmentSpec:
        return make_env(self.env)

    def learn_config(self, seed: int | None = None) -> LearnConfig:
        lb = self.learner
        return LearnConfig(
            K=lb.K,
            H=lb.H,
            D=self.disc,
            eta=float(self.eta),
            seed=self.seed if seed is None else seed,
            schedule=StepSchedule(lb.alpha0, lb.beta0, lb.global_tau),
            record_every=self.record_every,
            workers=lb.workers,
            snapshot_population=lb.snapshot_population,
            track_exploitability=lb.track_exploitability,
        )


def toy_defaults() -> dict:
    """Toy check: threshold graphon, 16 classes, 2000 epochs, seeds seed..seed+2.

    eta=0.5 keeps the learner's slowest mode on this game well damped; at
    eta near 0.1 that mode is close to neutral and single runs drift.
    """
    return {
        "env": {"env": "toy"},
        "graphon": {"kind": "threshold"},
        "disc": 16,
        "eta": 0.5,
        "learner": {"K": 2000, "track_exploitability": False},
        "benchmark": False,
        "output_dir": "toy_check",
    }


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MetricsRow.FIELDS)
    for row in rows:
        d = row.as_dict()
        writer.writerow([_fmt(d[k]) for k in MetricsRow.FIELDS])
    return buf.getvalue()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def equilibrium_dump(env: EnvironmentSpec, D: int, eta: float, M, Q, pi, extra: dict | None = None) -> dict:
    out = {
        "env": env.name,
        "states": state_labels(env),
        "actions": [a if isinstance(a, (int, float, str)) else str(a) for a in env.actions],
        "D": D,
        "horizon": env.horizon,
        "gamma": env.gamma,
        "eta": eta,
        "M": np.asarray(M).tolist(),
        "Q": np.asarray(Q).tolist(),
        "pi": np.asarray(pi).tolist(),
    }
    out.update(extra or {})
    return out


@dataclass
class Bundle:
    path: Path
    files: dict[str, str]
    summary: dict


def _resolve_output(output_dir: str) -> Path:
    p = Path(output_dir)
    if p.is_absolute():
        return p
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / p if root else p


def _exact_rows(eq: Equilibrium, env, weights) -> list[MetricsRow]:
    rows = [MetricsRow(epoch=k, tv_gap_M=gap, l2_gap_Q=None) for k, gap in enumerate(eq.history)]
    if rows:
        rows[-1].exploitability = exploitability(env, weights, eq.M, eq.pi)
    return rows


def _solve_exact(cfg: RunConfig, env, weights) -> Equilibrium:
    ex = cfg.exact
    return exact_fpi(
        env, weights, K=ex.K, damping=ex.damping, eta=float(cfg.eta),
        tol_fpi=ex.tol_fpi, tol_bellman=ex.tol_bellman, tol_stat=ex.tol_stat,
    )


def _toy_check(cfg: RunConfig, env, weights):
    seeds = [cfg.seed + i for i in range(3)]
    results = [learn_finite(env, weights, cfg.learn_config(s)) for s in seeds]
    pi = np.median([r.pi[0, :, 0, :] for r in results], axis=0)  # (D, A) at the start state
    mass = np.median([r.M[1, :, 1:] for r in results], axis=0)  # (D, 2) on -1, +1
    dev_pi = float(np.abs(pi - 0.5).max())
    dev_mass = float(np.abs(mass - 0.5).max())
    ok = dev_pi <= TOY_TOLERANCE and dev_mass <= TOY_TOLERANCE
    line = (
        f"toy-check {'PASS' if ok else 'FAIL'}: seeds {seeds} median, "
        f"max |pi - 1/2| = {dev_pi:.4f}, max |mass - 1/2| = {dev_mass:.4f}, tolerance {TOY_TOLERANCE}"
    )
    summary = {"passed": ok, "max_policy_deviation": dev_pi, "max_mass_deviation": dev_mass, "seeds": seeds}
    return results[0], line, summary


def run(cfg: RunConfig, write: bool = True) -> Bundle:
    """Execute one configured run and (optionally) write its bundle."""
    env = cfg.build_env()
    g = Graphon.from_config(cfg.graphon)
    disc = LabelDiscretization(cfg.disc)
    weights = precompute_weights(g, disc)
    files: dict[str, str] = {}
    summary: dict[str, Any] = {"mode": cfg.mode}
    eta = float(cfg.eta)

    if cfg.mode in ("exact-fpi", "nplayer-sweep"):
        eq = _solve_exact(cfg, env, weights)
        rows = _exact_rows(eq, env, weights)
        dump = equilibrium_dump(env, cfg.disc, eta, eq.M, eq.Q, eq.pi, {"converged": eq.converged})
        summary.update(converged=eq.converged, iterations=len(eq.history), exploitability=rows[-1].exploitability if rows else None)
        if cfg.mode == "nplayer-sweep":
            nb = cfg.nplayer
            sweep_rows = approx_equilibrium_sweep(
                env, g, eq.pi, disc, nb.n_list, nb.replications,
                seeding.stream(cfg.seed, seeding.NPLAYER), players=nb.players,
            )
            files["sweep.csv"] = sweep_csv(sweep_rows)
            summary["sweep"] = [dataclasses.asdict(r) for r in sweep_rows]
    elif cfg.mode in ("learn-infinite", "learn-finite"):
        bench = _solve_exact(cfg, env, weights) if cfg.benchmark else None
        learn = learn_infinite if cfg.mode == "learn-infinite" else learn_finite
        res = learn(env, weights, cfg.learn_config(), benchmark=bench)
        rows = res.history
        dump = equilibrium_dump(env, cfg.disc, eta, res.M, res.Q, res.pi)
        summary["diagnostics"] = res.diagnostics
        if rows:
            summary["final"] = rows[-1].as_dict()
    else:  # toy-check
        res, line, toy = _toy_check(cfg, env, weights)
        rows = res.history
        dump = equilibrium_dump(env, cfg.disc, eta, res.M, res.Q, res.pi)
        files["toy_check.txt"] = line + "\n"
        summary.update(toy, line=line)

    files["metrics.csv"] = metrics_csv(rows)
    files["equilibrium.json"] = _dump_json(dump)
    files["config.json"] = _dump_json(cfg.to_dict())
    provenance = {
        "artifact_version": __version__,
        "numpy_version": np.__version__,
        "seed": cfg.seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    files["provenance.json"] = _dump_json(provenance)

    out = _resolve_output(cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
    return Bundle(out, files, summary)


# --- compare -------------------------------------------------------------------

def load_equilibrium(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "equilibrium.json"
    try:
        return json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load equilibrium from {path}: {exc}") from exc


def compare(a: dict, b: dict) -> dict:
    """TV, W1 and policy distances between two equilibrium dumps."""
    for key in ("env", "states", "actions", "D", "horizon"):
        if a.get(key) != b.get(key):
            raise ValueError(f"bundles differ in {key}: {a.get(key)!r} vs {b.get(key)!r}")
    Ma, Mb = np.asarray(a["M"], float), np.asarray(b["M"], float)
    pa, pb = np.asarray(a["pi"], float), np.asarray(b["pi"], float)
    if Ma.shape != Mb.shape or pa.shape != pb.shape:
        raise ValueError(f"table shapes differ: M {Ma.shape} vs {Mb.shape}, pi {pa.shape} vs {pb.shape}")
    env_cfg = {"env": a["env"], "horizon": a["horizon"], "gamma": a["gamma"]}
    try:
        env = make_env(env_cfg)
        w1 = w1_for_env(env, Ma, Mb) if env.n_states == Ma.shape[-1] else None
    except ValueError:
        w1 = None
    return {"tv": tv_distance(Ma, Mb), "w1": w1, "policy": policy_distance(pa, pb)}


# --- entry point ----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmfg", description="Graphon mean field game solver and learner")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--output-dir", default=None)
    p_cmp = sub.add_parser("compare", help="distance report between two bundles")
    p_cmp.add_argument("a")
    p_cmp.add_argument("b")
    p_sw = sub.add_parser("sweep", help="n-player approximate-equilibrium sweep")
    p_sw.add_argument("config")
    p_sw.add_argument("--seed", type=int, default=None)
    p_sw.add_argument("--output-dir", default=None)
    return ap


def _configured(args, force_mode: str | None = None) -> RunConfig:
    raw = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
    if raw is None:
        raise ConfigError(f"config file not found: {args.config}")
    if force_mode:
        raw["mode"] = force_mode
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    return RunConfig.from_dict(raw)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            report = compare(load_equilibrium(args.a), load_equilibrium(args.b))
            print(json.dumps(report, sort_keys=True))
            return 0
        cfg = _configured(args, "nplayer-sweep" if args.command == "sweep" else None)
        bundle = run(cfg)
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    if "line" in bundle.summary:
        print(bundle.summary["line"])
    if "sweep.csv" in bundle.files:
        print(bundle.files["sweep.csv"], end="")
    print(f"wrote {bundle.path}")
    return 0 if bundle.summary.get("passed", True) else 1


if __name__ == "__main__":
    sys.exit(main())
