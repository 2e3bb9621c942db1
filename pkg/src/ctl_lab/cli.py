"""Command-line entry point: data generation, divergence and bound tables,
training runs and the learner comparison.

Every command reads one JSON config (defaults below), applies ``--set
key.path=value`` overrides and the named flags, and writes CSVs whose first
line is ``# ctl-lab v<version> config-hash=<hex>``.

Exit codes: 0 success, 2 configuration or missing-data error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bounds import BoundInputs, baseline_bound, continuous_bound, delta_cap, static_bound
from .data import (GaussianDomainSpec, LabeledDomainSample, domain_filename, generate_evolving_sequence,
                   read_domain_csv, stamp_seed, write_domain_csv)
from .divergence import (GridStats, HypothesisGrid, a_distance_from_stats, c_divergence_from_stats, erm_hypothesis,
                         rademacher_mc, sample_xy, zero_one_error)
from .model import NumericAbort, TrainConfig, accuracy, init_params, predict, save_checkpoint, train
from .translate import LEARNERS, StampData, detect_negative_transfer, labeled_view, prepare, run_learner

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "CTL_SEED"


class ConfigError(ValueError):
    """Bad configuration value, unknown key or missing input files."""


_TRAIN_DEFAULTS = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig) if f.name != "seed"}

DEFAULT_CONFIG = {
    "seed": 42,
    "out": "runs/default",
    "jobs": 1,
    "data": {
        "stamps": 8,
        "n_pos": 1000,
        "n_neg": 1000,
        "radius": 1.5,
        "stdev": math.sqrt(0.5),
        "theta_max": math.pi,
        "layout": "antipodal",
        "n_labeled": 100,
        "test_fraction": 0.2,
    },
    "grid": {"angles": 360, "offsets": 81, "offset_low": -4.0, "offset_high": 4.0,
             "pair_angles": 72, "pair_offsets": 17},
    "divergence": {"a_distance_scale": 1.0},
    "bounds": {"kind": "static", "delta": 0.05, "M": 1.0, "rademacher_draws": 200},
    "train": dict(_TRAIN_DEFAULTS, stamp=1),
    "learners": list(LEARNERS),
}

# keys left out of the hash: where results go and how many workers compute them
_UNHASHED = ("out", "jobs")


# -- configuration -------------------------------------------------------------

def _merge(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            _merge(base[key], value, where + ".")
        else:
            base[key] = _coerce(where, base[key], value)
    return base


def _coerce(where: str, default, value):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where!r} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where!r} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where!r} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where!r} must be a list")
        return value
    if not isinstance(value, type(default)):
        raise ConfigError(f"{where!r} must be of type {type(default).__name__}")
    return value


def parse_override(text: str) -> dict:
    """``a.b.c=value`` to ``{"a": {"b": {"c": value}}}``; the value is JSON or a bare string."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw.strip()
    out: dict = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def build(cls, path: Optional[str] = None, overrides: Sequence[str] = (), seed: Optional[int] = None,
              env: Optional[dict] = None) -> "ExperimentConfig":
        """Defaults, then the file, then overrides; seed from flag, ``CTL_SEED``, file, default."""
        env = os.environ if env is None else env
        cfg = copy.deepcopy(DEFAULT_CONFIG)
        if path is not None:
            try:
                with open(path) as fh:
                    loaded = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError("config root must be an object")
            _merge(cfg, loaded)
        for text in overrides:
            _merge(cfg, parse_override(text))
        if seed is not None:
            cfg["seed"] = seed
        elif env.get(SEED_ENV):
            try:
                cfg["seed"] = int(env[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        out = cls(cfg)
        out.validate()
        return out

    def validate(self):
        r = self.raw
        if r["seed"] is None or r["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        unknown = [n for n in r["learners"] if n not in LEARNERS]
        if unknown or not r["learners"]:
            raise ConfigError(f"unknown learners {unknown}; choose from {list(LEARNERS)}")
        if r["bounds"]["kind"] not in ("static", "continuous"):
            raise ConfigError("bounds.kind must be 'static' or 'continuous'")
        if r["jobs"] < 1:
            raise ConfigError("jobs must be >= 1")
        if not 1 <= r["train"]["stamp"] <= r["data"]["stamps"]:
            raise ConfigError("train.stamp must name a target stamp")
        try:
            self.domain_spec()
            self.grid()
            self.pair_grid()
            self.train_config()
            BoundInputs(0.0, delta=r["bounds"]["delta"], M=r["bounds"]["M"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if r["data"]["stamps"] < 1 or r["data"]["n_labeled"] < 0:
            raise ConfigError("data.stamps must be >= 1 and data.n_labeled >= 0")
        if r["bounds"]["rademacher_draws"] < 1:
            raise ConfigError("bounds.rademacher_draws must be >= 1")

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out(self) -> str:
        return self.raw["out"]

    @property
    def hash(self) -> str:
        hashed = {k: v for k, v in self.raw.items() if k not in _UNHASHED}
        blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def header(self) -> str:
        return f"# ctl-lab v{__version__} config-hash={self.hash}"

    def domain_spec(self) -> GaussianDomainSpec:
        d = self.raw["data"]
        return GaussianDomainSpec(n_pos=d["n_pos"], n_neg=d["n_neg"], radius=d["radius"], stdev=d["stdev"],
                                  seed=self.seed, layout=d["layout"])

    def grid(self) -> HypothesisGrid:
        g = self.raw["grid"]
        return HypothesisGrid(g["angles"], g["offsets"], (g["offset_low"], g["offset_high"]))

    def pair_grid(self) -> HypothesisGrid:
        g = self.raw["grid"]
        return HypothesisGrid(g["pair_angles"], g["pair_offsets"], (g["offset_low"], g["offset_high"]))

    def train_config(self) -> TrainConfig:
        t = {k: v for k, v in self.raw["train"].items() if k != "stamp"}
        return TrainConfig(seed=self.seed, **t)

    def data_dir(self) -> str:
        return os.path.join(self.out, "data")


# -- CSV helpers -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.10g}"
    return str(v)


def write_csv(path: str, header: str, columns: Sequence[str], rows: Sequence[dict]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def read_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# -- data ------------------------------------------------------------------------

def _generate(cfg: ExperimentConfig) -> list[LabeledDomainSample]:
    d = cfg.raw["data"]
    doms = generate_evolving_sequence(d["stamps"], cfg.domain_spec(), include_source=True, theta_max=d["theta_max"])
    return labeled_view(doms, d["n_labeled"], d["test_fraction"], cfg.seed)


def cmd_gen_data(cfg: ExperimentConfig) -> list[str]:
    """Write ``S1_t0.csv`` and ``T<i>_t<i>.csv`` under ``<out>/data``."""
    return [write_domain_csv(d, cfg.data_dir(), cfg.header) for d in _generate(cfg)]


def load_domains(cfg: ExperimentConfig) -> list[LabeledDomainSample]:
    """Read the generated files; refuse files that were written under other settings."""
    names = ["S1"] + [f"T{i}" for i in range(1, cfg.raw["data"]["stamps"] + 1)]
    doms = []
    for stamp, name in enumerate(names):
        path = os.path.join(cfg.data_dir(), domain_filename(name, stamp))
        if not os.path.exists(path):
            raise ConfigError(f"missing data file {path}; run gen-data first")
        doms.append(read_domain_csv(path))
    d = cfg.raw["data"]
    expected = labeled_view(doms, d["n_labeled"], d["test_fraction"], cfg.seed)
    for got, want in zip(doms, expected):
        if not np.array_equal(got.labeled, want.labeled):
            raise ConfigError(f"{got.domain_id} labeled flags do not match this config; rerun gen-data")
    return doms


def _split(cfg: ExperimentConfig, doms) -> list[StampData]:
    d = cfg.raw["data"]
    return prepare(doms, d["n_labeled"], d["test_fraction"], cfg.seed)


# -- divergence tables ------------------------------------------------------------

class _StatsCache:
    def __init__(self, doms, grid: HypothesisGrid):
        self.grid = grid
        self.stats = [GridStats.from_xy(*sample_xy(d), grid) for d in doms]

    def c_div(self, i, j):
        return c_divergence_from_stats(self.stats[i], self.stats[j], self.grid)

    def a_dist(self, i, j, scale=1.0):
        return a_distance_from_stats(self.stats[i], self.stats[j], self.grid, scale)


def divergence_rows(cfg: ExperimentConfig, doms, cache: Optional[_StatsCache] = None) -> list[dict]:
    cache = cache or _StatsCache(doms, cfg.grid())
    scale = cfg.raw["divergence"]["a_distance_scale"]
    pairs = [(0, i) for i in range(1, len(doms))] + [(i - 1, i) for i in range(2, len(doms))]
    rows = []
    for i, j in pairs:
        for kind, est in (("c_divergence", cache.c_div(i, j)), ("a_distance", cache.a_dist(i, j, scale))):
            rows.append({"pair": f"{doms[i].domain_id}-{doms[j].domain_id}", "kind": kind, "value": est.value,
                         "angle_cells": est.angle_cells, "offset_cells": est.offset_cells, "seed": cfg.seed})
    return rows


DIVERGENCE_COLUMNS = ("pair", "kind", "value", "angle_cells", "offset_cells", "seed")
FIGURE2_COLUMNS = ("stamp", "pair", "c_divergence", "a_distance", "source_accuracy")


def cmd_divergence(cfg: ExperimentConfig) -> str:
    doms = load_domains(cfg)
    return write_csv(os.path.join(cfg.out, "divergence.csv"), cfg.header, DIVERGENCE_COLUMNS,
                     divergence_rows(cfg, doms))


def figure2_rows(cfg: ExperimentConfig, doms) -> list[dict]:
    """Per target stamp: divergences from the source and accuracy of the source risk minimizer."""
    grid = cfg.grid()
    cache = _StatsCache(doms, grid)
    h_src, _, _ = erm_hypothesis(doms[0], grid)
    scale = cfg.raw["divergence"]["a_distance_scale"]
    return [{"stamp": t, "pair": f"{doms[0].domain_id}-{doms[t].domain_id}",
             "c_divergence": cache.c_div(0, t).value, "a_distance": cache.a_dist(0, t, scale).value,
             "source_accuracy": 1.0 - zero_one_error(h_src, doms[t])}
            for t in range(1, len(doms))]


def cmd_figure2(cfg: ExperimentConfig) -> list[str]:
    doms = load_domains(cfg)
    rows = figure2_rows(cfg, doms)
    div = [r for r in divergence_rows(cfg, doms) if r["pair"].startswith(doms[0].domain_id + "-")]
    return [write_csv(os.path.join(cfg.out, "divergence.csv"), cfg.header, DIVERGENCE_COLUMNS, div),
            write_csv(os.path.join(cfg.out, "figure2.csv"), cfg.header, FIGURE2_COLUMNS, rows)]


# -- bounds ------------------------------------------------------------------------

def bound_rows(cfg: ExperimentConfig, doms, kind: Optional[str] = None) -> list[dict]:
    """Bounds on the target error of the source risk minimizer, one row per target stamp.

    ``static`` uses the source and the current target; ``continuous`` uses the
    source plus every earlier target, with the drift cap set to the largest
    consecutive divergence seen so far.
    """
    kind = kind or cfg.raw["bounds"]["kind"]
    b = cfg.raw["bounds"]
    grid = cfg.grid()
    cache = _StatsCache(doms, grid)
    h, eps_s, _ = erm_hypothesis(doms[0], grid)
    errs = [zero_one_error(h, d) for d in doms]
    rads = [rademacher_mc(d, grid, b["rademacher_draws"], stamp_seed(cfg.seed, 3000 + d.time_stamp)).value
            for d in doms] if kind == "static" else None
    rows = []
    for t in range(1, len(doms)):
        if kind == "static":
            inputs = BoundInputs(eps_s, cache.c_div(0, t).value, rad_source=rads[0], rad_target=rads[t],
                                 m_source=len(doms[0]), m_targets=(len(doms[t]),), M=b["M"], delta=b["delta"])
            ours = static_bound(inputs)
        else:
            steps = [cache.c_div(i - 1, i).value for i in range(1, t + 1)]
            inputs = BoundInputs(eps_s, eps_hat_targets=errs[1:t], m_source=len(doms[0]),
                                 m_targets=[len(d) for d in doms[1:t]] or (1,), M=b["M"], delta=b["delta"],
                                 Delta=delta_cap(steps))
            ours = continuous_bound(inputs, t - 1)
        base = baseline_bound(doms[0], doms[t], h, grid, cfg.pair_grid())
        row = {"stamp": t, "target_error": errs[t], "our_bound": ours.value, "baseline_bound": base.value}
        row.update({f"term:{k}": v for k, v in ours.terms.items()})
        row.update({f"term:baseline_{k}": v for k, v in base.terms.items()})
        rows.append(row)
    return rows


def _columns(rows) -> list[str]:
    head = ["stamp", "target_error", "our_bound", "baseline_bound"]
    return head + [k for k in rows[0] if k not in head]


def cmd_bounds(cfg: ExperimentConfig, kind: Optional[str] = None) -> str:
    rows = bound_rows(cfg, load_domains(cfg), kind)
    return write_csv(os.path.join(cfg.out, "bounds.csv"), cfg.header, _columns(rows), rows)


def cmd_figure3(cfg: ExperimentConfig) -> str:
    """Static bound against the discrepancy baseline for the source risk minimizer."""
    return cmd_bounds(cfg, "static")


# -- training and the learner comparison ---------------------------------------------

HISTORY_COLUMNS = ("epoch", "loss", "cls_acc_src", "cls_acc_tgt", "latent_div", "eta_p", "lambda_p")
TRACE_COLUMNS = ("stamp", "learner", "acc", "dc_consecutive", "dc_from_source", "our_bound", "baseline_bound",
                 "neg_transfer_flag")


def cmd_train(cfg: ExperimentConfig) -> list[str]:
    """Fit ``J(S, T_k)`` once for ``k = train.stamp``; save weights and the per-epoch history."""
    stamps = _split(cfg, load_domains(cfg))
    k = cfg.raw["train"]["stamp"]
    config = cfg.train_config()
    params, hist = train(init_params(config.seed), config, stamps[0].train, stamps[k].train)
    ckpt = os.path.join(cfg.out, f"model_t{k}.npz")
    os.makedirs(cfg.out, exist_ok=True)
    save_checkpoint(ckpt, params)
    path = write_csv(os.path.join(cfg.out, f"history_t{k}.csv"), cfg.header, HISTORY_COLUMNS, hist.rows)
    print(f"target test accuracy at T{k}: {accuracy(params, stamps[k].test):.4f}")
    return [ckpt, path]


def _run_one(args):
    name, source, targets, config = args
    return name, run_learner(name, source, targets, config)


def run_learners(names: Sequence[str], stamps: Sequence[StampData], config: TrainConfig,
                 jobs: int = 1) -> dict:
    """Independent learners, optionally in worker processes; each is seeded on its own."""
    work = [(n, stamps[0], stamps[1:], config) for n in names]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            return dict(pool.map(_run_one, work))
    return dict(map(_run_one, work))


def trace_rows(cfg: ExperimentConfig, doms, names: Sequence[str], traces: dict) -> list[dict]:
    """Per (stamp, learner): accuracy, divergences, bounds for the learner's classifier, and its flag.

    ``our_bound`` is the continuous bound evaluated on the source training
    split and the labeled points of earlier stamps.
    """
    grid = cfg.grid()
    b = cfg.raw["bounds"]
    stamps = _split(cfg, doms)
    cache = _StatsCache(doms, grid)
    d_cons = {t: cache.c_div(t - 1, t).value for t in range(1, len(doms))}
    d_src = {t: cache.c_div(0, t).value for t in range(1, len(doms))}
    reference = traces["target_erm"]
    flags = {n: {f["stamp"]: f["flag"] for f in detect_negative_transfer(traces[n], reference, d_src)}
             for n in names}
    src_train = stamps[0].train
    hist_labeled = [s.train.subset(np.flatnonzero(s.train.labeled)) for s in stamps]
    rows = []
    for t in range(1, len(doms)):
        for n in names:
            trace = traces[n]
            rec = next(r for r in trace.records if r.stamp == t)
            params = trace.stage_params[trace.stamps.index(t)]

            def h(x, params=params):
                return predict(params, x)

            inputs = BoundInputs(zero_one_error(h, src_train),
                                 eps_hat_targets=[zero_one_error(h, hist_labeled[i]) for i in range(1, t)],
                                 m_source=len(src_train),
                                 m_targets=[len(hist_labeled[i]) for i in range(1, t)] or (1,),
                                 M=b["M"], delta=b["delta"], Delta=delta_cap([d_cons[i] for i in range(1, t + 1)]))
            ours = continuous_bound(inputs, t - 1).value
            base = baseline_bound(stamps[0].train, stamps[t].train, h, grid, cfg.pair_grid()).value
            rows.append({"stamp": t, "learner": n, "acc": rec.acc, "dc_consecutive": d_cons[t],
                         "dc_from_source": d_src[t], "our_bound": ours, "baseline_bound": base,
                         "neg_transfer_flag": flags[n][t]})
    return rows


def cmd_table(cfg: ExperimentConfig, names: Optional[Sequence[str]] = None) -> str:
    """Run the learners over all stamps and write ``trace.csv`` (stamp-major, learner order kept)."""
    names = list(names or cfg.raw["learners"])
    doms = load_domains(cfg)
    stamps = _split(cfg, doms)
    to_run = names + ([] if "target_erm" in names else ["target_erm"])
    traces = run_learners(to_run, stamps, cfg.train_config(), cfg.raw["jobs"])
    rows = trace_rows(cfg, doms, names, traces)
    return write_csv(os.path.join(cfg.out, "trace.csv"), cfg.header, TRACE_COLUMNS, rows)


def cmd_run_continuous(cfg: ExperimentConfig) -> str:
    return cmd_table(cfg, ["translate"])


# -- argument parsing ------------------------------------------------------------------

COMMANDS = {
    "gen-data": cmd_gen_data,
    "divergence": cmd_divergence,
    "bounds": cmd_bounds,
    "train": cmd_train,
    "run-continuous": cmd_run_continuous,
    "figure2": cmd_figure2,
    "figure3": cmd_figure3,
    "table": cmd_table,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help=f"overrides {SEED_ENV} and the config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--stamps", type=int, help="number of target stamps")
    common.add_argument("--grid-angles", type=int)
    common.add_argument("--grid-offsets", type=int)
    common.add_argument("--delta", type=float, help="confidence parameter of the bounds")
    common.add_argument("--lambda", dest="lambda_elbo", type=float, help="ELBO weight")
    common.add_argument("--a-scale", type=float, help="A-distance scale (2 gives the conventional 2x form)")
    common.add_argument("--jobs", type=int, help="worker processes for independent learners")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY.PATH=VALUE")
    parser = argparse.ArgumentParser(prog="ctl-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ctl-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args, env: Optional[dict] = None) -> ExperimentConfig:
    overrides = list(args.overrides)
    named = (("out", args.out), ("data.stamps", args.stamps), ("grid.angles", args.grid_angles),
             ("grid.offsets", args.grid_offsets), ("bounds.delta", args.delta),
             ("train.lambda_elbo", args.lambda_elbo), ("divergence.a_distance_scale", args.a_scale),
             ("jobs", args.jobs))
    overrides += [f"{k}={json.dumps(v)}" for k, v in named if v is not None]
    return ExperimentConfig.build(args.config, overrides, args.seed, env)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"ctl-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"ctl-lab: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in result if isinstance(result, list) else [result]:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
