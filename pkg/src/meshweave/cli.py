"""Command-line sweeps: policy x mean waiting time x replications, written as CSV.

Config files are flat ``key = value`` text. ``#`` starts a comment, lists are
comma-separated, and durations accept an ``s``/``m``/``h``/``d`` suffix::

    peer_count = 1000
    policies = mlh+ex, scamp-like
    lambda_inv_values = 1h, 4h
    replications = 5
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import multiprocessing
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import simulator, topology
from .configurator import POLICIES
from .core_model import InvariantViolation
from .simulator import ScenarioConfig

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2

DEFAULT_LAMBDAS = (1800.0, 3600.0, 7200.0, 14400.0, 28800.0)
DURATION_SUFFIX = {"s": 1.0, "m": 60.0, "h": 3600.0, "d": 86400.0}
# swept per run, so not settable as scenario keys
SWEPT = {"policy": "policies", "mean_waiting_seconds": "lambda_inv_values", "seed": None}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    policies: tuple[str, ...] = POLICIES
    lambda_inv_values: tuple[float, ...] = DEFAULT_LAMBDAS
    replications: int = 1
    output_path: str | None = None

    def __post_init__(self):
        if not self.policies:
            raise ValueError("policies must not be empty")
        if not self.lambda_inv_values:
            raise ValueError("lambda_inv_values must not be empty")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        for p in self.policies:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; expected one of {', '.join(POLICIES)}")
        for lam in self.lambda_inv_values:
            if not lam > 0:
                raise ValueError(f"mean waiting times must be positive, got {lam}")


# -- value parsing -------------------------------------------------------------


def parse_duration(text: str) -> float:
    text = text.strip()
    scale = DURATION_SUFFIX.get(text[-1:].lower())
    if scale is not None:
        text = text[:-1]
    return float(text) * (scale or 1.0)


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def parse_request_distribution(text: str):
    """``1:1, 2:1, 1+2:1`` -> (((1,), 1.0), ((2,), 1.0), ((1, 2), 1.0))."""
    pairs = []
    for item in _split_list(text):
        subset, sep, weight = item.partition(":")
        if not sep:
            raise ValueError(f"expected subset:weight, got {item!r}")
        pairs.append((tuple(int(k) for k in subset.split("+")), float(weight)))
    return tuple(pairs)


def _split_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _scenario_parsers() -> dict:
    parsers = {}
    for f in dataclasses.fields(ScenarioConfig):
        if f.name in SWEPT:
            continue
        kind = str(f.type)
        if f.name == "request_distribution":
            parsers[f.name] = parse_request_distribution
        elif f.name.endswith("_seconds"):
            parsers[f.name] = parse_duration
        elif kind.startswith("bool"):
            parsers[f.name] = parse_bool
        elif kind.startswith("int"):
            parsers[f.name] = parse_int
        elif kind.startswith("float"):
            parsers[f.name] = float
        else:
            parsers[f.name] = str
    return parsers


SWEEP_PARSERS = {
    "policies": lambda v: tuple(_split_list(v)),
    "lambda_inv_values": lambda v: tuple(parse_duration(x) for x in _split_list(v)),
    "replications": parse_int,
    "output": str,
    "seed": parse_int,
}


def parse_config_text(text: str, source: str = "<config>") -> SweepSpec:
    scenario_parsers = _scenario_parsers()
    scenario: dict = {}
    sweep: dict = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if key in lines:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {lines[key]})")
        lines[key] = lineno
        if key in SWEEP_PARSERS:
            target, parser = sweep, SWEEP_PARSERS[key]
        elif key in scenario_parsers:
            target, parser = scenario, scenario_parsers[key]
        else:
            hint = f"; use {SWEPT[key]!r}" if SWEPT.get(key) else ""
            raise ConfigError(f"{where}: unknown key {key!r}{hint}")
        try:
            target[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    if "seed" in sweep:
        scenario["seed"] = sweep.pop("seed")

    def blame(message: str) -> str:
        for key, lineno in lines.items():
            if key in message:
                return f"{source}:{lineno}: {message}"
        return f"{source}: {message}"

    try:
        base = ScenarioConfig(**scenario)
        return SweepSpec(
            base=base,
            policies=sweep.get("policies", POLICIES),
            lambda_inv_values=sweep.get("lambda_inv_values", DEFAULT_LAMBDAS),
            replications=sweep.get("replications", 1),
            output_path=sweep.get("output"),
        )
    except ValueError as exc:
        raise ConfigError(blame(str(exc))) from None


def parse_config(path) -> SweepSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


# -- sweep ---------------------------------------------------------------------


def derive_seed(base_seed: int, lambda_index: int, replication: int) -> int:
    """Seed of one run: SeedSequence entropy mixing of (base, lambda index, replication).

    Policies share a seed, so they are compared under common random numbers.
    """
    state = np.random.SeedSequence([base_seed, lambda_index, replication]).generate_state(1)
    return int(state[0])


def run_configs(spec: SweepSpec) -> list[list[ScenarioConfig]]:
    """Scenario configs grouped by (policy, mean waiting time), replications inner."""
    base = spec.base
    topo = base.topology_seed if base.topology_seed is not None else base.seed
    groups = []
    for policy in spec.policies:
        for li, lam in enumerate(spec.lambda_inv_values):
            groups.append([
                replace(base, policy=policy, mean_waiting_seconds=lam, topology_seed=topo,
                        seed=derive_seed(base.seed, li, rep))
                for rep in range(spec.replications)
            ])  # fmt: skip
    return groups


def _run_one(config: ScenarioConfig):
    try:
        return "ok", simulator.run(config)
    except InvariantViolation as exc:
        return "violation", (str(exc), exc.snapshot, config)


def summary_table(groups) -> str:
    rows = [("policy", "lambda_inv_s", "batches", "joining", "+/-", "congestion", "+/-")]
    for reports in groups:
        r = simulator.summary_row(reports)
        rows.append((r[0], r[1], r[3], r[4], r[6], r[5], r[7]))
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows) + "\n"


def run_sweep(spec: SweepSpec, jobs: int = 1, out=None, table=None, snapshot_dir=".") -> int:
    """Run every configured run, write CSV to ``out`` and a summary table to ``table``."""
    groups = run_configs(spec)
    flat = [cfg for group in groups for cfg in group]
    if jobs > 1 and len(flat) > 1:
        with multiprocessing.Pool(min(jobs, len(flat))) as pool:
            results = pool.map(_run_one, flat, chunksize=1)
    else:
        results = []
        for cfg in flat:
            results.append(_run_one(cfg))
            if results[-1][0] != "ok":
                break
    for status, payload in results:
        if status != "ok":
            message, snapshot, cfg = payload
            path = Path(snapshot_dir) / f"meshweave-violation-{cfg.policy}-{cfg.mean_waiting_seconds:g}-{cfg.seed}.txt"
            path.write_text(f"# {message}\n# {cfg}\n{snapshot}")
            print(f"invariant violation: {message}\nsnapshot written to {path}", file=sys.stderr)
            return EXIT_VIOLATION
    reports = iter(payload for _, payload in results)
    report_groups = [[next(reports) for _ in group] for group in groups]
    simulator.write_csv(report_groups, out if out is not None else sys.stdout)
    (table if table is not None else sys.stdout).write(summary_table(report_groups))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshweave", description="Run P2P overlay churn sweeps and emit CSV.")
    parser.add_argument("--config", required=True, help="flat key = value scenario file")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    parser.add_argument("--out", help="CSV path (default: standard output)")
    parser.add_argument("--dump-topology", metavar="PATH", help="write the AS graph and node placement")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = parse_config(args.config)
        env_seed = os.environ.get("MESHWEAVE_SEED")
        if env_seed is not None:
            try:
                seed = int(env_seed)
            except ValueError:
                raise ConfigError(f"MESHWEAVE_SEED must be an integer, got {env_seed!r}") from None
            spec = replace(spec, base=replace(spec.base, seed=seed))
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_topology:
        base = spec.base
        topo = base.topology_seed if base.topology_seed is not None else base.seed
        _, graph, placement = simulator.build_world(replace(base, topology_seed=topo))
        topology.dump_topology(graph, placement, args.dump_topology)
    out_path = args.out or spec.output_path
    if out_path is None:
        # CSV owns stdout, so the table goes to stderr
        return run_sweep(spec, args.jobs, sys.stdout, sys.stderr)
    buf = io.StringIO()
    status = run_sweep(spec, args.jobs, buf, sys.stdout, Path(out_path).parent)
    if status == EXIT_OK:
        Path(out_path).write_text(buf.getvalue())
    return status


if __name__ == "__main__":
    sys.exit(main())
