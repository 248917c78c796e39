"""Batch experiment runner: seeded instances, solver dispatch, CSV emission.

One CSV row per (instance, solver) with the fixed header
``seed,K,N,M,solver,wsr,loss,ops,seconds``. Rows are deterministic under a
fixed seed list; wall-clock seconds are written as 0 when timing is turned
off so the whole file is byte-reproducible. The loss column is measured
against the exact grid optimum whenever the `opt` solver is part of the
run, and NaN otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .jspa import brute_force_jspa, eps_jspa, grad_jspa, opt_jspa
from .model import SystemConfig, build_decoding_order, generate_instance, read_kv_file
from .ops import count_ops
from .single_carrier import iscus_precompute

KNOWN_SOLVERS = ("opt", "grad", "eps", "brute")
CSV_HEADER = "seed,K,N,M,solver,wsr,loss,ops,seconds"

_EXPERIMENT_KEYS = ("solvers", "k_sweep", "m_sweep", "seeds", "seed_base",
                    "epsilons", "xi", "out", "count_ops", "timing", "jobs")


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_list(text: str, cast):
    items = [part.strip() for part in str(text).split(",") if part.strip()]
    return tuple(cast(part) for part in items)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one campaign needs: physics, sweeps, solvers, output."""

    system: SystemConfig = SystemConfig()
    solvers: tuple = ("opt", "grad")
    k_sweep: tuple = (5, 10, 20)
    m_sweep: tuple = (1, 2, 3)
    seeds: int = 50
    seed_base: int = 0
    epsilons: tuple = (0.1,)
    xi: float = 1e-4
    out: str = "results.csv"
    count_ops: bool = False
    timing: bool = True
    jobs: int = 1

    def __post_init__(self):
        unknown = [s for s in self.solvers if s not in KNOWN_SOLVERS]
        if unknown:
            raise ValueError(f"unknown solver name(s): {', '.join(unknown)}")
        if not self.solvers or not self.k_sweep or not self.m_sweep:
            raise ValueError("solvers, k_sweep and m_sweep must be non-empty")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if "eps" in self.solvers and (not self.epsilons or min(self.epsilons) <= 0):
            raise ValueError("the eps solver needs positive epsilons")
        if min(self.m_sweep) < 1 or max(self.m_sweep) > min(self.k_sweep):
            raise ValueError("m_sweep values must lie in [1, min(k_sweep)]")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        system = SystemConfig.from_mapping(raw)
        kwargs = {"system": system}
        casts = {
            "solvers": lambda v: _parse_list(v, str),
            "k_sweep": lambda v: _parse_list(v, int),
            "m_sweep": lambda v: _parse_list(v, int),
            "seeds": int,
            "seed_base": int,
            "epsilons": lambda v: _parse_list(v, float),
            "xi": float,
            "out": str,
            "count_ops": _parse_bool,
            "timing": _parse_bool,
            "jobs": int,
        }
        for key in _EXPERIMENT_KEYS:
            if key in raw:
                kwargs[key] = casts[key](raw[key])
        return cls(**kwargs)


@dataclass
class RunRecord:
    seed: int
    K: int
    N: int
    M: int
    solver: str
    wsr: float
    loss: float
    ops: int
    seconds: float

    def csv_row(self, timing: bool) -> str:
        seconds = self.seconds if timing else 0.0
        return (f"{self.seed},{self.K},{self.N},{self.M},{self.solver},"
                f"{self.wsr!r},{self.loss!r},{self.ops},{seconds:.6f}")


def solver_tags(config: ExperimentConfig) -> list:
    """Per-row solver labels, with `eps` expanded over the epsilon list."""
    tags = []
    for name in config.solvers:
        if name == "eps":
            tags.extend(f"eps:{e:g}" for e in config.epsilons)
        else:
            tags.append(name)
    return tags


def _dispatch(tag: str, instance, tables, xi: float):
    if tag == "opt":
        return opt_jspa(instance, tables)
    if tag == "grad":
        return grad_jspa(instance, tables, xi)
    if tag == "brute":
        return brute_force_jspa(instance, tables)
    if tag.startswith("eps:"):
        return eps_jspa(instance, tables, float(tag.split(":", 1)[1]))
    raise ValueError(f"unknown solver name: {tag}")


def _instance_records(config: ExperimentConfig, seed: int, k: int) -> list:
    """All rows for one seeded instance: every M, every solver."""
    system = dataclasses.replace(config.system, users=k,
                                 max_mux=min(max(config.m_sweep), k))
    instance = generate_instance(system, seed)
    order = build_decoding_order(instance)
    tags = solver_tags(config)
    records = []
    for m in config.m_sweep:
        tables = [iscus_precompute(instance, order, n, m)
                  for n in range(instance.n_carriers)]
        results = {}
        for tag in tags:
            start = time.perf_counter()
            with count_ops(enabled=config.count_ops) as counter:
                solution = _dispatch(tag, instance, tables, config.xi)
            elapsed = time.perf_counter() - start
            results[tag] = (solution.wsr, counter.total, elapsed)
        reference = results.get("opt", (math.nan,))[0]
        for tag in tags:
            wsr, ops, elapsed = results[tag]
            loss = 0.0 if tag == "opt" else (reference - wsr) / reference
            records.append(RunRecord(seed=seed, K=k, N=instance.n_carriers, M=m,
                                     solver=tag, wsr=wsr, loss=loss, ops=ops,
                                     seconds=elapsed))
    return records


def _run_task(args):
    return _instance_records(*args)


def run_experiment(config: ExperimentConfig, out_path: str | None = None):
    """Run the campaign and stream rows into the CSV. Returns all records.

    Tasks are one instance each (a seed and a user count); with jobs > 1
    they are dispatched to a process pool, and the single CSV writer in the
    parent consumes completed tasks in submission order, so the output file
    does not depend on the job count.
    """
    path = out_path if out_path is not None else config.out
    tasks = [(config, seed, k)
             for seed in range(config.seed_base, config.seed_base + config.seeds)
             for k in config.k_sweep]
    records = []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                batches = pool.map(_run_task, tasks)
                for batch in batches:
                    for record in batch:
                        fh.write(record.csv_row(config.timing) + "\n")
                    records.extend(batch)
        else:
            for task in tasks:
                batch = _run_task(task)
                for record in batch:
                    fh.write(record.csv_row(config.timing) + "\n")
                records.extend(batch)
    return records


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noma-jspa",
        description="Weighted sum-rate benchmark campaign for multi-carrier "
                    "NOMA power/subcarrier allocation.")
    parser.add_argument("--config", metavar="PATH",
                        help="flat key=value config file (defaults used if omitted)")
    parser.add_argument("--seed-base", type=int, metavar="INT",
                        help="first seed of the campaign")
    parser.add_argument("--solvers", metavar="LIST",
                        help="comma-separated subset of: " + ",".join(KNOWN_SOLVERS))
    parser.add_argument("--out", metavar="PATH", help="output CSV path")
    parser.add_argument("--count-ops", type=_parse_bool, metavar="BOOL",
                        help="count basic operations per solver call (true/false)")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        raw = read_kv_file(args.config) if args.config else {}
        config = ExperimentConfig.from_mapping(raw)
        overrides = {}
        if args.seed_base is not None:
            overrides["seed_base"] = args.seed_base
        if args.solvers is not None:
            overrides["solvers"] = _parse_list(args.solvers, str)
        if args.out is not None:
            overrides["out"] = args.out
        if args.count_ops is not None:
            overrides["count_ops"] = args.count_ops
        if overrides:
            config = dataclasses.replace(config, **overrides)
        records = run_experiment(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(records)} rows to {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
