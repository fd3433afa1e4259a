"""Command-line entry point: scheme comparisons, UE-count sweeps and ledger reports.

    s4sagin run          --scheme S4,NonSC --seed 1,2 --iterations 60 --out-dir out
    s4sagin sweep-ues    --ue-counts 100,150,200,300 --out-dir out
    s4sagin ledger-report --scheme S4 --out-dir out
    s4sagin reference-config > defaults.cfg

Outputs are CSV with a fixed column order, 6 significant digits and LF line
endings.  A failed command exits nonzero and removes the files it started.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config, reference_text
from .engine import Scheme, run_experiment, write_snapshot

logger = logging.getLogger(__name__)

CONVERGENCE_HEADER = ("iteration", "scheme", "seed", "mean_reward")
SATISFACTION_HEADER = ("num_ues", "scheme", "seed", "mean_satisfaction")
LEDGER_HEADER = ("iteration", "scheme", "seed", "created", "verified", "rejected", "pruned",
                 "faults", "detection_rate")


class UsageError(ValueError):
    pass


@dataclass
class RunSpec:
    config: ScenarioConfig
    schemes: list[Scheme]
    seeds: list[int]
    iterations: int
    out_dir: Path
    ue_counts: list[int] = field(default_factory=list)
    config_path: str | None = None

    def check(self) -> None:
        if not self.schemes or not self.seeds:
            raise UsageError("at least one scheme and one seed are required")
        if self.iterations < 0:
            raise UsageError("--iterations must be >= 0")
        if any(c <= 0 for c in self.ue_counts):
            raise UsageError("--ue-counts must all be positive")


def fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


class _CsvOut:
    """Writes a CSV file; on error the partial file is removed."""

    def __init__(self, path: Path, header):
        self.path = path
        self.header = header

    def __enter__(self):
        self.fh = open(self.path, "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(self.header)
        return self

    def row(self, *values) -> None:
        self.writer.writerow([fmt(v) for v in values])

    def __exit__(self, exc_type, exc, tb):
        self.fh.close()
        if exc_type is not None:
            self.path.unlink(missing_ok=True)
        return False


def cmd_run(spec: RunSpec) -> int:
    spec.check()
    with _CsvOut(spec.out_dir / "convergence.csv", CONVERGENCE_HEADER) as out:
        for scheme in spec.schemes:
            for seed in spec.seeds:
                states = []
                m = run_experiment(spec.config, scheme, spec.iterations, seed, state_out=states)
                for i, r in enumerate(m.rewards):
                    out.row(i, scheme.value, seed, float(r))
                write_snapshot(states[0], m, spec.out_dir / f"snapshot_{scheme.value}_{seed}.json")
    return 0


def cmd_sweep_ues(spec: RunSpec, ue_counts: list[int] | None = None) -> int:
    counts = list(ue_counts if ue_counts is not None else spec.ue_counts)
    if not counts:
        raise UsageError("--ue-counts must list at least one count")
    spec = replace(spec, ue_counts=counts)
    spec.check()
    n_eval = spec.config.learning.eval_iterations
    with _CsvOut(spec.out_dir / "satisfaction.csv", SATISFACTION_HEADER) as out:
        for count in counts:
            cfg = spec.config.replace(topology={"ue_count": count})
            for scheme in spec.schemes:
                for seed in spec.seeds:
                    m = run_experiment(cfg, scheme, spec.iterations, seed, eval_iterations=n_eval)
                    out.row(count, scheme.value, seed, float(m.eval_satisfaction))
    return 0


def cmd_ledger_report(spec: RunSpec) -> int:
    spec.check()
    with _CsvOut(spec.out_dir / "ledger.csv", LEDGER_HEADER) as out:
        for scheme in spec.schemes:
            for seed in spec.seeds:
                m = run_experiment(spec.config, scheme, spec.iterations, seed)
                for row in m.ledger:
                    rate = row["faults_detected"] / row["faults"] if row["faults"] else 1.0
                    out.row(row["iteration"], scheme.value, seed, row["created"], row["verified"],
                            row["rejected"], row["pruned"], row["faults"], float(rate))
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _scheme_list(text: str) -> list[Scheme]:
    try:
        return [Scheme.parse(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s4sagin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "train schemes and write convergence.csv"),
                        ("sweep-ues", "train and evaluate per UE count, write satisfaction.csv"),
                        ("ledger-report", "write per-iteration ledger statistics to ledger.csv")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="scenario file ([section] key = value)")
        sp.add_argument("--scheme", type=_scheme_list, default=None,
                        help=f"comma-separated schemes ({', '.join(s.value for s in Scheme)}); default all")
        sp.add_argument("--seed", type=_int_list, default=None, help="comma-separated seeds; default from config")
        sp.add_argument("--iterations", type=int, default=None, help="training iterations; default from config")
        sp.add_argument("--out-dir", default=".", help="output directory (created if missing)")
        if name == "sweep-ues":
            sp.add_argument("--ue-counts", type=_int_list, default=[100, 150, 200, 250, 300])
    sub.add_parser("reference-config", help="print every key with its default value")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "reference-config":
        sys.stdout.write(reference_text())
        return 0
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        spec = RunSpec(config=cfg, schemes=args.scheme or list(Scheme),
                       seeds=args.seed if args.seed is not None else [cfg.run.seed],
                       iterations=cfg.run.iterations if args.iterations is None else args.iterations,
                       out_dir=out_dir, ue_counts=getattr(args, "ue_counts", []) or [],
                       config_path=args.config)
        if args.command == "run":
            return cmd_run(spec)
        if args.command == "sweep-ues":
            return cmd_sweep_ues(spec)
        return cmd_ledger_report(spec)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, OSError) as exc:
        print(f"s4sagin: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure must exit nonzero with a message
        logger.debug("run failed", exc_info=True)
        print(f"s4sagin: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
