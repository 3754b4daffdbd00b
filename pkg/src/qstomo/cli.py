"""Command-line driver: ``qstomo --command <name> [options]``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime or estimator
error, 3 memory budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import COMMANDS, ConfigError, ExperimentConfig, run
from .linalg import MemoryBudgetError, set_memory_budget
from .mle import OptimizerConfig
from .states import FileFormatError

log = logging.getLogger("qstomo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_MEMORY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _qubit_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qstomo", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--qubits", type=_qubit_list, help="qubit counts, e.g. 2 or 2,3,4 or 2-5")
    p.add_argument("--family", choices=("ghz", "werner", "mems", "tangle_biased", "random", "file"))
    p.add_argument("--epsilon", type=float, help="Werner mixing weight")
    p.add_argument("--delta", type=float, help="tangle bias of the tangle_biased family")
    p.add_argument("--gamma", type=float, help="MEMS parameter")
    p.add_argument("--state-error", type=float, dest="state_error", help="weight of the random admixture")
    p.add_argument("--state-file", dest="state_path", help="density matrix for --family file")
    p.add_argument("--shots", type=float)
    p.add_argument("--grid", type=int, help="points per parameter axis")
    p.add_argument("--trials", type=int)
    p.add_argument("--estimators", help="comma-separated subset of linear,qd,fp,mle")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--counts", help="counts file for --command tomo")
    p.add_argument("--truth", help="true density matrix for fidelity in --command tomo")
    p.add_argument("--config", help="JSON config file; its values override flags")
    p.add_argument("--zero-noise", action="store_true", default=None, dest="zero_noise")
    p.add_argument("--no-timing", action="store_false", default=None, dest="record_timing",
                   help="leave time columns empty so CSVs are byte-reproducible")
    p.add_argument("--workers", type=int)
    p.add_argument("--memory-budget-bytes", type=int, dest="memory_budget_bytes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> tuple[ExperimentConfig, int | None]:
    values = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "verbose")}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        if "out" in loaded:
            loaded["output_dir"] = loaded.pop("out")
        values.update(loaded)
    budget = values.pop("memory_budget_bytes", None)
    if "command" not in values:
        raise ConfigError("--command is required (or 'command' in the config file)")
    if isinstance(values.get("qubits"), str):
        values["qubits"] = _qubit_list(values["qubits"])
    if isinstance(values.get("optimizer"), dict):
        values["optimizer"] = OptimizerConfig(**values["optimizer"])
    try:
        return ExperimentConfig(**values), budget
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg, budget = config_from_args(args)
        if budget is not None:
            set_memory_budget(budget)
        if cfg.counts and not Path(cfg.counts).exists():
            raise ConfigError(f"counts file {cfg.counts} does not exist")
    except (ConfigError, ValueError) as exc:
        print(f"qstomo: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        log.info("running %s into %s", cfg.command, cfg.output_dir)
        run(cfg)
    except MemoryBudgetError as exc:
        print(f"qstomo: memory budget exceeded: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except (ConfigError, FileFormatError) as exc:
        print(f"qstomo: input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        print(f"qstomo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
