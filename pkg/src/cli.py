"""Command-Line Interface for the star-network toolkit

Batch verbs that read a JSON experiment document, run one pipeline and write
plot-ready JSON/CSV files. Exit codes: 0 success, 2 validation error,
3 runtime error.
"""

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src.audit_logger import RunLogger
from src.config import config
from src.model import fig4_network, is_ergodic, isolate_channel, route_keys_to_mask
from src.paths import OptimizeOptions, optimize_tail_decay, ps_consistency_check, ps_decay_rate
from src.rate import local_rate_terms, stay_cost_transient
from src.schemas import (
    ExperimentConfig,
    Fig4Block,
    NetworkSpec,
    Policy,
    SweepBlock,
    format_route_key,
    parse_route_key,
)
from src.simulate import estimate_decay_rate, simulate
from src.validators import InsufficientDataError, SchemaValidator, ToolkitError, ValidationException

VARIATIONAL_LABEL = "variational decay estimate"


def load_experiment(path) -> ExperimentConfig:
    """Read and validate an experiment document"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationException(f"config: cannot read {path}: {e}")
    return SchemaValidator.validate_against_schema(document, ExperimentConfig)


def apply_sweep_value(spec: NetworkSpec, parameter: str, value: float) -> NetworkSpec:
    """Set 'routes.i-j.lambda|mu' or 'channels.k.capacity' to value"""
    kind, ident, name = parameter.split(".")
    if kind == "routes":
        return spec.with_route(ident, **{name: value})
    return spec.with_capacity(int(ident), value)


def _sweep(spec: NetworkSpec, sweep: Optional[SweepBlock]) -> List[Tuple[Optional[float], NetworkSpec]]:
    if sweep is None:
        return [(None, spec)]
    return [(value, apply_sweep_value(spec, sweep.parameter, value)) for value in sweep.values]


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def _write_csv(path: Path, rows: List[Dict[str, Any]], fieldnames: Sequence[str]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        writer.writerows(rows)
    return path


class StarNetworkCLI:
    """Runs one experiment command and reports it"""

    def __init__(
        self,
        experiment: ExperimentConfig,
        out_dir: Optional[str] = None,
        threads: Optional[int] = None,
        seed: Optional[int] = None,
        output_format: str = "text",
        run_logger: Optional[RunLogger] = None,
    ):
        self.experiment = experiment
        self.out_dir = config.output_path(out_dir or experiment.output.directory)
        self.threads = threads or config.threads
        self.seed_override = seed
        self.output_format = output_format
        self.formats = set(experiment.output.formats)
        self.run_logger = run_logger or RunLogger(config.log_dir, enabled=config.enable_run_log)
        self.console = Console()

    # Helpers

    def seed_for(self, block_seed: Optional[int]) -> int:
        """--seed wins over the document, which wins over the settings"""
        if self.seed_override is not None:
            return self.seed_override
        return config.default_seed if block_seed is None else block_seed

    def network(self, command: str) -> NetworkSpec:
        if self.experiment.network is None:
            raise ValidationException(f"network: the '{command}' command needs a network document")
        return self.experiment.network

    def block(self, name: str, command: str):
        value = getattr(self.experiment, name)
        if value is None:
            raise ValidationException(f"{name}: the '{command}' command needs a '{name}' block")
        return value

    def emit_json(self, name: str, payload: Dict[str, Any]) -> Optional[Path]:
        if "json" in self.formats:
            return _write_json(self.out_dir / name, payload)
        return None

    def emit_csv(self, name: str, rows: List[Dict[str, Any]], fieldnames: Sequence[str]) -> Optional[Path]:
        if "csv" in self.formats:
            return _write_csv(self.out_dir / name, rows, fieldnames)
        return None

    def print_panel(self, content: str, title: str, style: str = "cyan"):
        if self.output_format == "text":
            self.console.print(Panel(content, title=title, border_style=style))

    def print_table(self, title: str, columns: Sequence[str], rows: List[Sequence[Any]]):
        if self.output_format != "text":
            return
        table = Table(title=title, box=box.ROUNDED)
        for column in columns:
            table.add_column(column, style="cyan" if column == columns[0] else "green")
        for row in rows:
            table.add_row(*["-" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)) for v in row])
        self.console.print(table)

    def print_report(self, report: Dict[str, Any]):
        if self.output_format == "json":
            self.console.print_json(json.dumps(report))

    # Commands

    def cmd_rate(self) -> Dict[str, Any]:
        spec = self.network("rate")
        block = self.block("rate", "rate")
        ergodicity = is_ergodic(spec)
        zero_tol = block.zero_tol if "zero_tol" in block.model_fields_set else config.zero_tol
        result = local_rate_terms(spec, block.state, block.drift, block.mode, zero_tol, block.extended)
        report = {
            "command": "rate",
            "mode": block.mode,
            "extended": block.extended,
            "local_rate": result.breakdown(spec),
            "face": result.face.describe(),
            "ergodicity": ergodicity.as_dict(),
        }
        self.emit_json("rate.json", report)

        breakdown = report["local_rate"]
        self.print_panel(
            f"L(x, D) = {breakdown['total']}\n"
            f"Λ  = {report['face']['lambda']}\nΛ₁ = {report['face']['lambda1']}\nΛ₂ = {report['face']['lambda2']}\n"
            f"{ergodicity.describe()}",
            title="Local rate",
            style="green",
        )
        rows = [(route, cost) for route, cost in breakdown["routes"].items()]
        rows.append(("Λ₁ cut", breakdown["jammed_cut"]))
        if block.mode == "general":
            rows.append(("stay cost (Λ₂)", breakdown["stay_cost"]))
        self.print_table("Cost breakdown", ["term", "cost"], rows)
        self.print_report(report)
        return report

    def cmd_stay_cost(self) -> Dict[str, Any]:
        spec = self.network("stay-cost")
        block = self.experiment.stay_cost
        routes = block.routes if block is not None else None
        mask = route_keys_to_mask(spec, routes) if routes is not None else None
        result = stay_cost_transient(spec, mask)
        report = {
            "command": "stay-cost",
            "routes": sorted(routes) if routes is not None else [format_route_key(k) for k in spec.route_keys],
            "value": result.value,
            "allocation": result.allocation.as_mapping(),
            "dual_value": result.dual_value,
            "duality_gap": result.duality_gap,
            "iterations": result.iterations,
            "converged": result.converged,
            "ergodicity": is_ergodic(spec).as_dict(),
        }
        self.emit_json("stay_cost.json", report)
        self.print_panel(
            f"L(0, 0) = {result.value:.10g}\nduality gap = {result.duality_gap:.3g}\n"
            f"iterations = {result.iterations} ({'converged' if result.converged else 'not converged'})",
            title="Stay-near-zero cost",
        )
        self.print_table("Optimal allocation", ["route", "nu"], list(report["allocation"].items()))
        self.print_report(report)
        return report

    def cmd_simulate(self) -> Dict[str, Any]:
        base = self.network("simulate")
        block = self.block("simulate", "simulate")
        seed = self.seed_for(block.seed)
        histogram_rows, decay_rows, summaries = [], [], []
        for value, spec in _sweep(base, self.experiment.sweep):
            if block.policy == Policy.PROCESSOR_SHARING:
                spec = isolate_channel(spec, block.anchor_channel)
            stats = simulate(
                spec,
                block.policy,
                {k: v for k, v in block.initial_state.items() if parse_route_key(k) in spec.route_index},
                block.horizon,
                seed,
                block.anchor_channel,
                block.histogram_cap,
            )
            channels = block.channels or list(spec.channel_ids)
            for row in stats.histogram_rows():
                histogram_rows.append({"value": value, **row})
            for channel in channels:
                try:
                    estimate = estimate_decay_rate(stats, channel, block.window)
                    rate, stderr = estimate.rate, estimate.stderr
                except InsufficientDataError as e:
                    rate = stderr = None
                    self.run_logger.log_warning("simulate", str(e), {"channel": channel, "value": value})
                decay_rows.append({"value": value, "channel": channel, "rate": rate, "stderr": stderr})
            summaries.append({"value": value, **stats.summary()})

        fields = ["channel", "n", "time_mass"]
        decay_fields = ["channel", "rate", "stderr"]
        if self.experiment.sweep is not None:
            fields = ["value"] + fields
            decay_fields = ["value"] + decay_fields
        else:
            histogram_rows = [{k: v for k, v in r.items() if k != "value"} for r in histogram_rows]
            decay_rows = [{k: v for k, v in r.items() if k != "value"} for r in decay_rows]
        self.emit_csv("histogram.csv", histogram_rows, fields)
        self.emit_csv("decay.csv", decay_rows, decay_fields)
        report = {
            "command": "simulate",
            "seed": seed,
            "policy": block.policy.value,
            "sweep": self.experiment.sweep.parameter if self.experiment.sweep else None,
            "runs": summaries,
            "decay": decay_rows,
        }
        self.emit_json("summary.json", report)
        self.print_table(
            "Simulated decay rates",
            decay_fields,
            [[row[f] for f in decay_fields] for row in decay_rows],
        )
        self.print_report(report)
        return report

    def cmd_optimize(self) -> Dict[str, Any]:
        base = self.network("optimize")
        block = self.block("optimize", "optimize")
        seed = self.seed_for(block.seed)
        options = OptimizeOptions(
            segments=block.segments,
            multistarts=block.multistarts,
            seed=seed,
            max_iterations=block.max_iterations,
            tolerance=block.tolerance,
            mode=block.mode,
            workers=self.threads,
        )
        results, path_rows = [], []
        for value, spec in _sweep(base, self.experiment.sweep):
            result = optimize_tail_decay(spec, block.target_channel, options)
            consistency = ps_consistency_check(spec, result, block.target_channel)
            results.append(
                {
                    "value": value,
                    "label": VARIATIONAL_LABEL,
                    "target_channel": block.target_channel,
                    "decay": result.value,
                    "status": result.status,
                    "horizon": result.horizon,
                    "ps_reference": ps_decay_rate(spec, block.target_channel),
                    "ps_consistent": consistency.consistent,
                    "ps_consistency": consistency.as_dict(),
                    "segment_costs": result.diagnostics.segment_costs,
                    "bottlenecks": result.diagnostics.bottlenecks,
                    "quadrature_delta": result.diagnostics.quadrature_delta,
                    "path": result.optimal_path.as_rows(spec),
                }
            )
            for row in result.optimal_path.as_rows(spec):
                path_rows.append({"value": value, **row})

        fields = ["t"] + [format_route_key(k) for k in base.route_keys]
        if self.experiment.sweep is not None:
            fields = ["value"] + fields
        else:
            path_rows = [{k: v for k, v in r.items() if k != "value"} for r in path_rows]
        self.emit_csv("path.csv", path_rows, fields)
        report = {"command": "optimize", "seed": seed, "results": results}
        self.emit_json("decay_result.json", report)
        self.print_table(
            VARIATIONAL_LABEL.capitalize(),
            ["value", "channel", "decay", "status", "ps_reference", "ps_consistent"],
            [
                [r["value"], r["target_channel"], r["decay"], r["status"], r["ps_reference"], r["ps_consistent"]]
                for r in results
            ],
        )
        self.print_report(report)
        return report

    def cmd_example_fig4(self) -> Dict[str, Any]:
        block = self.experiment.fig4 or Fig4Block()
        seed = self.seed_for(block.seed)
        options = OptimizeOptions(
            segments=block.segments, multistarts=block.multistarts, seed=seed, workers=self.threads
        )
        rows = []
        for x in block.values:
            spec = fig4_network(x)
            stats = simulate(spec, Policy.MIN, None, block.horizon, seed, None, block.histogram_cap)
            for channel in block.channels:
                try:
                    estimate = estimate_decay_rate(stats, channel, block.window)
                    sim_rate, sim_stderr = estimate.rate, estimate.stderr
                except InsufficientDataError as e:
                    sim_rate = sim_stderr = None
                    self.run_logger.log_warning("example-fig4", str(e), {"x": x, "channel": channel})
                var_rate = var_status = ps_consistent = None
                if block.optimize:
                    result = optimize_tail_decay(spec, channel, options)
                    var_rate, var_status = result.value, result.status
                    ps_consistent = ps_consistency_check(spec, result, channel).consistent
                rows.append(
                    {
                        "x": x,
                        "channel": channel,
                        "sim_rate": sim_rate,
                        "sim_stderr": sim_stderr,
                        "ps_rate": ps_decay_rate(spec, channel),
                        "var_rate": var_rate,
                        "var_status": var_status,
                        "ps_consistent": ps_consistent,
                    }
                )
        fields = ["x", "channel", "sim_rate", "sim_stderr", "ps_rate", "var_rate", "var_status", "ps_consistent"]
        self.emit_csv("fig4.csv", rows, fields)
        report = {"command": "example-fig4", "seed": seed, "horizon": block.horizon, "rows": rows}
        self.emit_json("fig4.json", report)
        self.print_table("Decay rates of the three-channel example", fields, [[r[f] for f in fields] for r in rows])
        self.print_report(report)
        return report

    COMMANDS = {
        "rate": cmd_rate,
        "simulate": cmd_simulate,
        "optimize": cmd_optimize,
        "example-fig4": cmd_example_fig4,
        "stay-cost": cmd_stay_cost,
    }

    def run(self, command: str) -> Dict[str, Any]:
        parameters = {"command": command, "experiment": self.experiment.canonical(), "out": str(self.out_dir)}
        with self.run_logger.command_context(command, parameters) as ctx:
            report = self.COMMANDS[command](self)
            ctx.set_result({"files": sorted(p.name for p in self.out_dir.iterdir() if p.is_file())})
        return report


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser: argparse.ArgumentParser, suppress: bool):
        default = argparse.SUPPRESS if suppress else None
        parser.add_argument("--config", metavar="PATH", default=default, help="Experiment JSON document")
        parser.add_argument("--out", metavar="DIR", default=default, help="Output directory")
        parser.add_argument("--threads", metavar="N", type=int, default=default, help="Worker processes")
        parser.add_argument("--seed", metavar="U64", type=int, default=default, help="Override every seed")
        parser.add_argument(
            "--format",
            choices=["text", "json"],
            default=argparse.SUPPRESS if suppress else "text",
            help="Console output",
        )

    parser = argparse.ArgumentParser(
        prog="starld",
        description="Large-deviations toolkit for star-shaped bandwidth-sharing networks",
    )
    global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("rate", parents=[common], help="Local rate L(x, D) with its breakdown")
    sub.add_parser("simulate", parents=[common], help="Simulate and estimate decay rates")
    sub.add_parser("optimize", parents=[common], help=f"Compute the {VARIATIONAL_LABEL}")
    fig4 = sub.add_parser("example-fig4", parents=[common], help="Three-channel example sweep")
    fig4.add_argument("--values", type=float, nargs="+", help="lambda_13 values, each in (0, 0.5)")
    fig4.add_argument("--horizon", type=float, help="Simulated time per sweep point")
    fig4.add_argument("--no-optimize", action="store_true", help="Skip the variational estimates")
    sub.add_parser("stay-cost", parents=[common], help="Stay-near-zero cost L(0, 0)")
    return parser


def _experiment_from_args(args) -> ExperimentConfig:
    if args.config:
        experiment = load_experiment(args.config)
    elif args.command == "example-fig4":
        experiment = ExperimentConfig()
    else:
        raise ValidationException(f"config: the '{args.command}' command needs --config PATH")
    if args.command == "example-fig4":
        overrides = {}
        if getattr(args, "values", None):
            overrides["values"] = args.values
        if getattr(args, "horizon", None):
            overrides["horizon"] = args.horizon
        if getattr(args, "no_optimize", False):
            overrides["optimize"] = False
        if overrides:
            document = (experiment.fig4 or Fig4Block()).model_dump()
            document.update(overrides)
            fig4 = SchemaValidator.validate_against_schema(document, Fig4Block)
            experiment = experiment.model_copy(update={"fig4": fig4})
    return experiment


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the CLI; returns the exit code"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    console = Console(stderr=True)
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationException("threads: must be >= 1")
        experiment = _experiment_from_args(args)
        cli = StarNetworkCLI(experiment, args.out, args.threads, args.seed, args.format)
        cli.run(args.command)
    except ValidationException as e:
        console.print(Panel(str(e), title="Invalid input", border_style="red"))
        return e.exit_code
    except ToolkitError as e:
        console.print(Panel(str(e), title=type(e).__name__, border_style="red"))
        return e.exit_code
    except OSError as e:
        console.print(Panel(str(e), title="I/O error", border_style="red"))
        return 3
    except Exception as e:
        console.print(Panel(f"{type(e).__name__}: {e}", title="Unexpected error", border_style="red"))
        traceback.print_exc()
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
