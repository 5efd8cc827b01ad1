#!/usr/bin/env python
"""GraspGen - generative design of tendon-driven grippers"""


import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys
from typing import Any, Optional, Sequence

from graspgen.config import Config, load_config
from graspgen.file import (
    RUN_META_FILENAME,
    TRACE_FILENAME,
    design_path,
    load_design,
    report_path,
    save_design,
    save_report,
    write_run_meta,
    write_search_trace,
)
from graspgen.grammar import InvalidAction
from graspgen.graph import ParseError
from graspgen.mechanism import (
    NotTerminal,
    StructureError,
    compile_mechanism,
    describe,
    validate,
)
from graspgen.render import render_sequence, write_forces_csv
from graspgen.reward import (
    DesignReward,
    EvaluationError,
    GraspEvaluator,
    report_document,
)
from graspgen.search import SearchResult, run_search
from graspgen.sim import DimensionMismatch, Diverged, run_grasp, write_trace_csv
from graspgen.utilities import ConfigError, dumps_stable, sing_plur

logger = logging.getLogger(__package__)

MESSAGE_FORMAT = "%(asctime)s: %(levelname)s - %(message)s"
DEBUG_FORMAT = "%(asctime)s: %(levelname)s - %(filename)s:%(lineno)d - %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_NOT_TERMINAL = 4

FORCES_FILENAME = "forces.csv"
SIM_TRACE_FILENAME = "trace.csv"
FRAMES_DIR = "frames"

RUNTIME_ERRORS = (
    Diverged,
    EvaluationError,
    InvalidAction,
    OSError,
    ParseError,
    StructureError,
)


class GraspGen:
    """Top level GraspGen application."""

    def __init__(self, argv: Optional[Sequence[str]] = None) -> None:
        """Initialize GraspGen class.

        Args:
            argv: Command line arguments, defaulting to `sys.argv[1:]`.
        """
        self.parse_args(argv)
        self.logging_init()

    def parse_args(self, argv: Optional[Sequence[str]]) -> None:
        """Parse command line args"""
        parser = argparse.ArgumentParser(
            prog="graspgen",
            description="GraspGen designs underactuated grippers by tree search",
        )
        parser.add_argument(
            "-d",
            "--debug",
            action="store_true",
            help="Run in debug mode",
        )
        commands = parser.add_subparsers(dest="command", required=True)

        search = commands.add_parser("search", help="Search for gripper designs")
        search.add_argument("--config", help="Config file or preset name")
        search.add_argument("--out", help="Output directory")
        search.add_argument("--seed", type=int, help="Override the search seed")
        search.add_argument(
            "--iterations", type=int, help="Override the number of iterations"
        )

        evaluate = commands.add_parser("evaluate", help="Score a single design")
        evaluate.add_argument("--design", required=True, help="Design graph file")
        evaluate.add_argument("--config", help="Config file or preset name")

        render = commands.add_parser("render", help="Draw one simulated grasp")
        render.add_argument("--design", required=True, help="Design graph file")
        render.add_argument("--config", help="Config file or preset name")
        render.add_argument("--object", required=True, help="Name of a test object")
        render.add_argument(
            "--tension",
            required=True,
            help="Comma-separated tendon tension per finger, N",
        )
        render.add_argument("--out", required=True, help="Output directory")
        render.add_argument(
            "--fixed-object",
            action="store_true",
            help="Clamp the object in place and record the contact force",
        )
        self.args = parser.parse_args(argv)

    def logging_init(self) -> None:
        """Set up console logger."""
        if self.args.debug:
            log_level = logging.DEBUG
            console_log_level = logging.DEBUG
            formatter = logging.Formatter(DEBUG_FORMAT, "%H:%M:%S")
        else:
            log_level = logging.INFO
            console_log_level = logging.WARNING
            formatter = logging.Formatter(MESSAGE_FORMAT, "%H:%M:%S")
        logger.setLevel(log_level)
        # Only one console handler, however often the application is created
        for handler in list(logger.handlers):
            if getattr(handler, "graspgen_console", False):
                logger.removeHandler(handler)
        console_handler = logging.StreamHandler()
        console_handler.setLevel(console_log_level)
        console_handler.setFormatter(formatter)
        setattr(console_handler, "graspgen_console", True)
        logger.addHandler(console_handler)

    def run(self) -> int:
        """Run the requested command.

        Returns:
            Process exit code.
        """
        command = {
            "search": self.cmd_search,
            "evaluate": self.cmd_evaluate,
            "render": self.cmd_render,
        }[self.args.command]
        try:
            return command()
        except ConfigError as exc:
            logger.error(f"Configuration error - {exc}")
            return EXIT_CONFIG
        except NotTerminal as exc:
            logger.error(str(exc))
            return EXIT_NOT_TERMINAL
        except RUNTIME_ERRORS as exc:
            logger.error(str(exc))
            return EXIT_RUNTIME

    def cmd_search(self) -> int:
        """Search for designs and write the trace, top designs and metadata."""
        config = load_config(self.args.config)
        out_dir = Path(self.args.out or config.output_dir)
        search_cfg = config.search_config(self.args.seed, self.args.iterations)
        start = None
        if config.search.start_design:
            start = load_design(config.search.start_design)
        evaluator = GraspEvaluator(config.evaluation_settings(search_cfg.seed))
        logger.info(f"Search output in {out_dir}")
        result = run_search(
            search_cfg,
            config.grammar.grammar(),
            evaluator,
            start,
            config.search.start_depth,
        )
        write_results(result, config, out_dir, search_cfg.seed, search_cfg.iterations)
        if result.interrupted:
            logger.error(
                f"Search interrupted after {sing_plur(len(result.trace), 'iteration')}"
                " - partial results written"
            )
            return EXIT_RUNTIME
        return EXIT_OK

    def cmd_evaluate(self) -> int:
        """Score one design and print its report to standard output."""
        config = load_config(self.args.config)
        graph = load_design(self.args.design)
        settings = config.evaluation_settings()
        spec = compile_mechanism(graph, settings.physical)
        logger.info(f"Evaluating {describe(spec)}")
        for warning in validate(spec, config.mechanism.workspace_center_m):
            logger.warning(warning.message)
        design_reward = GraspEvaluator(settings).evaluate(spec)
        sys.stdout.write(dumps_stable(report_document(design_reward, settings.weights)))
        return EXIT_OK

    def cmd_render(self) -> int:
        """Simulate one grasp and write frames, forces and the run trace."""
        config = load_config(self.args.config)
        tensions = parse_tensions(self.args.tension)
        objects = {obj.name: obj for obj in config.objects()}
        if self.args.object not in objects:
            raise ConfigError(
                "--object",
                f"no object named '{self.args.object}' (objects: {list(objects)})",
            )
        obj = objects[self.args.object]
        graph = load_design(self.args.design)
        spec = compile_mechanism(graph, config.mechanism.physical())
        sim_cfg = config.sim.sim_config()
        if self.args.fixed_object:
            sim_cfg = replace(sim_cfg, fixed_object=True)
        try:
            trace = run_grasp(spec, obj, tensions, sim_cfg, config.search.seed)
        except DimensionMismatch as exc:
            raise ConfigError(
                "--tension", f"{describe(spec)} needs {exc.expected} tensions"
            ) from exc
        logger.info(f"Grasp outcome: {trace.outcome}")
        out_dir = Path(self.args.out)
        render_sequence(
            trace, spec, obj, out_dir / FRAMES_DIR, config.render_settings()
        )
        write_forces_csv(trace, out_dir / FORCES_FILENAME)
        write_trace_csv(trace, out_dir / SIM_TRACE_FILENAME, sim_cfg.trace_decimation)
        return EXIT_OK


def parse_tensions(text: str) -> list[float]:
    """Parse a comma-separated list of tensions.

    Raises:
        ConfigError: if any entry is not a number.
    """
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError("--tension", f"'{text}' is not a list of numbers") from exc


def write_results(
    result: SearchResult, config: Config, out_dir: Path, seed: int, iterations: int
) -> None:
    """Write the search trace, ranked designs with reports, and run metadata."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_search_trace(result.trace, out_dir / TRACE_FILENAME)
    weights = config.reward.reward_weights()
    for ranked in result.top_k:
        save_design(ranked.graph, design_path(out_dir, ranked.rank))
        report: dict[str, Any] = {}
        if isinstance(ranked.report, DesignReward):
            report = report_document(ranked.report, weights)
        report["rank"] = ranked.rank
        report["iteration"] = ranked.iteration
        report["normalized"] = ranked.normalized
        save_report(report, report_path(out_dir, ranked.rank))
    write_run_meta(
        out_dir / RUN_META_FILENAME,
        config.model_dump(mode="json"),
        seed,
        iterations,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application function."""
    return GraspGen(argv).run()


if __name__ == "__main__":
    sys.exit(main())
