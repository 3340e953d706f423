"""
Command-line entry point.

    opscore simulate --config cfg.toml [--seed N] [--out DIR] [--export-csv FILE]
    opscore estimate --data study.csv --schema schema.toml --config cfg.toml [--out DIR]
    opscore report --in DIR [--format md|csv]

Exit status: 0 on success, 2 on configuration/data errors, 1 on anything unexpected.
"""

import argparse
import sys
from pathlib import Path
from typing import Sequence

from opscore import __version__
from opscore.core.config import settings
from opscore.core.exceptions import OpscoreError
from opscore.core.logger import config_logger as logger
from opscore.core.seeding import REPLICATE_STREAM, stream
from opscore.schemas.experiment import ExperimentConfig, StudySchema
from opscore.schemas.scenario import scenario_preset
from opscore.services.experiment_service import ExperimentService
from opscore.services.ingestion_service import IngestionService
from opscore.services.report_service import ReportService
from opscore.services.simulation_service import SimulationService


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opscore",
        description="Outcome-adaptive propensity score estimation of average treatment effects with several arms",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run a simulation experiment from a scenario preset")
    sim.add_argument("--config", required=True, help="TOML or JSON experiment config")
    sim.add_argument("--seed", type=int, default=None, help="Override the config seed")
    sim.add_argument("--out", default=None, help="Output directory (default: config output_dir)")
    sim.add_argument("--export-csv", default=None, help="Also write replicate 0 as a study CSV plus its schema")

    est = sub.add_parser("estimate", help="Estimate effects on a study CSV")
    est.add_argument("--data", required=True, help="Study CSV")
    est.add_argument("--schema", required=True, help="TOML or JSON column-role schema")
    est.add_argument("--config", required=True, help="TOML or JSON experiment config")
    est.add_argument("--out", default=None, help="Output directory (default: config output_dir)")

    rep = sub.add_parser("report", help="Re-render tables from a saved result")
    rep.add_argument("--in", dest="in_dir", required=True, help="Directory holding result.json")
    rep.add_argument("--format", choices=["md", "markdown", "csv"], default="md")
    return parser


def _write_all(result, out_dir: Path) -> None:
    ReportService.save_result(result, out_dir)
    ReportService.emit_report(result, out_dir, "csv")
    ReportService.emit_report(result, out_dir, "markdown")


def _export_replicate(cfg: ExperimentConfig, path: Path) -> None:
    overrides = {"n": cfg.n} if cfg.n is not None else {}
    scenario = scenario_preset(cfg.scenario, seed=cfg.seed, **overrides)
    d = SimulationService.simulate(scenario, stream(cfg.seed, REPLICATE_STREAM, 0)).dataset
    names = d.names()
    schema = IngestionService.export_csv(
        d,
        path,
        censoring_columns=[names[k] for k in d.roles.conf] if d.is_censored else (),
    )
    schema_path = path.with_suffix(".schema.json")
    schema_path.write_text(schema.model_dump_json(indent=2, exclude_none=True) + "\n", encoding="utf-8")
    logger.info(f"Exported replicate 0 to {path} with schema {schema_path}")


def cmd_simulate(args: argparse.Namespace) -> None:
    cfg = ExperimentConfig.from_file(args.config, seed=args.seed)
    out_dir = Path(args.out or cfg.output_dir)
    result = ExperimentService.run_simulation_experiment(cfg)
    _write_all(result, out_dir)
    if args.export_csv:
        _export_replicate(cfg, Path(args.export_csv))
    print(out_dir / "report.md")


def cmd_estimate(args: argparse.Namespace) -> None:
    cfg = ExperimentConfig.from_file(args.config, data=args.data)
    schema = StudySchema.from_file(args.schema)
    study = IngestionService.ingest_csv(args.data, schema)
    out_dir = Path(args.out or cfg.output_dir)
    result = ExperimentService.run_study(study, schema, cfg)
    _write_all(result, out_dir)
    print(out_dir / "report.md")


def cmd_report(args: argparse.Namespace) -> None:
    result = ReportService.load_result(args.in_dir)
    for path in ReportService.emit_report(result, args.in_dir, args.format):
        print(path)


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger.info(f"opscore {__version__} | command={args.command} | threads={settings.threads} | log level {settings.LOG_LEVEL}")
    try:
        COMMANDS[args.command](args)
    except OpscoreError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        print(f"unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
