import json
from pathlib import Path

import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from opscore.core.exceptions import ConfigurationError
from opscore.core.logger import service_logger as logger
from opscore.schemas.estimate import MetricsRow
from opscore.schemas.experiment import ExperimentResult, StudyResult

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
RESULT_FILE = "result.json"
MISSING = "NA"

_env = Environment(
    loader=FileSystemLoader(TEMPLATE_DIR),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


def x1000(value: float | None) -> str:
    return MISSING if value is None else f"{value * 1000:.1f}"


def fixed(value: float | None, digits: int = 4) -> str:
    return MISSING if value is None else f"{value:.{digits}f}"


def pct(value: float | None) -> str:
    return MISSING if value is None else f"{value:.1f}"


class ReportService:
    """Tables (CSV) and markdown reports for experiment and study results"""

    @staticmethod
    def metrics_table(rows: list[MetricsRow], scheme: str = "modified") -> list[dict]:
        table = []
        for row in rows:
            for m in row.pairs:
                table.append(
                    {
                        "estimator": row.estimator,
                        "pair": f"{m.pair[0]} vs {m.pair[1]}",
                        "scheme": scheme,
                        "truth_x1000": x1000(m.truth),
                        "bias_x1000": x1000(m.bias),
                        "mc_sd_x1000": x1000(m.mc_sd),
                        "rmse_x1000": x1000(m.rmse),
                        "mean_se_x1000": x1000(m.mean_se),
                        "coverage_pct": pct(m.coverage_pct),
                        "n_replicates": str(row.n_replicates),
                        "failures": str(row.failures),
                    }
                )
        return table

    @staticmethod
    def estimates_table(result: StudyResult) -> list[dict]:
        table = []
        for res in result.results:
            schemes = [("modified", res.estimates)] + ([("usual", res.usual)] if res.usual is not None else [])
            for scheme, estimates in schemes:
                for e in estimates:
                    table.append(
                        {
                            "estimator": res.estimator,
                            "pair": f"{result.arms[e.pair[0] - 1]} vs {result.arms[e.pair[1] - 1]}",
                            "scheme": scheme,
                            "tau_hat": fixed(e.tau_hat),
                            "se": fixed(e.se),
                            "ci_lo": fixed(None if e.ci is None else e.ci[0]),
                            "ci_hi": fixed(None if e.ci is None else e.ci[1]),
                        }
                    )
        return table

    @staticmethod
    def selection_table(result: StudyResult) -> list[dict]:
        sel = result.selection
        rows = [{"group": "all", "n_columns": "", "ysel": str(len(sel.ysel)), "zsel": str(len(sel.zsel)), "yzsel": str(len(sel.yzsel))}]
        for g in sel.groups:
            rows.append(
                {"group": g.group, "n_columns": str(g.n_columns), "ysel": str(len(g.ysel)), "zsel": str(len(g.zsel)), "yzsel": str(len(g.yzsel))}
            )
        return rows

    @staticmethod
    def positivity_table(result: StudyResult) -> list[dict]:
        rows = []
        for res in result.results:
            if res.positivity is None:
                continue
            p = res.positivity
            rows.append(
                {
                    "estimator": res.estimator,
                    "min_pi": " / ".join(fixed(v) for v in p.min_pi),
                    "count_below": " / ".join(str(c) for c in p.count_below),
                    "flagged_rows": str(p.flagged_rows),
                    "max_weight": fixed(p.max_weight, 2),
                }
            )
        return rows

    @staticmethod
    def failures_table(result: ExperimentResult | StudyResult) -> list[dict]:
        return [
            {
                "estimator": f.estimator,
                "replicate": "" if f.replicate is None else str(f.replicate),
                "error_type": f.error_type,
                "message": f.message,
            }
            for f in result.failures
        ]

    @staticmethod
    def _tables(result: ExperimentResult | StudyResult) -> dict[str, list[dict]]:
        if isinstance(result, ExperimentResult):
            return {
                "metrics": ReportService.metrics_table(result.metrics)
                + ReportService.metrics_table(result.usual_metrics, scheme="usual"),
                "failures": ReportService.failures_table(result),
            }
        return {
            "estimates": ReportService.estimates_table(result),
            "selection": ReportService.selection_table(result),
            "ci_width_ratios": [
                {"method": r.method, "base_route": r.base_route, "op_route": r.op_route,
                 "pair": f"{result.arms[r.pair[0] - 1]} vs {result.arms[r.pair[1] - 1]}", "ratio": fixed(r.ratio, 3)}
                for r in result.ci_width_ratios
            ],
            "ps_correlations": [
                {"arm": result.arms[c.arm - 1], "first": c.first, "second": c.second, "correlation": fixed(c.correlation, 3)}
                for c in result.ps_correlations
            ],
            "positivity": ReportService.positivity_table(result),
            "failures": ReportService.failures_table(result),
        }

    @staticmethod
    def emit_report(result: ExperimentResult | StudyResult, out_dir: str | Path, fmt: str = "markdown") -> list[Path]:
        """Write the result's tables as CSV files or one markdown report; identical inputs give identical bytes."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tables = ReportService._tables(result)
        written = []
        if fmt == "csv":
            for name, rows in tables.items():
                path = out_dir / f"{name}.csv"
                columns = list(rows[0]) if rows else []
                pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
                written.append(path)
        elif fmt in ("markdown", "md"):
            template = "simulation.md.j2" if isinstance(result, ExperimentResult) else "study.md.j2"
            path = out_dir / "report.md"
            path.write_text(_env.get_template(template).render(result=result, tables=tables), encoding="utf-8")
            written.append(path)
        else:
            raise ConfigurationError(f"Unknown report format '{fmt}' (expected csv or markdown)")
        logger.info(f"Report written | {fmt} | {', '.join(p.name for p in written)}")
        return written

    @staticmethod
    def save_result(result: ExperimentResult | StudyResult, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        kind = "simulation" if isinstance(result, ExperimentResult) else "study"
        path = out_dir / RESULT_FILE
        payload = {"kind": kind, "result": result.model_dump(mode="json")}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @staticmethod
    def load_result(in_dir: str | Path) -> ExperimentResult | StudyResult:
        path = Path(in_dir) / RESULT_FILE
        if not path.exists():
            raise ConfigurationError(f"No {RESULT_FILE} in {in_dir}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.get("kind") == "simulation":
            return ExperimentResult.model_validate(payload["result"])
        return StudyResult.model_validate(payload["result"])
