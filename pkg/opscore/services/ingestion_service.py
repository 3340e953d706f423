"""
Study CSV ingestion and export.

Dialect: comma separated, UTF-8, header row, "." decimal point. Declared categorical columns
are reference coded (first level in sorted order is the reference); the always-adjusted
block comes first in the covariate matrix and is penalty exempt.
"""

from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import field_validator

from opscore.core.exceptions import IngestionError
from opscore.core.logger import service_logger as logger
from opscore.schemas.base import ArrayModel
from opscore.schemas.dataset import BinaryOutcome, CensoredOutcome, Dataset
from opscore.schemas.experiment import StudySchema
from opscore.schemas.fit import DesignSpec
from opscore.services.dataset_service import DatasetService

MISSING_TOKENS = {"", "na", "nan", "null", "none"}


class IngestedStudy(ArrayModel):
    dataset: Dataset
    spec: DesignSpec
    always_include: tuple[int, ...] = ()
    censoring_columns: tuple[int, ...] = ()
    arm_labels: tuple[str, ...]
    # source column -> covariate column indices it expanded into
    sources: dict[str, tuple[int, ...]]

    @field_validator("always_include", "censoring_columns", mode="before")
    @classmethod
    def _sorted(cls, v):
        return tuple(sorted(int(c) for c in v))


def _numeric(column: pd.Series, name: str) -> np.ndarray:
    out = np.empty(column.shape[0])
    for i, cell in enumerate(column):
        try:
            out[i] = float(cell)
        except ValueError:
            raise IngestionError(f"non-numeric value '{cell}'", row=i + 1, column=name)
        if not np.isfinite(out[i]):
            raise IngestionError(f"non-finite value '{cell}'", row=i + 1, column=name)
    return out


def _level_order(values: Sequence[str]) -> list[str]:
    """Numeric-looking levels sort numerically, anything else lexicographically."""
    levels = sorted(set(values))
    try:
        return sorted(levels, key=float)
    except ValueError:
        return levels


def _indicator(column: pd.Series, name: str, allowed=(0.0, 1.0)) -> np.ndarray:
    values = _numeric(column, name)
    bad = ~np.isin(values, allowed)
    if bad.any():
        row = int(np.argmax(bad))
        raise IngestionError(f"expected one of {allowed}, got '{column.iloc[row]}'", row=row + 1, column=name)
    return values


class IngestionService:
    """CSV <-> Dataset conversion for real studies"""

    @staticmethod
    def read_table(path: str | Path) -> pd.DataFrame:
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"file not found: {path}")
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        return df.apply(lambda col: col.str.strip())

    @staticmethod
    def ingest_csv(path: str | Path, schema: StudySchema) -> IngestedStudy:
        df = IngestionService.read_table(path)
        declared = (
            list(schema.reserved())
            + schema.always_adjust
            + schema.covariates
            + schema.categorical
            + schema.censoring_columns
        )
        for name in declared:
            if name not in df.columns:
                raise IngestionError("unknown column", column=name)

        covariates = schema.covariates or [
            c for c in df.columns if c not in schema.reserved() and c not in schema.always_adjust
        ]
        used = list(schema.reserved()) + schema.always_adjust + covariates
        for name in used:
            missing = df[name].str.lower().isin(MISSING_TOKENS).to_numpy()
            if missing.any():
                raise IngestionError("missing value", row=int(np.argmax(missing)) + 1, column=name)

        blocks: list[np.ndarray] = []
        names: list[str] = []
        sources: dict[str, tuple[int, ...]] = {}
        categorical = set(schema.categorical)
        for name in schema.always_adjust + covariates:
            start = len(names)
            if name in categorical:
                levels = _level_order(df[name].tolist())
                for level in levels[1:]:
                    blocks.append((df[name] == level).to_numpy(dtype=float))
                    names.append(f"{name}={level}")
            else:
                blocks.append(_numeric(df[name], name))
                names.append(name)
            sources[name] = tuple(range(start, len(names)))
        x = np.column_stack(blocks) if blocks else np.zeros((len(df), 0))

        labels = schema.treatment_levels or _level_order(df[schema.treatment].tolist())
        index = {label: j + 1 for j, label in enumerate(labels)}
        unknown = ~df[schema.treatment].isin(index).to_numpy()
        if unknown.any():
            row = int(np.argmax(unknown))
            raise IngestionError(
                f"treatment level '{df[schema.treatment].iloc[row]}' not in {labels}", row=row + 1, column=schema.treatment
            )
        z = df[schema.treatment].map(index).to_numpy(dtype=np.int64)

        if schema.is_censored:
            time = _numeric(df[schema.time], schema.time)
            if np.any(time < 0):
                row = int(np.argmax(time < 0))
                raise IngestionError("negative time", row=row + 1, column=schema.time)
            status = _indicator(df[schema.status], schema.status)
            r = ((status == 1) | (time >= schema.horizon)).astype(np.int64)
            y = np.where(r == 1, ((status == 1) & (time < schema.horizon)).astype(float), np.nan)
            outcome = CensoredOutcome(t_obs=time, r=r, horizon=schema.horizon, y=y)
        else:
            outcome = BinaryOutcome(y=_indicator(df[schema.outcome], schema.outcome))

        d = DatasetService.require_valid(Dataset(x=x, z=z, outcome=outcome, n_arms=len(labels), column_names=tuple(names)))
        always = [k for name in schema.always_adjust for k in sources[name]]
        censoring = [k for name in schema.censoring_columns for k in sources.get(name, ())]
        if len(censoring) < len(schema.censoring_columns):
            missing = [c for c in schema.censoring_columns if c not in sources]
            raise IngestionError(f"censoring columns {missing} are not covariates")
        exempt = set(always)
        spec = DesignSpec(columns=tuple(range(x.shape[1])), exempt=tuple(k in exempt for k in range(x.shape[1])))
        logger.info(
            f"Ingested {path} | n={d.n} p={d.p} J={d.J} | always={len(always)} censored={schema.is_censored}"
        )
        return IngestedStudy(
            dataset=d,
            spec=spec,
            always_include=always,
            censoring_columns=censoring,
            arm_labels=tuple(labels),
            sources=sources,
        )

    @staticmethod
    def export_csv(
        d: Dataset,
        path: str | Path,
        arm_labels: Sequence[str] | None = None,
        always_adjust: Sequence[str] = (),
        censoring_columns: Sequence[str] = (),
    ) -> StudySchema:
        """Write d in the ingestion dialect and return the schema that reads it back."""
        names = list(d.names())
        labels = list(arm_labels) if arm_labels is not None else [str(j) for j in range(1, d.J + 1)]
        frame = {name: d.x[:, k] for k, name in enumerate(names)}
        frame["treatment"] = [labels[j - 1] for j in d.z]
        if isinstance(d.outcome, CensoredOutcome):
            out = d.outcome
            frame["time"] = out.t_obs
            frame["status"] = ((out.r == 1) & (out.y == 1)).astype(int)
            schema = StudySchema(
                treatment="treatment",
                time="time",
                status="status",
                horizon=out.horizon,
                always_adjust=list(always_adjust),
                censoring_columns=list(censoring_columns),
                treatment_levels=labels,
            )
        else:
            frame["outcome"] = d.outcome.y.astype(int)
            schema = StudySchema(
                treatment="treatment",
                outcome="outcome",
                always_adjust=list(always_adjust),
                censoring_columns=list(censoring_columns),
                treatment_levels=labels,
            )
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(frame).to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
        logger.info(f"Exported dataset to {path} | n={d.n} p={d.p}")
        return schema
