from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator

from opscore.schemas.base import ArrayModel, frozen_array


class TreeParams(BaseModel):
    cp: float = Field(default=0.001, ge=0)
    min_node: int = Field(default=7, ge=1)
    max_depth: int = Field(default=30, ge=1)
    mtry: int | Literal["sqrt"] | None = None

    def resolve_mtry(self, k: int) -> int:
        """Columns searched per split; None means every column."""
        if k <= 0:
            return 0
        if self.mtry is None:
            return k
        if self.mtry == "sqrt":
            return max(1, min(k, int(np.floor(np.sqrt(k)))))
        return max(1, min(k, int(self.mtry)))


class CpRow(BaseModel):
    cp: float
    nsplit: int
    xerror: float | None = None
    xstd: float | None = None


class Tree(ArrayModel):
    """
    Flat-array binary tree.

    feature[i] == -1 marks a leaf. Rows with x[:, feature] <= threshold go left.
    counts holds the class counts of the training rows reaching each node;
    node_ids maps each node to its id in the fully grown tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    node_ids: np.ndarray
    n_classes: int
    params: TreeParams
    cp_table: tuple[CpRow, ...] = ()

    @field_validator("feature", "left", "right", "node_ids", mode="before")
    @classmethod
    def _coerce_int(cls, v):
        return frozen_array(v, dtype=np.int64, ndim=1)

    @field_validator("threshold", mode="before")
    @classmethod
    def _coerce_threshold(cls, v):
        return frozen_array(v, ndim=1)

    @field_validator("counts", mode="before")
    @classmethod
    def _coerce_counts(cls, v):
        return frozen_array(v, ndim=2)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    @property
    def n_splits(self) -> int:
        return self.n_nodes - self.n_leaves

    @property
    def proportions(self) -> np.ndarray:
        """Raw class proportions per node."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.maximum(totals, 1.0)


class Ensemble(ArrayModel):
    trees: tuple[Tree, ...]
    inbag: np.ndarray
    oob_prob: np.ndarray
    coverage_count: np.ndarray
    backfilled: np.ndarray

    @field_validator("inbag", "coverage_count", mode="before")
    @classmethod
    def _coerce_int(cls, v):
        return frozen_array(v, dtype=np.int64)

    @field_validator("oob_prob", mode="before")
    @classmethod
    def _coerce_prob(cls, v):
        return frozen_array(v, ndim=2)

    @field_validator("backfilled", mode="before")
    @classmethod
    def _coerce_flag(cls, v):
        return frozen_array(v, dtype=bool, ndim=1)
