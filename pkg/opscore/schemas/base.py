import numpy as np
from pydantic import BaseModel, ConfigDict


class ArrayModel(BaseModel):
    """Immutable model whose numpy fields are copied and made read-only on construction."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def frozen_array(value, dtype=float, ndim: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def optional_frozen_array(value, dtype=float, ndim: int | None = None) -> np.ndarray | None:
    if value is None:
        return None
    return frozen_array(value, dtype=dtype, ndim=ndim)
