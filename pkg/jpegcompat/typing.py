import sys
from typing import Any, Dict, Literal, Protocol, Tuple, TypedDict

import numpy as np
import numpy.typing as npt

if sys.version_info >= (3, 11):
    from typing import NotRequired
else:
    from typing_extensions import NotRequired

__all__ = (
    "Dims",
    "IntArray",
    "FloatArray",
    "BoolArray",
    "BlockSource",
    "CancellationToken",
    "AnalyzeRow",
    "AntecedentRow",
    "SimulationRow",
    "ZeroFaRow",
    "RocRow",
    "HeatmapRow",
    "VarianceRow",
    "ReportMetadata",
    "Embedding",
    "PriorName",
)

Dims = Tuple[int, int]

IntArray = npt.NDArray[np.int64]
FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

Embedding = Literal["lsbm", "pmap"]
PriorName = Literal["uniform", "sca"]


class BlockSource(Protocol):
    """
    An indexable, deterministic sequence of pixel blocks.
    """

    def blocks(self, start: int, count: int) -> IntArray:
        ...


class CancellationToken(Protocol):
    @property
    def expired(self) -> bool:
        ...


class AnalyzeRow(TypedDict):
    path: str
    status: Literal["ok", "failed"]
    n_blocks: int
    n_unsolved: int
    log_lr: float
    clipped_excluded: int
    error: NotRequired[str]


class AntecedentRow(TypedDict):
    index: int
    outcome: Literal["compatible", "unsolved", "incompatible"]
    iterations: int
    metric: float
    ilp: NotRequired[str]


class SimulationRow(TypedDict):
    payload: float
    combination: str
    fraction: float
    p_e: float


class ZeroFaRow(TypedDict):
    payload: float
    detection_power: float


class RocRow(TypedDict):
    payload: float
    combination: str
    fraction: float
    threshold: float
    p_fa: float
    p_d: float


class HeatmapRow(TypedDict):
    position: int
    row: int
    col: int
    plus_ratio: float
    minus_ratio: float
    ratio: float


class VarianceRow(TypedDict):
    m: int
    blocks: int
    mean_variance: float
    solved_mean: NotRequired[float]
    unsolved_mean: NotRequired[float]


ReportMetadata = Dict[str, Any]
