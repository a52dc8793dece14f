import enum
import functools
import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .islow import SCALE, fdct_islow
from .typing import BoolArray, Dims, FloatArray, IntArray

STANDARD_DIMS: Dims = (8, 8)
TOY_DIMS: Dims = (1, 2)
SUPPORTED_DIMS = (STANDARD_DIMS, TOY_DIMS)

PIXEL_MAX = 255
LEVEL_SHIFT = 128

# Luminance table from Annex K of the JPEG standard, natural order.
LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


class DimensionError(ValueError):
    pass


class PipelineError(ValueError):
    pass


class DctVariant(enum.Enum):
    NAIVE = "naive"
    ISLOW = "islow"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class QuantTable:
    """
    A grid of positive integer quantization steps.
    """

    steps: IntArray

    def __post_init__(self) -> None:
        steps = np.array(self.steps, dtype=np.int64)
        if steps.ndim != 2:
            raise DimensionError(f"quantization table must be 2-D, got shape {steps.shape}")
        if (steps < 1).any():
            raise PipelineError("quantization steps must all be at least 1")
        object.__setattr__(self, "steps", _frozen(steps))

    @classmethod
    def unit(cls, dims: Dims = STANDARD_DIMS) -> "QuantTable":
        return cls(np.ones(dims, dtype=np.int64))

    @classmethod
    def from_quality(cls, quality: int) -> "QuantTable":
        """
        Scales the Annex K luminance table the way libjpeg's
        jpeg_set_quality does, with baseline clamping to [1, 255].
        """
        if not 1 <= quality <= 100:
            raise PipelineError(f"quality must be in [1, 100], got {quality}")
        scale = 5000 // quality if quality < 50 else 200 - quality * 2
        steps = (LUMINANCE_TABLE * scale + 50) // 100
        return cls(np.clip(steps, 1, 255))

    @property
    def dims(self) -> Dims:
        rows, cols = self.steps.shape
        return (rows, cols)

    @property
    def is_unit(self) -> bool:
        return bool((self.steps == 1).all())

    @property
    def digest(self) -> str:
        return hashlib.sha1(self.steps.tobytes()).hexdigest()[:10]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantTable):
            return NotImplemented
        return self.steps.shape == other.steps.shape and bool(
            (self.steps == other.steps).all()
        )

    def __hash__(self) -> int:
        return hash((self.steps.shape, self.steps.tobytes()))


@dataclass(frozen=True)
class PipelineSpec:
    """
    The compressor under test: transform variant, level shift and
    quantization table for a given block size.
    """

    dct: DctVariant
    level_shift: bool
    quant: QuantTable
    dims: Dims = STANDARD_DIMS

    def __post_init__(self) -> None:
        dims = tuple(self.dims)
        if dims not in SUPPORTED_DIMS:
            raise DimensionError(f"unsupported block dims {dims}")
        if self.quant.dims != dims:
            raise DimensionError(
                f"quantization table dims {self.quant.dims} do not match block dims {dims}"
            )
        if self.dct is DctVariant.ISLOW and dims != STANDARD_DIMS:
            raise PipelineError("the islow DCT is only defined for 8x8 blocks")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def standard(
        cls,
        quant: Optional[QuantTable] = None,
        dct: DctVariant = DctVariant.NAIVE,
        level_shift: bool = True,
    ) -> "PipelineSpec":
        return cls(dct, level_shift, quant or QuantTable.unit(), STANDARD_DIMS)

    @classmethod
    def toy(cls, steps: Tuple[int, int] = (1, 1)) -> "PipelineSpec":
        return cls(DctVariant.NAIVE, False, QuantTable(np.array([steps])), TOY_DIMS)

    @property
    def pipeline_id(self) -> str:
        rows, cols = self.dims
        shift = "ls" if self.level_shift else "nols"
        return f"{self.dct.value}-{shift}-{rows}x{cols}-q{self.quant.digest}"

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1]


class Decompression(NamedTuple):
    pixels: IntArray
    y: FloatArray
    clipped: bool


class ErrorTriple(NamedTuple):
    u: FloatArray
    e: FloatArray
    k: IntArray
    clipped: bool


@functools.lru_cache(maxsize=None)
def dct_basis(n: int) -> FloatArray:
    """
    Orthonormal 1-D DCT-II matrix of size n; row k holds basis function k.
    """
    k = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(n, dtype=np.float64)[None, :]
    basis = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    weights = np.full((n, 1), math.sqrt(2.0 / n))
    weights[0, 0] = math.sqrt(1.0 / n)
    return _frozen(weights * basis)


@functools.lru_cache(maxsize=None)
def dct_matrix(dims: Dims) -> FloatArray:
    """
    The 2-D transform as a (R*C)x(R*C) matrix acting on row-major
    flattened blocks.
    """
    rows, cols = dims
    return _frozen(np.kron(dct_basis(rows), dct_basis(cols)))


def round_half_away(v: float) -> int:
    if not math.isfinite(v):
        raise ValueError(f"cannot round non-finite value {v}")
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def round_array(values: np.ndarray) -> IntArray:
    """
    Element-wise nearest integer, exact halves away from zero.
    """
    return (np.sign(values) * np.floor(np.abs(values) + 0.5)).astype(np.int64)


def _check_stack(blocks: np.ndarray, spec: PipelineSpec) -> np.ndarray:
    if blocks.ndim != 3 or blocks.shape[1:] != spec.dims:
        raise DimensionError(f"expected blocks of dims {spec.dims}, got shape {blocks.shape}")
    return blocks


def _as_block(block: Union[np.ndarray, Sequence[Sequence[int]]], spec: PipelineSpec) -> np.ndarray:
    array = np.asarray(block)
    if array.shape != spec.dims:
        raise DimensionError(f"expected a block of dims {spec.dims}, got shape {array.shape}")
    return array


def _as_pixels(block: Union[np.ndarray, Sequence[Sequence[int]]], spec: PipelineSpec) -> IntArray:
    array = _as_block(block, spec).astype(np.int64)
    if array.min() < 0 or array.max() > PIXEL_MAX:
        raise ValueError("pixel values must lie in [0, 255]")
    return array


def _naive_forward(values: FloatArray, dims: Dims) -> FloatArray:
    # Row transform first, then columns.
    rows, cols = dims
    return np.matmul(dct_basis(rows), np.matmul(values, dct_basis(cols).T))


def inverse_dct_stack(coefficients: np.ndarray, dims: Dims) -> FloatArray:
    """
    Floating point inverse DCT of a (N, R, C) stack, without level shift.
    """
    rows, cols = dims
    return np.matmul(dct_basis(rows).T, np.matmul(coefficients, dct_basis(cols)))


def _shift(spec: PipelineSpec) -> int:
    return LEVEL_SHIFT if spec.level_shift else 0


def forward_dct_stack(pixels: np.ndarray, spec: PipelineSpec) -> FloatArray:
    """
    Forward transform of a (N, R, C) stack of pixel blocks.
    """
    pixels = _check_stack(np.asarray(pixels), spec)
    if spec.dct is DctVariant.ISLOW:
        return fdct_islow(pixels.astype(np.int64) - _shift(spec)) / float(SCALE)
    return _naive_forward(pixels.astype(np.float64) - _shift(spec), spec.dims)


def compress_stack(pixels: np.ndarray, spec: PipelineSpec) -> IntArray:
    pixels = _check_stack(np.asarray(pixels), spec)
    if spec.dct is DctVariant.ISLOW:
        # libjpeg quantizes the scaled integers directly
        workspace = fdct_islow(pixels.astype(np.int64) - _shift(spec))
        divisors = spec.quant.steps * SCALE
        magnitude = (np.abs(workspace) + divisors // 2) // divisors
        return np.sign(workspace) * magnitude
    return round_array(forward_dct_stack(pixels, spec) / spec.quant.steps)


def decompress_stack(coefficients: np.ndarray, spec: PipelineSpec) -> Tuple[IntArray, FloatArray, BoolArray]:
    """
    Dequantize, inverse-transform with the floating point IDCT, round and
    clip. Returns the pixels, the real values before rounding and a
    per-block flag telling whether clipping changed anything.
    """
    coefficients = _check_stack(np.asarray(coefficients), spec)
    y = inverse_dct_stack(coefficients.astype(np.float64) * spec.quant.steps, spec.dims) + _shift(spec)
    rounded = round_array(y)
    clipped = ((rounded < 0) | (rounded > PIXEL_MAX)).reshape(len(rounded), -1).any(axis=1)
    return np.clip(rounded, 0, PIXEL_MAX), y, clipped


def forward_dct(x: Union[np.ndarray, Sequence[Sequence[int]]], spec: PipelineSpec) -> FloatArray:
    return forward_dct_stack(_as_pixels(x, spec)[None], spec)[0]


def compress(x: Union[np.ndarray, Sequence[Sequence[int]]], spec: PipelineSpec) -> IntArray:
    return compress_stack(_as_pixels(x, spec)[None], spec)[0]


def decompress(c: Union[np.ndarray, Sequence[Sequence[int]]], spec: PipelineSpec) -> Decompression:
    pixels, y, clipped = decompress_stack(_as_block(c, spec).astype(np.int64)[None], spec)
    return Decompression(pixels[0], y[0], bool(clipped[0]))


def compute_errors(x: Union[np.ndarray, Sequence[Sequence[int]]], spec: PipelineSpec) -> ErrorTriple:
    """
    The DCT rounding error u, spatial rounding error e and compression
    error k of compressing then decompressing ``x``.
    """
    x = _as_pixels(x, spec)
    d = forward_dct(x, spec)
    c = compress(x, spec)
    decompressed = decompress(c, spec)
    u = c - d / spec.quant.steps
    e = decompressed.pixels - decompressed.y
    k = decompressed.pixels - x
    if spec.dct is DctVariant.NAIVE and not decompressed.clipped:
        residual = np.abs(k - e - inverse_dct_stack(u * spec.quant.steps, spec.dims)).max()
        if residual > 1e-9:
            raise ArithmeticError(f"error identity violated, residual {residual:.3g}")
    return ErrorTriple(u, e, k, decompressed.clipped)


def all_toy_blocks() -> IntArray:
    """
    Every (1, 2) pixel block, in raster order of the pixel pair.
    """
    values = np.arange(PIXEL_MAX + 1, dtype=np.int64)
    first, second = np.meshgrid(values, values, indexing="ij")
    return np.stack([first.ravel(), second.ravel()], axis=1).reshape(-1, *TOY_DIMS)


@dataclass(frozen=True)
class ToyEnumeration:
    """
    Antecedent counts for every reachable quantized toy block, with the
    bounding box of the reachable set.
    """

    counts: Dict[Tuple[int, int], int]
    lower: Tuple[int, int]
    upper: Tuple[int, int]

    def __contains__(self, block: object) -> bool:
        return self.key(block) in self.counts

    @staticmethod
    def key(block: object) -> Tuple[int, int]:
        first, second = np.asarray(block, dtype=np.int64).ravel()
        return (int(first), int(second))

    @property
    def box_size(self) -> int:
        return (self.upper[0] - self.lower[0] + 1) * (self.upper[1] - self.lower[1] + 1)

    def box(self) -> Iterator[Tuple[int, int]]:
        for first in range(self.lower[0], self.upper[0] + 1):
            for second in range(self.lower[1], self.upper[1] + 1):
                yield (first, second)

    def box_blocks(self) -> IntArray:
        first, second = np.meshgrid(
            np.arange(self.lower[0], self.upper[0] + 1),
            np.arange(self.lower[1], self.upper[1] + 1),
            indexing="ij",
        )
        return np.stack([first.ravel(), second.ravel()], axis=1).reshape(-1, *TOY_DIMS).astype(np.int64)

    def incompatible(self) -> Iterator[Tuple[int, int]]:
        return (key for key in self.box() if key not in self.counts)


def toy_enumerate(spec: PipelineSpec) -> ToyEnumeration:
    """
    Compresses all 65536 toy pixel pairs and counts the antecedents of
    each reachable quantized block.
    """
    if spec.dims != TOY_DIMS:
        raise DimensionError(f"toy enumeration needs dims {TOY_DIMS}, got {spec.dims}")
    quantized = compress_stack(all_toy_blocks(), spec).reshape(-1, 2)
    unique, counts = np.unique(quantized, axis=0, return_counts=True)
    table = {(int(a), int(b)): int(n) for (a, b), n in zip(unique, counts)}
    lower = unique.min(axis=0)
    upper = unique.max(axis=0)
    return ToyEnumeration(table, (int(lower[0]), int(lower[1])), (int(upper[0]), int(upper[1])))
