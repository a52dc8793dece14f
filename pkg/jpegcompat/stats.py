"""
Empirical experiments on block incompatibility, and the simulators the
detector is evaluated with.

Every experiment draws cover blocks from a ``BlockSource``, compresses
them, perturbs the quantized coefficients and hands the result to the
antecedent search. Blocks whose decompression clips are skipped. Each
block gets its own random stream keyed by its index, so results do not
depend on the worker count.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy import stats as scipy_stats

from . import rng
from .codec import (
    PIXEL_MAX,
    STANDARD_DIMS,
    PipelineSpec,
    compress_stack,
    decompress_stack,
    inverse_dct_stack,
    round_array,
)
from .parallel import BlockPool
from .search import Compatible, SearchBudget, search_antecedent
from .typing import BlockSource, Dims, FloatArray, IntArray

logger = logging.getLogger(__name__)

DEFAULT_M_MAX = 5
COEFFICIENTS = 64
DRAW_CHUNK = 256
ADJUSTMENTS = ("laplace", "none")


class InsufficientBlocks(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LikelihoodTable:
    """
    Empirical probability that a block stays unsolved after m
    modifications, for m = 0..m_max. Queries above m_max use m_max.
    """

    p_unsolved: FloatArray
    samples: IntArray
    unsolved: IntArray
    budget: SearchBudget
    pipeline_id: str
    dims: Dims = STANDARD_DIMS
    seed: Optional[int] = None
    adjustment: str = "laplace"
    traces: Dict[int, FloatArray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        p = np.asarray(self.p_unsolved, dtype=np.float64)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("likelihood table needs at least the m = 0 entry")
        if ((p < 0) | (p > 1)).any():
            raise ValueError("likelihood table entries must lie in [0, 1]")
        if self.adjustment not in ADJUSTMENTS:
            raise ValueError(f"unknown adjustment {self.adjustment!r}")
        object.__setattr__(self, "p_unsolved", p)
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.int64))
        object.__setattr__(self, "unsolved", np.asarray(self.unsolved, dtype=np.int64))

    @classmethod
    def from_probabilities(
        cls,
        probabilities: Sequence[float],
        pipeline_id: str,
        *,
        samples: int = 1000,
        budget: SearchBudget = SearchBudget(),
        adjustment: str = "laplace",
    ) -> "LikelihoodTable":
        p = np.asarray(probabilities, dtype=np.float64)
        counts = np.full(len(p), samples, dtype=np.int64)
        return cls(p, counts, np.rint(p * samples).astype(np.int64), budget, pipeline_id, adjustment=adjustment)

    @property
    def m_max(self) -> int:
        return len(self.p_unsolved) - 1

    def clamp(self, m: np.ndarray) -> IntArray:
        return np.clip(np.asarray(m, dtype=np.int64), 0, self.m_max)

    def probability(self, m: int) -> float:
        return float(self.p_unsolved[self.clamp(np.asarray(m))])

    def adjusted(self) -> FloatArray:
        """
        Entries safe for logarithms: exact 0 becomes 1/(n+1) and exact 1
        becomes 1 - 1/(n+1), n being the sample count of the entry.
        """
        p = self.p_unsolved.copy()
        if self.adjustment == "none":
            return p
        floor = 1.0 / (np.maximum(self.samples, 1) + 1.0)
        p = np.where(p == 0.0, floor, p)
        return np.where(p == 1.0, 1.0 - floor, p)

    def likelihood_vector(self, n_coefficients: int = COEFFICIENTS) -> FloatArray:
        """
        Adjusted P(unsolved | m) for m = 0..n_coefficients.
        """
        return self.adjusted()[self.clamp(np.arange(n_coefficients + 1))]

    @property
    def table_id(self) -> str:
        digest = hashlib.sha1(self.p_unsolved.tobytes() + self.samples.tobytes())
        return f"{self.pipeline_id}-b{self.budget.max_iterations}-{digest.hexdigest()[:8]}"


def apply_modifications(c: np.ndarray, m: int, seed: rng.SeedLike) -> IntArray:
    """
    Adds +1 or -1, with equal probability, to m distinct coefficients
    chosen uniformly.
    """
    c = np.asarray(c, dtype=np.int64)
    if not 0 <= m <= c.size:
        raise ValueError(f"m must be in [0, {c.size}], got {m}")
    generator = rng.as_generator(seed, rng.MODIFY)
    positions = generator.choice(c.size, size=m, replace=False)
    signs = generator.choice(np.array([-1, 1]), size=m)
    modified = c.copy()
    modified.flat[positions] += signs
    return modified


def split_blocks(pixels: np.ndarray, dims: Dims = STANDARD_DIMS) -> IntArray:
    """
    Cuts an image into blocks in raster order, dropping partial edge blocks.
    """
    rows, cols = dims
    height = pixels.shape[0] - pixels.shape[0] % rows
    width = pixels.shape[1] - pixels.shape[1] % cols
    cropped = np.asarray(pixels[:height, :width], dtype=np.int64)
    grid = cropped.reshape(height // rows, rows, width // cols, cols).swapaxes(1, 2)
    return grid.reshape(-1, rows, cols)


class SyntheticCovers:
    """
    Endless deterministic cover blocks: a smooth gradient plus Gaussian
    texture ("smooth"), or independent uniform pixels ("uniform").
    """

    def __init__(self, seed: int, kind: str = "smooth", dims: Dims = STANDARD_DIMS) -> None:
        if kind not in ("smooth", "uniform"):
            raise ValueError(f"unknown synthetic cover kind {kind!r}")
        self.seed = seed
        self.kind = kind
        self.dims = dims

    def block(self, index: int) -> IntArray:
        generator = rng.generator(self.seed, rng.COVER, index)
        if self.kind == "uniform":
            return generator.integers(0, PIXEL_MAX + 1, size=self.dims, dtype=np.int64)
        rows, cols = self.dims
        level = generator.uniform(48, 208)
        slope_y, slope_x = generator.normal(0.0, 2.0, size=2)
        texture = generator.uniform(0.5, 12.0)
        y, x = np.mgrid[0:rows, 0:cols]
        values = (
            level
            + slope_y * (y - (rows - 1) / 2)
            + slope_x * (x - (cols - 1) / 2)
            + generator.normal(0.0, texture, size=self.dims)
        )
        return np.clip(np.rint(values), 0, PIXEL_MAX).astype(np.int64)

    def blocks(self, start: int, count: int) -> IntArray:
        if count <= 0:
            return np.empty((0, *self.dims), dtype=np.int64)
        return np.stack([self.block(index) for index in range(start, start + count)])


class ImageCovers:
    """
    8x8 blocks of grayscale images read with Pillow, image after image in
    raster order. Images are decoded on demand.
    """

    def __init__(self, paths: Sequence[Union[str, Path]]) -> None:
        self.paths = [Path(path) for path in paths]
        self._offsets: List[int] = [0]
        for path in self.paths:
            with Image.open(path) as image:
                width, height = image.size
            self._offsets.append(self._offsets[-1] + (width // 8) * (height // 8))
        self._cache: Tuple[int, Optional[IntArray]] = (-1, None)

    def __len__(self) -> int:
        return self._offsets[-1]

    def _image_blocks(self, index: int) -> IntArray:
        cached_index, cached = self._cache
        if cached_index == index and cached is not None:
            return cached
        with Image.open(self.paths[index]) as image:
            blocks = split_blocks(np.asarray(image.convert("L")))
        self._cache = (index, blocks)
        return blocks

    def blocks(self, start: int, count: int) -> IntArray:
        out = []
        position = start
        end = min(start + count, len(self))
        while position < end:
            image = int(np.searchsorted(self._offsets, position, side="right")) - 1
            blocks = self._image_blocks(image)
            first = position - self._offsets[image]
            taken = blocks[first:first + end - position]
            out.append(taken)
            position += len(taken)
        if not out:
            return np.empty((0, *STANDARD_DIMS), dtype=np.int64)
        return np.concatenate(out)


class Trial(NamedTuple):
    """
    One search job: a target block plus everything needed to run it.
    """

    target: IntArray
    spec: PipelineSpec
    budget: SearchBudget


class TrialResult(NamedTuple):
    solved: bool
    iterations: int


def run_trial(trial: Trial) -> TrialResult:
    outcome = search_antecedent(trial.target, trial.spec, trial.budget)
    if isinstance(outcome, Compatible):
        return TrialResult(True, outcome.iterations)
    return TrialResult(False, outcome.iterations)


def block_variance(e: np.ndarray) -> float:
    """
    Population variance of a block's spatial rounding error.
    """
    return float(np.var(np.asarray(e, dtype=np.float64)))


def rounding_error_variances(coefficients: IntArray, spec: PipelineSpec) -> FloatArray:
    pixels, y, _ = decompress_stack(coefficients, spec)
    return np.var(pixels - y, axis=(1, 2))


class _Cursor:
    """
    Walks a block source, handing out compressed cover blocks whose
    decompression does not clip. With a ``shuffle`` seed each chunk of the
    source is handed out in a seeded random order.
    """

    def __init__(self, source: BlockSource, spec: PipelineSpec, shuffle: Optional[int] = None) -> None:
        self.source = source
        self.spec = spec
        self.shuffle = shuffle
        self.position = 0
        self.skipped = 0
        self._pending: List[Tuple[int, IntArray]] = []

    def next(self) -> Tuple[int, IntArray]:
        while not self._pending:
            pixels = self.source.blocks(self.position, DRAW_CHUNK)
            if len(pixels) == 0:
                raise InsufficientBlocks(f"block source exhausted after {self.position} blocks")
            quantized = compress_stack(pixels, self.spec)
            _, _, clipped = decompress_stack(quantized, self.spec)
            for offset, (block, clip) in enumerate(zip(quantized, clipped)):
                if clip:
                    self.skipped += 1
                else:
                    self._pending.append((self.position + offset, block))
            if self.shuffle is not None:
                order = rng.generator(self.shuffle, rng.SELECT, self.position).permutation(len(self._pending))
                self._pending = [self._pending[index] for index in order]
            self.position += len(pixels)
        return self._pending.pop(0)


def _modified_trials(
    cursor: _Cursor,
    m: int,
    count: int,
    seed: int,
    budget: SearchBudget,
) -> Tuple[List[Trial], List[float]]:
    trials: List[Trial] = []
    variances: List[float] = []
    spec = cursor.spec
    while len(trials) < count:
        index, block = cursor.next()
        modified = apply_modifications(block, m, rng.generator(seed, rng.MODIFY, m, index))
        pixels, y, clipped = decompress_stack(modified[None], spec)
        if clipped[0]:
            cursor.skipped += 1
            continue
        trials.append(Trial(modified, spec, budget))
        variances.append(block_variance(pixels[0] - y[0]))
    return trials, variances


def build_likelihood_table(
    source: BlockSource,
    spec: PipelineSpec,
    budget: SearchBudget,
    m_max: int = DEFAULT_M_MAX,
    samples_per_m: int = 1000,
    seed: int = 0,
    *,
    checkpoints: Sequence[int] = (),
    pool: Optional[BlockPool] = None,
) -> LikelihoodTable:
    """
    For each m in 0..m_max, draws fresh non-clipped cover blocks, applies m
    random modifications and records the fraction left unsolved by the
    search. ``checkpoints`` adds the unsolved ratio each smaller budget
    would have given, taken from the same runs.
    """
    if samples_per_m < 1:
        raise ValueError(f"samples_per_m must be at least 1, got {samples_per_m}")
    if m_max < 0:
        raise ValueError(f"m_max must be non-negative, got {m_max}")
    pool = pool or BlockPool()
    cursor = _Cursor(source, spec)
    unsolved = np.zeros(m_max + 1, dtype=np.int64)
    traces = {int(point): np.zeros(m_max + 1) for point in checkpoints}
    for m in range(m_max + 1):
        trials, _ = _modified_trials(cursor, m, samples_per_m, seed, budget)
        results = pool.map(run_trial, trials)
        unsolved[m] = sum(not result.solved for result in results)
        for point, ratios in traces.items():
            ratios[m] = sum(not result.solved or result.iterations > point for result in results) / samples_per_m
        logger.info("m=%d: %d of %d blocks unsolved", m, unsolved[m], samples_per_m)
    if cursor.skipped:
        logger.info("Skipped %d clipped blocks", cursor.skipped)
    samples = np.full(m_max + 1, samples_per_m, dtype=np.int64)
    return LikelihoodTable(
        unsolved / samples,
        samples,
        unsolved,
        budget,
        spec.pipeline_id,
        spec.dims,
        seed,
        traces=traces,
    )


@dataclass(frozen=True, eq=False)
class HeatmapResult:
    """
    Unsolved ratio after a single +-1 change, per coefficient position,
    with chi-square tests of independence from the position.
    """

    plus: FloatArray
    minus: FloatArray
    trials: IntArray
    statistic: float
    p_value: float
    plus_p_value: float
    minus_p_value: float
    blocks: Tuple[int, ...] = ()

    @property
    def ratios(self) -> FloatArray:
        return (self.plus + self.minus) / 2


def _uniformity(unsolved: np.ndarray, trials: np.ndarray) -> Tuple[float, float]:
    unsolved = np.asarray(unsolved).ravel()
    trials = np.asarray(trials).ravel()
    keep = trials > 0
    table = np.stack([unsolved[keep], trials[keep] - unsolved[keep]], axis=1)
    if (table.sum(axis=0) == 0).any() or len(table) < 2:
        return 0.0, 1.0
    result = scipy_stats.chi2_contingency(table)
    return float(result[0]), float(result[1])


def position_heatmap(
    source: BlockSource,
    spec: PipelineSpec,
    budget: SearchBudget,
    samples: int,
    seed: int = 0,
    *,
    pool: Optional[BlockPool] = None,
) -> HeatmapResult:
    """
    Modifies each coefficient position of ``samples`` cover blocks by +1
    and by -1 and searches every result. The cover blocks are drawn from
    the source in an order shuffled by ``seed``.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    pool = pool or BlockPool()
    cursor = _Cursor(source, spec, shuffle=seed)
    size = spec.size
    trials: List[Trial] = []
    slots: List[Tuple[int, int]] = []
    used: List[int] = []
    for _ in range(samples):
        index, block = cursor.next()
        used.append(index)
        for position in range(size):
            for sign_index, sign in enumerate((1, -1)):
                modified = block.copy()
                modified.flat[position] += sign
                if decompress_stack(modified[None], spec)[2][0]:
                    continue
                trials.append(Trial(modified, spec, budget))
                slots.append((position, sign_index))
    results = pool.map(run_trial, trials)

    unsolved = np.zeros((size, 2), dtype=np.int64)
    counts = np.zeros((size, 2), dtype=np.int64)
    for (position, sign_index), result in zip(slots, results):
        counts[position, sign_index] += 1
        unsolved[position, sign_index] += not result.solved
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(counts > 0, unsolved / np.maximum(counts, 1), 0.0)
    statistic, p_value = _uniformity(unsolved.sum(axis=1), counts.sum(axis=1))
    _, plus_p = _uniformity(unsolved[:, 0], counts[:, 0])
    _, minus_p = _uniformity(unsolved[:, 1], counts[:, 1])
    return HeatmapResult(
        ratios[:, 0].reshape(spec.dims),
        ratios[:, 1].reshape(spec.dims),
        counts.sum(axis=1).reshape(spec.dims),
        statistic,
        p_value,
        plus_p,
        minus_p,
        tuple(used),
    )


@dataclass(frozen=True)
class VarianceProfileEntry:
    m: int
    blocks: int
    mean_variance: float
    solved_mean: Optional[float] = None
    unsolved_mean: Optional[float] = None


@dataclass(frozen=True)
class VarianceProfile:
    entries: Tuple[VarianceProfileEntry, ...]
    correlation: Optional[float] = None


def variance_profile(
    source: BlockSource,
    spec: PipelineSpec,
    m_values: Sequence[int],
    samples: int,
    seed: int = 0,
    *,
    budget: Optional[SearchBudget] = None,
    pool: Optional[BlockPool] = None,
) -> VarianceProfile:
    """
    Mean spatial rounding error variance of blocks carrying m random
    modifications. With a budget, every block is also searched and the
    variances are split by outcome, with the point-biserial correlation
    between variance and the unsolved flag.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    pool = pool or BlockPool()
    cursor = _Cursor(source, spec)
    entries = []
    all_variances: List[float] = []
    all_unsolved: List[bool] = []
    for m in m_values:
        trials, variances = _modified_trials(cursor, m, samples, seed, budget or SearchBudget(1))
        solved_mean = unsolved_mean = None
        if budget is not None:
            flags = [not result.solved for result in pool.map(run_trial, trials)]
            values = np.asarray(variances)
            mask = np.asarray(flags, dtype=bool)
            solved_mean = float(values[~mask].mean()) if (~mask).any() else None
            unsolved_mean = float(values[mask].mean()) if mask.any() else None
            all_variances += variances
            all_unsolved += flags
        entries.append(VarianceProfileEntry(m, samples, float(np.mean(variances)), solved_mean, unsolved_mean))
        logger.info("m=%d: mean rounding error variance %.5f", m, entries[-1].mean_variance)
    correlation = None
    if budget is not None and 0 < sum(all_unsolved) < len(all_unsolved):
        correlation = float(scipy_stats.pointbiserialr(all_unsolved, all_variances)[0])
    return VarianceProfile(tuple(entries), correlation)


def simulate_lsbm_counts(
    n_blocks: int,
    payload_bpp: float,
    seed: rng.SeedLike,
    *,
    coefficients: int = COEFFICIENTS,
) -> IntArray:
    """
    Modifications per block when each coefficient changes independently
    with probability payload/2.
    """
    if not 0.0 <= payload_bpp <= 1.0:
        raise ValueError(f"payload must be in [0, 1] bpp, got {payload_bpp}")
    generator = rng.as_generator(seed, rng.COUNTS)
    return generator.binomial(coefficients, payload_bpp / 2, size=n_blocks).astype(np.int64)


def simulate_pmap_counts(pmaps: np.ndarray, seed: rng.SeedLike) -> IntArray:
    """
    Modifications per block, drawing each coefficient as Bernoulli(q_i)
    from the block's p-map.
    """
    q = np.asarray(pmaps, dtype=np.float64)
    q = q.reshape(len(q), -1)
    if ((q < 0) | (q > 1)).any():
        raise ValueError("p-map probabilities must lie in [0, 1]")
    generator = rng.as_generator(seed, rng.COUNTS)
    return (generator.random(q.shape) < q).sum(axis=1).astype(np.int64)


def simulate_outcomes(m: np.ndarray, table: LikelihoodTable, seed: rng.SeedLike) -> IntArray:
    """
    t_i = 1 iff r_i <= P(unsolved | m_i), r_i uniform on (0, 1].
    """
    m = np.asarray(m, dtype=np.int64)
    generator = rng.as_generator(seed, rng.OUTCOME)
    r = 1.0 - generator.random(m.shape)
    return (r <= table.p_unsolved[table.clamp(m)]).astype(np.int64)


def simulate_block_variances(
    m: np.ndarray,
    spec: PipelineSpec,
    seed: rng.SeedLike,
) -> FloatArray:
    """
    Spatial rounding error variances of simulated blocks: DCT rounding
    errors uniform on [-1/2, 1/2), plus m_i random +-1 changes, mapped back
    through the inverse DCT and rounded.
    """
    m = np.asarray(m, dtype=np.int64).ravel()
    generator = rng.as_generator(seed, rng.VARIANCE)
    size = spec.size
    u = generator.random((len(m), size)) - 0.5
    for index, count in enumerate(m):
        if count:
            positions = generator.choice(size, size=min(int(count), size), replace=False)
            u[index, positions] += generator.choice(np.array([-1.0, 1.0]), size=len(positions))
    # y - x = IDCT((u + delta) Q) for an integer cover block x
    dequantized = u.reshape(-1, *spec.dims) * spec.quant.steps
    z = inverse_dct_stack(dequantized, spec.dims)
    e = round_array(z) - z
    return np.var(e.reshape(len(m), -1), axis=1)
