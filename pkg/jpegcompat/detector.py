"""
Image-level steganalysis from per-block solved/unsolved outcomes.

The score is the log-likelihood ratio of the outcomes under "stego" (the
number of modifications m of each block follows a prior) against "cover"
(m = 0), blocks being independent. A block proven incompatible can only
come from a modified image, which gives a detector with no false alarms.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import rng
from .codec import PipelineSpec
from .jpeg import JpegImage
from .stats import (
    COEFFICIENTS,
    LikelihoodTable,
    rounding_error_variances,
    simulate_block_variances,
    simulate_lsbm_counts,
    simulate_outcomes,
    simulate_pmap_counts,
)
from .typing import Embedding, FloatArray, IntArray

logger = logging.getLogger(__name__)


class TableMismatch(ValueError):
    pass


def poisson_binomial_pmf(q: np.ndarray) -> FloatArray:
    """
    Distribution of the number of successes among independent
    Bernoulli(q_i) trials, by dynamic programming.

    A 1-D ``q`` gives one pmf of length len(q) + 1. A 2-D ``q`` is a batch,
    one row of probabilities per block, and gives one pmf per row.
    """
    q = np.asarray(q, dtype=np.float64)
    batch = q.reshape(-1, q.shape[-1]) if q.ndim > 1 else q.reshape(1, -1)
    if ((batch < 0) | (batch > 1)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    trials = batch.shape[1]
    pmf = np.zeros((len(batch), trials + 1))
    pmf[:, 0] = 1.0
    for count in range(1, trials + 1):
        probability = batch[:, count - 1:count]
        pmf[:, 1:count + 1] = pmf[:, 1:count + 1] * (1 - probability) + pmf[:, :count] * probability
        pmf[:, 0] *= 1 - probability[:, 0]
    return pmf if q.ndim > 1 else pmf[0]


@dataclass(frozen=True, eq=False)
class Prior:
    """
    P(m) for m = 0..64 under the stego hypothesis.
    """

    name: str
    pmf: FloatArray

    def __post_init__(self) -> None:
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if abs(pmf.sum() - 1.0) > 1e-12 or (pmf < 0).any():
            raise ValueError(f"prior {self.name!r} is not a probability mass function")
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def uniform(cls, low: int = 1, high: int = COEFFICIENTS, size: int = COEFFICIENTS) -> "Prior":
        if not 0 <= low <= high <= size:
            raise ValueError(f"invalid uniform prior range [{low}, {high}]")
        pmf = np.zeros(size + 1)
        pmf[low:high + 1] = 1.0 / (high - low + 1)
        return cls(f"uniform[{low};{high}]", pmf)

    @classmethod
    def poisson_binomial(cls, pmap: np.ndarray) -> "Prior":
        return cls("poisson-binomial", poisson_binomial_pmf(pmap))

    @staticmethod
    def per_block(pmaps: np.ndarray) -> FloatArray:
        """
        Poisson-binomial pmfs of a batch of p-maps, one row per block,
        ready to pass to ``log_lrt``.
        """
        pmaps = np.asarray(pmaps, dtype=np.float64)
        return poisson_binomial_pmf(pmaps.reshape(len(pmaps), -1))


# one prior for every block, one per block, or a (blocks, m) pmf matrix
PriorLike = Union[Prior, Sequence[Prior], np.ndarray]


@dataclass(frozen=True)
class DetectionScore:
    """
    ``log_lr`` is finite unless the table was built without adjustment
    and holds an exact 0 or 1; it is then a signed infinity.
    """

    log_lr: float
    n_blocks_used: int
    strategy_id: str


def _prior_matrix(prior: PriorLike, n_blocks: int) -> FloatArray:
    if isinstance(prior, Prior):
        return np.broadcast_to(prior.pmf, (n_blocks, len(prior.pmf)))
    if isinstance(prior, np.ndarray):
        matrix = np.atleast_2d(np.asarray(prior, dtype=np.float64))
    elif len(prior):
        matrix = np.stack([p.pmf for p in prior])
    else:
        matrix = np.zeros((0, COEFFICIENTS + 1))
    if len(matrix) != n_blocks:
        raise ValueError(f"need one prior per block, got {len(matrix)} for {n_blocks} blocks")
    if (np.abs(matrix.sum(axis=1) - 1.0) > 1e-12).any():
        raise ValueError("every per-block prior must sum to 1")
    return matrix


def block_log_lr(
    t: np.ndarray,
    table: LikelihoodTable,
    prior: PriorLike,
) -> FloatArray:
    """
    Per-block terms of the log-likelihood ratio.
    """
    t = np.asarray(t, dtype=np.int64).ravel()
    if ((t != 0) & (t != 1)).any():
        raise ValueError("outcomes must be 0 or 1")
    pmf = _prior_matrix(prior, len(t))
    unsolved = table.likelihood_vector(pmf.shape[1] - 1)
    stego_unsolved = pmf @ unsolved
    stego_solved = pmf @ (1.0 - unsolved)
    with np.errstate(divide="ignore"):
        stego = np.where(t == 1, np.log(stego_unsolved), np.log(stego_solved))
        cover = np.where(t == 1, np.log(unsolved[0]), np.log(1.0 - unsolved[0]))
    return stego - cover


def log_lrt(
    t: np.ndarray,
    table: LikelihoodTable,
    prior: PriorLike,
    *,
    pipeline_id: Optional[str] = None,
    strategy_id: str = "all",
) -> DetectionScore:
    """
    Sum over blocks of log sum_m P(t_i|m) P(m) - log P(t_i|0).
    ``prior`` is one Prior for every block, one Prior per block or a
    matrix of per-block pmfs.
    """
    if pipeline_id is not None and pipeline_id != table.pipeline_id:
        raise TableMismatch(
            f"likelihood table was built for pipeline {table.pipeline_id}, not {pipeline_id}"
        )
    terms = block_log_lr(t, table, prior)
    with np.errstate(invalid="ignore"):
        total = float(terms.sum())
    logger.debug("log-LR %.6g over %d blocks (%s)", total, len(terms), strategy_id)
    return DetectionScore(total, len(terms), strategy_id)


def zero_fa_probability(m: np.ndarray, probabilities: Union[LikelihoodTable, Sequence[float]]) -> float:
    """
    Probability that at least one block of an image carrying m_i
    modifications per block is incompatible: 1 - prod(1 - p[m_i]).
    Counts above the last entry use the last entry.
    """
    if isinstance(probabilities, LikelihoodTable):
        p = probabilities.p_unsolved
    else:
        p = np.asarray(probabilities, dtype=np.float64)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    m = np.clip(np.asarray(m, dtype=np.int64).ravel(), 0, len(p) - 1)
    return float(1.0 - np.prod(1.0 - p[m]))


def zero_fa_power(m_images: np.ndarray, probabilities: Union[LikelihoodTable, Sequence[float]]) -> float:
    """
    Mean zero-false-alarm detection probability over images, one row of
    ``m_images`` per image.
    """
    rows = np.atleast_2d(np.asarray(m_images))
    if len(rows) == 0:
        raise ValueError("no images given")
    return float(np.mean([zero_fa_probability(row, probabilities) for row in rows]))


@dataclass(frozen=True)
class Random:
    seed: int
    id: str = "random"


@dataclass(frozen=True)
class VarianceDescending:
    id: str = "variance"


@dataclass(frozen=True, eq=False)
class ScaDescending:
    pmaps: FloatArray
    id: str = "sca"


Strategy = Union[Random, VarianceDescending, ScaDescending]


def selection_size(n_blocks: int, fraction: float) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    return min(n_blocks, max(1, math.ceil(fraction * n_blocks - 1e-9)))


def rank_blocks(keys: np.ndarray, fraction: float) -> IntArray:
    """
    Indices of the largest keys first, ties by ascending index.
    """
    keys = np.asarray(keys, dtype=np.float64)
    order = np.argsort(-keys, kind="stable")
    return order[: selection_size(len(keys), fraction)].astype(np.int64)


def select_blocks(
    image: Union[JpegImage, np.ndarray],
    strategy: Strategy,
    fraction: float,
    *,
    spec: Optional[PipelineSpec] = None,
    variances: Optional[np.ndarray] = None,
    stream: int = 0,
) -> IntArray:
    """
    The first ceil(fraction * N) block indices in the strategy's order.

    Random shuffles with its seed (``stream`` keys the image). Variance
    sorts by decreasing spatial rounding error variance, computed from the
    blocks unless ``variances`` is given. SCA sorts by decreasing mean of
    each block's p-map.
    """
    if isinstance(image, JpegImage):
        blocks = image.blocks
        spec = spec or image.pipeline()
    else:
        blocks = np.asarray(image)
    if isinstance(strategy, VarianceDescending) and variances is None:
        if spec is None:
            raise ValueError("variance ordering needs the pipeline to decompress the blocks")
        variances = rounding_error_variances(blocks, spec)
    return _select(len(blocks), strategy, fraction, variances, stream)


def _select(
    n_blocks: int,
    strategy: Strategy,
    fraction: float,
    variances: Optional[np.ndarray],
    stream: int,
) -> IntArray:
    if n_blocks == 0:
        raise ValueError("cannot select blocks from an empty image")
    if isinstance(strategy, Random):
        generator = rng.generator(strategy.seed, rng.SELECT, stream)
        return generator.permutation(n_blocks)[: selection_size(n_blocks, fraction)].astype(np.int64)
    if isinstance(strategy, VarianceDescending):
        if variances is None or len(variances) != n_blocks:
            raise ValueError("variance ordering needs one variance per block")
        return rank_blocks(variances, fraction)
    pmaps = np.asarray(strategy.pmaps, dtype=np.float64)
    if len(pmaps) != n_blocks:
        raise ValueError(f"SCA ordering needs one p-map per block, got {len(pmaps)} for {n_blocks} blocks")
    return rank_blocks(pmaps.reshape(n_blocks, -1).mean(axis=1), fraction)


@dataclass(frozen=True)
class RocCurve:
    """
    Step curve from the strictest threshold down; a score at or above the
    threshold is classified stego.
    """

    points: Tuple[Tuple[float, float], ...]
    thresholds: Tuple[float, ...]
    p_e: float


def roc_and_pe(cover_scores: Sequence[float], stego_scores: Sequence[float]) -> RocCurve:
    cover = np.asarray(cover_scores, dtype=np.float64)
    stego = np.asarray(stego_scores, dtype=np.float64)
    if len(cover) == 0 or len(stego) == 0:
        raise ValueError("both score lists must be non-empty")
    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([cover, stego]))[::-1]])
    cover_sorted = np.sort(cover)
    stego_sorted = np.sort(stego)
    # fraction of scores >= threshold
    p_fa = 1.0 - np.searchsorted(cover_sorted, thresholds, side="left") / len(cover)
    p_d = 1.0 - np.searchsorted(stego_sorted, thresholds, side="left") / len(stego)
    p_e = float(np.min((p_fa + (1.0 - p_d)) / 2))
    points = tuple((float(a), float(b)) for a, b in zip(p_fa, p_d))
    return RocCurve(points, tuple(float(value) for value in thresholds), p_e)


@dataclass(frozen=True)
class Combination:
    """
    A named pairing of block ordering and prior.
    """

    name: str
    ordering: str
    prior: str


UNIFORM = Prior.uniform()

COMBINATIONS = {
    "sca": Combination("sca", "sca", "sca"),
    "blind": Combination("blind", "variance", "uniform"),
    "partial-sca": Combination("partial-sca", "sca", "uniform"),
    "control": Combination("control", "random", "uniform"),
}


def combination(name: str) -> Combination:
    try:
        return COMBINATIONS[name]
    except KeyError:
        raise ValueError(f"unknown combination {name!r}; choose from {', '.join(COMBINATIONS)}") from None


def score_image(
    t: np.ndarray,
    table: LikelihoodTable,
    combo: Combination,
    fraction: float,
    *,
    variances: Optional[np.ndarray] = None,
    pmaps: Optional[np.ndarray] = None,
    seed: int = 0,
    stream: int = 0,
) -> DetectionScore:
    """
    Selects blocks according to ``combo`` and scores their outcomes.
    """
    t = np.asarray(t)
    strategy: Strategy
    if combo.ordering == "random":
        strategy = Random(seed)
    elif combo.ordering == "variance":
        strategy = VarianceDescending()
    else:
        if pmaps is None:
            raise ValueError(f"combination {combo.name!r} needs p-maps")
        strategy = ScaDescending(pmaps)
    selected = _select(len(t), strategy, fraction, variances, stream)
    prior: PriorLike
    if combo.prior == "sca":
        if pmaps is None:
            raise ValueError(f"combination {combo.name!r} needs p-maps")
        prior = Prior.per_block(np.asarray(pmaps)[selected])
    else:
        prior = UNIFORM
    return log_lrt(t[selected], table, prior, strategy_id=f"{combo.name}@{fraction:g}")


def scores_for(
    outcomes: Sequence[np.ndarray],
    table: LikelihoodTable,
    combo: Combination,
    fraction: float,
    *,
    variances: Optional[Sequence[np.ndarray]] = None,
    pmaps: Optional[Sequence[np.ndarray]] = None,
    seed: int = 0,
) -> List[float]:
    return [
        score_image(
            t,
            table,
            combo,
            fraction,
            variances=None if variances is None else variances[index],
            pmaps=None if pmaps is None else pmaps[index],
            seed=seed,
            stream=index,
        ).log_lr
        for index, t in enumerate(outcomes)
    ]


@dataclass(frozen=True)
class PayloadResult:
    """
    Simulated cover and stego scores of one payload, per (combination,
    fraction), with the mean zero-false-alarm detection probability.
    """

    payload: float
    curves: Dict[Tuple[str, float], RocCurve]
    zero_fa_power: float

    def p_e(self, name: str, fraction: float) -> float:
        return self.curves[(name, fraction)].p_e


def simulate_payload(
    payload: float,
    table: LikelihoodTable,
    spec: PipelineSpec,
    *,
    images: int,
    blocks_per_image: int,
    seed: int,
    combinations: Sequence[str] = ("blind",),
    fractions: Sequence[float] = (1.0,),
    embedding: Embedding = "lsbm",
    pmaps: Optional[np.ndarray] = None,
    stream: int = 0,
) -> PayloadResult:
    """
    Draws ``images`` cover and stego images of simulated outcomes and
    scores both populations with every combination and fraction.

    LSBM stego images change each coefficient with probability payload/2
    and use that constant as their p-map. With ``embedding="pmap"`` every
    image uses ``pmaps``, one row per block. Block variances for the
    variance ordering come from the rounding error simulator. ``stream``
    separates the random streams of successive payloads.
    """
    if images < 1:
        raise ValueError(f"images must be at least 1, got {images}")
    combos = [combination(name) for name in combinations]
    if embedding == "pmap":
        if pmaps is None:
            raise ValueError("p-map embedding needs p-maps")
        image_pmaps = np.asarray(pmaps, dtype=np.float64).reshape(-1, COEFFICIENTS)
    else:
        image_pmaps = np.full((blocks_per_image, COEFFICIENTS), payload / 2)
    n_blocks = len(image_pmaps)
    needs_variance = any(combo.ordering == "variance" for combo in combos)

    outcomes: Dict[int, List[IntArray]] = {0: [], 1: []}
    variances: Dict[int, List[FloatArray]] = {0: [], 1: []}
    stego_counts = []
    for image in range(images):
        if embedding == "pmap":
            m = simulate_pmap_counts(image_pmaps, rng.generator(seed, rng.COUNTS, stream, image))
        else:
            m = simulate_lsbm_counts(n_blocks, payload, rng.generator(seed, rng.COUNTS, stream, image))
        stego_counts.append(m)
        for label, counts in ((0, np.zeros(n_blocks, dtype=np.int64)), (1, m)):
            outcomes[label].append(
                simulate_outcomes(counts, table, rng.generator(seed, rng.OUTCOME, stream, image, label))
            )
            if needs_variance:
                variances[label].append(
                    simulate_block_variances(counts, spec, rng.generator(seed, rng.VARIANCE, stream, image, label))
                )

    curves: Dict[Tuple[str, float], RocCurve] = {}
    for combo in combos:
        for fraction in fractions:
            scores = [
                scores_for(
                    outcomes[label],
                    table,
                    combo,
                    fraction,
                    variances=variances[label] if needs_variance else None,
                    pmaps=[image_pmaps] * images,
                    seed=seed,
                )
                for label in (0, 1)
            ]
            curves[(combo.name, fraction)] = roc_and_pe(scores[0], scores[1])
            logger.info(
                "payload %g, %s at %g: P_E %.4f", payload, combo.name, fraction, curves[(combo.name, fraction)].p_e
            )
    return PayloadResult(payload, curves, zero_fa_power(np.stack(stego_counts), table))
