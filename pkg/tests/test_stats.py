import numpy as np
import pytest
from PIL import Image
from scipy import stats as scipy_stats

from jpegcompat import rng
from jpegcompat.codec import PipelineSpec, QuantTable, compress_stack, decompress_stack
from jpegcompat.parallel import BlockPool
from jpegcompat.search import SearchBudget
from jpegcompat.stats import (
    ImageCovers,
    InsufficientBlocks,
    LikelihoodTable,
    SyntheticCovers,
    apply_modifications,
    block_variance,
    build_likelihood_table,
    position_heatmap,
    rounding_error_variances,
    simulate_block_variances,
    simulate_lsbm_counts,
    simulate_outcomes,
    simulate_pmap_counts,
    split_blocks,
    variance_profile,
)


@pytest.fixture
def spec():
    return PipelineSpec.standard()


def test_generator_streams():
    """
    Streams are reproducible per key and differ between keys.
    """
    first = rng.generator(5, rng.COVER, 3).random(4)
    assert (first == rng.generator(5, rng.COVER, 3).random(4)).all()
    assert not (first == rng.generator(5, rng.COVER, 4).random(4)).all()
    existing = np.random.default_rng(0)
    assert rng.as_generator(existing) is existing
    with pytest.raises(ValueError):
        rng.generator(-1)


def test_apply_modifications():
    """
    Exactly m distinct positions change, each by one.
    """
    c = np.zeros((8, 8), dtype=np.int64)
    modified = apply_modifications(c, 5, 1)
    assert np.count_nonzero(modified) == 5
    assert set(np.unique(modified[modified != 0])) <= {-1, 1}
    assert (apply_modifications(c, 5, 1) == modified).all()
    assert not apply_modifications(c, 0, 1).any()
    with pytest.raises(ValueError):
        apply_modifications(c, 65, 1)


def test_synthetic_covers_are_deterministic():
    covers = SyntheticCovers(9)
    assert (covers.blocks(10, 5) == SyntheticCovers(9).blocks(10, 5)).all()
    assert (covers.blocks(10, 5)[2] == covers.block(12)).all()
    assert covers.blocks(0, 0).shape == (0, 8, 8)
    uniform = SyntheticCovers(9, "uniform").blocks(0, 100)
    assert uniform.min() >= 0 and uniform.max() <= 255
    with pytest.raises(ValueError):
        SyntheticCovers(9, "checkerboard")


def test_split_blocks():
    pixels = np.arange(20 * 17).reshape(20, 17) % 256
    blocks = split_blocks(pixels)
    assert blocks.shape == (4, 8, 8)
    assert (blocks[1] == pixels[0:8, 8:16]).all()
    assert (blocks[2] == pixels[8:16, 0:8]).all()


def test_image_covers(tmp_path):
    """
    Blocks of several images are concatenated in order.
    """
    first = np.random.default_rng(0).integers(0, 256, size=(16, 24), dtype=np.uint8)
    second = np.random.default_rng(1).integers(0, 256, size=(8, 8), dtype=np.uint8)
    paths = []
    for name, pixels in (("a.png", first), ("b.png", second)):
        Image.fromarray(pixels).save(tmp_path / name)
        paths.append(tmp_path / name)
    covers = ImageCovers(paths)
    assert len(covers) == 7
    blocks = covers.blocks(4, 10)
    assert blocks.shape == (3, 8, 8)
    assert (blocks[1] == first[8:16, 16:24]).all()
    assert (blocks[2] == second).all()


def test_likelihood_table_adjustment():
    """
    Exact 0 and 1 are moved inside (0, 1) for logarithms.
    """
    table = LikelihoodTable.from_probabilities([0.0, 0.5, 1.0], "p", samples=99)
    adjusted = table.adjusted()
    assert adjusted[0] == pytest.approx(0.01)
    assert adjusted[1] == 0.5
    assert adjusted[2] == pytest.approx(0.99)
    raw = LikelihoodTable.from_probabilities([0.0, 1.0], "p", adjustment="none")
    assert raw.adjusted()[0] == 0.0


def test_likelihood_table_clamps():
    table = LikelihoodTable.from_probabilities([0.01, 0.2, 0.6], "p")
    assert table.m_max == 2
    assert table.probability(7) == 0.6
    vector = table.likelihood_vector(64)
    assert len(vector) == 65
    assert vector[64] == pytest.approx(0.6)
    assert table.table_id.startswith("p-b50000-")
    with pytest.raises(ValueError):
        LikelihoodTable.from_probabilities([1.2], "p")


def test_build_likelihood_table_small(spec):
    """
    A small table is reproducible and independent of the worker count.
    """
    budget = SearchBudget(300)
    serial = build_likelihood_table(SyntheticCovers(1), spec, budget, 2, 12, seed=4, checkpoints=[10])
    with BlockPool(2, processes=False) as pool:
        threaded = build_likelihood_table(
            SyntheticCovers(1), spec, budget, 2, 12, seed=4, checkpoints=[10], pool=pool
        )
    assert (serial.unsolved == threaded.unsolved).all()
    assert serial.m_max == 2
    assert (serial.samples == 12).all()
    assert serial.pipeline_id == spec.pipeline_id
    assert serial.seed == 4
    # a smaller budget can only leave more blocks unsolved
    assert (serial.traces[10] >= serial.p_unsolved).all()


def test_build_likelihood_table_exhausted_source(spec):
    class TinySource:
        def blocks(self, start, count):
            return SyntheticCovers(0).blocks(start, max(0, min(count, 3 - start)))

    with pytest.raises(InsufficientBlocks):
        build_likelihood_table(TinySource(), spec, SearchBudget(10), 0, 5)


def test_rounding_error_variances(spec):
    covers = SyntheticCovers(2).blocks(0, 20)
    c = compress_stack(covers, spec)
    variances = rounding_error_variances(c, spec)
    pixels, y, _ = decompress_stack(c, spec)
    assert variances[3] == pytest.approx(block_variance(pixels[3] - y[3]))
    assert ((variances >= 0) & (variances <= 0.25)).all()


def test_variance_profile_trend(spec):
    """
    Modifications raise the rounding error variance toward 1/12.
    """
    profile = variance_profile(SyntheticCovers(3), spec, [0, 5], 100, seed=1)
    cover, modified = profile.entries
    assert cover.m == 0 and modified.m == 5
    assert cover.mean_variance < modified.mean_variance
    assert modified.mean_variance == pytest.approx(1 / 12, abs=0.01)
    assert profile.correlation is None


def test_variance_profile_split(spec):
    profile = variance_profile(SyntheticCovers(3), spec, [3], 30, seed=1, budget=SearchBudget(50))
    entry = profile.entries[0]
    assert entry.blocks == 30
    assert entry.solved_mean is not None or entry.unsolved_mean is not None


def test_position_heatmap_toy():
    """
    The toy pipeline has two positions; ratios lie in [0, 1].
    """
    toy = PipelineSpec.toy((1, 1))

    class ToyCovers:
        def blocks(self, start, count):
            generator = rng.generator(0, rng.COVER, start)
            return generator.integers(30, 220, size=(count, 1, 2))

    result = position_heatmap(ToyCovers(), toy, SearchBudget(200), 10)
    assert result.plus.shape == (1, 2)
    assert ((result.ratios >= 0) & (result.ratios <= 1)).all()
    assert (result.trials == 20).all()
    assert 0.0 <= result.p_value <= 1.0


def test_position_heatmap_seed_draws_covers():
    """
    The seed decides which cover blocks are modified.
    """
    toy = PipelineSpec.toy((1, 1))
    covers = SyntheticCovers(3, dims=toy.dims)
    first = position_heatmap(covers, toy, SearchBudget(50), 4, seed=1)
    again = position_heatmap(covers, toy, SearchBudget(50), 4, seed=1)
    other = position_heatmap(covers, toy, SearchBudget(50), 4, seed=2)
    assert first.blocks == again.blocks
    assert len(set(first.blocks)) == 4
    assert first.blocks != other.blocks
    assert (first.plus == again.plus).all()


def test_simulate_lsbm_counts():
    """
    Counts follow Binomial(64, payload / 2).
    """
    counts = simulate_lsbm_counts(1024, 0.01, 3)
    expected = 1024 * 64 * 0.005
    sigma = np.sqrt(1024 * 64 * 0.005 * 0.995)
    assert abs(counts.sum() - expected) < 3 * sigma
    assert not simulate_lsbm_counts(100, 0.0, 3).any()
    with pytest.raises(ValueError):
        simulate_lsbm_counts(10, 1.5, 3)


def test_simulate_pmap_counts():
    pmaps = np.zeros((50, 64))
    pmaps[:, :3] = 1.0
    assert (simulate_pmap_counts(pmaps, 0) == 3).all()
    with pytest.raises(ValueError):
        simulate_pmap_counts(pmaps - 1, 0)


def test_simulate_outcomes():
    table = LikelihoodTable.from_probabilities([0.0, 1.0], "p")
    outcomes = simulate_outcomes(np.array([0, 1, 5, 0]), table, 2)
    assert outcomes.tolist() == [0, 1, 1, 0]


def test_simulate_pmap_counts_binomial():
    """
    With q = 1/2 everywhere the counts follow Binomial(64, 1/2).
    """
    counts = simulate_pmap_counts(np.full((5000, 64), 0.5), 8)
    assert abs(counts.mean() - 32) < 0.2
    # randomized probability integral transform, uniform for a discrete law
    binomial = scipy_stats.binom(64, 0.5)
    jitter = np.random.default_rng(9).random(len(counts))
    uniform = binomial.cdf(counts - 1) + jitter * binomial.pmf(counts)
    assert scipy_stats.kstest(uniform, "uniform").pvalue > 0.001


def test_simulate_outcome_frequencies():
    table = LikelihoodTable.from_probabilities([0.005, 0.03, 0.08, 0.15, 0.22, 0.30], "p")
    for m in (0, 2, 5, 9):
        outcomes = simulate_outcomes(np.full(100_000, m), table, m)
        assert abs(outcomes.mean() - table.probability(m)) < 0.01


def test_simulated_variances():
    """
    Cover-like blocks sit below 1/12 and heavily modified ones reach it.
    """
    spec = PipelineSpec.standard()
    cover = simulate_block_variances(np.zeros(2000, dtype=np.int64), spec, 0)
    modified = simulate_block_variances(np.full(2000, 20), spec, 1)
    assert cover.mean() < modified.mean()
    assert modified.mean() == pytest.approx(1 / 12, abs=0.01)


@pytest.mark.slow
def test_cover_solvability(spec):
    """
    At least 98% of non-clipped cover blocks are solved within 50k iterations.
    """
    table = build_likelihood_table(SyntheticCovers(10), spec, SearchBudget(50_000), 0, 10_000, seed=1)
    assert table.p_unsolved[0] <= 0.02


@pytest.mark.slow
def test_incompatibility_curve(spec):
    """
    The unsolved ratio is non-decreasing in the number of modifications.
    """
    table = build_likelihood_table(SyntheticCovers(11), spec, SearchBudget(50_000), 5, 1000, seed=2)
    assert table.p_unsolved[0] <= 0.02
    assert (np.diff(table.p_unsolved) >= 0).all()


@pytest.mark.slow
def test_cover_variance(spec):
    """
    Mean rounding error variance of compressed covers, and of blocks with
    five modifications.
    """
    profile = variance_profile(SyntheticCovers(12), spec, [0, 5], 10_000, seed=3)
    assert 0.055 <= profile.entries[0].mean_variance <= 0.075
    assert profile.entries[1].mean_variance == pytest.approx(1 / 12, abs=0.01)


@pytest.mark.slow
def test_heatmap_uniformity(spec):
    """
    Single changes are about equally detectable at every position.
    """
    result = position_heatmap(SyntheticCovers(13), spec, SearchBudget(50_000), 200, seed=4)
    assert result.trials.sum() >= 64 * 200 * 0.9
    assert result.p_value > 0.01


@pytest.mark.slow
def test_quality_99_null_result():
    """
    With quality 99 steps, three modifications never make a block unsolvable.
    """
    spec = PipelineSpec.standard(QuantTable.from_quality(99))
    table = build_likelihood_table(SyntheticCovers(14), spec, SearchBudget(50_000), 3, 1000, seed=5)
    assert table.unsolved[3] == 0
