import itertools
import math

import numpy as np
import pytest
from jpegutil import encode_jpeg

from jpegcompat.codec import PipelineSpec
from jpegcompat.detector import (
    COMBINATIONS,
    Prior,
    Random,
    ScaDescending,
    TableMismatch,
    VarianceDescending,
    block_log_lr,
    combination,
    log_lrt,
    poisson_binomial_pmf,
    rank_blocks,
    roc_and_pe,
    score_image,
    select_blocks,
    selection_size,
    simulate_payload,
    zero_fa_power,
    zero_fa_probability,
)
from jpegcompat.jpeg import parse_jpeg
from jpegcompat.stats import LikelihoodTable

PROBABILITIES = [0.005, 0.03, 0.08, 0.15, 0.22, 0.30]


@pytest.fixture
def table():
    return LikelihoodTable.from_probabilities(PROBABILITIES, PipelineSpec.standard().pipeline_id)


def test_poisson_binomial():
    assert poisson_binomial_pmf([0.5, 0.5]) == pytest.approx([0.25, 0.5, 0.25])
    assert poisson_binomial_pmf([]) == pytest.approx([1.0])
    pmf = poisson_binomial_pmf(np.full(64, 0.1))
    assert pmf.sum() == pytest.approx(1.0)
    assert pmf[3] == pytest.approx(math.comb(64, 3) * 0.1**3 * 0.9**61)


def test_poisson_binomial_brute_force():
    """
    Mixed probabilities against enumeration of all 2**10 outcomes.
    """
    q = np.array([0.0, 0.05, 0.1, 0.25, 0.33, 0.5, 0.61, 0.8, 0.97, 1.0])
    expected = np.zeros(len(q) + 1)
    for outcome in itertools.product((0, 1), repeat=len(q)):
        bits = np.array(outcome)
        expected[bits.sum()] += np.prod(np.where(bits == 1, q, 1 - q))
    assert poisson_binomial_pmf(q) == pytest.approx(expected, abs=1e-12)


def test_zero_fa_monotone_in_m():
    """
    More modifications never lower the zero false alarm probability.
    """
    single = [zero_fa_probability([m], PROBABILITIES) for m in range(8)]
    assert single == sorted(single)
    assert single[0] == pytest.approx(0.005)
    chain = [[3, 1], [3, 2], [4, 2], [5, 5]]
    values = [zero_fa_probability(m, PROBABILITIES) for m in chain]
    assert values == sorted(values)


def test_poisson_binomial_batch():
    """
    A 2-D input gives one pmf per row.
    """
    q = np.random.default_rng(0).random((5, 8))
    batch = poisson_binomial_pmf(q)
    assert batch.shape == (5, 9)
    for row, pmf in zip(q, batch):
        assert pmf == pytest.approx(poisson_binomial_pmf(row))
    with pytest.raises(ValueError):
        poisson_binomial_pmf([1.5])


def test_priors():
    uniform = Prior.uniform()
    assert uniform.pmf[0] == 0.0
    assert uniform.pmf[1:] == pytest.approx(np.full(64, 1 / 64))
    narrow = Prior.uniform(1, 5)
    assert narrow.pmf[1:6] == pytest.approx([0.2] * 5)
    assert Prior.poisson_binomial(np.zeros(64)).pmf[0] == 1.0
    with pytest.raises(ValueError):
        Prior("broken", np.full(65, 0.5))
    with pytest.raises(ValueError):
        Prior.uniform(5, 1)


def test_worked_log_lr(table):
    """
    One unsolved block under a uniform prior on 1..5 modifications.
    """
    score = log_lrt([1], table, Prior.uniform(1, 5))
    assert score.log_lr == pytest.approx(math.log(0.156) - math.log(0.005))
    assert score.log_lr == pytest.approx(3.44, abs=0.01)
    assert score.n_blocks_used == 1
    solved = log_lrt([0], table, Prior.uniform(1, 5))
    assert solved.log_lr == pytest.approx(math.log(0.844) - math.log(0.995))


def test_lrt_sums_blocks(table):
    terms = block_log_lr([1, 0, 1], table, Prior.uniform())
    assert log_lrt([1, 0, 1], table, Prior.uniform()).log_lr == pytest.approx(terms.sum())
    assert terms[0] == terms[2]


def test_lrt_eleven_values(table):
    """
    With ten blocks and one prior the score only depends on the number of
    unsolved blocks.
    """
    scores = {
        round(log_lrt(list(pattern), table, Prior.uniform()).log_lr, 9)
        for pattern in itertools.product([0, 1], repeat=10)
    }
    assert len(scores) == 11


def test_lrt_per_block_priors(table):
    """
    A list of priors and the equivalent pmf matrix agree.
    """
    pmaps = np.random.default_rng(1).random((3, 64)) * 0.02
    priors = [Prior.poisson_binomial(row) for row in pmaps]
    as_list = log_lrt([0, 1, 0], table, priors).log_lr
    as_matrix = log_lrt([0, 1, 0], table, Prior.per_block(pmaps)).log_lr
    assert as_list == pytest.approx(as_matrix)
    with pytest.raises(ValueError):
        log_lrt([0, 1], table, priors)


def test_lrt_checks_inputs(table):
    with pytest.raises(ValueError):
        log_lrt([2], table, Prior.uniform())
    with pytest.raises(TableMismatch) as excinfo:
        log_lrt([0], table, Prior.uniform(), pipeline_id="islow-ls-8x8-qffff")
    assert table.pipeline_id in str(excinfo.value)


def test_zero_fa_probability():
    """
    1 - (1 - 0.15)(1 - 0.03) for blocks carrying 3 and 1 modifications.
    """
    p = [0.0, 0.03, 0.1, 0.15]
    assert zero_fa_probability([3, 1], p) == pytest.approx(0.1755, abs=1e-12)
    assert zero_fa_probability([0, 0], p) == 0.0
    assert zero_fa_probability([9], p) == pytest.approx(0.15)
    assert zero_fa_power([[3, 1], [0, 0]], p) == pytest.approx(0.1755 / 2)
    with pytest.raises(ValueError):
        zero_fa_probability([1], [0.0, 1.5])


def test_selection_size():
    assert selection_size(10, 1.0) == 10
    assert selection_size(10, 0.25) == 3
    assert selection_size(10, 0.3) == 3
    assert selection_size(10, 1e-6) == 1
    with pytest.raises(ValueError):
        selection_size(10, 0.0)


def test_rank_blocks_ties():
    """
    Equal keys keep ascending index order.
    """
    assert rank_blocks([0.1, 0.5, 0.5, 0.2], 1.0).tolist() == [1, 2, 3, 0]
    assert rank_blocks([0.1, 0.5, 0.5, 0.2], 0.5).tolist() == [1, 2]


def test_strategies():
    blocks = np.zeros((8, 8, 8), dtype=np.int64)
    spec = PipelineSpec.standard()
    shuffled = select_blocks(blocks, Random(3), 0.5)
    assert len(shuffled) == 4
    assert (shuffled == select_blocks(blocks, Random(3), 0.5)).all()
    variances = np.arange(8.0)
    assert select_blocks(blocks, VarianceDescending(), 0.25, variances=variances).tolist() == [7, 6]
    pmaps = np.zeros((8, 64))
    pmaps[5] = 0.4
    assert select_blocks(blocks, ScaDescending(pmaps), 0.125).tolist() == [5]
    # all-zero blocks have zero rounding error, so every variance ties
    assert select_blocks(blocks, VarianceDescending(), 0.25, spec=spec).tolist() == [0, 1]
    with pytest.raises(ValueError):
        select_blocks(blocks, VarianceDescending(), 0.5)
    with pytest.raises(ValueError):
        select_blocks(blocks, ScaDescending(pmaps[:3]), 0.5)


def test_select_from_image():
    """
    A parsed image supplies its own pipeline for the variance ordering.
    """
    blocks = np.zeros((4, 8, 8), dtype=np.int64)
    blocks[2, 0, 1] = 3
    image = parse_jpeg(encode_jpeg(blocks, 16, 16))
    assert select_blocks(image, VarianceDescending(), 0.25).tolist() == [2]


def test_roc_and_pe():
    curve = roc_and_pe([0, 0, 1], [1, 2, 2])
    assert curve.p_e == pytest.approx(1 / 6)
    assert curve.points[0] == (0.0, 0.0)
    assert curve.points[-1] == (1.0, 1.0)
    assert curve.thresholds[0] == math.inf
    assert roc_and_pe([0, 0], [1, 1]).p_e == 0.0
    assert roc_and_pe([1, 1], [1, 1]).p_e == 0.5
    with pytest.raises(ValueError):
        roc_and_pe([], [1])


def test_roc_and_pe_worked_example():
    """
    P_E is read off the curve and only depends on the order of the scores.
    """
    assert roc_and_pe([0, 1], [0.5, 2]).p_e == pytest.approx(0.25)
    assert roc_and_pe(np.exp([0, 1]), np.exp([0.5, 2])).p_e == pytest.approx(0.25)
    generator = np.random.default_rng(3)
    cover = generator.normal(0, 1, 200)
    stego = generator.normal(0.7, 1, 200)
    assert roc_and_pe(cover, stego).p_e == pytest.approx(roc_and_pe(3 * cover + 1, 3 * stego + 1).p_e)
    assert roc_and_pe(cover, stego).p_e == pytest.approx(roc_and_pe(np.tanh(cover), np.tanh(stego)).p_e)


def test_combinations(table):
    assert set(COMBINATIONS) == {"sca", "blind", "partial-sca", "control"}
    assert combination("blind").ordering == "variance"
    with pytest.raises(ValueError):
        combination("oracle")
    t = np.array([1, 0, 0, 1])
    with pytest.raises(ValueError):
        score_image(t, table, combination("sca"), 1.0)
    score = score_image(t, table, combination("control"), 0.5, seed=1)
    assert score.n_blocks_used == 2
    assert score.strategy_id == "control@0.5"


def test_simulate_payload(table):
    """
    Scores exist for every combination and fraction and P_E is a probability.
    """
    result = simulate_payload(
        0.01,
        table,
        PipelineSpec.standard(),
        images=40,
        blocks_per_image=64,
        seed=3,
        combinations=("blind", "control", "sca"),
        fractions=(0.5, 1.0),
    )
    assert set(result.curves) == {(name, f) for name in ("blind", "control", "sca") for f in (0.5, 1.0)}
    for curve in result.curves.values():
        assert 0.0 <= curve.p_e <= 0.5
    assert 0.0 <= result.zero_fa_power <= 1.0
    again = simulate_payload(
        0.01, table, PipelineSpec.standard(), images=40, blocks_per_image=64, seed=3, combinations=("blind",)
    )
    assert again.p_e("blind", 1.0) == result.p_e("blind", 1.0)


def test_simulate_pmap_embedding(table):
    pmaps = np.full((32, 64), 0.01)
    result = simulate_payload(
        0.02, table, PipelineSpec.standard(), images=20, blocks_per_image=0, seed=1,
        combinations=("sca",), embedding="pmap", pmaps=pmaps,
    )
    assert 0.0 <= result.p_e("sca", 1.0) <= 0.5
    with pytest.raises(ValueError):
        simulate_payload(
            0.02, table, PipelineSpec.standard(), images=20, blocks_per_image=32, seed=1, embedding="pmap"
        )


@pytest.mark.slow
def test_pe_decreases_with_payload(table):
    """
    More payload is never harder to detect for the blind detector.
    """
    p_e = [
        simulate_payload(
            payload, table, PipelineSpec.standard(), images=5000, blocks_per_image=1024, seed=7, stream=index
        ).p_e("blind", 1.0)
        for index, payload in enumerate((0.001, 0.005, 0.01))
    ]
    assert p_e[0] >= p_e[1] >= p_e[2]
