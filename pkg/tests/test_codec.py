import math

import numpy as np
import pytest

from jpegcompat.codec import (
    LUMINANCE_TABLE,
    DctVariant,
    DimensionError,
    PipelineError,
    PipelineSpec,
    QuantTable,
    compress,
    compute_errors,
    decompress,
    forward_dct,
    inverse_dct_stack,
    round_half_away,
    toy_enumerate,
)


@pytest.fixture
def spec():
    return PipelineSpec.standard()


def test_round_half_away():
    """
    Exact halves round away from zero.
    """
    assert round_half_away(0.5) == 1
    assert round_half_away(1.4) == 1
    assert round_half_away(-0.5) == -1
    assert round_half_away(2.5) == 3
    assert round_half_away(-2.4999) == -2
    with pytest.raises(ValueError):
        round_half_away(float("nan"))


def test_forward_dct_constant_blocks(spec):
    """
    The level shift zeroes mid-grey; one level above gives DC 8 only.
    """
    assert np.allclose(forward_dct(np.full((8, 8), 128), spec), 0.0)
    d = forward_dct(np.full((8, 8), 129), spec)
    assert d[0, 0] == pytest.approx(8.0)
    d[0, 0] = 0.0
    assert np.allclose(d, 0.0)


def test_toy_forward_and_compress():
    """
    The (1, 2) pipeline without level shift on x = (0, 255).
    """
    toy = PipelineSpec.toy()
    d = forward_dct([[0, 255]], toy)
    assert d[0, 0] == pytest.approx(180.312, abs=1e-3)
    assert d[0, 1] == pytest.approx(-180.312, abs=1e-3)
    assert compress([[0, 255]], toy).tolist() == [[180, -180]]
    assert compress([[0, 255]], PipelineSpec.toy((1, 2))).tolist() == [[180, -90]]


def test_compress_mid_grey_is_zero(spec):
    assert not compress(np.full((8, 8), 128), spec).any()


def test_decompress_zero_block(spec):
    """
    An all-zero quantized block decompresses to exact mid-grey.
    """
    result = decompress(np.zeros((8, 8), dtype=np.int64), spec)
    assert (result.pixels == 128).all()
    assert (result.y == 128.0).all()
    assert result.clipped is False


def test_toy_decompress():
    result = decompress([[180, -180]], PipelineSpec.toy())
    assert result.y[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert result.y[0, 1] == pytest.approx(180 * math.sqrt(2))
    assert result.pixels.tolist() == [[0, 255]]
    assert result.clipped is False


def test_decompress_flags_clipping(spec):
    """
    A black block with an AC change pushes some pixels below zero.
    """
    c = np.zeros((8, 8), dtype=np.int64)
    c[0, 0] = -1024
    c[0, 1] = -4
    result = decompress(c, spec)
    assert result.clipped is True
    assert result.pixels.min() == 0
    assert result.y.min() < -0.5


def test_decompress_round_trip_is_close(spec):
    """
    Compressing then decompressing random blocks stays within 2 levels.
    """
    generator = np.random.default_rng(1)
    for x in generator.integers(0, 256, size=(1000, 8, 8)):
        assert np.abs(decompress(compress(x, spec), spec).pixels - x).max() <= 2


def test_compute_errors_constant(spec):
    errors = compute_errors(np.full((8, 8), 128), spec)
    assert not errors.u.any()
    assert not errors.e.any()
    assert not errors.k.any()


def test_compute_errors_identity(spec):
    """
    k = e + IDCT(u Q) and |u| <= 1/2 on non-clipped random blocks.
    """
    generator = np.random.default_rng(2)
    checked = 0
    for x in generator.integers(20, 236, size=(1000, 8, 8)):
        errors = compute_errors(x, spec)
        if errors.clipped:
            continue
        residual = errors.k - errors.e - inverse_dct_stack(errors.u, (8, 8))
        assert np.abs(residual).max() < 1e-9
        assert np.abs(errors.u).max() <= 0.5
        checked += 1
    assert checked > 900


def test_compute_errors_with_quantization():
    """
    u is measured in quantization steps, so the identity holds at any quality.
    """
    spec = PipelineSpec.standard(QuantTable.from_quality(75))
    x = np.random.default_rng(3).integers(40, 216, size=(8, 8))
    errors = compute_errors(x, spec)
    assert np.abs(errors.u).max() <= 0.5


def test_dimension_mismatch(spec):
    with pytest.raises(DimensionError) as excinfo:
        forward_dct(np.zeros((4, 4), dtype=np.int64), spec)
    assert "dims (8, 8)" in str(excinfo.value)
    with pytest.raises(DimensionError):
        PipelineSpec(DctVariant.NAIVE, True, QuantTable.unit((1, 2)), (8, 8))


def test_pipeline_validation():
    with pytest.raises(PipelineError) as excinfo:
        PipelineSpec(DctVariant.ISLOW, False, QuantTable.unit((1, 2)), (1, 2))
    assert "islow" in str(excinfo.value)
    with pytest.raises(PipelineError):
        QuantTable(np.zeros((8, 8), dtype=np.int64))
    with pytest.raises(DimensionError):
        PipelineSpec(DctVariant.NAIVE, True, QuantTable.unit((4, 4)), (4, 4))


def test_quality_tables():
    """
    Quality scaling follows libjpeg: 50 is the base table, 100 is all ones.
    """
    assert QuantTable.from_quality(100).is_unit
    assert (QuantTable.from_quality(50).steps == LUMINANCE_TABLE).all()
    qf99 = QuantTable.from_quality(99).steps
    assert qf99.min() == 1 and qf99.max() == 2
    with pytest.raises(PipelineError):
        QuantTable.from_quality(0)


def test_pipeline_id():
    """
    Pipelines differing in any parameter get different identifiers.
    """
    naive = PipelineSpec.standard()
    assert naive.pipeline_id.startswith("naive-ls-8x8-q")
    assert naive.pipeline_id == PipelineSpec.standard().pipeline_id
    assert PipelineSpec.standard(dct=DctVariant.ISLOW).pipeline_id != naive.pipeline_id
    assert PipelineSpec.standard(QuantTable.from_quality(99)).pipeline_id != naive.pipeline_id
    assert PipelineSpec.toy().pipeline_id.startswith("naive-nols-1x2-")


def test_toy_enumerate_holes():
    """
    Compression onto the toy DCT plane is not surjective.
    """
    enumeration = toy_enumerate(PipelineSpec.toy())
    assert enumeration.counts[(180, -180)] >= 1
    assert (180, -180) in enumeration
    assert sum(enumeration.counts.values()) == 65536
    assert len(enumeration.counts) < enumeration.box_size
    assert next(iter(enumeration.incompatible())) not in enumeration.counts


def test_toy_enumerate_coarser_step():
    """
    A larger quantization step leaves fewer holes.
    """
    fine = toy_enumerate(PipelineSpec.toy((1, 1)))
    coarse = toy_enumerate(PipelineSpec.toy((1, 2)))
    assert coarse.box_size - len(coarse.counts) < fine.box_size - len(fine.counts)


def test_toy_enumerate_rejects_standard_dims(spec):
    with pytest.raises(DimensionError):
        toy_enumerate(spec)
