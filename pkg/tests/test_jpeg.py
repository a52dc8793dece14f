import numpy as np
import pytest
from jpegutil import encode_jpeg, pillow_jpeg

from jpegcompat.codec import DctVariant, QuantTable
from jpegcompat.jpeg import NATURAL, ZIGZAG, ParseError, UnsupportedFormat, parse_jpeg, quant_table_is_unit, read_jpeg


def random_blocks(count, seed=0, spread=40):
    generator = np.random.default_rng(seed)
    blocks = np.zeros((count, 8, 8), dtype=np.int64)
    blocks[:, 0, 0] = generator.integers(-1000, 1000, size=count)
    # sparse AC content, as in real images
    mask = generator.random((count, 8, 8)) < 0.3
    values = generator.integers(-spread, spread + 1, size=(count, 8, 8))
    blocks += np.where(mask, values, 0) * (np.arange(64).reshape(8, 8) > 0)
    return blocks


def test_zigzag_tables():
    """
    The zig-zag permutation and its inverse.
    """
    assert sorted(ZIGZAG.tolist()) == list(range(64))
    assert ZIGZAG[:4].tolist() == [0, 1, 5, 6]
    assert ZIGZAG[8] == 2
    assert (ZIGZAG[NATURAL] == np.arange(64)).all()


def test_parse_blocks():
    """
    Coefficients come back bit-exact in raster order.
    """
    blocks = random_blocks(6)
    image = parse_jpeg(encode_jpeg(blocks, 24, 16))
    assert (image.width, image.height) == (24, 16)
    assert (image.block_rows, image.block_cols) == (2, 3)
    assert len(image) == 6
    assert (image.blocks == blocks).all()
    assert image.quant.is_unit
    assert not image.padded.any()
    assert image.components == 1


def test_long_zero_runs():
    """
    Isolated high-frequency coefficients need ZRL symbols.
    """
    blocks = np.zeros((1, 8, 8), dtype=np.int64)
    blocks[0, 7, 7] = -3
    blocks[0, 4, 5] = 1
    image = parse_jpeg(encode_jpeg(blocks, 8, 8))
    assert (image.blocks == blocks).all()


def test_quantization_table():
    """
    The luminance table is read in zig-zag order and returned in natural order.
    """
    table = QuantTable.from_quality(75)
    image = parse_jpeg(encode_jpeg(random_blocks(1), 8, 8, table.steps))
    assert image.quant == table
    assert image.pipeline().quant == table
    assert image.pipeline(DctVariant.ISLOW).dct is DctVariant.ISLOW


def test_padded_edges():
    """
    Blocks reaching past the right or bottom edge are flagged.
    """
    image = parse_jpeg(encode_jpeg(random_blocks(6), 20, 12))
    assert (image.block_rows, image.block_cols) == (2, 3)
    assert image.padded.reshape(2, 3).tolist() == [[False, False, True], [True, True, True]]


def test_restart_intervals():
    """
    Restart markers reset the DC predictor and are consumed in sequence.
    """
    blocks = random_blocks(20, seed=1)
    image = parse_jpeg(encode_jpeg(blocks, 40, 32, restart_interval=3))
    assert image.restart_interval == 3
    assert (image.blocks == blocks).all()


def test_wrong_restart_marker():
    data = bytearray(encode_jpeg(random_blocks(4, seed=2), 32, 8, restart_interval=1))
    position = data.index(b"\xff\xd1")
    data[position + 1] = 0xD3
    with pytest.raises(UnsupportedFormat) as excinfo:
        parse_jpeg(bytes(data))
    assert "RST1" in str(excinfo.value)


def test_interleaved_components():
    """
    Only the luminance blocks of an interleaved colour scan are kept.
    """
    blocks = random_blocks(4, seed=3)
    image = parse_jpeg(encode_jpeg(blocks, 16, 16, components=3))
    assert image.components == 3
    assert (image.blocks == blocks).all()


def test_pillow_fixture(tmp_path):
    """
    A reference libjpeg file at quality 100 parses with a unit table.
    """
    pixels = np.random.default_rng(4).integers(0, 256, size=(37, 45), dtype=np.uint8)
    path = tmp_path / "reference.jpg"
    path.write_bytes(pillow_jpeg(pixels))
    image = read_jpeg(path)
    assert (image.width, image.height) == (45, 37)
    assert len(image) == 5 * 6
    assert image.quant.is_unit
    assert image.padded.sum() == 5 + 6 - 1


def test_progressive_rejected():
    data = encode_jpeg(random_blocks(1), 8, 8, frame_marker=0xC2)
    with pytest.raises(UnsupportedFormat) as excinfo:
        parse_jpeg(data)
    assert "progressive" in str(excinfo.value)


def test_arithmetic_rejected():
    data = encode_jpeg(random_blocks(1), 8, 8, frame_marker=0xC9)
    with pytest.raises(UnsupportedFormat) as excinfo:
        parse_jpeg(data)
    assert "arithmetic" in str(excinfo.value)


def test_twelve_bit_rejected():
    data = encode_jpeg(random_blocks(1), 8, 8, frame_marker=0xC1, precision=12)
    with pytest.raises(UnsupportedFormat) as excinfo:
        parse_jpeg(data)
    assert "12-bit" in str(excinfo.value)


def test_truncated():
    """
    Cutting the file anywhere inside the entropy-coded data is a parse error.
    """
    data = encode_jpeg(random_blocks(4, seed=5), 16, 16)
    for cut in (len(data) // 2, len(data) - 10, len(data) - 2):
        with pytest.raises(ParseError):
            parse_jpeg(data[:cut])


def test_not_a_jpeg():
    with pytest.raises(ParseError) as excinfo:
        parse_jpeg(b"\x89PNG\r\n\x1a\n")
    assert "SOI" in str(excinfo.value)


def test_missing_quant_table():
    data = encode_jpeg(random_blocks(1), 8, 8)
    start = data.index(b"\xff\xdb")
    length = int.from_bytes(data[start + 2:start + 4], "big")
    with pytest.raises(ParseError) as excinfo:
        parse_jpeg(data[:start] + data[start + 2 + length:])
    assert "quantization table" in str(excinfo.value)


def test_quant_table_is_unit():
    assert quant_table_is_unit(QuantTable.unit())
    assert quant_table_is_unit(QuantTable.from_quality(100))
    assert not quant_table_is_unit(QuantTable.from_quality(99))
