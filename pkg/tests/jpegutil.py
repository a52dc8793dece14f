"""
A small baseline JPEG writer for test fixtures.

It writes quantized coefficient blocks straight into a file, so the parser
can be checked against known coefficients, including layouts a regular
encoder will not produce on request (restart intervals, padded edges,
extra components, unsupported frame types).
"""

import io
import struct

import numpy as np
from PIL import Image

from jpegcompat.jpeg import ZIGZAG

# Every DC category gets a 4-bit code and every AC symbol an 8-bit code.
DC_SYMBOLS = list(range(12))
AC_SYMBOLS = [0x00, 0xF0] + [(run << 4) | size for run in range(16) for size in range(1, 11)]


def _counts(length, total):
    counts = [0] * 16
    counts[length - 1] = total
    return counts


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.buffer = 0
        self.count = 0

    def write(self, value, length):
        for shift in range(length - 1, -1, -1):
            self.buffer = (self.buffer << 1) | ((value >> shift) & 1)
            self.count += 1
            if self.count == 8:
                self.out.append(self.buffer)
                if self.buffer == 0xFF:
                    self.out.append(0x00)
                self.buffer = 0
                self.count = 0

    def flush(self):
        if self.count:
            self.write((1 << (8 - self.count)) - 1, 8 - self.count)


def _category(value):
    size = abs(int(value)).bit_length()
    bits = value if value >= 0 else value + (1 << size) - 1
    return size, bits


def _encode_block(writer, zigzag, predictor):
    size, bits = _category(zigzag[0] - predictor)
    if size > 11:
        raise ValueError("DC difference out of range")
    writer.write(DC_SYMBOLS.index(size), 4)
    writer.write(bits, size)
    run = 0
    for value in zigzag[1:]:
        if value == 0:
            run += 1
            continue
        while run > 15:
            writer.write(AC_SYMBOLS.index(0xF0), 8)
            run -= 16
        size, bits = _category(value)
        if size > 10:
            raise ValueError("AC coefficient out of range")
        writer.write(AC_SYMBOLS.index((run << 4) | size), 8)
        writer.write(bits, size)
        run = 0
    if run:
        writer.write(AC_SYMBOLS.index(0x00), 8)


def _segment(marker, payload):
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


def encode_jpeg(
    blocks,
    width,
    height,
    quant=None,
    *,
    restart_interval=0,
    frame_marker=0xC0,
    precision=8,
    components=1,
):
    """
    Writes luminance ``blocks`` (natural order, raster order over the
    ceil(height/8) x ceil(width/8) grid) as a baseline JPEG. Extra
    components are 1x1 sampled, all zero and interleaved with the luma.
    """
    blocks = np.asarray(blocks, dtype=np.int64).reshape(-1, 8, 8)
    quant = np.ones((8, 8), dtype=np.int64) if quant is None else np.asarray(quant, dtype=np.int64)
    rows, cols = -(-height // 8), -(-width // 8)
    if len(blocks) != rows * cols:
        raise ValueError(f"need {rows * cols} blocks, got {len(blocks)}")

    out = io.BytesIO()
    out.write(b"\xff\xd8")
    out.write(_segment(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00"))
    natural = quant.ravel()
    zigzag_quant = np.empty(64, dtype=np.int64)
    zigzag_quant[ZIGZAG] = natural
    out.write(_segment(0xDB, bytes([0x00]) + bytes(int(v) for v in zigzag_quant)))
    frame = struct.pack(">BHHB", precision, height, width, components)
    for ident in range(1, components + 1):
        frame += bytes([ident, 0x11, 0])
    out.write(_segment(frame_marker, frame))
    tables = bytes([0x00]) + bytes(_counts(4, len(DC_SYMBOLS))) + bytes(DC_SYMBOLS)
    tables += bytes([0x10]) + bytes(_counts(8, len(AC_SYMBOLS))) + bytes(AC_SYMBOLS)
    out.write(_segment(0xC4, tables))
    if restart_interval:
        out.write(_segment(0xDD, struct.pack(">H", restart_interval)))
    scan = bytes([components])
    for ident in range(1, components + 1):
        scan += bytes([ident, 0x00])
    out.write(_segment(0xDA, scan + bytes([0, 63, 0])))

    writer = _BitWriter()
    predictors = [0] * components
    restart = 0
    empty = np.zeros(64, dtype=np.int64)
    for unit, block in enumerate(blocks):
        if restart_interval and unit and unit % restart_interval == 0:
            writer.flush()
            writer.out += bytes([0xFF, 0xD0 + restart])
            restart = (restart + 1) % 8
            predictors = [0] * components
        zigzag = np.empty(64, dtype=np.int64)
        zigzag[ZIGZAG] = block.ravel()
        _encode_block(writer, zigzag, predictors[0])
        predictors[0] = int(zigzag[0])
        for index in range(1, components):
            _encode_block(writer, empty, predictors[index])
            predictors[index] = 0
    writer.flush()
    out.write(bytes(writer.out))
    out.write(b"\xff\xd9")
    return out.getvalue()


def pillow_jpeg(pixels, quality=100):
    """
    Grayscale JPEG bytes from Pillow's libjpeg (islow DCT, no subsampling).
    """
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(buffer, format="JPEG", quality=quality)
    return buffer.getvalue()
