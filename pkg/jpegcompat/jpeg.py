"""
Baseline JPEG coefficient reader.

Decodes the Huffman-coded scans of sequential 8-bit files and returns the
quantized DCT coefficients of the luminance (first) component exactly as
stored, together with its quantization table. Nothing is dequantized or
inverse transformed.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .codec import STANDARD_DIMS, DctVariant, PipelineSpec, QuantTable
from .typing import BoolArray, IntArray

logger = logging.getLogger(__name__)

# Zig-zag rank of each natural (row-major) coefficient position.
ZIGZAG = np.array(
    [
        0, 1, 5, 6, 14, 15, 27, 28,
        2, 4, 7, 13, 16, 26, 29, 42,
        3, 8, 12, 17, 25, 30, 41, 43,
        9, 11, 18, 24, 31, 40, 44, 53,
        10, 19, 23, 32, 39, 45, 52, 54,
        20, 22, 33, 38, 46, 51, 55, 60,
        21, 34, 37, 47, 50, 56, 59, 61,
        35, 36, 48, 49, 57, 58, 62, 63,
    ],
    dtype=np.int64,
)
# Natural position of each zig-zag rank.
NATURAL = np.argsort(ZIGZAG)

SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
DQT = 0xDB
DHT = 0xC4
DRI = 0xDD
DNL = 0xDC
DAC = 0xCC
RST0 = 0xD0
SEQUENTIAL_FRAMES = {0xC0: "baseline", 0xC1: "extended sequential"}
UNSUPPORTED_FRAMES = {
    0xC2: "progressive",
    0xC3: "lossless",
    0xC5: "differential sequential",
    0xC6: "differential progressive",
    0xC7: "differential lossless",
    0xC9: "arithmetic sequential",
    0xCA: "arithmetic progressive",
    0xCB: "arithmetic lossless",
    0xCD: "arithmetic differential sequential",
    0xCE: "arithmetic differential progressive",
    0xCF: "arithmetic differential lossless",
}


class JpegError(ValueError):
    pass


class ParseError(JpegError):
    """
    The byte stream is not a well-formed JPEG file.
    """


class UnsupportedFormat(JpegError):
    """
    The file is valid JPEG but outside the baseline sequential 8-bit
    Huffman subset.
    """


@dataclass(frozen=True, eq=False)
class JpegImage:
    """
    Quantized luminance blocks in raster order, with ``padded`` set for
    blocks that extend past the right or bottom image edge.
    """

    blocks: IntArray
    quant: QuantTable
    width: int
    height: int
    precision: int = 8
    padded: BoolArray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    components: int = 1
    restart_interval: int = 0

    @property
    def block_rows(self) -> int:
        return math.ceil(self.height / 8)

    @property
    def block_cols(self) -> int:
        return math.ceil(self.width / 8)

    def __len__(self) -> int:
        return len(self.blocks)

    def pipeline(self, dct: DctVariant = DctVariant.NAIVE) -> PipelineSpec:
        """
        The 8x8 level-shifted pipeline using this file's luminance table.
        """
        return PipelineSpec.standard(self.quant, dct)


def quant_table_is_unit(q: QuantTable) -> bool:
    return q.is_unit


class _HuffmanTable:
    """
    Canonical Huffman decoder built from the DHT code-length counts
    (the MAXCODE / VALPTR construction of Annex C and F).
    """

    def __init__(self, counts: Sequence[int], symbols: bytes) -> None:
        if len(counts) != 16 or sum(counts) != len(symbols):
            raise ParseError("Huffman table symbol count does not match its code lengths")
        self.symbols = symbols
        self.maxcode = [-1] * 17
        self.mincode = [0] * 17
        self.valptr = [0] * 17
        code = 0
        index = 0
        for length in range(1, 17):
            count = counts[length - 1]
            if count:
                self.valptr[length] = index
                self.mincode[length] = code
                code += count
                index += count
                if code > (1 << length):
                    raise ParseError("Huffman table overrun: more codes than the code length allows")
                self.maxcode[length] = code - 1
            code <<= 1

    def decode(self, reader: "_BitReader") -> int:
        code = reader.read(1)
        for length in range(1, 17):
            if code <= self.maxcode[length]:
                return self.symbols[self.valptr[length] + code - self.mincode[length]]
            code = (code << 1) | reader.read(1)
        raise ParseError("invalid Huffman code in entropy-coded data")


class _BitReader:
    """
    Reads entropy-coded bits, removing byte stuffing. Markers inside the
    coded data stop the reader.
    """

    def __init__(self, data: bytes, position: int) -> None:
        self.data = data
        self.position = position
        self.buffer = 0
        self.count = 0

    def _fill(self) -> None:
        data = self.data
        if self.position >= len(data):
            raise ParseError("truncated entropy-coded segment")
        byte = data[self.position]
        if byte == 0xFF:
            if self.position + 1 >= len(data):
                raise ParseError("truncated entropy-coded segment")
            following = data[self.position + 1]
            if following == 0x00:
                self.position += 2
            elif RST0 <= following <= RST0 + 7:
                raise UnsupportedFormat(
                    f"restart marker RST{following - RST0} inside a restart interval"
                )
            else:
                raise ParseError(f"marker 0xFF{following:02X} interrupts entropy-coded data")
        else:
            self.position += 1
        self.buffer = (self.buffer << 8) | byte
        self.count += 8

    def read(self, n: int) -> int:
        while self.count < n:
            self._fill()
        self.count -= n
        value = self.buffer >> self.count
        self.buffer &= (1 << self.count) - 1
        return value

    def receive_extend(self, size: int) -> int:
        if size == 0:
            return 0
        value = self.read(size)
        if value < 1 << (size - 1):
            value -= (1 << size) - 1
        return value

    def align(self) -> None:
        self.buffer = 0
        self.count = 0

    def restart(self, expected: int) -> None:
        self.align()
        data = self.data
        # fill bytes may precede the marker
        while self.position + 1 < len(data) and data[self.position] == 0xFF and data[self.position + 1] == 0xFF:
            self.position += 1
        if self.position + 1 >= len(data):
            raise ParseError("truncated before restart marker")
        if data[self.position] != 0xFF or data[self.position + 1] != RST0 + expected:
            found = data[self.position:self.position + 2].hex().upper()
            raise UnsupportedFormat(f"expected restart marker RST{expected}, found {found}")
        self.position += 2


@dataclass
class _Component:
    ident: int
    h: int
    v: int
    tq: int
    dc_table: int = 0
    ac_table: int = 0
    predictor: int = 0


@dataclass
class _Frame:
    kind: str
    precision: int
    height: int
    width: int
    components: List[_Component]

    @property
    def h_max(self) -> int:
        return max(c.h for c in self.components)

    @property
    def v_max(self) -> int:
        return max(c.v for c in self.components)

    def block_grid(self, component: _Component) -> Tuple[int, int]:
        width = math.ceil(self.width * component.h / self.h_max)
        height = math.ceil(self.height * component.v / self.v_max)
        return math.ceil(height / 8), math.ceil(width / 8)


class _Parser:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.position = 0
        self.quant: Dict[int, IntArray] = {}
        self.huffman: Dict[Tuple[int, int], _HuffmanTable] = {}
        self.restart_interval = 0
        self.frame: Optional[_Frame] = None
        self.luma: Optional[IntArray] = None
        self.luma_scanned = False
        self.scan_components: List[_Component] = []
        self.next_restart = 0

    def _bytes(self, n: int) -> bytes:
        if self.position + n > len(self.data):
            raise ParseError("unexpected end of file")
        chunk = self.data[self.position:self.position + n]
        self.position += n
        return chunk

    def _u8(self) -> int:
        return self._bytes(1)[0]

    def _u16(self) -> int:
        return int.from_bytes(self._bytes(2), "big")

    def _segment(self) -> bytes:
        length = self._u16()
        if length < 2:
            raise ParseError(f"invalid segment length {length}")
        return self._bytes(length - 2)

    def _marker(self) -> int:
        if self._u8() != 0xFF:
            raise ParseError(f"expected a marker at offset {self.position - 1}")
        code = self._u8()
        while code == 0xFF:
            code = self._u8()
        return code

    def parse(self) -> JpegImage:
        if self.data[:2] != b"\xff\xd8":
            raise ParseError("missing SOI marker")
        self.position = 2
        while True:
            marker = self._marker()
            if marker == EOI:
                break
            if marker in SEQUENTIAL_FRAMES:
                self._frame_header(SEQUENTIAL_FRAMES[marker], self._segment())
            elif marker in UNSUPPORTED_FRAMES:
                raise UnsupportedFormat(f"{UNSUPPORTED_FRAMES[marker]} JPEG is not supported")
            elif marker == DAC:
                raise UnsupportedFormat("arithmetic coding is not supported")
            elif marker == DQT:
                self._quant_tables(self._segment())
            elif marker == DHT:
                self._huffman_tables(self._segment())
            elif marker == DRI:
                segment = self._segment()
                if len(segment) != 2:
                    raise ParseError("invalid DRI segment")
                self.restart_interval = int.from_bytes(segment, "big")
            elif marker == SOS:
                self._scan(self._segment())
            elif marker == DNL:
                raise UnsupportedFormat("DNL-defined image height is not supported")
            elif marker == SOI or RST0 <= marker <= RST0 + 7:
                raise ParseError(f"unexpected marker 0xFF{marker:02X} outside a scan")
            else:
                # APPn, COM and other skippable segments
                self._segment()
        return self._image()

    def _frame_header(self, kind: str, segment: bytes) -> None:
        if self.frame is not None:
            raise ParseError("more than one frame header")
        if len(segment) < 6:
            raise ParseError("truncated frame header")
        precision = segment[0]
        if precision != 8:
            raise UnsupportedFormat(f"{precision}-bit sample precision is not supported")
        height = int.from_bytes(segment[1:3], "big")
        width = int.from_bytes(segment[3:5], "big")
        count = segment[5]
        if len(segment) != 6 + 3 * count or count == 0:
            raise ParseError("invalid frame header length")
        if height == 0:
            raise UnsupportedFormat("DNL-defined image height is not supported")
        if width == 0:
            raise ParseError("image width is zero")
        components = []
        for index in range(count):
            ident, sampling, tq = segment[6 + 3 * index:9 + 3 * index]
            h, v = sampling >> 4, sampling & 0x0F
            if not (1 <= h <= 4 and 1 <= v <= 4):
                raise ParseError(f"invalid sampling factors {h}x{v}")
            components.append(_Component(ident, h, v, tq))
        self.frame = _Frame(kind, precision, height, width, components)
        rows, cols = self.frame.block_grid(components[0])
        self.luma = np.zeros((rows, cols, 8, 8), dtype=np.int64)
        logger.debug("%s frame %dx%d, %d component(s)", kind, width, height, count)

    def _quant_tables(self, segment: bytes) -> None:
        offset = 0
        while offset < len(segment):
            precision, ident = segment[offset] >> 4, segment[offset] & 0x0F
            if precision > 1 or ident > 3:
                raise ParseError(f"invalid quantization table header 0x{segment[offset]:02X}")
            size = 64 * (2 if precision else 1)
            values = segment[offset + 1:offset + 1 + size]
            if len(values) != size:
                raise ParseError("truncated quantization table")
            dtype = ">u2" if precision else "u1"
            zigzag = np.frombuffer(values, dtype=dtype).astype(np.int64)
            if (zigzag == 0).any():
                raise ParseError(f"quantization table {ident} contains a zero step")
            self.quant[ident] = zigzag[ZIGZAG].reshape(8, 8)
            offset += 1 + size

    def _huffman_tables(self, segment: bytes) -> None:
        offset = 0
        while offset < len(segment):
            if offset + 17 > len(segment):
                raise ParseError("truncated Huffman table")
            table_class, ident = segment[offset] >> 4, segment[offset] & 0x0F
            counts = list(segment[offset + 1:offset + 17])
            total = sum(counts)
            symbols = segment[offset + 17:offset + 17 + total]
            if len(symbols) != total or total > 256:
                raise ParseError("Huffman table overrun")
            if table_class > 1:
                raise ParseError(f"invalid Huffman table class {table_class}")
            self.huffman[(table_class, ident)] = _HuffmanTable(counts, symbols)
            offset += 17 + total

    def _scan(self, segment: bytes) -> None:
        frame = self.frame
        if frame is None:
            raise ParseError("scan before frame header")
        count = segment[0] if segment else 0
        if count < 1 or len(segment) != 4 + 2 * count:
            raise ParseError("invalid scan header length")
        by_id = {c.ident: c for c in frame.components}
        scan: List[_Component] = []
        for index in range(count):
            ident, tables = segment[1 + 2 * index:3 + 2 * index]
            if ident not in by_id:
                raise ParseError(f"scan references unknown component {ident}")
            component = by_id[ident]
            component.dc_table, component.ac_table = tables >> 4, tables & 0x0F
            for key in ((0, component.dc_table), (1, component.ac_table)):
                if key not in self.huffman:
                    raise ParseError(f"scan uses undefined Huffman table {key}")
            component.predictor = 0
            scan.append(component)
        ss, se, approximation = segment[-3:]
        if (ss, se, approximation) != (0, 63, 0):
            raise ParseError("spectral selection or approximation in a sequential scan")
        if any(component is frame.components[0] for component in scan):
            self.luma_scanned = True
        self.next_restart = 0
        reader = _BitReader(self.data, self.position)
        if count == 1:
            self._single(reader, scan[0])
        else:
            self._interleaved(reader, scan)
        reader.align()
        self.position = reader.position

    def _block(self, reader: _BitReader, component: _Component) -> IntArray:
        zigzag = np.zeros(64, dtype=np.int64)
        dc = self.huffman[(0, component.dc_table)]
        ac = self.huffman[(1, component.ac_table)]
        size = dc.decode(reader)
        if size > 11:
            raise ParseError(f"DC magnitude category {size} out of range")
        component.predictor += reader.receive_extend(size)
        zigzag[0] = component.predictor
        k = 1
        while k < 64:
            symbol = ac.decode(reader)
            run, size = symbol >> 4, symbol & 0x0F
            if size == 0:
                if run != 15:
                    break
                k += 16
                continue
            k += run
            if k > 63:
                raise ParseError("AC coefficient index overrun")
            zigzag[k] = reader.receive_extend(size)
            k += 1
        return zigzag[ZIGZAG].reshape(8, 8)

    def _restart(self, reader: _BitReader, unit: int) -> None:
        interval = self.restart_interval
        if interval and unit and unit % interval == 0:
            reader.restart(self.next_restart)
            self.next_restart = (self.next_restart + 1) % 8
            for component in self.scan_components:
                component.predictor = 0

    def _single(self, reader: _BitReader, component: _Component) -> None:
        assert self.frame is not None
        rows, cols = self.frame.block_grid(component)
        is_luma = component is self.frame.components[0]
        self.scan_components = [component]
        for unit in range(rows * cols):
            self._restart(reader, unit)
            block = self._block(reader, component)
            if is_luma and self.luma is not None:
                self.luma[unit // cols, unit % cols] = block

    def _interleaved(self, reader: _BitReader, scan: List[_Component]) -> None:
        frame = self.frame
        assert frame is not None
        mcu_cols = math.ceil(frame.width / (8 * frame.h_max))
        mcu_rows = math.ceil(frame.height / (8 * frame.v_max))
        luma = frame.components[0]
        self.scan_components = scan
        total = mcu_rows * mcu_cols
        for unit in range(total):
            self._restart(reader, unit)
            mcu_row, mcu_col = divmod(unit, mcu_cols)
            for component in scan:
                for v in range(component.v):
                    for h in range(component.h):
                        block = self._block(reader, component)
                        if component is not luma or self.luma is None:
                            continue
                        row = mcu_row * component.v + v
                        col = mcu_col * component.h + h
                        if row < self.luma.shape[0] and col < self.luma.shape[1]:
                            self.luma[row, col] = block

    def _image(self) -> JpegImage:
        frame = self.frame
        if frame is None or self.luma is None:
            raise ParseError("no frame header before EOI")
        luma = frame.components[0]
        if luma.tq not in self.quant:
            raise ParseError(f"quantization table {luma.tq} is not defined")
        if not self.luma_scanned:
            raise ParseError("no scan covers the luminance component")
        rows, cols = self.luma.shape[:2]
        padded = np.zeros((rows, cols), dtype=bool)
        if frame.width % 8:
            padded[:, -1] = True
        if frame.height % 8:
            padded[-1, :] = True
        return JpegImage(
            self.luma.reshape(-1, *STANDARD_DIMS),
            QuantTable(self.quant[luma.tq]),
            frame.width,
            frame.height,
            frame.precision,
            padded.ravel(),
            len(frame.components),
            self.restart_interval,
        )


def parse_jpeg(data: bytes) -> JpegImage:
    """
    Parses a baseline JPEG byte stream. Raises ``UnsupportedFormat`` for
    progressive, arithmetic-coded, lossless, hierarchical or 12-bit files
    and ``ParseError`` for anything malformed or truncated.
    """
    return _Parser(bytes(data)).parse()


def read_jpeg(path: Union[str, Path]) -> JpegImage:
    return parse_jpeg(Path(path).read_bytes())
