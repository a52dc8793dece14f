"""
File formats: coefficient blocks (text and binary), quantization tables,
likelihood tables, p-maps and delimited reports.
"""

import csv
import io
import struct
import subprocess
from pathlib import Path
from typing import IO, Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .codec import QuantTable
from .search import SearchBudget
from .stats import LikelihoodTable
from .typing import FloatArray, IntArray, ReportMetadata

PathLike = Union[str, Path]

BINARY_MAGIC = b"JCB1"
BINARY_HEADER = struct.Struct("<4sBBI")
TABLE_VERSION = 1
TABLE_COLUMNS = ("m", "samples", "unsolved", "ratio")
TRACE_COLUMNS = ("checkpoint", "m", "ratio")


class FormatError(ValueError):
    pass


def format_blocks(blocks: np.ndarray) -> str:
    """
    Text form: a ``dims R C`` line, then each block as R lines of C
    integers, blocks separated by a blank line.
    """
    blocks = np.asarray(blocks, dtype=np.int64)
    if blocks.ndim == 2:
        blocks = blocks[None]
    if blocks.ndim != 3:
        raise FormatError(f"expected a block or a stack of blocks, got shape {blocks.shape}")
    rows, cols = blocks.shape[1:]
    lines = [f"dims {rows} {cols}"]
    for block in blocks:
        lines.append("")
        lines.extend(" ".join(str(value) for value in row) for row in block)
    return "\n".join(lines) + "\n"


def parse_blocks(text: str) -> IntArray:
    lines = [line.split("#", 1)[0].strip() for line in text.splitlines()]
    lines = [line for line in lines if line]
    if not lines or not lines[0].startswith("dims"):
        raise FormatError("block file must start with a 'dims R C' line")
    try:
        _, rows_text, cols_text = lines[0].split()
        rows, cols = int(rows_text), int(cols_text)
        values = [[int(token) for token in line.split()] for line in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"malformed block file: {exc}") from None
    if any(len(row) != cols for row in values):
        raise FormatError(f"every row must hold {cols} integers")
    if len(values) % rows:
        raise FormatError(f"row count {len(values)} is not a multiple of {rows}")
    return np.array(values, dtype=np.int64).reshape(-1, rows, cols)


def read_blocks(path: PathLike) -> IntArray:
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(BINARY_MAGIC):
        return decode_binary(data)
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"block file {path} is not ASCII text: {exc.reason} at byte {exc.start}") from None
    return parse_blocks(text)


def write_blocks(path: PathLike, blocks: np.ndarray) -> None:
    Path(path).write_text(format_blocks(blocks), encoding="ascii")


def encode_binary(blocks: np.ndarray) -> bytes:
    """
    ``JCB1``, rows and cols as bytes, the block count as little-endian
    uint32, then every value as little-endian int16 in row-major order.
    """
    blocks = np.asarray(blocks, dtype=np.int64)
    if blocks.ndim == 2:
        blocks = blocks[None]
    if (np.abs(blocks) > 32767).any():
        raise FormatError("values do not fit in int16")
    header = BINARY_HEADER.pack(BINARY_MAGIC, blocks.shape[1], blocks.shape[2], len(blocks))
    return header + blocks.astype("<i2").tobytes()


def decode_binary(data: bytes) -> IntArray:
    if len(data) < BINARY_HEADER.size:
        raise FormatError("truncated binary block header")
    magic, rows, cols, count = BINARY_HEADER.unpack_from(data)
    if magic != BINARY_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    payload = data[BINARY_HEADER.size:]
    if len(payload) != 2 * rows * cols * count:
        raise FormatError(f"expected {count} blocks of {rows}x{cols}, got {len(payload)} payload bytes")
    return np.frombuffer(payload, dtype="<i2").astype(np.int64).reshape(count, rows, cols)


def read_quant_table(path: PathLike) -> QuantTable:
    blocks = read_blocks(path)
    if len(blocks) != 1:
        raise FormatError(f"quantization table file holds {len(blocks)} blocks, expected 1")
    try:
        return QuantTable(blocks[0])
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_quant_table(path: PathLike, table: QuantTable) -> None:
    write_blocks(path, table.steps)


def format_likelihood_table(table: LikelihoodTable) -> str:
    """
    ``key = value`` header lines, a blank line, the per-m rows as CSV and,
    when convergence traces exist, a second CSV section.
    """
    header = {
        "format": f"jpegcompat-likelihood {TABLE_VERSION}",
        "pipeline_id": table.pipeline_id,
        "dims": f"{table.dims[0]}x{table.dims[1]}",
        "budget": table.budget.max_iterations,
        "m_max": table.m_max,
        "seed": "none" if table.seed is None else table.seed,
        "adjustment": table.adjustment,
    }
    out = io.StringIO()
    for key, value in header.items():
        out.write(f"{key} = {value}\n")
    out.write("\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for m in range(table.m_max + 1):
        writer.writerow([m, table.samples[m], table.unsolved[m], repr(float(table.p_unsolved[m]))])
    if table.traces:
        out.write("\n")
        writer.writerow(TRACE_COLUMNS)
        for checkpoint in sorted(table.traces):
            for m, ratio in enumerate(table.traces[checkpoint]):
                writer.writerow([checkpoint, m, repr(float(ratio))])
    return out.getvalue()


def _sections(text: str) -> List[List[str]]:
    sections: List[List[str]] = [[]]
    for line in text.splitlines():
        if line.strip():
            sections[-1].append(line)
        elif sections[-1]:
            sections.append([])
    return [section for section in sections if section]


def parse_likelihood_table(text: str) -> LikelihoodTable:
    sections = _sections(text)
    if len(sections) < 2:
        raise FormatError("likelihood table needs a header and a row section")
    header: Dict[str, str] = {}
    for line in sections[0]:
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed header line {line!r}")
        header[key.strip()] = value.strip()
    if header.get("format") != f"jpegcompat-likelihood {TABLE_VERSION}":
        raise FormatError(f"unsupported likelihood table format {header.get('format')!r}")
    try:
        reader = csv.DictReader(sections[1])
        if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
            raise FormatError(f"row section must have columns {', '.join(TABLE_COLUMNS)}")
        rows = list(reader)
        rows.sort(key=lambda row: int(row["m"]))
        if [int(row["m"]) for row in rows] != list(range(len(rows))):
            raise FormatError("rows must cover m = 0..m_max exactly once")
        dims = tuple(int(part) for part in header["dims"].split("x"))
        traces: Dict[int, FloatArray] = {}
        if len(sections) > 2:
            for row in csv.DictReader(sections[2]):
                ratios = traces.setdefault(int(row["checkpoint"]), np.zeros(len(rows)))
                ratios[int(row["m"])] = float(row["ratio"])
        return LikelihoodTable(
            np.array([float(row["ratio"]) for row in rows]),
            np.array([int(row["samples"]) for row in rows]),
            np.array([int(row["unsolved"]) for row in rows]),
            SearchBudget(int(header["budget"])),
            header["pipeline_id"],
            (dims[0], dims[1]),
            None if header.get("seed", "none") == "none" else int(header["seed"]),
            header.get("adjustment", "laplace"),
            traces,
        )
    except FormatError:
        raise
    except (KeyError, IndexError) as exc:
        raise FormatError(f"likelihood table is missing {exc}") from None
    except ValueError as exc:
        raise FormatError(f"malformed likelihood table: {exc}") from None


def read_likelihood_table(path: PathLike) -> LikelihoodTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"likelihood table {path} is not UTF-8 text: {exc.reason} at byte {exc.start}") from None
    return parse_likelihood_table(text)


def write_likelihood_table(path: PathLike, table: LikelihoodTable) -> None:
    Path(path).write_text(format_likelihood_table(table), encoding="utf-8")


def read_pmaps(path: PathLike, coefficients: int = 64) -> FloatArray:
    """
    One block per line, ``coefficients`` whitespace-separated
    probabilities in natural order.
    """
    try:
        pmaps = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except ValueError as exc:
        raise FormatError(f"malformed p-map file {path}: {exc}") from None
    if pmaps.size == 0:
        raise FormatError(f"p-map file {path} is empty")
    if pmaps.shape[1] != coefficients:
        raise FormatError(f"p-maps must hold {coefficients} values per block, got {pmaps.shape[1]}")
    if ((pmaps < 0) | (pmaps > 1)).any() or not np.isfinite(pmaps).all():
        raise FormatError("p-map probabilities must lie in [0, 1]")
    return pmaps


def write_pmaps(path: PathLike, pmaps: np.ndarray) -> None:
    pmaps = np.asarray(pmaps, dtype=np.float64)
    np.savetxt(path, pmaps.reshape(len(pmaps), -1), fmt="%.17g")


def provenance() -> str:
    """
    ``git describe`` of the working tree, or the package version outside
    a repository.
    """
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            cwd=Path(__file__).resolve().parent,
            check=False,
            text=True,
        )
    except OSError:
        return f"jpegcompat-{__version__}"
    described = result.stdout.strip()
    if result.returncode != 0 or not described:
        return f"jpegcompat-{__version__}"
    return described


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(
    stream: IO[str],
    rows: Iterable[Mapping[str, Any]],
    columns: Sequence[str],
    metadata: Optional[ReportMetadata] = None,
) -> None:
    """
    ``# key: value`` preamble lines followed by a CSV header row and one
    row per record. Missing optional cells are left empty.
    """
    for key, value in (metadata or {}).items():
        stream.write(f"# {key}: {value}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[column]) if column in row else "" for column in columns])


def read_report(stream: IO[str]) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    metadata: Dict[str, str] = {}
    body = []
    for line in stream:
        if line.startswith("# ") and not body:
            key, _, value = line[2:].rstrip("\n").partition(": ")
            metadata[key] = value
        else:
            body.append(line)
    return metadata, list(csv.DictReader(body))
