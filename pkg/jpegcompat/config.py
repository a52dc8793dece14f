import configparser
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from .codec import STANDARD_DIMS, TOY_DIMS, DctVariant, PipelineSpec, QuantTable
from .detector import COMBINATIONS
from .formats import FormatError, read_quant_table
from .search import DEFAULT_ITERATIONS, SearchBudget
from .typing import Dims, Embedding, PriorName, ReportMetadata

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


STRATEGIES = ("random", "variance", "sca")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a batch command needs. Loaded from an INI file with
    ``load_config`` and overridden field by field from the command line.
    """

    # [pipeline]
    dct: DctVariant = DctVariant.NAIVE
    level_shift: bool = True
    quant: str = "unit"
    dims: Dims = STANDARD_DIMS
    # [search]
    budget: int = DEFAULT_ITERATIONS
    time_limit: Optional[float] = None
    node_budget: int = 1000
    # [detector]
    strategy: str = "variance"
    fraction: float = 1.0
    prior: PriorName = "uniform"
    table: Optional[Path] = None
    # [simulation]
    payloads: Tuple[float, ...] = (0.001, 0.005, 0.01)
    images: int = 1000
    blocks_per_image: int = 1024
    embedding: Embedding = "lsbm"
    strategies: Tuple[str, ...] = ("blind",)
    fractions: Tuple[float, ...] = (1.0,)
    # [experiment]
    m_max: int = 5
    samples: int = 1000
    checkpoints: Tuple[int, ...] = ()
    covers: str = "synthetic"
    # [pmaps]
    pmaps: Dict[float, Path] = field(default_factory=dict)
    # [run]
    seed: Optional[int] = None
    workers: int = 1
    inputs: Tuple[Path, ...] = ()
    output: Optional[Path] = None
    continue_on_error: bool = False

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ConfigError(f"search budget must be at least 1, got {self.budget}")
        if self.node_budget < 1:
            raise ConfigError(f"node budget must be at least 1, got {self.node_budget}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        for fraction in (self.fraction, *self.fractions):
            if not 0.0 < fraction <= 1.0:
                raise ConfigError(f"fractions must be in (0, 1], got {fraction}")
        if self.prior not in ("uniform", "sca"):
            raise ConfigError(f"unknown prior {self.prior!r}")
        if self.embedding not in ("lsbm", "pmap"):
            raise ConfigError(f"unknown embedding {self.embedding!r}")
        for name in self.strategies:
            if name not in COMBINATIONS:
                raise ConfigError(f"unknown combination {name!r}; choose from {', '.join(COMBINATIONS)}")
        for payload in self.payloads:
            if not 0.0 <= payload <= 1.0:
                raise ConfigError(f"payloads must be in [0, 1] bpp, got {payload}")
        for name in ("samples", "images", "blocks_per_image"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0 <= self.m_max <= 64:
            raise ConfigError(f"m_max must be in [0, 64], got {self.m_max}")
        if self.workers < 0:
            raise ConfigError(f"workers must be non-negative, got {self.workers}")
        if self.dims not in (STANDARD_DIMS, TOY_DIMS):
            raise ConfigError(f"unsupported dims {self.dims}")

    def override(self, **values: Any) -> "RunConfig":
        """
        A copy with every non-None value replaced.
        """
        changes = {key: value for key, value in values.items() if value is not None}
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def quant_table(self, image_table: Optional[QuantTable] = None) -> QuantTable:
        if self.quant == "unit":
            return QuantTable.unit(self.dims)
        if self.quant == "image":
            if image_table is None:
                raise ConfigError("quant = image needs a JPEG to take the table from")
            return image_table
        if self.quant.startswith("quality:"):
            try:
                return QuantTable.from_quality(int(self.quant.split(":", 1)[1]))
            except ValueError as exc:
                raise ConfigError(f"invalid quant setting {self.quant!r}: {exc}") from None
        try:
            return read_quant_table(self.quant)
        except OSError as exc:
            raise ConfigError(f"cannot read quantization table {self.quant}: {exc.strerror}") from None
        except FormatError as exc:
            raise ConfigError(f"invalid quantization table {self.quant}: {exc}") from None

    def pipeline(self, image_table: Optional[QuantTable] = None) -> PipelineSpec:
        try:
            return PipelineSpec(self.dct, self.level_shift, self.quant_table(image_table), self.dims)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid pipeline: {exc}") from None

    def search_budget(self) -> SearchBudget:
        return SearchBudget(self.budget)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("this command is randomized and needs an explicit seed (--seed or [run] seed)")
        return self.seed

    def check_files(self, *, table: bool = False) -> None:
        """
        Raises ConfigError for referenced files that do not exist.
        """
        paths = list(self.inputs) + list(self.pmaps.values())
        if table:
            if self.table is None:
                raise ConfigError("no likelihood table given (--table or [detector] table)")
            paths.append(self.table)
        for path in paths:
            if not Path(path).exists():
                raise ConfigError(f"file not found: {path}")

    def as_metadata(self) -> ReportMetadata:
        values: ReportMetadata = {}
        for item in dataclasses.fields(self):
            value = getattr(self, item.name)
            if isinstance(value, DctVariant):
                value = value.value
            elif isinstance(value, tuple):
                value = " ".join(str(part) for part in value)
            elif isinstance(value, dict):
                value = " ".join(f"{key}={path}" for key, path in sorted(value.items()))
            values[f"config.{item.name}"] = value
        return values


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.replace(",", " ").split())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.replace(",", " ").split())


def _names(text: str) -> Tuple[str, ...]:
    return tuple(part for part in text.replace(",", " ").split())


def parse_dims(text: str) -> Dims:
    try:
        rows, cols = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"dims must look like 8x8, got {text!r}") from None
    return (rows, cols)


def parse_dct(text: str) -> DctVariant:
    try:
        return DctVariant(text.lower())
    except ValueError:
        raise ConfigError(f"unknown DCT variant {text!r}; choose naive or islow") from None


def _optional_float(text: str) -> Optional[float]:
    return None if text.lower() in ("", "none") else float(text)


Converter = Callable[[str], Any]

_KEYS: Dict[str, Dict[str, Tuple[str, Union[Converter, str]]]] = {
    "pipeline": {
        "dct": ("dct", parse_dct),
        "level_shift": ("level_shift", "boolean"),
        "quant": ("quant", str),
        "dims": ("dims", parse_dims),
    },
    "search": {
        "budget": ("budget", int),
        "time_limit": ("time_limit", _optional_float),
        "node_budget": ("node_budget", int),
    },
    "detector": {
        "strategy": ("strategy", str),
        "fraction": ("fraction", float),
        "prior": ("prior", str),
        "table": ("table", "path"),
    },
    "simulation": {
        "payloads": ("payloads", _floats),
        "images": ("images", int),
        "blocks_per_image": ("blocks_per_image", int),
        "embedding": ("embedding", str),
        "strategies": ("strategies", _names),
        "fractions": ("fractions", _floats),
    },
    "experiment": {
        "m_max": ("m_max", int),
        "samples": ("samples", int),
        "checkpoints": ("checkpoints", _ints),
        "covers": ("covers", str),
    },
    "run": {
        "seed": ("seed", int),
        "workers": ("workers", int),
        "inputs": ("inputs", "paths"),
        "output": ("output", "path"),
        "continue_on_error": ("continue_on_error", "boolean"),
    },
}


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Reads an INI file into a RunConfig. Relative paths are resolved
    against the file's directory; unknown sections or keys are errors.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open(encoding="utf-8") as stream:
            parser.read_file(stream)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    base = path.parent
    values: Dict[str, Any] = {}
    for section in parser.sections():
        if section == "pmaps":
            try:
                values["pmaps"] = {float(key): base / value for key, value in parser.items(section)}
            except ValueError:
                raise ConfigError("[pmaps] keys must be payloads in bpp") from None
            continue
        if section not in _KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            name, convert = _KEYS[section][key]
            try:
                if convert == "boolean":
                    values[name] = parser.getboolean(section, key)
                elif convert == "path":
                    values[name] = base / raw
                elif convert == "paths":
                    values[name] = tuple(base / part for part in raw.split())
                else:
                    assert callable(convert)
                    values[name] = convert(raw)
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"invalid value for {key} in [{section}]: {exc}") from None
    if "quant" in values and values["quant"] not in ("unit", "image") and not values["quant"].startswith("quality:"):
        values["quant"] = str(base / values["quant"])
    logger.debug("Loaded config %s", path)
    return RunConfig(**values)
