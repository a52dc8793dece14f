import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import IO, Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .codec import PipelineSpec, QuantTable, decompress_stack
from .config import ConfigError, RunConfig, load_config, parse_dct, parse_dims
from .deadline import Deadline
from .detector import (
    Prior,
    PriorLike,
    Random,
    ScaDescending,
    Strategy,
    TableMismatch,
    VarianceDescending,
    log_lrt,
    select_blocks,
    simulate_payload,
)
from .formats import (
    FormatError,
    format_likelihood_table,
    provenance,
    read_blocks,
    read_likelihood_table,
    read_pmaps,
    write_blocks,
    write_likelihood_table,
    write_report,
)
from .ilp import (
    ClippedTarget,
    FeasibilityModel,
    Feasible,
    Infeasible,
    UnsupportedTransform,
    build_model,
    export_model,
    solve_feasibility,
)
from .jpeg import JpegError, JpegImage, quant_table_is_unit, read_jpeg
from .parallel import BlockPool
from .search import Compatible, SearchBudget, SearchOutcome, search_antecedent
from .stats import (
    ImageCovers,
    InsufficientBlocks,
    LikelihoodTable,
    SyntheticCovers,
    build_likelihood_table,
    position_heatmap,
    variance_profile,
)
from .testing import ToyOracleHarness
from .typing import (
    AnalyzeRow,
    AntecedentRow,
    BlockSource,
    HeatmapRow,
    ReportMetadata,
    RocRow,
    SimulationRow,
    VarianceRow,
    ZeroFaRow,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_MISMATCH = 4

Handler = Callable[[RunConfig, argparse.Namespace], int]


def search_job(args: Tuple[np.ndarray, PipelineSpec, SearchBudget, Optional[float]]) -> SearchOutcome:
    """
    One block search with its own deadline, started in the worker.
    """
    target, spec, budget, time_limit = args
    with Deadline(time_limit) as deadline:
        return search_antecedent(target, spec, budget, deadline=deadline)


@contextlib.contextmanager
def _output(path: Optional[Path]) -> Iterator[IO[str]]:
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as stream:
            yield stream


def _metadata(config: RunConfig, command: str, **extra: Any) -> ReportMetadata:
    metadata: ReportMetadata = {"command": command, "jpegcompat": __version__, "provenance": provenance()}
    metadata.update(extra)
    metadata.update(config.as_metadata())
    return metadata


def _load_table(config: RunConfig) -> LikelihoodTable:
    config.check_files(table=True)
    assert config.table is not None
    try:
        return read_likelihood_table(config.table)
    except FormatError as exc:
        raise ConfigError(f"invalid likelihood table {config.table}: {exc}") from None


def _covers(config: RunConfig, seed: int) -> BlockSource:
    if config.covers == "synthetic":
        return SyntheticCovers(seed, dims=config.dims)
    if config.covers == "images":
        if not config.inputs:
            raise ConfigError("covers = images needs input image paths")
        return ImageCovers(config.inputs)
    raise ConfigError(f"unknown cover source {config.covers!r}; choose synthetic or images")


def _strategy(config: RunConfig, pmaps: Optional[np.ndarray]) -> Strategy:
    if config.strategy == "random":
        return Random(config.require_seed())
    if config.strategy == "variance":
        return VarianceDescending()
    if pmaps is None:
        raise ConfigError("the sca strategy needs a p-map file next to each image")
    return ScaDescending(pmaps)


def _image_pmaps(path: Path, config: RunConfig, count: int) -> Optional[np.ndarray]:
    if config.strategy != "sca" and config.prior != "sca":
        return None
    pmap_path = path.with_suffix(".pmap")
    if not pmap_path.exists():
        raise ConfigError(f"p-map file not found: {pmap_path}")
    try:
        pmaps = read_pmaps(pmap_path)
    except FormatError as exc:
        raise ConfigError(str(exc)) from None
    if len(pmaps) != count:
        raise ConfigError(f"{pmap_path} holds {len(pmaps)} p-maps for {count} blocks")
    return pmaps


def analyze_image(
    path: Path,
    image: JpegImage,
    config: RunConfig,
    table: LikelihoodTable,
    pool: BlockPool,
) -> AnalyzeRow:
    spec = config.pipeline(image.quant)
    if not quant_table_is_unit(image.quant):
        logger.warning("%s: quantization table is not all ones; the attack expects quality 100", path)
    if spec.quant != image.quant:
        logger.warning("%s: configured quantization table differs from the file's", path)

    candidates = np.flatnonzero(~image.padded) if len(image.padded) else np.arange(len(image))
    _, _, clipped = decompress_stack(image.blocks[candidates], spec)
    clipped_excluded = int(clipped.sum())
    candidates = candidates[~clipped]
    if len(candidates) == 0:
        raise ConfigError(f"{path}: no usable blocks after excluding padded and clipped ones")

    pmaps = _image_pmaps(path, config, len(image))
    kept_pmaps = pmaps[candidates] if pmaps is not None else None
    strategy = _strategy(config, kept_pmaps)
    selected = candidates[select_blocks(image.blocks[candidates], strategy, config.fraction, spec=spec)]

    jobs = [(image.blocks[index], spec, config.search_budget(), config.time_limit) for index in selected]
    outcomes = pool.map(search_job, jobs)
    t = np.array([not isinstance(outcome, Compatible) for outcome in outcomes], dtype=np.int64)

    prior: PriorLike = Prior.uniform()
    if config.prior == "sca":
        assert pmaps is not None
        prior = Prior.per_block(pmaps[selected])
    score = log_lrt(t, table, prior, pipeline_id=spec.pipeline_id, strategy_id=config.strategy)
    logger.info("%s: %d of %d blocks unsolved, log-LR %.4f", path, t.sum(), len(t), score.log_lr)
    return AnalyzeRow(
        path=str(path),
        status="ok",
        n_blocks=len(t),
        n_unsolved=int(t.sum()),
        log_lr=score.log_lr,
        clipped_excluded=clipped_excluded,
    )


def cmd_analyze(config: RunConfig, args: argparse.Namespace) -> int:
    if not config.inputs:
        raise ConfigError("no input JPEG files given")
    table = _load_table(config)
    config.check_files()
    rows: List[AnalyzeRow] = []
    with BlockPool.from_setting(config.workers) as pool:
        for path in config.inputs:
            try:
                rows.append(analyze_image(path, read_jpeg(path), config, table, pool))
            except (JpegError, ConfigError, TableMismatch) as exc:
                if not config.continue_on_error:
                    raise
                logger.error("%s: %s", path, exc)
                rows.append(
                    AnalyzeRow(
                        path=str(path),
                        status="failed",
                        n_blocks=0,
                        n_unsolved=0,
                        log_lr=0.0,
                        clipped_excluded=0,
                        error=str(exc),
                    )
                )
    columns = ["path", "status", "n_blocks", "n_unsolved", "log_lr", "clipped_excluded", "error"]
    with _output(config.output) as stream:
        write_report(
            stream,
            rows,
            columns,
            _metadata(config, "analyze", table_id=table.table_id, pipeline_id=table.pipeline_id),
        )
    return EXIT_OK


def _target_blocks(args: argparse.Namespace) -> np.ndarray:
    path = Path(args.blocks)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    if path.suffix.lower() in (".jpg", ".jpeg"):
        image = read_jpeg(path)
        blocks = image.blocks
    else:
        try:
            blocks = read_blocks(path)
        except FormatError as exc:
            raise ConfigError(f"invalid block file {path}: {exc}") from None
    if args.index is not None:
        if not 0 <= args.index < len(blocks):
            raise ConfigError(f"block index {args.index} out of range for {len(blocks)} blocks")
        return blocks[args.index:args.index + 1]
    return blocks


def cmd_antecedent(config: RunConfig, args: argparse.Namespace) -> int:
    blocks = _target_blocks(args)
    spec = config.pipeline(_jpeg_table(args) if config.quant == "image" else None)
    jobs = [(block, spec, config.search_budget(), config.time_limit) for block in blocks]
    with BlockPool.from_setting(config.workers) as pool:
        outcomes = pool.map(search_job, jobs)
    rows: List[AntecedentRow] = []
    antecedents = []
    first = args.index or 0
    for offset, (block, outcome) in enumerate(zip(blocks, outcomes)):
        if isinstance(outcome, Compatible):
            antecedents.append(outcome.antecedent)
            rows.append(
                AntecedentRow(
                    index=first + offset,
                    outcome="compatible",
                    iterations=outcome.iterations,
                    metric=outcome.final_metric,
                )
            )
            continue
        row = AntecedentRow(
            index=first + offset,
            outcome="incompatible" if outcome.queue_drained else "unsolved",
            iterations=outcome.iterations,
            metric=outcome.best_metric,
        )
        if args.ilp and not outcome.queue_drained:
            row["ilp"] = _ilp_verdict(block, spec, config.node_budget)
            if row["ilp"] == "infeasible":
                row["outcome"] = "incompatible"
        rows.append(row)
    if args.write_antecedents and antecedents:
        write_blocks(args.write_antecedents, np.stack(antecedents))
    with _output(config.output) as stream:
        write_report(
            stream,
            rows,
            ["index", "outcome", "iterations", "metric", "ilp"],
            _metadata(config, "antecedent", pipeline_id=spec.pipeline_id),
        )
    return EXIT_OK


def _jpeg_table(args: argparse.Namespace) -> QuantTable:
    path = Path(args.blocks)
    if path.suffix.lower() not in (".jpg", ".jpeg"):
        raise ConfigError("quant = image needs a JPEG input")
    return read_jpeg(path).quant


def _ilp_verdict(block: np.ndarray, spec: PipelineSpec, node_budget: int) -> str:
    try:
        model = build_model(block, spec)
    except (UnsupportedTransform, ClippedTarget) as exc:
        logger.info("Skipping branch-and-bound: %s", exc)
        return "n/a"
    return _solve(model, node_budget)


def _solve(model: FeasibilityModel, node_budget: int) -> str:
    outcome = solve_feasibility(model, node_budget)
    if isinstance(outcome, Feasible):
        return "feasible"
    if isinstance(outcome, Infeasible):
        return "infeasible"
    return "budget"


def cmd_likelihood_build(config: RunConfig, args: argparse.Namespace) -> int:
    seed = config.require_seed()
    spec = config.pipeline()
    with BlockPool.from_setting(config.workers) as pool:
        table = build_likelihood_table(
            _covers(config, seed),
            spec,
            config.search_budget(),
            config.m_max,
            config.samples,
            seed,
            checkpoints=config.checkpoints,
            pool=pool,
        )
    if config.output is None or str(config.output) == "-":
        sys.stdout.write(format_likelihood_table(table))
    else:
        write_likelihood_table(config.output, table)
    logger.info("Likelihood table %s written", table.table_id)
    return EXIT_OK


def cmd_heatmap(config: RunConfig, args: argparse.Namespace) -> int:
    seed = config.require_seed()
    spec = config.pipeline()
    with BlockPool.from_setting(config.workers) as pool:
        result = position_heatmap(_covers(config, seed), spec, config.search_budget(), config.samples, seed, pool=pool)
    cols = spec.dims[1]
    rows = [
        HeatmapRow(
            position=position,
            row=position // cols,
            col=position % cols,
            plus_ratio=float(result.plus.flat[position]),
            minus_ratio=float(result.minus.flat[position]),
            ratio=float(result.ratios.flat[position]),
        )
        for position in range(spec.size)
    ]
    metadata = _metadata(
        config,
        "heatmap",
        pipeline_id=spec.pipeline_id,
        chi2=result.statistic,
        p_value=result.p_value,
        plus_p_value=result.plus_p_value,
        minus_p_value=result.minus_p_value,
    )
    with _output(config.output) as stream:
        write_report(stream, rows, list(HeatmapRow.__annotations__), metadata)
    return EXIT_OK


def cmd_variance(config: RunConfig, args: argparse.Namespace) -> int:
    seed = config.require_seed()
    spec = config.pipeline()
    budget = config.search_budget() if args.search else None
    with BlockPool.from_setting(config.workers) as pool:
        profile = variance_profile(
            _covers(config, seed),
            spec,
            range(config.m_max + 1),
            config.samples,
            seed,
            budget=budget,
            pool=pool,
        )
    rows: List[VarianceRow] = []
    for entry in profile.entries:
        row = VarianceRow(m=entry.m, blocks=entry.blocks, mean_variance=entry.mean_variance)
        if entry.solved_mean is not None:
            row["solved_mean"] = entry.solved_mean
        if entry.unsolved_mean is not None:
            row["unsolved_mean"] = entry.unsolved_mean
        rows.append(row)
    metadata = _metadata(config, "variance", pipeline_id=spec.pipeline_id)
    if profile.correlation is not None:
        metadata["correlation"] = profile.correlation
    with _output(config.output) as stream:
        write_report(stream, rows, ["m", "blocks", "mean_variance", "solved_mean", "unsolved_mean"], metadata)
    return EXIT_OK


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> int:
    seed = config.require_seed()
    table = _load_table(config)
    config.check_files()
    spec = config.pipeline()
    if spec.pipeline_id != table.pipeline_id:
        raise TableMismatch(f"likelihood table was built for pipeline {table.pipeline_id}, not {spec.pipeline_id}")
    rows: List[SimulationRow] = []
    roc_rows: List[RocRow] = []
    zero_fa_rows: List[ZeroFaRow] = []
    for stream, payload in enumerate(config.payloads):
        pmaps = None
        if config.embedding == "pmap":
            if payload not in config.pmaps:
                raise ConfigError(f"no p-map file configured for payload {payload}")
            try:
                pmaps = read_pmaps(config.pmaps[payload])
            except FormatError as exc:
                raise ConfigError(str(exc)) from None
        result = simulate_payload(
            payload,
            table,
            spec,
            images=config.images,
            blocks_per_image=config.blocks_per_image,
            seed=seed,
            combinations=config.strategies,
            fractions=config.fractions,
            embedding=config.embedding,
            pmaps=pmaps,
            stream=stream,
        )
        zero_fa_rows.append(ZeroFaRow(payload=payload, detection_power=result.zero_fa_power))
        for (name, fraction), curve in result.curves.items():
            rows.append(SimulationRow(payload=payload, combination=name, fraction=fraction, p_e=curve.p_e))
            for threshold, (p_fa, p_d) in zip(curve.thresholds, curve.points):
                roc_rows.append(
                    RocRow(
                        payload=payload,
                        combination=name,
                        fraction=fraction,
                        threshold=threshold,
                        p_fa=p_fa,
                        p_d=p_d,
                    )
                )
    metadata = _metadata(config, "simulate", pipeline_id=spec.pipeline_id, table_id=table.table_id)
    with _output(config.output) as stream_out:
        write_report(stream_out, rows, list(SimulationRow.__annotations__), metadata)
    if args.roc:
        with _output(args.roc) as stream_out:
            write_report(stream_out, roc_rows, list(RocRow.__annotations__), metadata)
    if args.zero_fa:
        with _output(args.zero_fa) as stream_out:
            write_report(stream_out, zero_fa_rows, list(ZeroFaRow.__annotations__), metadata)
    return EXIT_OK


def cmd_ilp_export(config: RunConfig, args: argparse.Namespace) -> int:
    blocks = _target_blocks(args)
    if len(blocks) != 1:
        raise ConfigError("ilp-export needs exactly one block; use --index")
    spec = config.pipeline(_jpeg_table(args) if config.quant == "image" else None)
    try:
        model = build_model(blocks[0], spec, allow_clipped=args.allow_clipped)
    except (UnsupportedTransform, ClippedTarget) as exc:
        raise ConfigError(str(exc)) from None
    data = export_model(model)
    if config.output is None or str(config.output) == "-":
        sys.stdout.write(data.decode("ascii"))
    else:
        Path(config.output).write_bytes(data)
    if args.solve:
        verdict = _solve(model, config.node_budget)
        sys.stderr.write(f"branch-and-bound: {verdict}\n")
    return EXIT_OK


def cmd_toy_demo(config: RunConfig, args: argparse.Namespace) -> int:
    steps = tuple(args.steps)
    harness = ToyOracleHarness(
        PipelineSpec.toy((steps[0], steps[1])),
        search_sample=args.search_sample,
        node_budget=config.node_budget,
        seed=config.seed or 0,
    )
    with BlockPool.from_setting(config.workers) as pool:
        report = harness.run(pool=pool)
    summary: Dict[str, Any] = dict(harness.summary())
    summary.update(
        q=f"{steps[0]}x{steps[1]}",
        ilp_checked=report.ilp_checked,
        search_checked=report.search_checked,
        disagreements=len(report.disagreements),
    )
    with _output(config.output) as stream:
        write_report(stream, [summary], list(summary), _metadata(config, "toy-demo"))
    return EXIT_OK if report.agreed else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="INI configuration file")
    common.add_argument("-o", "--output", type=Path, help="report path (default: stdout)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="worker processes, 0 for one per CPU")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    pipeline = common.add_argument_group("pipeline")
    pipeline.add_argument("--dct", type=parse_dct, help="naive or islow")
    pipeline.add_argument("--no-level-shift", dest="level_shift", action="store_false", default=None)
    pipeline.add_argument("--quant", help="unit, image, quality:<qf> or a table file")
    pipeline.add_argument("--dims", type=parse_dims, help="8x8 or 1x2")
    search = common.add_argument_group("search")
    search.add_argument("--budget", type=int, help="search iterations per block")
    search.add_argument("--time-limit", type=float, help="seconds per block search")
    search.add_argument("--node-budget", type=int, help="branch-and-bound nodes per block")

    parser = argparse.ArgumentParser(
        prog="jpegcompat",
        description="JPEG compatibility steganalysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", parents=[common], help="score JPEG images")
    analyze.add_argument("inputs", nargs="*", type=Path)
    analyze.add_argument("--table", type=Path)
    analyze.add_argument("--strategy", choices=["random", "variance", "sca"])
    analyze.add_argument("--fraction", type=float)
    analyze.add_argument("--prior", choices=["uniform", "sca"])
    analyze.add_argument("--continue-on-error", action="store_true", default=None)
    analyze.set_defaults(handler=cmd_analyze)

    antecedent = commands.add_parser("antecedent", parents=[common], help="search antecedents of blocks")
    antecedent.add_argument("blocks", help="block file (text or binary) or JPEG")
    antecedent.add_argument("--index", type=int, help="only this block")
    antecedent.add_argument("--ilp", action="store_true", help="run branch-and-bound on unsolved blocks")
    antecedent.add_argument("--write-antecedents", type=Path)
    antecedent.set_defaults(handler=cmd_antecedent)

    build = commands.add_parser("likelihood-build", parents=[common], help="build a likelihood table")
    build.add_argument("--m-max", type=int)
    build.add_argument("--samples", type=int, help="blocks per m")
    build.add_argument("--checkpoints", type=int, nargs="+", help="iteration counts for convergence traces")
    build.add_argument("--covers", choices=["synthetic", "images"])
    build.add_argument("inputs", nargs="*", type=Path, help="cover images for --covers images")
    build.set_defaults(handler=cmd_likelihood_build)

    heatmap = commands.add_parser("heatmap", parents=[common], help="unsolved ratio per modified position")
    heatmap.add_argument("--samples", type=int, help="cover blocks")
    heatmap.add_argument("--covers", choices=["synthetic", "images"])
    heatmap.add_argument("inputs", nargs="*", type=Path)
    heatmap.set_defaults(handler=cmd_heatmap)

    variance = commands.add_parser("variance", parents=[common], help="rounding error variance per m")
    variance.add_argument("--m-max", type=int)
    variance.add_argument("--samples", type=int, help="blocks per m")
    variance.add_argument("--search", action="store_true", help="also split by search outcome")
    variance.add_argument("--covers", choices=["synthetic", "images"])
    variance.add_argument("inputs", nargs="*", type=Path)
    variance.set_defaults(handler=cmd_variance)

    simulate = commands.add_parser("simulate", parents=[common], help="simulated detector evaluation")
    simulate.add_argument("--table", type=Path)
    simulate.add_argument("--payloads", type=float, nargs="+")
    simulate.add_argument("--images", type=int)
    simulate.add_argument("--blocks-per-image", type=int)
    simulate.add_argument("--embedding", choices=["lsbm", "pmap"])
    simulate.add_argument("--strategies", nargs="+", help="sca, blind, partial-sca, control")
    simulate.add_argument("--fractions", type=float, nargs="+")
    simulate.add_argument("--roc", type=Path, help="also write ROC points here")
    simulate.add_argument("--zero-fa", type=Path, help="also write the zero false alarm curve here")
    simulate.set_defaults(handler=cmd_simulate)

    export = commands.add_parser("ilp-export", parents=[common], help="write a block's feasibility model")
    export.add_argument("blocks", help="block file (text or binary) or JPEG")
    export.add_argument("--index", type=int)
    export.add_argument("--allow-clipped", action="store_true")
    export.add_argument("--solve", action="store_true", help="also run the embedded solver")
    export.set_defaults(handler=cmd_ilp_export)

    toy = commands.add_parser("toy-demo", parents=[common], help="check solvers against toy enumeration")
    toy.add_argument("--steps", type=int, nargs=2, default=[1, 1], metavar=("Q0", "Q1"))
    toy.add_argument("--search-sample", type=int, default=4, help="blocks of each kind for the drained search")
    toy.set_defaults(handler=cmd_toy_demo)
    return parser


OVERRIDES = (
    "output",
    "seed",
    "workers",
    "dct",
    "level_shift",
    "quant",
    "dims",
    "budget",
    "time_limit",
    "node_budget",
    "table",
    "strategy",
    "fraction",
    "prior",
    "continue_on_error",
    "m_max",
    "samples",
    "checkpoints",
    "covers",
    "payloads",
    "images",
    "blocks_per_image",
    "embedding",
    "strategies",
    "fractions",
)
TUPLES = ("checkpoints", "payloads", "strategies", "fractions")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    The config file (or defaults) with every given flag applied on top.
    """
    config = load_config(args.config) if args.config else RunConfig()
    values = {name: getattr(args, name, None) for name in OVERRIDES}
    for name in TUPLES:
        if values[name] is not None:
            values[name] = tuple(values[name])
    inputs = getattr(args, "inputs", None)
    if inputs:
        values["inputs"] = tuple(inputs)
    return config.override(**values)


def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    handler: Handler = args.handler
    try:
        config = resolve_config(args)
        return handler(config, args)
    except (ConfigError, InsufficientBlocks) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except JpegError as exc:
        logger.error("%s", exc)
        return EXIT_PARSE
    except TableMismatch as exc:
        logger.error("%s", exc)
        return EXIT_MISMATCH
