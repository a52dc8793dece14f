import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .codec import PIXEL_MAX, TOY_DIMS, PipelineSpec, ToyEnumeration, toy_enumerate
from .ilp import BudgetExceeded, Feasible, build_model, solve_feasibility
from .parallel import BlockPool
from .search import Compatible, SearchBudget, search_antecedent

logger = logging.getLogger(__name__)

# one more than the number of toy pixel blocks, so the frontier can drain
DRAIN_BUDGET = (PIXEL_MAX + 1) ** 2 + 1

Key = Tuple[int, int]


@dataclass(frozen=True)
class Disagreement:
    block: Key
    enumeration: bool
    other: bool
    checker: str


@dataclass
class AgreementReport:
    """
    Verdicts of the branch-and-bound solver and the drained search against
    exhaustive enumeration, True meaning compatible.
    """

    ilp_checked: int = 0
    search_checked: int = 0
    disagreements: List[Disagreement] = field(default_factory=list)

    @property
    def agreed(self) -> bool:
        return not self.disagreements


def ilp_verdict(args: Tuple[Key, PipelineSpec, int]) -> bool:
    block, spec, node_budget = args
    model = build_model(np.array([block]), spec, allow_clipped=True)
    outcome = solve_feasibility(model, node_budget)
    if isinstance(outcome, BudgetExceeded):
        raise RuntimeError(f"branch-and-bound ran out of nodes on toy block {block}")
    return isinstance(outcome, Feasible)


def search_verdict(args: Tuple[Key, PipelineSpec]) -> bool:
    block, spec = args
    outcome = search_antecedent(np.array([block]), spec, SearchBudget(DRAIN_BUDGET))
    if isinstance(outcome, Compatible):
        return True
    if not outcome.queue_drained:
        raise RuntimeError(f"search stopped before draining on toy block {block}")
    return False


class ToyOracleHarness:
    """
    Checks the search and the branch-and-bound solver against exhaustive
    enumeration for a (1, 2) pipeline.

    Every block of the reachable bounding box goes through the solver.
    Draining the search costs one full sweep of the 65536 pixel pairs per
    incompatible block, so by default the search only sees
    ``search_sample`` blocks of each kind, picked with ``seed``;
    ``search_sample=None`` sends the whole box through it.
    """

    def __init__(
        self,
        spec: Optional[PipelineSpec] = None,
        *,
        search_sample: Optional[int] = 4,
        node_budget: int = 1000,
        seed: int = 0,
    ) -> None:
        self.spec = spec or PipelineSpec.toy()
        if self.spec.dims != TOY_DIMS:
            raise ValueError(f"the toy oracle needs dims {TOY_DIMS}, got {self.spec.dims}")
        self.search_sample = search_sample
        self.node_budget = node_budget
        self.seed = seed
        self._enumeration: Optional[ToyEnumeration] = None

    @property
    def enumeration(self) -> ToyEnumeration:
        if self._enumeration is None:
            self._enumeration = toy_enumerate(self.spec)
        return self._enumeration

    def search_blocks(self) -> List[Key]:
        """
        A deterministic sample of compatible and incompatible blocks, or
        the whole box when ``search_sample`` is None.
        """
        if self.search_sample is None:
            return list(self.enumeration.box())
        generator = rng.generator(self.seed, rng.SELECT)
        holes = list(self.enumeration.incompatible())
        reachable = sorted(self.enumeration.counts)
        picked: List[Key] = []
        for keys in (holes, reachable):
            count = min(self.search_sample, len(keys))
            for index in sorted(generator.choice(len(keys), size=count, replace=False)):
                picked.append(keys[index])
        return picked

    def _compare(
        self,
        report: AgreementReport,
        blocks: Sequence[Key],
        verdicts: Sequence[bool],
        checker: str,
    ) -> None:
        for block, verdict in zip(blocks, verdicts):
            expected = block in self.enumeration.counts
            if verdict != expected:
                logger.error("%s says %s for %s, enumeration says %s", checker, verdict, block, expected)
                report.disagreements.append(Disagreement(block, expected, verdict, checker))

    def _jobs(self, blocks: Optional[Sequence[Key]]) -> Tuple[List[Key], List[Key]]:
        ilp_blocks = list(blocks) if blocks is not None else list(self.enumeration.box())
        search_blocks = self.search_blocks() if self.search_sample != 0 else []
        return ilp_blocks, search_blocks

    def run(self, blocks: Optional[Sequence[Key]] = None, *, pool: Optional[BlockPool] = None) -> AgreementReport:
        """
        Compares every verdict with the enumeration; ``blocks`` restricts
        the solver to a subset of the bounding box.
        """
        pool = pool or BlockPool()
        ilp_blocks, search_blocks = self._jobs(blocks)
        report = AgreementReport(len(ilp_blocks), len(search_blocks))
        ilp = pool.map(ilp_verdict, [(block, self.spec, self.node_budget) for block in ilp_blocks])
        self._compare(report, ilp_blocks, ilp, "branch-and-bound")
        found = pool.map(search_verdict, [(block, self.spec) for block in search_blocks])
        self._compare(report, search_blocks, found, "search")
        return report

    async def run_async(self, pool: BlockPool, blocks: Optional[Sequence[Key]] = None) -> AgreementReport:
        """
        Same as ``run``, awaiting the pool from a running event loop.
        """
        ilp_blocks, search_blocks = self._jobs(blocks)
        report = AgreementReport(len(ilp_blocks), len(search_blocks))
        ilp = await pool.map_async(ilp_verdict, [(block, self.spec, self.node_budget) for block in ilp_blocks])
        self._compare(report, ilp_blocks, ilp, "branch-and-bound")
        found = await pool.map_async(search_verdict, [(block, self.spec) for block in search_blocks])
        self._compare(report, search_blocks, found, "search")
        return report

    def summary(self) -> Dict[str, int]:
        enumeration = self.enumeration
        return {
            "box": enumeration.box_size,
            "reachable": len(enumeration.counts),
            "incompatible": enumeration.box_size - len(enumeration.counts),
        }
