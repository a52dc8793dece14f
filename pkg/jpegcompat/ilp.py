"""
Integer feasibility model of block compatibility.

A quantized block c has an antecedent iff some integer compression error
k gives a DCT rounding error u = A(k - e)/Q inside the closed box
|u| <= 1/2, where A is the row-major DCT matrix and e the spatial rounding
error of the decompression of c. The antecedent is then x'' - k, with x''
the rounded decompression, so k is also confined to [x'' - 255, x''].
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import linprog

from .codec import (
    PIXEL_MAX,
    DctVariant,
    DimensionError,
    PipelineSpec,
    compress_stack,
    dct_matrix,
    decompress_stack,
    round_array,
)
from .typing import FloatArray, IntArray

logger = logging.getLogger(__name__)

BOUND = 0.5
SLACK_TOLERANCE = 1e-9
# Relaxations and propagation use a slightly wider box, so float error
# can only keep a node alive, never prune a true solution.
PRUNE_MARGIN = 1e-6
INTEGRAL_TOLERANCE = 1e-6
DEFAULT_NODES = 1000
ENUMERATION_LIMIT = 4096
PROPAGATION_ROUNDS = 8
# unit-step dives: one long walk from x'', a short one from each LP point
ROOT_DIVE_STEPS = 256
NODE_DIVE_STEPS = 32


class ModelError(ValueError):
    pass


class UnsupportedTransform(ModelError):
    pass


class ClippedTarget(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class FeasibilityModel:
    """
    Immutable once built; concurrent solves on distinct models are safe.
    """

    target: IntArray
    e: FloatArray
    dct_matrix: FloatArray
    quant: FloatArray
    rounded: IntArray
    lower_k: IntArray
    upper_k: IntArray
    spec: PipelineSpec
    bound: float = BOUND

    @property
    def n_vars(self) -> int:
        return len(self.e)

    @property
    def center(self) -> FloatArray:
        return self.dct_matrix @ self.e

    def row_bounds(self, margin: float = 0.0) -> Tuple[FloatArray, FloatArray]:
        """
        Bounds on A k for every row, two-sided.
        """
        half = (self.bound + margin) * self.quant
        return self.center - half, self.center + half

    def constraint_values(self, k: np.ndarray) -> FloatArray:
        """
        The DCT rounding error u = A(k - e)/Q of one or more k vectors.
        """
        k = np.asarray(k, dtype=np.float64)
        return ((k - self.e) @ self.dct_matrix.T) / self.quant

    def slack(self, k: np.ndarray) -> float:
        return float(self.bound - np.abs(self.constraint_values(k)).max())

    def exact_slack(self, k: np.ndarray) -> Fraction:
        """
        Slack evaluated exactly on the rationals the doubles stand for.
        """
        worst = Fraction(0)
        errors = [Fraction(int(value)) - Fraction(float(shift)) for value, shift in zip(k, self.e)]
        for row, step in zip(self.dct_matrix, self.quant):
            total = sum((Fraction(float(a)) * error for a, error in zip(row, errors)), Fraction(0))
            worst = max(worst, abs(total) / Fraction(float(step)))
        return Fraction(self.bound) - worst

    def antecedent(self, k: np.ndarray) -> IntArray:
        return (self.rounded - np.asarray(k, dtype=np.int64)).reshape(self.spec.dims)


def build_model(target: object, spec: PipelineSpec, *, allow_clipped: bool = False) -> FeasibilityModel:
    """
    Builds the feasibility model of ``target`` under ``spec``.

    Clipped targets are rejected unless ``allow_clipped`` is set, in which
    case the unclipped rounded decompression is used as x''.
    """
    if spec.dct is not DctVariant.NAIVE:
        raise UnsupportedTransform("the feasibility model needs the linear, invertible naive DCT")
    c = np.asarray(target, dtype=np.int64)
    if c.shape != spec.dims:
        raise DimensionError(f"expected a block of dims {spec.dims}, got shape {c.shape}")
    _, y, clipped = decompress_stack(c[None], spec)
    if clipped[0] and not allow_clipped:
        raise ClippedTarget("decompression of the target is clipped; its spatial rounding error is undefined")

    matrix = dct_matrix(spec.dims)
    if np.abs(matrix @ matrix.T - np.eye(len(matrix))).max() > 1e-9:
        raise ModelError("DCT matrix is not orthonormal")

    y = y[0].ravel()
    rounded = round_array(y)
    e = rounded - y
    quant = spec.quant.steps.ravel().astype(np.float64)

    # k - e = A^T (Q u), so |k_i - e_i| <= 1/2 sum_j |A_ji| Q_j
    reach = BOUND * (np.abs(matrix).T @ quant)
    lower = np.maximum(np.ceil(e - reach - SLACK_TOLERANCE), rounded - PIXEL_MAX)
    upper = np.minimum(np.floor(e + reach + SLACK_TOLERANCE), rounded)
    return FeasibilityModel(
        target=c,
        e=e,
        dct_matrix=matrix,
        quant=quant,
        rounded=rounded,
        lower_k=lower.astype(np.int64),
        upper_k=upper.astype(np.int64),
        spec=spec,
    )


@dataclass(frozen=True, eq=False)
class Feasible:
    k: IntArray
    antecedent: IntArray
    nodes_explored: int = 0


@dataclass(frozen=True)
class Infeasible:
    nodes_explored: int


@dataclass(frozen=True)
class BudgetExceeded:
    """
    ``best_bound`` is the smallest max|u| over the integral points tried,
    infinity if none was tried; a value at or below 1/2 would be a solution.
    """

    nodes_explored: int
    best_bound: float


FeasibilityOutcome = Union[Feasible, Infeasible, BudgetExceeded]


@dataclass
class _Node:
    lower: FloatArray
    upper: FloatArray
    depth: int = 0


class _BranchAndBound:
    def __init__(self, model: FeasibilityModel, enumeration_limit: int = ENUMERATION_LIMIT) -> None:
        self.model = model
        self.enumeration_limit = enumeration_limit
        self.best_bound = math.inf
        matrix = model.dct_matrix
        self._matrix = np.where(np.abs(matrix) > 1e-15, matrix, 0.0)
        self._row_lower, self._row_upper = self.model.row_bounds(PRUNE_MARGIN)
        n = model.n_vars
        self._moves = np.concatenate([np.eye(n, dtype=np.int64), -np.eye(n, dtype=np.int64)])

    def certify(self, k: IntArray) -> bool:
        """
        Recompression plus slack checks of an integral point.
        """
        model = self.model
        if (k < model.lower_k).any() or (k > model.upper_k).any():
            return False
        bound = float(np.abs(model.constraint_values(k)).max())
        self.best_bound = min(self.best_bound, bound)
        if model.bound - bound < -SLACK_TOLERANCE:
            return False
        antecedent = model.antecedent(k)
        if not (compress_stack(antecedent[None], model.spec)[0] == model.target).all():
            return False
        return model.exact_slack(k) >= -Fraction(SLACK_TOLERANCE)

    def propagate(self, lower: FloatArray, upper: FloatArray) -> Optional[Tuple[FloatArray, FloatArray]]:
        """
        Interval bound tightening on the two-sided rows; None if a row
        cannot be satisfied inside the box.
        """
        if (lower > upper).any():
            return None
        a = self._matrix
        positive = a > 0
        negative = a < 0
        for _ in range(PROPAGATION_ROUNDS):
            min_terms = np.where(positive, a * lower, a * upper)
            max_terms = np.where(positive, a * upper, a * lower)
            min_activity = min_terms.sum(axis=1)
            max_activity = max_terms.sum(axis=1)
            if (min_activity > self._row_upper).any() or (max_activity < self._row_lower).any():
                return None
            room_up = self._row_upper[:, None] - (min_activity[:, None] - min_terms)
            room_down = self._row_lower[:, None] - (max_activity[:, None] - max_terms)
            with np.errstate(divide="ignore", invalid="ignore"):
                upper_candidates = np.where(positive, room_up / a, np.where(negative, room_down / a, np.inf))
                lower_candidates = np.where(positive, room_down / a, np.where(negative, room_up / a, -np.inf))
            new_upper = np.minimum(upper, np.floor(upper_candidates.min(axis=0) + SLACK_TOLERANCE))
            new_lower = np.maximum(lower, np.ceil(lower_candidates.max(axis=0) - SLACK_TOLERANCE))
            if (new_lower > new_upper).any():
                return None
            if (new_lower == lower).all() and (new_upper == upper).all():
                break
            lower, upper = new_lower, new_upper
        return lower, upper

    def enumerate_box(self, lower: FloatArray, upper: FloatArray) -> Optional[IntArray]:
        """
        Checks every integral point of a small box, in lexicographic order.
        """
        axes = [np.arange(int(lo), int(hi) + 1) for lo, hi in zip(lower, upper)]
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        values = self.model.constraint_values(points)
        inside = (np.abs(values) <= self.model.bound + PRUNE_MARGIN).all(axis=1)
        for k in points[inside]:
            if self.certify(k):
                return k.astype(np.int64)
        return None

    def dive(self, start: np.ndarray, lower: np.ndarray, upper: np.ndarray, steps: int) -> Optional[IntArray]:
        """
        Greedy descent from ``start`` by unit moves inside [lower, upper].

        Every neighbour that lies inside the relaxed box is certified; the
        walk moves to the neighbour with the smallest total excess over the
        1/2 box (ties on max|u|) and stops when no move improves on it.
        """
        bound = self.model.bound
        k = np.clip(np.rint(start), lower, upper).astype(np.int64)
        values = np.abs(self.model.constraint_values(k))
        if values.max() <= bound + PRUNE_MARGIN and self.certify(k):
            return k
        score = (float(np.maximum(values - bound, 0.0).sum()), float(values.max()))
        for _ in range(steps):
            neighbours = k + self._moves
            neighbours = neighbours[((neighbours >= lower) & (neighbours <= upper)).all(axis=1)]
            if not len(neighbours):
                return None
            values = np.abs(self.model.constraint_values(neighbours))
            worst = values.max(axis=1)
            excess = np.maximum(values - bound, 0.0).sum(axis=1)
            order = np.argsort(worst, kind="stable")
            for index in order[worst[order] <= bound + PRUNE_MARGIN]:
                if self.certify(neighbours[index]):
                    return neighbours[index].astype(np.int64)
            best = int(np.lexsort((worst, excess))[0])
            candidate = (float(excess[best]), float(worst[best]))
            if candidate >= score:
                return None
            score = candidate
            k = neighbours[best]
        return None

    def relax(self, lower: FloatArray, upper: FloatArray) -> Tuple[int, Optional[FloatArray]]:
        a = self.model.dct_matrix
        result = linprog(
            np.zeros(self.model.n_vars),
            A_ub=np.vstack([a, -a]),
            b_ub=np.concatenate([self._row_upper, -self._row_lower]),
            bounds=list(zip(lower, upper)),
            method="highs",
        )
        return result.status, (result.x if result.status == 0 else None)

    def run(self, node_budget: int) -> FeasibilityOutcome:
        model = self.model
        zero = np.zeros(model.n_vars, dtype=np.int64)
        if self.certify(zero):
            return Feasible(zero, model.antecedent(zero), 0)
        k = self.dive(zero, model.lower_k, model.upper_k, ROOT_DIVE_STEPS)
        if k is not None:
            return Feasible(k, model.antecedent(k), 0)

        stack: List[_Node] = [_Node(model.lower_k.astype(np.float64), model.upper_k.astype(np.float64))]
        nodes = 0
        while stack:
            if nodes >= node_budget:
                logger.debug("Node budget of %d spent, best bound %.4f", node_budget, self.best_bound)
                return BudgetExceeded(nodes, self.best_bound)
            node = stack.pop()
            nodes += 1
            tightened = self.propagate(node.lower, node.upper)
            if tightened is None:
                continue
            lower, upper = tightened
            widths = upper - lower + 1
            if float(np.prod(widths)) <= self.enumeration_limit:
                k = self.enumerate_box(lower, upper)
                if k is not None:
                    return Feasible(k, model.antecedent(k), nodes)
                continue

            status, x = self.relax(lower, upper)
            if status == 2:
                continue
            if x is not None:
                k = self.dive(x, lower, upper, NODE_DIVE_STEPS)
                if k is not None:
                    return Feasible(k, model.antecedent(k), nodes)
                distance = np.abs(x - np.floor(x) - 0.5)
                branch = int(np.argmin(distance))
                integral = distance[branch] > 0.5 - INTEGRAL_TOLERANCE
            if x is None or integral:
                # relaxation gave no fractional guidance; halve the widest range
                branch = int(np.argmax(widths))
                split = math.floor((lower[branch] + upper[branch]) / 2)
            else:
                split = min(max(math.floor(x[branch]), int(lower[branch])), int(upper[branch]) - 1)
            down_upper = upper.copy()
            down_upper[branch] = split
            up_lower = lower.copy()
            up_lower[branch] = split + 1
            stack.append(_Node(up_lower, upper.copy(), node.depth + 1))
            stack.append(_Node(lower.copy(), down_upper, node.depth + 1))
        return Infeasible(nodes)


def solve_feasibility(
    model: FeasibilityModel,
    node_budget: int = DEFAULT_NODES,
    *,
    enumeration_limit: int = ENUMERATION_LIMIT,
) -> FeasibilityOutcome:
    """
    Depth-first branch-and-bound over integer k.

    Each node is tightened by interval propagation; boxes with at most
    ``enumeration_limit`` points are enumerated outright, larger ones are
    relaxed to an LP and split on the most fractional variable. Unit-step
    dives from the rounded decompression and from each LP point look for
    easy antecedents first. Feasible points are only returned after
    recompression and an exact slack check.
    """
    if node_budget < 1:
        raise ValueError(f"node_budget must be at least 1, got {node_budget}")
    return _BranchAndBound(model, enumeration_limit).run(node_budget)


def _format_number(value: float) -> str:
    return "%.17g" % value


def _linear_expression(row: FloatArray) -> List[str]:
    terms = []
    for index, coefficient in enumerate(row):
        if coefficient == 0.0:
            continue
        sign = "-" if coefficient < 0 else "+"
        terms.append(f"{sign} {_format_number(abs(coefficient))} k_{index}")
    return terms


def _wrap(prefix: str, terms: List[str], suffix: str, per_line: int = 4) -> List[str]:
    lines = []
    for start in range(0, len(terms), per_line):
        head = prefix if start == 0 else " " * len(prefix)
        lines.append(head + " ".join(terms[start:start + per_line]))
    lines[-1] += suffix
    return lines


def export_model(model: FeasibilityModel, format: str = "lp") -> bytes:
    """
    Writes the model in CPLEX LP text form: a zero objective, rows lo_i
    and hi_i bounding A k, the variable bounds and integrality.
    """
    if format != "lp":
        raise ValueError(f"unknown export format {format!r}")
    lower, upper = model.row_bounds()
    lines = [
        "\\* jpegcompat block feasibility model *\\",
        f"\\* pipeline {model.spec.pipeline_id} *\\",
        "\\* target " + " ".join(str(int(v)) for v in model.target.ravel()) + " *\\",
        "Minimize",
        " obj: 0 k_0",
        "Subject To",
    ]
    for index, row in enumerate(model.dct_matrix):
        terms = _linear_expression(row)
        lines += _wrap(f" lo_{index}: ", terms, f" >= {_format_number(lower[index])}")
        lines += _wrap(f" hi_{index}: ", terms, f" <= {_format_number(upper[index])}")
    lines.append("Bounds")
    for index, (lo, hi) in enumerate(zip(model.lower_k, model.upper_k)):
        lines.append(f" {int(lo)} <= k_{index} <= {int(hi)}")
    lines.append("General")
    names = [f"k_{index}" for index in range(model.n_vars)]
    for start in range(0, len(names), 8):
        lines.append(" " + " ".join(names[start:start + 8]))
    lines.append("End")
    return ("\n".join(lines) + "\n").encode("ascii")
