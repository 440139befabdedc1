"""
Weighted approximate-rank pairwise (WARP) objective with analytic gradients.

For an instance n with true class y_n and scores s_c over all classes,

    l_c   = Delta(y_n, c) + s_c - s_{y_n}          (hinge argument)
    r_n   = rank of y_n (margin-violating count by default)
    loss  = beta(r_n) / r_n * sum_c max(0, l_c)   (0/0 = 0 when r_n = 0)

and the objective is the mean over instances plus lambda times the summed
squared Frobenius norms of the model matrices. Ranks are exact (every class
is enumerated). The rank weight is held constant when differentiating.
"""

from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from embedding_data import ClassTable, LabeledDataset
from errors import DataError
from projection_models import Compatibility, ProjectionModel, ForwardTrace, score_gradient, score_matrix


class RankMode(str, Enum):
    MARGIN = "margin"
    POSITION = "position"


@dataclass(frozen=True)
class RankPenalty:
    """
    Penalties alpha_i for losing position i. Default alpha_i = 1/i.

    An explicit `alphas` override must be non-increasing and non-negative;
    positions past its end get alpha = 0.
    """

    alphas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.alphas is None:
            return
        alphas = tuple(float(a) for a in self.alphas)
        if any(a < 0 for a in alphas) or any(b > a for a, b in zip(alphas, alphas[1:])):
            raise ValueError(f"Rank penalties must be non-increasing and non-negative, got {alphas}")
        object.__setattr__(self, "alphas", alphas)

    def alpha_values(self, max_rank: int) -> np.ndarray:
        if self.alphas is None:
            return 1.0 / np.arange(1, max_rank + 1, dtype=np.float64)
        values = np.zeros(max_rank)
        count = min(max_rank, len(self.alphas))
        values[:count] = self.alphas[:count]
        return values

    def beta_table(self, max_rank: int) -> np.ndarray:
        """beta(0..max_rank) as cumulative sums of alpha, beta(0) = 0."""
        return np.concatenate(([0.0], np.cumsum(self.alpha_values(max_rank))))


def ranking_error_beta(r: int, penalty: RankPenalty = RankPenalty()) -> float:
    """beta(r) = alpha_1 + ... + alpha_r, with beta(0) = 0."""
    if r < 0:
        raise ValueError(f"Rank must be non-negative, got {r}")
    return float(penalty.beta_table(r)[r])


def hinge_loss(score_y: float, score_yn: float, same_class: bool) -> float:
    """Delta + score_y - score_yn. The max(0, .) clamp belongs to the objective."""
    delta = 0.0 if same_class else 1.0
    return delta + score_y - score_yn


def margin_rank(scores: Mapping[str, float], true_class: str) -> int:
    """Number of other classes whose score comes within margin 1 of the true class."""
    if true_class not in scores:
        raise DataError(f"True class '{true_class}' missing from scores")
    true_score = scores[true_class]
    return sum(
        1 for class_id, score in scores.items()
        if class_id != true_class and hinge_loss(score, true_score, False) > 0.0
    )


class MarginTable(NamedTuple):
    margins: np.ndarray
    active: np.ndarray


def active_margins(scores: np.ndarray, labels: np.ndarray) -> MarginTable:
    """
    Hinge arguments l (N, C) and the mask of strictly positive ones.

    The true-class column is exactly 0 (Delta = 0, scores cancel) and never active.
    """
    rows = np.arange(scores.shape[0])
    true_scores = scores[rows, labels]
    margins = (1.0 + scores) - true_scores[:, np.newaxis]
    margins[rows, labels] = 0.0
    return MarginTable(margins, margins > 0.0)


def instance_ranks(scores: np.ndarray, labels: np.ndarray, table: MarginTable, mode: RankMode) -> np.ndarray:
    """Margin-violating rank, or sorted position (classes scoring strictly higher)."""
    if mode is RankMode.MARGIN:
        return table.active.sum(axis=1)
    rows = np.arange(scores.shape[0])
    return (scores > scores[rows, labels][:, np.newaxis]).sum(axis=1)


def rank_weights(ranks: np.ndarray, penalty: RankPenalty) -> np.ndarray:
    """beta(r) / r per instance with the 0/0 = 0 convention."""
    betas = penalty.beta_table(int(ranks.max(initial=0)))[ranks]
    return np.divide(betas, ranks, out=np.zeros_like(betas), where=ranks > 0)


class WarpTerms(NamedTuple):
    objective: float
    data_term: float
    l2_penalty: float
    ranks: np.ndarray
    losses: np.ndarray
    gradients: dict[str, np.ndarray] | None


def warp_terms(
    model: ProjectionModel,
    inputs: np.ndarray,
    labels: np.ndarray,
    semantic: np.ndarray,
    compat: Compatibility,
    penalty: RankPenalty = RankPenalty(),
    l2_lambda: float = 0.0,
    rank_mode: RankMode = RankMode.MARGIN,
    with_gradient: bool = False,
) -> WarpTerms:
    """
    Array-level objective (and optionally gradient) for a batch.

    Args:
        model (ProjectionModel): Projection model.
        inputs (np.ndarray): (N, d_a) acoustic embeddings.
        labels (np.ndarray): (N,) row indices into `semantic` of the true classes.
        semantic (np.ndarray): (C, d_s) class semantic embeddings.
        compat (Compatibility): Compatibility function.
        penalty (RankPenalty): Rank penalty defining beta.
        l2_lambda (float): L2 coefficient shared by all parameter matrices.
        rank_mode (RankMode): Margin-violating rank or sorted-position rank.
        with_gradient (bool): Also return parameter gradients.

    Returns:
        WarpTerms: The data term is normalized by the batch size N.
    """
    if inputs.shape[0] == 0:
        raise DataError("WARP objective needs at least one instance")
    if inputs.shape[1] != model.acoustic_dim or semantic.shape[1] != model.semantic_dim:
        raise DataError(
            f"Model maps {model.acoustic_dim} -> {model.semantic_dim}, data is {inputs.shape[1]} -> {semantic.shape[1]}"
        )
    n = inputs.shape[0]
    trace: ForwardTrace = model.forward(inputs)
    scores = score_matrix(compat, trace.output, semantic)
    table = active_margins(scores, labels)
    ranks = instance_ranks(scores, labels, table, rank_mode)
    weights = rank_weights(ranks, penalty)
    losses = weights * np.sum(np.maximum(table.margins, 0.0), axis=1)

    data_term = float(np.sum(losses)) / n
    squared_norm = model.squared_norm()
    l2_penalty = l2_lambda * squared_norm
    objective = data_term + l2_penalty

    gradients = None
    if with_gradient:
        score_grad = table.active * weights[:, np.newaxis]
        score_grad[np.arange(n), labels] = -weights * table.active.sum(axis=1)
        score_grad /= n
        output_grad = score_gradient(compat, trace.output, semantic, scores, score_grad)
        gradients = model.backward(trace, output_grad)
        if l2_lambda:
            for name, matrix in model.parameters().items():
                gradients[name] = gradients[name] + 2.0 * l2_lambda * matrix
    return WarpTerms(objective, data_term, l2_penalty, ranks, losses, gradients)


class InstanceLoss(NamedTuple):
    instance_id: str
    rank: int
    loss: float


@dataclass(frozen=True)
class LossReport:
    objective_value: float
    per_instance: tuple[InstanceLoss, ...]
    l2_penalty: float

    @property
    def data_term(self) -> float:
        return self.objective_value - self.l2_penalty


def _arrays(dataset: LabeledDataset, classes: ClassTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if dataset.acoustic_dim is None or len(dataset) == 0:
        raise DataError("Dataset is empty")
    return dataset.acoustic_matrix, classes.index_of(dataset.labels), classes.class_matrix()


def warp_objective(
    dataset: LabeledDataset,
    classes: ClassTable,
    model: ProjectionModel,
    compat: Compatibility = Compatibility.DOT,
    penalty: RankPenalty = RankPenalty(),
    l2_lambda: float = 0.0,
    rank_mode: RankMode = RankMode.MARGIN,
) -> LossReport:
    """Full WARP objective over a dataset, with per-instance ranks and losses."""
    inputs, labels, semantic = _arrays(dataset, classes)
    terms = warp_terms(model, inputs, labels, semantic, Compatibility(compat), penalty, l2_lambda, RankMode(rank_mode))
    per_instance = tuple(
        InstanceLoss(instance_id, int(rank), float(loss))
        for instance_id, rank, loss in zip(dataset.instance_ids, terms.ranks, terms.losses)
    )
    return LossReport(terms.objective, per_instance, terms.l2_penalty)


def warp_gradient(
    dataset: LabeledDataset,
    classes: ClassTable,
    model: ProjectionModel,
    compat: Compatibility = Compatibility.DOT,
    penalty: RankPenalty = RankPenalty(),
    l2_lambda: float = 0.0,
    rank_mode: RankMode = RankMode.MARGIN,
) -> dict[str, np.ndarray]:
    """Subgradient of `warp_objective` for every parameter matrix, keyed by name."""
    inputs, labels, semantic = _arrays(dataset, classes)
    terms = warp_terms(
        model, inputs, labels, semantic, Compatibility(compat), penalty, l2_lambda, RankMode(rank_mode),
        with_gradient=True,
    )
    return terms.gradients

