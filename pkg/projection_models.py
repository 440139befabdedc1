"""
Acoustic-to-semantic projections and compatibility functions.

Matrices are float64, row-major, and applied to row batches: for a batch X
of acoustic embeddings (N, d_a) the projection is

    bilinear  P = X W                          (row form of W' theta)
    factored  P = (X U) V                      (row form of V' U' theta)
    fc2       P = t(X U) V
    fc3       P = t(t(X U) Q') V

No variant has bias parameters.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import ClassVar, NamedTuple

import numpy as np
from scipy.special import expit

from embedding_data import EmbeddingVector
from errors import DataError, EmbeddingFormatError, NumericError


class ModelKind(str, Enum):
    BILINEAR = "bilinear"
    FACTORED = "factored"
    FC2 = "fc2"
    FC3 = "fc3"


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


class Compatibility(str, Enum):
    """Compatibility function F. Every kind is maximized (Euclidean distance is negated)."""

    DOT = "dot"
    COSINE = "cosine"
    NEG_EUCLIDEAN = "negative-euclidean"


def _activate(kind: Activation, values: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(values, 0.0)
    if kind is Activation.SIGMOID:
        return expit(values)
    return np.tanh(values)


def _activation_derivative(kind: Activation, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    # relu uses subgradient 0 at the kink
    if kind is Activation.RELU:
        return (pre > 0.0).astype(np.float64)
    if kind is Activation.SIGMOID:
        return post * (1.0 - post)
    return 1.0 - post * post


def activation_apply(kind: Activation | str, vector: EmbeddingVector) -> EmbeddingVector:
    """Apply relu, sigmoid or tanh elementwise."""
    return EmbeddingVector(_activate(Activation(kind), vector.values))


class ForwardTrace(NamedTuple):
    """Intermediate values of a batched forward pass, kept for backpropagation."""

    inputs: np.ndarray
    pre_activations: tuple[np.ndarray, ...]
    hidden: tuple[np.ndarray, ...]
    output: np.ndarray


def _frozen(matrix) -> np.ndarray:
    array = np.array(matrix, dtype=np.float64)
    if array.ndim != 2:
        raise DataError(f"Model parameters must be matrices, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NumericError("Model parameters contain NaN or infinite entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ProjectionModel(ABC):
    """Base class of the projection family T. Instances are immutable."""

    kind: ClassVar[ModelKind]

    def __post_init__(self):
        for f in fields(self):
            if f.type is np.ndarray:
                object.__setattr__(self, f.name, _frozen(getattr(self, f.name)))
        self._check_shapes()

    @abstractmethod
    def _check_shapes(self) -> None: ...

    @abstractmethod
    def forward(self, inputs: np.ndarray) -> ForwardTrace:
        """Project a batch of acoustic embeddings, keeping intermediates."""

    @abstractmethod
    def backward(self, trace: ForwardTrace, output_grad: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every parameter matrix given dLoss/dOutput for the batch."""

    @property
    def activation(self) -> Activation | None:
        return None

    def parameters(self) -> dict[str, np.ndarray]:
        """Parameter matrices by name, in checkpoint order."""
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), np.ndarray)}

    @property
    def acoustic_dim(self) -> int:
        return next(iter(self.parameters().values())).shape[0]

    @property
    def semantic_dim(self) -> int:
        return list(self.parameters().values())[-1].shape[1]

    @property
    def rank(self) -> int:
        return next(iter(self.parameters().values())).shape[1]

    def project_batch(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.acoustic_dim:
            raise DataError(f"Expected acoustic embeddings of dimension {self.acoustic_dim}, got shape {inputs.shape}")
        return self.forward(inputs).output

    def with_parameters(self, updates: dict[str, np.ndarray]) -> "ProjectionModel":
        return replace(self, **updates)

    def squared_norm(self) -> float:
        """Sum of squared Frobenius norms of all parameter matrices."""
        return float(sum(np.sum(matrix * matrix) for matrix in self.parameters().values()))

    def __eq__(self, other) -> bool:
        if type(self) is not type(other) or self.activation != other.activation:
            return False
        mine, theirs = self.parameters(), other.parameters()
        return mine.keys() == theirs.keys() and all(np.array_equal(mine[k], theirs[k]) for k in mine)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{name}={matrix.shape}" for name, matrix in self.parameters().items())
        extra = f", activation={self.activation.value}" if self.activation else ""
        return f"{type(self).__name__}({shapes}{extra})"


@dataclass(frozen=True, eq=False)
class Bilinear(ProjectionModel):
    W: np.ndarray
    kind: ClassVar[ModelKind] = ModelKind.BILINEAR

    def _check_shapes(self) -> None:
        pass

    @property
    def rank(self) -> int:
        return min(self.W.shape)

    def forward(self, inputs):
        return ForwardTrace(inputs, (), (), inputs @ self.W)

    def backward(self, trace, output_grad):
        return {"W": trace.inputs.T @ output_grad}


def _check_rank(rank: int, acoustic_dim: int, semantic_dim: int) -> None:
    if not 1 <= rank <= min(acoustic_dim, semantic_dim):
        raise DataError(f"Rank {rank} must lie in [1, min(d_a, d_s)] = [1, {min(acoustic_dim, semantic_dim)}]")


@dataclass(frozen=True, eq=False)
class FactoredLinear(ProjectionModel):
    U: np.ndarray
    V: np.ndarray
    kind: ClassVar[ModelKind] = ModelKind.FACTORED

    def _check_shapes(self) -> None:
        if self.U.shape[1] != self.V.shape[0]:
            raise DataError(f"Inner dimensions differ: U {self.U.shape}, V {self.V.shape}")
        _check_rank(self.U.shape[1], self.U.shape[0], self.V.shape[1])

    def forward(self, inputs):
        hidden = inputs @ self.U
        return ForwardTrace(inputs, (hidden,), (hidden,), hidden @ self.V)

    def backward(self, trace, output_grad):
        hidden = trace.hidden[0]
        return {"U": trace.inputs.T @ (output_grad @ self.V.T), "V": hidden.T @ output_grad}


@dataclass(frozen=True, eq=False)
class FC2(ProjectionModel):
    U: np.ndarray
    V: np.ndarray
    nonlinearity: Activation = Activation.TANH
    kind: ClassVar[ModelKind] = ModelKind.FC2

    def _check_shapes(self) -> None:
        object.__setattr__(self, "nonlinearity", Activation(self.nonlinearity))
        if self.U.shape[1] != self.V.shape[0]:
            raise DataError(f"Inner dimensions differ: U {self.U.shape}, V {self.V.shape}")
        _check_rank(self.U.shape[1], self.U.shape[0], self.V.shape[1])

    @property
    def activation(self):
        return self.nonlinearity

    def forward(self, inputs):
        pre = inputs @ self.U
        hidden = _activate(self.nonlinearity, pre)
        return ForwardTrace(inputs, (pre,), (hidden,), hidden @ self.V)

    def backward(self, trace, output_grad):
        pre, hidden = trace.pre_activations[0], trace.hidden[0]
        pre_grad = (output_grad @ self.V.T) * _activation_derivative(self.nonlinearity, pre, hidden)
        return {"U": trace.inputs.T @ pre_grad, "V": hidden.T @ output_grad}


@dataclass(frozen=True, eq=False)
class FC3(ProjectionModel):
    U: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    nonlinearity: Activation = Activation.TANH
    kind: ClassVar[ModelKind] = ModelKind.FC3

    def _check_shapes(self) -> None:
        object.__setattr__(self, "nonlinearity", Activation(self.nonlinearity))
        r = self.U.shape[1]
        if self.Q.shape != (r, r) or self.V.shape[0] != r:
            raise DataError(f"Inconsistent shapes: U {self.U.shape}, Q {self.Q.shape}, V {self.V.shape}")
        _check_rank(r, self.U.shape[0], self.V.shape[1])

    @property
    def activation(self):
        return self.nonlinearity

    def forward(self, inputs):
        pre1 = inputs @ self.U
        hidden1 = _activate(self.nonlinearity, pre1)
        pre2 = hidden1 @ self.Q.T
        hidden2 = _activate(self.nonlinearity, pre2)
        return ForwardTrace(inputs, (pre1, pre2), (hidden1, hidden2), hidden2 @ self.V)

    def backward(self, trace, output_grad):
        pre1, pre2 = trace.pre_activations
        hidden1, hidden2 = trace.hidden
        pre2_grad = (output_grad @ self.V.T) * _activation_derivative(self.nonlinearity, pre2, hidden2)
        pre1_grad = (pre2_grad @ self.Q) * _activation_derivative(self.nonlinearity, pre1, hidden1)
        return {
            "U": trace.inputs.T @ pre1_grad,
            "Q": pre2_grad.T @ hidden1,
            "V": hidden2.T @ output_grad,
        }


MODEL_CLASSES: dict[ModelKind, type[ProjectionModel]] = {
    ModelKind.BILINEAR: Bilinear,
    ModelKind.FACTORED: FactoredLinear,
    ModelKind.FC2: FC2,
    ModelKind.FC3: FC3,
}


def project(model: ProjectionModel, acoustic: EmbeddingVector) -> EmbeddingVector:
    """T(theta(x)) for a single acoustic embedding."""
    if acoustic.dim != model.acoustic_dim:
        raise DataError(f"Acoustic embedding has dimension {acoustic.dim}, model expects {model.acoustic_dim}")
    return EmbeddingVector(model.project_batch(acoustic.values[np.newaxis, :])[0])


def _norms(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise NumericError(f"Cosine compatibility is undefined for a zero-norm {what}")
    return norms


def score_matrix(kind: Compatibility, projected: np.ndarray, semantic: np.ndarray) -> np.ndarray:
    """
    Compatibility scores between every projected row and every class row.

    Args:
        kind (Compatibility): Compatibility function.
        projected (np.ndarray): (N, d_s) projected acoustic embeddings.
        semantic (np.ndarray): (C, d_s) class semantic embeddings.

    Returns:
        np.ndarray: (N, C) score matrix; larger means more compatible for every kind.
    """
    if projected.shape[1] != semantic.shape[1]:
        raise DataError(f"Projected dimension {projected.shape[1]} != semantic dimension {semantic.shape[1]}")
    if kind is Compatibility.DOT:
        return projected @ semantic.T
    if kind is Compatibility.COSINE:
        denominator = np.outer(_norms(projected, "projected embedding"), _norms(semantic, "semantic embedding"))
        return (projected @ semantic.T) / denominator
    return -np.linalg.norm(projected[:, np.newaxis, :] - semantic[np.newaxis, :, :], axis=2)


def score_gradient(
    kind: Compatibility,
    projected: np.ndarray,
    semantic: np.ndarray,
    scores: np.ndarray,
    score_grad: np.ndarray,
) -> np.ndarray:
    """
    Chain rule from dLoss/dScores (N, C) to dLoss/dProjected (N, d_s).

    The negated Euclidean distance uses subgradient 0 where a projection
    coincides with a class embedding.
    """
    if kind is Compatibility.DOT:
        return score_grad @ semantic
    if kind is Compatibility.COSINE:
        projected_norms = _norms(projected, "projected embedding")
        semantic_norms = _norms(semantic, "semantic embedding")
        weighted = score_grad / np.outer(projected_norms, semantic_norms)
        radial = np.sum(score_grad * scores, axis=1) / (projected_norms * projected_norms)
        return weighted @ semantic - radial[:, np.newaxis] * projected
    distances = -scores
    inverse = np.divide(score_grad, distances, out=np.zeros_like(score_grad), where=distances > 0.0)
    return inverse @ semantic - np.sum(inverse, axis=1)[:, np.newaxis] * projected


def compatibility_score(kind: Compatibility | str, a: EmbeddingVector, b: EmbeddingVector) -> float:
    """F(a, b) for one pair of vectors."""
    if a.dim != b.dim:
        raise DataError(f"Cannot compare vectors of dimension {a.dim} and {b.dim}")
    return float(score_matrix(Compatibility(kind), a.values[np.newaxis, :], b.values[np.newaxis, :])[0, 0])


def init_model(
    kind: ModelKind | str,
    acoustic_dim: int,
    semantic_dim: int,
    rank: int | None = None,
    activation: Activation | str | None = None,
    seed: int = 0,
) -> ProjectionModel:
    """
    Seeded random model. Each matrix entry is uniform in +-1/sqrt(fan_in),
    fan_in being the matrix's input (row) dimension. Matrices are drawn in
    checkpoint order (W, or U, Q, V) from one numpy default generator.

    Args:
        kind (ModelKind | str): Model variant.
        acoustic_dim (int): d_a.
        semantic_dim (int): d_s.
        rank (int | None): Inner dimension r; defaults to min(d_a, d_s). Ignored for bilinear.
        activation (Activation | str | None): Nonlinearity for fc2/fc3; defaults to tanh.
        seed (int): Generator seed.

    Returns:
        ProjectionModel: A new model.
    """
    kind = ModelKind(kind)
    if acoustic_dim < 1 or semantic_dim < 1:
        raise DataError(f"Dimensions must be positive, got d_a={acoustic_dim}, d_s={semantic_dim}")
    rank = min(acoustic_dim, semantic_dim) if rank is None else rank
    _check_rank(rank, acoustic_dim, semantic_dim)
    rng = np.random.default_rng(seed)

    def draw(rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(rows)
        return rng.uniform(-bound, bound, size=(rows, cols))

    if kind is ModelKind.BILINEAR:
        return Bilinear(W=draw(acoustic_dim, semantic_dim))
    if kind is ModelKind.FACTORED:
        return FactoredLinear(U=draw(acoustic_dim, rank), V=draw(rank, semantic_dim))
    nonlinearity = Activation(activation or Activation.TANH)
    if kind is ModelKind.FC2:
        return FC2(U=draw(acoustic_dim, rank), V=draw(rank, semantic_dim), nonlinearity=nonlinearity)
    U = draw(acoustic_dim, rank)
    Q = draw(rank, rank)
    return FC3(U=U, Q=Q, V=draw(rank, semantic_dim), nonlinearity=nonlinearity)


class Checkpoint(NamedTuple):
    model: ProjectionModel
    seed: int | None


def format_checkpoint(model: ProjectionModel, seed: int | None = None) -> str:
    lines = [
        "# zero-shot projection checkpoint",
        f"kind\t{model.kind.value}",
        f"acoustic_dim\t{model.acoustic_dim}",
        f"semantic_dim\t{model.semantic_dim}",
        f"rank\t{model.rank}",
        f"activation\t{model.activation.value if model.activation else 'none'}",
        f"seed\t{'none' if seed is None else seed}",
    ]
    for name, matrix in model.parameters().items():
        lines.append(f"matrix\t{name}\t{matrix.shape[0]}\t{matrix.shape[1]}")
        lines.extend(" ".join(repr(float(value)) for value in row) for row in matrix)
    return "\n".join(lines) + "\n"


def save_checkpoint(model: ProjectionModel, path: Path | str, seed: int | None = None) -> Path:
    """Write header (kind, dims, rank, activation, seed) then each matrix row-major, one row per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_checkpoint(model, seed), encoding="utf-8")
    logging.info(f"Saved {model!r} checkpoint to {path}")
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint not found: {path}")
    lines = [(n, line) for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1)
             if line.strip() and not line.startswith("#")]
    header: dict[str, str] = {}
    matrices: dict[str, np.ndarray] = {}
    position = 0
    try:
        while position < len(lines):
            line_number, line = lines[position]
            parts = line.split("\t")
            if parts[0] == "matrix":
                name, rows, cols = parts[1], int(parts[2]), int(parts[3])
                block = lines[position + 1:position + 1 + rows]
                if len(block) != rows:
                    raise EmbeddingFormatError(f"matrix {name} is truncated", path, line_number)
                values = [[float(token) for token in row.split()] for _, row in block]
                if any(len(row) != cols for row in values):
                    raise EmbeddingFormatError(f"matrix {name} rows must have {cols} values", path, line_number)
                matrices[name] = np.array(values, dtype=np.float64).reshape(rows, cols)
                position += 1 + rows
            else:
                if len(parts) != 2:
                    raise EmbeddingFormatError("expected '<key>\\t<value>' header line", path, line_number)
                header[parts[0]] = parts[1]
                position += 1
        kind = ModelKind(header["kind"])
        seed = None if header.get("seed", "none") == "none" else int(header["seed"])
        expected_dims = (int(header["acoustic_dim"]), int(header["semantic_dim"]))
        model_class = MODEL_CLASSES[kind]
        if kind in (ModelKind.FC2, ModelKind.FC3):
            model = model_class(**matrices, nonlinearity=Activation(header["activation"]))
        else:
            model = model_class(**matrices)
    except (ValueError, KeyError, IndexError, TypeError) as e:
        if isinstance(e, EmbeddingFormatError):
            raise
        raise EmbeddingFormatError(f"malformed checkpoint ({e})", path) from None
    if (model.acoustic_dim, model.semantic_dim) != expected_dims:
        raise EmbeddingFormatError("header dimensions do not match the stored matrices", path)
    return Checkpoint(model, seed)
