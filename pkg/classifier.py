"""Zero-shot classifier: argmax of compatibility over a candidate class table."""

import numpy as np

from embedding_data import ClassTable, EmbeddingVector, LabeledDataset
from errors import DataError
from projection_models import Compatibility, ProjectionModel, score_matrix


def predict_batch(
    model: ProjectionModel,
    compat: Compatibility,
    inputs: np.ndarray,
    candidates: ClassTable,
) -> list[str]:
    """
    Predicted class id for every row of `inputs`.

    Candidates are scored in lexicographic id order and np.argmax keeps the
    first maximum, so ties go to the smallest class id.
    """
    if len(candidates) == 0:
        raise DataError("Candidate class table is empty")
    if candidates.semantic_dim != model.semantic_dim:
        raise DataError(
            f"Candidate embeddings have dimension {candidates.semantic_dim}, model projects to {model.semantic_dim}"
        )
    scores = score_matrix(Compatibility(compat), model.project_batch(inputs), candidates.class_matrix())
    return [candidates.class_ids[i] for i in np.argmax(scores, axis=1)]


def classify(
    model: ProjectionModel,
    compat: Compatibility,
    acoustic: EmbeddingVector,
    candidates: ClassTable,
) -> str:
    """Most compatible candidate class for one acoustic embedding."""
    if acoustic.dim != model.acoustic_dim:
        raise DataError(f"Acoustic embedding has dimension {acoustic.dim}, model expects {model.acoustic_dim}")
    return predict_batch(model, compat, acoustic.values[np.newaxis, :], candidates)[0]


def top1_accuracy(
    model: ProjectionModel,
    compat: Compatibility,
    test_set: LabeledDataset,
    candidates: ClassTable,
) -> float:
    """
    Fraction of instances whose predicted class is the true class.

    Args:
        model (ProjectionModel): Trained projection.
        compat (Compatibility): Compatibility function.
        test_set (LabeledDataset): Labeled instances; every label must be a candidate.
        candidates (ClassTable): Class table the classifier chooses from.

    Returns:
        float: TOP-1 accuracy in [0, 1].
    """
    if len(test_set) == 0:
        raise DataError("Cannot compute TOP-1 on an empty dataset")
    missing = test_set.label_set - set(candidates.class_ids)
    if missing:
        raise DataError(f"Labels missing from the candidate table: {sorted(missing)}")
    predictions = predict_batch(model, compat, test_set.acoustic_matrix, candidates)
    correct = sum(predicted == label for predicted, label in zip(predictions, test_set.labels))
    return correct / len(test_set)
