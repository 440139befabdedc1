import numpy as np
import pytest

from embedding_data import ClassTable, EmbeddingVector, LabeledDataset, LabeledInstance
from synthetic_task import SynthSpec, generate_synthetic_task


def make_dataset(inputs, labels, prefix="x"):
    """LabeledDataset from an (N, d) array and N class ids."""
    inputs = np.asarray(inputs, dtype=np.float64)
    items = tuple(
        LabeledInstance(f"{prefix}{i:03d}", EmbeddingVector(row), label)
        for i, (row, label) in enumerate(zip(inputs, labels))
    )
    return LabeledDataset(items, inputs.shape[1])


def make_classes(vectors):
    """ClassTable from a mapping of class id to vector."""
    return ClassTable({class_id: np.asarray(v, dtype=np.float64) for class_id, v in vectors.items()})


@pytest.fixture
def small_task():
    return generate_synthetic_task(
        SynthSpec(acoustic_dim=6, semantic_dim=4, seen_classes=4, unseen_classes=3, samples_per_class=8, seed=1)
    )


@pytest.fixture
def separable_task():
    return generate_synthetic_task(
        SynthSpec(seen_classes=4, unseen_classes=4, samples_per_class=20, within_class_spread=0.0, seed=5)
    )
