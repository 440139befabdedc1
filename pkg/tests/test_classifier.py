import math

import numpy as np
import pytest

from classifier import classify, predict_batch, top1_accuracy
from conftest import make_classes, make_dataset
from embedding_data import EmbeddingVector
from errors import DataError
from projection_models import Bilinear, Compatibility, FactoredLinear, init_model


def test_single_candidate_always_wins():
    classes = make_classes({"only": [0.3, -1.0]})
    model = init_model("fc2", 3, 2, seed=0)
    assert classify(model, Compatibility.DOT, EmbeddingVector([1.0, 2.0, 3.0]), classes) == "only"


def test_identity_model_picks_the_matching_class():
    classes = make_classes({"a": [1.0, 0.0, 0.0], "b": [0.0, 2.0, 0.0], "c": [0.5, 0.5, 0.5]})
    model = FactoredLinear(U=np.eye(3), V=np.eye(3))
    assert classify(model, Compatibility.DOT, classes["b"], classes) == "b"


def test_ties_go_to_the_smallest_class_id():
    classes = make_classes({"zeta": [1.0, 0.0], "alpha": [1.0, 0.0], "mid": [0.0, 1.0]})
    model = Bilinear(W=np.eye(2))
    assert classify(model, Compatibility.DOT, EmbeddingVector([1.0, 0.0]), classes) == "alpha"


@pytest.mark.parametrize("compat", [Compatibility.DOT, Compatibility.COSINE])
def test_positive_scaling_of_w_keeps_predictions(compat):
    rng = np.random.default_rng(0)
    classes = make_classes({f"c{i}": rng.standard_normal(5) for i in range(6)})
    W = rng.standard_normal((7, 5))
    inputs = rng.standard_normal((1000, 7))
    base = predict_batch(Bilinear(W=W), compat, inputs, classes)
    assert predict_batch(Bilinear(W=2.0 * W), compat, inputs, classes) == base
    assert predict_batch(Bilinear(W=0.37 * W), compat, inputs, classes) == base


def test_top1_examples():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    model = Bilinear(W=np.eye(2))
    inputs = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]
    assert top1_accuracy(model, "dot", make_dataset(inputs, ["a", "b", "a", "b", "a"]), classes) == 1.0
    assert top1_accuracy(model, "dot", make_dataset(inputs, ["b", "a", "b", "a", "b"]), classes) == 0.0
    assert top1_accuracy(model, "dot", make_dataset(inputs, ["a", "b", "b", "a", "b"]), classes) == pytest.approx(0.4)


def test_random_classifier_is_near_chance():
    k, n = 4, 2000
    rng = np.random.default_rng(1)
    classes = make_classes({f"c{i}": rng.standard_normal(6) for i in range(k)})
    labels = [f"c{i}" for i in rng.permutation(np.repeat(np.arange(k), n // k))]
    dataset = make_dataset(rng.standard_normal((n, 8)), labels)
    accuracy = top1_accuracy(init_model("bilinear", 8, 6, seed=2), "dot", dataset, classes)
    sigma = math.sqrt((1 / k) * (1 - 1 / k) / n)
    assert abs(accuracy - 1 / k) < 4 * sigma


def test_labels_must_be_candidates():
    classes = make_classes({"a": [1.0, 0.0]})
    with pytest.raises(DataError, match="zebra"):
        top1_accuracy(Bilinear(W=np.eye(2)), "dot", make_dataset([[1.0, 0.0]], ["zebra"]), classes)


def test_dimension_mismatches():
    classes = make_classes({"a": [1.0, 0.0, 0.0]})
    with pytest.raises(DataError):
        classify(Bilinear(W=np.eye(2)), "dot", EmbeddingVector([1.0, 0.0]), classes)
    with pytest.raises(DataError):
        classify(Bilinear(W=np.eye(3)), "dot", EmbeddingVector([1.0, 0.0]), classes)
