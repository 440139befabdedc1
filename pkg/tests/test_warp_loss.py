import math

import numpy as np
import pytest

from conftest import make_classes, make_dataset
from errors import DataError, NumericError
from projection_models import Bilinear, Compatibility, ModelKind, init_model, score_matrix
from warp_loss import (
    RankMode,
    RankPenalty,
    active_margins,
    hinge_loss,
    margin_rank,
    rank_weights,
    ranking_error_beta,
    warp_gradient,
    warp_objective,
    warp_terms,
)


def test_beta_values():
    assert ranking_error_beta(0) == 0.0
    assert ranking_error_beta(1) == 1.0
    assert ranking_error_beta(3) == pytest.approx(11 / 6, abs=1e-15)


def test_beta_is_monotone_and_concave():
    betas = [ranking_error_beta(r) for r in range(101)]
    increments = np.diff(betas)
    assert np.all(increments > 0)
    assert np.all(np.diff(increments) <= 0)


def test_rank_weight_lies_in_unit_interval_and_decreases():
    ranks = np.arange(0, 50)
    weights = rank_weights(ranks, RankPenalty())
    assert weights[0] == 0.0
    assert np.all((weights[1:] > 0) & (weights[1:] <= 1.0))
    assert np.all(np.diff(weights[1:]) <= 0)


def test_penalty_override():
    penalty = RankPenalty((1.0, 0.5))
    assert ranking_error_beta(4, penalty) == 1.5
    with pytest.raises(ValueError):
        RankPenalty((0.5, 1.0))
    with pytest.raises(ValueError):
        RankPenalty((1.0, -0.1))
    with pytest.raises(ValueError):
        ranking_error_beta(-1)


def test_hinge_loss_examples():
    assert hinge_loss(0.4, 0.4, same_class=True) == 0.0
    assert hinge_loss(0.2, 0.5, same_class=False) == pytest.approx(0.7)
    assert hinge_loss(0.1, 1.5, same_class=False) == pytest.approx(-0.4)


@pytest.mark.parametrize(
    "scores, expected",
    [
        ({"A": 5.0, "B": 1.0, "C": 0.5}, 0),
        ({"A": 1.0, "B": 1.0, "C": -3.0}, 1),
        ({"A": 0.0, "B": 2.0, "C": 1.5}, 2),
    ],
)
def test_margin_rank_examples(scores, expected):
    assert margin_rank(scores, "A") == expected


def test_margin_rank_needs_true_class():
    with pytest.raises(DataError):
        margin_rank({"A": 1.0}, "B")


def test_single_instance_two_classes():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    dataset = make_dataset([[0.5, 0.2]], ["a"])
    report = warp_objective(dataset, classes, Bilinear(W=np.eye(2)))
    assert report.objective_value == pytest.approx(0.7, abs=1e-12)
    assert report.per_instance[0].rank == 1
    assert report.l2_penalty == 0.0


def test_zero_data_loss_leaves_only_the_penalty():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    dataset = make_dataset([[3.0, 0.0], [0.0, 4.0]], ["a", "b"])
    model = Bilinear(W=np.eye(2))
    report = warp_objective(dataset, classes, model, l2_lambda=0.25)
    assert report.data_term == pytest.approx(0.0, abs=1e-15)
    assert report.objective_value == pytest.approx(0.25 * 2.0)
    assert [item.rank for item in report.per_instance] == [0, 0]
    gradient = warp_gradient(dataset, classes, model)
    np.testing.assert_array_equal(gradient["W"], np.zeros((2, 2)))


def test_bilinear_dot_gradient_closed_form():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    dataset = make_dataset([[1.0, 2.0]], ["a"])
    gradient = warp_gradient(dataset, classes, Bilinear(W=np.zeros((2, 2))))
    theta = np.array([1.0, 2.0])
    expected = np.outer(theta, np.array([0.0, 1.0]) - np.array([1.0, 0.0]))
    np.testing.assert_allclose(gradient["W"], expected, rtol=0, atol=1e-15)


def test_l2_adds_exactly_lambda_times_squared_norm():
    rng = np.random.default_rng(0)
    classes = make_classes({f"c{i}": rng.standard_normal(4) for i in range(4)})
    dataset = make_dataset(rng.standard_normal((6, 5)), [f"c{i % 4}" for i in range(6)])
    model = init_model(ModelKind.FC3, 5, 4, rank=3, seed=1)
    plain = warp_objective(dataset, classes, model).objective_value
    regularized = warp_objective(dataset, classes, model, l2_lambda=0.3).objective_value
    assert regularized - plain == pytest.approx(0.3 * model.squared_norm(), abs=1e-12)


def test_cosine_with_zero_projection_is_reported():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    dataset = make_dataset([[1.0, 1.0]], ["a"])
    with pytest.raises(NumericError):
        warp_gradient(dataset, classes, Bilinear(W=np.zeros((2, 2))), compat=Compatibility.COSINE)


def test_unknown_class_is_a_data_error():
    classes = make_classes({"a": [1.0, 0.0]})
    dataset = make_dataset([[1.0, 1.0]], ["zebra"])
    with pytest.raises(DataError):
        warp_objective(dataset, classes, Bilinear(W=np.eye(2)))


def test_position_rank_counts_strictly_higher_scores():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [0.5, 0.5]})
    dataset = make_dataset([[1.0, 0.9]], ["a"])
    margin = warp_objective(dataset, classes, Bilinear(W=np.eye(2)))
    position = warp_objective(dataset, classes, Bilinear(W=np.eye(2)), rank_mode=RankMode.POSITION)
    assert margin.per_instance[0].rank == 2
    assert position.per_instance[0].rank == 0
    assert position.objective_value == 0.0


def oracle_score(kind, a, b):
    if kind is Compatibility.DOT:
        return sum(x * y for x, y in zip(a, b))
    if kind is Compatibility.COSINE:
        dot = sum(x * y for x, y in zip(a, b))
        return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))
    return -math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def oracle_objective(dataset, classes, model, kind, l2_lambda):
    """Double loop over instances and classes."""
    total = 0.0
    for instance_id, acoustic, label in dataset:
        projected = model.project_batch(acoustic.values[np.newaxis, :])[0]
        scores = {c: oracle_score(kind, projected, classes[c].values) for c in classes.class_ids}
        rank = 0
        for c in classes.class_ids:
            if c != label and 1.0 + scores[c] - scores[label] > 0:
                rank += 1
        hinge_sum = 0.0
        for c in classes.class_ids:
            delta = 0.0 if c == label else 1.0
            hinge_sum += max(0.0, delta + scores[c] - scores[label])
        if rank > 0:
            beta = sum(1.0 / i for i in range(1, rank + 1))
            total += beta / rank * hinge_sum
    penalty = sum(float(np.sum(m * m)) for m in model.parameters().values())
    return total / len(dataset) + l2_lambda * penalty


@pytest.mark.parametrize("kind", list(ModelKind))
@pytest.mark.parametrize("compat", list(Compatibility))
def test_objective_matches_brute_force(kind, compat):
    for task_seed in range(100):
        rng = np.random.default_rng(task_seed)
        n_classes = int(rng.integers(2, 6))
        n_instances = int(rng.integers(1, 11))
        d_a, d_s = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        classes = make_classes({f"c{i}": rng.standard_normal(d_s) for i in range(n_classes)})
        labels = [f"c{int(i)}" for i in rng.integers(0, n_classes, n_instances)]
        dataset = make_dataset(rng.standard_normal((n_instances, d_a)) * 2.0, labels)
        model = init_model(kind, d_a, d_s, rank=min(d_a, d_s), seed=task_seed)
        l2_lambda = 0.0 if task_seed % 2 else 0.01
        report = warp_objective(dataset, classes, model, compat=compat, l2_lambda=l2_lambda)
        expected = oracle_objective(dataset, classes, model, compat, l2_lambda)
        assert report.objective_value == pytest.approx(expected, rel=0, abs=1e-12)


def test_brute_force_agrees_on_the_zero_over_zero_case():
    classes = make_classes({"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [-1.0, 0.0]})
    dataset = make_dataset([[5.0, 0.0], [0.0, 5.0], [-5.0, 0.0]], ["a", "b", "c"])
    model = Bilinear(W=np.eye(2))
    for compat in Compatibility:
        report = warp_objective(dataset, classes, model, compat=compat)
        expected = oracle_objective(dataset, classes, model, compat, 0.0)
        assert report.objective_value == pytest.approx(expected, abs=1e-12)
    assert warp_objective(dataset, classes, model).objective_value == 0.0


def margins_far_from_kinks(model, inputs, labels, semantic, compat, tolerance=1e-4):
    trace = model.forward(inputs)
    table = active_margins(score_matrix(compat, trace.output, semantic), labels)
    off_true = np.ones_like(table.margins, dtype=bool)
    off_true[np.arange(len(labels)), labels] = False
    if np.any(np.abs(table.margins[off_true]) < tolerance):
        return False
    return all(np.all(np.abs(pre) > tolerance) for pre in trace.pre_activations)


@pytest.mark.parametrize("kind", list(ModelKind))
@pytest.mark.parametrize("compat", [Compatibility.DOT, Compatibility.NEG_EUCLIDEAN])
def test_gradient_matches_central_differences(kind, compat):
    d_a, d_s, rank, n_classes, n_instances = 8, 6, 4, 5, 10
    step = 1e-5
    checked = 0
    point_seed = 0
    while checked < 10:
        point_seed += 1
        assert point_seed < 200, "too many points near a hinge kink"
        rng = np.random.default_rng(1000 + point_seed)
        semantic = rng.standard_normal((n_classes, d_s))
        inputs = rng.standard_normal((n_instances, d_a))
        labels = rng.integers(0, n_classes, n_instances)
        model = init_model(kind, d_a, d_s, rank=rank, seed=point_seed)
        if not margins_far_from_kinks(model, inputs, labels, semantic, compat):
            continue

        def objective(candidate):
            return warp_terms(candidate, inputs, labels, semantic, compat, RankPenalty(), 0.01).objective

        analytic = warp_terms(
            model, inputs, labels, semantic, compat, RankPenalty(), 0.01, with_gradient=True
        ).gradients
        base_ranks = warp_terms(model, inputs, labels, semantic, compat).ranks
        rank_changed = False
        for name, matrix in model.parameters().items():
            numeric = np.zeros_like(matrix)
            for index in np.ndindex(matrix.shape):
                plus, minus = matrix.copy(), matrix.copy()
                plus[index] += step
                minus[index] -= step
                model_plus = model.with_parameters({name: plus})
                model_minus = model.with_parameters({name: minus})
                for perturbed in (model_plus, model_minus):
                    ranks = warp_terms(perturbed, inputs, labels, semantic, compat).ranks
                    rank_changed = rank_changed or not np.array_equal(ranks, base_ranks)
                numeric[index] = (objective(model_plus) - objective(model_minus)) / (2 * step)
            error = np.max(np.abs(analytic[name] - numeric)) / max(np.max(np.abs(numeric)), 1e-8)
            if not rank_changed:
                assert error < 1e-5, f"{kind.value}/{compat.value} {name}: relative error {error}"
        if not rank_changed:
            checked += 1
