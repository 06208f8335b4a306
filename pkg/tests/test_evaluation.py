import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockstrat.contexts import build_network
from blockstrat.evaluation import (
    MMSBMSpec,
    NaiveSpec,
    SBMSpec,
    compare,
    cv_accuracy,
    grid_select,
    kfold_split,
    q_matrix,
)
from blockstrat.contexts import ContextSchema
from blockstrat.mmsbm import FitConfig
from blockstrat.sbm import AnnealConfig
from blockstrat.synth import PlantedSpec, generate, planted_block_params, sample_network

from conftest import network_from_counts


@pytest.fixture(scope="module")
def histories():
    spec = PlantedSpec(
        groups=[(15, {"WSLS": 0.8, "OPTIMIST": 0.2}), (15, {"REPEAT": 0.6, "SWITCH": 0.4})],
        n_rounds=20,
        noise=0.1,
        seed=21,
    )
    return generate(spec)


class Oracle:
    """Predicts the held-out guesses exactly."""

    name = "oracle"

    def train(self, network):
        return self

    def predict_network(self, network):
        return network.record_up.copy()


class ConstantUp:
    name = "up"

    def train(self, network):
        return self

    def predict_network(self, network):
        return np.ones(network.n_records, dtype=bool)


class Recorder:
    """Remembers which records each training network contained."""

    name = "recorder"

    def __init__(self):
        self.train_keys = []

    def train(self, network):
        self.train_keys.append(set(network.record_keys))
        return ConstantUp()


def test_hundred_records_five_folds():
    net = network_from_counts([[10, 10], [10, 10], [10, 10], [20, 20]], [[0, 0]] * 4)
    assert net.n_records == 100
    split = kfold_split(net, 5, seed=1)
    assert split.sizes().tolist() == [20] * 5


def test_split_deterministic(histories):
    a = kfold_split(histories, 5, seed=9)
    b = kfold_split(histories, 5, seed=9)
    c = kfold_split(histories, 5, seed=10)
    assert a.fold_of == b.fold_of
    assert a.fold_of != c.fold_of


@pytest.mark.parametrize("n_folds", [2, 3, 5, 7])
def test_split_balanced_and_stratified(histories, n_folds):
    split = kfold_split(histories, n_folds, seed=3)
    sizes = split.sizes()
    assert sizes.max() - sizes.min() <= 1
    assert sum(sizes) == sum(len(h) for h in histories)
    for h in histories:
        per_fold = np.bincount([split.fold_of[r.key] for r in h.records], minlength=n_folds)
        assert per_fold.max() - per_fold.min() <= 1
    # every player keeps training records in every fold, also after round 1 is dropped
    net = build_network(histories, "BCE")
    labels = split.folds_for(net)
    for u in range(net.n_players):
        assert all((labels[net.record_player == u] != f).any() for f in range(n_folds))


def test_split_errors():
    net = network_from_counts([[2]], [[1]])
    with pytest.raises(ValueError):
        kfold_split(net, 1, 0)
    with pytest.raises(ValueError):
        kfold_split(net, 5, 0)


def test_perfect_and_constant_predictors(histories):
    folds = kfold_split(histories, 5, seed=0)
    net = build_network(histories, "BCE")
    assert cv_accuracy(net, None, Oracle(), folds).tolist() == [1.0] * 5
    acc = cv_accuracy(histories, "BCE", ConstantUp(), folds)
    labels = folds.folds_for(net)
    for f in range(5):
        assert acc[f] == pytest.approx(net.record_up[labels == f].mean(), abs=1e-15)


def test_held_out_records_never_trained_on(histories):
    folds = kfold_split(histories, 5, seed=4)
    net = build_network(histories, "BC")
    rec = Recorder()
    cv_accuracy(net, None, rec, folds)
    for f, keys in enumerate(rec.train_keys):
        held = {k for k, lab in folds.fold_of.items() if lab == f}
        assert not keys & held
        assert len(keys) == sum(folds.fold_of[k] != f for k in net.record_keys)


def test_single_group_mmsbm_equals_global_majority(histories):
    folds = kfold_split(histories, 5, seed=2)
    net = build_network(histories, "BCE")
    mm = cv_accuracy(net, None, MMSBMSpec(1, 1, FitConfig(restarts=1)), folds)
    labels = folds.folds_for(net)
    for f in range(5):
        train_up = net.record_up[labels != f].mean()
        test = net.record_up[labels == f]
        expected = test.mean() if train_up >= 0.5 else 1 - test.mean()
        assert mm[f] == pytest.approx(expected, abs=1e-15)


def test_models_beat_naive_on_structured_data(histories):
    folds = kfold_split(histories, 5, seed=5)
    net = build_network(histories, "BCE")
    naive = cv_accuracy(net, None, NaiveSpec(), folds).mean()
    mm = cv_accuracy(net, None, MMSBMSpec(2, 4, FitConfig(restarts=3, seed=1)), folds).mean()
    sbm = cv_accuracy(net, None, SBMSpec(2, 4, AnnealConfig(seed=1)), folds).mean()
    assert mm > naive
    assert sbm > naive


def test_q_examples():
    names, Q = q_matrix({"a": [0.6, 0.7], "b": [0.6, 0.7]})
    assert names == ["a", "b"] and np.all(Q == 0)
    _, Q = q_matrix({"a": [0.6], "b": [0.5]})
    assert Q[0, 1] == pytest.approx(math.log(1.2), abs=1e-15)
    assert Q[0, 1] == pytest.approx(0.1823, abs=5e-5)
    _, Q = q_matrix({"a": [0.6, 0.0], "b": [0.5, 0.4]})
    assert np.isnan(Q[0, 1]) and np.isnan(Q[1, 0]) and Q[0, 0] == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4), min_size=2, max_size=5))
def test_q_antisymmetric(rows):
    _, Q = q_matrix({f"s{i}": r for i, r in enumerate(rows)})
    assert np.array_equal(Q, -Q.T)
    assert np.all(np.diag(Q) == 0)


def test_grid_trivial_range(histories):
    folds = kfold_split(histories, 3, seed=0)
    K, L, grid = grid_select(histories, "BC", [1], [1], folds, FitConfig(restarts=1))
    assert (K, L) == (1, 1)
    assert grid["selected"] == [1, 1]


def test_grid_selects_planted_size():
    planted = planted_block_params([0] * 5 + [1] * 5, [0, 0, 1, 1], np.array([[0.9, 0.1], [0.1, 0.9]]))
    net = sample_network(planted, 20, seed=8)
    folds = kfold_split(net, 5, seed=8)
    K, L, grid = grid_select(net, None, [1, 2, 3], [1, 2], folds, FitConfig(restarts=3, seed=2))
    assert (K, L) == (2, 2)
    means = np.array(grid["mean_accuracy"])
    assert means.shape == (3, 2)
    assert means[1, 1] >= means.max() - grid["tie_tolerance"]


def test_compare_report(histories):
    schemas = [ContextSchema.parse(s) for s in ("BC", "BCE", "BCH")]
    report = compare(histories, schemas, [NaiveSpec(), MMSBMSpec(2, 3, FitConfig(restarts=2))], n_folds=4, seed=1)
    assert report.schemas == ["BC", "BCE", "BCH"]
    assert set(report.accuracies) == {"naive", "MMSBM(2,3)"}
    assert report.Q.shape == (3, 3) and np.array_equal(report.Q, -report.Q.T)
    for model in report.accuracies.values():
        for accs in model.values():
            assert len(accs) == 4 and all(0 <= a <= 1 for a in accs)
    doc = report.to_json()
    assert set(doc) >= {"schemas", "folds", "models", "accuracies", "Q", "grid"}
    assert any("BCH" in n for n in report.notes)
