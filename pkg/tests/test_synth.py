import io

import numpy as np
import pytest

from blockstrat.contexts import build_network
from blockstrat.ingest import Direction, dataset_summary, parse_log, serialize_log
from blockstrat.mmsbm import FitConfig, fit
from blockstrat.strategy import GroupLabel, analyze
from blockstrat.synth import PlantedSpec, Strategy, generate, mixture_population_spec, play, prescribe

UP, DOWN = Direction.UP, Direction.DOWN


def test_pure_wsls_copies_market():
    h = play(np.eye(5)[3], [UP, UP, DOWN], np.random.default_rng(0), "s", "p", 0.0, 0.6)
    assert [r.guess for r in h.records][1:] == [UP, UP]
    assert h.records[0].guess is UP  # no history yet: default


def test_pure_optimist_always_up():
    spec = PlantedSpec(groups=[(10, {"OPTIMIST": 1.0})], seed=3)
    assert all(r.guess is UP for h in generate(spec) for r in h.records)


def test_prescriptions():
    assert prescribe(Strategy.SWITCH, UP, DOWN, None) is DOWN
    assert prescribe(Strategy.REPEAT, DOWN, UP, None) is DOWN
    assert prescribe(Strategy.REPEAT, None, None, None) is None
    assert prescribe(Strategy.EXPERT, UP, UP, None) is None
    assert prescribe(Strategy.EXPERT, UP, UP, DOWN) is DOWN


def test_deterministic_and_sized():
    spec = PlantedSpec(groups=[(7, {"WSLS": 0.5, "SWITCH": 0.5}), (5, {"EXPERT": 0.7, "REPEAT": 0.3})], n_rounds=9, noise=0.1, seed=5)
    a, b = generate(spec), generate(spec)
    assert a == b
    assert sum(len(h) for h in a) == 12 * 9
    spec.seed = 6
    assert generate(spec) != a


def test_parses_through_ingest_unchanged():
    spec = PlantedSpec(groups=[(11, {"WSLS": 0.3, "EXPERT": 0.7})], seed=8)
    histories = generate(spec)
    assert parse_log(io.StringIO(serialize_log(histories))) == histories


def test_expert_accuracy():
    spec = PlantedSpec(groups=[(400, {"OPTIMIST": 1.0})], n_rounds=25, consult_probability=1.0, seed=1)
    s = dataset_summary(generate(spec))
    assert s.n_records >= 10_000
    assert abs(s.expert_accuracy - 0.6) <= 0.02


def test_replayed_market():
    series = [["UP", "DOWN", "DOWN"], ["DOWN", "DOWN", "UP"]]
    spec = PlantedSpec(groups=[(4, {"WSLS": 1.0})], n_rounds=3, players_per_session=2, market_series=series)
    hs = generate(spec)
    assert [r.market_move.value for r in hs[0].records] == series[0]
    assert [r.market_move.value for r in hs[3].records] == series[1]


def test_invalid_specs():
    with pytest.raises(ValueError):
        PlantedSpec(groups=[(1, {"WSLS": 0.5})])
    with pytest.raises(ValueError):
        PlantedSpec(groups=[(1, {"WSLS": 1.0})], expert_accuracy=1.5)


def test_spec_json_roundtrip():
    spec = PlantedSpec(groups=[(3, {"WSLS": 0.25, "OPTIMIST": 0.75})], noise=0.1, seed=4)
    again = PlantedSpec.from_json(spec.to_json())
    assert generate(again) == generate(spec)


MEAN_MIXTURE = {"WSLS": 0.34, "OPTIMIST": 0.25, "SWITCH": 0.41 / 3, "REPEAT": 0.41 / 3, "EXPERT": 0.41 / 3}


def test_mixture_population_mean():
    spec = mixture_population_spec(MEAN_MIXTURE, n_players=2000, seed=3)
    assert spec.n_players == 2000
    assert np.allclose(spec.mixtures.sum(axis=1), 1.0)
    assert spec.mixtures[:, 3].mean() == pytest.approx(0.34, abs=0.02)  # WSLS column
    assert spec.mixtures[:, 1].mean() == pytest.approx(0.25, abs=0.02)  # OPTIMIST column


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mixture_population_recovers_wsls_and_optimist(seed):
    spec = mixture_population_spec(MEAN_MIXTURE, n_players=200, n_rounds=25, seed=seed)
    net = build_network(generate(spec), "BCE")
    params, _ = fit(net, 4, 8, FitConfig(seed=1))
    labels = analyze(params, net).labels
    assert GroupLabel.WSLS in labels
    assert GroupLabel.OPTIMIST in labels

