import random
from collections import Counter

import numpy as np
import pytest

from blockstrat.contexts import (
    DEFAULT_SCHEMA_SPEC,
    ContextKey,
    ContextSchema,
    SchemaError,
    build_network,
    default_player_key,
    default_schemas,
    derive_features,
    enumerate_schemas,
    read_schema_file,
)
from blockstrat.synth import PlantedSpec, generate

from conftest import make_history


@pytest.fixture(scope="module")
def histories():
    spec = PlantedSpec(
        groups=[(12, {"WSLS": 0.4, "OPTIMIST": 0.3, "REPEAT": 0.3}), (8, {"SWITCH": 0.5, "EXPERT": 0.5})],
        n_rounds=15,
        noise=0.1,
        seed=7,
    )
    return generate(spec)


def test_features_previous_round():
    h = make_history(["DOWN", "UP", "DOWN"], ["DOWN", "UP", "UP"], [None, None, "DOWN"])
    f = derive_features(h, 3)
    assert f["B"] == "UP" and f["C"] == "RIGHT" and f["E"] == "DOWN" and f["A"] == "UP"
    assert f["D"] == "YES"
    assert f["H"] == "DOWN" and f["I"] == "RIGHT"
    assert f["F"] is None


def test_features_first_round_undefined():
    h = make_history(["UP", "UP"], ["UP", "DOWN"])
    f = derive_features(h, 1)
    for tag in "ABCFGHI":
        assert f[tag] is None
    assert f["D"] == "NO" and f["E"] == "NONE"


def test_feature_round_out_of_range():
    h = make_history(["UP"], ["UP"])
    with pytest.raises(IndexError):
        derive_features(h, 2)


def test_five_round_trend():
    markets = ["DOWN", "UP", "UP", "DOWN", "UP", "DOWN", "UP"]
    h = make_history(["UP"] * 7, markets)
    window = markets[1:6]  # rounds 2..6 precede round 7
    assert window == ["UP", "UP", "DOWN", "UP", "DOWN"]
    expected = "UP" if window.count("UP") * 2 >= 5 else "DOWN"
    assert derive_features(h, 7)["F"] == expected == "UP"
    assert derive_features(h, 5)["F"] is None
    # all rounds before 7: 4 UP of 6, majority UP; a 2-2 tie at round 5 goes to UP
    assert derive_features(h, 7)["G"] == "UP"
    assert derive_features(h, 5)["G"] == "UP"


def test_derived_a_matches_logged_guess(histories):
    for h in histories:
        for t in range(2, len(h) + 1):
            assert derive_features(h, t)["A"] == h.record(t - 1).guess.value


def test_schema_validation():
    assert ContextSchema.parse("bce").n_contexts == 12
    with pytest.raises(SchemaError):
        ContextSchema.parse("BCZ")
    with pytest.raises(SchemaError):
        ContextSchema.parse("BB")
    with pytest.raises(SchemaError):
        ContextSchema.parse("ABCEFGH")  # 2*2*2*3*2*2*2 = 192 > 64


def test_bce_has_twelve_keys():
    keys = ContextSchema.parse("BCE").all_keys()
    assert len(keys) == len(set(keys)) == 12
    assert sorted(keys, key=ContextKey.sort_key) == keys
    assert ContextKey.from_label(keys[5].label) == keys[5]


def test_single_usable_round():
    h = make_history(["DOWN", "UP"], ["UP", "UP"])
    net = build_network([h], "BC")
    assert net.n_players == 1 and net.n_contexts == 1
    assert net.n_up.tolist() == [[1]] and net.n_down.tolist() == [[0]]
    assert net.skipped == 1
    assert net.contexts[0].values == ("UP", "WRONG")


def test_counts_match_direct_scan(histories):
    schema = ContextSchema.parse("BCE")
    net = build_network(histories, schema)
    # independent tally straight from the raw records
    tally = Counter()
    usable = 0
    for h in histories:
        for t in range(2, len(h) + 1):
            prev, cur = h.records[t - 2], h.records[t - 1]
            right = "RIGHT" if prev.guess == prev.market_move else "WRONG"
            advice = cur.expert_advice.value if cur.expert_advice else "NONE"
            tally[(f"{h.session_id}/{h.player_id}", (prev.market_move.value, right, advice), cur.guess.value)] += 1
            usable += 1
    assert net.n_records == usable == int(net.counts.sum())
    assert net.skipped == len(histories)
    for (player, values, guess), n in tally.items():
        u = net.player_index(player)
        c = net.context_index(ContextKey(schema, values))
        assert (net.n_up if guess == "UP" else net.n_down)[u, c] == n
    assert len(tally) == int((net.n_up > 0).sum() + (net.n_down > 0).sum())
    assert net.n_contexts <= 12


def test_provenance_consistent(histories):
    net = build_network(histories, "BCEH")
    rebuilt_up = np.zeros_like(net.n_up)
    rebuilt_dn = np.zeros_like(net.n_down)
    for u, c, up in zip(net.record_player, net.record_context, net.record_up):
        (rebuilt_up if up else rebuilt_dn)[u, c] += 1
    assert np.array_equal(rebuilt_up, net.n_up) and np.array_equal(rebuilt_dn, net.n_down)
    assert net.skipped == 2 * len(histories)


def test_summing_over_e_gives_bc(histories):
    bce = build_network(histories, "BCE")
    bc = build_network(histories, "BC")
    marg_up = Counter()
    marg_dn = Counter()
    for (u, c), n in np.ndenumerate(bce.n_up):
        marg_up[(bce.players[u], bce.contexts[c].values[:2])] += n
    for (u, c), n in np.ndenumerate(bce.n_down):
        marg_dn[(bce.players[u], bce.contexts[c].values[:2])] += n
    for (u, c), n in np.ndenumerate(bc.n_up):
        assert marg_up[(bc.players[u], bc.contexts[c].values)] == n
    for (u, c), n in np.ndenumerate(bc.n_down):
        assert marg_dn[(bc.players[u], bc.contexts[c].values)] == n


def test_permutation_invariant(histories):
    shuffled = list(histories)
    random.Random(3).shuffle(shuffled)
    a = build_network(histories, "BCE")
    b = build_network(shuffled, "BCE")
    assert a.players == b.players and a.contexts == b.contexts
    assert np.array_equal(a.n_up, b.n_up) and np.array_equal(a.n_down, b.n_down)


def test_subset_drops_empty_nodes(histories):
    net = build_network(histories, "BCE")
    first = net.record_player == 0
    sub = net.subset(~first)
    assert net.players[0] not in sub.players
    assert sub.n_records == net.n_records - int(first.sum())
    assert default_player_key(histories[0]) == net.players[0]


def test_enumerate_schemas():
    (s,) = enumerate_schemas(["BCE"])
    assert s.n_contexts == 12
    assert enumerate_schemas([]) == []
    with pytest.raises(SchemaError):
        enumerate_schemas(["BCE", "ECB"])
    with pytest.raises(SchemaError):
        enumerate_schemas(["BQ"])


def test_default_schemas():
    schemas = default_schemas()
    assert len(schemas) == len(DEFAULT_SCHEMA_SPEC) == 23
    assert "BCE" in [s.name for s in schemas]
    names = {s.name for s in schemas}
    for sub in ("B", "C", "E", "BC", "BE", "CE", "BCE"):
        assert sub in names


def test_schema_file(tmp_path):
    path = tmp_path / "schemas.txt"
    path.write_text("BCE\n# comment\n\nBC  # two features\n")
    assert [s.name for s in read_schema_file(path)] == ["BCE", "BC"]
