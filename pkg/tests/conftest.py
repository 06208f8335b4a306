import numpy as np
import pytest

from blockstrat.contexts import DecisionNetwork
from blockstrat.ingest import DecisionRecord, Direction, PlayerHistory

UP, DOWN = Direction.UP, Direction.DOWN


def make_history(guesses, markets, advice=None, session="s1", player="p1"):
    """History from direction strings; ``advice`` entries of None mean the
    expert was not consulted."""
    advice = advice or [None] * len(guesses)
    recs = tuple(
        DecisionRecord(session, player, t, Direction(g), Direction(m), a is not None, None if a is None else Direction(a))
        for t, (g, m, a) in enumerate(zip(guesses, markets, advice), start=1)
    )
    return PlayerHistory(session, player, recs)


def random_network(rng, n_players, n_contexts, max_count=4, ensure_all=True):
    """Random count network where every node has at least one observation."""
    pk, ck, up, keys = [], [], [], []
    for u in range(n_players):
        for c in range(n_contexts):
            n = int(rng.integers(1 if ensure_all else 0, max_count + 1))
            for j in range(n):
                pk.append(f"u{u}")
                ck.append(f"c{c}")
                up.append(bool(rng.random() < 0.5))
                keys.append(("t", f"u{u}", f"c{c}", j))
    return DecisionNetwork.from_records(pk, ck, up, keys)


def network_from_counts(n_up, n_down):
    """Network whose (u, c) cell holds the given UP/DOWN counts."""
    n_up, n_down = np.asarray(n_up), np.asarray(n_down)
    pk, ck, up, keys = [], [], [], []
    P, C = n_up.shape
    for u in range(P):
        for c in range(C):
            for j in range(int(n_up[u, c] + n_down[u, c])):
                pk.append(f"u{u}")
                ck.append(f"c{c}")
                up.append(j < n_up[u, c])
                keys.append(("t", u, c, j))
    players = [f"u{u}" for u in range(P)]
    contexts = [f"c{c}" for c in range(C)]
    return DecisionNetwork.from_records(pk, ck, up, keys, player_order=players, context_order=contexts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
