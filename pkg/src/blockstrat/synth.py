"""Synthetic decision logs from planted strategy mixtures, and synthetic
networks from planted block-model parameters."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .contexts import DecisionNetwork
from .ingest import DecisionRecord, Direction, PlayerHistory
from .mmsbm import MMSBMParams


class Strategy(str, enum.Enum):
    SWITCH = "SWITCH"
    OPTIMIST = "OPTIMIST"
    REPEAT = "REPEAT"
    WSLS = "WSLS"
    EXPERT = "EXPERT"


STRATEGIES = tuple(Strategy)


def prescribe(
    strategy: Strategy,
    last_guess: Direction | None,
    last_market: Direction | None,
    advice: Direction | None,
) -> Direction | None:
    """Guess dictated by ``strategy``; ``None`` if it cannot act this round."""
    if strategy is Strategy.OPTIMIST:
        return Direction.UP
    if strategy is Strategy.EXPERT:
        return advice
    if strategy is Strategy.WSLS:
        return last_market
    if last_guess is None:
        return None
    return last_guess if strategy is Strategy.REPEAT else last_guess.flip()


def _mixture_vector(weights) -> np.ndarray:
    if isinstance(weights, Mapping):
        vec = np.array([float(weights.get(s.value, weights.get(s, 0.0))) for s in STRATEGIES])
    else:
        vec = np.asarray(weights, dtype=float)
    if vec.shape != (len(STRATEGIES),):
        raise ValueError(f"mixture needs {len(STRATEGIES)} weights")
    if np.any(vec < 0) or not np.isclose(vec.sum(), 1.0, atol=1e-9):
        raise ValueError(f"mixture weights {vec.tolist()} are not on the simplex")
    return vec


@dataclass
class PlantedSpec:
    """Population of players mixing elementary strategies.

    ``groups`` is a list of ``(n_players, mixture)`` pairs; a mixture maps
    strategy names to weights. ``market_series`` (one direction list per
    session) replays fixed markets; otherwise each session draws a fair coin
    with ``p_market_up``. With probability ``noise`` a round's guess is a
    fair coin flip instead of the strategy's prescription; without it a pure
    repeater never leaves its first guess.
    """

    groups: list[tuple[int, dict]]
    n_rounds: int = 25
    players_per_session: int = 10
    consult_probability: float = 0.3
    expert_accuracy: float = 0.6
    p_market_up: float = 0.5
    noise: float = 0.0
    market_series: list[list[str]] | None = None
    seed: int = 0
    mixtures: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("consult_probability", "expert_accuracy", "p_market_up", "noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_rounds < 1 or self.players_per_session < 1:
            raise ValueError("n_rounds and players_per_session must be >= 1")
        rows = []
        for count, mix in self.groups:
            rows.extend([_mixture_vector(mix)] * int(count))
        self.mixtures = np.array(rows).reshape(-1, len(STRATEGIES))
        if self.market_series is not None:
            for s in self.market_series:
                if len(s) < self.n_rounds:
                    raise ValueError("replayed market series shorter than n_rounds")

    @property
    def n_players(self) -> int:
        return len(self.mixtures)

    @classmethod
    def from_json(cls, doc: dict) -> "PlantedSpec":
        doc = dict(doc)
        doc["groups"] = [(int(g["players"]), dict(g["mixture"])) for g in doc["groups"]]
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "PlantedSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {
            "groups": [{"players": n, "mixture": m} for n, m in self.groups],
            "n_rounds": self.n_rounds,
            "players_per_session": self.players_per_session,
            "consult_probability": self.consult_probability,
            "expert_accuracy": self.expert_accuracy,
            "p_market_up": self.p_market_up,
            "noise": self.noise,
            "market_series": self.market_series,
            "seed": self.seed,
        }


def _market(spec: PlantedSpec, session: int, rng: np.random.Generator) -> list[Direction]:
    if spec.market_series is not None:
        series = spec.market_series[session % len(spec.market_series)]
        return [Direction(m) for m in series[: spec.n_rounds]]
    return [Direction.UP if x else Direction.DOWN for x in rng.random(spec.n_rounds) < spec.p_market_up]


def play(
    mixture: np.ndarray,
    market: Sequence[Direction],
    rng: np.random.Generator,
    session_id: str,
    player_id: str,
    consult_probability: float,
    expert_accuracy: float,
    noise: float = 0.0,
) -> PlayerHistory:
    """Simulate one player against a market series.

    Each round one strategy is drawn from ``mixture``; if it cannot act
    (e.g. REPEAT in round 1) another draw is made, up to one draw per
    strategy, after which the guess defaults to UP.
    """
    records = []
    last_guess = last_market = None
    for t, move in enumerate(market, start=1):
        consulted = bool(rng.random() < consult_probability)
        advice = None
        if consulted:
            advice = move if rng.random() < expert_accuracy else move.flip()
        guess = None
        for _ in range(len(STRATEGIES)):
            strat = STRATEGIES[rng.choice(len(STRATEGIES), p=mixture)]
            guess = prescribe(strat, last_guess, last_market, advice)
            if guess is not None:
                break
        if guess is None:
            guess = Direction.UP
        if noise > 0 and rng.random() < noise:
            guess = Direction.UP if rng.random() < 0.5 else Direction.DOWN
        records.append(DecisionRecord(session_id, player_id, t, guess, move, consulted, advice))
        last_guess, last_market = guess, move
    return PlayerHistory(session_id, player_id, tuple(records))


def generate(spec: PlantedSpec) -> list[PlayerHistory]:
    """Histories for every planted player, deterministic in ``spec.seed``."""
    root = np.random.SeedSequence(spec.seed)
    market_ss, player_ss = root.spawn(2)
    n_sessions = -(-spec.n_players // spec.players_per_session)
    markets = [
        _market(spec, s, np.random.default_rng(ss))
        for s, ss in enumerate(market_ss.spawn(n_sessions))
    ]
    width = len(str(max(spec.n_players - 1, 0)))
    histories = []
    for idx, ss in enumerate(player_ss.spawn(spec.n_players)):
        session = idx // spec.players_per_session
        histories.append(play(
            spec.mixtures[idx],
            markets[session],
            np.random.default_rng(ss),
            f"s{session:03d}",
            f"p{idx:0{width}d}",
            spec.consult_probability,
            spec.expert_accuracy,
            spec.noise,
        ))
    return histories


def pure_groups_spec(n_per_group: int = 70, n_rounds: int = 25, seed: int = 0, **kw) -> PlantedSpec:
    """Four groups of single-strategy players: switch, optimist, repeat, WSLS."""
    groups = [(n_per_group, {s.value: 1.0}) for s in (Strategy.SWITCH, Strategy.OPTIMIST, Strategy.REPEAT, Strategy.WSLS)]
    return PlantedSpec(groups=groups, n_rounds=n_rounds, seed=seed, **kw)


def mixture_population_spec(
    mean_mixture: dict, n_players: int = 200, concentration: float = 1.0, n_rounds: int = 25, seed: int = 0, **kw
) -> PlantedSpec:
    """Players whose mixtures are Dirichlet draws centred on ``mean_mixture``.

    A population where every player shares one mixture has the same UP
    probability for every player, so its groups cannot be told apart.
    Spreading the individual mixtures keeps the population mean while making
    the decomposition identifiable.
    """
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    mean = _mixture_vector(mean_mixture)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    support = mean > 0
    weights = np.zeros((n_players, len(STRATEGIES)))
    weights[:, support] = rng.dirichlet(concentration * mean[support], size=n_players)
    weights /= weights.sum(axis=1, keepdims=True)
    groups = [(1, {s.value: float(w) for s, w in zip(STRATEGIES, row) if w > 0}) for row in weights]
    return PlantedSpec(groups=groups, n_rounds=n_rounds, seed=seed, **kw)


def sample_network(params: MMSBMParams, obs_per_cell: int, seed: int, players=None, contexts=None) -> DecisionNetwork:
    """Network with ``obs_per_cell`` Bernoulli draws of P(UP | player, context)
    for every (player, context) pair."""
    rng = np.random.default_rng(seed)
    n_p, n_c = params.theta.shape[0], params.eta.shape[0]
    players = tuple(players) if players is not None else tuple(f"u{u:03d}" for u in range(n_p))
    contexts = tuple(contexts) if contexts is not None else tuple(f"c{c:03d}" for c in range(n_c))
    prob = params.up_probabilities()
    pk, ck, up, keys = [], [], [], []
    for u in range(n_p):
        for c in range(n_c):
            draws = rng.random(obs_per_cell) < prob[u, c]
            for j, d in enumerate(draws):
                pk.append(players[u])
                ck.append(contexts[c])
                up.append(bool(d))
                keys.append(("planted", players[u], contexts[c], j))
    return DecisionNetwork.from_records(pk, ck, up, keys, player_order=players, context_order=contexts)


def planted_block_params(player_groups: Sequence[int], context_groups: Sequence[int], p: np.ndarray) -> MMSBMParams:
    p = np.asarray(p, dtype=float)
    return MMSBMParams(np.eye(p.shape[0])[list(player_groups)], np.eye(p.shape[1])[list(context_groups)], p)
