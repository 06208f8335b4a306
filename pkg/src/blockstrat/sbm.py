"""Single-membership bipartite SBM fitted by simulated annealing, plus the
per-(player, context) majority baseline.

Block probabilities are profiled out: for a hard partition the best
``p[k, l]`` is the UP fraction of block ``(k, l)``, which leaves

    F = sum_kl  U log U + D log D - (U + D) log(U + D)

with ``U``/``D`` the UP/DOWN counts in the block.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable

import numba
import numpy as np

from .contexts import DecisionNetwork
from .ingest import Direction
from .mmsbm import MMSBMParams, _parse_context


@dataclass(frozen=True, eq=False)
class HardPartition:
    """Group index (0-based) of every player and every context."""

    group_of_player: np.ndarray
    group_of_context: np.ndarray
    K: int
    L: int

    def __post_init__(self):
        gp = np.asarray(self.group_of_player, dtype=np.int64)
        gc = np.asarray(self.group_of_context, dtype=np.int64)
        if gp.size and (gp.min() < 0 or gp.max() >= self.K):
            raise ValueError("player group outside 0..K-1")
        if gc.size and (gc.min() < 0 or gc.max() >= self.L):
            raise ValueError("context group outside 0..L-1")
        object.__setattr__(self, "group_of_player", gp)
        object.__setattr__(self, "group_of_context", gc)

    def block_counts(self, network: DecisionNetwork) -> tuple[np.ndarray, np.ndarray]:
        U = np.zeros((self.K, self.L))
        D = np.zeros((self.K, self.L))
        rows, cols = np.ix_(self.group_of_player, self.group_of_context)
        np.add.at(U, (rows, cols), network.n_up)
        np.add.at(D, (rows, cols), network.n_down)
        return U, D

    def block_probabilities(self, network: DecisionNetwork) -> np.ndarray:
        """Maximum-likelihood UP probability of every block; 0.5 for empty blocks."""
        U, D = self.block_counts(network)
        tot = U + D
        return np.where(tot > 0, U / np.where(tot > 0, tot, 1.0), 0.5)

    def to_params(self, network: DecisionNetwork) -> MMSBMParams:
        theta = np.eye(self.K)[self.group_of_player]
        eta = np.eye(self.L)[self.group_of_context]
        return MMSBMParams(theta, eta, self.block_probabilities(network))

    def canonical(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Group labels renumbered by first appearance (label-free identity)."""
        return _relabel(self.group_of_player), _relabel(self.group_of_context)


def _relabel(groups: np.ndarray) -> tuple[int, ...]:
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(int(g), len(seen)) for g in groups)


def _xlogx(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def profiled_objective(U: np.ndarray, D: np.ndarray) -> float:
    return float(np.sum(_xlogx(U) + _xlogx(D) - _xlogx(U + D)))


def partition_log_posterior(partition: HardPartition, network: DecisionNetwork) -> float:
    """Log-likelihood of the network with each block probability at its MLE."""
    if len(partition.group_of_player) != network.n_players or len(partition.group_of_context) != network.n_contexts:
        raise ValueError("partition does not cover the network's nodes")
    return profiled_objective(*partition.block_counts(network))


@dataclass
class AnnealConfig:
    initial_temperature: float | None = None  # None: calibrate from a probe
    cooling: float = 0.99
    sweeps_per_temperature: int = 10
    stop_temperature: float = 1e-4
    seed: int = 0
    probe_moves: int = 100

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.initial_temperature is not None:
            if self.initial_temperature <= 0:
                raise ValueError("initial temperature must be > 0")
            if self.stop_temperature >= self.initial_temperature:
                raise ValueError("stop temperature must be below the initial temperature")
        if self.sweeps_per_temperature < 1:
            raise ValueError("sweeps_per_temperature must be >= 1")


@dataclass
class AnnealDiagnostics:
    initial_objective: float
    best_objective: float
    final_objective: float
    initial_temperature: float
    temperatures: int
    moves: int
    accepted: int


@numba.njit(cache=True)
def _f(u, d):
    s = 0.0
    if u > 0:
        s += u * math.log(u)
    if d > 0:
        s += d * math.log(d)
    t = u + d
    if t > 0:
        s -= t * math.log(t)
    return s


@numba.njit(cache=True)
def _move_delta(side, node, new, n_up, n_down, gp, gc, U, D, a, b):
    """Objective change of moving ``node`` to group ``new``; fills ``a``/``b``
    with the node's UP/DOWN counts per opposite-side group."""
    a[:] = 0.0
    b[:] = 0.0
    if side == 0:
        old = gp[node]
        for c in range(n_up.shape[1]):
            a[gc[c]] += n_up[node, c]
            b[gc[c]] += n_down[node, c]
        delta = 0.0
        for l in range(U.shape[1]):
            if a[l] == 0 and b[l] == 0:
                continue
            delta += (_f(U[old, l] - a[l], D[old, l] - b[l]) + _f(U[new, l] + a[l], D[new, l] + b[l])
                      - _f(U[old, l], D[old, l]) - _f(U[new, l], D[new, l]))
        return delta
    old = gc[node]
    for p in range(n_up.shape[0]):
        a[gp[p]] += n_up[p, node]
        b[gp[p]] += n_down[p, node]
    delta = 0.0
    for k in range(U.shape[0]):
        if a[k] == 0 and b[k] == 0:
            continue
        delta += (_f(U[k, old] - a[k], D[k, old] - b[k]) + _f(U[k, new] + a[k], D[k, new] + b[k])
                  - _f(U[k, old], D[k, old]) - _f(U[k, new], D[k, new]))
    return delta


@numba.njit(cache=True)
def _apply(side, node, new, gp, gc, U, D, a, b):
    if side == 0:
        old = gp[node]
        for l in range(U.shape[1]):
            U[old, l] -= a[l]
            D[old, l] -= b[l]
            U[new, l] += a[l]
            D[new, l] += b[l]
        gp[node] = new
    else:
        old = gc[node]
        for k in range(U.shape[0]):
            U[k, old] -= a[k]
            D[k, old] -= b[k]
            U[k, new] += a[k]
            D[k, new] += b[k]
        gc[node] = new


@numba.njit(cache=True)
def _propose(P, C, K, L):
    # single-node move to a different group; side -1 when no move exists
    n_movable = (P if K > 1 else 0) + (C if L > 1 else 0)
    if n_movable == 0:
        return -1, 0, 0
    j = np.random.randint(n_movable)
    if K > 1 and j < P:
        side, node, ng = 0, j, K
    else:
        side, node, ng = 1, j - (P if K > 1 else 0), L
    new = np.random.randint(ng - 1)
    return side, node, new


@numba.njit(cache=True)
def _anneal(n_up, n_down, gp, gc, K, L, seed, T0, cooling, sweeps, T_stop, probe_moves):
    np.random.seed(seed)
    P, C = n_up.shape
    U = np.zeros((K, L))
    D = np.zeros((K, L))
    for p in range(P):
        for c in range(C):
            U[gp[p], gc[c]] += n_up[p, c]
            D[gp[p], gc[c]] += n_down[p, c]
    F = 0.0
    for k in range(K):
        for l in range(L):
            F += _f(U[k, l], D[k, l])
    a = np.zeros(max(K, L))
    b = np.zeros(max(K, L))

    if T0 <= 0.0:
        # temperature at which an average worsening move is accepted half the time
        tot, cnt = 0.0, 0
        for _ in range(probe_moves):
            side, node, new = _propose(P, C, K, L)
            if side < 0:
                break
            cur = gp[node] if side == 0 else gc[node]
            if new >= cur:
                new += 1
            d = _move_delta(side, node, new, n_up, n_down, gp, gc, U[:K, :L], D[:K, :L], a, b)
            if d < 0:
                tot -= d
                cnt += 1
        T0 = (tot / cnt) / math.log(2.0) if cnt > 0 else 1.0
        if T0 <= T_stop:
            T0 = 10.0 * T_stop

    best_F = F
    best_gp = gp.copy()
    best_gc = gc.copy()
    moves_per_T = sweeps * (P + C)
    T = T0
    n_temps = 0
    n_moves = 0
    n_acc = 0
    while T > T_stop:
        for _ in range(moves_per_T):
            side, node, new = _propose(P, C, K, L)
            if side < 0:
                break
            cur = gp[node] if side == 0 else gc[node]
            if new >= cur:
                new += 1
            d = _move_delta(side, node, new, n_up, n_down, gp, gc, U, D, a, b)
            n_moves += 1
            if d >= 0 or np.random.random() < math.exp(d / T):
                _apply(side, node, new, gp, gc, U, D, a, b)
                F += d
                n_acc += 1
                if F > best_F + 1e-12:
                    best_F = F
                    best_gp[:] = gp
                    best_gc[:] = gc
        T *= cooling
        n_temps += 1
    return best_gp, best_gc, T0, n_temps, n_moves, n_acc


def anneal_fit(
    network: DecisionNetwork,
    K: int,
    L: int,
    config: AnnealConfig | None = None,
    init: HardPartition | None = None,
) -> tuple[HardPartition, AnnealDiagnostics]:
    """Metropolis single-node reassignment with geometric cooling.

    Returns the best partition visited.
    """
    config = config or AnnealConfig()
    if not 1 <= K <= network.n_players:
        raise ValueError(f"K={K} must lie in 1..{network.n_players}")
    if not 1 <= L <= network.n_contexts:
        raise ValueError(f"L={L} must lie in 1..{network.n_contexts}")
    seeds = np.random.SeedSequence(config.seed).generate_state(2)
    if init is None:
        rng = np.random.default_rng(seeds[0])
        init = HardPartition(
            rng.integers(K, size=network.n_players), rng.integers(L, size=network.n_contexts), K, L
        )
    elif (init.K, init.L) != (K, L):
        raise ValueError("initial partition has different K/L")
    start = partition_log_posterior(init, network)
    gp, gc, T0, n_temps, n_moves, n_acc = _anneal(
        network.n_up.astype(np.float64),
        network.n_down.astype(np.float64),
        init.group_of_player.copy(),
        init.group_of_context.copy(),
        K,
        L,
        int(seeds[1]),
        float(config.initial_temperature or 0.0),
        float(config.cooling),
        int(config.sweeps_per_temperature),
        float(config.stop_temperature),
        int(config.probe_moves),
    )
    best = HardPartition(gp, gc, K, L)
    best_obj = partition_log_posterior(best, network)
    if best_obj < start:
        best, best_obj = init, start
    return best, AnnealDiagnostics(
        initial_objective=start,
        best_objective=best_obj,
        final_objective=best_obj,
        initial_temperature=float(T0),
        temperatures=int(n_temps),
        moves=int(n_moves),
        accepted=int(n_acc),
    )


@dataclass
class FittedSBM:
    partition: HardPartition
    players: tuple[Hashable, ...]
    contexts: tuple[Hashable, ...]
    block_p: np.ndarray
    log_posterior: float = float("nan")
    _ppos: dict = field(default=None, repr=False)
    _cpos: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._ppos = {p: i for i, p in enumerate(self.players)}
        self._cpos = {c: i for i, c in enumerate(self.contexts)}

    @classmethod
    def from_fit(cls, network: DecisionNetwork, partition: HardPartition) -> "FittedSBM":
        return cls(
            partition=partition,
            players=network.players,
            contexts=network.contexts,
            block_p=partition.block_probabilities(network),
            log_posterior=partition_log_posterior(partition, network),
        )

    def predict(self, player: Hashable, context: Hashable) -> tuple[Direction, bool]:
        u, i = self._ppos.get(player), self._cpos.get(context)
        if u is None or i is None:
            return Direction.UP, True
        pr = self.block_p[self.partition.group_of_player[u], self.partition.group_of_context[i]]
        return (Direction.UP if pr >= 0.5 else Direction.DOWN), False

    def predict_network(self, network: DecisionNetwork) -> np.ndarray:
        gp = np.array([self.partition.group_of_player[self._ppos[p]] if p in self._ppos else -1 for p in network.players], dtype=np.int64)
        gc = np.array([self.partition.group_of_context[self._cpos[c]] if c in self._cpos else -1 for c in network.contexts], dtype=np.int64)
        rk, rl = gp[network.record_player], gc[network.record_context]
        known = (rk >= 0) & (rl >= 0)
        out = np.ones(network.n_records, dtype=bool)
        out[known] = self.block_p[rk[known], rl[known]] >= 0.5
        return out

    def to_json(self) -> dict:
        return {
            "K": self.partition.K,
            "L": self.partition.L,
            "group_of_player": {str(p): int(g) for p, g in zip(self.players, self.partition.group_of_player)},
            "group_of_context": {str(c): int(g) for c, g in zip(self.contexts, self.partition.group_of_context)},
        }

    @classmethod
    def from_json(cls, doc: dict, network: DecisionNetwork | None = None) -> "FittedSBM":
        players = tuple(doc["group_of_player"])
        contexts = tuple(_parse_context(c) for c in doc["group_of_context"])
        part = HardPartition(list(doc["group_of_player"].values()), list(doc["group_of_context"].values()), doc["K"], doc["L"])
        if network is not None:
            return cls.from_fit(network, part)
        return cls(part, players, contexts, np.full((part.K, part.L), 0.5))

    def save(self, path) -> None:
        from .io import write_json

        write_json(path, self.to_json())

    @classmethod
    def load(cls, path, network: DecisionNetwork | None = None) -> "FittedSBM":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), network)


class NaiveModel:
    """Majority guess of each (player, context) pair in training; UP when the
    pair is unseen or tied."""

    def __init__(self, network: DecisionNetwork):
        self.players = network.players
        self.contexts = network.contexts
        self._ppos = {p: i for i, p in enumerate(network.players)}
        self._cpos = {c: i for i, c in enumerate(network.contexts)}
        self.majority_up = network.n_up >= network.n_down

    def predict(self, player: Hashable, context: Hashable) -> Direction:
        u, i = self._ppos.get(player), self._cpos.get(context)
        if u is None or i is None:
            return Direction.UP
        return Direction.UP if self.majority_up[u, i] else Direction.DOWN

    def predict_network(self, network: DecisionNetwork) -> np.ndarray:
        pmap = np.array([self._ppos.get(p, -1) for p in network.players], dtype=np.int64)
        cmap = np.array([self._cpos.get(c, -1) for c in network.contexts], dtype=np.int64)
        rp, rc = pmap[network.record_player], cmap[network.record_context]
        known = (rp >= 0) & (rc >= 0)
        out = np.ones(network.n_records, dtype=bool)
        out[known] = self.majority_up[rp[known], rc[known]]
        return out


def naive_predict(train: DecisionNetwork, player: Hashable, context: Hashable) -> Direction:
    return NaiveModel(train).predict(player, context)
