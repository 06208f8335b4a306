"""Bipartite mixed-membership stochastic block model fitted by EM.

Players ``u`` carry memberships ``theta[u, k]`` over ``K`` groups, contexts
``i`` carry ``eta[i, l]`` over ``L`` groups, and ``p[k, l]`` is the
probability that a player of group ``k`` guesses UP in a context of group
``l``. Under a flat prior the MAP estimate maximises

    sum_(u,i) n_up[u,i] log P(UP|u,i) + n_down[u,i] log P(DOWN|u,i),
    P(UP|u,i) = sum_kl theta[u,k] p[k,l] eta[i,l].
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .contexts import ContextKey, DecisionNetwork
from .ingest import Direction

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass(frozen=True, eq=False)
class MMSBMParams:
    theta: np.ndarray
    eta: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        theta, eta, p = (np.asarray(a, dtype=float) for a in (self.theta, self.eta, self.p))
        if theta.ndim != 2 or eta.ndim != 2 or p.shape != (theta.shape[1], eta.shape[1]):
            raise ValueError(
                f"inconsistent shapes theta{theta.shape} eta{eta.shape} p{p.shape}"
            )
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "p", p)

    @property
    def K(self) -> int:
        return self.theta.shape[1]

    @property
    def L(self) -> int:
        return self.eta.shape[1]

    def check(self, atol: float = 1e-9) -> None:
        """Raise ``ValueError`` if memberships are not row-stochastic or any
        entry falls outside [0, 1]."""
        for name, m in (("theta", self.theta), ("eta", self.eta), ("p", self.p)):
            if np.any(m < -atol) or np.any(m > 1 + atol):
                raise ValueError(f"{name} has entries outside [0, 1]")
        for name, m in (("theta", self.theta), ("eta", self.eta)):
            if not np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=atol):
                raise ValueError(f"{name} rows do not sum to 1")

    def permuted(self, player_perm: Sequence[int], context_perm: Sequence[int]) -> "MMSBMParams":
        """Relabel groups; ``player_perm[k]`` is the old index of new group k."""
        pp, cp = np.asarray(player_perm), np.asarray(context_perm)
        return MMSBMParams(self.theta[:, pp], self.eta[:, cp], self.p[np.ix_(pp, cp)])

    def up_probabilities(self) -> np.ndarray:
        """Matrix of P(UP) for every (player, context) pair."""
        return self.theta @ self.p @ self.eta.T


def random_params(n_players: int, n_contexts: int, K: int, L: int, rng: np.random.Generator) -> MMSBMParams:
    """Membership rows uniform on the simplex, ``p`` uniform on [0, 1]."""
    return MMSBMParams(
        theta=rng.dirichlet(np.ones(K), size=n_players),
        eta=rng.dirichlet(np.ones(L), size=n_contexts),
        p=rng.random((K, L)),
    )


def link_probability(params: MMSBMParams, player: int, context: int, guess: Direction | str = Direction.UP) -> float:
    n_p, n_c = params.theta.shape[0], params.eta.shape[0]
    if not (0 <= player < n_p and 0 <= context < n_c):
        raise IndexError(f"(player={player}, context={context}) outside {n_p}x{n_c}")
    up = float(params.theta[player] @ params.p @ params.eta[context])
    return up if Direction(guess) is Direction.UP else float(params.theta[player] @ (1.0 - params.p) @ params.eta[context])


def _check_dims(params: MMSBMParams, network: DecisionNetwork) -> None:
    if params.theta.shape[0] != network.n_players or params.eta.shape[0] != network.n_contexts:
        raise ValueError(
            f"params are for {params.theta.shape[0]} players x {params.eta.shape[0]} contexts, "
            f"network has {network.n_players} x {network.n_contexts}"
        )


def log_posterior(params: MMSBMParams, network: DecisionNetwork, eps: float = EPS) -> float:
    """Log-likelihood of the network counts (flat prior, so log posterior up to
    a constant). Probabilities are clamped to ``[eps, 1 - eps]`` inside the logs."""
    _check_dims(params, network)
    pu = np.clip(params.up_probabilities(), eps, 1.0 - eps)
    pd = np.clip(params.theta @ (1.0 - params.p) @ params.eta.T, eps, 1.0 - eps)
    return float(np.sum(network.n_up * np.log(pu)) + np.sum(network.n_down * np.log(pd)))


class _Observations:
    """Dense count matrices and node degrees of a network."""

    def __init__(self, network: DecisionNetwork):
        self.n_up = network.n_up.astype(float)
        self.n_down = network.n_down.astype(float)
        self.d_u = (self.n_up + self.n_down).sum(axis=1)
        self.d_i = (self.n_up + self.n_down).sum(axis=0)
        if np.any(self.d_u == 0) or np.any(self.d_i == 0):
            raise ValueError("network has a player or context with no observations")


def responsibilities(params: MMSBMParams, network: DecisionNetwork) -> dict[tuple[int, int, bool], np.ndarray]:
    """E-step posterior over group pairs for each observed (player, context,
    guess) triple; each value is a K x L matrix summing to one."""
    _check_dims(params, network)
    u, i, r, _ = network.observations()
    p_r = np.where(r[:, None, None], params.p[None], 1.0 - params.p[None])
    omega = params.theta[u][:, :, None] * p_r * params.eta[i][:, None, :]
    omega /= omega.sum(axis=(1, 2))[:, None, None]
    return {(int(a), int(b), bool(c)): w for a, b, c, w in zip(u, i, r, omega)}


def _ratio(n: np.ndarray, prob: np.ndarray) -> np.ndarray:
    return np.where(n > 0, n / np.where(prob > 0, prob, 1.0), 0.0) * (prob > 0)


def _em_update(params: MMSBMParams, obs: _Observations) -> MMSBMParams:
    # With omega[u,i,r](k,l) = theta[u,k] p_r[k,l] eta[i,l] / P_r(u,i), every
    # count-weighted sum of omega factorises through W_r = n_r / P_r.
    theta, eta, p = params.theta, params.eta, params.p
    q = 1.0 - p
    w_up = _ratio(obs.n_up, theta @ p @ eta.T)
    w_dn = _ratio(obs.n_down, theta @ q @ eta.T)

    theta_new = theta * ((w_up @ eta) @ p.T + (w_dn @ eta) @ q.T) / obs.d_u[:, None]
    eta_new = eta * ((w_up.T @ theta) @ p + (w_dn.T @ theta) @ q) / obs.d_i[:, None]
    up_mass = p * (theta.T @ w_up @ eta)
    mass = up_mass + q * (theta.T @ w_dn @ eta)
    # cells with no mass keep their value; they do not enter the likelihood
    p_new = np.where(mass > 0, up_mass / np.where(mass > 0, mass, 1.0), p)
    return MMSBMParams(theta_new, eta_new, p_new)


def em_step(params: MMSBMParams, network: DecisionNetwork) -> tuple[MMSBMParams, float]:
    """One E-step followed by one M-step; returns the new params and their
    log posterior."""
    _check_dims(params, network)
    new = _em_update(params, _Observations(network))
    return new, log_posterior(new, network)


@dataclass
class FitConfig:
    max_iterations: int = 1000
    rel_tolerance: float = 1e-8
    restarts: int = 10
    seed: int = 0
    eps: float = EPS

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class RunTrace:
    seed: int
    log_posteriors: list[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.log_posteriors) - 1

    @property
    def final(self) -> float:
        return self.log_posteriors[-1]


@dataclass
class FitDiagnostics:
    runs: list[RunTrace]
    best_run: int
    K: int
    L: int

    @property
    def converged(self) -> bool:
        return self.runs[self.best_run].converged


def run_em(
    network: DecisionNetwork,
    init: MMSBMParams,
    max_iterations: int = 1000,
    rel_tolerance: float = 1e-8,
    eps: float = EPS,
) -> tuple[MMSBMParams, list[float], bool]:
    """Iterate EM from ``init`` until the relative change of the objective
    drops below ``rel_tolerance``."""
    _check_dims(init, network)
    obs = _Observations(network)
    params = init
    trace = [log_posterior(params, network, eps)]
    converged = False
    for _ in range(max_iterations):
        params = _em_update(params, obs)
        trace.append(log_posterior(params, network, eps))
        prev, cur = trace[-2], trace[-1]
        if abs(cur - prev) <= rel_tolerance * max(abs(prev), 1e-300):
            converged = True
            break
    return params, trace, converged


def fit(network: DecisionNetwork, K: int, L: int, config: FitConfig | None = None) -> tuple[MMSBMParams, FitDiagnostics]:
    """Best of ``config.restarts`` EM runs from random initialisations."""
    config = config or FitConfig()
    if K < 1 or L < 1:
        raise ValueError("K and L must be >= 1")
    if network.n_records == 0:
        raise ValueError("cannot fit an empty network")
    if K > network.n_players:
        warnings.warn(f"K={K} exceeds {network.n_players} players; clamping", stacklevel=2)
        K = network.n_players
    if L > network.n_contexts:
        warnings.warn(f"L={L} exceeds {network.n_contexts} contexts; clamping", stacklevel=2)
        L = network.n_contexts

    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    best, best_lp, best_idx = None, -np.inf, 0
    runs = []
    for idx, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        init = random_params(network.n_players, network.n_contexts, K, L, rng)
        params, trace, converged = run_em(
            network, init, config.max_iterations, config.rel_tolerance, config.eps
        )
        runs.append(RunTrace(seed=int(ss.generate_state(1)[0]), log_posteriors=trace, converged=converged))
        if trace[-1] > best_lp:
            best, best_lp, best_idx = params, trace[-1], idx
        log.debug("restart %d: log posterior %.6f after %d iterations", idx, trace[-1], len(trace) - 1)
    return best, FitDiagnostics(runs=runs, best_run=best_idx, K=K, L=L)


def predict_up(up_probability: float) -> Direction:
    return Direction.UP if up_probability >= 0.5 else Direction.DOWN


def predict(params: MMSBMParams, player: int | None, context: int | None) -> tuple[Direction, bool]:
    """Predicted guess and whether the global UP fallback was used.

    ``None`` (or an out-of-range index) for the player or context means the
    node was never observed in training.
    """
    n_p, n_c = params.theta.shape[0], params.eta.shape[0]
    if player is None or context is None or not (0 <= player < n_p and 0 <= context < n_c):
        return Direction.UP, True
    return predict_up(link_probability(params, player, context)), False


@dataclass
class FittedModel:
    """MMSBM parameters bound to the node labels of the network they were fit on."""

    params: MMSBMParams
    players: tuple[Hashable, ...]
    contexts: tuple[Hashable, ...]
    config: dict = field(default_factory=dict)
    final_log_posterior: float = float("nan")

    def __post_init__(self):
        self._ppos = {p: i for i, p in enumerate(self.players)}
        self._cpos = {c: i for i, c in enumerate(self.contexts)}

    @classmethod
    def from_fit(cls, network: DecisionNetwork, params: MMSBMParams, config: FitConfig | None = None) -> "FittedModel":
        return cls(
            params=params,
            players=network.players,
            contexts=network.contexts,
            config=asdict(config) if config is not None else {},
            final_log_posterior=log_posterior(params, network),
        )

    def predict(self, player: Hashable, context: Hashable) -> tuple[Direction, bool]:
        return predict(self.params, self._ppos.get(player), self._cpos.get(context))

    def predict_network(self, network: DecisionNetwork) -> np.ndarray:
        """Boolean UP predictions for every record of ``network``."""
        up = self.params.up_probabilities() >= 0.5
        pmap = np.array([self._ppos.get(p, -1) for p in network.players], dtype=np.int64)
        cmap = np.array([self._cpos.get(c, -1) for c in network.contexts], dtype=np.int64)
        rp, rc = pmap[network.record_player], cmap[network.record_context]
        known = (rp >= 0) & (rc >= 0)
        out = np.ones(network.n_records, dtype=bool)
        out[known] = up[rp[known], rc[known]]
        return out

    def to_json(self) -> dict:
        return {
            "K": self.params.K,
            "L": self.params.L,
            "theta": self.params.theta.tolist(),
            "eta": self.params.eta.tolist(),
            "p": self.params.p.tolist(),
            "player_index": [str(p) for p in self.players],
            "context_index": [str(c) for c in self.contexts],
            "config": self.config,
            "final_log_posterior": self.final_log_posterior,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FittedModel":
        params = MMSBMParams(np.array(doc["theta"]), np.array(doc["eta"]), np.array(doc["p"]))
        if params.K != doc["K"] or params.L != doc["L"]:
            raise ValueError("K/L do not match array shapes")
        contexts = tuple(_parse_context(c) for c in doc["context_index"])
        return cls(
            params=params,
            players=tuple(doc["player_index"]),
            contexts=contexts,
            config=doc.get("config", {}),
            final_log_posterior=doc.get("final_log_posterior", float("nan")),
        )

    def save(self, path) -> None:
        from .io import write_json

        write_json(path, self.to_json())

    @classmethod
    def load(cls, path) -> "FittedModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _parse_context(label: str):
    if "=" in label:
        try:
            return ContextKey.from_label(label)
        except ValueError:
            pass
    return label
