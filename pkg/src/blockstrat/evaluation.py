"""Cross-validation, representation comparison and (K, L) grid selection."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .contexts import ContextSchema, DecisionNetwork, build_network, default_player_key
from .ingest import PlayerHistory
from .mmsbm import FitConfig, FittedModel
from .mmsbm import fit as fit_mmsbm
from .sbm import AnnealConfig, FittedSBM, NaiveModel, anneal_fit

log = logging.getLogger(__name__)

THREADS_ENV = "BLOCKSTRAT_THREADS"


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(func: Callable, items: Sequence) -> list:
    """Ordered map, threaded when BLOCKSTRAT_THREADS > 1."""
    n = max_workers()
    if n == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


@dataclass(frozen=True)
class FoldSplit:
    n_folds: int
    seed: int
    fold_of: Mapping[tuple, int] = field(repr=False)

    def folds_for(self, network: DecisionNetwork) -> np.ndarray:
        """Fold label of every record of ``network``."""
        try:
            return np.array([self.fold_of[k] for k in network.record_keys], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"record {exc.args[0]} is not covered by the fold split") from None

    def sizes(self) -> np.ndarray:
        return np.bincount(np.fromiter(self.fold_of.values(), dtype=np.int64), minlength=self.n_folds)


def _record_owners(source) -> list[tuple[Hashable, tuple]]:
    if isinstance(source, DecisionNetwork):
        return [(source.players[p], k) for p, k in zip(source.record_player, source.record_keys)]
    return [(default_player_key(h), r.key) for h in source for r in h.records]


def kfold_split(source: DecisionNetwork | Iterable[PlayerHistory], n_folds: int, seed: int) -> FoldSplit:
    """Seeded partition of records into ``n_folds`` folds, stratified by player.

    Records are shuffled within each player and dealt round-robin over the
    concatenated player blocks, so global fold sizes differ by at most one and
    each player's records are spread as evenly as possible.
    """
    owners = _record_owners(source)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if len(owners) < n_folds:
        raise ValueError(f"{len(owners)} records cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    by_player: dict[Hashable, list[tuple]] = {}
    for player, key in owners:
        by_player.setdefault(player, []).append(key)
    ordered: list[tuple] = []
    for player in sorted(by_player, key=str):
        keys = sorted(by_player[player])
        ordered.extend(keys[j] for j in rng.permutation(len(keys)))
    labels = rng.permutation(n_folds)
    offset = int(rng.integers(n_folds))
    fold_of = {key: int(labels[(pos + offset) % n_folds]) for pos, key in enumerate(ordered)}
    return FoldSplit(n_folds=n_folds, seed=seed, fold_of=fold_of)


class Predictor:
    """Anything that maps a held-out network to boolean UP predictions."""

    def predict_network(self, network: DecisionNetwork) -> np.ndarray:  # pragma: no cover - protocol
        raise NotImplementedError


@dataclass(frozen=True)
class NaiveSpec:
    name: str = "naive"

    def train(self, network: DecisionNetwork) -> NaiveModel:
        return NaiveModel(network)


@dataclass(frozen=True)
class SBMSpec:
    K: int
    L: int
    config: AnnealConfig = field(default_factory=AnnealConfig)

    @property
    def name(self) -> str:
        return f"SBM({self.K},{self.L})"

    def train(self, network: DecisionNetwork) -> FittedSBM:
        K = min(self.K, network.n_players)
        L = min(self.L, network.n_contexts)
        partition, _ = anneal_fit(network, K, L, self.config)
        return FittedSBM.from_fit(network, partition)


@dataclass(frozen=True)
class MMSBMSpec:
    K: int
    L: int
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def name(self) -> str:
        return f"MMSBM({self.K},{self.L})"

    def train(self, network: DecisionNetwork) -> FittedModel:
        K = min(self.K, network.n_players)
        L = min(self.L, network.n_contexts)
        params, _ = fit_mmsbm(network, K, L, self.config)
        return FittedModel.from_fit(network, params, self.config)


def _as_network(data, schema: ContextSchema | str | None) -> DecisionNetwork:
    if isinstance(data, DecisionNetwork):
        return data
    if schema is None:
        raise ValueError("a schema is required when passing histories")
    return build_network(data, schema)


def cv_accuracy(
    data: Sequence[PlayerHistory] | DecisionNetwork,
    schema: ContextSchema | str | None,
    model,
    folds: FoldSplit,
) -> np.ndarray:
    """Per-fold accuracy of ``model`` on held-out records.

    For every fold the training network is rebuilt from the other folds'
    records only, the model is trained on it and each held-out record's guess
    is predicted. Folds with no held-out records get ``nan``.
    """
    network = _as_network(data, schema)
    labels = folds.folds_for(network)

    def one_fold(f: int) -> float:
        test_mask = labels == f
        if not test_mask.any():
            return float("nan")
        if test_mask.all():
            raise ValueError(f"fold {f} leaves no training records")
        train = network.subset(~test_mask)
        test = network.subset(test_mask)
        predictor = model.train(train)
        pred = np.asarray(predictor.predict_network(test), dtype=bool)
        return float(np.mean(pred == test.record_up))

    return np.array(_map(one_fold, list(range(folds.n_folds))))


def q_matrix(accuracies: Mapping[str, Sequence[float]]) -> tuple[list[str], np.ndarray]:
    """Mean per-fold log accuracy ratio between every pair of representations.

    Cells involving a zero (or missing) fold accuracy are ``nan``.
    """
    names = list(accuracies)
    acc = np.array([np.asarray(accuracies[n], dtype=float) for n in names])
    if acc.ndim != 2:
        raise ValueError("all accuracy vectors must have the same number of folds")
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(acc > 0, np.log(np.where(acc > 0, acc, 1.0)), np.nan)
    Q = (logs[:, None, :] - logs[None, :, :]).mean(axis=2)
    np.fill_diagonal(Q, 0.0)
    return names, Q


@dataclass
class EvalReport:
    schemas: list[str]
    n_folds: int
    seed: int
    models: list[str]
    accuracies: dict[str, dict[str, list[float]]]
    q_names: list[str] = field(default_factory=list)
    Q: np.ndarray | None = None
    grid: dict | None = None
    notes: list[str] = field(default_factory=list)

    def mean_accuracy(self, model: str, schema: str) -> float:
        return float(np.nanmean(self.accuracies[model][schema]))

    def to_json(self) -> dict:
        return {
            "schemas": self.schemas,
            "folds": {"n": self.n_folds, "seed": self.seed},
            "models": self.models,
            "accuracies": self.accuracies,
            "Q": None if self.Q is None else {"names": self.q_names, "matrix": self.Q},
            "grid": self.grid,
            "notes": self.notes,
        }


def compare(
    histories: Sequence[PlayerHistory],
    schemas: Sequence[ContextSchema],
    models: Sequence,
    n_folds: int = 5,
    seed: int = 0,
    q_model: str | None = None,
) -> EvalReport:
    """Evaluate every model on every schema over one shared record-level split.

    The Q matrix is computed across schemas for ``q_model`` (default: the
    last model given).
    """
    folds = kfold_split(histories, n_folds, seed)
    accuracies: dict[str, dict[str, list[float]]] = {m.name: {} for m in models}
    notes = []
    for schema in schemas:
        network = build_network(histories, schema)
        if network.skipped:
            notes.append(f"{schema.name}: {network.skipped} rounds without a defined context excluded")
        for m in models:
            acc = cv_accuracy(network, None, m, folds)
            accuracies[m.name][schema.name] = acc.tolist()
            log.info("%s %s: mean accuracy %.4f", schema.name, m.name, np.nanmean(acc))
    report = EvalReport(
        schemas=[s.name for s in schemas],
        n_folds=n_folds,
        seed=seed,
        models=[m.name for m in models],
        accuracies=accuracies,
        notes=notes,
    )
    q_model = q_model or models[-1].name
    if len(schemas) > 1:
        report.q_names, report.Q = q_matrix(accuracies[q_model])
    return report


def grid_select(
    data: Sequence[PlayerHistory] | DecisionNetwork,
    schema: ContextSchema | str | None,
    K_range: Iterable[int],
    L_range: Iterable[int],
    folds: FoldSplit,
    config: FitConfig | None = None,
    tie_tolerance: float = 0.005,
) -> tuple[int, int, dict]:
    """Pick (K, L) by mean CV accuracy of the MMSBM.

    Every cell within ``tie_tolerance`` (absolute accuracy) of the best mean
    counts as tied; among tied cells the smallest K + L wins, then the
    smallest K.
    """
    K_range, L_range = sorted(set(K_range)), sorted(set(L_range))
    if not K_range or not L_range:
        raise ValueError("K and L ranges must be non-empty")
    network = _as_network(data, schema)
    config = config or FitConfig()
    cells = [(K, L) for K in K_range for L in L_range]
    per_cell = [cv_accuracy(network, None, MMSBMSpec(K, L, config), folds) for K, L in cells]
    means = np.array([np.nanmean(a) for a in per_cell])
    best = means.max()
    tied = [c for c, m in zip(cells, means) if m >= best - tie_tolerance]
    K_star, L_star = min(tied, key=lambda c: (c[0] + c[1], c[0]))
    grid = {
        "K": K_range,
        "L": L_range,
        "mean_accuracy": [[float(means[cells.index((K, L))]) for L in L_range] for K in K_range],
        "fold_accuracy": {f"{K},{L}": a.tolist() for (K, L), a in zip(cells, per_cell)},
        "tie_tolerance": tie_tolerance,
        "selected": [K_star, L_star],
    }
    return K_star, L_star, grid


def config_dict(obj) -> dict:
    return asdict(obj) if obj is not None else {}
