"""Context schemas and the bipartite player x context decision network.

A context is the bundle of information a player sees before guessing at
round ``t``. Features are identified by single-letter tags:

====  =====================================================  ======
tag   meaning                                                values
====  =====================================================  ======
A     player's own guess at t-1                              UP, DOWN
B     market move at t-1                                     UP, DOWN
C     outcome of the guess at t-1                            RIGHT, WRONG
D     expert consulted at t                                  YES, NO
E     expert advice at t                                     UP, NONE, DOWN
F     majority market move over rounds t-5..t-1              UP, DOWN
G     majority market move over rounds 1..t-1                UP, DOWN
H     market move at t-2                                     UP, DOWN
I     outcome of the guess at t-2                            RIGHT, WRONG
====  =====================================================  ======

Majority trends break ties toward UP.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .ingest import Direction, Outcome, PlayerHistory

FEATURE_VALUES: dict[str, tuple[str, ...]] = {
    "A": ("UP", "DOWN"),
    "B": ("UP", "DOWN"),
    "C": ("RIGHT", "WRONG"),
    "D": ("YES", "NO"),
    "E": ("UP", "NONE", "DOWN"),
    "F": ("UP", "DOWN"),
    "G": ("UP", "DOWN"),
    "H": ("UP", "DOWN"),
    "I": ("RIGHT", "WRONG"),
}
FEATURE_TAGS = tuple(FEATURE_VALUES)
NOT_CONSULTED = "NONE"
TREND_WINDOW = 5
MAX_CONTEXTS = 64


def arity(tag: str) -> int:
    return len(FEATURE_VALUES[tag])


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ContextSchema:
    tags: tuple[str, ...]

    def __post_init__(self):
        tags = tuple(self.tags)
        object.__setattr__(self, "tags", tags)
        bad = [t for t in tags if t not in FEATURE_VALUES]
        if bad:
            raise SchemaError(f"unknown feature tag(s) {bad}; valid tags are {''.join(FEATURE_TAGS)}")
        if len(set(tags)) != len(tags):
            raise SchemaError(f"repeated tag in schema {''.join(tags)}")
        n = self.n_contexts
        if n < 2:
            raise SchemaError("a schema must define at least 2 contexts")
        if n > MAX_CONTEXTS:
            raise SchemaError(f"schema {self.name} defines {n} contexts (ceiling {MAX_CONTEXTS})")

    @classmethod
    def parse(cls, text: str) -> "ContextSchema":
        text = text.strip().upper()
        if not text:
            raise SchemaError("empty schema")
        return cls(tuple(text))

    @property
    def name(self) -> str:
        return "".join(self.tags)

    @property
    def n_contexts(self) -> int:
        return int(np.prod([arity(t) for t in self.tags]))

    def all_keys(self) -> list["ContextKey"]:
        """Every possible key of this schema in canonical order."""
        keys = [()]
        for tag in self.tags:
            keys = [k + (v,) for k in keys for v in FEATURE_VALUES[tag]]
        return [ContextKey(self, k) for k in keys]

    def key(self, features: dict[str, str | None]) -> "ContextKey | None":
        values = tuple(features.get(t) for t in self.tags)
        if any(v is None for v in values):
            return None
        return ContextKey(self, values)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=False)
class ContextKey:
    schema: ContextSchema
    values: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.schema.tags):
            raise SchemaError("context key length does not match schema")
        for tag, v in zip(self.schema.tags, self.values):
            if v not in FEATURE_VALUES[tag]:
                raise SchemaError(f"value {v!r} outside the domain of feature {tag}")

    def __getitem__(self, tag: str) -> str:
        return self.values[self.schema.tags.index(tag)]

    def get(self, tag: str, default=None):
        return self[tag] if tag in self.schema.tags else default

    def sort_key(self) -> tuple[int, ...]:
        return tuple(FEATURE_VALUES[t].index(v) for t, v in zip(self.schema.tags, self.values))

    @property
    def label(self) -> str:
        return "|".join(f"{t}={v}" for t, v in zip(self.schema.tags, self.values))

    @classmethod
    def from_label(cls, label: str) -> "ContextKey":
        pairs = [p.split("=", 1) for p in label.split("|")]
        schema = ContextSchema(tuple(t for t, _ in pairs))
        return cls(schema, tuple(v for _, v in pairs))

    def __str__(self) -> str:
        return self.label


def _majority(moves: Sequence[Direction]) -> str:
    ups = sum(m is Direction.UP for m in moves)
    return "UP" if 2 * ups >= len(moves) else "DOWN"


def derive_features(history: PlayerHistory, t: int) -> dict[str, str | None]:
    """Values of all nine features at round ``t``; ``None`` marks UNDEFINED."""
    if not 1 <= t <= len(history):
        raise IndexError(f"round {t} outside 1..{len(history)}")
    cur = history.record(t)
    feats: dict[str, str | None] = dict.fromkeys(FEATURE_TAGS)
    feats["D"] = "YES" if cur.expert_consulted else "NO"
    feats["E"] = cur.expert_advice.value if cur.expert_advice is not None else NOT_CONSULTED
    if t >= 2:
        prev = history.record(t - 1)
        feats["B"] = prev.market_move.value
        feats["C"] = prev.outcome.value
        # own previous guess is fixed by market move and outcome
        feats["A"] = (
            prev.market_move.value
            if prev.outcome is Outcome.RIGHT
            else prev.market_move.flip().value
        )
        feats["G"] = _majority([r.market_move for r in history.records[: t - 1]])
    if t >= 3:
        prev2 = history.record(t - 2)
        feats["H"] = prev2.market_move.value
        feats["I"] = prev2.outcome.value
    if t > TREND_WINDOW:
        feats["F"] = _majority([r.market_move for r in history.records[t - 1 - TREND_WINDOW: t - 1]])
    return feats


def default_player_key(history: PlayerHistory) -> str:
    return f"{history.session_id}/{history.player_id}"


@dataclass(frozen=True, eq=False)
class DecisionNetwork:
    """Bipartite network with up/down guess counts per (player, context).

    ``record_*`` arrays keep one entry per usable round so that networks can
    be split into folds and rebuilt.
    """

    players: tuple[Hashable, ...]
    contexts: tuple[Hashable, ...]
    n_up: np.ndarray
    n_down: np.ndarray
    record_player: np.ndarray
    record_context: np.ndarray
    record_up: np.ndarray
    record_keys: tuple[tuple, ...]
    skipped: int = 0
    schema: ContextSchema | None = None
    _player_pos: dict = field(default=None, repr=False, compare=False)
    _context_pos: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_player_pos", {p: i for i, p in enumerate(self.players)})
        object.__setattr__(self, "_context_pos", {c: i for i, c in enumerate(self.contexts)})
        for arr in (self.n_up, self.n_down, self.record_player, self.record_context, self.record_up):
            arr.flags.writeable = False

    @classmethod
    def from_records(
        cls,
        record_player_keys: Sequence[Hashable],
        record_context_keys: Sequence[Hashable],
        record_up: Sequence[bool],
        record_keys: Sequence[tuple],
        *,
        skipped: int = 0,
        schema: ContextSchema | None = None,
        player_order: Sequence[Hashable] | None = None,
        context_order: Sequence[Hashable] | None = None,
    ) -> "DecisionNetwork":
        """Tally records into a network. Only nodes with records are kept."""
        seen_p = set(record_player_keys)
        seen_c = set(record_context_keys)
        if player_order is None:
            players = tuple(sorted(seen_p, key=_node_sort_key))
        else:
            players = tuple(p for p in player_order if p in seen_p)
        if context_order is None:
            contexts = tuple(sorted(seen_c, key=_node_sort_key))
        else:
            contexts = tuple(c for c in context_order if c in seen_c)
        ppos = {p: i for i, p in enumerate(players)}
        cpos = {c: i for i, c in enumerate(contexts)}
        rp = np.array([ppos[p] for p in record_player_keys], dtype=np.int64)
        rc = np.array([cpos[c] for c in record_context_keys], dtype=np.int64)
        ru = np.asarray(record_up, dtype=bool).reshape(-1)
        n_up = np.zeros((len(players), len(contexts)), dtype=np.int64)
        n_down = np.zeros_like(n_up)
        np.add.at(n_up, (rp[ru], rc[ru]), 1)
        np.add.at(n_down, (rp[~ru], rc[~ru]), 1)
        return cls(
            players=players,
            contexts=contexts,
            n_up=n_up,
            n_down=n_down,
            record_player=rp,
            record_context=rc,
            record_up=ru,
            record_keys=tuple(tuple(k) for k in record_keys),
            skipped=skipped,
            schema=schema,
        )

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def n_contexts(self) -> int:
        return len(self.contexts)

    @property
    def n_records(self) -> int:
        return len(self.record_keys)

    @property
    def counts(self) -> np.ndarray:
        return self.n_up + self.n_down

    def player_index(self, key: Hashable) -> int | None:
        return self._player_pos.get(key)

    def context_index(self, key: Hashable) -> int | None:
        return self._context_pos.get(key)

    def subset(self, mask: np.ndarray) -> "DecisionNetwork":
        """Network built from the records selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        return DecisionNetwork.from_records(
            [self.players[i] for i in self.record_player[idx]],
            [self.contexts[i] for i in self.record_context[idx]],
            self.record_up[idx],
            [self.record_keys[i] for i in idx],
            schema=self.schema,
            player_order=self.players,
            context_order=self.contexts,
        )

    def observations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Aggregated observations ``(player, context, is_up, multiplicity)``.

        One entry per non-zero (player, context, guess) count.
        """
        up_p, up_c = np.nonzero(self.n_up)
        dn_p, dn_c = np.nonzero(self.n_down)
        u = np.concatenate([up_p, dn_p])
        i = np.concatenate([up_c, dn_c])
        r = np.concatenate([np.ones(len(up_p), bool), np.zeros(len(dn_p), bool)])
        n = np.concatenate([self.n_up[up_p, up_c], self.n_down[dn_p, dn_c]]).astype(float)
        return u, i, r, n


def _node_sort_key(key):
    if isinstance(key, ContextKey):
        return (0, key.sort_key())
    return (1, str(key))


def network_records(histories: Iterable[PlayerHistory], schema: ContextSchema):
    """Rows ``(player_key, context_key, is_up, record_key)`` for usable rounds,
    plus the number of skipped rounds."""
    rows = []
    skipped = 0
    for hist in histories:
        pkey = default_player_key(hist)
        for t in range(1, len(hist) + 1):
            ctx = schema.key(derive_features(hist, t))
            if ctx is None:
                skipped += 1
                continue
            rec = hist.record(t)
            rows.append((pkey, ctx, rec.guess is Direction.UP, rec.key))
    return rows, skipped


def build_network(histories: Iterable[PlayerHistory], schema: ContextSchema | str) -> DecisionNetwork:
    """Tally each usable round of every history into a player x context network.

    Rounds where any schema feature is undefined are skipped and counted in
    ``DecisionNetwork.skipped``.
    """
    if isinstance(schema, str):
        schema = ContextSchema.parse(schema)
    rows, skipped = network_records(histories, schema)
    if not rows:
        return DecisionNetwork.from_records([], [], [], [], skipped=skipped, schema=schema)
    pk, ck, up, keys = zip(*rows)
    return DecisionNetwork.from_records(pk, ck, up, keys, skipped=skipped, schema=schema)


# All subsets of {B, C, E}, then extensions with the remaining features.
DEFAULT_SCHEMA_SPEC = (
    "B", "C", "E", "BC", "BE", "CE", "BCE",
    "A", "AE", "AB", "ABCE", "BCDE",
    "BD", "CD", "BCD",
    "BCF", "BCG", "BCH", "BCI",
    "BCEF", "BCEG", "BCEH", "BCEI",
)


def enumerate_schemas(spec: Iterable[str | Sequence[str]]) -> list[ContextSchema]:
    """Validate a list of tag strings (or tag lists) into schemas, keeping order."""
    schemas = []
    seen = set()
    for item in spec:
        schema = ContextSchema.parse(item) if isinstance(item, str) else ContextSchema(tuple(item))
        canon = frozenset(schema.tags)
        if canon in seen:
            raise SchemaError(f"duplicate schema {schema.name}")
        seen.add(canon)
        schemas.append(schema)
    return schemas


def default_schemas() -> list[ContextSchema]:
    return enumerate_schemas(DEFAULT_SCHEMA_SPEC)


def read_schema_file(path) -> list[ContextSchema]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    return enumerate_schemas([ln for ln in lines if ln])


def context_tally(network: DecisionNetwork) -> Counter:
    """Total observations per context key."""
    totals = network.counts.sum(axis=0)
    return Counter({c: int(n) for c, n in zip(network.contexts, totals)})
