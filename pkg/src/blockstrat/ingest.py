"""Parsing and validation of market-guessing experiment logs.

The log is a CSV with one row per (session, player, round) observation::

    session_id,player_id,round,guess,market_move,expert_consulted,expert_advice
    s1,p7,3,UP,DOWN,true,UP
"""

from __future__ import annotations

import csv
import enum
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, TextIO

HEADER = (
    "session_id",
    "player_id",
    "round",
    "guess",
    "market_move",
    "expert_consulted",
    "expert_advice",
)

MAX_ROUNDS = 25


class Direction(str, enum.Enum):
    UP = "UP"
    DOWN = "DOWN"

    def flip(self) -> "Direction":
        return Direction.DOWN if self is Direction.UP else Direction.UP


class Outcome(str, enum.Enum):
    RIGHT = "RIGHT"
    WRONG = "WRONG"


class LogFormatError(ValueError):
    """Raised when a log violates the CSV contract."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class DecisionRecord:
    session_id: str
    player_id: str
    round: int
    guess: Direction
    market_move: Direction
    expert_consulted: bool
    expert_advice: Direction | None = None

    def __post_init__(self):
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if self.expert_consulted != (self.expert_advice is not None):
            raise ValueError(
                "expert_advice must be present iff expert_consulted is true "
                f"({self.session_id}, {self.player_id}, round {self.round})"
            )

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.session_id, self.player_id, self.round)

    @property
    def outcome(self) -> Outcome:
        return Outcome.RIGHT if self.guess is self.market_move else Outcome.WRONG


@dataclass(frozen=True)
class PlayerHistory:
    """All rounds played by one player in one session, ordered by round."""

    session_id: str
    player_id: str
    records: tuple[DecisionRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for expected, rec in enumerate(self.records, start=1):
            if rec.round != expected:
                raise ValueError(
                    f"rounds of ({self.session_id}, {self.player_id}) are not "
                    f"contiguous from 1: expected {expected}, got {rec.round}"
                )
            if (rec.session_id, rec.player_id) != self.key:
                raise ValueError("record belongs to a different player")

    @property
    def key(self) -> tuple[str, str]:
        return (self.session_id, self.player_id)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, t: int) -> DecisionRecord:
        """Record of round ``t`` (1-based)."""
        if not 1 <= t <= len(self.records):
            raise IndexError(f"round {t} outside 1..{len(self.records)}")
        return self.records[t - 1]

    @property
    def outcomes(self) -> list[Outcome]:
        return [r.outcome for r in self.records]


@dataclass(frozen=True)
class SummaryStats:
    n_players: int
    n_records: int
    rounds_per_player: dict[int, int]
    up_fraction: float
    consult_fraction: float
    expert_accuracy: float | None
    market_up_fraction: float


def _parse_direction(value: str, column: str, line: int) -> Direction:
    try:
        return Direction(value.strip().upper())
    except ValueError:
        raise LogFormatError(f"bad {column} value {value!r}", line) from None


def _parse_bool(value: str, line: int) -> bool:
    v = value.strip().lower()
    if v == "true":
        return True
    if v == "false":
        return False
    raise LogFormatError(f"bad expert_consulted value {value!r}", line)


def parse_record(row: list[str], line: int) -> DecisionRecord:
    if len(row) != len(HEADER):
        raise LogFormatError(f"expected {len(HEADER)} fields, got {len(row)}", line)
    session_id, player_id, rnd, guess, market, consulted, advice = (c.strip() for c in row)
    if not session_id or not player_id:
        raise LogFormatError("missing session_id or player_id", line)
    try:
        rnd_i = int(rnd)
    except ValueError:
        raise LogFormatError(f"bad round value {rnd!r}", line) from None
    if rnd_i < 1:
        raise LogFormatError(f"round must be >= 1, got {rnd_i}", line)
    consulted_b = _parse_bool(consulted, line)
    advice_d = _parse_direction(advice, "expert_advice", line) if advice else None
    if advice_d is not None and not consulted_b:
        raise LogFormatError("expert_advice present without expert_consulted", line)
    if consulted_b and advice_d is None:
        raise LogFormatError("expert_consulted is true but expert_advice is missing", line)
    return DecisionRecord(
        session_id=session_id,
        player_id=player_id,
        round=rnd_i,
        guess=_parse_direction(guess, "guess", line),
        market_move=_parse_direction(market, "market_move", line),
        expert_consulted=consulted_b,
        expert_advice=advice_d,
    )


def group_records(records: Iterable[DecisionRecord]) -> list[PlayerHistory]:
    """Group records into per-player histories sorted by (session, player)."""
    by_player: dict[tuple[str, str], dict[int, DecisionRecord]] = defaultdict(dict)
    for rec in records:
        rounds = by_player[(rec.session_id, rec.player_id)]
        if rec.round in rounds:
            raise ValueError(f"duplicate record {rec.key}")
        rounds[rec.round] = rec
    histories = []
    for (session_id, player_id), rounds in sorted(by_player.items()):
        ordered = tuple(rounds[r] for r in sorted(rounds))
        histories.append(PlayerHistory(session_id, player_id, ordered))
    return histories


def parse_log(stream: TextIO) -> list[PlayerHistory]:
    """Parse a CSV log into player histories.

    Raises
    ------
    LogFormatError
        On a bad header, malformed row, duplicate (session, player, round),
        advice without consultation, or non-contiguous rounds.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        return []
    if tuple(h.strip() for h in header) != HEADER:
        raise LogFormatError(f"unexpected header {header!r}", 1)

    seen: dict[tuple[str, str, int], int] = {}
    records = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        rec = parse_record(row, line)
        if rec.key in seen:
            raise LogFormatError(
                f"duplicate record {rec.key} (first seen on line {seen[rec.key]})", line
            )
        seen[rec.key] = line
        records.append(rec)
    try:
        return group_records(records)
    except ValueError as exc:
        raise LogFormatError(str(exc)) from None


def read_log(path) -> list[PlayerHistory]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_log(fh)


def write_log(histories: Iterable[PlayerHistory], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HEADER)
    for hist in histories:
        for r in hist.records:
            writer.writerow([
                r.session_id,
                r.player_id,
                r.round,
                r.guess.value,
                r.market_move.value,
                "true" if r.expert_consulted else "false",
                r.expert_advice.value if r.expert_advice is not None else "",
            ])


def serialize_log(histories: Iterable[PlayerHistory]) -> str:
    buf = io.StringIO()
    write_log(histories, buf)
    return buf.getvalue()


def dataset_summary(histories: list[PlayerHistory]) -> SummaryStats:
    if not histories:
        raise ValueError("dataset_summary needs at least one history")
    records = [r for h in histories for r in h.records]
    if not records:
        raise ValueError("dataset_summary needs at least one record")
    n = len(records)
    rounds_per_player: dict[int, int] = defaultdict(int)
    for h in histories:
        rounds_per_player[len(h)] += 1
    consulted = [r for r in records if r.expert_consulted]
    expert_acc = (
        sum(r.expert_advice is r.market_move for r in consulted) / len(consulted)
        if consulted
        else None
    )
    return SummaryStats(
        n_players=len(histories),
        n_records=n,
        rounds_per_player=dict(sorted(rounds_per_player.items())),
        up_fraction=sum(r.guess is Direction.UP for r in records) / n,
        consult_fraction=len(consulted) / n,
        expert_accuracy=expert_acc,
        market_up_fraction=sum(r.market_move is Direction.UP for r in records) / n,
    )
