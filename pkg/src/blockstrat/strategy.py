"""Interpretation of a fitted MMSBM on the [B, C, E] representation.

Each player group is compared against simple behavioural patterns
(follow the expert, copy the last market move, win-stay, lose-shift, repeat
the last guess, repeat only after UP / DOWN). A group's agreement with a
pattern is scored in [-1, 1]:

    M[k, b] = sum_{c in S_b} N[k, c] (2 q[k, c, b] - 1) / sum_{c in S_b} N[k, c]

where ``S_b`` are the contexts in which pattern ``b`` prescribes a guess,
``q`` is the group's probability of making that guess and ``N`` its
membership-weighted exposure to the context.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .contexts import NOT_CONSULTED, ContextKey, DecisionNetwork
from .ingest import Direction
from .mmsbm import FittedModel, MMSBMParams


class Pattern(str, enum.Enum):
    EXP = "EXP"
    WSLS = "WSLS"
    WS = "WS"
    LS = "LS"
    RPT = "RPT"
    RPTU = "RPTU"
    RPTD = "RPTD"


PATTERNS = tuple(Pattern)
REQUIRED_TAGS = frozenset("BCE")


class GroupLabel(str, enum.Enum):
    SWITCH = "SWITCH"
    OPTIMIST = "OPTIMIST"
    REPEAT = "REPEAT"
    WSLS = "WSLS"
    UNLABELED = "UNLABELED"


class EntropyClass(str, enum.Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


def phat(params: MMSBMParams) -> np.ndarray:
    """Probability that each player group guesses UP in each context (K x C)."""
    return params.p @ params.eta.T


def previous_guess(context: ContextKey) -> Direction:
    market = Direction(context["B"])
    return market if context["C"] == "RIGHT" else market.flip()


def pattern_prescription(pattern: Pattern | str, context: ContextKey) -> Direction | None:
    """Guess prescribed by ``pattern`` in ``context``; ``None`` when the
    pattern does not apply there."""
    if not REQUIRED_TAGS <= set(context.schema.tags):
        raise ValueError(f"context {context.label} lacks features B, C and E")
    pattern = Pattern(pattern)
    market = Direction(context["B"])
    right = context["C"] == "RIGHT"
    last = previous_guess(context)
    if pattern is Pattern.EXP:
        advice = context["E"]
        return None if advice == NOT_CONSULTED else Direction(advice)
    if pattern is Pattern.WSLS:
        return market
    if pattern is Pattern.WS:
        return last if right else None
    if pattern is Pattern.LS:
        return None if right else last.flip()
    if pattern is Pattern.RPT:
        return last
    if pattern is Pattern.RPTU:
        return Direction.UP if last is Direction.UP else None
    return Direction.DOWN if last is Direction.DOWN else None


def _prescription_table(contexts: Sequence[ContextKey]) -> np.ndarray:
    """(7, C) array: +1 prescribes UP, -1 DOWN, 0 not applicable.

    EXP only applies where the expert was consulted; every other pattern only
    where it was not.
    """
    table = np.zeros((len(PATTERNS), len(contexts)), dtype=np.int8)
    for j, ctx in enumerate(contexts):
        consulted = ctx["E"] != NOT_CONSULTED
        for b, pattern in enumerate(PATTERNS):
            if (pattern is Pattern.EXP) != consulted:
                continue
            g = pattern_prescription(pattern, ctx)
            if g is not None:
                table[b, j] = 1 if g is Direction.UP else -1
    return table


def exposure(params: MMSBMParams, network: DecisionNetwork) -> np.ndarray:
    """Membership-weighted number of times each group faces each context."""
    return params.theta.T @ network.counts


def pattern_scores(params: MMSBMParams, network: DecisionNetwork) -> np.ndarray:
    """K x 7 matrix of pattern scores (columns in ``PATTERNS`` order).

    Entries with no exposure to any applicable context are ``nan``.
    """
    if params.theta.shape[0] != network.n_players or params.eta.shape[0] != network.n_contexts:
        raise ValueError("params do not match the network")
    if not all(isinstance(c, ContextKey) for c in network.contexts):
        raise ValueError("pattern scores need a network built from a [B,C,E] schema")
    ph = phat(params)
    N = exposure(params, network)
    table = _prescription_table(network.contexts)
    M = np.full((params.K, len(PATTERNS)), np.nan)
    for b in range(len(PATTERNS)):
        applicable = table[b] != 0
        q = np.where(table[b] > 0, ph, 1.0 - ph)[:, applicable]
        w = N[:, applicable]
        tot = w.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            M[:, b] = np.where(tot > 0, (w * (2.0 * q - 1.0)).sum(axis=1) / np.where(tot > 0, tot, 1.0), np.nan)
    return M


def _col(pattern: Pattern) -> int:
    return PATTERNS.index(pattern)


def signature_scores(M_row: np.ndarray) -> dict[GroupLabel, float]:
    """Signature score of every label whose conditions the score row meets."""
    rpt, rptu, rptd, wsls = (M_row[_col(p)] for p in (Pattern.RPT, Pattern.RPTU, Pattern.RPTD, Pattern.WSLS))
    out: dict[GroupLabel, float] = {}
    if rpt <= -0.5:
        out[GroupLabel.SWITCH] = abs(rpt)
    if rptu >= 0.5 and rptd <= -0.5:
        out[GroupLabel.OPTIMIST] = min(abs(rptu), abs(rptd))
    if rpt >= 0.5:
        out[GroupLabel.REPEAT] = abs(rpt)
    if wsls >= 0.5 and -0.5 < rpt < 0.5:
        out[GroupLabel.WSLS] = abs(wsls)
    return out


def label_groups(M: np.ndarray) -> list[GroupLabel]:
    """Name each player group after the signature pattern it matches best.

    Conditions: SWITCH M_RPT <= -0.5; OPTIMIST M_RPTU >= 0.5 and
    M_RPTD <= -0.5; REPEAT M_RPT >= 0.5; WSLS M_WSLS >= 0.5 with
    -0.5 < M_RPT < 0.5. When several match, the largest absolute signature
    score wins. ``nan`` scores never match.
    """
    labels = []
    for row in np.atleast_2d(M):
        with np.errstate(invalid="ignore"):
            cands = signature_scores(np.asarray(row, dtype=float))
        labels.append(max(cands, key=cands.get) if cands else GroupLabel.UNLABELED)
    return labels


def membership_entropy(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(theta > 0, theta * np.log(np.where(theta > 0, theta, 1.0)), 0.0)
    return -terms.sum(axis=1)


def entropy_classes(
    params: MMSBMParams | np.ndarray,
    boundaries: tuple[float, float] = (0.35, 0.7),
) -> tuple[np.ndarray, list[EntropyClass]]:
    """Shannon entropy (nats) of each player's membership vector and its class.

    Boundaries are fractions of the maximum entropy ``log K``.
    """
    theta = params.theta if isinstance(params, MMSBMParams) else np.asarray(params, dtype=float)
    lo, hi = boundaries
    if not 0 <= lo <= hi <= 1:
        raise ValueError("boundaries must satisfy 0 <= low <= high <= 1")
    H = membership_entropy(theta)
    hmax = np.log(theta.shape[1])
    classes = []
    for h in H:
        if hmax == 0 or h < lo * hmax:
            classes.append(EntropyClass.LOW)
        elif h < hi * hmax:
            classes.append(EntropyClass.MEDIUM)
        else:
            classes.append(EntropyClass.HIGH)
    return H, classes


def d_statistic(theta_repeat, theta_switch):
    """Normalised repeat-minus-switch balance; ``nan`` when both are zero."""
    r = np.asarray(theta_repeat, dtype=float)
    s = np.asarray(theta_switch, dtype=float)
    tot = r + s
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, (r - s) / np.where(tot > 0, tot, 1.0), np.nan)


def repeat_switch_balance(
    theta: np.ndarray,
    repeat_group: int | None,
    switch_group: int | None,
    threshold: float | None = None,
) -> np.ndarray:
    """Per-player D statistic; ``nan`` marks players that are not eligible.

    A player is eligible when its largest membership lies on the repeating or
    the switching group (and, if ``threshold`` is given, that weight is at
    least ``threshold``).
    """
    theta = np.asarray(theta, dtype=float)
    D = np.full(theta.shape[0], np.nan)
    if repeat_group is None or switch_group is None:
        return D
    main = theta.argmax(axis=1)
    eligible = (main == repeat_group) | (main == switch_group)
    if threshold is not None:
        eligible &= theta.max(axis=1) >= threshold
    vals = d_statistic(theta[:, repeat_group], theta[:, switch_group])
    D[eligible] = vals[eligible]
    return D


def _pick_group(labels: Sequence[GroupLabel], M: np.ndarray, label: GroupLabel) -> int | None:
    idx = [k for k, lab in enumerate(labels) if lab is label]
    if not idx:
        return None
    return max(idx, key=lambda k: signature_scores(M[k]).get(label, 0.0))


@dataclass
class StrategyReport:
    phat: np.ndarray
    scores: np.ndarray
    labels: list[GroupLabel]
    entropy: np.ndarray
    classes: list[EntropyClass]
    D: np.ndarray
    players: tuple = ()
    contexts: tuple = ()
    group_weight: np.ndarray = field(default=None)

    def to_json(self) -> dict:
        return {
            "contexts": [str(c) for c in self.contexts],
            "players": [str(p) for p in self.players],
            "patterns": [p.value for p in PATTERNS],
            "phat": self.phat,
            "M": self.scores,
            "labels": [lab.value for lab in self.labels],
            "group_weight": self.group_weight,
            "entropy": self.entropy,
            "classes": [c.value for c in self.classes],
            "D": self.D,
        }

    def mean_weight(self, label: GroupLabel) -> float | None:
        ks = [k for k, lab in enumerate(self.labels) if lab is label]
        if not ks:
            return None
        return float(sum(self.group_weight[k] for k in ks))


def analyze(
    model: FittedModel | MMSBMParams,
    network: DecisionNetwork,
    boundaries: tuple[float, float] = (0.35, 0.7),
    threshold: float | None = None,
) -> StrategyReport:
    params = model.params if isinstance(model, FittedModel) else model
    M = pattern_scores(params, network)
    labels = label_groups(M)
    H, classes = entropy_classes(params, boundaries)
    D = repeat_switch_balance(
        params.theta,
        _pick_group(labels, M, GroupLabel.REPEAT),
        _pick_group(labels, M, GroupLabel.SWITCH),
        threshold,
    )
    return StrategyReport(
        phat=phat(params),
        scores=M,
        labels=labels,
        entropy=H,
        classes=classes,
        D=D,
        players=network.players,
        contexts=network.contexts,
        group_weight=params.theta.mean(axis=0),
    )
