"""Greedy and prefix-search decoding over log-posterior grids.

Both decoders work on a :class:`~phonekit.ctc.LogPosteriorGrid` and return
:class:`Hypothesis` objects whose ``score`` is a log probability. Greedy
scores the single best per-frame path; the prefix search accumulates true
prefix marginals (log-sum-exp over every path collapsing to the prefix), so
with a wide enough beam its best hypothesis is the exact MAP label sequence.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .ctc import BLANK, LogPosteriorGrid
from .errors import ConfigError

NEG_INF = -math.inf


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple[int, ...]
    score: float

    def sort_key(self):
        return (-self.score, self.labels)


def collapse(path, blank: int = BLANK) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            prev = p
            if p != blank:
                out.append(int(p))
    return tuple(out)


def greedy_decode(grid: LogPosteriorGrid) -> Hypothesis:
    """Best-per-frame path, collapsed; ties go to the lowest index.

    The score is the log probability of the argmax path itself, not of the
    collapsed label sequence.
    """
    logp = grid.log_probs
    picks = np.argmax(logp, axis=1)
    score = float(logp[np.arange(logp.shape[0]), picks].sum())
    return Hypothesis(collapse(picks), score)


def beam_decode(grid: LogPosteriorGrid, beam_width: int = 8) -> list[Hypothesis]:
    """Prefix search keeping the ``beam_width`` best prefixes per frame.

    Tracks each prefix as a (log P ending in blank, log P ending in its
    last label) pair and merges duplicate prefixes by log-sum-exp, so scores
    are genuine prefix marginals. Returns hypotheses sorted by descending
    score with lexicographic labels as the tiebreak.
    """
    if beam_width < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam_width}")
    logp = grid.log_probs
    T, width = logp.shape

    # prefix -> [log P(..., last frame blank), log P(..., last frame label)]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    for t in range(T):
        row = logp[t]
        nxt: dict[tuple[int, ...], list[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (lpb, lpnb) in beams.items():
            total = np.logaddexp(lpb, lpnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + row[BLANK])
            if prefix:
                # continuing the final label extends the same prefix
                entry[1] = np.logaddexp(entry[1], lpnb + row[prefix[-1]])
            for c in range(1, width):
                # a repeated label needs a blank in between, so only the
                # blank-terminated mass starts a fresh copy of it
                start = lpb if prefix and c == prefix[-1] else total
                if start == NEG_INF:
                    continue
                ext = nxt[prefix + (c,)]
                ext[1] = np.logaddexp(ext[1], start + row[c])
        ranked = sorted(
            nxt.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0])
        )
        beams = dict(ranked[:beam_width])

    hyps = [
        Hypothesis(prefix, float(np.logaddexp(lpb, lpnb)))
        for prefix, (lpb, lpnb) in beams.items()
    ]
    hyps.sort(key=Hypothesis.sort_key)
    return hyps
