"""Alignment-based evaluation: PER, PFER, and per-feature error attribution.

Two cost models share one Levenshtein-style DP:

* ``per``  — substitution costs 1 when the phone texts differ, else 0.
* ``pfer`` — substitution costs the articulatory feature disagreement
  fraction (:func:`phonekit.ipa.phone_distance`).

Insertions and deletions cost 1 under both, so ``pfer <= per`` for any pair.
Rates are reported as percentages of the reference length; corpus aggregation
micro-averages (total cost over total reference length).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import TableMismatchError, UndefinedMetricError
from .ipa import Phone, PhoneSequence, phone_distance

COST_MODELS = ("per", "pfer")

# Backtrace preference when several ops reach the optimal cost.
_OP_PREFERENCE = ("match", "substitute", "delete", "insert")


@dataclass(frozen=True)
class AlignmentStep:
    op: str  # match | substitute | insert | delete
    ref_index: int | None
    hyp_index: int | None
    cost: float


@dataclass(frozen=True)
class Alignment:
    """An optimal edit path between a reference and a hypothesis."""

    ref: PhoneSequence
    hyp: PhoneSequence
    cost_model: str
    steps: tuple[AlignmentStep, ...]
    total_cost: float

    def step_phones(self, step: AlignmentStep) -> tuple[Phone | None, Phone | None]:
        ref_phone = self.ref.phones[step.ref_index] if step.ref_index is not None else None
        hyp_phone = self.hyp.phones[step.hyp_index] if step.hyp_index is not None else None
        return ref_phone, hyp_phone


def _substitution_cost(model: str, a: Phone, b: Phone) -> float:
    if model == "per":
        return 0.0 if a.text == b.text else 1.0
    return phone_distance(a, b)


def align(ref: PhoneSequence, hyp: PhoneSequence, cost_model: str = "pfer") -> Alignment:
    """Optimal edit alignment under the given cost model.

    Ties during backtrace are broken by op preference
    match > substitute > delete > insert, which makes alignments (and thus
    feature attribution) deterministic.
    """
    if cost_model not in COST_MODELS:
        raise ValueError(f"unknown cost model {cost_model!r}")
    a, b = ref.phones, hyp.phones
    n, m = len(a), len(b)
    if a and b and len(a[0].features) != len(b[0].features):
        raise TableMismatchError("ref and hyp use different feature tables")

    # dist[i][j] = optimal cost aligning a[:i] with b[:j]
    dist = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = float(i)
    for j in range(1, m + 1):
        dist[0][j] = float(j)
    sub = [[0.0] * m for _ in range(n)]
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            sc = _substitution_cost(cost_model, a[i - 1], b[j - 1])
            sub[i - 1][j - 1] = sc
            row[j] = min(prev[j - 1] + sc, prev[j] + 1.0, row[j - 1] + 1.0)

    steps: list[AlignmentStep] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and dist[i - 1][j - 1] + sub[i - 1][j - 1] == here:
            op = "match" if a[i - 1].text == b[j - 1].text else "substitute"
            steps.append(AlignmentStep(op, i - 1, j - 1, sub[i - 1][j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1][j] + 1.0 == here:
            steps.append(AlignmentStep("delete", i - 1, None, 1.0))
            i -= 1
        else:
            steps.append(AlignmentStep("insert", None, j - 1, 1.0))
            j -= 1
    steps.reverse()
    return Alignment(ref, hyp, cost_model, tuple(steps), dist[n][m])


def edit_cost(ref: PhoneSequence, hyp: PhoneSequence, cost_model: str) -> float:
    """Optimal distance only (no backtrace); same DP as :func:`align`."""
    if cost_model not in COST_MODELS:
        raise ValueError(f"unknown cost model {cost_model!r}")
    a, b = ref.phones, hyp.phones
    if a and b and len(a[0].features) != len(b[0].features):
        raise TableMismatchError("ref and hyp use different feature tables")
    prev = [float(j) for j in range(len(b) + 1)]
    for i, pa in enumerate(a, start=1):
        cur = [float(i)]
        if cost_model == "per":
            costs = [0.0 if pa.text == pb.text else 1.0 for pb in b]
        else:
            costs = [phone_distance(pa, pb) for pb in b]
        for j in range(1, len(b) + 1):
            cur.append(min(prev[j - 1] + costs[j - 1], prev[j] + 1.0, cur[j - 1] + 1.0))
        prev = cur
    return prev[-1]


def pfer(ref: PhoneSequence, hyp: PhoneSequence) -> float:
    """Phone feature error rate in percent: 100 * optimal feature-edit cost / N.

    Asymmetric (normalized by the reference length); raises on empty
    reference because the normalizer is undefined.
    """
    if len(ref) == 0:
        raise UndefinedMetricError(
            f"PFER undefined for empty reference (utterance {ref.utterance_id!r})"
        )
    return 100.0 * edit_cost(ref, hyp, "pfer") / len(ref)


def per(ref: PhoneSequence, hyp: PhoneSequence) -> float:
    """Phone error rate in percent; unit substitution costs."""
    if len(ref) == 0:
        raise UndefinedMetricError(
            f"PER undefined for empty reference (utterance {ref.utterance_id!r})"
        )
    return 100.0 * edit_cost(ref, hyp, "per") / len(ref)


def feature_error_attribution(alignments, table) -> dict[str, float]:
    """Per-feature error proportions over a set of pfer alignments.

    For feature f, a step enters the denominator when f is specified
    (non-zero) on the reference phone, or on the hypothesis phone for
    insertions. It enters the numerator when additionally the step is an
    insertion or deletion, or a substitution whose hypothesis value differs.
    Features with an empty denominator report 0.0.
    """
    names = table.feature_names
    k = len(names)
    errors = [0] * k
    totals = [0] * k
    for alignment in alignments:
        for step in alignment.steps:
            ref_phone, hyp_phone = alignment.step_phones(step)
            if step.op == "insert":
                vec = hyp_phone.features
                for f in range(k):
                    if vec[f] != 0:
                        totals[f] += 1
                        errors[f] += 1
            elif step.op == "delete":
                vec = ref_phone.features
                for f in range(k):
                    if vec[f] != 0:
                        totals[f] += 1
                        errors[f] += 1
            else:
                rv, hv = ref_phone.features, hyp_phone.features
                for f in range(k):
                    if rv[f] != 0:
                        totals[f] += 1
                        if hv[f] != rv[f]:
                            errors[f] += 1
    return {
        name: (errors[f] / totals[f] if totals[f] else 0.0)
        for f, name in enumerate(names)
    }


@dataclass(frozen=True)
class UtteranceScore:
    """Raw per-utterance costs; rates derive from these."""

    utterance_id: str
    language: str
    ref_length: int
    per_cost: float
    pfer_cost: float
    unknown_ref: int = 0
    unknown_hyp: int = 0

    @property
    def per(self) -> float | None:
        return 100.0 * self.per_cost / self.ref_length if self.ref_length else None

    @property
    def pfer(self) -> float | None:
        return 100.0 * self.pfer_cost / self.ref_length if self.ref_length else None


@dataclass
class GroupStats:
    n_utterances: int = 0
    ref_length: int = 0
    per_cost: float = 0.0
    pfer_cost: float = 0.0

    @property
    def per(self) -> float | None:
        return 100.0 * self.per_cost / self.ref_length if self.ref_length else None

    @property
    def pfer(self) -> float | None:
        return 100.0 * self.pfer_cost / self.ref_length if self.ref_length else None


@dataclass
class ScoreReport:
    """Per-utterance scores plus micro-averaged group aggregates."""

    per_utterance: list[UtteranceScore] = field(default_factory=list)
    aggregates: dict[str, GroupStats] = field(default_factory=dict)
    feature_errors: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_utterance": [
                {
                    "utt_id": s.utterance_id,
                    "lang": s.language,
                    "ref_length": s.ref_length,
                    "per_cost": s.per_cost,
                    "pfer_cost": s.pfer_cost,
                    "per": s.per,
                    "pfer": s.pfer,
                    "unknown_ref": s.unknown_ref,
                    "unknown_hyp": s.unknown_hyp,
                }
                for s in self.per_utterance
            ],
            "aggregates": {
                key: {
                    "n_utterances": g.n_utterances,
                    "ref_length": g.ref_length,
                    "per_cost": g.per_cost,
                    "pfer_cost": g.pfer_cost,
                    "per": g.per,
                    "pfer": g.pfer,
                }
                for key, g in self.aggregates.items()
            },
            "feature_errors": self.feature_errors,
        }


def score_utterance(ref: PhoneSequence, hyp: PhoneSequence) -> tuple[UtteranceScore, Alignment]:
    """Score one utterance under both cost models; returns the pfer alignment."""
    alignment = align(ref, hyp, "pfer")
    return (
        UtteranceScore(
            utterance_id=ref.utterance_id,
            language=ref.language,
            ref_length=len(ref),
            per_cost=edit_cost(ref, hyp, "per"),
            pfer_cost=alignment.total_cost,
            unknown_ref=len(ref.unknown_texts),
            unknown_hyp=len(hyp.unknown_texts),
        ),
        alignment,
    )


def _group_key(score: UtteranceScore, grouping: str, family_map: dict[str, str]) -> str:
    if grouping == "all":
        return "ALL"
    if grouping == "language":
        return score.language or "UNK"
    if grouping == "family":
        return family_map.get(score.language, "UNK")
    raise ValueError(f"unknown grouping {grouping!r}")


def aggregate(
    scores,
    grouping: str = "all",
    family_map: dict[str, str] | None = None,
) -> dict[str, GroupStats]:
    """Micro-average costs per group; order-independent by construction.

    Utterances with an empty reference contribute their costs to the
    numerator but nothing to the normalizer (their rate alone is undefined).
    """
    family_map = family_map or {}
    groups: dict[str, GroupStats] = {}
    for score in scores:
        key = _group_key(score, grouping, family_map)
        stats = groups.setdefault(key, GroupStats())
        stats.n_utterances += 1
        stats.ref_length += score.ref_length
        stats.per_cost += score.per_cost
        stats.pfer_cost += score.pfer_cost
    return dict(sorted(groups.items()))
