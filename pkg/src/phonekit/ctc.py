"""CTC losses and their analytic gradients, all in log space.

The forward/backward recursions run over the blank-interleaved extended
target (blank index 0, S = 2N+1 states). The backward table stores
"emission-free" scores (no log-prob for the current frame), so state
occupancies come out of a single addition::

    gamma[t, s] = exp(alpha[t, s] + betahat[t, s] - log Z)

with no subtraction that could produce NaN from -inf - -inf. Unreachable
targets yield an infinite loss and zero gradients rather than an exception.

Gradients are taken with respect to pre-softmax logits: for feasible
targets ``grad[t, v] = p[t, v] - occupancy[t, v]``, so every row sums to 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, logsumexp

from .errors import ConfigError, NumericalError

BLANK = 0

OBJECTIVES = ("vanilla", "inter", "self_cond", "hierarchical", "joint_attn")


@dataclass(frozen=True)
class LogPosteriorGrid:
    """A (T, V+1) grid of per-frame log posteriors; column 0 is blank.

    Rows must be normalized log-distributions (logsumexp within 1e-6 of 0).
    """

    log_probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.log_probs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
            raise NumericalError(f"grid must be (T, V+1) with V >= 1, got {arr.shape}")
        if np.isnan(arr).any():
            raise NumericalError("grid contains NaN")
        if arr.max() > 1e-9:
            raise NumericalError("grid contains log-probabilities above 0")
        rows = logsumexp(arr, axis=1)
        bad = np.abs(rows) > 1e-6
        if bad.any():
            t = int(np.argmax(bad))
            raise NumericalError(
                f"grid row {t} is not normalized (logsumexp = {rows[t]:.3e})"
            )
        object.__setattr__(self, "log_probs", arr)

    @property
    def num_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def num_labels(self) -> int:
        """Non-blank vocabulary size V."""
        return self.log_probs.shape[1] - 1


@dataclass(frozen=True)
class TargetSequence:
    """Non-blank label ids (1..V), in order."""

    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        if any(x < 1 for x in labels):
            raise ConfigError(f"target labels must be >= 1, got {labels}")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def min_frames(self) -> int:
        """Fewest frames any alignment path can use."""
        repeats = sum(1 for a, b in zip(self.labels, self.labels[1:]) if a == b)
        return len(self.labels) + repeats


@dataclass(frozen=True)
class CtcResult:
    loss: float
    feasible: bool
    log_alpha: np.ndarray  # (T, S)
    log_betahat: np.ndarray  # (T, S)
    gamma: np.ndarray  # (T, S) state occupancies
    occupancy: np.ndarray  # (T, V+1) vocabulary occupancies
    grad_logits: np.ndarray  # (T, V+1) d loss / d pre-softmax logits


def extended_labels(target: TargetSequence) -> np.ndarray:
    """Blank-interleaved state labels: [0, y1, 0, y2, ..., 0]."""
    z = np.zeros(2 * len(target) + 1, dtype=np.int64)
    z[1::2] = target.labels
    return z


def project_posteriors(hidden: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> LogPosteriorGrid:
    """Linear head + log-softmax: hidden (T, D) -> grid (T, V+1).

    ``weight`` is (V+1, D), ``bias`` is (V+1,).
    """
    logits = hidden @ weight.T + bias
    return LogPosteriorGrid(log_softmax(logits, axis=1))


def ctc_forward(grid: LogPosteriorGrid, target: TargetSequence) -> CtcResult:
    """Negative log marginal over all alignments, plus tables and gradient."""
    logp = grid.log_probs
    T, width = logp.shape
    if target.labels and max(target.labels) > grid.num_labels:
        raise ConfigError(
            f"target label {max(target.labels)} outside vocabulary of size {grid.num_labels}"
        )
    z = extended_labels(target)
    S = z.size

    # skip transition s-2 -> s exists when z[s] is a label differing from z[s-2]
    allow_skip = np.zeros(S, dtype=bool)
    if S > 2:
        allow_skip[2:] = (z[2:] != BLANK) & (z[2:] != z[:-2])

    emit = logp[:, z]  # (T, S)

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = np.logaddexp(prev, np.concatenate(([-np.inf], prev[:-1])))
        if S > 2:
            skip = np.concatenate(([-np.inf, -np.inf], prev[:-2]))
            acc = np.where(allow_skip, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + emit[t]

    tail = alpha[T - 1, S - 1]
    if S > 1:
        tail = np.logaddexp(tail, alpha[T - 1, S - 2])
    loss = -float(tail)

    betahat = np.full((T, S), -np.inf)
    betahat[T - 1, S - 1] = 0.0
    if S > 1:
        betahat[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        down = betahat[t + 1] + emit[t + 1]
        acc = np.logaddexp(down, np.concatenate((down[1:], [-np.inf])))
        if S > 2:
            skip = np.concatenate((down[2:], [-np.inf, -np.inf]))
            skip_ok = np.concatenate((allow_skip[2:], [False, False]))
            acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        betahat[t] = acc

    feasible = np.isfinite(loss)
    gamma = np.zeros((T, S))
    occupancy = np.zeros((T, width))
    grad = np.zeros((T, width))
    if feasible:
        # alpha already carries the frame-t emission, betahat does not.
        gamma = np.exp(alpha + betahat + loss)
        np.add.at(occupancy.T, z, gamma.T)
        grad = np.exp(logp) - occupancy
    return CtcResult(loss, bool(feasible), alpha, betahat, gamma, occupancy, grad)


def ctc_loss(grid: LogPosteriorGrid, target: TargetSequence) -> float:
    return ctc_forward(grid, target).loss


@dataclass(frozen=True)
class InterCtcResult:
    loss: float
    final: CtcResult
    aux: tuple[CtcResult, ...]
    lam: float


def inter_ctc_loss(
    final_grid: LogPosteriorGrid,
    target: TargetSequence,
    aux_grids,
    lam: float,
    aux_targets=None,
) -> InterCtcResult:
    """Final CTC plus lam * mean of auxiliary CTC losses.

    With lam == 0 the auxiliary terms are skipped outright, so the result is
    bit-identical to the vanilla loss even when an auxiliary target is
    unreachable (inf * 0 never happens).
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lam must be in [0, 1], got {lam}")
    aux_grids = tuple(aux_grids)
    if aux_targets is None:
        aux_targets = (target,) * len(aux_grids)
    aux_targets = tuple(aux_targets)
    if len(aux_targets) != len(aux_grids):
        raise ConfigError("one auxiliary target per auxiliary grid required")

    final = ctc_forward(final_grid, target)
    if lam == 0.0 or not aux_grids:
        return InterCtcResult(final.loss, final, (), lam)
    aux = tuple(ctc_forward(g, y) for g, y in zip(aux_grids, aux_targets))
    total = final.loss + lam * sum(r.loss for r in aux) / len(aux)
    return InterCtcResult(float(total), final, aux, lam)


def self_condition(hidden: np.ndarray, posteriors: np.ndarray, w_cond: np.ndarray) -> np.ndarray:
    """Additive feedback of intermediate posteriors into the encoder stream.

    hidden (T, D), posteriors (T, V+1) in probability space, w_cond
    (D, V+1). Returns hidden + posteriors @ w_cond.T.
    """
    return hidden + posteriors @ w_cond.T


def self_condition_backward(grad_out: np.ndarray, posteriors: np.ndarray, w_cond: np.ndarray):
    """Gradients of :func:`self_condition` given d loss / d output.

    Returns (grad_hidden, grad_posteriors, grad_w_cond).
    """
    return grad_out, grad_out @ w_cond, grad_out.T @ posteriors


def softmax_backward(grad_probs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Push a gradient on softmax outputs back to the logits (rowwise)."""
    inner = np.sum(grad_probs * probs, axis=1, keepdims=True)
    return probs * (grad_probs - inner)


@dataclass(frozen=True)
class CharVocabulary:
    """Many-to-one map from phone label ids to coarse letter ids (1..C)."""

    phone_to_char: dict[int, int]
    num_chars: int

    def __post_init__(self):
        if self.num_chars < 1:
            raise ConfigError("need at least one letter")
        for phone, char in self.phone_to_char.items():
            if not 1 <= char <= self.num_chars:
                raise ConfigError(f"letter id {char} for phone {phone} out of range")

    def map_target(self, target: TargetSequence) -> TargetSequence:
        try:
            return TargetSequence(tuple(self.phone_to_char[p] for p in target.labels))
        except KeyError as exc:
            raise ConfigError(f"phone label {exc.args[0]} has no letter mapping") from exc


def hierarchical_targets(target: TargetSequence, vocab: CharVocabulary) -> TargetSequence:
    """Letter-level auxiliary target: per-phone mapping, repeats kept."""
    return vocab.map_target(target)


def cross_entropy_teacher_forced(logits: np.ndarray, target_ids) -> tuple[float, np.ndarray]:
    """Summed CE over decoder steps; grad is softmax minus one-hot.

    logits (U, Vdec); target_ids length U.
    """
    ids = np.asarray(target_ids, dtype=np.int64)
    if ids.shape[0] != logits.shape[0]:
        raise ConfigError(
            f"{logits.shape[0]} decoder steps but {ids.shape[0]} target ids"
        )
    logp = log_softmax(logits, axis=1)
    loss = -float(logp[np.arange(ids.size), ids].sum())
    grad = np.exp(logp)
    grad[np.arange(ids.size), ids] -= 1.0
    return loss, grad


def joint_loss(ctc_value: float, ce_value: float, lam: float) -> float:
    """lam * CTC + (1 - lam) * CE, exact at the endpoints.

    At lam in {0, 1} the inactive term is never touched, so an infinite
    CTC loss cannot poison a pure-CE objective (and vice versa).
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lam must be in [0, 1], got {lam}")
    if lam == 1.0:
        return float(ctc_value)
    if lam == 0.0:
        return float(ce_value)
    return float(lam * ctc_value + (1.0 - lam) * ce_value)


@dataclass(frozen=True)
class LossConfig:
    """Which objective a training run optimizes, and its weights.

    ``lam`` is the auxiliary weight for "inter"/"self_cond"/"hierarchical"
    and the CTC-vs-CE mix for "joint_attn"; unused by "vanilla".
    ``aux_layers`` lists 1-based encoder block indices that receive
    intermediate supervision (empty means every block except the last).
    """

    objective: str = "vanilla"
    lam: float = 0.5
    aux_layers: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        object.__setattr__(self, "aux_layers", tuple(int(x) for x in self.aux_layers))
        if any(x < 1 for x in self.aux_layers):
            raise ConfigError("aux_layers are 1-based block indices")


def dump_lattice(result: CtcResult, target: TargetSequence) -> dict:
    """JSON-ready snapshot of the DP tables for debugging."""

    def clean(arr):
        return [
            [None if not np.isfinite(v) else float(v) for v in row] for row in arr
        ]

    return {
        "loss": None if not np.isfinite(result.loss) else float(result.loss),
        "feasible": result.feasible,
        "extended_labels": [int(x) for x in extended_labels(target)],
        "log_alpha": clean(result.log_alpha),
        "log_betahat": clean(result.log_betahat),
        "gamma": [[float(v) for v in row] for row in result.gamma],
    }
