"""A small trainable encoder/decoder with hand-derived gradients.

The encoder is an input projection followed by M blocks of (linear D->D,
tanh). A posterior head can attach to any block; intermediate heads feed
auxiliary losses, and objectives with feedback add ``probs @ W.T`` back into
the stream before the next block. The optional decoder is a single-head
cross-attention layer over the final encoder states, teacher-forced.

Everything is plain numpy float64 with explicit backward passes — no
autograd — so gradients can be audited against finite differences. Training
is plain SGD with a constant learning rate; with a fixed seed the whole
trajectory (parameters, trace, metrics) is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from .ctc import (
    CharVocabulary,
    LogPosteriorGrid,
    LossConfig,
    TargetSequence,
    cross_entropy_teacher_forced,
    ctc_forward,
    hierarchical_targets,
    joint_loss,
    softmax_backward,
)
from .decoding import greedy_decode
from .errors import ConfigError, NumericalError
from .ipa import FeatureTable, Phone, PhoneSequence
from .metrics import aggregate, score_utterance

CONDITIONED = ("self_cond", "hierarchical")
WITH_AUX = ("inter", "self_cond", "hierarchical")


@dataclass
class ToyEncoder:
    """Encoder structure + parameters.

    Parameter names: ``w_in/b_in`` (input projection), ``w_enc_m/b_enc_m``
    per block, ``w_head_out/b_head_out`` (final posterior head),
    ``w_head_m/b_head_m`` at auxiliary layers, ``w_cond_m`` (D x (aux
    vocab + 1)) feedback projections where the objective uses them.
    """

    feature_dim: int
    hidden_dim: int
    num_blocks: int
    num_labels: int
    aux_layers: tuple[int, ...]
    aux_vocab: int  # label count of intermediate heads (0 = none attached)
    conditioned: bool
    params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ToyDecoder:
    """Single-head cross-attention decoder parameters.

    Input ids: phone k embeds as row k-1, BOS as row V; output classes:
    phones 0..V-1 then EOS = V.
    """

    hidden_dim: int
    num_labels: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def bos_id(self) -> int:
        return self.num_labels


@dataclass
class ToyModel:
    encoder: ToyEncoder
    decoder: ToyDecoder | None = None

    @property
    def params(self) -> dict[str, np.ndarray]:
        merged = dict(self.encoder.params)
        if self.decoder is not None:
            merged.update(self.decoder.params)
        return merged

    def apply_update(self, grads: dict[str, np.ndarray], lr: float, skip=()):
        for name, grad in grads.items():
            if name in skip:
                continue
            store = (
                self.encoder.params
                if name in self.encoder.params
                else self.decoder.params
            )
            store[name] = store[name] - lr * grad

    def to_dict(self) -> dict:
        enc = self.encoder
        blob = {
            "schema": "phonekit-toymodel-1",
            "encoder": {
                "feature_dim": enc.feature_dim,
                "hidden_dim": enc.hidden_dim,
                "num_blocks": enc.num_blocks,
                "num_labels": enc.num_labels,
                "aux_layers": list(enc.aux_layers),
                "aux_vocab": enc.aux_vocab,
                "conditioned": enc.conditioned,
                "params": {k: v.tolist() for k, v in enc.params.items()},
            },
        }
        if self.decoder is not None:
            blob["decoder"] = {
                "hidden_dim": self.decoder.hidden_dim,
                "num_labels": self.decoder.num_labels,
                "params": {k: v.tolist() for k, v in self.decoder.params.items()},
            }
        return blob

    @classmethod
    def from_dict(cls, blob: dict) -> "ToyModel":
        if blob.get("schema") != "phonekit-toymodel-1":
            raise ConfigError(f"unknown checkpoint schema {blob.get('schema')!r}")
        e = blob["encoder"]
        encoder = ToyEncoder(
            e["feature_dim"],
            e["hidden_dim"],
            e["num_blocks"],
            e["num_labels"],
            tuple(e["aux_layers"]),
            e["aux_vocab"],
            e["conditioned"],
            {k: np.asarray(v, dtype=np.float64) for k, v in e["params"].items()},
        )
        decoder = None
        if "decoder" in blob:
            d = blob["decoder"]
            decoder = ToyDecoder(
                d["hidden_dim"],
                d["num_labels"],
                {k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()},
            )
        return cls(encoder, decoder)


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    lang: str
    features: np.ndarray  # (T, F)
    labels: TargetSequence  # phone ids 1..V
    char_labels: TargetSequence | None = None


@dataclass(frozen=True)
class StepResult:
    loss: float
    grads: dict[str, np.ndarray]
    skipped: int  # utterances dropped as unreachable


def resolve_aux_layers(config: LossConfig, num_blocks: int) -> tuple[int, ...]:
    """Auxiliary supervision points: config's, or every block but the last."""
    layers = config.aux_layers or tuple(range(1, num_blocks))
    if config.objective not in WITH_AUX:
        return ()
    for layer in layers:
        if not 1 <= layer < num_blocks:
            raise ConfigError(
                f"auxiliary layer {layer} outside 1..{num_blocks - 1}"
            )
    if not layers:
        raise ConfigError("objective needs at least one auxiliary layer (use M >= 2)")
    return tuple(sorted(set(layers)))


def build_model(
    feature_dim: int,
    hidden_dim: int,
    num_blocks: int,
    num_labels: int,
    config: LossConfig,
    seed: int = 0,
    char_vocab: CharVocabulary | None = None,
) -> ToyModel:
    """Random-initialized model with exactly the parameters the objective needs.

    Feedback projections start at zero, so a freshly built conditioned model
    computes the same forward pass as its unconditioned counterpart.
    """
    if config.objective == "hierarchical" and char_vocab is None:
        raise ConfigError("hierarchical objective needs a letter vocabulary")
    rng = np.random.default_rng(seed)

    def init(*shape):
        return rng.normal(0.0, 1.0 / math.sqrt(shape[-1]), size=shape)

    aux_layers = resolve_aux_layers(config, num_blocks)
    if config.objective == "hierarchical":
        aux_vocab = char_vocab.num_chars
    elif config.objective in WITH_AUX:
        aux_vocab = num_labels
    else:
        aux_vocab = 0

    params: dict[str, np.ndarray] = {
        "w_in": init(hidden_dim, feature_dim),
        "b_in": np.zeros(hidden_dim),
        "w_head_out": init(num_labels + 1, hidden_dim),
        "b_head_out": np.zeros(num_labels + 1),
    }
    for m in range(1, num_blocks + 1):
        params[f"w_enc_{m}"] = init(hidden_dim, hidden_dim)
        params[f"b_enc_{m}"] = np.zeros(hidden_dim)
    conditioned = config.objective in CONDITIONED
    for m in aux_layers:
        params[f"w_head_{m}"] = init(aux_vocab + 1, hidden_dim)
        params[f"b_head_{m}"] = np.zeros(aux_vocab + 1)
        if conditioned:
            params[f"w_cond_{m}"] = np.zeros((hidden_dim, aux_vocab + 1))

    encoder = ToyEncoder(
        feature_dim,
        hidden_dim,
        num_blocks,
        num_labels,
        aux_layers,
        aux_vocab,
        conditioned,
        params,
    )
    decoder = None
    if config.objective == "joint_attn":
        dp = {
            "w_embed": init(num_labels + 2, hidden_dim),
            "w_q": init(hidden_dim, hidden_dim),
            "w_k": init(hidden_dim, hidden_dim),
            "w_v": init(hidden_dim, hidden_dim),
            "w_dec_out": init(num_labels + 1, hidden_dim),
            "b_dec_out": np.zeros(num_labels + 1),
        }
        decoder = ToyDecoder(hidden_dim, num_labels, dp)
    return ToyModel(encoder, decoder)


def _check_config(model: ToyModel, config: LossConfig):
    enc = model.encoder
    if config.objective == "joint_attn" and model.decoder is None:
        raise ConfigError("joint objective needs a decoder")
    if config.objective in WITH_AUX:
        for m in resolve_aux_layers(config, enc.num_blocks):
            if f"w_head_{m}" not in enc.params:
                raise ConfigError(f"no posterior head at layer {m}")
            if config.objective in CONDITIONED and f"w_cond_{m}" not in enc.params:
                raise ConfigError(f"no feedback projection at layer {m}")


def _encoder_forward(enc: ToyEncoder, x: np.ndarray, config: LossConfig):
    """Returns (final log-posterior grid, per-layer cache, final stream)."""
    p = enc.params
    aux_layers = resolve_aux_layers(config, enc.num_blocks)
    conditioned = config.objective in CONDITIONED
    stream = x @ p["w_in"].T + p["b_in"]
    cache = {"x": x, "layers": []}
    for m in range(1, enc.num_blocks + 1):
        rec = {"in": stream}
        h = np.tanh(stream @ p[f"w_enc_{m}"].T + p[f"b_enc_{m}"])
        rec["tanh"] = h
        stream = h
        if m in aux_layers:
            logits = h @ p[f"w_head_{m}"].T + p[f"b_head_{m}"]
            rec["logp"] = log_softmax(logits, axis=1)
            if conditioned:
                probs = np.exp(rec["logp"])
                rec["probs"] = probs
                stream = h + probs @ p[f"w_cond_{m}"].T
        cache["layers"].append(rec)
    logits_out = stream @ p["w_head_out"].T + p["b_head_out"]
    grid = LogPosteriorGrid(log_softmax(logits_out, axis=1))
    cache["final_in"] = stream
    return grid, cache


def _decoder_forward(dec: ToyDecoder, enc_states: np.ndarray, labels: TargetSequence):
    """Teacher-forced pass; returns (ce_loss, cache) for labels + EOS."""
    p = dec.params
    V = dec.num_labels
    inputs = np.array([dec.bos_id] + [y - 1 for y in labels.labels], dtype=np.int64)
    targets = np.array([y - 1 for y in labels.labels] + [V], dtype=np.int64)
    e = p["w_embed"][inputs]
    q = e @ p["w_q"]
    k = enc_states @ p["w_k"]
    v = enc_states @ p["w_v"]
    scores = q @ k.T / math.sqrt(dec.hidden_dim)
    attn = np.exp(log_softmax(scores, axis=1))
    ctx = attn @ v
    z = ctx + e
    logits = z @ p["w_dec_out"].T + p["b_dec_out"]
    loss, dlogits = cross_entropy_teacher_forced(logits, targets)
    cache = {
        "inputs": inputs,
        "e": e,
        "q": q,
        "k": k,
        "v": v,
        "attn": attn,
        "z": z,
        "dlogits": dlogits,
        "enc_states": enc_states,
    }
    return loss, cache


def _decoder_backward(dec: ToyDecoder, cache: dict, scale: float, grads: dict):
    """Accumulates decoder parameter grads; returns grad on encoder states."""
    p = dec.params
    dlogits = scale * cache["dlogits"]
    z, attn, v, q, k, e = (
        cache["z"],
        cache["attn"],
        cache["v"],
        cache["q"],
        cache["k"],
        cache["e"],
    )
    grads["w_dec_out"] += dlogits.T @ z
    grads["b_dec_out"] += dlogits.sum(axis=0)
    dz = dlogits @ p["w_dec_out"]
    dctx = dz
    de = dz.copy()  # residual branch
    dattn = dctx @ v.T
    dv = attn.T @ dctx
    dscores = softmax_backward(dattn, attn) / math.sqrt(dec.hidden_dim)
    dq = dscores @ k
    dk = dscores.T @ q
    de += dq @ p["w_q"].T
    grads["w_q"] += e.T @ dq
    grads["w_k"] += cache["enc_states"].T @ dk
    grads["w_v"] += cache["enc_states"].T @ dv
    np.add.at(grads["w_embed"], cache["inputs"], de)
    return dk @ p["w_k"].T + dv @ p["w_v"].T


def _utterance_losses(model: ToyModel, utt: Utterance, config: LossConfig):
    """Forward pass; returns (total loss, parts) or None if unreachable."""
    enc = model.encoder
    grid, cache = _encoder_forward(enc, utt.features, config)
    parts: dict = {"cache": cache}
    obj = config.objective

    final = None
    if obj != "joint_attn" or config.lam > 0.0:
        final = ctc_forward(grid, utt.labels)
        if not final.feasible:
            return None
    parts["final"] = final

    if obj in WITH_AUX:
        aux_layers = resolve_aux_layers(config, enc.num_blocks)
        targets = {
            m: (utt.char_labels if obj == "hierarchical" else utt.labels)
            for m in aux_layers
        }
        if obj == "hierarchical" and utt.char_labels is None:
            raise ConfigError(f"utterance {utt.utt_id!r} lacks letter labels")
        aux_results = {}
        if config.lam > 0.0:
            for i, m in enumerate(aux_layers):
                rec = cache["layers"][m - 1]
                res = ctc_forward(LogPosteriorGrid(rec["logp"]), targets[m])
                if not res.feasible:
                    return None
                aux_results[m] = res
        parts["aux"] = aux_results
        loss = final.loss
        if aux_results:
            loss += config.lam * sum(r.loss for r in aux_results.values()) / len(
                aux_results
            )
        parts["loss"] = float(loss)
        return parts

    if obj == "joint_attn":
        ce = None
        if config.lam < 1.0:
            ce, dec_cache = _decoder_forward(
                model.decoder, cache["final_in"], utt.labels
            )
            parts["dec_cache"] = dec_cache
        parts["ce"] = ce
        parts["loss"] = joint_loss(
            final.loss if final is not None else math.inf,
            ce if ce is not None else math.inf,
            config.lam,
        )
        return parts

    parts["loss"] = final.loss
    return parts


def _utterance_backward(model: ToyModel, utt: Utterance, config: LossConfig, parts, grads):
    enc = model.encoder
    p = enc.params
    cache = parts["cache"]
    obj = config.objective
    aux_layers = resolve_aux_layers(config, enc.num_blocks)
    conditioned = config.objective in CONDITIONED

    # gradient on the stream feeding the final head (and the decoder)
    dstream = np.zeros_like(cache["final_in"])
    if parts["final"] is not None:
        w = config.lam if obj == "joint_attn" else 1.0
        dlogits_out = w * parts["final"].grad_logits
        grads["w_head_out"] += dlogits_out.T @ cache["final_in"]
        grads["b_head_out"] += dlogits_out.sum(axis=0)
        dstream += dlogits_out @ p["w_head_out"]
    if obj == "joint_attn" and parts["ce"] is not None:
        dstream += _decoder_backward(
            model.decoder, parts["dec_cache"], 1.0 - config.lam, grads
        )

    aux_results = parts.get("aux", {})
    aux_scale = config.lam / len(aux_results) if aux_results else 0.0
    for m in range(enc.num_blocks, 0, -1):
        rec = cache["layers"][m - 1]
        h = rec["tanh"]
        if m in aux_layers:
            dlogits = np.zeros((h.shape[0], enc.aux_vocab + 1))
            if m in aux_results:
                dlogits += aux_scale * aux_results[m].grad_logits
            if conditioned:
                probs = rec["probs"]
                dprobs = dstream @ p[f"w_cond_{m}"]
                grads[f"w_cond_{m}"] += dstream.T @ probs
                dlogits += softmax_backward(dprobs, probs)
            grads[f"w_head_{m}"] += dlogits.T @ h
            grads[f"b_head_{m}"] += dlogits.sum(axis=0)
            dstream = dstream + dlogits @ p[f"w_head_{m}"]
        da = dstream * (1.0 - h * h)
        grads[f"w_enc_{m}"] += da.T @ rec["in"]
        grads[f"b_enc_{m}"] += da.sum(axis=0)
        dstream = da @ p[f"w_enc_{m}"]
    grads["w_in"] += dstream.T @ cache["x"]
    grads["b_in"] += dstream.sum(axis=0)


def forward_backward_step(model: ToyModel, batch, config: LossConfig) -> StepResult:
    """Mean loss over reachable utterances plus exact parameter gradients.

    Utterances whose target cannot be aligned (too few frames) are skipped;
    if every utterance is skipped the loss is +inf with zero gradients. Any
    NaN/Inf in a gradient raises a hard error naming the parameter.
    """
    _check_config(model, config)
    grads = {name: np.zeros_like(value) for name, value in model.params.items()}
    total = 0.0
    used = 0
    for utt in batch:
        parts = _utterance_losses(model, utt, config)
        if parts is None:
            continue
        total += parts["loss"]
        used += 1
        _utterance_backward(model, utt, config, parts, grads)
    if used == 0:
        return StepResult(math.inf, grads, len(batch))
    inv = 1.0 / used
    for name in grads:
        grads[name] *= inv
        if not np.isfinite(grads[name]).all():
            raise NumericalError(
                f"non-finite gradient in {name!r}: "
                f"{np.count_nonzero(~np.isfinite(grads[name]))} bad entries"
            )
    return StepResult(total * inv, grads, len(batch) - used)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def _binary_code(k: int, width: int) -> tuple[int, ...]:
    return tuple(1 if (k >> b) & 1 else -1 for b in range(width - 1, -1, -1))


def synthetic_phone_table(num_phones: int) -> FeatureTable:
    """Distinct +/- feature codes for phones named p1..pK."""
    width = max(2, math.ceil(math.log2(num_phones + 1)))
    entries = {
        f"p{k}": _binary_code(k, width) for k in range(1, num_phones + 1)
    }
    return FeatureTable(
        tuple(f"f{i}" for i in range(1, width + 1)), entries, version="synthetic"
    )


def synthetic_char_vocab(num_phones: int) -> CharVocabulary:
    """Fixed many-to-one letter map: phones (2j-1, 2j) share letter j."""
    mapping = {k: (k - 1) // 2 + 1 for k in range(1, num_phones + 1)}
    return CharVocabulary(mapping, num_chars=(num_phones + 1) // 2)


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian-cluster phone strings: one cluster mean per phone in F-dim
    space, 2-4 frames per phone with isotropic noise. Deterministic per seed.
    """

    num_phones: int = 3
    feature_dim: int = 5
    noise: float = 0.1
    cluster_spread: float = 2.0
    min_phones: int = 1
    max_phones: int = 4
    languages: tuple[str, ...] = ("syn",)
    seed: int = 0

    def build(self, n_train: int, n_dev: int) -> "TaskData":
        if self.num_phones < 2 and self.max_phones > 1:
            raise ConfigError("repeat-free strings longer than 1 need >= 2 phones")
        rng = np.random.default_rng(self.seed)
        means = rng.standard_normal((self.num_phones, self.feature_dim))
        means *= self.cluster_spread
        vocab = synthetic_char_vocab(self.num_phones)

        def make(prefix, count):
            utts = []
            for i in range(count):
                n = int(rng.integers(self.min_phones, self.max_phones + 1))
                # no adjacent repeats: with frame-local features, the blank
                # that separates a doubled phone is unlearnable, and doubled
                # phones would make train PER = 0 unattainable by design
                labels: list[int] = []
                while len(labels) < n:
                    lab = int(rng.integers(1, self.num_phones + 1))
                    if not labels or lab != labels[-1]:
                        labels.append(lab)
                labels = tuple(labels)
                frames = []
                for lab in labels:
                    reps = int(rng.integers(2, 5))  # uniform over {2, 3, 4}
                    frames.append(
                        means[lab - 1]
                        + rng.normal(0.0, self.noise, (reps, self.feature_dim))
                    )
                target = TargetSequence(labels)
                utts.append(
                    Utterance(
                        f"{prefix}-{i:04d}",
                        self.languages[i % len(self.languages)],
                        np.vstack(frames),
                        target,
                        hierarchical_targets(target, vocab),
                    )
                )
            return utts

        return TaskData(
            task=self,
            train=make("train", n_train),
            dev=make("dev", n_dev),
            phone_table=synthetic_phone_table(self.num_phones),
            char_vocab=vocab,
            cluster_means=means,
        )


@dataclass(frozen=True)
class TaskData:
    task: SyntheticTask
    train: list[Utterance]
    dev: list[Utterance]
    phone_table: FeatureTable
    char_vocab: CharVocabulary
    cluster_means: np.ndarray


def labels_to_sequence(labels, table: FeatureTable, utt_id: str, lang: str) -> PhoneSequence:
    phones = tuple(table.lookup(f"p{k}") for k in labels)
    if any(ph is None for ph in phones):
        raise ConfigError("label outside the synthetic phone table")
    return PhoneSequence(utt_id, lang, phones)


def evaluate(model: ToyModel, utterances, config: LossConfig, table: FeatureTable) -> dict:
    """Greedy-decode every utterance; micro-averaged PER/PFER in percent."""
    scores = []
    for utt in utterances:
        grid, _ = _encoder_forward(model.encoder, utt.features, config)
        hyp_labels = greedy_decode(grid).labels
        ref = labels_to_sequence(utt.labels.labels, table, utt.utt_id, utt.lang)
        hyp = labels_to_sequence(hyp_labels, table, utt.utt_id, utt.lang)
        scores.append(score_utterance(ref, hyp)[0])
    stats = aggregate(scores, "all")["ALL"]
    return {"per": stats.per, "pfer": stats.pfer}


def train(
    model: ToyModel,
    data: TaskData,
    config: LossConfig,
    steps: int,
    lr: float = 0.05,
    seed: int = 0,
    batch_size: int = 4,
    eval_every: int = 100,
    freeze_conditioning: bool = False,
) -> tuple[list[dict], ToyModel]:
    """Plain-SGD training loop; returns (trace, model).

    The trace holds one record per evaluation point:
    ``{"step", "loss", "dev_per", "dev_pfer"}``. A NaN loss aborts with the
    trace collected so far attached to the raised error.
    """
    _check_config(model, config)
    rng = np.random.default_rng(seed)
    frozen = (
        tuple(n for n in model.encoder.params if n.startswith("w_cond_"))
        if freeze_conditioning
        else ()
    )
    trace: list[dict] = []
    try:
        for step in range(1, steps + 1):
            idx = rng.integers(0, len(data.train), size=batch_size)
            batch = [data.train[i] for i in idx]
            result = forward_backward_step(model, batch, config)
            if math.isnan(result.loss):
                raise NumericalError(f"loss went NaN at step {step}")
            model.apply_update(result.grads, lr, skip=frozen)
            if step % eval_every == 0 or step == steps:
                dev = evaluate(model, data.dev, config, data.phone_table)
                trace.append(
                    {
                        "step": step,
                        "loss": float(result.loss),
                        "dev_per": dev["per"],
                        "dev_pfer": dev["pfer"],
                    }
                )
    except NumericalError as err:
        err.trace = trace
        raise
    return trace, model
