"""Miniature encoder-decoder transformer for summarization.

Pre-layer-norm architecture, tied input/output embeddings, sinusoidal
positions, float64 throughout. Cross-attention between decoder and encoder
comes in two flavors: the standard scaled dot-product form, and the
topical form that averages the attention distribution with a broadcast
softmax of the per-source-position guidance scores. The guidance term is
constant with respect to the model, so gradients through the attention
path are exactly half the standard block's.

``GenerationSession`` mirrors the forward pass in plain numpy with
incremental key/value caching for decoding.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, backward, cross_entropy, zero_grads
from .corpus import BOS, EOS, PAD, SEP
from .guidance import GUIDANCE_FLOOR, GuidanceVector
from .serialize import write_checkpoint, read_checkpoint, config_digest


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_width: int = 256
    max_positions: int = 256
    topical_attention: bool = False
    topical_layers: tuple | None = None   # None = every decoder layer
    topical_heads: tuple | None = None    # None = every head
    seed: int = 0

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        for name in ("vocab_size", "d_model", "n_heads", "n_encoder_layers",
                     "n_decoder_layers", "ffn_width", "max_positions"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.topical_heads is not None:
            bad = [h for h in self.topical_heads if not 0 <= h < self.n_heads]
            if bad:
                raise ValueError(f"topical_heads out of range: {bad}")
        if self.topical_layers is not None:
            bad = [l for l in self.topical_layers
                   if not 0 <= l < self.n_decoder_layers]
            if bad:
                raise ValueError(f"topical_layers out of range: {bad}")

    def topical_in_layer(self, layer: int) -> bool:
        if not self.topical_attention:
            return False
        return self.topical_layers is None or layer in self.topical_layers

    def head_blend(self) -> tuple:
        """Per-head blend coefficients (on A, on B) for the topical average.

        Selected heads average the two distributions (0.5, 0.5); heads
        outside a configured subset keep standard attention (1.0, 0.0).
        """
        if self.topical_heads is None:
            return 0.5, 0.5
        sel = np.zeros(self.n_heads, dtype=bool)
        sel[list(self.topical_heads)] = True
        coeff_a = np.where(sel, 0.5, 1.0)
        coeff_b = np.where(sel, 0.5, 0.0)
        return coeff_a, coeff_b

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("topical_layers", "topical_heads"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("topical_layers", "topical_heads"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def sinusoidal_positions(max_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_positions)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((max_positions, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def _shape_spec(config: ModelConfig) -> dict:
    d, f, v = config.d_model, config.ffn_width, config.vocab_size
    spec = {"embed": (v, d), "pos": (config.max_positions, d)}

    def ln(name):
        spec[f"{name}.g"] = (d,)
        spec[f"{name}.b"] = (d,)

    def attn(name):
        for w in ("wq", "wk", "wv", "wo"):
            spec[f"{name}.{w}"] = (d, d)

    def ffn(name):
        spec[f"{name}.w1"] = (d, f)
        spec[f"{name}.b1"] = (f,)
        spec[f"{name}.w2"] = (f, d)
        spec[f"{name}.b2"] = (d,)

    for i in range(config.n_encoder_layers):
        ln(f"enc{i}.ln1"); attn(f"enc{i}.self")
        ln(f"enc{i}.ln2"); ffn(f"enc{i}.ffn")
    ln("enc.final_ln")
    for i in range(config.n_decoder_layers):
        ln(f"dec{i}.ln1"); attn(f"dec{i}.self")
        ln(f"dec{i}.ln2"); attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3"); ffn(f"dec{i}.ffn")
    ln("dec.final_ln")
    return spec


class ModelWeights:
    """Named parameter collection; checkpoint roundtrips are bit-exact.

    The sinusoidal position table rides along as a non-trainable tensor so
    a checkpoint is self-contained.
    """

    def __init__(self, config: ModelConfig, vocab_hash: str = "",
                 tensors: dict | None = None):
        config.validate()
        self.config = config
        self.vocab_hash = vocab_hash
        if tensors is not None:
            self._validate_shapes(tensors)
            self.tensors = tensors
            return
        rng = np.random.default_rng(config.seed)
        spec = _shape_spec(config)
        t: dict[str, Tensor] = {}
        for name, shape in spec.items():
            if name == "pos":
                t[name] = Tensor(sinusoidal_positions(*shape))
            elif name.endswith(".g"):
                t[name] = Tensor(np.ones(shape), requires_grad=True)
            elif name.endswith((".b", ".b1", ".b2")):
                t[name] = Tensor(np.zeros(shape), requires_grad=True)
            else:
                t[name] = Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)
        self.tensors = t

    def _validate_shapes(self, tensors: dict) -> None:
        spec = _shape_spec(self.config)
        got = {k: tuple(v.data.shape) for k, v in tensors.items()}
        if got != spec:
            missing = sorted(set(spec) - set(got))
            extra = sorted(set(got) - set(spec))
            mismatched = sorted(k for k in set(spec) & set(got)
                                if spec[k] != got[k])
            raise ValueError(
                "weights incompatible with config: "
                f"missing={missing} extra={extra} mismatched={mismatched}")

    def trainable(self) -> dict:
        return {k: v for k, v in self.tensors.items() if v.requires_grad}

    def clone(self) -> "ModelWeights":
        tensors = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                   for k, v in self.tensors.items()}
        return ModelWeights(self.config, self.vocab_hash, tensors=tensors)

    def save(self, path, epoch: int = 0) -> None:
        header = {
            "config": self.config.to_dict(),
            "config_digest": config_digest(self.config.to_dict()),
            "vocab_hash": self.vocab_hash,
            "seed": self.config.seed,
            "epoch": epoch,
        }
        write_checkpoint(path, "summarizer", header,
                         {k: v.data for k, v in self.tensors.items()})

    @classmethod
    def load(cls, path) -> "ModelWeights":
        _, header, arrays = read_checkpoint(path, expect_kind="summarizer")
        config = ModelConfig.from_dict(header["config"])
        tensors = {name: Tensor(arr, requires_grad=(name != "pos"))
                   for name, arr in arrays.items()}
        return cls(config, header.get("vocab_hash", ""), tensors=tensors)


# ---------------------------------------------------------------------------
# attention ops
# ---------------------------------------------------------------------------


def cross_attention(q: Tensor, k: Tensor, v: Tensor, pad_mask=None,
                    return_weights: bool = False):
    """softmax(q kᵀ / sqrt(d_k)) v with an optional key mask.

    ``pad_mask`` is boolean, broadcastable to the score shape (True =
    attend). A row with every key masked is an error.
    """
    d_k = q.data.shape[-1]
    if k.data.shape[-1] != d_k:
        raise ValueError("q and k feature sizes differ")
    scores = (q @ k.swap_last_axes()) * (1.0 / math.sqrt(d_k))
    weights = ad.softmax(scores, mask=pad_mask)
    context = weights @ v
    return (context, weights) if return_weights else context


def guidance_bias_row(scores, pad_mask=None) -> np.ndarray:
    """softmax of raw guidance scores over unmasked source positions.

    Computed once per example and broadcast to every query row; masked
    positions carry exact 0. Shares the softmax kernel with the attention
    path, so equal inputs give bit-equal distributions.
    """
    return ad.softmax(Tensor(np.asarray(scores, dtype=np.float64)),
                      mask=pad_mask).data


def _broadcast_bias(bias: np.ndarray, weight_ndim: int) -> np.ndarray:
    """Shape a guidance bias row for broadcasting against attention weights.

    1-D bias rows broadcast over any leading axes as-is; a 2-D (batch, keys)
    bias gets singleton axes for the head/query dims in between.
    """
    if bias.ndim == 1:
        return bias
    if bias.ndim == 2:
        middle = (1,) * (weight_ndim - 2)
        return bias.reshape(bias.shape[0], *middle, bias.shape[1])
    raise ValueError("guidance must be a vector or one row per example")


def topical_cross_attention(q: Tensor, k: Tensor, v: Tensor, guidance,
                            pad_mask=None, return_weights: bool = False,
                            head_blend=(0.5, 0.5)):
    """Average of the attention distribution and the guidance softmax.

    ``guidance`` holds raw per-key-position scores, one row per example
    when batched. The blended matrix is 0.5*A + 0.5*B with B constant in
    q and k. ``head_blend`` supplies the (A, B) coefficients; per-head
    ablations pass arrays over the head axis so unselected heads keep
    standard attention.
    """
    guidance = np.asarray(guidance, dtype=np.float64)
    if guidance.shape[-1] != k.data.shape[-2]:
        raise ValueError(
            f"guidance length {guidance.shape[-1]} != key positions "
            f"{k.data.shape[-2]}")
    bias = guidance_bias_row(guidance, pad_mask=_bias_mask(pad_mask, guidance))
    context, weights = cross_attention(q, k, v, pad_mask, return_weights=True)
    coeff_a, coeff_b = head_blend
    if isinstance(coeff_a, np.ndarray):
        # head axis sits just before the (query, key) axes
        shape = (-1,) + (1,) * 2
        coeff_a = coeff_a.reshape(shape)
        coeff_b = coeff_b.reshape(shape)
    blended = weights * coeff_a + _broadcast_bias(bias, weights.data.ndim) * coeff_b
    context = blended @ v
    return (context, blended) if return_weights else context


def _bias_mask(pad_mask, guidance):
    """Reduce an attention pad mask to one row per guidance row by dropping
    broadcast singleton axes (heads, query rows)."""
    if pad_mask is None:
        return None
    mask = np.asarray(pad_mask, dtype=bool)
    while mask.ndim > guidance.ndim:
        axis = mask.ndim - 2
        if mask.shape[axis] != 1:
            raise ValueError(
                "pad mask varies over query/head axes; guidance needs one "
                "mask row per example")
        mask = mask.reshape(mask.shape[:axis] + mask.shape[axis + 1:])
    return mask


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded training batch.

    ``src`` is prompt + SEP + source when a prompt exists, else just the
    source. ``guidance`` carries raw per-position scores aligned to src
    (floor values at prompt/SEP positions), or None for baseline models.
    """

    src: np.ndarray            # (B, S) int64
    src_mask: np.ndarray       # (B, S) bool, True = real token
    dec_in: np.ndarray         # (B, T) int64, BOS-shifted
    targets: np.ndarray        # (B, T) int64
    target_mask: np.ndarray    # (B, T) bool
    guidance: np.ndarray | None = None   # (B, S) float64

    def validate(self) -> None:
        if self.guidance is not None and self.guidance.shape != self.src.shape:
            raise ValueError("guidance must align with src positions")
        if self.dec_in.shape != self.targets.shape:
            raise ValueError("decoder inputs and targets must align")


def make_batch(examples, guidance_vectors=None) -> Batch:
    """Assemble padded arrays from examples (+ optional per-example guidance
    aligned to each raw source)."""
    seqs = []
    gids = []
    for i, ex in enumerate(examples):
        if ex.topic_prompt:
            seq = list(ex.topic_prompt) + [SEP] + list(ex.source)
            n_prefix = len(ex.topic_prompt) + 1
        else:
            seq = list(ex.source)
            n_prefix = 0
        seqs.append(seq)
        if guidance_vectors is not None:
            gv = guidance_vectors[i]
            if len(gv) != len(ex.source):
                raise ValueError(
                    f"example {ex.id}: guidance length {len(gv)} != source "
                    f"length {len(ex.source)}")
            gids.append(np.concatenate(
                [np.full(n_prefix, GUIDANCE_FLOOR), gv.scores]))

    S = max(len(s) for s in seqs)
    B = len(seqs)
    src = np.full((B, S), PAD, dtype=np.int64)
    src_mask = np.zeros((B, S), dtype=bool)
    guidance = np.full((B, S), GUIDANCE_FLOOR) if guidance_vectors is not None else None
    for i, seq in enumerate(seqs):
        src[i, :len(seq)] = seq
        src_mask[i, :len(seq)] = True
        if guidance is not None:
            guidance[i, :len(seq)] = gids[i]

    tgt_seqs = [list(ex.summary) + [EOS] for ex in examples]
    T = max(len(s) for s in tgt_seqs)
    dec_in = np.full((B, T), PAD, dtype=np.int64)
    targets = np.full((B, T), PAD, dtype=np.int64)
    target_mask = np.zeros((B, T), dtype=bool)
    for i, s in enumerate(tgt_seqs):
        dec_in[i, :len(s)] = [BOS] + s[:-1]
        targets[i, :len(s)] = s
        target_mask[i, :len(s)] = True

    batch = Batch(src, src_mask, dec_in, targets, target_mask, guidance)
    batch.validate()
    return batch


def _embed(ids: np.ndarray, weights: ModelWeights) -> Tensor:
    cfg = weights.config
    if ids.shape[-1] > cfg.max_positions:
        raise ValueError(
            f"sequence length {ids.shape[-1]} exceeds max positions "
            f"{cfg.max_positions}")
    x = ad.embedding(weights.tensors["embed"], ids) * math.sqrt(cfg.d_model)
    return x + weights.tensors["pos"].data[:ids.shape[-1]]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.data.shape
    return ad.transpose(x.reshape(b, t, n_heads, d // n_heads), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.data.shape
    return ad.transpose(x, (0, 2, 1, 3)).reshape(b, t, h * dk)


def _ln(x: Tensor, weights: ModelWeights, name: str) -> Tensor:
    return ad.layer_norm(x, weights.tensors[f"{name}.g"],
                         weights.tensors[f"{name}.b"])


def _attn_block(x_q: Tensor, x_kv: Tensor, weights: ModelWeights, name: str,
                mask, guidance=None) -> Tensor:
    t = weights.tensors
    h = weights.config.n_heads
    q = _split_heads(x_q @ t[f"{name}.wq"], h)
    k = _split_heads(x_kv @ t[f"{name}.wk"], h)
    v = _split_heads(x_kv @ t[f"{name}.wv"], h)
    if guidance is None:
        ctx = cross_attention(q, k, v, pad_mask=mask)
    else:
        ctx = topical_cross_attention(q, k, v, guidance, pad_mask=mask)
    return _merge_heads(ctx) @ t[f"{name}.wo"]


def _ffn_block(x: Tensor, weights: ModelWeights, name: str) -> Tensor:
    t = weights.tensors
    return (x @ t[f"{name}.w1"] + t[f"{name}.b1"]).relu() @ t[f"{name}.w2"] \
        + t[f"{name}.b2"]


def encode(src: np.ndarray, src_mask: np.ndarray, weights: ModelWeights) -> Tensor:
    """Encoder states (batch, src_len, d_model); PAD keys masked in
    self-attention, PAD positions masked downstream by callers."""
    x = _embed(src, weights)
    key_mask = src_mask[:, None, None, :]
    for i in range(weights.config.n_encoder_layers):
        normed = _ln(x, weights, f"enc{i}.ln1")
        x = x + _attn_block(normed, normed, weights, f"enc{i}.self", key_mask)
        x = x + _ffn_block(_ln(x, weights, f"enc{i}.ln2"), weights, f"enc{i}.ffn")
    return _ln(x, weights, "enc.final_ln")


def _decode_states(dec_in: np.ndarray, enc_out: Tensor, src_mask: np.ndarray,
                   weights: ModelWeights, guidance) -> Tensor:
    cfg = weights.config
    x = _embed(dec_in, weights)
    t_len = dec_in.shape[-1]
    causal = np.tril(np.ones((t_len, t_len), dtype=bool))[None, None, :, :]
    cross_mask = src_mask[:, None, None, :]
    for i in range(cfg.n_decoder_layers):
        normed = _ln(x, weights, f"dec{i}.ln1")
        x = x + _attn_block(normed, normed, weights, f"dec{i}.self", causal)
        x = x + _attn_block(_ln(x, weights, f"dec{i}.ln2"), enc_out,
                            weights, f"dec{i}.cross", cross_mask,
                            guidance=guidance if cfg.topical_in_layer(i) else None)
        x = x + _ffn_block(_ln(x, weights, f"dec{i}.ln3"), weights, f"dec{i}.ffn")
    return _ln(x, weights, "dec.final_ln")


def forward_teacher_forced(batch: Batch, weights: ModelWeights):
    """Logits and PAD-ignoring cross-entropy loss for one batch."""
    batch.validate()
    cfg = weights.config
    if cfg.topical_attention and batch.guidance is None:
        raise ValueError("topical attention configured but batch has no guidance")
    enc_out = encode(batch.src, batch.src_mask, weights)
    guidance = batch.guidance if cfg.topical_attention else None
    states = _decode_states(batch.dec_in, enc_out, batch.src_mask, weights,
                            guidance)
    logits = states @ weights.tensors["embed"].swap_last_axes()
    loss = cross_entropy(logits, batch.targets, row_mask=batch.target_mask)
    return logits, loss


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train_summarizer(examples, weights: ModelWeights, guidance_fn=None,
                     epochs: int = 5, lr: float = 1e-3, seed: int = 0,
                     batch_size: int = 8, checkpoint_dir=None,
                     heldout=None, restore_best: bool = False, log=None):
    """Adam over teacher-forced loss; deterministic under (seed, data).

    ``guidance_fn`` maps an example to a GuidanceVector (or None for the
    baseline). Guidance is computed once per example up front. With a
    ``heldout`` set and ``restore_best``, the weights revert to the epoch
    with the lowest held-out loss (early stopping is the only regularizer
    here). Returns (weights, per-epoch metrics). NaN loss aborts with a
    diagnostic.
    """
    if not examples:
        raise ValueError("empty training set")
    if restore_best and not heldout:
        raise ValueError("restore_best needs a heldout set")
    guidance_all = None
    if guidance_fn is not None:
        guidance_all = [guidance_fn(ex) for ex in examples]
    heldout_batch = None
    if heldout:
        heldout_gv = [guidance_fn(ex) for ex in heldout] if guidance_fn else None
        heldout_batch = make_batch(heldout, heldout_gv)
    best = None   # (heldout loss, epoch, weight arrays)

    state = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    params = weights.trainable()
    metrics = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        n_tokens = 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            exs = [examples[i] for i in idx]
            gvs = [guidance_all[i] for i in idx] if guidance_all else None
            batch = make_batch(exs, gvs)
            zero_grads(params)
            try:
                _, loss = forward_teacher_forced(batch, weights)
            except ValueError as exc:
                if "NaN" in str(exc):
                    raise RuntimeError(
                        f"training diverged: {exc} at epoch {epoch}, "
                        f"step {step} (lr={lr})") from exc
                raise
            if not np.isfinite(loss.item()):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"step {step} (lr={lr})")
            backward(loss)
            adam_step(params, state)
            step += 1
            rows = int(batch.target_mask.sum())
            epoch_loss += loss.item() * rows
            n_tokens += rows
        entry = {"epoch": epoch, "train_loss": epoch_loss / n_tokens}
        if heldout_batch is not None:
            _, held_loss = forward_teacher_forced(heldout_batch, weights)
            entry["heldout_loss"] = held_loss.item()
            if restore_best and (best is None or entry["heldout_loss"] < best[0]):
                best = (entry["heldout_loss"], epoch,
                        {k: v.data.copy() for k, v in weights.tensors.items()})
        metrics.append(entry)
        if log:
            log(entry)
        if checkpoint_dir is not None:
            weights.save(f"{checkpoint_dir}/epoch{epoch:03d}.ckpt", epoch=epoch)
    if restore_best and best is not None:
        for name, arr in best[2].items():
            weights.tensors[name].data = arr
        metrics.append({"best_epoch": best[1], "best_heldout_loss": best[0]})
    return weights, metrics


# ---------------------------------------------------------------------------
# numpy inference mirror with KV caching
# ---------------------------------------------------------------------------


def _np_softmax(x: np.ndarray, mask=None) -> np.ndarray:
    if mask is None:
        m = x.max(axis=-1, keepdims=True)
        e = np.exp(x - m)
    else:
        m = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(x - m), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _np_log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _np_ln(x, g, b, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / np.sqrt(var + eps) * g + b


class GenerationSession:
    """Frozen-weights decoder for one source sequence.

    Runs the encoder once, precomputes per-layer cross-attention keys and
    values and the guidance bias row, then steps the decoder with growing
    self-attention KV caches for any number of parallel hypotheses.
    """

    def __init__(self, weights: ModelWeights, src_ids, guidance: GuidanceVector | None,
                 prompt_ids=None):
        cfg = weights.config
        self.cfg = cfg
        self.w = {k: v.data for k, v in weights.tensors.items()}
        if prompt_ids:
            seq = list(prompt_ids) + [SEP] + list(src_ids)
            n_prefix = len(prompt_ids) + 1
        else:
            seq = list(src_ids)
            n_prefix = 0
        src = np.asarray([seq], dtype=np.int64)
        src_mask = np.ones((1, len(seq)), dtype=bool)
        if cfg.topical_attention:
            if guidance is None:
                raise ValueError("topical model requires guidance for decoding")
            if len(guidance) != len(src_ids):
                raise ValueError("guidance length must match source length")
            scores = np.concatenate(
                [np.full(n_prefix, GUIDANCE_FLOOR), guidance.scores])
            self.bias = _np_softmax(scores)
        else:
            self.bias = None

        enc_out = encode(src, src_mask, weights).data[0]     # (S, d)
        h, dk = cfg.n_heads, cfg.d_k
        self.cross_k = []
        self.cross_v = []
        for i in range(cfg.n_decoder_layers):
            k = (enc_out @ self.w[f"dec{i}.cross.wk"]).reshape(-1, h, dk)
            v = (enc_out @ self.w[f"dec{i}.cross.wv"]).reshape(-1, h, dk)
            self.cross_k.append(np.transpose(k, (1, 0, 2)))  # (H, S, dk)
            self.cross_v.append(np.transpose(v, (1, 0, 2)))

    def start(self, n_hyp: int) -> dict:
        """Fresh decode state for ``n_hyp`` parallel hypotheses."""
        return {
            "t": 0,
            "k": [None] * self.cfg.n_decoder_layers,
            "v": [None] * self.cfg.n_decoder_layers,
            "n": n_hyp,
        }

    def select(self, state: dict, rows) -> dict:
        """Reorder/duplicate hypothesis rows (beam bookkeeping)."""
        rows = np.asarray(rows, dtype=np.int64)
        return {
            "t": state["t"],
            "k": [None if k is None else k[rows] for k in state["k"]],
            "v": [None if v is None else v[rows] for v in state["v"]],
            "n": len(rows),
        }

    def step(self, state: dict, prev_tokens) -> np.ndarray:
        """Advance one position; returns log-prob rows (n_hyp, vocab)."""
        cfg, w = self.cfg, self.w
        h, dk, d = cfg.n_heads, cfg.d_k, cfg.d_model
        n = state["n"]
        t = state["t"]
        if t >= cfg.max_positions:
            raise ValueError(f"decode exceeded max positions {cfg.max_positions}")
        ids = np.asarray(prev_tokens, dtype=np.int64)
        x = w["embed"][ids] * math.sqrt(d) + w["pos"][t]     # (n, d)

        for i in range(cfg.n_decoder_layers):
            normed = _np_ln(x, w[f"dec{i}.ln1.g"], w[f"dec{i}.ln1.b"])
            q = (normed @ w[f"dec{i}.self.wq"]).reshape(n, h, dk)
            k_new = (normed @ w[f"dec{i}.self.wk"]).reshape(n, 1, h, dk)
            v_new = (normed @ w[f"dec{i}.self.wv"]).reshape(n, 1, h, dk)
            k_cache = k_new if state["k"][i] is None else np.concatenate(
                [state["k"][i], k_new], axis=1)
            v_cache = v_new if state["v"][i] is None else np.concatenate(
                [state["v"][i], v_new], axis=1)
            state["k"][i] = k_cache
            state["v"][i] = v_cache
            # scores over cached positions: (n, h, t+1)
            scores = np.einsum("nhd,nthd->nht", q, k_cache) / math.sqrt(dk)
            attn = _np_softmax(scores)
            ctx = np.einsum("nht,nthd->nhd", attn, v_cache).reshape(n, d)
            x = x + ctx @ w[f"dec{i}.self.wo"]

            normed = _np_ln(x, w[f"dec{i}.ln2.g"], w[f"dec{i}.ln2.b"])
            q = (normed @ w[f"dec{i}.cross.wq"]).reshape(n, h, dk)
            scores = np.einsum("nhd,hsd->nhs", q, self.cross_k[i]) / math.sqrt(dk)
            attn = _np_softmax(scores)
            if self.bias is not None and cfg.topical_in_layer(i):
                attn = attn * 0.5 + self.bias[None, None, :] * 0.5
            ctx = np.einsum("nhs,hsd->nhd", attn, self.cross_v[i]).reshape(n, d)
            x = x + ctx @ w[f"dec{i}.cross.wo"]

            normed = _np_ln(x, w[f"dec{i}.ln3.g"], w[f"dec{i}.ln3.b"])
            hidden = np.maximum(normed @ w[f"dec{i}.ffn.w1"] + w[f"dec{i}.ffn.b1"], 0.0)
            x = x + hidden @ w[f"dec{i}.ffn.w2"] + w[f"dec{i}.ffn.b2"]

        final = _np_ln(x, w["dec.final_ln.g"], w["dec.final_ln.b"])
        logits = final @ w["embed"].T
        state["t"] = t + 1
        return _np_log_softmax(logits)
