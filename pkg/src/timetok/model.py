"""Encoder-decoder sequence model in plain numpy with exact gradients.

The encoder ingests projected frame features plus a sinusoidal frame
positional encoding; the decoder consumes embedded target tokens plus a
learned sequence positional encoding, attends causally over itself and fully
over the encoder output, and a linear head maps back to vocabulary logits.
Pre-layer normalization everywhere.

The backward pass is written by hand and verified against central finite
differences; parameters live in a flat name -> array dict so checkpointing
and gradient checks stay trivial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import DecodeError, TargetSequence
from .losses import LossConfig, NumericError, item_logit_grad, item_loss
from .vocab import Role, Task, VocabLayout, generation_mask

_LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    model_dim: int
    encoder_layers: int
    decoder_layers: int
    attention_heads: int
    feedforward_dim: int
    frame_count: int
    max_target_len: int
    vocab_size: int
    dropout_rate: float = 0.1
    param_dtype: str = "float32"

    def __post_init__(self):
        if self.model_dim % self.attention_heads != 0:
            raise ValueError("model_dim must be divisible by attention_heads")

    @property
    def dtype(self):
        return np.float64 if self.param_dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "model_dim": self.model_dim,
            "encoder_layers": self.encoder_layers,
            "decoder_layers": self.decoder_layers,
            "attention_heads": self.attention_heads,
            "feedforward_dim": self.feedforward_dim,
            "frame_count": self.frame_count,
            "max_target_len": self.max_target_len,
            "vocab_size": self.vocab_size,
            "dropout_rate": self.dropout_rate,
            "param_dtype": self.param_dtype,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            input_dim=int(d["input_dim"]),
            model_dim=int(d["model_dim"]),
            encoder_layers=int(d["encoder_layers"]),
            decoder_layers=int(d["decoder_layers"]),
            attention_heads=int(d["attention_heads"]),
            feedforward_dim=int(d["feedforward_dim"]),
            frame_count=int(d["frame_count"]),
            max_target_len=int(d["max_target_len"]),
            vocab_size=int(d["vocab_size"]),
            dropout_rate=float(d.get("dropout_rate", 0.1)),
            param_dtype=str(d.get("param_dtype", "float32")),
        )


def sinusoidal_encoding(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos positional table, one distinct row per position."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim - dim // 2])
    return table.astype(dtype)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Scaled-uniform (fan-in) weights, zero biases, unit layer-norm gains."""
    dt = config.dtype
    c, f, h = config.model_dim, config.feedforward_dim, config.vocab_size

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dt)

    params: dict[str, np.ndarray] = {
        "proj.w": uniform(config.input_dim, (config.input_dim, c)),
        "proj.b": np.zeros(c, dtype=dt),
        "tok_emb": uniform(c, (h, c)),
        # learned, but started from the sinusoidal table so cross-attention
        # can align decoder positions with encoder frames from step one
        "seq_pos": sinusoidal_encoding(config.max_target_len, c, dt),
        "head.w": uniform(c, (c, h)),
        "head.b": np.zeros(h, dtype=dt),
    }

    def add_ln(name):
        params[f"{name}.g"] = np.ones(c, dtype=dt)
        params[f"{name}.b"] = np.zeros(c, dtype=dt)

    def add_attn(name):
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{name}.{w}"] = uniform(c, (c, c))
        for b in ("bq", "bk", "bv", "bo"):
            params[f"{name}.{b}"] = np.zeros(c, dtype=dt)

    def add_ffn(name):
        params[f"{name}.w1"] = uniform(c, (c, f))
        params[f"{name}.b1"] = np.zeros(f, dtype=dt)
        params[f"{name}.w2"] = uniform(f, (f, c))
        params[f"{name}.b2"] = np.zeros(c, dtype=dt)

    for i in range(config.encoder_layers):
        add_ln(f"enc{i}.ln1")
        add_attn(f"enc{i}.attn")
        add_ln(f"enc{i}.ln2")
        add_ffn(f"enc{i}.ffn")
    add_ln("enc_ln")
    for i in range(config.decoder_layers):
        add_ln(f"dec{i}.ln1")
        add_attn(f"dec{i}.self")
        add_ln(f"dec{i}.ln2")
        add_attn(f"dec{i}.cross")
        add_ln(f"dec{i}.ln3")
        add_ffn(f"dec{i}.ffn")
    add_ln("dec_ln")
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


# --------------------------- primitive layers ------------------------------


def _linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def _linear_bwd(dy, cache):
    x, w = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_fwd(x):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _split_heads(x, heads):
    b, s, c = x.shape
    return x.reshape(b, s, heads, c // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * d)


def _attention_fwd(params, name, x_q, x_kv, heads, causal):
    q, cq = _linear_fwd(x_q, params[f"{name}.wq"], params[f"{name}.bq"])
    k, ck = _linear_fwd(x_kv, params[f"{name}.wk"], params[f"{name}.bk"])
    v, cv = _linear_fwd(x_kv, params[f"{name}.wv"], params[f"{name}.bv"])
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if causal:
        s_q, s_k = scores.shape[-2], scores.shape[-1]
        scores = np.where(np.tril(np.ones((s_q, s_k), dtype=bool)), scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    expa = np.exp(scores)
    attn = expa / expa.sum(axis=-1, keepdims=True)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    out, co = _linear_fwd(merged, params[f"{name}.wo"], params[f"{name}.bo"])
    return out, (cq, ck, cv, co, qh, kh, vh, attn, scale, heads)


def _attention_bwd(dy, cache, grads, name):
    cq, ck, cv, co, qh, kh, vh, attn, scale, heads = cache
    dmerged, dwo, dbo = _linear_bwd(dy, co)
    grads[f"{name}.wo"] += dwo
    grads[f"{name}.bo"] += dbo
    dctx = _split_heads(dmerged, heads)
    dattn = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx
    inner = (dattn * attn).sum(axis=-1, keepdims=True)
    dscores = attn * (dattn - inner)
    dqh = (dscores @ kh) * scale
    dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale
    dq, dwq, dbq = _linear_bwd(_merge_heads(dqh), cq)
    dk, dwk, dbk = _linear_bwd(_merge_heads(dkh), ck)
    dv, dwv, dbv = _linear_bwd(_merge_heads(dvh), cv)
    grads[f"{name}.wq"] += dwq
    grads[f"{name}.bq"] += dbq
    grads[f"{name}.wk"] += dwk
    grads[f"{name}.bk"] += dbk
    grads[f"{name}.wv"] += dwv
    grads[f"{name}.bv"] += dbv
    return dq, dk + dv


def _ffn_fwd(params, name, x):
    h1, c1 = _linear_fwd(x, params[f"{name}.w1"], params[f"{name}.b1"])
    a, cg = _gelu_fwd(h1)
    out, c2 = _linear_fwd(a, params[f"{name}.w2"], params[f"{name}.b2"])
    return out, (c1, cg, c2)


def _ffn_bwd(dy, cache, grads, name):
    c1, cg, c2 = cache
    da, dw2, db2 = _linear_bwd(dy, c2)
    grads[f"{name}.w2"] += dw2
    grads[f"{name}.b2"] += db2
    dh1 = _gelu_bwd(da, cg)
    dx, dw1, db1 = _linear_bwd(dh1, c1)
    grads[f"{name}.w1"] += dw1
    grads[f"{name}.b1"] += db1
    return dx


def _dropout_fwd(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


# --------------------------- model forward/backward -------------------------


def embed_features(raw: np.ndarray, params, config: ModelConfig):
    """Project raw frame features and add the fixed frame positional encoding."""
    raw = np.asarray(raw, dtype=config.dtype)
    single = raw.ndim == 2
    if single:
        raw = raw[None]
    if raw.shape[-1] != config.input_dim or raw.shape[1] > config.frame_count:
        raise ValueError(f"expected (T<= {config.frame_count}, {config.input_dim}) features, got {raw.shape[1:]}")
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite feature input")
    out, _ = _linear_fwd(raw, params["proj.w"], params["proj.b"])
    out = out + sinusoidal_encoding(raw.shape[1], config.model_dim, config.dtype)
    return out[0] if single else out


def _embed_features_fwd(raw, params, config):
    out, cache = _linear_fwd(raw, params["proj.w"], params["proj.b"])
    out = out + sinusoidal_encoding(raw.shape[1], config.model_dim, config.dtype)
    return out, cache


def _encode_fwd(x, params, config: ModelConfig, rng=None):
    caches = []
    for i in range(config.encoder_layers):
        n1, c_ln1 = _layernorm_fwd(x, params[f"enc{i}.ln1.g"], params[f"enc{i}.ln1.b"])
        a, c_at = _attention_fwd(params, f"enc{i}.attn", n1, n1, config.attention_heads, causal=False)
        a, k1 = _dropout_fwd(a, config.dropout_rate, rng)
        x = x + a
        n2, c_ln2 = _layernorm_fwd(x, params[f"enc{i}.ln2.g"], params[f"enc{i}.ln2.b"])
        f, c_ff = _ffn_fwd(params, f"enc{i}.ffn", n2)
        f, k2 = _dropout_fwd(f, config.dropout_rate, rng)
        x = x + f
        caches.append((c_ln1, c_at, k1, c_ln2, c_ff, k2))
    out, c_final = _layernorm_fwd(x, params["enc_ln.g"], params["enc_ln.b"])
    return out, (caches, c_final)


def _encode_bwd(dout, cache, params, config, grads):
    caches, c_final = cache
    dx, dg, db = _layernorm_bwd(dout, c_final)
    grads["enc_ln.g"] += dg
    grads["enc_ln.b"] += db
    for i in reversed(range(config.encoder_layers)):
        c_ln1, c_at, k1, c_ln2, c_ff, k2 = caches[i]
        df = _dropout_bwd(dx, k2)
        dn2 = _ffn_bwd(df, c_ff, grads, f"enc{i}.ffn")
        dx2, dg2, db2 = _layernorm_bwd(dn2, c_ln2)
        grads[f"enc{i}.ln2.g"] += dg2
        grads[f"enc{i}.ln2.b"] += db2
        dx = dx + dx2
        da = _dropout_bwd(dx, k1)
        dq, dkv = _attention_bwd(da, c_at, grads, f"enc{i}.attn")
        dn1 = dq + dkv
        dx1, dg1, db1 = _layernorm_bwd(dn1, c_ln1)
        grads[f"enc{i}.ln1.g"] += dg1
        grads[f"enc{i}.ln1.b"] += db1
        dx = dx + dx1
    return dx


def _decode_fwd(tokens, hidden, params, config: ModelConfig, rng=None):
    """tokens: (B, S) decoder input ids. Returns logits (B, S, H) and cache."""
    y = params["tok_emb"][tokens] + params["seq_pos"][: tokens.shape[1]]
    caches = []
    for i in range(config.decoder_layers):
        n1, c_ln1 = _layernorm_fwd(y, params[f"dec{i}.ln1.g"], params[f"dec{i}.ln1.b"])
        sa, c_sa = _attention_fwd(params, f"dec{i}.self", n1, n1, config.attention_heads, causal=True)
        sa, k1 = _dropout_fwd(sa, config.dropout_rate, rng)
        y = y + sa
        n2, c_ln2 = _layernorm_fwd(y, params[f"dec{i}.ln2.g"], params[f"dec{i}.ln2.b"])
        ca, c_ca = _attention_fwd(params, f"dec{i}.cross", n2, hidden, config.attention_heads, causal=False)
        ca, k2 = _dropout_fwd(ca, config.dropout_rate, rng)
        y = y + ca
        n3, c_ln3 = _layernorm_fwd(y, params[f"dec{i}.ln3.g"], params[f"dec{i}.ln3.b"])
        f, c_ff = _ffn_fwd(params, f"dec{i}.ffn", n3)
        f, k3 = _dropout_fwd(f, config.dropout_rate, rng)
        y = y + f
        caches.append((c_ln1, c_sa, k1, c_ln2, c_ca, k2, c_ln3, c_ff, k3))
    out, c_final = _layernorm_fwd(y, params["dec_ln.g"], params["dec_ln.b"])
    logits, c_head = _linear_fwd(out, params["head.w"], params["head.b"])
    return logits, (tokens, caches, c_final, c_head)


def _decode_bwd(dlogits, cache, params, config, grads):
    """Returns gradient w.r.t. the encoder hidden states."""
    tokens, caches, c_final, c_head = cache
    dout, dwh, dbh = _linear_bwd(dlogits, c_head)
    grads["head.w"] += dwh
    grads["head.b"] += dbh
    dy, dg, db = _layernorm_bwd(dout, c_final)
    grads["dec_ln.g"] += dg
    grads["dec_ln.b"] += db
    dhidden = None
    for i in reversed(range(config.decoder_layers)):
        c_ln1, c_sa, k1, c_ln2, c_ca, k2, c_ln3, c_ff, k3 = caches[i]
        df = _dropout_bwd(dy, k3)
        dn3 = _ffn_bwd(df, c_ff, grads, f"dec{i}.ffn")
        dy3, dg3, db3 = _layernorm_bwd(dn3, c_ln3)
        grads[f"dec{i}.ln3.g"] += dg3
        grads[f"dec{i}.ln3.b"] += db3
        dy = dy + dy3
        dca = _dropout_bwd(dy, k2)
        dq, dkv = _attention_bwd(dca, c_ca, grads, f"dec{i}.cross")
        dhidden = dkv if dhidden is None else dhidden + dkv
        dn2 = dq
        dy2, dg2, db2 = _layernorm_bwd(dn2, c_ln2)
        grads[f"dec{i}.ln2.g"] += dg2
        grads[f"dec{i}.ln2.b"] += db2
        dy = dy + dy2
        dsa = _dropout_bwd(dy, k1)
        dq1, dkv1 = _attention_bwd(dsa, c_sa, grads, f"dec{i}.self")
        dn1 = dq1 + dkv1
        dy1, dg1, db1 = _layernorm_bwd(dn1, c_ln1)
        grads[f"dec{i}.ln1.g"] += dg1
        grads[f"dec{i}.ln1.b"] += db1
        dy = dy + dy1
    np.add.at(grads["tok_emb"], tokens, dy)
    grads["seq_pos"][: tokens.shape[1]] += dy.sum(axis=0)
    return dhidden


def encode(features: np.ndarray, params, config: ModelConfig) -> np.ndarray:
    """Run the encoder stack in evaluation mode (no dropout)."""
    features = np.asarray(features, dtype=config.dtype)
    single = features.ndim == 2
    if single:
        features = features[None]
    out, _ = _encode_fwd(features, params, config, rng=None)
    if not np.all(np.isfinite(out)):
        raise NumericError("encoder produced non-finite values")
    return out[0] if single else out


def decode_teacher_forced(hidden: np.ndarray, target: TargetSequence, params, config: ModelConfig) -> np.ndarray:
    """Logit rows for predicting target[j+1] from target[0..j]; row j depends
    only on tokens up to j (causal masking)."""
    if len(target) > config.max_target_len:
        raise ValueError(f"target length {len(target)} exceeds max {config.max_target_len}")
    tokens = np.asarray(target.tokens, dtype=np.int64)[None, :-1]
    hidden3 = hidden[None] if hidden.ndim == 2 else hidden
    logits, _ = _decode_fwd(tokens, np.asarray(hidden3, dtype=config.dtype), params, config, rng=None)
    return logits[0]


def forward_backward(batch, params, config: ModelConfig, loss_config: LossConfig,
                     rng: np.random.Generator | None = None, log_floor: float | None = 1e-12,
                     return_item_losses: bool = False):
    """Mean task loss over a batch plus the gradient of every parameter.

    batch is a list of (features (T, C_in), TargetSequence, Task). Targets
    are right-padded to the longest sequence in the batch; padded positions
    carry no loss. Parameters are left untouched; the optimizer applies the
    returned gradients.
    """
    if not batch:
        raise ValueError("empty batch")
    dt = config.dtype
    feats = np.stack([np.asarray(f, dtype=dt) for f, _, _ in batch])
    lengths = [len(seq) for _, seq, _ in batch]
    width = max(lengths)
    if width > config.max_target_len:
        raise ValueError(f"target length {width} exceeds max {config.max_target_len}")
    pad = config.vocab_size - 1  # pad index is always the last vocabulary slot
    tokens = np.full((len(batch), width), pad, dtype=np.int64)
    for i, (_, seq, _) in enumerate(batch):
        tokens[i, : lengths[i]] = seq.tokens

    emb, c_emb = _embed_features_fwd(feats, params, config)
    hidden, c_enc = _encode_fwd(emb, params, config, rng)
    logits, c_dec = _decode_fwd(tokens[:, :-1], hidden, params, config, rng)

    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=-1, keepdims=True)

    losses_per_item = []
    dlogits = np.zeros_like(logits)
    for i, (_, seq, task) in enumerate(batch):
        n_sup = lengths[i] - 1
        p = probs[i, :n_sup].astype(np.float64)
        tgt = tokens[i, 1 : lengths[i]]
        roles = list(seq.roles[1:])
        value = item_loss(task, p, tgt, roles, loss_config, log_floor)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss for batch item {i}")
        losses_per_item.append(value)
        dlogits[i, :n_sup] = (item_logit_grad(task, p, tgt, roles, loss_config) / len(batch)).astype(dt)

    loss = float(np.mean(losses_per_item))
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dhidden = _decode_bwd(dlogits, c_dec, params, config, grads)
    demb = _encode_bwd(dhidden, c_enc, params, config, grads)
    _, dpw, dpb = _linear_bwd(demb, c_emb)
    grads["proj.w"] += dpw
    grads["proj.b"] += dpb
    if return_item_losses:
        return loss, grads, losses_per_item
    return loss, grads


# --------------------------- constrained generation -------------------------


class _KVCache:
    """Grown-in-place self-attention cache for incremental decoding."""

    def __init__(self, batch, heads, head_dim, capacity, dtype):
        self.k = np.zeros((batch, heads, capacity, head_dim), dtype=dtype)
        self.v = np.zeros((batch, heads, capacity, head_dim), dtype=dtype)
        self.used = 0

    def append(self, k_step, v_step):
        self.k[:, :, self.used] = k_step
        self.v[:, :, self.used] = v_step
        self.used += 1


def _masked_argmax_probs(logits: np.ndarray, mask: np.ndarray):
    """Greedy choice, its masked-softmax probability and the full masked
    distribution, per batch row."""
    neg = np.where(mask[None, :], logits, -np.inf)
    neg = neg - neg.max(axis=-1, keepdims=True)
    e = np.exp(neg)
    p = e / e.sum(axis=-1, keepdims=True)
    choice = p.argmax(axis=-1)
    return choice, p[np.arange(p.shape[0]), choice], p


class _IncrementalDecoder:
    def __init__(self, hidden, params, config: ModelConfig):
        self.params = params
        self.config = config
        self.heads = config.attention_heads
        self.head_dim = config.model_dim // self.heads
        b = hidden.shape[0]
        dt = config.dtype
        self.self_cache = [
            _KVCache(b, self.heads, self.head_dim, config.max_target_len, dt)
            for _ in range(config.decoder_layers)
        ]
        # cross-attention keys/values are fixed for the whole generation
        self.cross_kv = []
        for i in range(config.decoder_layers):
            k, _ = _linear_fwd(hidden, params[f"dec{i}.cross.wk"], params[f"dec{i}.cross.bk"])
            v, _ = _linear_fwd(hidden, params[f"dec{i}.cross.wv"], params[f"dec{i}.cross.bv"])
            self.cross_kv.append((_split_heads(k, self.heads), _split_heads(v, self.heads)))

    def _heads_step(self, x):
        b, c = x.shape
        return x.reshape(b, self.heads, self.head_dim)

    def step(self, token_ids: np.ndarray, position: int) -> np.ndarray:
        """Feed one token per row at the given position; return logits (B, H)."""
        p, cfg = self.params, self.config
        y = p["tok_emb"][token_ids] + p["seq_pos"][position]
        for i in range(cfg.decoder_layers):
            n1, _ = _layernorm_fwd(y, p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
            q, _ = _linear_fwd(n1, p[f"dec{i}.self.wq"], p[f"dec{i}.self.bq"])
            k, _ = _linear_fwd(n1, p[f"dec{i}.self.wk"], p[f"dec{i}.self.bk"])
            v, _ = _linear_fwd(n1, p[f"dec{i}.self.wv"], p[f"dec{i}.self.bv"])
            cache = self.self_cache[i]
            cache.append(self._heads_step(k), self._heads_step(v))
            qh = self._heads_step(q)[:, :, None, :]
            keys = cache.k[:, :, : cache.used]
            vals = cache.v[:, :, : cache.used]
            scores = (qh @ keys.transpose(0, 1, 3, 2)) / math.sqrt(self.head_dim)
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=-1, keepdims=True)
            ctx = (attn @ vals)[:, :, 0, :].reshape(y.shape[0], -1)
            sa, _ = _linear_fwd(ctx, p[f"dec{i}.self.wo"], p[f"dec{i}.self.bo"])
            y = y + sa
            n2, _ = _layernorm_fwd(y, p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"])
            q2, _ = _linear_fwd(n2, p[f"dec{i}.cross.wq"], p[f"dec{i}.cross.bq"])
            kh, vh = self.cross_kv[i]
            q2h = self._heads_step(q2)[:, :, None, :]
            scores = (q2h @ kh.transpose(0, 1, 3, 2)) / math.sqrt(self.head_dim)
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=-1, keepdims=True)
            ctx = (attn @ vh)[:, :, 0, :].reshape(y.shape[0], -1)
            ca, _ = _linear_fwd(ctx, p[f"dec{i}.cross.wo"], p[f"dec{i}.cross.bo"])
            y = y + ca
            n3, _ = _layernorm_fwd(y, p[f"dec{i}.ln3.g"], p[f"dec{i}.ln3.b"])
            f, _ = _ffn_fwd(p, f"dec{i}.ffn", n3)
            y = y + f
        out, _ = _layernorm_fwd(y, p["dec_ln.g"], p["dec_ln.b"])
        logits, _ = _linear_fwd(out, p["head.w"], p["head.b"])
        return logits


@dataclass
class Generated:
    """One generated sequence: realized tokens/roles, the masked-softmax
    probability of every position (prompt gets 1.0), and for segmentation the
    per-frame class distribution rows used when merging windows."""

    sequence: TargetSequence
    token_probs: list[float]
    frame_rows: np.ndarray | None = None


def generate(
    hidden: np.ndarray,
    task: Task,
    layout: VocabLayout,
    params,
    config: ModelConfig,
    dense_tad: bool = False,
):
    """Greedy mask-constrained generation from the task prompt.

    Every step restricts the logits to the tokens legal for the scheduled
    role before the softmax, so outputs can never contain an illegal token.
    Detection stops at the stop token (offered only where a new triple could
    begin, and forced when no complete triple would fit); the dense tasks run
    for exactly frame_count steps.
    """
    single = hidden.ndim == 2
    hidden3 = np.asarray(hidden[None] if single else hidden, dtype=config.dtype)
    b, t, _ = hidden3.shape
    if layout.total_size != config.vocab_size:
        raise ValueError("vocabulary layout does not match the model's head size")

    decoder = _IncrementalDecoder(hidden3, params, config)
    prompt = layout.prompt_index(task)
    sequences = [[prompt] for _ in range(b)]
    roles: list[list[Role]] = [[Role.PROMPT] for _ in range(b)]
    probs = [[1.0] for _ in range(b)]
    rows = None

    if task is Task.TAD and not dense_tad:
        _generate_tad(decoder, layout, config, sequences, roles, probs)
    else:
        rows = _generate_dense(decoder, task, layout, config, sequences, roles, probs, t, dense_tad)

    out = [
        Generated(
            sequence=TargetSequence(task=task, tokens=tuple(sequences[i]), roles=tuple(roles[i])),
            token_probs=probs[i],
            frame_rows=None if rows is None else rows[i],
        )
        for i in range(b)
    ]
    return out[0] if single else out


def _generate_dense(decoder, task, layout, config, sequences, roles, probs, frames, dense_tad):
    if frames + 1 > config.max_target_len:
        raise ValueError("clip length does not fit in max_target_len")
    if dense_tad:
        mask = np.zeros(layout.total_size, dtype=bool)
        mask[layout.tad_class_offset : layout.tas_class_offset] = True
        mask[layout.gebd_background_index] = True
        role = Role.TAD_CLASS
    else:
        role = Role.TAS_FRAME_CLASS if task is Task.TAS else Role.GEBD_FRAME_BINARY
        mask = generation_mask(task, role, layout)
    collect = task is Task.TAS and not dense_tad
    lo, hi = layout.tas_class_offset, layout.gebd_boundary_index
    rows = np.zeros((len(sequences), frames, hi - lo)) if collect else None
    current = np.array([seq[-1] for seq in sequences], dtype=np.int64)
    for step in range(frames):
        logits = decoder.step(current, step)
        choice, p, full = _masked_argmax_probs(logits, mask)
        if collect:
            rows[:, step, :] = full[:, lo:hi]
        for i in range(len(sequences)):
            sequences[i].append(int(choice[i]))
            roles[i].append(role)
            probs[i].append(float(p[i]))
        current = choice
    return rows


def _generate_tad(decoder, layout, config, sequences, roles, probs):
    b = len(sequences)
    time_mask = np.zeros(layout.total_size, dtype=bool)
    time_mask[: layout.time_token_count] = True
    start_mask = time_mask.copy()
    start_mask[layout.eos_index] = True
    eos_only = np.zeros(layout.total_size, dtype=bool)
    eos_only[layout.eos_index] = True
    class_mask = np.zeros(layout.total_size, dtype=bool)
    class_mask[layout.tad_class_offset : layout.tas_class_offset] = True

    done = np.zeros(b, dtype=bool)
    current = np.array([seq[-1] for seq in sequences], dtype=np.int64)
    position = 0  # decoder input position of `current`
    while not done.all():
        out_pos = position + 1  # target position being generated
        phase = (out_pos - 1) % 3
        if phase == 0:
            # room for a full triple plus the stop token afterwards?
            mask = start_mask if out_pos + 3 <= config.max_target_len - 1 else eos_only
            role = Role.TAD_START
        elif phase == 1:
            mask, role = time_mask, Role.TAD_END
        else:
            mask, role = class_mask, Role.TAD_CLASS
        logits = decoder.step(current, position)
        choice, p, _ = _masked_argmax_probs(logits, mask)
        for i in range(b):
            if done[i]:
                continue
            tok = int(choice[i])
            if tok == layout.eos_index:
                if phase != 0:
                    raise DecodeError("stop token emitted outside a triple boundary")
                sequences[i].append(tok)
                roles[i].append(Role.EOS)
                probs[i].append(float(p[i]))
                done[i] = True
            else:
                sequences[i].append(tok)
                roles[i].append(role)
                probs[i].append(float(p[i]))
        current = np.array([seq[min(position + 1, len(seq) - 1)] for seq in sequences], dtype=np.int64)
        position += 1
