"""Encoder-only transformer with hand-written backpropagation.

Pre-normalization residual blocks, sinusoidal positional encodings, and an
output projection weight-tied to the token embedding table. Everything is
float64 NumPy: forward returns a cache that backward consumes to produce
exact analytic gradients for every parameter (verified against central
finite differences in the test suite).

Attention is bidirectional by default; bidirectional=False applies a
causal mask so position t only attends to positions <= t. PAD keys are
always masked out, so padded positions cannot influence real ones.
"""

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from mg2vec.errors import ArtifactFormatError, DomainError, ValidationError

LN_EPS = 1e-5
NEG_INF = -1e30
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    pad_id: int
    num_layers: int = 4
    num_heads: int = 8
    model_dim: int = 64
    ff_dim: int = 256
    dropout: float = 0.1
    max_tokens: int = 512
    bidirectional: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise DomainError(
                f"model_dim {self.model_dim} not divisible by {self.num_heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must be in [0, 1)")
        if not 0 <= self.pad_id < self.vocab_size:
            raise DomainError("pad_id outside vocabulary")
        if self.num_layers < 1 or self.max_tokens < 1:
            raise DomainError("num_layers and max_tokens must be >= 1")

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads


@lru_cache(maxsize=8)
def _positional_encoding(max_tokens, dim):
    positions = np.arange(max_tokens, dtype=np.float64)[:, None]
    exponents = np.arange(0, dim, 2, dtype=np.float64) / dim
    angles = positions / (10000.0 ** exponents)
    enc = np.zeros((max_tokens, dim))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles[:, : dim // 2])
    return enc


def init_params(config):
    """Seeded parameter dict; weights N(0, 0.02), gains 1, biases 0."""
    rng = np.random.default_rng(config.seed)
    d, f = config.model_dim, config.ff_dim
    params = {"embedding": rng.normal(0.0, 0.02, size=(config.vocab_size, d))}
    for i in range(config.num_layers):
        prefix = f"layer{i}."
        params[prefix + "ln1.gain"] = np.ones(d)
        params[prefix + "ln1.bias"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[prefix + "attn." + name] = rng.normal(0.0, 0.02, size=(d, d))
        for name in ("bq", "bk", "bv", "bo"):
            params[prefix + "attn." + name] = np.zeros(d)
        params[prefix + "ln2.gain"] = np.ones(d)
        params[prefix + "ln2.bias"] = np.zeros(d)
        params[prefix + "ff.w1"] = rng.normal(0.0, 0.02, size=(d, f))
        params[prefix + "ff.b1"] = np.zeros(f)
        params[prefix + "ff.w2"] = rng.normal(0.0, 0.02, size=(f, d))
        params[prefix + "ff.b2"] = np.zeros(d)
    params["final_ln.gain"] = np.ones(d)
    params["final_ln.bias"] = np.zeros(d)
    return params


def _layernorm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    x_hat = centered * inv_std
    return x_hat * gain + bias, (x_hat, inv_std)


def _layernorm_backward(dy, gain, cache):
    x_hat, inv_std = cache
    axes = tuple(range(dy.ndim - 1))
    d_gain = (dy * x_hat).sum(axis=axes)
    d_bias = dy.sum(axis=axes)
    dx_hat = dy * gain
    dx = inv_std * (
        dx_hat
        - dx_hat.mean(axis=-1, keepdims=True)
        - x_hat * (dx_hat * x_hat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gain, d_bias


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def _project(x, weight, bias=None):
    """(…, d_in) @ (d_in, d_out) as one flat GEMM."""
    out = x.reshape(-1, x.shape[-1]) @ weight
    if bias is not None:
        out += bias
    return out.reshape(x.shape[:-1] + (weight.shape[1],))


def _weight_grad(inputs, d_out):
    """Gradient of a _project weight: inputs^T @ d_out over flattened rows."""
    return inputs.reshape(-1, inputs.shape[-1]).T @ d_out.reshape(-1, d_out.shape[-1])


class TransformerModel:
    """Parameters plus the forward/backward pair that defines the network."""

    def __init__(self, config, params=None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    def _attention_bias(self, ids):
        batch, n_tokens = ids.shape
        bias = np.zeros((batch, 1, 1, n_tokens))
        bias[:, 0, 0, :][ids == self.config.pad_id] = NEG_INF
        if not self.config.bidirectional:
            causal = np.triu(np.full((n_tokens, n_tokens), NEG_INF), k=1)
            bias = bias + causal[None, None]
        return bias

    def forward(self, ids, train=False, dropout_rng=None):
        """(hidden states, logits, cache) for a (batch, tokens) id array."""
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise DomainError("forward expects a (batch, tokens) array")
        batch, n_tokens = ids.shape
        if n_tokens > self.config.max_tokens:
            raise ValidationError(
                f"{n_tokens} tokens exceed the {self.config.max_tokens}-token "
                "window; split the read into windows first"
            )
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise DomainError("token id outside vocabulary")
        p = self.params
        cfg = self.config
        rate = cfg.dropout if train else 0.0
        heads, dh = cfg.num_heads, cfg.head_dim
        scale = 1.0 / np.sqrt(dh)

        x = p["embedding"][ids] + _positional_encoding(cfg.max_tokens, cfg.model_dim)[:n_tokens]
        x, emb_keep = _dropout(x, rate, dropout_rng)
        bias = self._attention_bias(ids)
        layer_caches = []
        for i in range(cfg.num_layers):
            pre = f"layer{i}."
            normed, ln1_cache = _layernorm_forward(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
            q = _project(normed, p[pre + "attn.wq"], p[pre + "attn.bq"])
            k = _project(normed, p[pre + "attn.wk"], p[pre + "attn.bk"])
            v = _project(normed, p[pre + "attn.wv"], p[pre + "attn.bv"])
            q4 = (q * scale).reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
            k4 = k.reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
            v4 = v.reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
            scores = q4 @ k4.transpose(0, 1, 3, 2) + bias
            scores -= scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            context = (probs @ v4).transpose(0, 2, 1, 3).reshape(batch, n_tokens, -1)
            attn_out = _project(context, p[pre + "attn.wo"], p[pre + "attn.bo"])
            attn_out, attn_out_keep = _dropout(attn_out, rate, dropout_rng)
            x_mid = x + attn_out

            normed2, ln2_cache = _layernorm_forward(
                x_mid, p[pre + "ln2.gain"], p[pre + "ln2.bias"]
            )
            inner = _project(normed2, p[pre + "ff.w1"], p[pre + "ff.b1"])
            activated = np.maximum(inner, 0.0)
            ff_out = _project(activated, p[pre + "ff.w2"], p[pre + "ff.b2"])
            ff_out, ff_keep = _dropout(ff_out, rate, dropout_rng)
            x_next = x_mid + ff_out

            layer_caches.append({
                "ln1": ln1_cache, "normed": normed, "q4": q4, "k4": k4, "v4": v4,
                "probs": probs, "context": context,
                "attn_out_keep": attn_out_keep, "x_mid": x_mid,
                "ln2": ln2_cache, "normed2": normed2, "inner": inner,
                "activated": activated, "ff_keep": ff_keep,
            })
            x = x_next

        hidden, final_cache = _layernorm_forward(x, p["final_ln.gain"], p["final_ln.bias"])
        logits = _project(hidden, p["embedding"].T)
        cache = {
            "ids": ids, "emb_keep": emb_keep, "layers": layer_caches,
            "final": final_cache, "hidden": hidden, "scale": scale,
        }
        return hidden, logits, cache

    def backward(self, cache, dlogits):
        """Gradients of a scalar loss given d(loss)/d(logits)."""
        p = self.params
        cfg = self.config
        ids = cache["ids"]
        batch, n_tokens = ids.shape
        heads, dh = cfg.num_heads, cfg.head_dim
        scale = cache["scale"]
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}

        hidden = cache["hidden"]
        grads["embedding"] += _weight_grad(dlogits, hidden)
        d_hidden = _project(dlogits, p["embedding"])
        dx, d_gain, d_bias = _layernorm_backward(d_hidden, p["final_ln.gain"], cache["final"])
        grads["final_ln.gain"] += d_gain
        grads["final_ln.bias"] += d_bias

        for i in reversed(range(cfg.num_layers)):
            pre = f"layer{i}."
            lc = cache["layers"][i]

            d_ff_out = dx if lc["ff_keep"] is None else dx * lc["ff_keep"]
            grads[pre + "ff.b2"] += d_ff_out.sum(axis=(0, 1))
            grads[pre + "ff.w2"] += _weight_grad(lc["activated"], d_ff_out)
            d_activated = _project(d_ff_out, p[pre + "ff.w2"].T)
            d_inner = d_activated * (lc["inner"] > 0.0)
            grads[pre + "ff.b1"] += d_inner.sum(axis=(0, 1))
            grads[pre + "ff.w1"] += _weight_grad(lc["normed2"], d_inner)
            d_normed2 = _project(d_inner, p[pre + "ff.w1"].T)
            d_mid, d_gain, d_bias = _layernorm_backward(d_normed2, p[pre + "ln2.gain"], lc["ln2"])
            grads[pre + "ln2.gain"] += d_gain
            grads[pre + "ln2.bias"] += d_bias
            dx = dx + d_mid  # residual join at x_mid

            d_attn_out = dx if lc["attn_out_keep"] is None else dx * lc["attn_out_keep"]
            grads[pre + "attn.bo"] += d_attn_out.sum(axis=(0, 1))
            grads[pre + "attn.wo"] += _weight_grad(lc["context"], d_attn_out)
            d_context = _project(d_attn_out, p[pre + "attn.wo"].T).reshape(
                batch, n_tokens, heads, dh
            ).transpose(0, 2, 1, 3)
            d_probs = d_context @ lc["v4"].transpose(0, 1, 3, 2)
            d_v4 = lc["probs"].transpose(0, 1, 3, 2) @ d_context
            probs = lc["probs"]
            d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
            d_q4 = d_scores @ lc["k4"] * scale  # cached q4 carries the scale already
            d_k4 = d_scores.transpose(0, 1, 3, 2) @ lc["q4"]
            d_q = d_q4.transpose(0, 2, 1, 3).reshape(batch, n_tokens, -1)
            d_k = d_k4.transpose(0, 2, 1, 3).reshape(batch, n_tokens, -1)
            d_v = d_v4.transpose(0, 2, 1, 3).reshape(batch, n_tokens, -1)
            normed = lc["normed"]
            grads[pre + "attn.bq"] += d_q.sum(axis=(0, 1))
            grads[pre + "attn.bk"] += d_k.sum(axis=(0, 1))
            grads[pre + "attn.bv"] += d_v.sum(axis=(0, 1))
            grads[pre + "attn.wq"] += _weight_grad(normed, d_q)
            grads[pre + "attn.wk"] += _weight_grad(normed, d_k)
            grads[pre + "attn.wv"] += _weight_grad(normed, d_v)
            d_normed = (
                _project(d_q, p[pre + "attn.wq"].T)
                + _project(d_k, p[pre + "attn.wk"].T)
                + _project(d_v, p[pre + "attn.wv"].T)
            )
            d_res, d_gain, d_bias = _layernorm_backward(d_normed, p[pre + "ln1.gain"], lc["ln1"])
            grads[pre + "ln1.gain"] += d_gain
            grads[pre + "ln1.bias"] += d_bias
            dx = dx + d_res  # residual join at layer input

        if cache["emb_keep"] is not None:
            dx = dx * cache["emb_keep"]
        np.add.at(grads["embedding"], ids.reshape(-1), dx.reshape(-1, cfg.model_dim))
        return grads


def mlm_loss(logits, targets, masked):
    """Mean negative log-likelihood over masked positions, with gradient.

    logits (B, T, V); targets (B, T) original ids; masked (B, T) bool.
    Returns (loss, dlogits).
    """
    masked = np.asarray(masked, dtype=bool)
    n_masked = int(masked.sum())
    if n_masked < 1:
        raise DomainError("mlm_loss needs at least one masked position")
    rows = logits[masked]
    wanted = np.asarray(targets)[masked]
    shifted = rows - rows.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n_masked), wanted]))
    soft = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    soft[np.arange(n_masked), wanted] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[masked] = soft / n_masked
    return loss, dlogits


def save_model(path, model):
    names = sorted(model.params)
    header = {
        "format": "mg2vec-transformer",
        "version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.config),
        "params": [[name, list(model.params[name].shape)] for name in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name]).tobytes())


def load_model(path, expected_config=None):
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError:
            raise ArtifactFormatError(f"{path}: missing checkpoint header") from None
        if header.get("format") != "mg2vec-transformer":
            raise ArtifactFormatError(f"{path}: not a transformer checkpoint")
        if header.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise ArtifactFormatError(
                f"{path}: checkpoint version {header.get('version')} unsupported "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        config = TransformerConfig(**header["config"])
        params = {}
        for name, shape in header["params"]:
            size = int(np.prod(shape)) * 8
            payload = fh.read(size)
            if len(payload) != size:
                raise ArtifactFormatError(f"{path}: truncated checkpoint payload")
            params[name] = np.frombuffer(payload, dtype=np.float64).reshape(shape).copy()
    if expected_config is not None and config != expected_config:
        raise ArtifactFormatError(
            f"{path}: checkpoint was trained with a different configuration; "
            "re-run pretraining or load with the saved configuration"
        )
    return TransformerModel(config, params)
