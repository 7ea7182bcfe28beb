"""Seq2seq forecasters (plain and attentional), training, and persistence.

The encoder LSTM consumes the normalized demand history (plus the swim
channel when configured) and hands its final state to the decoder.  Each
decoder step receives the previous prediction and the embedded calendar
features of the slice being predicted; with attention enabled the decoder
state is combined with a context over all encoder states before the output
head.  Training minimizes MSE on the normalized scale with Adam, optional
teacher forcing, and global-norm gradient clipping.

Model files are a single self-describing artifact: one line of canonical
JSON (format version, kind, config, scaler, base64 little-endian float64
parameter blocks) followed by the CRC-32 of everything before it.
"""

from __future__ import annotations

import base64
import binascii
import json
import math
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import baselines, tensor as tc
from .errors import (ContractError, DivergenceError, ModelChecksumError,
                     ModelFormatError, ModelVersionError)
from .layers import (AttentionParams, DenseParams, EmbeddingTable, FusedAttention,
                     FusedLstm, LstmParams, embedding_lookup)
from .pipeline import Scaler
from .tensor import Tape, Tensor

FORMAT_VERSION = 1

CALENDAR_FEATURES = (("hour", 24), ("qtr", 4), ("dow", 7), ("month", 12))


@dataclass
class ModelConfig:
    n_lag: int
    n_look_ahead: int
    hidden_dim: int = 64
    use_attention: bool = False
    attention_kind: str = "general"
    use_swim: bool = False
    embed_hour: int = 8
    embed_qtr: int = 2
    embed_dow: int = 4
    embed_month: int = 6

    def __post_init__(self):
        if self.n_lag < 1 or self.n_look_ahead < 1 or self.hidden_dim < 1:
            raise ContractError("n_lag, n_look_ahead and hidden_dim must be >= 1")
        for name, _ in CALENDAR_FEATURES:
            if self.embed_dim(name) < 1:
                raise ContractError(f"embedding dim for {name} must be >= 1")

    def embed_dim(self, feature):
        return getattr(self, f"embed_{feature}")

    @property
    def encoder_input_dim(self):
        return 1 + (1 if self.use_swim else 0)

    @property
    def decoder_input_dim(self):
        return 1 + sum(self.embed_dim(name) for name, _ in CALENDAR_FEATURES)


@dataclass
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    teacher_forcing: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.clip_norm <= 0:
            raise ContractError("learning_rate must be >= 0 and clip_norm > 0")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ContractError("teacher_forcing ratio must lie in [0, 1]")


class Seq2SeqModel:
    """Parameter container for the encoder/decoder network."""

    def __init__(self, config, encoder, decoder, embeddings, attention, output_head, scaler):
        if (attention is not None) != config.use_attention:
            raise ContractError("attention params must be present exactly when configured")
        self.config = config
        self.encoder = encoder
        self.decoder = decoder
        self.embeddings = embeddings  # dict: feature name -> EmbeddingTable
        self.attention = attention
        self.output_head = output_head
        self.scaler = scaler

    def params(self):
        out = self.encoder.params() + self.decoder.params()
        for name, _ in CALENDAR_FEATURES:
            out.append(self.embeddings[name].weights)
        if self.attention is not None:
            out += self.attention.params()
        out += self.output_head.params()
        return out

    @property
    def kind(self):
        return "seq2seq_attention" if self.config.use_attention else "seq2seq"


def build_seq2seq(config, scaler, seed=0):
    """Initialize all weights uniform in +-1/sqrt(fan_in) from one seeded stream.

    Draw order is fixed (encoder, decoder, embeddings, attention, head) so
    a seed fully determines the model.
    """
    rng = np.random.default_rng(seed)
    encoder = LstmParams.create(config.encoder_input_dim, config.hidden_dim, rng)
    decoder = LstmParams.create(config.decoder_input_dim, config.hidden_dim, rng)
    embeddings = {name: EmbeddingTable.create(name, card, config.embed_dim(name), rng)
                  for name, card in CALENDAR_FEATURES}
    attention = (AttentionParams.create(config.hidden_dim, config.attention_kind, rng)
                 if config.use_attention else None)
    head = DenseParams.create(config.hidden_dim, 1, rng)
    return Seq2SeqModel(config, encoder, decoder, embeddings, attention, head, scaler)


# ---------------------------------------------------------------------------
# forward passes


def _zero_state(batch, hidden):
    return Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))


def _encode_batch(model, past_y, past_x, fused=None):
    """Run the encoder over (batch, n_lag) normalized inputs.

    Returns (states (batch, n_lag, hidden), final h, final c).
    """
    cfg = model.config
    batch, p = past_y.shape
    cell = fused or FusedLstm(model.encoder)
    h, c = _zero_state(batch, cfg.hidden_dim)
    states = []
    for t in range(p):
        step = past_y[:, t:t + 1]
        if past_x.shape[2]:
            step = np.concatenate([step, past_x[:, t, :]], axis=1)
        h, c = cell.step(Tensor(step), h, c)
        states.append(tc.reshape(h, (batch, 1, cfg.hidden_dim)))
    return tc.concat(states, axis=1), h, c


def _decode_batch(model, enc_states, h, c, last_y, future_idx, teacher=None, tf_mask=None,
                  fused=None):
    """Unroll the decoder; returns normalized predictions (batch, n_look_ahead).

    ``last_y`` (batch, 1) seeds the first step with the most recent
    observation.  When ``teacher``/``tf_mask`` are given, masked steps feed
    the true previous target instead of the model's own output.
    """
    batch, tau = future_idx.shape[0], future_idx.shape[1]
    cell = fused or FusedLstm(model.decoder)
    attention = FusedAttention(model.attention) if model.attention is not None else None
    head_wT = tc.transpose(model.output_head.W)  # (hidden, 1)
    head_b = model.output_head.b
    prev = Tensor(last_y)
    outputs = []
    for t in range(tau):
        embs = [embedding_lookup(model.embeddings[name], future_idx[:, t, j])
                for j, (name, _) in enumerate(CALENDAR_FEATURES)]
        x = tc.concat([prev] + embs, axis=1)
        h, c = cell.step(x, h, c)
        if attention is not None:
            out_state, _ = attention.attend(h, enc_states)
        else:
            out_state = h
        y = tc.add(tc.matmul(out_state, head_wT), head_b)  # (batch, 1)
        outputs.append(y)
        if t + 1 < tau:
            if teacher is not None:
                prev = tc.select(tf_mask[:, t:t + 1], Tensor(teacher[:, t:t + 1]), y)
            else:
                prev = y
    return tc.concat(outputs, axis=1)


def _window_arrays(model, windows):
    cfg = model.config
    for w in windows:
        if len(w.past_y) != cfg.n_lag or len(w.targets) != cfg.n_look_ahead:
            raise ContractError(
                f"window ({len(w.past_y)} past, {len(w.targets)} future) does not match "
                f"model config ({cfg.n_lag}, {cfg.n_look_ahead})")
        if cfg.use_swim and w.past_x.shape[1] != 1:
            raise ContractError("model expects a swim channel the window does not carry")
    past_y = model.scaler.transform("y", np.stack([w.past_y for w in windows]))
    if cfg.use_swim:
        past_x = model.scaler.transform("swim", np.stack([w.past_x for w in windows]))
    else:
        past_x = np.zeros((len(windows), cfg.n_lag, 0))
    future_idx = np.stack([w.future_f for w in windows])
    targets = model.scaler.transform("y", np.stack([w.targets for w in windows]))
    return past_y, past_x, future_idx, targets


def _forward_batch(model, past_y, past_x, future_idx, teacher=None, tf_mask=None):
    enc_fused, dec_fused = FusedLstm(model.encoder), FusedLstm(model.decoder)
    enc_states, h, c = _encode_batch(model, past_y, past_x, fused=enc_fused)
    return _decode_batch(model, enc_states, h, c, past_y[:, -1:], future_idx,
                         teacher=teacher, tf_mask=tf_mask, fused=dec_fused)


def encode(model, past):
    """Encoder states for one window's past input vectors (n_lag, input_dim).

    Inputs are already normalized.  Returns (states (n_lag, hidden),
    final_h (hidden,), final_c (hidden,)).
    """
    past = np.asarray(past, dtype=float)
    cfg = model.config
    if past.shape != (cfg.n_lag, cfg.encoder_input_dim):
        raise ContractError(f"encode: expected {(cfg.n_lag, cfg.encoder_input_dim)} inputs, "
                            f"got {past.shape}")
    states, h, c = _encode_batch(model, past[None, :, 0], past[None, :, 1:])
    p, hid = cfg.n_lag, cfg.hidden_dim
    return (tc.reshape(states, (p, hid)), tc.reshape(h, (hid,)), tc.reshape(c, (hid,)))


def forecast(model, window):
    """Demand predictions for one window, denormalized and clamped at >= 0."""
    preds = forecast_batch(model, [window])
    return preds[0]


def forecast_batch(model, windows, chunk=512):
    """Vectorized inference over many windows; returns (n, n_look_ahead)."""
    if not windows:
        return np.empty((0, model.config.n_look_ahead))
    out = []
    for lo in range(0, len(windows), chunk):
        part = windows[lo:lo + chunk]
        past_y, past_x, future_idx, _ = _window_arrays(model, part)
        preds = _forward_batch(model, past_y, past_x, future_idx)
        out.append(preds.data)
    denorm = model.scaler.inverse("y", np.concatenate(out, axis=0))
    return np.maximum(denorm, 0.0)


# ---------------------------------------------------------------------------
# training


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_global_norm(params, max_norm):
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


def mse_loss(preds, targets):
    diff = tc.sub(preds, Tensor(targets))
    n = targets.size
    return tc.mul(tc.reduce_sum(tc.mul(diff, diff)), 1.0 / n)


def train(model, windows, cfg):
    """Mini-batch Adam on normalized MSE; returns per-epoch mean loss."""
    if not windows:
        raise ContractError("train: empty training set")
    past_y, past_x, future_idx, targets = _window_arrays(model, windows)
    n = len(windows)
    params = model.params()
    opt = Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            by, bx, bf, bt = past_y[idx], past_x[idx], future_idx[idx], targets[idx]
            if cfg.teacher_forcing > 0.0:
                tf_mask = rng.random((len(idx), model.config.n_look_ahead)) < cfg.teacher_forcing
                teacher = bt
            else:
                tf_mask, teacher = None, None
            tc.zero_grads(params)
            with Tape() as tape:
                preds = _forward_batch(model, by, bx, bf, teacher=teacher, tf_mask=tf_mask)
                loss = mse_loss(preds, bt)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(epoch)
            tc.backward(tape, loss)
            clip_global_norm(params, cfg.clip_norm)
            opt.step()
            epoch_loss += value * len(idx)
        history.append(epoch_loss / n)
    return history


def training_loss(model, windows, teacher_forcing=False):
    """One forward MSE over the given windows (normalized scale); no updates."""
    past_y, past_x, future_idx, targets = _window_arrays(model, windows)
    if teacher_forcing:
        tf_mask = np.ones(targets.shape, dtype=bool)
        preds = _forward_batch(model, past_y, past_x, future_idx, teacher=targets, tf_mask=tf_mask)
    else:
        preds = _forward_batch(model, past_y, past_x, future_idx)
    return mse_loss(preds, targets)


# ---------------------------------------------------------------------------
# other forecaster kinds used by the evaluation harness


@dataclass
class ArForecaster:
    """AR(p) plus the look-ahead it is evaluated at."""

    model: baselines.ARModel
    n_look_ahead: int


@dataclass
class OracleForecaster:
    """Test hook: predicts each window's actual targets."""

    n_lag: int = 1
    n_look_ahead: int = 1


def window_spec(model):
    """(n_lag, n_look_ahead, with_swim) needed to build windows for a model."""
    if isinstance(model, Seq2SeqModel):
        return model.config.n_lag, model.config.n_look_ahead, model.config.use_swim
    if isinstance(model, baselines.LinearModel):
        return model.n_lag, model.n_look_ahead, model.use_swim
    if isinstance(model, ArForecaster):
        return model.model.order, model.n_look_ahead, False
    if isinstance(model, OracleForecaster):
        return model.n_lag, model.n_look_ahead, False
    raise ContractError(f"unknown model type {type(model).__name__}")


def predict_windows(model, windows):
    """Per-window demand predictions (list of arrays), any model kind."""
    if isinstance(model, Seq2SeqModel):
        return list(forecast_batch(model, windows))
    if isinstance(model, baselines.LinearModel):
        return [baselines.linear_predict(model, w) for w in windows]
    if isinstance(model, ArForecaster):
        return [baselines.ar_forecast(model.model, w.past_y, model.n_look_ahead)
                for w in windows]
    if isinstance(model, OracleForecaster):
        return [w.targets.astype(float).copy() for w in windows]
    raise ContractError(f"unknown model type {type(model).__name__}")


def model_kind(model):
    if isinstance(model, Seq2SeqModel):
        return model.kind
    if isinstance(model, baselines.LinearModel):
        return "lr"
    if isinstance(model, ArForecaster):
        return "ar"
    if isinstance(model, OracleForecaster):
        return "oracle"
    raise ContractError(f"unknown model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# persistence


def _encode_block(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")}


def _decode_block(block):
    try:
        raw = base64.b64decode(block["data"], validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return arr.reshape(block["shape"])
    except (KeyError, TypeError, ValueError, binascii.Error) as err:
        raise ModelFormatError(f"bad parameter block: {err}") from None


def _seq2seq_blocks(model):
    blocks = {}
    for prefix, lstm in (("encoder", model.encoder), ("decoder", model.decoder)):
        for gate in "ifog":
            blocks[f"{prefix}.W_{gate}"] = lstm.W[gate].data
            blocks[f"{prefix}.U_{gate}"] = lstm.U[gate].data
            blocks[f"{prefix}.b_{gate}"] = lstm.b[gate].data
    for name, _ in CALENDAR_FEATURES:
        blocks[f"embed.{name}"] = model.embeddings[name].weights.data
    if model.attention is not None:
        if model.attention.W_a is not None:
            blocks["attention.W_a"] = model.attention.W_a.data
        blocks["attention.W_c"] = model.attention.W_c.data
    blocks["head.W"] = model.output_head.W.data
    blocks["head.b"] = model.output_head.b.data
    return blocks


def _header_for(model):
    kind = model_kind(model)
    if isinstance(model, Seq2SeqModel):
        return kind, asdict(model.config), model.scaler.to_dict(), _seq2seq_blocks(model)
    if isinstance(model, baselines.LinearModel):
        config = {"n_lag": model.n_lag, "n_look_ahead": model.n_look_ahead,
                  "use_swim": model.use_swim, "include_calendar": model.include_calendar}
        return kind, config, None, {"weights": model.weights, "intercepts": model.intercepts}
    if isinstance(model, ArForecaster):
        config = {"order": model.model.order, "n_look_ahead": model.n_look_ahead}
        blocks = {"phi": model.model.phi,
                  "intercept": np.array([model.model.intercept]),
                  "residual_std": np.array([model.model.residual_std])}
        return kind, config, None, blocks
    if isinstance(model, OracleForecaster):
        return kind, {"n_lag": model.n_lag, "n_look_ahead": model.n_look_ahead}, None, {}
    raise ContractError(f"cannot serialize {type(model).__name__}")


def save_model(model, path):
    kind, config, scaler, blocks = _header_for(model)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config": config,
              "scaler": scaler,
              "blocks": {name: _encode_block(arr) for name, arr in blocks.items()}}
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(f"{crc:08x}\n".encode())


def _rebuild_seq2seq(kind, config, scaler_dict, blocks):
    config = ModelConfig(**config)
    if config.use_attention != (kind == "seq2seq_attention"):
        raise ModelFormatError(f"kind {kind!r} disagrees with use_attention in config")
    model = build_seq2seq(config, Scaler.from_dict(scaler_dict), seed=0)
    try:
        for prefix, lstm in (("encoder", model.encoder), ("decoder", model.decoder)):
            for gate in "ifog":
                lstm.W[gate] = tc.param(blocks[f"{prefix}.W_{gate}"])
                lstm.U[gate] = tc.param(blocks[f"{prefix}.U_{gate}"])
                lstm.b[gate] = tc.param(blocks[f"{prefix}.b_{gate}"])
        for name, _ in CALENDAR_FEATURES:
            model.embeddings[name].weights = tc.param(blocks[f"embed.{name}"])
        if model.attention is not None:
            if model.attention.W_a is not None:
                model.attention.W_a = tc.param(blocks["attention.W_a"])
            model.attention.W_c = tc.param(blocks["attention.W_c"])
        model.output_head.W = tc.param(blocks["head.W"])
        model.output_head.b = tc.param(blocks["head.b"])
    except KeyError as err:
        raise ModelFormatError(f"missing parameter block {err}") from None
    return model


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.endswith(b"\n"):
        raise ModelChecksumError("model file is truncated")
    body, _, tail = data[:-1].rpartition(b"\n")
    if not body:
        raise ModelChecksumError("model file is truncated")
    payload = body + b"\n"
    try:
        expected = int(tail.decode("ascii"), 16)
    except (UnicodeDecodeError, ValueError):
        raise ModelChecksumError("model file has no trailing checksum") from None
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if len(tail) != 8 or actual != expected:
        raise ModelChecksumError(
            f"checksum mismatch: file says {tail.decode('ascii', 'replace')}, "
            f"contents give {actual:08x}")
    try:
        header = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelFormatError(f"model header is not valid JSON: {err}") from None
    if not isinstance(header, dict) or "format_version" not in header:
        raise ModelFormatError("model header lacks a format_version")
    if header["format_version"] != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported format version {header['format_version']} (expected {FORMAT_VERSION})")
    try:
        kind = header["kind"]
        config = header["config"]
        blocks = {name: _decode_block(b) for name, b in header.get("blocks", {}).items()}
    except KeyError as err:
        raise ModelFormatError(f"model header missing field {err}") from None

    if kind in ("seq2seq", "seq2seq_attention"):
        return _rebuild_seq2seq(kind, config, header["scaler"], blocks)
    if kind == "lr":
        try:
            return baselines.LinearModel(n_lag=config["n_lag"],
                                         n_look_ahead=config["n_look_ahead"],
                                         use_swim=config["use_swim"],
                                         include_calendar=config["include_calendar"],
                                         weights=blocks["weights"],
                                         intercepts=blocks["intercepts"])
        except KeyError as err:
            raise ModelFormatError(f"lr model missing {err}") from None
    if kind == "ar":
        try:
            ar = baselines.ARModel(order=config["order"],
                                   intercept=float(blocks["intercept"][0]),
                                   phi=blocks["phi"],
                                   residual_std=float(blocks["residual_std"][0]))
            return ArForecaster(ar, n_look_ahead=config["n_look_ahead"])
        except KeyError as err:
            raise ModelFormatError(f"ar model missing {err}") from None
    if kind == "oracle":
        return OracleForecaster(n_lag=config.get("n_lag", 1),
                                n_look_ahead=config.get("n_look_ahead", 1))
    raise ModelFormatError(f"unknown model kind {kind!r}")
