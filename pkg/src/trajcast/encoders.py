"""Instance encoders: agent history, attention-pooled social context, map
patch, and (training only) future encodings.

Per-step inputs are positions relative to the target's last observed
position plus finite-difference velocities, which makes the encodings
translation invariant. The social pools use additive attention with the
target encoding as query; an empty neighborhood yields an explicit zero
vector plus flag rather than a fabricated encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Value, concat, dot, matmul, narrow, relu, softmax, tanh, uniform_init
from .cells import LstmParams, encode_sequence
from .config import ModelConfig
from .nnops import affine, conv2d
from .scene import PredictionInstance


@dataclass
class AttentionParams:
    """Additive attention: score(q, k) = v . tanh(Wq q + Wk k)."""

    W_q: Value
    W_k: Value
    v: Value

    @classmethod
    def init(cls, rng, query_dim, key_dim, attn_dim, prefix="attn"):
        return cls(
            W_q=uniform_init(rng, (attn_dim, query_dim), query_dim, name=f"{prefix}.W_q"),
            W_k=uniform_init(rng, (attn_dim, key_dim), key_dim, name=f"{prefix}.W_k"),
            v=uniform_init(rng, (attn_dim,), attn_dim, name=f"{prefix}.v"),
        )

    def params(self):
        return {p.name: p for p in (self.W_q, self.W_k, self.v)}


@dataclass
class MapEncoderParams:
    """Two stride-2 convolutions with ReLU, flattened and projected."""

    conv1_w: Value
    conv1_b: Value
    conv2_w: Value
    conv2_b: Value
    proj_W: Value
    proj_b: Value
    out_dim: int

    @classmethod
    def init(cls, rng, patch_cells, c1, c2, out_dim, prefix="map"):
        k, stride = 3, 2
        o1 = (patch_cells - k) // stride + 1
        if o1 < k:
            raise ValueError(f"map patch of {patch_cells} cells too small for two "
                             f"{k}x{k} stride-{stride} convolutions")
        o2 = (o1 - k) // stride + 1
        flat = c2 * o2 * o2
        return cls(
            conv1_w=uniform_init(rng, (c1, 1, k, k), k * k, name=f"{prefix}.conv1_w"),
            conv1_b=Value(np.zeros(c1), requires_grad=True, name=f"{prefix}.conv1_b"),
            conv2_w=uniform_init(rng, (c2, c1, k, k), c1 * k * k, name=f"{prefix}.conv2_w"),
            conv2_b=Value(np.zeros(c2), requires_grad=True, name=f"{prefix}.conv2_b"),
            proj_W=uniform_init(rng, (out_dim, flat), flat, name=f"{prefix}.proj_W"),
            proj_b=Value(np.zeros(out_dim), requires_grad=True, name=f"{prefix}.proj_b"),
            out_dim=out_dim,
        )

    def params(self):
        return {p.name: p for p in (self.conv1_w, self.conv1_b, self.conv2_w,
                                    self.conv2_b, self.proj_W, self.proj_b)}


@dataclass
class EncoderParams:
    history_lstm: LstmParams
    neighbor_lstm: LstmParams
    future_lstm: LstmParams
    attention: AttentionParams         # social pooling over neighbor histories
    future_attention: AttentionParams  # social pooling over neighbor futures
    map_encoder: MapEncoderParams | None

    @classmethod
    def init(cls, rng, cfg: ModelConfig, prefix="enc"):
        feat = 4  # relative position + velocity
        history = LstmParams.init(rng, feat, cfg.history_hidden,
                                  num_layers=cfg.encoder_layers,
                                  mogrifier_rounds=cfg.mogrifier_rounds,
                                  prefix=f"{prefix}.history")
        neighbor = LstmParams.init(rng, feat, cfg.neighbor_hidden,
                                   num_layers=cfg.encoder_layers,
                                   mogrifier_rounds=cfg.mogrifier_rounds,
                                   prefix=f"{prefix}.neighbor")
        future = LstmParams.init(rng, feat, cfg.future_hidden,
                                 num_layers=cfg.encoder_layers,
                                 mogrifier_rounds=cfg.mogrifier_rounds,
                                 bidirectional=True,
                                 prefix=f"{prefix}.future")
        attention = AttentionParams.init(rng, cfg.history_hidden, cfg.neighbor_hidden,
                                         cfg.attention_dim, prefix=f"{prefix}.attn")
        future_attention = AttentionParams.init(rng, 2 * cfg.future_hidden,
                                                cfg.neighbor_hidden, cfg.attention_dim,
                                                prefix=f"{prefix}.fattn")
        map_encoder = None
        if cfg.use_map:
            map_encoder = MapEncoderParams.init(rng, cfg.map_patch_cells,
                                                cfg.map_channels1, cfg.map_channels2,
                                                cfg.map_encoding_dim, prefix=f"{prefix}.map")
        return cls(history, neighbor, future, attention, future_attention, map_encoder)

    def params(self):
        out = {}
        out.update(self.history_lstm.params())
        out.update(self.neighbor_lstm.params())
        out.update(self.future_lstm.params())
        out.update(self.attention.params())
        out.update(self.future_attention.params())
        if self.map_encoder is not None:
            out.update(self.map_encoder.params())
        return out

    def history_dim(self, has_map: bool) -> int:
        base = self.history_lstm.hidden_dim + self.neighbor_lstm.hidden_dim
        if has_map and self.map_encoder is not None:
            base += self.map_encoder.out_dim
        return base


@dataclass
class CompleteHistoryTensor:
    """Concat of agent-history, pooled-social, and map encodings."""

    v_i: Value
    has_social: bool
    has_map: bool


@dataclass
class CompleteFutureTensor:
    """Concat of the bidirectional agent-future encoding and the pooled
    neighbor-future encoding (training only)."""

    v_f: Value
    has_social: bool


def step_features(positions: np.ndarray, origin: np.ndarray, dt: float):
    """Per-step (rel position, velocity) feature vectors."""
    pos = np.asarray(positions, dtype=np.float64)
    rel = pos - np.asarray(origin)
    if len(pos) > 1:
        vel = np.diff(pos, axis=0) / dt
        vel = np.vstack([vel[:1], vel])
    else:
        vel = np.zeros_like(rel)
    return [Value(np.concatenate([rel[t], vel[t]])) for t in range(len(pos))]


def encode_agent_history(instance: PredictionInstance, params: EncoderParams) -> Value:
    """Final hidden state of the stacked gated LSTM over the observed
    window."""
    if len(instance.target_history) < instance.t_obs + 1:
        raise ValueError(f"history too short: {len(instance.target_history)} positions "
                         f"for t_obs={instance.t_obs}")
    seq = step_features(instance.target_history, instance.last_observed, instance.dt)
    return encode_sequence(seq, params.history_lstm)


def additive_attention(query: Value, keys, p: AttentionParams):
    """Softmax-normalized additive attention pool of `keys`.

    Returns (pooled, weights)."""
    q_proj = matmul(p.W_q, query)
    scores = [dot(p.v, tanh(q_proj + matmul(p.W_k, k))) for k in keys]
    weights = softmax(concat(scores))
    pooled = None
    for j, k in enumerate(keys):
        term = narrow(weights, j, j + 1) * k
        pooled = term if pooled is None else pooled + term
    return pooled, weights


def _encode_neighbor_set(sequences, origin, dt, lstm, attn, query):
    keys = []
    for seq_positions in sequences:
        if len(seq_positions) == 0:
            continue
        feats = step_features(seq_positions, origin, dt)
        keys.append(encode_sequence(feats, lstm))
    if not keys:
        return Value(np.zeros(lstm.hidden_dim)), False, None
    pooled, weights = additive_attention(query, keys, attn)
    return pooled, True, weights


def encode_social(instance: PredictionInstance, params: EncoderParams, query: Value):
    """Attention-pooled neighbor-history encoding with the target-history
    encoding as query; zero neighbors give a zero vector and a flag."""
    pooled, has_social, _ = _encode_neighbor_set(
        instance.neighbor_histories, instance.last_observed, instance.dt,
        params.neighbor_lstm, params.attention, query)
    return pooled, has_social


def encode_map(map_patch, params: EncoderParams):
    """Map patch -> fixed-size encoding; bypassed (zeros + flag) when
    there is no map or no map encoder."""
    me = params.map_encoder
    if me is None:
        return None, False
    patch = np.asarray(map_patch, dtype=np.float64)
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1]:
        raise ValueError(f"map patch must be square, got {patch.shape}")
    img = Value(patch[None, :, :])
    h1 = relu(conv2d(img, me.conv1_w, me.conv1_b, stride=2))
    h2 = relu(conv2d(h1, me.conv2_w, me.conv2_b, stride=2))
    return affine(me.proj_W, flatten_value(h2), me.proj_b), True


def flatten_value(v: Value) -> Value:
    from .autodiff import flatten
    return flatten(v)


def encode_history(instance: PredictionInstance, params: EncoderParams) -> CompleteHistoryTensor:
    """Assemble the complete history tensor (history, social, map)."""
    agent = encode_agent_history(instance, params)
    social, has_social = encode_social(instance, params, agent)
    parts = [agent, social]
    has_map = False
    if instance.has_map and params.map_encoder is not None:
        map_enc, has_map = encode_map(instance.map_patch, params)
        if has_map:
            parts.append(map_enc)
    return CompleteHistoryTensor(v_i=concat(parts), has_social=has_social, has_map=has_map)


def encode_future(instance: PredictionInstance, params: EncoderParams):
    """Complete future tensor plus the bidirectional posterior feature.

    Only valid in training mode (ground-truth future present)."""
    if instance.target_future is None:
        raise ValueError("encode_future requires a ground-truth future (training mode)")
    origin = instance.last_observed
    seq = step_features(instance.target_future, origin, instance.dt)
    bidir = encode_sequence(seq, params.future_lstm)
    social, has_social, _ = _encode_neighbor_set(
        instance.neighbor_futures, origin, instance.dt,
        params.neighbor_lstm, params.future_attention, bidir)
    v_f = concat([bidir, social])
    return CompleteFutureTensor(v_f=v_f, has_social=has_social), bidir
