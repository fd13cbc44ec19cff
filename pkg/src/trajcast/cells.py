"""Recurrent cells: GRU, LSTM, their mutual-gating (mogrifier) variants,
and uni/bi-directional stacked sequence encoders.

Cell steps are single fused graph nodes backed by `trajcast.kernels`;
their backward passes distribute kernel gradients onto the parameter
leaves. With zero gating rounds the mogrifier variants reduce exactly to
the plain cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .autodiff import ShapeError, Value, make_op, narrow, uniform_init

GATING_SCALE = 1.5  # each gating round rescales by 1.5 * tanh(.)

# 1.5*tanh(z) is contractive for small |z| (≈1.5z), so fan-in-scaled
# gating weights fed a near-zero hidden state collapse both streams toward
# zero: round one computes 1.5*tanh(Q h)*x ≈ 0, the cell output stays near
# zero, and every later step inherits the dead state (the zero state is a
# stable fixed point of the alternating products). Gating matrices
# therefore take an init gain, and sequence encoders start gated layers
# from a ones-scale hidden state. LSTM encoders tolerate a hot, saturated
# gain (outputs re-bounded by o*tanh(c) every step); the GRU decoder needs
# a moderate one, since its update gate passes the amplified hidden state
# straight through and gate products above 1 compound step over step.
MOGRIFIER_STATE_INIT = 1.0
LSTM_MOGRIFIER_GAIN = 20.0
GRU_MOGRIFIER_GAIN = 5.0


def _zeros(shape, name):
    return Value(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class GruParams:
    """Reset/update/new gate weights; input and hidden matrices plus both
    bias sets, mirroring the usual GRU parameterization."""

    W_ir: Value
    W_iz: Value
    W_in: Value
    W_hr: Value
    W_hz: Value
    W_hn: Value
    b_ir: Value
    b_iz: Value
    b_in: Value
    b_hr: Value
    b_hz: Value
    b_hn: Value

    @property
    def hidden_dim(self):
        return self.W_hr.data.shape[0]

    @property
    def input_dim(self):
        return self.W_ir.data.shape[1]

    @classmethod
    def init(cls, rng, input_dim, hidden_dim, prefix="gru"):
        def w(tag, rows, cols):
            return uniform_init(rng, (rows, cols), cols, name=f"{prefix}.{tag}")

        return cls(
            W_ir=w("W_ir", hidden_dim, input_dim),
            W_iz=w("W_iz", hidden_dim, input_dim),
            W_in=w("W_in", hidden_dim, input_dim),
            W_hr=w("W_hr", hidden_dim, hidden_dim),
            W_hz=w("W_hz", hidden_dim, hidden_dim),
            W_hn=w("W_hn", hidden_dim, hidden_dim),
            b_ir=_zeros(hidden_dim, f"{prefix}.b_ir"),
            b_iz=_zeros(hidden_dim, f"{prefix}.b_iz"),
            b_in=_zeros(hidden_dim, f"{prefix}.b_in"),
            b_hr=_zeros(hidden_dim, f"{prefix}.b_hr"),
            b_hz=_zeros(hidden_dim, f"{prefix}.b_hz"),
            b_hn=_zeros(hidden_dim, f"{prefix}.b_hn"),
        )

    def params(self):
        return {v.name: v for v in (
            self.W_ir, self.W_iz, self.W_in, self.W_hr, self.W_hz, self.W_hn,
            self.b_ir, self.b_iz, self.b_in, self.b_hr, self.b_hz, self.b_hn)}

    def ordered(self):
        return (self.W_ir, self.W_iz, self.W_in, self.W_hr, self.W_hz, self.W_hn,
                self.b_ir, self.b_iz, self.b_in, self.b_hr, self.b_hz, self.b_hn)


@dataclass
class MogrifierParams:
    """Per-round gating matrices. Odd rounds use a Q (input_dim x hidden),
    even rounds an R (hidden x input_dim); `rounds` rounds alternate
    starting with Q, so ceil(rounds/2) Qs and floor(rounds/2) Rs exist."""

    rounds: int
    q_mats: list = field(default_factory=list)
    r_mats: list = field(default_factory=list)

    @classmethod
    def init(cls, rng, input_dim, hidden_dim, rounds=6, gain=1.0, prefix="mog"):
        if rounds < 0:
            raise ValueError("rounds must be non-negative")
        qs = [uniform_init(rng, (input_dim, hidden_dim), hidden_dim / gain ** 2,
                           name=f"{prefix}.Q{k}")
              for k in range((rounds + 1) // 2)]
        rs = [uniform_init(rng, (hidden_dim, input_dim), input_dim / gain ** 2,
                           name=f"{prefix}.R{k}")
              for k in range(rounds // 2)]
        return cls(rounds=rounds, q_mats=qs, r_mats=rs)

    def params(self):
        return {v.name: v for v in self.q_mats + self.r_mats}

    def ordered(self):
        return tuple(self.q_mats) + tuple(self.r_mats)


@dataclass
class LstmLayerParams:
    """One LSTM layer: input/forget/cell/output gate matrices and biases,
    plus an optional mogrifier applied to (x, h) before the gates."""

    W_ii: Value
    W_if: Value
    W_ig: Value
    W_io: Value
    W_hi: Value
    W_hf: Value
    W_hg: Value
    W_ho: Value
    b_ii: Value
    b_if: Value
    b_ig: Value
    b_io: Value
    b_hi: Value
    b_hf: Value
    b_hg: Value
    b_ho: Value
    mogrifier: MogrifierParams | None = None

    @property
    def hidden_dim(self):
        return self.W_hi.data.shape[0]

    @property
    def input_dim(self):
        return self.W_ii.data.shape[1]

    @classmethod
    def init(cls, rng, input_dim, hidden_dim, mogrifier_rounds=0,
             mogrifier_gain=LSTM_MOGRIFIER_GAIN, prefix="lstm"):
        def w(tag, rows, cols):
            return uniform_init(rng, (rows, cols), cols, name=f"{prefix}.{tag}")

        mog = None
        if mogrifier_rounds > 0:
            mog = MogrifierParams.init(rng, input_dim, hidden_dim, mogrifier_rounds,
                                       gain=mogrifier_gain, prefix=f"{prefix}.mog")
        return cls(
            W_ii=w("W_ii", hidden_dim, input_dim),
            W_if=w("W_if", hidden_dim, input_dim),
            W_ig=w("W_ig", hidden_dim, input_dim),
            W_io=w("W_io", hidden_dim, input_dim),
            W_hi=w("W_hi", hidden_dim, hidden_dim),
            W_hf=w("W_hf", hidden_dim, hidden_dim),
            W_hg=w("W_hg", hidden_dim, hidden_dim),
            W_ho=w("W_ho", hidden_dim, hidden_dim),
            b_ii=_zeros(hidden_dim, f"{prefix}.b_ii"),
            b_if=_zeros(hidden_dim, f"{prefix}.b_if"),
            b_ig=_zeros(hidden_dim, f"{prefix}.b_ig"),
            b_io=_zeros(hidden_dim, f"{prefix}.b_io"),
            b_hi=_zeros(hidden_dim, f"{prefix}.b_hi"),
            b_hf=_zeros(hidden_dim, f"{prefix}.b_hf"),
            b_hg=_zeros(hidden_dim, f"{prefix}.b_hg"),
            b_ho=_zeros(hidden_dim, f"{prefix}.b_ho"),
            mogrifier=mog,
        )

    def params(self):
        out = {v.name: v for v in (
            self.W_ii, self.W_if, self.W_ig, self.W_io,
            self.W_hi, self.W_hf, self.W_hg, self.W_ho,
            self.b_ii, self.b_if, self.b_ig, self.b_io,
            self.b_hi, self.b_hf, self.b_hg, self.b_ho)}
        if self.mogrifier is not None:
            out.update(self.mogrifier.params())
        return out

    def ordered(self):
        return (self.W_ii, self.W_if, self.W_ig, self.W_io,
                self.W_hi, self.W_hf, self.W_hg, self.W_ho,
                self.b_ii, self.b_if, self.b_ig, self.b_io,
                self.b_hi, self.b_hf, self.b_hg, self.b_ho)


@dataclass
class LstmParams:
    """Stacked (optionally bidirectional) LSTM. Directions hold
    independent parameter sets; layer k consumes layer k-1's per-step
    hidden outputs."""

    layers: list
    backward_layers: list | None = None

    @property
    def bidirectional(self):
        return self.backward_layers is not None

    @property
    def hidden_dim(self):
        return self.layers[-1].hidden_dim

    @property
    def output_dim(self):
        return self.hidden_dim * (2 if self.bidirectional else 1)

    @classmethod
    def init(cls, rng, input_dim, hidden_dim, num_layers=1, mogrifier_rounds=0,
             mogrifier_gain=LSTM_MOGRIFIER_GAIN, bidirectional=False, prefix="lstm"):
        def stack(tag):
            out = []
            dim = input_dim
            for k in range(num_layers):
                out.append(LstmLayerParams.init(rng, dim, hidden_dim, mogrifier_rounds,
                                                mogrifier_gain=mogrifier_gain,
                                                prefix=f"{prefix}.{tag}l{k}"))
                dim = hidden_dim
            return out

        fwd = stack("")
        bwd = stack("rev.") if bidirectional else None
        return cls(layers=fwd, backward_layers=bwd)

    def params(self):
        out = {}
        for layer in self.layers + (self.backward_layers or []):
            out.update(layer.params())
        return out


# ---------------------------------------------------------------------------
# fused step ops

def _fused(out_data, parents, bwd):
    def backward(g):
        grads = bwd(g)
        for p, gp in zip(parents, grads):
            if p.requires_grad:
                p.accumulate(gp)

    return make_op(out_data, parents, backward)


def _check_vec(v, dim, what):
    if v.data.shape != (dim,):
        raise ShapeError(f"{what}: expected shape ({dim},), got {v.data.shape}")


def gru_step(x: Value, h_prev: Value, p: GruParams) -> Value:
    """One GRU update h' = (1-z)*n + z*h."""
    _check_vec(x, p.input_dim, "gru_step input")
    _check_vec(h_prev, p.hidden_dim, "gru_step hidden")
    mats = p.ordered()
    out, cache = K.gru_fwd(x.data, h_prev.data, *(m.data for m in mats))
    parents = (x, h_prev) + mats
    return _fused(out, parents, lambda g: _flat_gru_bwd(g, cache))


def _flat_gru_bwd(g, cache):
    return K.gru_bwd(g, cache)


def mogrify(x: Value, h: Value, p: MogrifierParams):
    """Mutual gating: rounds alternate x^a = 1.5 tanh(Q^a h^{a-1}) * x^{a-2}
    (odd a) and h^a = 1.5 tanh(R^a x^{a-1}) * h^{a-2} (even a), the
    untouched partner carrying forward; zero rounds is the identity."""
    if p.rounds == 0:
        return x, h
    q_data = tuple(m.data for m in p.q_mats)
    r_data = tuple(m.data for m in p.r_mats)
    for qm in p.q_mats:
        if qm.data.shape != (x.data.shape[0], h.data.shape[0]):
            raise ShapeError(f"mogrify Q: expected {(x.data.shape[0], h.data.shape[0])}, "
                             f"got {qm.data.shape}")
    for rm in p.r_mats:
        if rm.data.shape != (h.data.shape[0], x.data.shape[0]):
            raise ShapeError(f"mogrify R: expected {(h.data.shape[0], x.data.shape[0])}, "
                             f"got {rm.data.shape}")
    out, cache = K.mogrify_fwd(x.data, h.data, q_data, r_data)
    parents = (x, h) + tuple(p.q_mats) + tuple(p.r_mats)

    def bwd(g):
        gx, gh, gq, gr = K.mogrify_bwd(g, cache)
        return (gx, gh) + gq + gr

    node = _fused(out, parents, bwd)
    nx = x.data.shape[0]
    return narrow(node, 0, nx), narrow(node, nx, out.shape[0])


def mogrifier_gru_step(x: Value, h_prev: Value, gp: GruParams, mp: MogrifierParams) -> Value:
    """Gating rounds followed by the plain GRU update."""
    x2, h2 = mogrify(x, h_prev, mp)
    return gru_step(x2, h2, gp)


def lstm_step(x: Value, state, p: LstmLayerParams):
    """One LSTM update; the layer's mogrifier (if any) rewrites (x, h)
    before the gates. Returns (h', c')."""
    h, c = state
    _check_vec(x, p.input_dim, "lstm_step input")
    _check_vec(h, p.hidden_dim, "lstm_step hidden")
    _check_vec(c, p.hidden_dim, "lstm_step cell")
    if p.mogrifier is not None:
        x, h = mogrify(x, h, p.mogrifier)
    mats = p.ordered()
    out, cache = K.lstm_fwd(x.data, h.data, c.data, *(m.data for m in mats))
    parents = (x, h, c) + mats
    node = _fused(out, parents, lambda g: K.lstm_bwd(g, cache))
    nh = p.hidden_dim
    return narrow(node, 0, nh), narrow(node, nh, 2 * nh)


def default_initial_state(layer: LstmLayerParams):
    """Zero cell state; zero hidden state, except the small constant that
    keeps mogrifier gating alive (see MOGRIFIER_STATE_INIT)."""
    if layer.mogrifier is not None and layer.mogrifier.rounds > 0:
        h = Value(np.full(layer.hidden_dim, MOGRIFIER_STATE_INIT))
    else:
        h = Value(np.zeros(layer.hidden_dim))
    return h, Value(np.zeros(layer.hidden_dim))


def _run_direction(seq, layers, initial):
    hidden = seq
    for li, layer in enumerate(layers):
        if initial is not None and li == 0:
            h, c = initial
        else:
            h, c = default_initial_state(layer)
        outputs = []
        for x in hidden:
            h, c = lstm_step(x, (h, c), layer)
            outputs.append(h)
        hidden = outputs
    return hidden[-1]


def encode_sequence(seq, p: LstmParams, initial=None) -> Value:
    """Fold a sequence of input vectors; returns the final hidden state,
    or the concat of forward-final and backward-final when bidirectional."""
    if len(seq) == 0:
        raise ValueError("encode_sequence: empty sequence")
    final = _run_direction(seq, p.layers, initial)
    if not p.bidirectional:
        return final
    rev = _run_direction(list(reversed(seq)), p.backward_layers, initial)
    from .autodiff import concat
    return concat([final, rev])
