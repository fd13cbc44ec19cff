import math

import numpy as np
import pytest

from trajcast import autodiff as ad
from trajcast import cells
from trajcast.autodiff import Value


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_oracle(x, h, p):
    """Term-by-term single-step reference, written independently of the
    kernel implementations."""
    r = sigmoid(p.W_ir.data @ x + p.b_ir.data + p.W_hr.data @ h + p.b_hr.data)
    z = sigmoid(p.W_iz.data @ x + p.b_iz.data + p.W_hz.data @ h + p.b_hz.data)
    n = np.tanh(p.W_in.data @ x + p.b_in.data + r * (p.W_hn.data @ h + p.b_hn.data))
    return (1.0 - z) * n + z * h


def lstm_oracle(x, h, c, p):
    i = sigmoid(p.W_ii.data @ x + p.b_ii.data + p.W_hi.data @ h + p.b_hi.data)
    f = sigmoid(p.W_if.data @ x + p.b_if.data + p.W_hf.data @ h + p.b_hf.data)
    g = np.tanh(p.W_ig.data @ x + p.b_ig.data + p.W_hg.data @ h + p.b_hg.data)
    o = sigmoid(p.W_io.data @ x + p.b_io.data + p.W_ho.data @ h + p.b_ho.data)
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def mogrify_oracle(x, h, q_mats, r_mats):
    rounds = len(q_mats) + len(r_mats)
    for a in range(1, rounds + 1):
        if a % 2 == 1:
            x = 1.5 * np.tanh(q_mats[(a - 1) // 2] @ h) * x
        else:
            h = 1.5 * np.tanh(r_mats[a // 2 - 1] @ x) * h
    return x, h


def make_gru(rng, nin, nh):
    return cells.GruParams.init(rng, nin, nh)


def zero_gru(nin, nh):
    rng = np.random.default_rng(0)
    p = cells.GruParams.init(rng, nin, nh)
    for v in p.ordered():
        v.data[...] = 0.0
    return p


class TestGruStep:
    def test_zero_weights_closed_form(self):
        p = zero_gru(1, 1)
        h = cells.gru_step(Value([0.0]), Value([1.0]), p)
        # r = z = sigmoid(0) = 0.5, n = tanh(0) = 0, h' = 0.5*0 + 0.5*1
        assert np.allclose(h.data, [0.5], atol=1e-15)

    def test_zero_fixed_point(self):
        p = zero_gru(2, 3)
        h = cells.gru_step(Value([0.0, 0.0]), Value(np.zeros(3)), p)
        assert np.array_equal(h.data, np.zeros(3))

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(11)
        p = make_gru(rng, 4, 4)
        x = rng.standard_normal(4)
        h = rng.standard_normal(4)
        out = cells.gru_step(Value(x), Value(h), p)
        assert np.max(np.abs(out.data - gru_oracle(x, h, p))) < 1e-12

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        p = make_gru(rng, 4, 3)
        with pytest.raises(ad.ShapeError, match="gru_step"):
            cells.gru_step(Value(np.zeros(5)), Value(np.zeros(3)), p)

    @pytest.mark.parametrize("seed", range(20))
    def test_output_within_convex_span(self, seed):
        # h' = (1-z) n + z h is elementwise between n and h_prev
        rng = np.random.default_rng(seed)
        p = make_gru(rng, 3, 5)
        x = rng.standard_normal(3)
        h = rng.standard_normal(5)
        r = sigmoid(p.W_ir.data @ x + p.b_ir.data + p.W_hr.data @ h + p.b_hr.data)
        n = np.tanh(p.W_in.data @ x + p.b_in.data + r * (p.W_hn.data @ h + p.b_hn.data))
        out = cells.gru_step(Value(x), Value(h), p).data
        lo = np.minimum(n, h) - 1e-12
        hi = np.maximum(n, h) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)


class TestMogrify:
    def test_zero_rounds_identity(self):
        rng = np.random.default_rng(3)
        mp = cells.MogrifierParams.init(rng, 4, 3, rounds=0)
        x, h = Value(rng.standard_normal(4)), Value(rng.standard_normal(3))
        x2, h2 = cells.mogrify(x, h, mp)
        assert x2 is x and h2 is h

    def test_zero_gating_annihilates(self):
        rng = np.random.default_rng(3)
        mp = cells.MogrifierParams.init(rng, 2, 2, rounds=2)
        for m in mp.ordered():
            m.data[...] = 0.0
        x2, h2 = cells.mogrify(Value([1.0, -1.0]), Value([2.0, 3.0]), mp)
        assert np.array_equal(x2.data, np.zeros(2))
        assert np.array_equal(h2.data, np.zeros(2))

    def test_scalar_two_round_hand_evaluation(self):
        rng = np.random.default_rng(3)
        mp = cells.MogrifierParams.init(rng, 1, 1, rounds=2)
        mp.q_mats[0].data[...] = 1.0
        mp.r_mats[0].data[...] = 1.0
        x2, h2 = cells.mogrify(Value([1.0]), Value([2.0]), mp)
        x_exp = 1.5 * math.tanh(2.0) * 1.0
        h_exp = 1.5 * math.tanh(x_exp) * 2.0
        assert x2.item() == pytest.approx(x_exp, abs=1e-15)
        assert h2.item() == pytest.approx(h_exp, abs=1e-15)

    def test_allocation_counts(self):
        rng = np.random.default_rng(0)
        for rounds in range(7):
            mp = cells.MogrifierParams.init(rng, 4, 3, rounds=rounds)
            assert len(mp.q_mats) == (rounds + 1) // 2
            assert len(mp.r_mats) == rounds // 2

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle_and_norm_bound(self, seed):
        rng = np.random.default_rng(seed)
        mp = cells.MogrifierParams.init(rng, 4, 3, rounds=6)
        x = rng.standard_normal(4)
        h = rng.standard_normal(3)
        x2, h2 = cells.mogrify(Value(x), Value(h), mp)
        ox, oh = mogrify_oracle(x, h, [q.data for q in mp.q_mats], [r.data for r in mp.r_mats])
        assert np.max(np.abs(x2.data - ox)) < 1e-12
        assert np.max(np.abs(h2.data - oh)) < 1e-12
        bound = 1.5 ** math.ceil(mp.rounds / 2) * np.abs(x) + 1e-12
        assert np.all(np.abs(x2.data) <= bound)


class TestMogrifierGru:
    def test_zero_rounds_recovers_gru(self):
        rng = np.random.default_rng(5)
        gp = make_gru(rng, 3, 4)
        mp = cells.MogrifierParams.init(rng, 3, 4, rounds=0)
        for _ in range(100):
            x = rng.standard_normal(3)
            h = rng.standard_normal(4)
            a = cells.mogrifier_gru_step(Value(x), Value(h), gp, mp)
            b = cells.gru_step(Value(x), Value(h), gp)
            assert np.max(np.abs(a.data - b.data)) <= 1e-12

    def test_six_rounds_differ_from_plain(self):
        rng = np.random.default_rng(6)
        gp = make_gru(rng, 3, 4)
        mp = cells.MogrifierParams.init(rng, 3, 4, rounds=6)
        x = rng.standard_normal(3)
        h = rng.standard_normal(4)
        a = cells.mogrifier_gru_step(Value(x), Value(h), gp, mp)
        b = cells.gru_step(Value(x), Value(h), gp)
        assert np.max(np.abs(a.data - b.data)) > 1e-6

    def test_zero_gating_zero_weights_composition(self):
        gp = zero_gru(2, 2)
        rng = np.random.default_rng(0)
        mp = cells.MogrifierParams.init(rng, 2, 2, rounds=2)
        for m in mp.ordered():
            m.data[...] = 0.0
        out = cells.mogrifier_gru_step(Value([3.0, -1.0]), Value([5.0, 7.0]), gp, mp)
        assert np.array_equal(out.data, np.zeros(2))


class TestLstmStep:
    def test_zero_weights_zero_state(self):
        rng = np.random.default_rng(0)
        p = cells.LstmLayerParams.init(rng, 2, 3)
        for v in p.ordered():
            v.data[...] = 0.0
        h, c = cells.lstm_step(Value([1.0, 2.0]), (Value(np.zeros(3)), Value(np.zeros(3))), p)
        assert np.array_equal(c.data, np.zeros(3))
        assert np.array_equal(h.data, np.zeros(3))

    def test_forget_gate_saturation(self):
        rng = np.random.default_rng(1)
        p = cells.LstmLayerParams.init(rng, 2, 3)
        p.b_if.data[...] = 100.0  # forget gate pinned open
        x = rng.standard_normal(2)
        h0 = rng.standard_normal(3)
        c0 = rng.standard_normal(3)
        _, c = cells.lstm_step(Value(x), (Value(h0), Value(c0)), p)
        i = sigmoid(p.W_ii.data @ x + p.b_ii.data + p.W_hi.data @ h0 + p.b_hi.data)
        g = np.tanh(p.W_ig.data @ x + p.b_ig.data + p.W_hg.data @ h0 + p.b_hg.data)
        assert np.max(np.abs(c.data - (c0 + i * g))) < 1e-9

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(2)
        p = cells.LstmLayerParams.init(rng, 3, 3)
        x = rng.standard_normal(3)
        h0 = rng.standard_normal(3)
        c0 = rng.standard_normal(3)
        h, c = cells.lstm_step(Value(x), (Value(h0), Value(c0)), p)
        oh, oc = lstm_oracle(x, h0, c0, p)
        assert np.max(np.abs(h.data - oh)) < 1e-12
        assert np.max(np.abs(c.data - oc)) < 1e-12


class TestEncodeSequence:
    def test_length_one_equals_single_step(self):
        rng = np.random.default_rng(4)
        p = cells.LstmParams.init(rng, 2, 3, num_layers=1)
        x = Value(rng.standard_normal(2))
        enc = cells.encode_sequence([x], p)
        h, _ = cells.lstm_step(x, (Value(np.zeros(3)), Value(np.zeros(3))), p.layers[0])
        assert np.array_equal(enc.data, h.data)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(4)
        p = cells.LstmParams.init(rng, 2, 3)
        with pytest.raises(ValueError, match="empty"):
            cells.encode_sequence([], p)

    def test_palindrome_bidirectional_symmetry(self):
        rng = np.random.default_rng(8)
        p = cells.LstmParams.init(rng, 2, 3, num_layers=2, mogrifier_rounds=2,
                                  bidirectional=True)
        # share direction weights so forward and backward sweeps coincide
        for fl, bl in zip(p.layers, p.backward_layers):
            for fv, bv in zip(fl.params().values(), bl.params().values()):
                bv.data[...] = fv.data
        seq = [Value([0.3, -0.2]), Value([1.0, 0.5]), Value([0.3, -0.2])]
        enc = cells.encode_sequence(seq, p).data
        nh = 3
        assert np.max(np.abs(enc[:nh] - enc[nh:])) < 1e-12

    def test_length_8_matches_manual_unroll(self):
        rng = np.random.default_rng(9)
        p = cells.LstmParams.init(rng, 2, 4, num_layers=2, mogrifier_rounds=6)
        seq_np = [rng.standard_normal(2) for _ in range(8)]
        enc = cells.encode_sequence([Value(s) for s in seq_np], p)

        def run_layer(layer, inputs):
            h = np.zeros(layer.hidden_dim)
            c = np.zeros(layer.hidden_dim)
            outs = []
            for x in inputs:
                if layer.mogrifier is not None:
                    x, h = mogrify_oracle(x, h, [q.data for q in layer.mogrifier.q_mats],
                                          [r.data for r in layer.mogrifier.r_mats])
                h, c = lstm_oracle(x, h, c, layer)
                outs.append(h)
            return outs

        hidden = seq_np
        for layer in p.layers:
            hidden = run_layer(layer, hidden)
        assert np.max(np.abs(enc.data - hidden[-1])) < 1e-12


@pytest.mark.parametrize("hidden", [1, 4, 8])
def test_cell_gradients_pass_grad_check(hidden):
    rng = np.random.default_rng(100 + hidden)
    nin = max(1, hidden // 2)
    gp = cells.GruParams.init(rng, nin, hidden)
    mp = cells.MogrifierParams.init(rng, nin, hidden, rounds=4)
    lp = cells.LstmLayerParams.init(rng, nin, hidden, mogrifier_rounds=2)
    x = Value(rng.standard_normal(nin), requires_grad=True, name="x")
    h = Value(rng.standard_normal(hidden), requires_grad=True, name="h")
    c = Value(rng.standard_normal(hidden), requires_grad=True, name="c")
    proj = Value(rng.standard_normal(hidden), name="proj")

    leaves = {"x": x, "h": h, "c": c}
    leaves.update(gp.params())
    leaves.update(mp.params())
    leaves.update(lp.params())

    def graph():
        g1 = cells.mogrifier_gru_step(x, h, gp, mp)
        h2, c2 = cells.lstm_step(x, (h, c), lp)
        return ad.dot(ad.add(g1, ad.add(h2, c2)), proj)

    report = ad.grad_check(graph, leaves, step=1e-5, tol=1e-4)
    assert report.passed, report
