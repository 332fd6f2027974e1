import math

import numpy as np
import pytest

from dplstm.gradcheck import check_model, random_instance
from dplstm.models import (EmbeddingTables, FeedforwardParams, LSTMParams, LSTMState, ParserModel,
                           count_parameters, embed, ff_backward, ff_forward, load_pretrained_words,
                           lstm_bptt, lstm_forward, lstm_step, sequence_gradients, sequence_loss)
from dplstm.nn import ShapeError
from dplstm.treebank import Vocabulary


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def transcribe_step(x, c_prev, h_prev, P):
    """Plain-Python evaluation of the peephole LSTM equations, one scalar at a time.

    ``P`` maps block names to nested lists; peepholes may be vectors or matrices.
    """
    H = len(h_prev)

    def mv(W, v):
        return [sum(W[r][k] * v[k] for k in range(len(v))) for r in range(len(W))]

    def peep(W, c):
        if isinstance(W[0], list):
            return mv(W, c)
        return [W[r] * c[r] for r in range(H)]

    xi, xf, xc, xo = (mv(P[n], x) for n in ("W_xi", "W_xf", "W_xc", "W_xo"))
    hi, hf, hc, ho = (mv(P[n], h_prev) for n in ("W_hi", "W_hf", "W_hc", "W_ho"))
    pi, pf = peep(P["W_ci"], c_prev), peep(P["W_cf"], c_prev)
    i = [_sig(xi[r] + pi[r] + hi[r] + P["b_i"][r]) for r in range(H)]
    f = [_sig(xf[r] + pf[r] + hf[r] + P["b_f"][r]) for r in range(H)]
    c = [f[r] * c_prev[r] + i[r] * math.tanh(xc[r] + hc[r] + P["b_c"][r]) for r in range(H)]
    po = peep(P["W_co"], c)
    o = [_sig(xo[r] + po[r] + ho[r] + P["b_o"][r]) for r in range(H)]
    h = [o[r] * math.tanh(c[r]) for r in range(H)]
    z = [a + b for a, b in zip(mv(P["W_hy"], h), P["b_y"])]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    y = [v / sum(e) for v in e]
    return y, c, h


def random_lstm(rng, input_dim=7, H=3, A=4, peephole="diagonal", scale=0.8):
    p = LSTMParams.initialize(input_dim, H, A, rng, peephole)
    for b in p.blocks().values():
        b[...] = rng.uniform(-scale, scale, b.shape)
    return p


def as_lists(params):
    return {k: v.tolist() for k, v in params.blocks().items()}


class TestLSTMStep:
    @pytest.mark.parametrize("peephole", ["diagonal", "full"])
    def test_matches_transcription(self, peephole):
        rng = np.random.default_rng(3)
        p = random_lstm(rng, peephole=peephole)
        state = LSTMState(rng.normal(size=3), rng.normal(size=3))
        for _ in range(5):
            x = rng.normal(size=7)
            y, new, _ = lstm_step(x, state, p)
            ry, rc, rh = transcribe_step(x.tolist(), state.c.tolist(), state.h.tolist(), as_lists(p))
            np.testing.assert_allclose(y, ry, rtol=0, atol=1e-12)
            np.testing.assert_allclose(new.c, rc, rtol=0, atol=1e-12)
            np.testing.assert_allclose(new.h, rh, rtol=0, atol=1e-12)
            state = new

    def test_zero_weights(self):
        p = LSTMParams.initialize(4, 3, 5, np.random.default_rng(0))
        for b in p.blocks().values():
            b[...] = 0.0
        y, state, cache = lstm_step(np.ones(4), LSTMState.zeros(3), p)
        for gate in (cache.i, cache.f, cache.o):
            np.testing.assert_array_equal(gate, 0.5)
        np.testing.assert_array_equal(state.c, 0.0)
        np.testing.assert_array_equal(state.h, 0.0)
        np.testing.assert_allclose(y, 0.2)

    def test_memory_persistence(self):
        rng = np.random.default_rng(1)
        p = random_lstm(rng)
        p.b_i[...] = -1000.0
        p.b_f[...] = 1000.0
        c0 = rng.normal(size=3)
        _, cache = lstm_forward(rng.normal(size=(20, 7)), p, initial=LSTMState(c0, np.zeros(3)))
        for t in range(1, 21):
            np.testing.assert_array_equal(cache.c[t], c0)

    def test_sequence_equals_repeated_steps(self):
        rng = np.random.default_rng(2)
        p = random_lstm(rng)
        X = rng.normal(size=(6, 7))
        mx = (rng.random((6, 7)) > 0.3) / 0.7
        mh = (rng.random((6, 3)) > 0.3) / 0.7
        Y, cache = lstm_forward(X, p, mx, mh)
        state = LSTMState.zeros(3)
        for t in range(6):
            y, state, _ = lstm_step(X[t], state, p, mx[t], mh[t])
            np.testing.assert_allclose(y, Y[t], rtol=0, atol=1e-14)
            np.testing.assert_allclose(state.h, cache.h[t + 1], rtol=0, atol=1e-14)

    def test_outputs_bounded(self):
        rng = np.random.default_rng(4)
        p = random_lstm(rng, scale=3.0)
        Y, cache = lstm_forward(rng.normal(size=(30, 7)), p)
        for gate in (cache.i, cache.f, cache.o):
            assert np.all((gate > 0) & (gate < 1))
        np.testing.assert_allclose(Y.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(Y > 0)

    def test_state_shape(self):
        p = random_lstm(np.random.default_rng(0))
        with pytest.raises(ShapeError):
            lstm_step(np.zeros(7), LSTMState.zeros(4), p)
        with pytest.raises(ShapeError):
            lstm_step(np.zeros(6), LSTMState.zeros(3), p)


class TestBPTT:
    def test_decouples_without_recurrence(self):
        """With no recurrent or peephole weights and a closed forget gate, the
        full-sequence gradient is the sum of one-step gradients, each taken
        from the state the sequence actually reached."""
        rng = np.random.default_rng(5)
        p = random_lstm(rng)
        for name in ("W_hi", "W_hf", "W_hc", "W_ho", "W_ci", "W_cf", "W_co"):
            getattr(p, name)[...] = 0.0
        p.b_f[...] = -1000.0
        X = rng.normal(size=(5, 7))
        gold = rng.integers(0, 4, 5)
        _, cache = lstm_forward(X, p)
        full, dX = lstm_bptt(cache, gold, p)
        total = {k: np.zeros_like(v) for k, v in full.items()}
        for t in range(5):
            prev = LSTMState(cache.c[t], cache.h[t])
            g, dx = lstm_bptt(lstm_forward(X[t:t + 1], p, initial=prev)[1], gold[t:t + 1], p)
            for k in total:
                total[k] += g[k]
            np.testing.assert_allclose(dX[t], dx[0], atol=1e-14)
        for k in total:
            np.testing.assert_allclose(full[k], total[k], atol=1e-13, err_msg=k)

    def test_single_step(self):
        model, f, a, masks = random_instance("lstm", length=1, seed=2)
        assert check_model(model, f, a, masks).passed

    @pytest.mark.parametrize("seed", range(3))
    def test_gradcheck_diagonal(self, seed):
        model, f, a, masks = random_instance("lstm", embed_dim=6, hidden=5, n_actions=4, length=8,
                                             seed=seed)
        report = check_model(model, f, a, masks)
        assert set(report.max_rel_error) >= {"W_ci", "W_cf", "W_co", "E_word", "E_pos", "E_label"}
        assert report.passed, report.max_rel_error

    def test_gradcheck_full_peephole(self):
        model, f, a, masks = random_instance("lstm", seed=0, peephole="full")
        assert model.params.W_ci.shape == (5, 5)
        report = check_model(model, f, a, masks)
        assert report.passed, report.max_rel_error


class TestFeedforward:
    def test_zero_weights_uniform(self):
        p = FeedforwardParams.initialize(6, 4, 3, np.random.default_rng(0))
        for b in p.blocks().values():
            b[...] = 0.0
        y, _ = ff_forward(np.arange(6.0), p)
        np.testing.assert_allclose(y, [1 / 3] * 3)

    def test_unit_masks_match_inference(self):
        rng = np.random.default_rng(0)
        p = FeedforwardParams.initialize(6, 4, 3, rng)
        x = rng.normal(size=6)
        np.testing.assert_array_equal(ff_forward(x, p, np.ones(6), np.ones(4))[0], ff_forward(x, p)[0])

    def test_activations_differ(self):
        rng = np.random.default_rng(0)
        p = FeedforwardParams.initialize(6, 4, 3, rng)
        x = rng.normal(size=6)
        q = FeedforwardParams(p.W_xh, p.b_h, p.W_hy, p.b_y, "cubic")
        assert not np.allclose(ff_forward(x, p)[0], ff_forward(x, q)[0])

    def test_output_delta(self):
        rng = np.random.default_rng(0)
        p = FeedforwardParams.initialize(6, 4, 3, rng)
        y, cache = ff_forward(rng.normal(size=6), p)
        grads, _ = ff_backward(cache, 1, p)
        np.testing.assert_allclose(grads["b_y"], y - np.eye(3)[1])
        np.testing.assert_allclose(grads["W_hy"], np.outer(y - np.eye(3)[1], cache.hd))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck_tanh_tight(self, seed):
        model, f, a, masks = random_instance("ff-tanh", embed_dim=4, hidden=5, n_actions=3,
                                             length=1, seed=seed, p_drop=0.0)
        report = check_model(model, f, a, masks, l2=0.0, step=1e-4, tolerance=1e-6)
        assert report.passed, report.max_rel_error

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck_cubic(self, seed):
        # x^3 has a constant third derivative, so central differences carry an
        # absolute error near 1e-9 that swamps near-zero gradients at 1e-6
        model, f, a, masks = random_instance("ff-cubic", embed_dim=4, hidden=5, n_actions=3,
                                             length=1, seed=seed, p_drop=0.0)
        report = check_model(model, f, a, masks, l2=0.0, step=3e-5, tolerance=1e-4)
        assert report.passed, report.max_rel_error

    @pytest.mark.parametrize("arch", ["ff-tanh", "ff-cubic"])
    def test_gradcheck_sequence_with_dropout(self, arch):
        model, f, a, masks = random_instance(arch, seed=1)
        assert check_model(model, f, a, masks).passed


class TestSequenceLoss:
    def setup_method(self):
        self.vocab = Vocabulary(["a", "b"], ["X"], ["root", "dep"])

    def model(self, arch):
        return ParserModel.initialize(arch, self.vocab, 3, 4, np.random.default_rng(0))

    @pytest.mark.parametrize("arch", ["ff-tanh", "lstm"])
    def test_uniform_model(self, arch):
        m = self.model(arch)
        m.params.W_hy[...] = 0.0
        n = 3
        feats = np.random.default_rng(0).integers(0, 4, (2 * n, 48))
        feats[:, 36:] = 0
        loss, _ = sequence_loss(m, feats, np.zeros(2 * n, dtype=int))
        assert loss == pytest.approx(2 * n * math.log(5), rel=1e-14)

    def test_confident_model_zero_loss(self):
        m = self.model("ff-tanh")
        m.params.W_hy[...] = 0.0
        m.params.b_y[...] = [800.0, 0, 0, 0, 0]
        loss, _ = sequence_loss(m, np.zeros((4, 48), dtype=int), np.zeros(4, dtype=int))
        assert loss == 0.0

    def test_zero_params_zero_penalty(self):
        m = self.model("lstm")
        for b in m.blocks().values():
            b[...] = 0.0
        feats = np.zeros((2, 48), dtype=int)
        acts = np.array([0, 3])
        assert sequence_loss(m, feats, acts, l2=0.5)[0] == sequence_loss(m, feats, acts)[0]

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            sequence_loss(self.model("lstm"), np.zeros((0, 48), dtype=int), np.zeros(0, dtype=int))

    @pytest.mark.parametrize("arch", ["ff-cubic", "lstm"])
    def test_unused_rows_have_zero_gradient(self, arch):
        m = self.model(arch)
        feats = np.zeros((3, 48), dtype=int)
        feats[:, :18] = 3  # word "a"
        feats[:, 18:36] = 1  # ROOT tag
        _, cache = sequence_loss(m, feats, np.array([0, 1, 2]))
        g = sequence_gradients(m, cache)
        assert np.all(g["E_word"][[0, 1, 2, 4]] == 0.0)
        assert np.any(g["E_word"][3] != 0.0)
        assert np.all(g["E_pos"][[0, 2, 3]] == 0.0)
        assert np.all(g["E_label"][1:] == 0.0)

    def test_deterministic(self):
        model, f, a, masks = random_instance("lstm", seed=7)
        l1, c1 = sequence_loss(model, f, a, masks, 1e-3)
        l2, c2 = sequence_loss(model, f, a, masks, 1e-3)
        assert l1 == l2
        g1, g2 = sequence_gradients(model, c1, 1e-3), sequence_gradients(model, c2, 1e-3)
        for k in g1:
            np.testing.assert_array_equal(g1[k], g2[k])


class TestCounting:
    def test_lstm_anchor(self):
        p = LSTMParams.initialize(2400, 50, 97, np.random.default_rng(0))
        expected = 4 * 50 * 2400 + 4 * 50 * 50 + 3 * 50 + 4 * 50 + 97 * 50 + 97
        assert count_parameters(p) == expected == 495_297

    def test_tiny_feedforward(self):
        p = FeedforwardParams.initialize(48, 1, 3, np.random.default_rng(0))
        assert count_parameters(p) == 55

    def test_embeddings_toggle(self):
        vocab = Vocabulary(["a", "b"], ["X"], ["root", "dep"])
        m = ParserModel.initialize("lstm", vocab, 3, 4, np.random.default_rng(0))
        diff = count_parameters(m.params, m.embeddings, True) - count_parameters(m.params)
        assert diff == (5 + 4 + 3) * 3
        with pytest.raises(ValueError):
            count_parameters(m.params, include_embeddings=True)


class TestEmbeddings:
    def test_initial_range(self):
        t = EmbeddingTables.initialize((50, 10, 5), 8, np.random.default_rng(0))
        assert np.abs(t.word).max() <= 0.01
        assert t.word.shape == (50, 8) and t.label.shape == (5, 8)

    def test_embed_concatenates_in_slot_order(self):
        t = EmbeddingTables(np.arange(10.0)[:, None] * [1, 1], np.arange(5.0)[:, None] * [10, 10],
                            np.arange(4.0)[:, None] * [100, 100])
        feats = np.array([1] * 18 + [2] * 18 + [3] * 12)
        x = embed(feats, t)
        assert x.shape == (96,)
        assert x[0] == 1 and x[36] == 20 and x[72] == 300

    def test_pretrained(self, tmp_path):
        vocab = Vocabulary(["a", "b"], ["X"], ["root"])
        t = EmbeddingTables.initialize(vocab.sizes(), 2, np.random.default_rng(0))
        path = tmp_path / "vec.txt"
        path.write_text("a 0.5 0.25\nzzz 1 1\nb 1\n")
        assert load_pretrained_words(t, vocab, path) == 1
        np.testing.assert_array_equal(t.word[vocab.word_index["a"]], [0.5, 0.25])
