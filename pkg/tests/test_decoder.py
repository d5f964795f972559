import math

import numpy as np
import pytest

from sql2text import autodiff as ad
from sql2text.autodiff import Tensor, default_dtype
from sql2text.data import BOS, EOS
from sql2text.decoder import (
    DecoderConfig,
    attention_context,
    beam_search,
    build_decoder_params,
    decode_step,
    greedy_decode,
    init_state,
    precompute_attention,
    sequence_loss,
)
from sql2text.optim import ParameterStore, randomize_parameters

VOCAB = 9
NODE_DIM = 4


def make_store(cfg: DecoderConfig, seed=0, randomize=None) -> ParameterStore:
    store = ParameterStore()
    build_decoder_params(store, VOCAB, cfg, np.random.default_rng(seed))
    if randomize is not None:
        randomize_parameters(store, np.random.default_rng(randomize))
    return store


def small_cfg(**kwargs) -> DecoderConfig:
    defaults = dict(hidden_size=3, word_dim=3, node_dim=NODE_DIM, dropout=0.0, max_decode_len=8)
    defaults.update(kwargs)
    return DecoderConfig(**defaults)


def random_nodes(n, seed=0) -> Tensor:
    return Tensor(np.random.default_rng(seed).normal(size=(n, NODE_DIM)))


class TestInitState:
    def test_zero_embedding_zero_weights_gives_zero_state(self):
        cfg = small_cfg()
        store = make_store(cfg)
        for name in ("dec_init_h.w", "dec_init_h.b", "dec_init_c.w", "dec_init_c.b"):
            store[name].data = np.zeros_like(store[name].data)
        state = init_state(ad.zeros((NODE_DIM,)), random_nodes(2), None, store, cfg)
        assert np.array_equal(state.h.data, np.zeros(3, dtype=np.float32))
        assert np.array_equal(state.c.data, np.zeros(3, dtype=np.float32))
        assert state.prev_token == BOS

    def test_distinct_embeddings_give_distinct_states(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=1)
        nodes = random_nodes(2)
        s1 = init_state(Tensor([1.0, 0.0, 0.0, 0.0]), nodes, None, store, cfg)
        s2 = init_state(Tensor([0.0, 1.0, 0.0, 0.0]), nodes, None, store, cfg)
        assert not np.allclose(s1.h.data, s2.h.data)

    def test_deterministic(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=2)
        nodes = random_nodes(3)
        ge = Tensor([0.1, -0.2, 0.3, 0.4])
        a = init_state(ge, nodes, None, store, cfg)
        b = init_state(ge, nodes, None, store, cfg)
        assert np.array_equal(a.h.data, b.h.data)
        assert np.array_equal(a.context.data, b.context.data)

    def test_dimension_mismatch_rejected(self):
        cfg = small_cfg()
        store = make_store(cfg)
        with pytest.raises(ValueError):
            init_state(Tensor([1.0, 2.0]), random_nodes(2), None, store, cfg)


class TestAttention:
    def test_single_node_gets_full_weight(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=3)
        nodes = random_nodes(1, seed=5)
        context, weights = attention_context(Tensor([0.3, -0.1, 0.6]), nodes, None, store, cfg)
        assert np.array_equal(weights.data, np.array([1.0], dtype=np.float32))
        assert np.allclose(context.data, nodes.data[0])

    def test_identical_nodes_get_uniform_weights(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=4)
        row = np.array([0.5, 1.0, -0.5, 0.25], dtype=np.float32)
        nodes = Tensor(np.stack([row] * 4))
        _, weights = attention_context(Tensor([0.3, -0.1, 0.6]), nodes, None, store, cfg)
        assert np.allclose(weights.data, 0.25, atol=1e-6)

    def test_hand_set_scores_closed_form(self):
        with default_dtype(np.float64):
            cfg = small_cfg(attention="dot")
            store = make_store(cfg)
            # Project the state onto the first coordinate so the scores are
            # exactly the first column of the node matrix: [ln 2, 0, 0].
            store["attn_dot.w"].data = np.zeros((3, NODE_DIM))
            store["attn_dot.b"].data = np.array([1.0, 0.0, 0.0, 0.0])
            nodes = Tensor(np.array([
                [math.log(2.0), 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ]))
            _, weights = attention_context(Tensor([9.0, 9.0, 9.0]), nodes, None, store, cfg)
            assert np.allclose(weights.data, [0.5, 0.25, 0.25], atol=1e-12)

    @pytest.mark.parametrize("attention", ["additive", "dot"])
    def test_weights_nonnegative_and_sum_to_one(self, attention):
        cfg = small_cfg(attention=attention)
        store = make_store(cfg, randomize=5)
        nodes = random_nodes(6, seed=6)
        proj = precompute_attention(nodes, store, cfg)
        for seed in range(10):
            s = Tensor(np.random.default_rng(seed).normal(size=3))
            _, weights = attention_context(s, nodes, proj, store, cfg)
            assert (weights.data >= 0).all()
            assert abs(float(weights.data.sum()) - 1.0) < 1e-6


class TestDecodeStep:
    def test_distribution_sums_to_one(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=6)
        nodes = random_nodes(3, seed=7)
        state = init_state(Tensor(np.zeros(NODE_DIM)), nodes, None, store, cfg)
        dist, _ = decode_step(state, nodes, store, cfg)
        assert dist.data.shape == (VOCAB,)
        assert abs(float(dist.data.sum()) - 1.0) < 1e-6
        assert (dist.data > 0).all()

    def test_inference_mode_is_deterministic(self):
        cfg = small_cfg(dropout=0.5)
        store = make_store(cfg, randomize=7)
        nodes = random_nodes(3, seed=8)
        state = init_state(Tensor(np.zeros(NODE_DIM)), nodes, None, store, cfg)
        d1, _ = decode_step(state, nodes, store, cfg, train=False)
        d2, _ = decode_step(state, nodes, store, cfg, train=False)
        assert np.array_equal(d1.data, d2.data)

    def test_train_mode_applies_dropout(self):
        cfg = small_cfg(dropout=0.5)
        store = make_store(cfg, randomize=7)
        nodes = random_nodes(3, seed=8)
        state = init_state(Tensor(np.zeros(NODE_DIM)), nodes, None, store, cfg)
        rng = np.random.default_rng(0)
        draws = {tuple(decode_step(state, nodes, store, cfg, train=True, rng=rng)[0].data) for _ in range(4)}
        assert len(draws) > 1

    def test_two_step_unroll_matches_hand_recurrence(self):
        with default_dtype(np.float64):
            cfg = small_cfg(hidden_size=2, word_dim=2)
            store = make_store(cfg, randomize=8)
            nodes = Tensor(np.random.default_rng(9).normal(size=(2, NODE_DIM)))
            state = init_state(Tensor([0.2, -0.4, 0.1, 0.3]), nodes, None, store, cfg)
            tokens = [4, 7]
            dists = []
            for token in tokens:
                dist, state = decode_step(state, nodes, store, cfg)
                dists.append(dist.data.copy())
                state.prev_token = token
            expected = _oracle_decode(store, nodes.data, np.array([0.2, -0.4, 0.1, 0.3]), tokens)
            for got, want in zip(dists, expected):
                assert np.allclose(got, want, atol=1e-12)


def _oracle_decode(store, nodes, graph_emb, tokens):
    # Literal numpy transcription of the decode recurrence.
    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    def lin(prefix, x):
        return x @ store[f"{prefix}.w"].data + store[f"{prefix}.b"].data

    def attn(s):
        scores = np.tanh(lin("attn_h", nodes) + lin("attn_s", s)) @ store["attn_v"].data
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        return w @ nodes

    h = np.tanh(lin("dec_init_h", graph_emb))
    c = np.tanh(lin("dec_init_c", graph_emb))
    ctx = attn(h)
    prev = BOS
    dists = []
    for token in tokens:
        x = np.concatenate([store["tgt_embed"].data[prev], ctx])
        z = np.concatenate([x, h])
        i, f = sig(lin("dec_lstm.i", z)), sig(lin("dec_lstm.f", z))
        o, g = sig(lin("dec_lstm.o", z)), np.tanh(lin("dec_lstm.c", z))
        c = f * c + i * g
        h = o * np.tanh(c)
        ctx = attn(h)
        readout = np.tanh(lin("dec_readout", np.concatenate([h, ctx])))
        logits = lin("dec_out", readout)
        e = np.exp(logits - logits.max())
        dists.append(e / e.sum())
        prev = token
    return dists


class TestSequenceLoss:
    def test_uniform_init_gives_log_vocab_per_token(self):
        with default_dtype(np.float64):
            cfg = small_cfg()
            store = make_store(cfg)
            for name, t in store.items():
                t.data = np.zeros_like(t.data)
            nodes = Tensor(np.zeros((2, NODE_DIM)))
            target = [4, 5, 4, EOS]
            loss, count = sequence_loss(nodes, Tensor(np.zeros(NODE_DIM)), target, store, cfg, train=False)
            assert count == 4
            assert loss.item() / count == pytest.approx(math.log(VOCAB), abs=1e-9)

    def test_single_eos_target(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=9)
        nodes = random_nodes(2, seed=10)
        ge = Tensor(np.zeros(NODE_DIM))
        loss, count = sequence_loss(nodes, ge, [EOS], store, cfg, train=False)
        assert count == 1
        state = init_state(ge, nodes, None, store, cfg)
        dist, _ = decode_step(state, nodes, store, cfg)
        assert loss.item() == pytest.approx(-math.log(float(dist.data[EOS])), abs=1e-5)

    def test_empty_target_rejected(self):
        cfg = small_cfg()
        store = make_store(cfg)
        with pytest.raises(ValueError):
            sequence_loss(random_nodes(2), Tensor(np.zeros(NODE_DIM)), [], store, cfg)

    def test_target_must_end_with_eos(self):
        cfg = small_cfg()
        store = make_store(cfg)
        with pytest.raises(ValueError):
            sequence_loss(random_nodes(2), Tensor(np.zeros(NODE_DIM)), [4, 5], store, cfg)

    def test_gradients_flow_to_every_parameter_group(self):
        cfg = small_cfg()
        store = make_store(cfg, randomize=10)
        nodes = Tensor(np.random.default_rng(11).normal(size=(3, NODE_DIM)), requires_grad=True)
        loss, _ = sequence_loss(nodes, ad.max_rows(nodes), [4, EOS], store, cfg, train=False)
        loss.backward()
        touched = [name for name, t in store.items() if t.grad is not None]
        assert "tgt_embed" in touched
        assert "dec_out.w" in touched
        assert "attn_v" in touched
        assert nodes.grad is not None


class TestDecoding:
    def test_beam_one_equals_greedy_on_random_probes(self):
        cfg = small_cfg(max_decode_len=10)
        store = make_store(cfg)
        for seed in range(50):
            randomize_parameters(store, np.random.default_rng(seed), scale=1.0)
            nodes = random_nodes(3, seed=seed)
            ge = Tensor(np.random.default_rng(seed + 500).normal(size=NODE_DIM))
            greedy = greedy_decode(nodes, ge, store, cfg)
            beamed = beam_search(nodes, ge, store, cfg, beam_size=1)
            assert greedy == beamed, f"seed {seed}: {greedy} vs {beamed}"

    def test_forced_token_returned_for_any_beam_size(self):
        cfg = small_cfg(max_decode_len=3)
        store = make_store(cfg)
        for name, t in store.items():
            t.data = np.zeros_like(t.data)
        bias = np.zeros(VOCAB, dtype=np.float32)
        bias[5] = 50.0
        store["dec_out.b"].data = bias
        outputs = {
            beam: beam_search(random_nodes(2), Tensor(np.zeros(NODE_DIM)), store, cfg, beam_size=beam)
            for beam in (1, 2, 5)
        }
        assert all(out == [5, 5, 5] for out in outputs.values())

    def test_forced_eos_gives_empty_output(self):
        cfg = small_cfg(max_decode_len=5)
        store = make_store(cfg)
        for name, t in store.items():
            t.data = np.zeros_like(t.data)
        bias = np.zeros(VOCAB, dtype=np.float32)
        bias[EOS] = 50.0
        store["dec_out.b"].data = bias
        for beam in (1, 3):
            assert beam_search(random_nodes(2), Tensor(np.zeros(NODE_DIM)), store, cfg, beam_size=beam) == []

    def test_length_cap_truncates(self):
        cfg = small_cfg(max_decode_len=3)
        store = make_store(cfg)
        for name, t in store.items():
            t.data = np.zeros_like(t.data)
        bias = np.zeros(VOCAB, dtype=np.float32)
        bias[4] = 50.0
        store["dec_out.b"].data = bias
        assert greedy_decode(random_nodes(2), Tensor(np.zeros(NODE_DIM)), store, cfg) == [4, 4, 4]

    def test_wider_beam_never_scores_worse(self):
        cfg = small_cfg(max_decode_len=8)
        checked = 0
        for seed in range(30):
            store = make_store(cfg, randomize=seed)
            # Random decoders rarely emit EOS; nudge it so probes terminate.
            store["dec_out.b"].data[EOS] += 1.5
            nodes = random_nodes(3, seed=seed)
            ge = Tensor(np.random.default_rng(seed + 900).normal(size=NODE_DIM))

            def hyp_score(tokens):
                loss, _ = sequence_loss(nodes, ge, list(tokens) + [EOS], store, cfg, train=False)
                return -loss.item()

            prev_score = None
            for beam in (1, 2, 3, 4):
                out = beam_search(nodes, ge, store, cfg, beam_size=beam)
                if len(out) >= cfg.max_decode_len:
                    prev_score = None
                    break  # unterminated; score comparison not meaningful
                score = hyp_score(out)
                if prev_score is not None:
                    assert score >= prev_score - 1e-6
                    checked += 1
                prev_score = score
        assert checked >= 30
