"""Attention decoder: a single-layer gated recurrent cell initialized from
the graph embedding, additive (or dot-product) attention over node
embeddings, teacher-forced negative log-likelihood, and greedy plus beam
decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BOS, EOS
from .nn import create_linear, create_lstm, linear, lstm_step
from .optim import ParameterStore


@dataclass
class DecoderConfig:
    hidden_size: int = 300
    word_dim: int = 300
    node_dim: int = 600  # 2d: concatenated forward/backward node embedding
    max_decode_len: int = 60
    beam_size: int = 5
    length_norm_alpha: float = 0.0
    dropout: float = 0.5
    attention: str = "additive"  # "additive" | "dot"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_decode_len < 1:
            raise ValueError("max_decode_len must be >= 1")
        if self.attention not in ("additive", "dot"):
            raise ValueError(f"unknown attention {self.attention!r}")


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    prev_token: int
    context: Tensor


def build_decoder_params(
    store: ParameterStore, tgt_vocab_size: int, cfg: DecoderConfig, rng: np.random.Generator
) -> None:
    h, nd = cfg.hidden_size, cfg.node_dim
    store.create("tgt_embed", (tgt_vocab_size, cfg.word_dim), rng)
    create_linear(store, "dec_init_h", nd, h, rng)
    create_linear(store, "dec_init_c", nd, h, rng)
    create_lstm(store, "dec_lstm", cfg.word_dim + nd, h, rng)
    if cfg.attention == "additive":
        create_linear(store, "attn_s", h, h, rng)
        create_linear(store, "attn_h", nd, h, rng)
        store.create("attn_v", (h,), rng)
    else:
        create_linear(store, "attn_dot", h, nd, rng)
    create_linear(store, "dec_readout", h + nd, h, rng)
    create_linear(store, "dec_out", h, tgt_vocab_size, rng)


def precompute_attention(node_matrix: Tensor, store: ParameterStore, cfg: DecoderConfig) -> Tensor | None:
    """Per-example cache of the node-side attention projection."""
    if cfg.attention == "additive":
        return linear(store, "attn_h", node_matrix)
    return None


def attention_context(
    s: Tensor,
    node_matrix: Tensor,
    node_proj: Tensor | None,
    store: ParameterStore,
    cfg: DecoderConfig,
) -> tuple[Tensor, Tensor]:
    """(context vector, attention weights) for decoder state s."""
    if cfg.attention == "additive":
        if node_proj is None:
            node_proj = precompute_attention(node_matrix, store, cfg)
        scores = ad.matmul(ad.tanh(node_proj + linear(store, "attn_s", s)), store["attn_v"])
    else:
        scores = ad.matmul(node_matrix, linear(store, "attn_dot", s))
    weights = ad.softmax(scores)
    context = ad.matmul(weights, node_matrix)
    return context, weights


def init_state(
    graph_emb: Tensor,
    node_matrix: Tensor,
    node_proj: Tensor | None,
    store: ParameterStore,
    cfg: DecoderConfig,
) -> DecoderState:
    """Initial decoder state projected from the graph embedding."""
    if graph_emb.data.shape != (cfg.node_dim,):
        raise ValueError(
            f"graph embedding shape {graph_emb.data.shape} does not match node_dim {cfg.node_dim}"
        )
    h0 = ad.tanh(linear(store, "dec_init_h", graph_emb))
    c0 = ad.tanh(linear(store, "dec_init_c", graph_emb))
    context, _ = attention_context(h0, node_matrix, node_proj, store, cfg)
    return DecoderState(h0, c0, BOS, context)


def _step_logits(
    state: DecoderState,
    node_matrix: Tensor,
    node_proj: Tensor | None,
    store: ParameterStore,
    cfg: DecoderConfig,
    train: bool,
    rng: np.random.Generator | None,
) -> tuple[Tensor, DecoderState]:
    x = ad.concat([ad.row(store["tgt_embed"], state.prev_token), state.context])
    h, c = lstm_step(store, "dec_lstm", x, state.h, state.c)
    context, _ = attention_context(h, node_matrix, node_proj, store, cfg)
    readout = ad.tanh(linear(store, "dec_readout", ad.concat([h, context])))
    if train and cfg.dropout > 0.0:
        if rng is None:
            raise ValueError("training-mode decoding needs an rng for dropout")
        readout = ad.dropout(readout, cfg.dropout, rng)
    logits = linear(store, "dec_out", readout)
    return logits, DecoderState(h, c, state.prev_token, context)


def decode_step(
    state: DecoderState,
    node_matrix: Tensor,
    store: ParameterStore,
    cfg: DecoderConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    node_proj: Tensor | None = None,
) -> tuple[Tensor, DecoderState]:
    """Next-token distribution (sums to 1) and the advanced state."""
    logits, new_state = _step_logits(state, node_matrix, node_proj, store, cfg, train, rng)
    return ad.softmax(logits), new_state


def sequence_loss(
    node_matrix: Tensor,
    graph_emb: Tensor,
    target_ids: list[int],
    store: ParameterStore,
    cfg: DecoderConfig,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, int]:
    """Teacher-forced negative log-likelihood, summed over target tokens.

    The target must be non-empty and end with EOS.  Returns (loss sum,
    token count); batch averaging is the caller's concern.
    """
    if not target_ids:
        raise ValueError("empty target sequence")
    if target_ids[-1] != EOS:
        raise ValueError("target sequence must end with EOS")
    node_proj = precompute_attention(node_matrix, store, cfg)
    state = init_state(graph_emb, node_matrix, node_proj, store, cfg)
    total: Tensor | None = None
    for target in target_ids:
        logits, state = _step_logits(state, node_matrix, node_proj, store, cfg, train, rng)
        nll = -ad.pick(ad.log_softmax(logits), target)
        total = nll if total is None else total + nll
        state.prev_token = target
    return total, len(target_ids)


def greedy_decode(
    node_matrix: Tensor,
    graph_emb: Tensor,
    store: ParameterStore,
    cfg: DecoderConfig,
) -> list[int]:
    """Argmax decoding until EOS or the length cap; returns token ids
    without BOS/EOS."""
    with ad.no_grad():
        node_proj = precompute_attention(node_matrix, store, cfg)
        state = init_state(graph_emb, node_matrix, node_proj, store, cfg)
        out: list[int] = []
        for _ in range(cfg.max_decode_len):
            logits, state = _step_logits(state, node_matrix, node_proj, store, cfg, False, None)
            token = int(np.argmax(logits.data))
            if token == EOS:
                break
            out.append(token)
            state.prev_token = token
    return out


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    state: DecoderState | None
    terminated: bool

    def score(self, alpha: float) -> float:
        if alpha == 0.0 or not self.tokens:
            return self.log_prob
        return self.log_prob / (len(self.tokens) ** alpha)


def beam_search(
    node_matrix: Tensor,
    graph_emb: Tensor,
    store: ParameterStore,
    cfg: DecoderConfig,
    beam_size: int | None = None,
) -> list[int]:
    """Beam decoding; returns token ids without BOS/EOS.

    Completed (EOS-terminated) hypotheses are collected as they appear;
    the best-scoring hypothesis wins, with hypotheses still live at the
    length cap competing only when no completed one scores higher.
    """
    width = beam_size if beam_size is not None else cfg.beam_size
    if width < 1:
        raise ValueError("beam_size must be >= 1")
    alpha = cfg.length_norm_alpha
    with ad.no_grad():
        node_proj = precompute_attention(node_matrix, store, cfg)
        state = init_state(graph_emb, node_matrix, node_proj, store, cfg)
        live = [Hypothesis((), 0.0, state, False)]
        done: list[Hypothesis] = []
        for _ in range(cfg.max_decode_len):
            candidates: list[Hypothesis] = []
            for hyp in live:
                logits, new_state = _step_logits(
                    hyp.state, node_matrix, node_proj, store, cfg, False, None
                )
                log_probs = ad.log_softmax(logits).data
                # Stable sort keeps ties at the lowest token id, matching argmax.
                top = np.argsort(-log_probs, kind="stable")[:width]
                for token in top:
                    token = int(token)
                    lp = hyp.log_prob + float(log_probs[token])
                    if token == EOS:
                        candidates.append(Hypothesis(hyp.tokens, lp, None, True))
                    else:
                        step_state = DecoderState(
                            new_state.h, new_state.c, token, new_state.context
                        )
                        candidates.append(
                            Hypothesis(hyp.tokens + (token,), lp, step_state, False)
                        )
            done.extend(h for h in candidates if h.terminated)
            alive = [h for h in candidates if not h.terminated]
            alive.sort(key=lambda h: -h.score(alpha))
            live = alive[:width]
            if not live:
                break
            if alpha == 0.0 and done:
                # Extending can only lower a log-prob score, so once the
                # best finished hypothesis beats every live one, stop.
                if max(h.score(alpha) for h in done) >= live[0].score(alpha):
                    break
        pool = done + live
        best = max(pool, key=lambda h: h.score(alpha))
    return list(best.tokens)
