"""Bidirectional K-hop graph encoder.

Each node starts from a recurrent reading of its text tokens.  For K
rounds, a node's forward representation is refreshed from the nodes it
directs to and its backward representation from the nodes directing to
it: neighbor vectors pass through a per-hop, per-direction fully
connected layer, are max-pooled coordinatewise, concatenated with the
node's previous representation and projected back to the hidden size
with a ReLU.  The final node embedding concatenates both directions.

Two graph-level readouts are provided: max-pooling over projected node
embeddings, or the embedding of an added super node that every other
node points at.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Vocabulary
from .graphs import QueryGraph, add_super_node
from .nn import create_linear, create_lstm, linear, lstm_step
from .optim import ParameterStore


@dataclass
class EncoderConfig:
    hop_size: int = 6
    hidden_dim: int = 300
    word_dim: int = 300
    share_direction_weights: bool = False
    ge_method: str = "pooling"  # "pooling" | "supernode"

    def __post_init__(self):
        if self.hop_size < 0:
            raise ValueError("hop_size must be >= 0")
        if self.hidden_dim < 1 or self.word_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if self.ge_method not in ("pooling", "supernode"):
            raise ValueError(f"unknown ge_method {self.ge_method!r}")


@dataclass
class NodeEmbeddings:
    """Per-node states across hops.

    ``h_fwd[k]`` / ``h_bwd[k]`` hold each node's representation after hop
    k (hop 0 is the initial feature vector for both directions); ``final``
    concatenates the last-hop directions per node and ``matrix`` stacks
    them into |V| x 2d.
    """

    a: list[Tensor]
    h_fwd: list[list[Tensor]]
    h_bwd: list[list[Tensor]]
    final: list[Tensor] = field(default_factory=list)

    @property
    def matrix(self) -> Tensor:
        return ad.stack(self.final)


def build_encoder_params(
    store: ParameterStore, src_vocab_size: int, cfg: EncoderConfig, rng: np.random.Generator
) -> None:
    d = cfg.hidden_dim
    store.create("src_embed", (src_vocab_size, cfg.word_dim), rng)
    create_lstm(store, "node_lstm", cfg.word_dim, d, rng)
    for k in range(1, cfg.hop_size + 1):
        for direction in ("fwd", "bwd"):
            create_linear(store, f"hop{k}.{direction}.agg", d, d, rng)
        if cfg.share_direction_weights:
            create_linear(store, f"hop{k}.out", 2 * d, d, rng)
        else:
            for direction in ("fwd", "bwd"):
                create_linear(store, f"hop{k}.{direction}.out", 2 * d, d, rng)
    if cfg.ge_method == "pooling":
        create_linear(store, "ge_pool", 2 * d, 2 * d, rng)


def init_node_features(
    graph: QueryGraph, vocab: Vocabulary, store: ParameterStore, cfg: EncoderConfig
) -> list[Tensor]:
    """Initial feature vector per node: final hidden state of the shared
    recurrent encoder run over the node's token embeddings."""
    d = cfg.hidden_dim
    embed = store["src_embed"]
    cache: dict[tuple[str, ...], Tensor] = {}
    feats: list[Tensor] = []
    for node in graph.nodes:
        if not node.text:
            raise ValueError(f"node {node.id} has an empty text attribute")
        if node.text not in cache:
            h = ad.zeros((d,))
            c = ad.zeros((d,))
            for token in node.text:
                x = ad.row(embed, vocab.id(token))
                h, c = lstm_step(store, "node_lstm", x, h, c)
            cache[node.text] = h
        feats.append(cache[node.text])
    return feats


def aggregate_direction(
    neighbors: list[Tensor], store: ParameterStore, hop: int, direction: str, dim: int
) -> Tensor:
    """Neighborhood vector: coordinatewise max over ReLU(FC(h_u)).

    An empty neighborhood yields the zero vector.
    """
    if not neighbors:
        return ad.zeros((dim,))
    transformed = ad.relu(linear(store, f"hop{hop}.{direction}.agg", ad.stack(neighbors)))
    return ad.max_rows(transformed)


def _out_prefix(cfg: EncoderConfig, hop: int, direction: str) -> str:
    if cfg.share_direction_weights:
        return f"hop{hop}.out"
    return f"hop{hop}.{direction}.out"


def propagate(
    graph: QueryGraph, feats: list[Tensor], store: ParameterStore, cfg: EncoderConfig
) -> NodeEmbeddings:
    """Run K rounds of bidirectional neighbor aggregation."""
    d = cfg.hidden_dim
    fwd_adj, bwd_adj = graph.adjacency()
    embs = NodeEmbeddings(a=feats, h_fwd=[list(feats)], h_bwd=[list(feats)])
    for k in range(1, cfg.hop_size + 1):
        prev_fwd = embs.h_fwd[-1]
        prev_bwd = embs.h_bwd[-1]
        new_fwd: list[Tensor] = []
        new_bwd: list[Tensor] = []
        for v in range(len(graph.nodes)):
            nbh = aggregate_direction(
                [prev_fwd[u] for u in fwd_adj[v]], store, k, "fwd", d
            )
            new_fwd.append(
                ad.relu(
                    linear(store, _out_prefix(cfg, k, "fwd"), ad.concat([prev_fwd[v], nbh]))
                )
            )
            nbh = aggregate_direction(
                [prev_bwd[u] for u in bwd_adj[v]], store, k, "bwd", d
            )
            new_bwd.append(
                ad.relu(
                    linear(store, _out_prefix(cfg, k, "bwd"), ad.concat([prev_bwd[v], nbh]))
                )
            )
        embs.h_fwd.append(new_fwd)
        embs.h_bwd.append(new_bwd)
    embs.final = [
        ad.concat([f, b]) for f, b in zip(embs.h_fwd[-1], embs.h_bwd[-1])
    ]
    return embs


def graph_embedding_pooling(node_matrix: Tensor, store: ParameterStore) -> Tensor:
    """Coordinatewise max over a learned projection of all node embeddings."""
    if node_matrix.data.shape[0] < 1:
        raise ValueError("cannot pool an empty graph")
    return ad.max_rows(linear(store, "ge_pool", node_matrix))


def encode(
    graph: QueryGraph, vocab: Vocabulary, store: ParameterStore, cfg: EncoderConfig
) -> tuple[NodeEmbeddings, Tensor]:
    """Node embeddings plus a 2d graph embedding via the configured readout.

    With the supernode readout the graph is augmented first, so the
    returned embeddings cover the augmented node set (the decoder attends
    over all of them).
    """
    if cfg.ge_method == "supernode":
        graph = add_super_node(graph)
    feats = init_node_features(graph, vocab, store, cfg)
    embs = propagate(graph, feats, store, cfg)
    if cfg.ge_method == "supernode":
        graph_emb = embs.final[-1]  # the super node is appended last
    else:
        graph_emb = graph_embedding_pooling(embs.matrix, store)
    return embs, graph_emb
