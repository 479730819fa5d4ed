"""Differentiable reader: encoder, numerical reasoning graph network, fusion,
answer heads and the marginal-likelihood objective.

All matrices follow the column convention ``d x n``: one column per token
or per graph node.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np
import torch

from numnet import diffcore as dc
from numnet.answer import AnswerConfig, AnswerType, SIGNS, SupervisionSet, enumerate_supervision
from numnet.exceptions import ContractError
from numnet.graph import RELATIONS, GraphConfig, NumGraph, build_graph
from numnet.textnum import DropExample, Source

NUM_TYPES = len(AnswerType)
NUM_COUNTS = 10
NUM_SIGNS = len(SIGNS)
POSITION_SCALE = 0.25


@dataclass
class ModelConfig:
    hidden_dim: int = 128
    reasoning_steps: int = 3
    vocab_size: int = 0
    embed_dim: int = 64
    head_hidden: int = 0  # 0 means hidden_dim
    include_question_numbers: bool = True
    enable_greater_edges: bool = True
    enable_lower_equal_edges: bool = True
    use_gnn: bool = True
    passage_preferred: bool = True
    append_hundred: bool = True
    max_nonzero_signs: int = 3
    max_span_len: int = 8

    def __post_init__(self):
        if self.hidden_dim < 1 or self.reasoning_steps < 1 or self.embed_dim < 1:
            raise ContractError("hidden_dim, reasoning_steps and embed_dim must be positive")
        self.graph_config()

    @property
    def head_dim(self) -> int:
        return self.head_hidden or self.hidden_dim

    def graph_config(self) -> GraphConfig:
        return GraphConfig(
            include_question_numbers=self.include_question_numbers,
            enable_greater_edges=self.enable_greater_edges,
            enable_lower_equal_edges=self.enable_lower_equal_edges,
        )

    def answer_config(self) -> AnswerConfig:
        return AnswerConfig(
            max_nonzero_signs=self.max_nonzero_signs,
            append_hundred=self.append_hundred,
            max_span_len=self.max_span_len,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


class Vocabulary:
    PAD, UNK = "<pad>", "<unk>"

    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, examples: Iterable[DropExample], min_count: int = 1) -> "Vocabulary":
        counts: Counter = Counter()
        for ex in examples:
            counts.update(t.text.lower() for t in ex.passage_tokens)
            counts.update(t.text.lower() for t in ex.question_tokens)
        words = sorted(w for w, c in counts.items() if c >= min_count)
        return cls([cls.PAD, cls.UNK, *words])

    def __len__(self) -> int:
        return len(self.words)

    def ids(self, tokens) -> list[int]:
        unk = self.index[self.UNK]
        return [self.index.get(t.text.lower(), unk) for t in tokens]


# ---------------------------------------------------------------------------
# parameters

def init_params(config: ModelConfig, seed: int = dc.DEFAULT_SEED, dtype=torch.float32) -> dc.ParamStore:
    """Fresh parameters; every matrix draws from the seeded init stream in a
    fixed order so that configs sharing shapes share initial values."""
    if config.vocab_size < 2:
        raise ContractError("vocab_size must be set before initializing parameters")
    gen = dc.rng(seed, dc.INIT_STREAM)
    d, e, h = config.hidden_dim, config.embed_dim, config.head_dim
    store = dc.ParamStore(dtype=dtype)

    def mat(name, rows, cols):
        store.add(name, dc.init_matrix(gen, rows, cols))

    def vec(name, n):
        store.add(name, np.zeros(n))

    store.add("emb.table", gen.normal(0.0, 1.0, size=(config.vocab_size, e)))
    mat("emb.proj", d, e)
    for block in ("enc", "mod"):
        mat(f"{block}.conv", d, 3 * d)
        vec(f"{block}.conv_b", d)
        for part in ("attn_q", "attn_k", "attn_v", "ff1"):
            mat(f"{block}.{part}", d, d)
        vec(f"{block}.ff1_b", d)
        mat(f"{block}.ff2", d, d)
        vec(f"{block}.ff2_b", d)
    store.add("cq.w", dc.init_matrix(gen, 1, 3 * d)[0])
    mat("cq.fuse", d, 3 * d)
    vec("cq.fuse_b", d)
    mat("reason.wm", d, d)
    mat("gnn.wv", 1, d)
    vec("gnn.bv", 1)
    for rel in RELATIONS:
        mat(f"gnn.rel.{rel.name}", d, d)
    mat("gnn.wf", d, d)
    vec("gnn.bf", d)
    mat("fuse.w0", d, 2 * d)
    vec("fuse.b0", d)
    mat("head.type1", h, 2 * d)
    vec("head.type1_b", h)
    mat("head.type2", NUM_TYPES, h)
    vec("head.type2_b", NUM_TYPES)
    for name in ("p_start", "p_end", "q_start", "q_end"):
        mat(f"head.{name}1", h, 2 * d)
        vec(f"head.{name}1_b", h)
        mat(f"head.{name}2", 1, h)
    mat("head.count1", h, d)
    vec("head.count1_b", h)
    mat("head.count2", NUM_COUNTS, h)
    vec("head.count2_b", NUM_COUNTS)
    mat("head.sign1", h, 2 * d)
    vec("head.sign1_b", h)
    mat("head.sign2", NUM_SIGNS, h)
    vec("head.sign2_b", NUM_SIGNS)
    store.add("head.hundred", dc.init_matrix(gen, 1, d)[0])
    return store


# ---------------------------------------------------------------------------
# encoder

@dataclass
class EncodedPair:
    Q: torch.Tensor
    P: torch.Tensor
    Qbar: torch.Tensor
    Pbar: torch.Tensor
    MQ: torch.Tensor
    MP: torch.Tensor
    p2q_attention: torch.Tensor  # |p| x |q|, rows sum to one
    q2p_attention: torch.Tensor  # |q| x |p|


def position_signal(d: int, n: int, dtype=torch.float32) -> torch.Tensor:
    pos = np.arange(n)[None, :]
    i = np.arange(d)[:, None]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    sig = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.as_tensor(sig, dtype=dtype)


def encoder_block(x: torch.Tensor, params: dc.ParamStore, prefix: str) -> torch.Tensor:
    """Pre-norm width-3 convolution, self-attention and feed-forward, each residual."""
    d = x.shape[0]
    # every block re-adds the timing signal, scaled so that token identity
    # is not swamped by position at init
    x = x + POSITION_SCALE * position_signal(d, x.shape[1], x.dtype)
    z = dc.layer_norm_cols(x)
    window = dc.concat_rows(dc.shift_cols(z, 1), z, dc.shift_cols(z, -1))
    x = x + dc.add_bias(dc.matmul(params[f"{prefix}.conv"], window), params[f"{prefix}.conv_b"])
    z = dc.layer_norm_cols(x)
    q = dc.matmul(params[f"{prefix}.attn_q"], z)
    k = dc.matmul(params[f"{prefix}.attn_k"], z)
    v = dc.matmul(params[f"{prefix}.attn_v"], z)
    attn = dc.row_softmax(dc.scale(dc.matmul(q.T, k), 1.0 / math.sqrt(d)))
    x = x + dc.matmul(v, attn.T)
    z = dc.layer_norm_cols(x)
    hidden = dc.relu(dc.add_bias(dc.matmul(params[f"{prefix}.ff1"], z), params[f"{prefix}.ff1_b"]))
    return x + dc.add_bias(dc.matmul(params[f"{prefix}.ff2"], hidden), params[f"{prefix}.ff2_b"])


def embed(ids: Sequence[int], params: dc.ParamStore) -> torch.Tensor:
    rows = dc.embedding_lookup(params["emb.table"], ids)
    x = dc.matmul(params["emb.proj"], rows.T)
    return x


def encode(q_ids: Sequence[int], p_ids: Sequence[int], params: dc.ParamStore) -> EncodedPair:
    if not q_ids or not p_ids:
        raise ContractError("question and passage must be non-empty")
    Q = encoder_block(embed(q_ids, params), params, "enc")
    P = encoder_block(embed(p_ids, params), params, "enc")
    d = Q.shape[0]
    w = params["cq.w"]
    w_p, w_q, w_pq = w[:d], w[d:2 * d], w[2 * d:]
    sim = (
        dc.matmul(P.T, w_p)[:, None]
        + dc.matmul(Q.T, w_q)[None, :]
        + dc.matmul((P * w_pq[:, None]).T, Q)
    )
    p2q = dc.row_softmax(sim)
    q2p = dc.row_softmax(sim.T)
    ctx_p = dc.matmul(Q, p2q.T)
    ctx_q = dc.matmul(P, q2p.T)
    fuse, fuse_b = params["cq.fuse"], params["cq.fuse_b"]
    Pbar = dc.add_bias(dc.matmul(fuse, dc.concat_rows(P, ctx_p, P * ctx_p)), fuse_b)
    Qbar = dc.add_bias(dc.matmul(fuse, dc.concat_rows(Q, ctx_q, Q * ctx_q)), fuse_b)
    MQ = encoder_block(dc.matmul(params["reason.wm"], Qbar), params, "mod")
    MP = encoder_block(dc.matmul(params["reason.wm"], Pbar), params, "mod")
    return EncodedPair(Q, P, Qbar, Pbar, MQ, MP, p2q, q2p)


# ---------------------------------------------------------------------------
# reasoning

@dataclass
class NodeStates:
    v: torch.Tensor       # d x N
    alpha: torch.Tensor   # N, relatedness weights of the last step
    t: int = 0


def init_nodes(graph: NumGraph, enc: EncodedPair) -> NodeStates:
    d = enc.MP.shape[0]
    cols = []
    for node in graph.nodes:
        source = enc.MQ if node.source is Source.QUESTION else enc.MP
        if not 0 <= node.token_index < source.shape[1]:
            raise ContractError(
                f"node token index {node.token_index} outside encoded length {source.shape[1]}"
            )
        cols.append(source[:, node.token_index])
    v = torch.stack(cols, dim=1) if cols else enc.MP.new_zeros((d, 0))
    return NodeStates(v, enc.MP.new_zeros(0), 0)


def adjacency_tensor(graph: NumGraph, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(graph.adjacency(), dtype=dtype)


def reasoning_step(
    graph: NumGraph,
    states: NodeStates,
    params: dc.ParamStore,
    adjacency: torch.Tensor | None = None,
) -> NodeStates:
    """One round of relatedness gating, relation-typed message passing and update.

    Messages are averaged over incoming edges; parallel edges of different
    relations each count once in the denominator.
    """
    v = states.v
    if v.shape[1] != graph.num_nodes:
        raise ContractError(f"states have {v.shape[1]} columns, graph has {graph.num_nodes} nodes")
    if adjacency is None:
        adjacency = adjacency_tensor(graph, v.dtype)
    alpha = dc.sigmoid(dc.add_bias(dc.matmul(params["gnn.wv"], v), params["gnn.bv"]))[0]
    gated = v * alpha[None, :]
    message = torch.zeros_like(v)
    for r, rel in enumerate(RELATIONS):
        a = adjacency[r]
        if graph.num_nodes and bool(a.any()):
            message = message + dc.matmul(dc.matmul(params[f"gnn.rel.{rel.name}"], gated), a.T)
    in_degree = adjacency.sum(dim=(0, 2))
    message = message / torch.clamp(in_degree, min=1.0)[None, :]
    update = dc.add_bias(dc.matmul(params["gnn.wf"], v) + message, params["gnn.bf"])
    return NodeStates(dc.relu(update), alpha, states.t + 1)


def reason_k(graph, states: NodeStates, params, K: int, adjacency=None) -> torch.Tensor:
    if K < 1:
        raise ContractError("reasoning needs K >= 1 steps")
    if adjacency is None:
        adjacency = adjacency_tensor(graph, states.v.dtype)
    for _ in range(K):
        states = reasoning_step(graph, states, params, adjacency)
    return states.v


def fuse(enc: EncodedPair, U: torch.Tensor, graph: NumGraph, params: dc.ParamStore) -> torch.Tensor:
    """Scatter passage-node states to their token columns, project, re-encode."""
    m_num = numeric_passage_features(enc, U, graph)
    m0_pre = dc.add_bias(dc.matmul(params["fuse.w0"], dc.concat_rows(enc.MP, m_num)), params["fuse.b0"])
    return encoder_block(m0_pre, params, "mod")


def numeric_passage_features(enc: EncodedPair, U: torch.Tensor, graph: NumGraph) -> torch.Tensor:
    """The ``M^num`` matrix alone (zero columns for non-number tokens)."""
    d, n = enc.MP.shape
    node_ids = graph.passage_node_ids
    token_idx = [graph.nodes[i].token_index for i in node_ids]
    if len(set(token_idx)) != len(token_idx):
        raise ContractError("two graph nodes claim the same passage token")
    out = enc.MP.new_zeros((d, n))
    if node_ids:
        out = out.index_copy(1, torch.as_tensor(token_idx), U[:, node_ids])
    return out


# ---------------------------------------------------------------------------
# heads

@dataclass
class HeadOutputs:
    """Log-probabilities of every output layer.

    Exponentiating any field gives a distribution summing to one over its
    unmasked entries. ``sign_logp`` has one row per passage number, plus a
    final row for the appended 100 when enabled.
    """

    type_logp: torch.Tensor
    p_start_logp: torch.Tensor
    p_end_logp: torch.Tensor
    q_start_logp: torch.Tensor
    q_end_logp: torch.Tensor
    count_logp: torch.Tensor
    sign_logp: torch.Tensor


def _ff(x, params, name, out_bias=True):
    h = dc.relu(dc.add_bias(dc.matmul(params[f"head.{name}1"], x), params[f"head.{name}1_b"]))
    out = dc.matmul(params[f"head.{name}2"], h)
    if out_bias:
        out = dc.add_bias(out, params[f"head.{name}2_b"])
    return out


def heads(
    M0: torch.Tensor,
    enc: EncodedPair,
    passage_number_tokens: Sequence[int],
    params: dc.ParamStore,
    append_hundred: bool = True,
) -> HeadOutputs:
    m0_pool = dc.mean_rows(M0.T)
    q_pool = dc.mean_rows(enc.Q.T)

    type_logits = _ff(dc.concat_rows(m0_pool, q_pool)[:, None], params, "type")[:, 0]
    n_rows = len(passage_number_tokens) + int(append_hundred)
    type_mask = torch.ones(NUM_TYPES, dtype=torch.bool)
    if n_rows == 0:
        type_mask[AnswerType.ARITHMETIC] = False

    # span heads see each token next to a summary of the other text
    n_p = M0.shape[1]
    p_in = dc.concat_rows(M0, q_pool[:, None].expand(-1, n_p))
    p_start = _ff(p_in, params, "p_start", out_bias=False)[0]
    p_end = _ff(p_in, params, "p_end", out_bias=False)[0]
    n_q = enc.Q.shape[1]
    q_in = dc.concat_rows(enc.Q, m0_pool[:, None].expand(-1, n_q))
    q_start = _ff(q_in, params, "q_start", out_bias=False)[0]
    q_end = _ff(q_in, params, "q_end", out_bias=False)[0]

    count_logits = _ff(m0_pool[:, None], params, "count")[:, 0]

    cols = [M0[:, i] for i in passage_number_tokens]
    if append_hundred:
        cols.append(params["head.hundred"])
    if cols:
        reps = torch.stack(cols, dim=1)
        sign_in = dc.concat_rows(reps, q_pool[:, None].expand(-1, reps.shape[1]))
        sign_logp = dc.row_log_softmax(_ff(sign_in, params, "sign").T)
    else:
        sign_logp = M0.new_zeros((0, NUM_SIGNS))

    return HeadOutputs(
        type_logp=dc.row_log_softmax(type_logits, type_mask),
        p_start_logp=dc.row_log_softmax(p_start),
        p_end_logp=dc.row_log_softmax(p_end),
        q_start_logp=dc.row_log_softmax(q_start),
        q_end_logp=dc.row_log_softmax(q_end),
        count_logp=dc.row_log_softmax(count_logits),
        sign_logp=sign_logp,
    )


# ---------------------------------------------------------------------------
# objective

def _span_scores(start_logp, end_logp, spans):
    s = torch.as_tensor([a for a, _ in spans])
    e = torch.as_tensor([b for _, b in spans])
    return start_logp[s] + end_logp[e]


def loss(outputs: HeadOutputs, supervision: SupervisionSet, passage_preferred: bool = True) -> torch.Tensor:
    """Negative log of the answer probability marginalized over feasible types."""
    if supervision.is_empty():
        raise ContractError("loss needs a non-empty supervision set")
    question_spans = supervision.question_spans
    if passage_preferred and supervision.passage_spans:
        question_spans = []
    terms = []
    if supervision.passage_spans:
        scores = _span_scores(outputs.p_start_logp, outputs.p_end_logp, supervision.passage_spans)
        terms.append(outputs.type_logp[AnswerType.PASSAGE_SPAN] + dc.log_sum_exp(scores))
    if question_spans:
        scores = _span_scores(outputs.q_start_logp, outputs.q_end_logp, question_spans)
        terms.append(outputs.type_logp[AnswerType.QUESTION_SPAN] + dc.log_sum_exp(scores))
    if supervision.counts:
        scores = outputs.count_logp[torch.as_tensor(supervision.counts)]
        terms.append(outputs.type_logp[AnswerType.COUNT] + dc.log_sum_exp(scores))
    if supervision.sign_assignments:
        rows = outputs.sign_logp.shape[0]
        classes = torch.as_tensor([[SIGNS.index(s) for s in a] for a in supervision.sign_assignments])
        if classes.shape[1] != rows:
            raise ContractError(f"sign assignments cover {classes.shape[1]} numbers, head has {rows} rows")
        picked = outputs.sign_logp[torch.arange(rows)[None, :], classes].sum(dim=1)
        terms.append(outputs.type_logp[AnswerType.ARITHMETIC] + dc.log_sum_exp(picked))
    return -dc.log_sum_exp(torch.stack(terms))


# ---------------------------------------------------------------------------
# end-to-end

@dataclass
class Instance:
    """A trimmed example with everything the network needs precomputed."""

    example: DropExample
    q_ids: list[int]
    p_ids: list[int]
    graph: NumGraph
    supervision: SupervisionSet | None = None
    _adjacency: torch.Tensor | None = None

    def adjacency(self, dtype) -> torch.Tensor:
        if self._adjacency is None or self._adjacency.dtype != dtype:
            self._adjacency = adjacency_tensor(self.graph, dtype)
        return self._adjacency


def make_instance(example: DropExample, vocab: Vocabulary, config: ModelConfig, with_supervision: bool = True) -> Instance:
    graph = build_graph(example.question_numbers, example.passage_numbers, config.graph_config())
    sup = enumerate_supervision(example, config.answer_config()) if with_supervision else None
    return Instance(example, vocab.ids(example.question_tokens), vocab.ids(example.passage_tokens), graph, sup)


def forward(inst: Instance, params: dc.ParamStore, config: ModelConfig) -> HeadOutputs:
    enc = encode(inst.q_ids, inst.p_ids, params)
    if config.use_gnn:
        states = init_nodes(inst.graph, enc)
        U = reason_k(inst.graph, states, params, config.reasoning_steps, inst.adjacency(enc.MP.dtype))
        M0 = fuse(enc, U, inst.graph, params)
    else:
        M0 = enc.MP
    number_tokens = [n.token_index for n in inst.example.passage_numbers]
    return heads(M0, enc, number_tokens, params, config.append_hundred)


def instance_loss(inst: Instance, params: dc.ParamStore, config: ModelConfig) -> torch.Tensor:
    return loss(forward(inst, params, config), inst.supervision, config.passage_preferred)
