"""Heterogeneous message-passing policy/value network over assignment graphs."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ModelSchemaMismatch
from ..expansion import AssignmentGraph
from .tape import Tensor, concat, param, segment_mean

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    hidden: int = 32
    rounds: int = 2

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden dimension must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


class GraphBatch:
    """Disjoint union of several assignment graphs, laid out for the network."""

    def __init__(self, graphs: list[AssignmentGraph], type_dims: dict[str, int]):
        self.n_graphs = len(graphs)
        rows: dict[str, list[np.ndarray]] = {t: [] for t in type_dims}
        where: dict[str, list[int]] = {t: [] for t in type_dims}
        src, dst, act, act_seg, node_seg = [], [], [], [], []
        offset = 0
        for gi, g in enumerate(graphs):
            for i, (t, f) in enumerate(zip(g.node_types, g.features)):
                if t not in type_dims:
                    raise ModelSchemaMismatch(f"node type {t!r} unknown to the model")
                if f.shape != (type_dims[t],):
                    raise ModelSchemaMismatch(
                        f"node type {t!r}: feature width {f.shape} != {type_dims[t]}"
                    )
                rows[t].append(f)
                where[t].append(offset + i)
            for s, d in g.edges:
                src.append(offset + s)
                dst.append(offset + d)
            for node, _ in g.action_nodes:
                act.append(offset + node)
                act_seg.append(gi)
            node_seg.extend([gi] * g.num_nodes)
            offset += g.num_nodes
        self.n_nodes = offset
        self.blocks = [
            (t, np.asarray(rows[t]).reshape(len(rows[t]), type_dims[t]))
            for t in type_dims
            if rows[t]
        ]
        order = np.concatenate([where[t] for t, _ in self.blocks]).astype(np.int64) if self.blocks else np.zeros(0, np.int64)
        # position of each node inside the concatenated per-type blocks
        self.gather = np.empty(offset, dtype=np.int64)
        self.gather[order] = np.arange(offset)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.action_index = np.asarray(act, dtype=np.int64)
        self.action_segment = np.asarray(act_seg, dtype=np.int64)
        self.node_segment = np.asarray(node_seg, dtype=np.int64)
        self.action_counts = np.bincount(self.action_segment, minlength=self.n_graphs)
        self.action_offsets = np.concatenate([[0], np.cumsum(self.action_counts)])


class GraphPolicy:
    """Per-type embedding, ``rounds`` of mean-aggregation message passing, two heads.

    The policy head scores each action node; the value head reads the mean of
    all node embeddings.  Parameters live in ``self.params`` as plain numpy
    arrays keyed by name.
    """

    def __init__(self, type_dims: dict[str, int], config: EncoderConfig = EncoderConfig(), seed: int | None = 0, params=None):
        self.type_dims = dict(type_dims)
        self.config = config
        self.params = params if params is not None else self._init(np.random.default_rng(seed))

    def _init(self, rng) -> dict[str, np.ndarray]:
        h = self.config.hidden

        def dense(n_in, n_out, gain=1.0):
            return rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))

        p = {}
        for t, d in self.type_dims.items():
            p[f"embed/{t}/W"] = dense(d, h)
            p[f"embed/{t}/b"] = np.zeros(h)
        for k in range(self.config.rounds):
            p[f"mp{k}/self"] = dense(h, h)
            p[f"mp{k}/in"] = dense(h, h)
            p[f"mp{k}/out"] = dense(h, h)
            p[f"mp{k}/b"] = np.zeros(h)
        p["policy/W1"] = dense(h, h)
        p["policy/b1"] = np.zeros(h)
        p["policy/W2"] = dense(h, 1, 0.01)
        p["policy/b2"] = np.zeros(1)
        p["value/W1"] = dense(h, h)
        p["value/b1"] = np.zeros(h)
        p["value/W2"] = dense(h, 1)
        p["value/b2"] = np.zeros(1)
        return p

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def batch(self, graphs: list[AssignmentGraph]) -> GraphBatch:
        return GraphBatch(graphs, self.type_dims)

    def tensors(self, grad: bool) -> dict[str, Tensor]:
        if grad:
            return {k: param(v) for k, v in self.params.items()}
        return {k: Tensor(v) for k, v in self.params.items()}

    def forward(self, batch: GraphBatch, P: dict[str, Tensor] | None = None):
        """Return (action logits, graph values) as tensors."""
        P = self.tensors(False) if P is None else P
        n = batch.n_nodes
        if n == 0:
            h = Tensor(np.zeros((0, self.config.hidden)))
        else:
            parts = [(Tensor(x) @ P[f"embed/{t}/W"] + P[f"embed/{t}/b"]).tanh() for t, x in batch.blocks]
            h = concat(parts).rows(batch.gather)
        for k in range(self.config.rounds):
            z = h @ P[f"mp{k}/self"] + P[f"mp{k}/b"]
            if batch.src.size:
                m_in = segment_mean(h.rows(batch.src), batch.dst, n)
                m_out = segment_mean(h.rows(batch.dst), batch.src, n)
                z = z + m_in @ P[f"mp{k}/in"] + m_out @ P[f"mp{k}/out"]
            h = z.tanh()
        z = h.rows(batch.action_index)
        logits = ((z @ P["policy/W1"] + P["policy/b1"]).tanh() @ P["policy/W2"] + P["policy/b2"]).reshape(-1)
        pooled = segment_mean(h, batch.node_segment, batch.n_graphs)
        values = ((pooled @ P["value/W1"] + P["value/b1"]).tanh() @ P["value/W2"] + P["value/b2"]).reshape(-1)
        return logits, values

    def predict(self, graphs: list[AssignmentGraph]) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-graph logit arrays and the value estimates, without recording a tape."""
        b = self.batch(graphs)
        logits, values = self.forward(b)
        split = [logits.data[b.action_offsets[i]:b.action_offsets[i + 1]] for i in range(b.n_graphs)]
        return split, values.data

    # persistence ------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "format": "aepn-graph-policy",
            "version": MODEL_FORMAT_VERSION,
            "config": {"hidden": self.config.hidden, "rounds": self.config.rounds},
            "type_dims": self.type_dims,
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GraphPolicy":
        if doc.get("format") != "aepn-graph-policy" or doc.get("version") != MODEL_FORMAT_VERSION:
            raise ModelSchemaMismatch("not a version-1 aepn graph policy document")
        params = {
            k: np.asarray(v["data"], dtype=float).reshape(v["shape"])
            for k, v in doc["params"].items()
        }
        return cls(doc["type_dims"], EncoderConfig(**doc["config"]), params=params)

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "GraphPolicy":
        return cls.from_json(json.loads(text))

    def check_compatible(self, type_dims: dict[str, int]) -> None:
        if dict(type_dims) != self.type_dims:
            raise ModelSchemaMismatch(
                f"model node types {sorted(self.type_dims.items())} do not match "
                f"problem node types {sorted(type_dims.items())}"
            )
