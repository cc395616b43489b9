"""Message-passing models for graph classification.

Two families share one container:

* GCN family: node embeddings start as the raw neighbor-feature sum and each
  block applies a degree-normalized linear aggregation. GCNE additionally
  embeds edge features and adds them inside the neighborhood sum; plain GCN
  is GCNE without the edge path.
* GIN family: node/edge features are first embedded with two-layer MLPs;
  each block sums ReLU(neighbor + edge) messages and feeds
  (1 + eta_k) * h + aggregate through the block MLP. GIN is GINE without the
  edge path, which is also what GINE degrades to on datasets with no edge
  features.

Batch norm follows every block on the node embeddings. Readout is sum
pooling plus an MLP head for the GIN family, mean pooling plus a linear head
for the GCN family.
"""

from __future__ import annotations

import numpy as np

from .graphs import Batch
from .nn import BatchNorm1d, MaskedLinear, Mlp
from .tensor import (Tensor, add, dropout, gather_rows, relu, scale_shift,
                     segment_mean, segment_sum, spmm)

VARIANTS = ("gcn", "gcne", "gin", "gine")
GIN_FAMILY = ("gin", "gine")
EDGE_VARIANTS = ("gcne", "gine")


class GnnModel:
    """A stack of K message-passing blocks plus a classification head."""

    def __init__(self, variant, node_dim, edge_dim, num_classes, hidden_dim=64,
                 num_blocks=3, rng=None, pool=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        if num_blocks < 1 or hidden_dim < 1:
            raise ValueError("num_blocks and hidden_dim must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant = variant
        self.node_dim = node_dim
        self.edge_dim = edge_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        self.num_blocks = num_blocks
        self.gin_family = variant in GIN_FAMILY
        self.edge_active = variant in EDGE_VARIANTS and edge_dim > 0
        self.pool = pool or ("sum" if self.gin_family else "mean")

        h = hidden_dim
        self.node_embed = Mlp(node_dim, h, h, rng) if self.gin_family else None
        self.edge_embed = Mlp(edge_dim, h, h, rng) if self.edge_active else None

        self.blocks = []
        for k in range(num_blocks):
            block = {}
            if self.gin_family:
                block["mlp4"] = Mlp(h, h, h, rng)
                if self.edge_active:
                    block["mlp3"] = Mlp(h, h, h, rng)
                block["eta"] = Tensor(np.zeros(()), requires_grad=True)
            else:
                in_dim = node_dim if k == 0 else h
                block["w_nodes"] = MaskedLinear(in_dim, h, rng, bias=False)
                if self.edge_active:
                    block["w_edges"] = MaskedLinear(h, h, rng, bias=False)
            block["bn"] = BatchNorm1d(h)
            self.blocks.append(block)

        if self.gin_family:
            self.head = Mlp(h, h, num_classes, rng)
        else:
            self.head = MaskedLinear(h, num_classes, rng)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self):
        named = []

        def mlp(prefix, m):
            named.extend([(f"{prefix}.lin1.W", m.lin1.W), (f"{prefix}.lin1.b", m.lin1.b),
                          (f"{prefix}.lin2.W", m.lin2.W), (f"{prefix}.lin2.b", m.lin2.b)])

        if self.node_embed:
            mlp("embed_nodes", self.node_embed)
        if self.edge_embed:
            mlp("embed_edges", self.edge_embed)
        for k, block in enumerate(self.blocks, start=1):
            pre = f"block{k}"
            if self.gin_family:
                if "mlp3" in block:
                    mlp(f"{pre}.mlp3", block["mlp3"])
                mlp(f"{pre}.mlp4", block["mlp4"])
                named.append((f"{pre}.eta", block["eta"]))
            else:
                named.append((f"{pre}.w_nodes.W", block["w_nodes"].W))
                if "w_edges" in block:
                    named.append((f"{pre}.w_edges.W", block["w_edges"].W))
            named.append((f"{pre}.bn.gamma", block["bn"].gamma))
            named.append((f"{pre}.bn.beta", block["bn"].beta))
        if self.gin_family:
            mlp("head", self.head)
        else:
            named.extend([("head.W", self.head.W), ("head.b", self.head.b)])
        return [(n, p) for n, p in named if p is not None]

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def embedding_layers(self):
        """(name, layer) pairs for the feature-embedding MLPs and the head."""
        out = []
        if self.node_embed:
            out += [("embed_nodes.lin1", self.node_embed.lin1), ("embed_nodes.lin2", self.node_embed.lin2)]
        if self.edge_embed:
            out += [("embed_edges.lin1", self.edge_embed.lin1), ("embed_edges.lin2", self.edge_embed.lin2)]
        if self.gin_family:
            out += [("head.lin1", self.head.lin1), ("head.lin2", self.head.lin2)]
        else:
            out += [("head", self.head)]
        return out

    def block_layers(self):
        """(name, layer) pairs for the per-block weight matrices; these are
        the sparsity/rewiring targets."""
        out = []
        for k, block in enumerate(self.blocks, start=1):
            pre = f"block{k}"
            if self.gin_family:
                if "mlp3" in block:
                    out += [(f"{pre}.mlp3.lin1", block["mlp3"].lin1), (f"{pre}.mlp3.lin2", block["mlp3"].lin2)]
                out += [(f"{pre}.mlp4.lin1", block["mlp4"].lin1), (f"{pre}.mlp4.lin2", block["mlp4"].lin2)]
            else:
                out.append((f"{pre}.w_nodes", block["w_nodes"]))
                if "w_edges" in block:
                    out.append((f"{pre}.w_edges", block["w_edges"]))
        return out

    def masked_layers(self):
        return [(n, l) for n, l in self.block_layers() + self.embedding_layers() if l.mask is not None]

    # -- forward ----------------------------------------------------------------

    def initial_embeddings(self, batch: Batch):
        """Neighbor-summed node state h0 and edge state g0 (None if the
        variant or dataset has no edge path)."""
        x = Tensor(batch.x)
        if self.gin_family:
            z = self.node_embed.forward(x)
        else:
            z = x
        h0 = spmm(batch.adj, z)
        g0 = self.edge_embed.forward(Tensor(batch.edge_attr)) if self.edge_active else None
        return h0, g0

    def _gcn_block(self, k, h, g, batch, training):
        block = self.blocks[k]
        t = block["w_nodes"].forward(h)
        a = spmm(batch.adj_norm, t)
        if g is not None:
            a = add(a, spmm(batch.incidence, g, batch.incidence_t))
        a = relu(a)
        h_next = block["bn"].forward(a, training)
        g_next = block["w_edges"].forward(g) if g is not None else None
        return h_next, g_next

    def _gin_block(self, k, h, g, batch, training):
        block = self.blocks[k]
        if g is None:
            # sum of relu(h_u) over neighbors collapses to a sparse matmul
            a = spmm(batch.adj, relu(h))
        else:
            msg = add(gather_rows(h, batch.src, batch.by_src),
                      gather_rows(g, batch.edge_id, batch.by_edge))
            a = segment_sum(relu(msg), batch.by_dst)
        pre = add(scale_shift(h, block["eta"], offset=1.0), a)
        h_next = block["bn"].forward(block["mlp4"].forward(pre), training)
        g_next = block["mlp3"].forward(g) if g is not None else None
        return h_next, g_next

    def forward(self, batch: Batch, training=False, dropout_rate=0.0, rng=None) -> Tensor:
        """Logits [num_graphs, num_classes] for a batch of graphs."""
        if dropout_rate and rng is None:
            raise ValueError("dropout requires an rng")
        h, g = self.initial_embeddings(batch)
        step = self._gin_block if self.gin_family else self._gcn_block
        for k in range(self.num_blocks):
            h, g = step(k, h, g, batch, training)
            if dropout_rate:
                h = dropout(h, dropout_rate, rng, training)
        if self.pool == "sum":
            pooled = segment_sum(h, batch.by_graph)
        else:
            pooled = segment_mean(h, batch.by_graph)
        return self.head.forward(pooled)
