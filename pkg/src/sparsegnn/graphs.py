"""Graph data model, TU-format text parsing, splitting and batching.

The TU convention: a dataset directory holds DS_A.txt (1-indexed global
edge list, comma separated, each undirected edge usually listed in both
directions), DS_graph_indicator.txt (graph id per node), DS_graph_labels.txt,
and optionally DS_node_labels.txt / DS_edge_labels.txt. Integer node/edge
labels are one-hot encoded into the feature matrices.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .tensor import ScatterPlan


class TuFormatError(ValueError):
    """Raised for missing files or malformed content in a TU dataset."""


@dataclass
class Graph:
    """One undirected labeled graph; each edge is stored exactly once."""

    num_nodes: int
    edges: np.ndarray          # [num_edges, 2] int, endpoints in [0, num_nodes)
    node_features: np.ndarray  # [num_nodes, Q]
    edge_features: np.ndarray  # [num_edges, P], P may be 0
    label: int

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.edge_features = np.asarray(self.edge_features, dtype=np.float64)
        if self.num_nodes <= 0:
            raise ValueError("graph must have at least one node")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.num_nodes):
            raise ValueError("edge endpoint out of range")
        if self.node_features.shape[0] != self.num_nodes:
            raise ValueError("node feature rows != num_nodes")
        if self.edge_features.shape[0] != len(self.edges):
            raise ValueError("edge feature rows != num_edges")

    @property
    def num_edges(self):
        return len(self.edges)


@dataclass
class GraphDataset:
    name: str
    graphs: list
    num_classes: int
    node_dim: int
    edge_dim: int

    def __len__(self):
        return len(self.graphs)

    def subset(self, indices):
        return [self.graphs[i] for i in indices]

    def summary(self) -> dict:
        n = len(self.graphs)
        labels = np.array([g.label for g in self.graphs])
        return {
            "name": self.name,
            "graphs": n,
            "mean_nodes": float(np.mean([g.num_nodes for g in self.graphs])),
            "mean_edges": float(np.mean([g.num_edges for g in self.graphs])),
            "node_dim": self.node_dim,
            "edge_dim": self.edge_dim,
            "num_classes": self.num_classes,
            "class_counts": np.bincount(labels, minlength=self.num_classes).tolist(),
        }


class Batch:
    """Disjoint union of graphs with precomputed message-passing indexes.

    Nodes are concatenated with per-graph offsets, so the union adjacency is
    block diagonal. Each undirected edge (u, v) contributes two directed
    entries (u -> v) and (v -> u) sharing one edge-feature row.
    """

    def __init__(self, graphs):
        if not graphs:
            raise ValueError("cannot batch zero graphs")
        xs, feats, srcs, dsts, eids = [], [], [], [], []
        graph_id = []
        labels = []
        node_off = 0
        edge_off = 0
        for gi, g in enumerate(graphs):
            xs.append(g.node_features)
            feats.append(g.edge_features)
            if g.num_edges:
                u = g.edges[:, 0] + node_off
                v = g.edges[:, 1] + node_off
                e = np.arange(g.num_edges, dtype=np.intp) + edge_off
                srcs.append(np.concatenate([u, v]))
                dsts.append(np.concatenate([v, u]))
                eids.append(np.concatenate([e, e]))
            graph_id.append(np.full(g.num_nodes, gi, dtype=np.intp))
            labels.append(g.label)
            node_off += g.num_nodes
            edge_off += g.num_edges

        self.num_graphs = len(graphs)
        self.num_nodes = node_off
        self.num_edges = edge_off
        self.x = np.concatenate(xs, axis=0)
        self.edge_attr = np.concatenate(feats, axis=0) if edge_off else np.zeros((0, graphs[0].edge_features.shape[1]))
        self.src = np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.intp)
        self.dst = np.concatenate(dsts) if dsts else np.zeros(0, dtype=np.intp)
        self.edge_id = np.concatenate(eids) if eids else np.zeros(0, dtype=np.intp)
        self.graph_id = np.concatenate(graph_id)
        self.labels = np.asarray(labels, dtype=np.intp)

        self.by_dst = ScatterPlan(self.dst, self.num_nodes)
        self.by_src = ScatterPlan(self.src, self.num_nodes)
        self.by_edge = ScatterPlan(self.edge_id, self.num_edges)
        self.by_graph = ScatterPlan(self.graph_id, self.num_graphs)

        degree = np.bincount(self.dst, minlength=self.num_nodes)
        self.degree = degree
        d_hat = np.maximum(degree, 1).astype(np.float64)
        self.norm_coef = 1.0 / np.sqrt(d_hat[self.src] * d_hat[self.dst])

        # CSR forms of the aggregations: plain neighbor sum, the
        # degree-normalized sum, and the per-node sum of incident edge rows.
        # All are structure-only, so forward and backward are sparse matmuls.
        ones = np.ones(len(self.dst))
        shape_nn = (self.num_nodes, self.num_nodes)
        self.adj = sparse.csr_matrix((ones, (self.dst, self.src)), shape=shape_nn)
        self.adj_norm = sparse.csr_matrix((self.norm_coef, (self.dst, self.src)),
                                          shape=shape_nn)
        self.incidence = sparse.csr_matrix(
            (ones, (self.dst, self.edge_id)), shape=(self.num_nodes, self.num_edges))
        self.incidence_t = self.incidence.T.tocsr()


def batch_graphs(graphs) -> Batch:
    return Batch(list(graphs))


# ---------------------------------------------------------------------------
# TU text format
# ---------------------------------------------------------------------------


def _read_int_lines(path, what):
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise TuFormatError(f"{os.path.basename(path)}:{lineno}: bad {what} {line!r}")
    return values


def _one_hot(values):
    uniq = sorted(set(values))
    lookup = {v: i for i, v in enumerate(uniq)}
    out = np.zeros((len(values), len(uniq)), dtype=np.float64)
    for i, v in enumerate(values):
        out[i, lookup[v]] = 1.0
    return out


def parse_tu_dataset(directory) -> GraphDataset:
    """Load a TU-format dataset directory into a GraphDataset.

    Duplicate directed pairs (u,v)/(v,u) collapse into one undirected edge;
    graph labels are remapped to contiguous 0-based class ids by sorted
    order; absent node labels fall back to a constant single feature.
    """
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise TuFormatError(f"not a directory: {directory}")
    names = [f for f in os.listdir(directory) if f.endswith("_A.txt")]
    if not names:
        raise TuFormatError(f"no *_A.txt edge file in {directory}")
    ds = names[0][: -len("_A.txt")]

    def path(suffix, required):
        p = os.path.join(directory, f"{ds}_{suffix}.txt")
        if required and not os.path.isfile(p):
            raise TuFormatError(f"missing required file {ds}_{suffix}.txt")
        return p if os.path.isfile(p) else None

    a_path = path("A", required=True)
    indicator = _read_int_lines(path("graph_indicator", required=True), "graph id")
    graph_labels_raw = _read_int_lines(path("graph_labels", required=True), "graph label")

    num_nodes_total = len(indicator)
    num_graphs = len(graph_labels_raw)
    indicator = np.asarray(indicator)
    if indicator.min() < 1 or indicator.max() > num_graphs:
        raise TuFormatError(f"{ds}_graph_indicator.txt: graph id out of range")

    node_labels_path = path("node_labels", required=False)
    if node_labels_path:
        node_labels = _read_int_lines(node_labels_path, "node label")
        if len(node_labels) != num_nodes_total:
            raise TuFormatError(f"{ds}_node_labels.txt: {len(node_labels)} lines for {num_nodes_total} nodes")
        node_feats = _one_hot(node_labels)
    else:
        node_feats = np.ones((num_nodes_total, 1), dtype=np.float64)

    edge_labels_path = path("edge_labels", required=False)
    edge_labels = None
    if edge_labels_path:
        edge_labels = _read_int_lines(edge_labels_path, "edge label")

    # Edge list: 1-indexed global node ids, one "u, v" pair per line.
    pair_label = {}
    pair_order = []
    with open(a_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TuFormatError(f"{ds}_A.txt:{lineno}: expected 'u, v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise TuFormatError(f"{ds}_A.txt:{lineno}: non-integer endpoint in {line!r}")
            if not (1 <= u <= num_nodes_total and 1 <= v <= num_nodes_total):
                raise TuFormatError(f"{ds}_A.txt:{lineno}: node index out of range in {line!r}")
            if indicator[u - 1] != indicator[v - 1]:
                raise TuFormatError(f"{ds}_A.txt:{lineno}: edge crosses graphs")
            key = (min(u, v), max(u, v))
            if key not in pair_label:
                pair_order.append(key)
                pair_label[key] = edge_labels[lineno - 1] if edge_labels is not None else None
    if edge_labels is not None:
        edge_feats_all = _one_hot([pair_label[k] for k in pair_order])
        edge_dim = edge_feats_all.shape[1]
    else:
        edge_dim = 0
        edge_feats_all = np.zeros((len(pair_order), 0), dtype=np.float64)

    label_map = {v: i for i, v in enumerate(sorted(set(graph_labels_raw)))}
    num_classes = len(label_map)

    # Per-graph node index ranges (TU files list nodes grouped by graph).
    node_of_graph = [[] for _ in range(num_graphs)]
    for node, gid in enumerate(indicator):
        node_of_graph[gid - 1].append(node)
    local_index = np.zeros(num_nodes_total, dtype=np.intp)
    for nodes in node_of_graph:
        local_index[nodes] = np.arange(len(nodes))

    edges_of_graph = [[] for _ in range(num_graphs)]
    feats_of_graph = [[] for _ in range(num_graphs)]
    for idx, (u, v) in enumerate(pair_order):
        gid = indicator[u - 1] - 1
        edges_of_graph[gid].append((local_index[u - 1], local_index[v - 1]))
        feats_of_graph[gid].append(edge_feats_all[idx])

    graphs = []
    for gid in range(num_graphs):
        nodes = node_of_graph[gid]
        if not nodes:
            raise TuFormatError(f"graph {gid + 1} has no nodes")
        edges = np.asarray(edges_of_graph[gid], dtype=np.intp).reshape(-1, 2)
        efeat = (np.asarray(feats_of_graph[gid], dtype=np.float64).reshape(-1, edge_dim)
                 if edge_dim else np.zeros((len(edges), 0)))
        graphs.append(Graph(
            num_nodes=len(nodes),
            edges=edges,
            node_features=node_feats[nodes],
            edge_features=efeat,
            label=label_map[graph_labels_raw[gid]],
        ))

    return GraphDataset(
        name=os.path.basename(os.path.normpath(directory)),
        graphs=graphs,
        num_classes=num_classes,
        node_dim=node_feats.shape[1],
        edge_dim=edge_dim,
    )


def write_tu_dataset(ds: GraphDataset, directory, name=None):
    """Serialize a dataset back to TU text files (inverse of parse for
    datasets whose features are one-hot label encodings)."""
    name = name or ds.name
    os.makedirs(directory, exist_ok=True)
    a_lines, indicator, node_labels, edge_labels, graph_labels = [], [], [], [], []
    offset = 0
    has_edge_labels = ds.edge_dim > 0
    for gid, g in enumerate(ds.graphs, start=1):
        for (u, v), feat in zip(g.edges, g.edge_features if has_edge_labels else [None] * g.num_edges):
            a_lines.append(f"{u + 1 + offset}, {v + 1 + offset}")
            a_lines.append(f"{v + 1 + offset}, {u + 1 + offset}")
            if has_edge_labels:
                edge_labels.extend([str(int(np.argmax(feat)))] * 2)
        indicator.extend([str(gid)] * g.num_nodes)
        node_labels.extend(str(int(np.argmax(row))) for row in g.node_features)
        graph_labels.append(str(g.label))
        offset += g.num_nodes

    def dump(suffix, lines):
        with open(os.path.join(directory, f"{name}_{suffix}.txt"), "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))

    dump("A", a_lines)
    dump("graph_indicator", indicator)
    dump("graph_labels", graph_labels)
    dump("node_labels", node_labels)
    if has_edge_labels:
        dump("edge_labels", edge_labels)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split_dataset(ds: GraphDataset, ratios=(0.8, 0.1, 0.1), seed=0):
    """Shuffle with the seed and cut into (train, val, test) index lists.

    Sizes are floor(train_ratio * n) and floor(val_ratio * n); the test split
    takes the remainder, so the three parts always cover the dataset.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n = len(ds)
    if n < 3:
        raise ValueError(f"dataset too small to split: {n} graphs")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    train = order[:n_train]
    val = order[n_train:n_train + n_val]
    test = order[n_train + n_val:]
    return train.tolist(), val.tolist(), test.tolist()
