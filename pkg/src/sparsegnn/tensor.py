"""Dense float64 tensors with reverse-mode differentiation.

Small tape-free engine in the micrograd style: every op builds an output
Tensor holding a closure that routes the output gradient to its parents.
Only the ops needed for masked linear layers, message passing, batch norm,
dropout and softmax cross-entropy are provided; everything is vectorized
over numpy arrays.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A numpy array plus an optional gradient buffer.

    Leaf tensors created with requires_grad=True are trainable parameters;
    tensors produced by ops inherit requires_grad from their parents and
    carry the backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backprop = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            # copy: g may be shared with another parent's accumulation
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar result to every reachable parameter."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        if self._done:
            raise RuntimeError("backward already ran for this result; rebuild the forward graph")
        self._done = True

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backprop):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backprop = backprop
    return out


class ScatterPlan:
    """Precomputed sort order for repeated segment sums over one index array.

    np.add.at is an order of magnitude slower than sorting once and applying
    np.add.reduceat, and message passing reuses the same index arrays for
    every layer of every forward/backward pass.
    """

    def __init__(self, index, num_segments):
        self.index = np.asarray(index, dtype=np.intp)
        self.num_segments = int(num_segments)
        order = np.argsort(self.index, kind="stable")
        self.order = order
        sorted_idx = self.index[order]
        if len(sorted_idx):
            starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_idx)) + 1])
            self.starts = starts
            self.present = sorted_idx[starts]
        else:
            self.starts = np.zeros(0, dtype=np.intp)
            self.present = np.zeros(0, dtype=np.intp)

    def sum(self, values):
        out = np.zeros((self.num_segments,) + values.shape[1:], dtype=np.float64)
        if len(self.index):
            out[self.present] = np.add.reduceat(values[self.order], self.starts, axis=0)
        return out

    def counts(self):
        return np.bincount(self.index, minlength=self.num_segments)


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backprop(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _result(a.data + b.data, (a, b), backprop)


def mul_const(x: Tensor, c) -> Tensor:
    """x * c for a fixed (non-differentiated) array or scalar c."""
    c = np.asarray(c, dtype=np.float64)

    def backprop(g):
        x.accumulate(g * c)

    return _result(x.data * c, (x,), backprop)


def scale_shift(x: Tensor, s: Tensor, offset=0.0) -> Tensor:
    """(offset + s) * x with a learnable scalar s (the GIN-style self-weight)."""
    if s.data.size != 1:
        raise ValueError("scale_shift expects a scalar tensor")
    factor = offset + s.data.reshape(())

    def backprop(g):
        if x.requires_grad:
            x.accumulate(g * factor)
        if s.requires_grad:
            s.accumulate(np.sum(g * x.data).reshape(s.data.shape))

    return _result(x.data * factor, (x, s), backprop)


# When set to a list, relu appends the distance of its nearest input to the
# kink at 0. Finite-difference gradient checks use this to confirm they are
# evaluating at a differentiable point.
KINK_WATCH = None


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    if KINK_WATCH is not None and x.data.size:
        KINK_WATCH.append(float(np.min(np.abs(x.data))))

    def backprop(g):
        x.accumulate(g * (x.data > 0.0))

    return _result(out, (x,), backprop)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backprop(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backprop)


def tsum(x: Tensor) -> Tensor:
    def backprop(g):
        x.accumulate(np.full_like(x.data, float(g)))

    return _result(np.sum(x.data), (x,), backprop)


# ---------------------------------------------------------------------------
# gather / segment ops for message passing
# ---------------------------------------------------------------------------


def gather_rows(x: Tensor, index, back_plan: ScatterPlan) -> Tensor:
    """x[index] over the leading axis; back_plan scatter-adds the gradient
    back into x's rows and must have been built on the same index array."""

    def backprop(g):
        x.accumulate(back_plan.sum(g))

    return _result(x.data[index], (x,), backprop)


def spmm(matrix, x: Tensor, matrix_t=None) -> Tensor:
    """Fixed sparse matrix times dense tensor: matrix @ x.

    The matrix carries graph structure, not parameters, so only x receives a
    gradient. matrix_t is the precomputed transpose used on the backward
    pass; omit it for symmetric matrices.
    """
    mt = matrix if matrix_t is None else matrix_t

    def backprop(g):
        x.accumulate(mt @ g)

    return _result(matrix @ x.data, (x,), backprop)


def segment_sum(x: Tensor, plan: ScatterPlan) -> Tensor:
    def backprop(g):
        x.accumulate(g[plan.index])

    return _result(plan.sum(x.data), (x,), backprop)


def segment_mean(x: Tensor, plan: ScatterPlan) -> Tensor:
    counts = plan.counts()
    if np.any(counts == 0):
        raise ValueError("segment_mean over an empty segment")
    inv = (1.0 / counts)[:, None]

    def backprop(g):
        x.accumulate((g * inv)[plan.index])

    return _result(plan.sum(x.data) * inv, (x,), backprop)


# ---------------------------------------------------------------------------
# normalization, regularization, loss
# ---------------------------------------------------------------------------


class BatchNormState:
    """Running statistics for one batch-norm instance."""

    def __init__(self, dim, eps=1e-5, momentum=0.1):
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)
        self.eps = eps
        self.momentum = momentum


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool) -> Tensor:
    """One-dimensional batch norm over the leading (batch) axis.

    Training mode normalizes with biased batch statistics and updates the
    running buffers with the unbiased variance; eval mode uses the running
    buffers only.
    """
    n = x.data.shape[0]
    if n == 0:
        raise ValueError("batch_norm on an empty batch")
    if training:
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat = (x.data - mean) * inv_std
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        state.running_mean += m * (mean - state.running_mean)
        state.running_var += m * (unbiased - state.running_var)

        def backprop(g):
            if gamma.requires_grad:
                gamma.accumulate(np.sum(g * x_hat, axis=0))
            if beta.requires_grad:
                beta.accumulate(np.sum(g, axis=0))
            if x.requires_grad:
                gx_hat = g * gamma.data
                term = gx_hat - gx_hat.mean(axis=0) - x_hat * (gx_hat * x_hat).mean(axis=0)
                x.accumulate(term * inv_std)

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        x_hat = (x.data - state.running_mean) * inv_std

        def backprop(g):
            if gamma.requires_grad:
                gamma.accumulate(np.sum(g * x_hat, axis=0))
            if beta.requires_grad:
                beta.accumulate(np.sum(g, axis=0))
            if x.requires_grad:
                x.accumulate(g * gamma.data * inv_std)

    return _result(x_hat * gamma.data + beta.data, (x, gamma, beta), backprop)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        def backprop(g):
            x.accumulate(g)

        return _result(x.data, (x,), backprop)

    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def backprop(g):
        x.accumulate(g * keep)

    return _result(x.data * keep, (x,), backprop)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer labels against softmax(logits)."""
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.data.shape[0]
    if n == 0:
        raise ValueError("cross-entropy over an empty batch")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), labels].mean()

    def backprop(g):
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        logits.accumulate(grad * (float(g) / n))

    return _result(loss, (logits,), backprop)
