"""Layers and the optimizer built on the tensor engine.

MaskedLinear is the unit of sparsity: a dense weight matrix paired with an
optional binary mask. Masked entries are kept at exactly 0.0 by a three-part
contract: apply_sparsity zeroes them at install time, apply_grad_mask zeroes
their gradients after every backward pass, and rewiring resets the optimizer
moments whenever a position changes state.
"""

from __future__ import annotations

import numpy as np

from .tensor import BatchNormState, Tensor, _result, batch_norm, matmul, relu


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


class MaskedLinear:
    """y = x @ (W * B)^T + b with W of shape [out_dim, in_dim].

    mask is None for a dense layer, otherwise a {0.0, 1.0} array of W's
    shape. Gradients are computed for the full matrix; callers zero the
    masked positions with apply_grad_mask before the optimizer step.
    """

    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = Tensor(glorot_uniform(rng, out_dim, in_dim), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None
        self.mask = None

    def effective_weight(self) -> np.ndarray:
        if self.mask is None:
            return self.W.data
        return self.W.data * self.mask

    def set_mask(self, mask: np.ndarray):
        if mask.shape != self.W.data.shape:
            raise ValueError(f"mask shape {mask.shape} != weight shape {self.W.data.shape}")
        self.mask = mask.astype(np.float64)
        self.W.data *= self.mask

    def forward(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {x.data.shape[-1]} != layer in_dim {self.in_dim}")
        w_eff = self.effective_weight()
        out = x.data @ w_eff.T
        if self.b is not None:
            out = out + self.b.data
        layer = self

        def backprop(g):
            if x.requires_grad:
                x.accumulate(g @ w_eff)
            layer.W.accumulate(g.T @ x.data)
            if layer.b is not None:
                layer.b.accumulate(g.sum(axis=0))

        parents = (x, self.W) if self.b is None else (x, self.W, self.b)
        return _result(out, parents, backprop)

    def parameters(self):
        return [self.W] if self.b is None else [self.W, self.b]

    def active_count(self) -> int:
        if self.mask is None:
            return self.W.data.size
        return int(self.mask.sum())


def apply_grad_mask(layer: MaskedLinear):
    """Zero the weight gradient wherever the mask is zero."""
    if layer.mask is not None and layer.W.grad is not None:
        layer.W.grad *= layer.mask


class Mlp:
    """Two-layer perceptron with a ReLU between the layers."""

    def __init__(self, in_dim, hidden_dim, out_dim, rng):
        self.lin1 = MaskedLinear(in_dim, hidden_dim, rng)
        self.lin2 = MaskedLinear(hidden_dim, out_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2.forward(relu(self.lin1.forward(x)))

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()

    def layers(self):
        return [self.lin1, self.lin2]


class BatchNorm1d:
    """Learnable scale/shift around the batch_norm op, with running stats."""

    def __init__(self, dim, eps=1e-5, momentum=0.1):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.state = BatchNormState(dim, eps=eps, momentum=momentum)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.state, training)

    def parameters(self):
        return [self.gamma, self.beta]


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def reset_positions(self, param: Tensor, rows, cols):
        """Clear first/second moments at the given weight positions.

        Called by rewiring when connections change state, so that stale
        momentum never moves a freshly masked weight off exact zero.
        """
        for p, m, v in zip(self.params, self.m, self.v):
            if p is param:
                m[rows, cols] = 0.0
                v[rows, cols] = 0.0
                return
        raise KeyError("parameter not managed by this optimizer")
