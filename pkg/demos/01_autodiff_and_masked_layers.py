"""Tour of the tensor engine: masked linear layers, gradients, and Adam.

Run from the repo root:  python demos/01_autodiff_and_masked_layers.py
"""

import numpy as np

from sparsegnn import Adam, MaskedLinear, Tensor, apply_grad_mask
from sparsegnn.tensor import relu, softmax_cross_entropy

rng = np.random.default_rng(0)

# A masked linear layer is a dense weight matrix plus a binary mask.
layer = MaskedLinear(4, 3, rng)
layer.set_mask(np.array([
    [1.0, 1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0, 1.0],
]))
print("weights with mask applied:")
print(layer.effective_weight().round(3))

# Forward/backward: the loss differentiates through the masked product.
x = Tensor(rng.normal(size=(8, 4)))
labels = rng.integers(0, 3, size=8)
logits = relu(layer.forward(x))
loss = softmax_cross_entropy(logits, labels)
loss.backward()
print(f"\nloss: {float(loss.data):.4f}")
print("raw weight gradient (note: masked positions still get one):")
print(layer.W.grad.round(3))

# apply_grad_mask zeroes the masked positions so the optimizer cannot move
# them; after the step the masked weights are still exactly zero.
apply_grad_mask(layer)
opt = Adam(layer.parameters(), lr=1e-2)
opt.step()
masked_values = layer.W.data[layer.mask == 0.0]
print(f"\nmasked weights after an Adam step: {masked_values} (all exactly 0.0)")

# The same contract holds over many steps.
for step in range(100):
    logits = relu(layer.forward(x))
    loss = softmax_cross_entropy(logits, labels)
    opt.zero_grad()
    loss.backward()
    apply_grad_mask(layer)
    opt.step()
print(f"after 100 steps, loss: {float(loss.data):.4f}, "
      f"masked still zero: {(layer.W.data[layer.mask == 0.0] == 0.0).all()}")
