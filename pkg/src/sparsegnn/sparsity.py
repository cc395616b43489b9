"""Erdos-Renyi masking of model weight matrices and parameter accounting.

epsilon is the fraction of weight-matrix entries removed at initialization:
each mask entry is drawn i.i.d. Bernoulli with keep probability 1 - epsilon,
so epsilon = 0 is the dense model and expected active count is
(1 - epsilon) * rows * cols. Masks cover the per-block weight matrices by
default; embedding MLPs and the readout head stay dense unless mask_all is
set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import GnnModel


@dataclass
class LayerReport:
    name: str
    total: int
    active: int

    @property
    def masked(self):
        return self.total - self.active


@dataclass
class ParamReport:
    layers: list = field(default_factory=list)
    unmasked_params: int = 0

    @property
    def masked_layer_total(self):
        return sum(l.total for l in self.layers)

    @property
    def masked_layer_active(self):
        return sum(l.active for l in self.layers)

    @property
    def total(self):
        return self.masked_layer_total + self.unmasked_params

    @property
    def active(self):
        return self.masked_layer_active + self.unmasked_params


def make_er_mask(rows, cols, epsilon, rng: np.random.Generator) -> np.ndarray:
    """Binary mask with entries independently 1 with probability 1 - epsilon."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon == 0.0:
        return np.ones((rows, cols))
    if epsilon == 1.0:
        return np.zeros((rows, cols))
    return (rng.random((rows, cols)) >= epsilon).astype(np.float64)


def apply_sparsity(model: GnnModel, epsilon, rng, mask_all=False):
    """Install ER masks on the model's rewiring target layers.

    Weights are zeroed at masked positions; biases, batch-norm parameters
    and the GIN self-weights are never masked.
    """
    targets = model.block_layers()
    if mask_all:
        targets = targets + model.embedding_layers()
    for _, layer in targets:
        layer.set_mask(make_er_mask(layer.out_dim, layer.in_dim, epsilon, rng))
    return model


def count_params(model: GnnModel) -> ParamReport:
    """Active/total accounting; unmasked parameters count as always active."""
    report = ParamReport()
    masked = {id(layer.W) for _, layer in model.masked_layers()}
    for name, layer in model.masked_layers():
        report.layers.append(LayerReport(name=name, total=layer.W.data.size,
                                         active=layer.active_count()))
    for name, p in model.named_parameters():
        if id(p) not in masked:
            report.unmasked_params += p.data.size
    return report
