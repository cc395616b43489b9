"""Prune-and-regrow rewiring of masked weight matrices.

Each rewiring step removes the floor(zeta * |C|) active connections with the
smallest absolute weight and adds the same number of new connections at
random inactive positions, with weights sampled from a normal distribution
fitted to the surviving weights. The fixed-rate mode keeps zeta constant;
the adaptive controller nudges it by 0.05 per epoch against a sliding-window
average of validation accuracy and freezes the topology when validation loss
stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, MaskedLinear


@dataclass
class RewireEvent:
    epoch: int
    layer: str
    zeta: float
    removed: list   # [(row, col), ...]
    added: list
    mu: float
    sigma: float


@dataclass
class RewireController:
    """Global adaptive-rate state shared by all layers of one run."""

    zeta: float
    zeta_min: float = 0.05
    zeta_max: float = 0.7
    window: int = 5
    patience: int = 10
    min_delta: float = 1e-4
    accuracy_history: list = field(default_factory=list)
    best_loss: float = math.inf
    stall_counter: int = 0
    rewiring_active: bool = True

    def __post_init__(self):
        if not self.zeta_min <= self.zeta <= self.zeta_max:
            raise ValueError(f"zeta {self.zeta} outside [{self.zeta_min}, {self.zeta_max}]")


def rank_connections(layer: MaskedLinear):
    """Active positions sorted ascending by |weight|, ties by (row, col)."""
    if layer.mask is None:
        raise ValueError("layer has no mask installed")
    rows, cols = np.nonzero(layer.mask)
    weights = layer.W.data[rows, cols]
    order = np.lexsort((cols, rows, np.abs(weights)))
    return rows[order], cols[order], weights[order]


def fixed_rewire_step(layer: MaskedLinear, zeta, rng: np.random.Generator,
                      epoch=0, name="", optimizer: Adam | None = None) -> RewireEvent:
    """One prune-and-regrow step on a single layer.

    New positions are drawn uniformly without replacement from the inactive
    pool excluding the just-removed positions; if that pool is too small the
    removed positions are re-admitted. The active-connection count is always
    preserved. When an optimizer is given, its moments are cleared at every
    changed position so removed weights stay at exact zero afterwards.
    """
    if not 0.0 <= zeta <= 1.0:
        raise ValueError(f"zeta must be in [0, 1], got {zeta}")
    rows, cols, weights = rank_connections(layer)
    num_active = len(rows)
    n = int(math.floor(zeta * num_active))
    if n == 0:
        return RewireEvent(epoch=epoch, layer=name, zeta=zeta, removed=[], added=[],
                           mu=0.0, sigma=0.0)

    rem_rows, rem_cols = rows[:n], cols[:n]
    survivors = weights[n:]
    mu = float(survivors.mean()) if len(survivors) else 0.0
    sigma = float(survivors.std()) if len(survivors) else 0.0

    layer.mask[rem_rows, rem_cols] = 0.0
    layer.W.data[rem_rows, rem_cols] = 0.0

    flat_inactive = np.flatnonzero(layer.mask.ravel() == 0.0)
    removed_flat = rem_rows * layer.mask.shape[1] + rem_cols
    pool = np.setdiff1d(flat_inactive, removed_flat, assume_unique=False)
    if len(pool) < n:
        pool = flat_inactive
    chosen = rng.choice(len(pool), size=n, replace=False)
    new_flat = pool[np.sort(chosen)]
    add_rows, add_cols = np.unravel_index(new_flat, layer.mask.shape)
    new_weights = rng.normal(mu, sigma, size=n) if sigma > 0.0 else np.full(n, mu)

    layer.mask[add_rows, add_cols] = 1.0
    layer.W.data[add_rows, add_cols] = new_weights
    if optimizer is not None:
        optimizer.reset_positions(layer.W, np.concatenate([rem_rows, add_rows]),
                                  np.concatenate([rem_cols, add_cols]))

    return RewireEvent(
        epoch=epoch, layer=name, zeta=zeta,
        removed=list(zip(rem_rows.tolist(), rem_cols.tolist())),
        added=list(zip(add_rows.tolist(), add_cols.tolist())),
        mu=mu, sigma=sigma,
    )


def adaptive_update_zeta(ctrl: RewireController, val_accuracy: float):
    """Append the accuracy and nudge zeta by 0.05 against the sliding-window
    average of the `window` accuracies preceding it (no change during the
    warm-up while fewer than `window` previous entries exist)."""
    ctrl.accuracy_history.append(val_accuracy)
    if len(ctrl.accuracy_history) > ctrl.window:
        window_avg = float(np.mean(ctrl.accuracy_history[-(ctrl.window + 1):-1]))
        if val_accuracy > window_avg:
            ctrl.zeta = max(ctrl.zeta_min, ctrl.zeta - 0.05)
        else:
            ctrl.zeta = min(ctrl.zeta_max, ctrl.zeta + 0.05)
    return ctrl


def rewiring_early_stop(ctrl: RewireController, val_loss: float):
    """Freeze the topology (not the weights) once validation loss has failed
    to improve by at least min_delta for `patience` consecutive epochs."""
    if val_loss < ctrl.best_loss - ctrl.min_delta:
        ctrl.best_loss = val_loss
        ctrl.stall_counter = 0
    else:
        ctrl.stall_counter += 1
        if ctrl.stall_counter >= ctrl.patience:
            ctrl.rewiring_active = False
    return ctrl


def rewire_model(model, zeta, rng, epoch=0, optimizer=None):
    """Apply fixed_rewire_step to every masked layer, in model order, sharing
    one RNG stream so reruns with the same seed replay exactly."""
    events = []
    for name, layer in model.masked_layers():
        events.append(fixed_rewire_step(layer, zeta, rng, epoch=epoch, name=name,
                                        optimizer=optimizer))
    return events
