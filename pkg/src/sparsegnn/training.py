"""Single-run training loop and multi-seed aggregation.

Epoch structure: optimize over shuffled mini-batches, evaluate on the
validation split, then (mode-dependent) adjust the adaptive rate, check
rewiring early stop, and rewire. Reported test accuracy comes from the
parameters checkpointed at the epoch of best validation accuracy (earliest
epoch on ties). Every random draw of a run flows from its seed, so a rerun
with the same config reproduces the run log byte for byte.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .graphs import Batch, GraphDataset, split_dataset
from .models import GnnModel
from .nn import Adam, apply_grad_mask
from .rewiring import (RewireController, adaptive_update_zeta, rewire_model,
                       rewiring_early_stop)
from .sparsity import apply_sparsity, count_params
from .tensor import softmax_cross_entropy

MODES = ("baseline", "dropout", "sparse", "fixed", "adaptive")
SPLIT_RATIOS = (0.8, 0.1, 0.1)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "gine"
    mode: str = "baseline"
    epsilon: float = 0.0
    zeta: float = 0.0            # fixed rate, or initial adaptive rate
    seed: int = 0
    num_blocks: int = 3
    hidden_dim: int = 64
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 20           # training early stop on validation loss
    dropout_rate: float = 0.5
    window: int = 5              # adaptive controller sliding window
    rewire_patience: int = 10
    rewire_min_delta: float = 1e-4
    zeta_min: float = 0.05
    zeta_max: float = 0.7
    mask_all: bool = False
    log_positions: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must be in [0, 1], got {self.zeta}")
        if self.batch_size < 1 or self.num_blocks < 1 or self.hidden_dim < 1:
            raise ValueError("batch_size, num_blocks and hidden_dim must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        return self


@dataclass
class RunResult:
    config: TrainConfig
    test_acc: float
    best_val_acc: float
    best_val_loss: float
    best_epoch: int
    epochs_run: int
    params_total: int
    params_active: int
    train_loss_curve: list = field(default_factory=list)
    train_acc_curve: list = field(default_factory=list)
    val_loss_curve: list = field(default_factory=list)
    val_acc_curve: list = field(default_factory=list)
    zeta_curve: list = field(default_factory=list)
    wall_time: float = 0.0


def _batches(graphs, batch_size):
    return [Batch(graphs[i:i + batch_size]) for i in range(0, len(graphs), batch_size)]


def evaluate(model: GnnModel, batches):
    """(accuracy, mean loss) over pre-built batches, in eval mode."""
    if not batches:
        raise ValueError("evaluate on an empty split")
    correct = 0
    loss_sum = 0.0
    total = 0
    for batch in batches:
        logits = model.forward(batch, training=False)
        loss = softmax_cross_entropy(logits, batch.labels)
        n = batch.num_graphs
        loss_sum += float(loss.data) * n
        correct += int((np.argmax(logits.data, axis=1) == batch.labels).sum())
        total += n
    return correct / total, loss_sum / total


def train_epoch(model, train_graphs, optimizer, batch_size, rng, epoch,
                dropout_rate=0.0):
    """One optimization pass over shuffled mini-batches.

    Per batch: forward, cross-entropy, backward, gradient masking, Adam step.
    Returns (mean loss, accuracy) accumulated from the training-mode passes.
    """
    order = rng.permutation(len(train_graphs))
    loss_sum = 0.0
    correct = 0
    masked = model.masked_layers()
    for start in range(0, len(order), batch_size):
        batch = Batch([train_graphs[i] for i in order[start:start + batch_size]])
        logits = model.forward(batch, training=True, dropout_rate=dropout_rate, rng=rng)
        loss = softmax_cross_entropy(logits, batch.labels)
        if not math.isfinite(float(loss.data)):
            raise TrainingDiverged(f"non-finite loss {float(loss.data)} at epoch {epoch}")
        optimizer.zero_grad()
        loss.backward()
        for _, layer in masked:
            apply_grad_mask(layer)
        optimizer.step()
        loss_sum += float(loss.data) * batch.num_graphs
        correct += int((np.argmax(logits.data, axis=1) == batch.labels).sum())
    n = len(train_graphs)
    return loss_sum / n, correct / n


class _Snapshot:
    def __init__(self, model):
        self.params = [p.data.copy() for p in model.parameters()]
        self.bn = [(b["bn"].state.running_mean.copy(), b["bn"].state.running_var.copy())
                   for b in model.blocks]

    def restore(self, model):
        for p, saved in zip(model.parameters(), self.params):
            p.data[...] = saved
        for block, (mean, var) in zip(model.blocks, self.bn):
            block["bn"].state.running_mean[...] = mean
            block["bn"].state.running_var[...] = var


def build_model(config: TrainConfig, dataset: GraphDataset, rng) -> GnnModel:
    model = GnnModel(config.model, dataset.node_dim, dataset.edge_dim,
                     dataset.num_classes, hidden_dim=config.hidden_dim,
                     num_blocks=config.num_blocks, rng=rng)
    if config.mode in ("sparse", "fixed", "adaptive"):
        apply_sparsity(model, config.epsilon, rng, mask_all=config.mask_all)
    return model


def run_training(config: TrainConfig, dataset: GraphDataset, log_path=None,
                 epoch_callback=None) -> RunResult:
    """Train one model under one config and return metrics at the best-val
    checkpoint. epoch_callback(epoch, model, ctrl, events) runs after each
    epoch's rewiring, for invariant checks."""
    config.validate()
    started = time.perf_counter()
    log = _RunLog(log_path)

    train_idx, val_idx, test_idx = split_dataset(dataset, SPLIT_RATIOS, seed=config.seed)
    train_graphs = dataset.subset(train_idx)
    val_batches = _batches(dataset.subset(val_idx), config.batch_size)
    test_batches = _batches(dataset.subset(test_idx), config.batch_size)

    rng = np.random.default_rng([config.seed, 1])
    model = build_model(config, dataset, rng)
    optimizer = Adam(model.parameters(), lr=config.lr)
    ctrl = None
    if config.mode == "adaptive":
        ctrl = RewireController(zeta=config.zeta, zeta_min=config.zeta_min,
                                zeta_max=config.zeta_max, window=config.window,
                                patience=config.rewire_patience,
                                min_delta=config.rewire_min_delta)
    dropout_rate = config.dropout_rate if config.mode == "dropout" else 0.0

    log.write({"record": "config", "dataset": dataset.name, **asdict(config)})

    result = RunResult(config=config, test_acc=0.0, best_val_acc=-1.0,
                       best_val_loss=math.inf, best_epoch=0, epochs_run=0,
                       params_total=0, params_active=0)
    best_snapshot = _Snapshot(model)
    stop_best_loss = math.inf
    stop_counter = 0

    if config.max_epochs == 0:
        result.best_val_acc, result.best_val_loss = evaluate(model, val_batches)

    for epoch in range(1, config.max_epochs + 1):
        train_loss, train_acc = train_epoch(model, train_graphs, optimizer,
                                            config.batch_size, rng, epoch,
                                            dropout_rate=dropout_rate)
        val_acc, val_loss = evaluate(model, val_batches)

        events = []
        zeta_now = None
        if config.mode == "fixed":
            zeta_now = config.zeta
            events = rewire_model(model, config.zeta, rng, epoch=epoch,
                                  optimizer=optimizer)
        elif config.mode == "adaptive":
            if ctrl.rewiring_active:
                adaptive_update_zeta(ctrl, val_acc)
                rewiring_early_stop(ctrl, val_loss)
                if ctrl.rewiring_active:
                    events = rewire_model(model, ctrl.zeta, rng, epoch=epoch,
                                          optimizer=optimizer)
            zeta_now = ctrl.zeta

        result.train_loss_curve.append(train_loss)
        result.train_acc_curve.append(train_acc)
        result.val_loss_curve.append(val_loss)
        result.val_acc_curve.append(val_acc)
        if zeta_now is not None:
            result.zeta_curve.append(zeta_now)

        report = count_params(model)
        record = {"record": "epoch", "epoch": epoch, "train_loss": train_loss,
                  "train_acc": train_acc, "val_loss": val_loss, "val_acc": val_acc,
                  "zeta": zeta_now,
                  "rewiring_active": None if ctrl is None else ctrl.rewiring_active,
                  "active_weights": report.masked_layer_active}
        log.write(record)
        for ev in events:
            entry = {"record": "rewire", "epoch": ev.epoch, "layer": ev.layer,
                     "zeta": ev.zeta, "removed_count": len(ev.removed),
                     "added_count": len(ev.added), "mu": ev.mu, "sigma": ev.sigma}
            if config.log_positions:
                entry["removed"] = [list(p) for p in ev.removed]
                entry["added"] = [list(p) for p in ev.added]
            log.write(entry)

        if epoch_callback is not None:
            epoch_callback(epoch, model, ctrl, events)

        if val_acc > result.best_val_acc:
            result.best_val_acc = val_acc
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_snapshot = _Snapshot(model)

        result.epochs_run = epoch
        if val_loss < stop_best_loss:
            stop_best_loss = val_loss
            stop_counter = 0
        else:
            stop_counter += 1
            if stop_counter >= config.patience:
                break

    best_snapshot.restore(model)
    result.test_acc = evaluate(model, test_batches)[0]
    report = count_params(model)
    result.params_total = report.total
    result.params_active = report.active
    result.wall_time = time.perf_counter() - started

    log.write({"record": "result", "dataset": dataset.name, "model": config.model,
               "mode": config.mode, "epsilon": config.epsilon, "zeta": config.zeta,
               "seed": config.seed, "test_acc": result.test_acc,
               "best_val_acc": result.best_val_acc, "best_val_loss": result.best_val_loss,
               "best_epoch": result.best_epoch, "epochs_run": result.epochs_run,
               "params_active": result.params_active, "params_total": result.params_total})
    log.close()
    return result


class _RunLog:
    def __init__(self, path):
        self.fh = open(path, "w") if path else None

    def write(self, record: dict):
        if self.fh:
            self.fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


@dataclass
class SeedAggregate:
    acc_mean: float
    acc_std: float
    params_active_mean: float
    n_seeds: int
    results: list


def multi_seed_run(config: TrainConfig, dataset: GraphDataset, n_seeds,
                   log_path_for=None) -> SeedAggregate:
    """Run seeds base..base+n-1 (fresh split and init each) and aggregate.

    log_path_for(seed) -> path, when given, writes one run log per seed.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    results = []
    for i in range(n_seeds):
        cfg = replace(config, seed=config.seed + i)
        path = log_path_for(cfg.seed) if log_path_for else None
        results.append(run_training(cfg, dataset, log_path=path))
    accs = np.array([r.test_acc for r in results])
    actives = np.array([r.params_active for r in results], dtype=np.float64)
    return SeedAggregate(acc_mean=float(accs.mean()), acc_std=float(accs.std()),
                         params_active_mean=float(actives.mean()),
                         n_seeds=n_seeds, results=results)
