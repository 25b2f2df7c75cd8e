"""Mini-batch training loop with early stopping and best-state restore."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 0.001
    seed: int = 42

    def to_dict(self):
        return asdict(self)


class EarlyStopping:
    """Stop after ``patience`` epochs without an improvement larger than min_delta."""

    def __init__(self, patience=10, min_delta=0.001):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad = 0

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = self.epoch
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def to_dict(self):
        return asdict(self)


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def fit(model: ad.Module, step_loss, evaluate, n_train: int, config: TrainConfig,
        params=None) -> History:
    """Generic loop.

    ``step_loss(idx)`` builds the training loss for a batch of indices;
    ``evaluate()`` returns the validation loss as a float. The best
    validation state is restored into ``model`` before returning.
    """
    if n_train == 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    opt = ad.Adam(params if params is not None else model.parameters(), lr=config.lr)
    stopper = EarlyStopping(config.patience, config.min_delta)
    hist = History()
    best_state = {k: v.copy() for k, v in model.state().items()}
    for epoch in range(config.max_epochs):
        model.train()
        total, count = 0.0, 0
        for idx in batches(n_train, config.batch_size, rng):
            if len(idx) < 2:
                continue        # batch norm needs two samples
            opt.zero_grad()
            loss = step_loss(idx)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        model.eval()
        with ad.no_grad():
            val = float(evaluate())
        hist.train_loss.append(total / max(count, 1))
        hist.val_loss.append(val)
        stop = stopper.update(val)
        if stopper.best_epoch == stopper.epoch:
            best_state = {k: v.copy() for k, v in model.state().items()}
        if stop:
            break
    hist.best_epoch = stopper.best_epoch
    hist.stopped_epoch = stopper.epoch
    model.load_state(best_state)
    model.eval()
    return hist
