"""Truncated-BPTT training: loss, clipping, SGD with momentum, cosine schedule.

Hidden states are carried across windows within an epoch but detached from
the tape at every window boundary, and reset at epoch start.  Because each
pool matrix is a single trainable tensor whose view gradients scatter-add,
an aliased pool entry is updated exactly once per optimizer step with the
summed gradient.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import NumericError, ValidationError
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr0: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    clip_norm: float = 0.25
    epochs: int = 100
    batch_size: int = 80
    bptt_len: int = 35
    dropout: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("lr0", "momentum", "weight_decay", "clip_norm", "dropout"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")


def _step_ce_sum(logits, targets):
    """Summed -log softmax(logits)[target] over one step's batch columns."""
    z = logits.data
    vocab, batch = z.shape
    targets = np.asarray(targets)
    if targets.min() < 0 or targets.max() >= vocab:
        raise ValidationError(f"target id outside vocabulary of size {vocab}")
    m = z.max(axis=0)
    lse = m + np.log(np.exp(z - m).sum(axis=0))
    cols = np.arange(batch)
    total = (lse - z[targets, cols]).sum()

    def backprop(g):
        soft = np.exp(z - lse)
        soft[targets, cols] -= 1.0
        return (float(g) * soft,)

    return T.from_op(total, (logits,), backprop, "cross_entropy")


def cross_entropy_loss(step_logits, targets):
    """Mean cross entropy over all (timestep, batch) positions.

    step_logits: list of (vocab x batch) tensors; targets: (T, batch) ids.
    """
    if isinstance(step_logits, Tensor):
        step_logits = [step_logits]
    targets = np.atleast_2d(np.asarray(targets))
    total = None
    positions = 0
    for t, logits in enumerate(step_logits):
        part = _step_ce_sum(logits, targets[t])
        total = part if total is None else total + part
        positions += targets[t].size
    return (1.0 / positions) * total


def perplexity(mean_loss):
    if isinstance(mean_loss, Tensor):
        mean_loss = mean_loss.item()
    if not math.isfinite(mean_loss):
        raise NumericError("perplexity of non-finite loss")
    return math.exp(mean_loss)


def clip_gradients(params, max_norm):
    """Global-norm clipping over all trainable gradients; returns the factor."""
    grads = [p.grad for p in params if p.grad is not None]
    sq = 0.0
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("NaN/Inf gradient before clipping")
        sq += float((g * g).sum())
    norm = math.sqrt(sq)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for g in grads:
        g *= factor
    return factor


@dataclass
class OptimizerState:
    """One velocity buffer per trainable tensor, zero-initialized."""

    velocities: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params])


def sgd_step(params, opt, lr, cfg):
    """v <- mu*v + (grad + wd*param); param <- param - lr*v."""
    for p, v in zip(params, opt.velocities):
        if p.grad is None:
            continue
        g = p.grad + cfg.weight_decay * p.data
        v *= cfg.momentum
        v += g
        p.data -= lr * v


def cosine_lr(epoch, total_epochs, lr0):
    """Single half-cosine from lr0 down to 0, at epoch granularity."""
    if not 0 <= epoch <= total_epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def zero_grads(params):
    for p in params:
        p.grad = None


def _detach_states(states):
    return [s.detach() for s in states]


def train_epoch(model, batches, cfg, opt, lr, epoch=0):
    """One pass over the batches; states carried within the epoch, detached
    per window.  Returns epoch metrics; a numeric failure aborts with the
    partial metrics under 'aborted'."""
    params = model.parameters()
    rng = np.random.default_rng([cfg.seed, epoch, 0x5EED])
    states = model.init_state(batches[0].inputs.shape[1])
    loss_sum = 0.0
    positions = 0
    clipped = 0
    start = time.monotonic()
    for step, batch in enumerate(batches):
        states = _detach_states(states)
        try:
            logits, states = model.forward(batch.inputs, states, train=True, rng=rng)
            loss = cross_entropy_loss(logits, batch.targets)
            zero_grads(params)
            T.backward(loss)
            factor = clip_gradients(params, cfg.clip_norm)
            sgd_step(params, opt, lr, cfg)
        except NumericError as err:
            return _metrics(loss_sum, positions, clipped, step, start,
                            aborted=str(err))
        loss_sum += loss.item() * batch.targets.size
        positions += batch.targets.size
        clipped += factor < 1.0
    return _metrics(loss_sum, positions, clipped, len(batches), start)


def _metrics(loss_sum, positions, clipped, steps, start, aborted=None):
    loss = loss_sum / positions if positions else float("nan")
    out = {
        "loss": loss,
        "ppl": perplexity(loss) if positions else float("nan"),
        "clip_rate": clipped / steps if steps else 0.0,
        "seconds": time.monotonic() - start,
    }
    if aborted is not None:
        out["aborted"] = aborted
    return out


def evaluate(model, batches):
    """Mean loss and perplexity over all positions, no dropout, no tape."""
    with T.no_grad():
        states = model.init_state(batches[0].inputs.shape[1])
        loss_sum = 0.0
        positions = 0
        for batch in batches:
            states = _detach_states(states)
            logits, states = model.forward(batch.inputs, states, train=False)
            loss = cross_entropy_loss(logits, batch.targets)
            loss_sum += loss.item() * batch.targets.size
            positions += batch.targets.size
    loss = loss_sum / positions
    return {"loss": loss, "perplexity": perplexity(loss)}


def fit(model, train_batches, valid_batches, cfg, metrics_sink=None,
        checkpoint_path=None, log=None):
    """Full training driver: cosine schedule, per-epoch metrics record,
    best-validation checkpoint.  Returns the list of epoch records."""
    params = model.parameters()
    opt = OptimizerState.for_params(params)
    records = []
    best_valid = float("inf")
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        em = train_epoch(model, train_batches, cfg, opt, lr, epoch=epoch)
        if "aborted" in em:
            raise NumericError(f"epoch {epoch} aborted: {em['aborted']}")
        vm = evaluate(model, valid_batches) if valid_batches else {"loss": float("nan"),
                                                                   "perplexity": float("nan")}
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": em["loss"],
            "train_ppl": em["ppl"],
            "valid_loss": vm["loss"],
            "valid_ppl": vm["perplexity"],
            "clip_rate": em["clip_rate"],
            "seconds": em["seconds"],
        }
        records.append(record)
        if metrics_sink is not None:
            metrics_sink(record)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.4f}  train ppl {em['ppl']:.2f}  "
                f"valid ppl {vm['perplexity']:.2f}")
        if checkpoint_path is not None and vm["loss"] < best_valid:
            best_valid = vm["loss"]
            model.save(checkpoint_path)
    return records
