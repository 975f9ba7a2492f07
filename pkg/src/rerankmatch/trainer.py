"""Objective assembly, SGD with momentum, cosine decay and the training loop."""

import math
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .augment import augment_batch
from .errors import ConfigError, NonFiniteGradientError
from .losses import (NormalizedLogitsBatch, combined_ce, one_hot, pseudo_labels,
                     ranking_loss, supervised_ce, unlabeled_ce)
from .model import forward, init_params
from .semantic import semantic_terms

OBJECTIVES = ("rerankmatch", "rankingmatch", "supervised")
CSV_HEADER = ("step", "lr", "ce_x", "ce_u", "rank", "featcont", "total",
              "mask_rate", "pair_pos_rate")

# independent generator streams; keeping them apart lets reduced objectives
# replay exactly the same labeled batches as the full one
STREAMS = ("init", "labeled_batches", "labeled_augment",
           "unlabeled_batches", "unlabeled_augment", "references")


@dataclass
class OptimizerState:
    velocity: list
    momentum: float = 0.9
    lr0: float = 0.03
    weight_decay: float = 5e-4
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}", key="momentum")
        if self.lr0 <= 0:
            raise ConfigError("learning rate must be > 0", key="lr")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be >= 0", key="weight_decay")

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls([np.zeros_like(n.value) for n in params.nodes()], **kwargs)


@dataclass
class StepRecord:
    step: int
    lr: float
    ce_x: float
    ce_u: float
    rank: float
    featcont: float
    total: float
    mask_rate: float
    pair_pos_rate: float

    def as_row(self):
        return [str(self.step)] + [repr(float(v)) for v in astuple(self)[1:]]


@dataclass
class Batches:
    """One step's inputs, already augmented and flattened to [n x d_in]."""

    x: np.ndarray
    y: np.ndarray
    x_uw: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    x_us: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def total_loss(ce, rank, featcont, hp):
    return ad.as_node(ce) + hp.lambda_r * ad.as_node(rank) + hp.lambda_s * ad.as_node(featcont)


def cosine_lr(k, total_steps, eta0):
    """``eta0 * cos(7 pi k / (16 K))``."""
    if total_steps <= 0:
        raise ConfigError("total steps must be > 0")
    if not 0 <= k <= total_steps:
        raise ConfigError(f"step {k} outside [0, {total_steps}]")
    return eta0 * math.cos(7.0 * math.pi * k / (16.0 * total_steps))


def sgd_momentum_step(params, grads, state, eta):
    """``v <- beta v + g + wd theta``; ``theta <- theta - eta v``.

    Every gradient is checked before anything is modified, so a rejected step
    leaves parameters and velocities untouched.
    """
    named = list(params.named_nodes())
    if len(grads) != len(named):
        raise ConfigError(f"{len(grads)} gradients for {len(named)} parameters")
    grads = [np.zeros_like(node.value) if g is None else g for (_, node), g in zip(named, grads)]
    for (name, node), g in zip(named, grads):
        if g.shape != node.shape:
            raise ConfigError(f"gradient shape {g.shape} for {name} of shape {node.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    for i, ((_, node), g) in enumerate(zip(named, grads)):
        v = state.momentum * state.velocity[i] + g + state.weight_decay * node.value
        state.velocity[i] = v
        node.value = node.value - eta * v
    state.step += 1
    return params, state


def _apply_update(params, state, lr):
    nodes = params.nodes()
    grads = [n.grad for n in nodes]
    ad.zero_grad(nodes)
    sgd_momentum_step(params, grads, state, lr)


def supervised_step(params, batches, hp, state, lr):
    """Labeled cross-entropy only; the reference point for reduction checks."""
    out = forward(params, batches.x)
    ce_x = supervised_ce(out.logits, one_hot(batches.y, params.n_classes))
    ad.backward(ce_x)
    record = StepRecord(state.step, lr, ce_x.item(), 0.0, 0.0, 0.0, ce_x.item(), 0.0, 0.0)
    _apply_update(params, state, lr)
    return record


def train_step(params, batches, hp, rng, state, lr, rank_kind="CT", objective="rerankmatch"):
    """One forward per view, the full objective, one backward, one SGD update."""
    if objective == "supervised":
        return supervised_step(params, batches, hp, state, lr)
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}", key="objective")

    out_x = forward(params, batches.x)
    ce_x = supervised_ce(out_x.logits, one_hot(batches.y, params.n_classes))
    labeled = NormalizedLogitsBatch.from_logits(out_x.logits, batches.y)

    has_unlabeled = batches.x_uw.shape[0] > 0
    if has_unlabeled:
        out_w = forward(params, batches.x_uw)
        out_s = forward(params, batches.x_us)
        pl = pseudo_labels(out_w.logits, hp.tau)
        ce_u = unlabeled_ce(out_s.logits, pl)
        keep = np.flatnonzero(pl.mask)
        unlabeled = NormalizedLogitsBatch.from_logits(out_s.logits[keep], pl.q_hat[keep])
        mask_rate = pl.mask_rate
    else:
        ce_u = ad.Node(0.0)
        unlabeled = NormalizedLogitsBatch(np.zeros((0, params.n_classes)), [])
        mask_rate = 0.0

    ce = combined_ce(ce_x, ce_u, hp.lambda_u)
    rank = ranking_loss(rank_kind, labeled, unlabeled, hp)

    if objective == "rerankmatch" and has_unlabeled:
        sem = semantic_terms(out_x.representation, batches.y,
                             out_w.representation, out_s.representation, hp, rng)
        featcont, pair_rate = sem.loss, sem.pair_positive_rate
    else:
        featcont, pair_rate = ad.Node(0.0), 0.0

    total = total_loss(ce, rank, featcont, hp)
    ad.backward(total)
    record = StepRecord(state.step, lr, ce_x.item(), ce_u.item(), rank.item(),
                        featcont.item(), total.item(), mask_rate, pair_rate)
    _apply_update(params, state, lr)
    return record


def predict_logits(params, x):
    return forward(params, np.asarray(x, dtype=np.float64)).logits.value


def evaluate(params, x, y):
    """Fraction of samples whose argmax logit differs from the label."""
    y = np.asarray(y).reshape(-1)
    if y.size == 0:
        raise ConfigError("cannot evaluate on an empty test set")
    pred = predict_logits(params, x).argmax(axis=1)
    return float(np.mean(pred != y))


class BatchSampler:
    """Endless fixed-size index batches.

    Cycles through reshuffled permutations when the pool holds at least one
    batch, otherwise draws with replacement.
    """

    def __init__(self, n, batch_size, rng):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._buffer = np.zeros(0, dtype=np.int64)

    def next(self):
        if self.n < self.batch_size:
            return self.rng.integers(0, self.n, size=self.batch_size)
        while self._buffer.size < self.batch_size:
            self._buffer = np.concatenate([self._buffer, self.rng.permutation(self.n)])
        out, self._buffer = self._buffer[:self.batch_size], self._buffer[self.batch_size:]
        return out


def make_streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def steps_per_epoch(n_labeled, n_unlabeled, hp):
    """``ceil(|U| / (mu B))``; falls back to the labeled pool when there is no unlabeled data."""
    if n_unlabeled > 0 and hp.unlabeled_batch_size > 0:
        return math.ceil(n_unlabeled / hp.unlabeled_batch_size)
    return max(1, math.ceil(n_labeled / hp.batch_size))


def fit_loop(x_l, y_l, x_u, hp, dims, *, weak, strong, seed=0, n_steps=None, epochs=1,
             objective="rerankmatch", rank_kind="CT", lr0=0.03, momentum=0.9,
             weight_decay=5e-4, params=None, on_step=None, on_epoch=None):
    """Train from scratch (or from ``params``) and return ``(params, records)``.

    ``x_l``/``x_u`` keep their natural sample shape (vectors or images) so that
    augmentation sees images; the model sees them flattened.
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}", key="objective")
    x_l = np.asarray(x_l, dtype=np.float64)
    y_l = np.asarray(y_l, dtype=np.int64)
    x_u = np.asarray(x_u, dtype=np.float64) if x_u is not None else x_l[:0]
    if x_l.shape[0] == 0:
        raise ConfigError("need at least one labeled sample")
    streams = make_streams(seed)
    if params is None:
        params = init_params(streams["init"], dims)
    state = OptimizerState.for_params(params, momentum=momentum, lr0=lr0,
                                      weight_decay=weight_decay)

    per_epoch = steps_per_epoch(len(x_l), len(x_u), hp)
    total_steps = n_steps if n_steps is not None else per_epoch * epochs
    if total_steps <= 0:
        raise ConfigError("training needs at least one step")

    lab_sampler = BatchSampler(len(x_l), hp.batch_size, streams["labeled_batches"])
    use_unlabeled = objective != "supervised" and len(x_u) > 0 and hp.mu > 0
    if use_unlabeled:
        unl_sampler = BatchSampler(len(x_u), hp.unlabeled_batch_size, streams["unlabeled_batches"])

    def flat(a):
        return a.reshape(a.shape[0], -1)

    records = []
    for k in range(total_steps):
        lr = cosine_lr(k, total_steps, lr0)
        idx = lab_sampler.next()
        xb = flat(augment_batch(x_l[idx], streams["labeled_augment"], weak))
        batches = Batches(xb, y_l[idx])
        if use_unlabeled:
            raw = x_u[unl_sampler.next()]
            batches.x_uw = flat(augment_batch(raw, streams["unlabeled_augment"], weak))
            batches.x_us = flat(augment_batch(raw, streams["unlabeled_augment"], strong))
        rec = train_step(params, batches, hp, streams["references"], state, lr,
                         rank_kind=rank_kind, objective=objective)
        records.append(rec)
        if on_step is not None:
            on_step(rec)
        if on_epoch is not None and ((k + 1) % per_epoch == 0 or k + 1 == total_steps):
            on_epoch(math.ceil((k + 1) / per_epoch), params)
    return params, records


def record_fields():
    return [f.name for f in fields(StepRecord)]
