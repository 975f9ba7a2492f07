"""Class-specific losses on classifier logits: cross-entropy and ranking losses."""

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, ShapeError

RANK_KINDS = ("BM", "CT")


@dataclass(frozen=True)
class Hyperparams:
    """Loss hyperparameters; defaults are the reference configuration."""

    batch_size: int = 64
    mu: int = 7
    tau: float = 0.95
    margin: float = 0.5
    temperature: float = 0.2
    psi: float = 0.5
    phi: float = 0.3
    lambda_u: float = 1.0
    lambda_r: float = 1.0
    lambda_s: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", key="batch_size")
        if self.mu < 0:
            raise ConfigError("must be >= 0", key="mu")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"must lie in (0, 1], got {self.tau}", key="tau")
        if self.margin < 0:
            raise ConfigError("must be >= 0", key="margin")
        for name in ("temperature", "psi", "phi"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be > 0, got {getattr(self, name)}", key=name)
        for name in ("lambda_u", "lambda_r", "lambda_s"):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", key=name)

    @property
    def unlabeled_batch_size(self):
        return self.mu * self.batch_size

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class PseudoLabelResult:
    q_tilde: np.ndarray
    q_hat: np.ndarray
    mask: np.ndarray

    @property
    def mask_rate(self):
        return float(self.mask.mean()) if self.mask.size else 0.0


@dataclass
class NormalizedLogitsBatch:
    """Unit-norm logit rows together with one (true or pseudo) label per row."""

    vectors: ad.Node
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = ad.as_node(self.vectors)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.labels.size:
            raise ShapeError(f"{self.vectors.shape[0]} rows but {self.labels.size} labels")
        if self.labels.size:
            norms = np.sqrt((self.vectors.value ** 2).sum(axis=1))
            if np.abs(norms - 1.0).max() > 1e-9:
                raise ContractError("rows must have unit norm")

    def __len__(self):
        return self.labels.size

    @classmethod
    def from_logits(cls, logits, labels):
        logits = ad.as_node(logits)
        if logits.shape[0] == 0:
            return cls(logits, labels)
        return cls(ad.l2_normalize(logits), labels)


def _zero(reason):
    out = ad.Node(0.0)
    out.diagnostic = reason
    return out


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def supervised_ce(logits_x, labels):
    """Mean cross-entropy of softmax(logits) against one-hot targets."""
    logits_x = ad.as_node(logits_x)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits_x.shape:
        raise ShapeError(f"labels {labels.shape} vs logits {logits_x.shape}")
    valid = np.all((labels == 0) | (labels == 1), axis=1) & (labels.sum(axis=1) == 1)
    if not valid.all():
        raise ContractError(f"label row {int(np.flatnonzero(~valid)[0])} is not one-hot")
    n = logits_x.shape[0]
    if n == 0:
        return _zero("empty labeled batch")
    return -(ad.log_softmax(logits_x) * labels).sum() * (1.0 / n)


def pseudo_labels(logits_uw, tau):
    """Softmax the weak-view logits, take the argmax and the confidence mask.

    Operates on values only: nothing here is differentiated.
    """
    v = logits_uw.value if isinstance(logits_uw, ad.Node) else np.asarray(logits_uw, dtype=np.float64)
    q = ad.softmax(ad.Node(v)).value if v.shape[0] else np.zeros_like(v)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    q_hat = q.argmax(axis=1) if v.shape[0] else np.zeros(0, dtype=np.int64)
    return PseudoLabelResult(q_tilde=q, q_hat=q_hat, mask=q.max(axis=1, initial=0.0) >= tau)


def unlabeled_ce(logits_us, pl):
    """Masked cross-entropy of the strong view against detached pseudo-labels, over all rows."""
    logits_us = ad.as_node(logits_us)
    n = logits_us.shape[0]
    if pl.q_tilde.shape != logits_us.shape:
        raise ShapeError(f"pseudo-labels {pl.q_tilde.shape} vs logits {logits_us.shape}")
    if n == 0:
        return _zero("empty unlabeled batch")
    if not pl.mask.any():
        return ad.Node(0.0)
    targets = one_hot(pl.q_hat, logits_us.shape[1]) * pl.mask[:, None]
    return -(ad.log_softmax(logits_us) * targets).sum() * (1.0 / n)


def combined_ce(l_x, l_u, lambda_u):
    return ad.as_node(l_x) + lambda_u * ad.as_node(l_u)


def batchmean_triplet(batch, margin):
    """BatchMean triplet loss with a softplus hinge.

    Both the positive and the negative distance sums are divided by the full
    batch size. The anchor counts as its own positive (distance 0).
    """
    n = len(batch)
    if n == 0:
        return _zero("empty batch")
    d = ad.pairwise_distances(batch.vectors)
    same = batch.labels[:, None] == batch.labels[None, :]
    pos = (d * same.astype(np.float64)).sum(axis=1) * (1.0 / n)
    neg = (d * (~same).astype(np.float64)).sum(axis=1) * (1.0 / n)
    return ad.softplus(margin + pos - neg).mean()


def contrastive_rank(batch, temperature):
    """Temperature-scaled contrastive loss averaged over ordered same-label pairs.

    For a pair (a, p) the term is ``-log(e^{s_ap/T} / (e^{s_ap/T} + sum_n e^{s_an/T}))``
    = ``softplus(LSE_n(s_an/T) - s_ap/T)``; pairs without negatives contribute 0.
    """
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}", key="temperature")
    n = len(batch)
    same = batch.labels[:, None] == batch.labels[None, :]
    pos_pairs = same & ~np.eye(n, dtype=bool)
    n_pairs = int(pos_pairs.sum())
    if n_pairs == 0:
        return _zero("no anchor-positive pairs")
    v = batch.vectors
    scaled = (v @ v.T) * (1.0 / temperature)
    neg = ~same
    lse_neg = ad.masked_logsumexp(scaled, neg)
    weights = (pos_pairs & neg.any(axis=1)[:, None]).astype(np.float64)
    if not weights.any():
        return ad.Node(0.0)
    terms = ad.softplus(lse_neg.reshape(n, 1) - scaled)
    return (terms * weights).sum() * (1.0 / n_pairs)


def ranking_loss(kind, labeled, unlabeled, hp):
    """Sum of the labeled and unlabeled terms of the chosen ranking loss."""
    if kind == "BM":
        return batchmean_triplet(labeled, hp.margin) + batchmean_triplet(unlabeled, hp.margin)
    if kind == "CT":
        return (contrastive_rank(labeled, hp.temperature)
                + contrastive_rank(unlabeled, hp.temperature))
    raise ConfigError(f"unknown ranking loss {kind!r}; expected one of {RANK_KINDS}", key="rank_loss")
