"""Similarity-representation pipeline over feature-extractor outputs.

1. pick one labeled representation per class present in the batch (references);
2. describe every unlabeled representation by its cosine similarities to them;
3. call two unlabeled samples a positive pair when those descriptions are
   closer than ``psi``;
4. pull positive pairs together and push negative pairs ``phi`` apart.

Nothing here reads the true class of an unlabeled sample, so the labeled and
unlabeled class sets need not overlap.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .errors import ConfigError, ShapeError


@dataclass
class ReferenceSet:
    reps: ad.Node
    class_ids: np.ndarray

    def __len__(self):
        return self.class_ids.size


@dataclass
class SimilarityRep:
    scores: ad.Node
    class_ids: np.ndarray


@dataclass
class PairLabelMatrix:
    t: np.ndarray

    @property
    def positive_rate(self):
        """Fraction of unordered pairs i < j labelled positive."""
        n = self.t.shape[0]
        if n < 2:
            return 0.0
        iu = np.triu_indices(n, k=1)
        return float(self.t[iu].mean())


def sample_references(reps_x, labels, rng, detach=True):
    """One uniformly drawn labeled representation per unique label, classes ascending."""
    reps_x = ad.as_node(reps_x)
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ConfigError("need at least one labeled sample to draw references")
    if reps_x.shape[0] != labels.size:
        raise ShapeError(f"{reps_x.shape[0]} representations but {labels.size} labels")
    class_ids = np.unique(labels)
    rows = np.array([rng.choice(np.flatnonzero(labels == c)) for c in class_ids])
    picked = reps_x[rows]
    return ReferenceSet(picked.detach() if detach else picked, class_ids)


def similarity_representation(reps_u, refs):
    """Cosine similarity of every unlabeled row to every reference ([n x K])."""
    reps_u = ad.as_node(reps_u)
    if reps_u.shape[0] == 0:
        return SimilarityRep(ad.Node(np.zeros((0, len(refs)))), refs.class_ids)
    scores = ad.l2_normalize(reps_u) @ ad.l2_normalize(refs.reps).T
    return SimilarityRep(scores, refs.class_ids)


def assign_pair_labels(s, psi):
    """``t[i, j] = ||s_i - s_j|| < psi`` on values only (no gradient)."""
    if not psi > 0:
        raise ConfigError(f"psi must be > 0, got {psi}", key="psi")
    v = s.scores.value if isinstance(s, SimilarityRep) else np.asarray(s, dtype=np.float64)
    return PairLabelMatrix(cdist(v, v) < psi if v.shape[0] else np.zeros((0, 0), bool))


def feature_contrastive_pair(f_i, f_j, t, phi):
    d = ad.norm(ad.as_node(f_i) - ad.as_node(f_j))
    return d if t else ad.relu(phi - d)


def _stream_loss(reps, t, phi):
    n = reps.shape[0]
    d = ad.pairwise_distances(reps)
    tf = t.astype(np.float64)
    terms = d * tf + ad.relu(phi - d) * (1.0 - tf)
    upper = np.triu(np.ones((n, n)), k=1)
    return (terms * upper).sum() * (1.0 / (n * (n - 1) / 2))


def feature_contrastive_batch(reps_uw, reps_us, t_w, t_s, phi):
    """Mean pair loss over unordered pairs, weak stream plus strong stream."""
    reps_uw, reps_us = ad.as_node(reps_uw), ad.as_node(reps_us)
    if reps_uw.shape != reps_us.shape:
        raise ShapeError(f"weak {reps_uw.shape} vs strong {reps_us.shape}")
    n = reps_uw.shape[0]
    if n < 2:
        out = ad.Node(0.0)
        out.diagnostic = "fewer than two unlabeled samples"
        return out
    tw = t_w.t if isinstance(t_w, PairLabelMatrix) else np.asarray(t_w, bool)
    ts = t_s.t if isinstance(t_s, PairLabelMatrix) else np.asarray(t_s, bool)
    return _stream_loss(reps_uw, tw, phi) + _stream_loss(reps_us, ts, phi)


class SemanticTerms(NamedTuple):
    loss: ad.Node
    refs: ReferenceSet
    sim_w: SimilarityRep
    sim_s: SimilarityRep
    t_w: PairLabelMatrix
    t_s: PairLabelMatrix

    @property
    def pair_positive_rate(self):
        n = self.t_w.t.shape[0]
        if n < 2:
            return 0.0
        return 0.5 * (self.t_w.positive_rate + self.t_s.positive_rate)


def semantic_terms(reps_x, labels_x, reps_uw, reps_us, hp, rng):
    refs = sample_references(reps_x, labels_x, rng)
    sim_w = similarity_representation(reps_uw, refs)
    sim_s = similarity_representation(reps_us, refs)
    t_w = assign_pair_labels(sim_w, hp.psi)
    t_s = assign_pair_labels(sim_s, hp.psi)
    loss = feature_contrastive_batch(reps_uw, reps_us, t_w, t_s, hp.phi)
    return SemanticTerms(loss, refs, sim_w, sim_s, t_w, t_s)


def semantic_loss(reps_x, labels_x, reps_uw, reps_us, hp, rng):
    return semantic_terms(reps_x, labels_x, reps_uw, reps_us, hp, rng).loss
