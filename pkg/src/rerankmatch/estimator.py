"""scikit-learn compatible semi-supervised classifier.

Unlabeled samples are marked with ``y == -1`` as in
:mod:`sklearn.semi_supervised`. ``X`` may be ``[n x d]`` feature vectors or
``[n x h x w]`` grayscale images; images get the pad/crop/flip augmentation
path while the network always sees flattened inputs.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .augment import default_policies
from .errors import ConfigError
from .losses import RANK_KINDS, Hyperparams
from .model import ModelParams, forward
from .trainer import OBJECTIVES, fit_loop

UNLABELED = -1


class ReRankMatchClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """MLP trained with cross-entropy, a ranking loss on normalized logits and a
    feature contrastive loss driven by similarity-to-reference descriptors.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        ReLU layers of the feature extractor, before the representation layer.
    representation_dim : int
        Width of the (linear) representation layer feeding the head.
    ranking_loss : {"CT", "BM"}
        Contrastive or BatchMean-triplet ranking loss.
    objective : {"rerankmatch", "rankingmatch", "supervised"}
        Full objective, objective without the feature contrastive part, or
        labeled cross-entropy only.
    batch_size, mu, tau, margin, temperature, psi, phi, lambda_u, lambda_r, lambda_s
        Loss hyperparameters, see :class:`~rerankmatch.losses.Hyperparams`.
    learning_rate, momentum, weight_decay
        SGD settings; the learning rate follows a cosine decay.
    epochs : int
        One epoch is ``ceil(n_unlabeled / (mu * batch_size))`` steps.
    max_steps : int or None
        Overrides ``epochs`` when set.
    shift_max, flip_prob, noise_scale, jitter_scale, cutout_frac
        Augmentation knobs; ``noise_scale`` is relative to the feature std.
    random_state : int or None
    """

    def __init__(self, hidden_layer_sizes=(32, 32), representation_dim=16,
                 ranking_loss="CT", objective="rerankmatch",
                 batch_size=64, mu=7, tau=0.95, margin=0.5, temperature=0.2,
                 psi=0.5, phi=0.3, lambda_u=1.0, lambda_r=1.0, lambda_s=1.0,
                 learning_rate=0.03, momentum=0.9, weight_decay=5e-4,
                 epochs=256, max_steps=None,
                 shift_max=2, flip_prob=0.5, noise_scale=0.05,
                 jitter_scale=0.3, cutout_frac=0.25,
                 random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.representation_dim = representation_dim
        self.ranking_loss = ranking_loss
        self.objective = objective
        self.batch_size = batch_size
        self.mu = mu
        self.tau = tau
        self.margin = margin
        self.temperature = temperature
        self.psi = psi
        self.phi = phi
        self.lambda_u = lambda_u
        self.lambda_r = lambda_r
        self.lambda_s = lambda_s
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.max_steps = max_steps
        self.shift_max = shift_max
        self.flip_prob = flip_prob
        self.noise_scale = noise_scale
        self.jitter_scale = jitter_scale
        self.cutout_frac = cutout_frac
        self.random_state = random_state

    def _hyperparams(self):
        return Hyperparams(batch_size=self.batch_size, mu=self.mu, tau=self.tau,
                           margin=self.margin, temperature=self.temperature,
                           psi=self.psi, phi=self.phi, lambda_u=self.lambda_u,
                           lambda_r=self.lambda_r, lambda_s=self.lambda_s)

    def _seed(self):
        if self.random_state is None:
            return int(np.random.SeedSequence().entropy % (2 ** 32))
        return int(self.random_state)

    def fit(self, X, y, eval_set=None, on_step=None):
        """Fit on labeled (``y >= 0``) and unlabeled (``y == -1``) samples.

        ``eval_set=(X_test, y_test)`` records the test error after every
        epoch in ``eval_errors_``.
        """
        if self.ranking_loss not in RANK_KINDS:
            raise ConfigError(f"unknown ranking loss {self.ranking_loss!r}", key="ranking_loss")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}", key="objective")
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64, y_numeric=True)
        if X.ndim not in (2, 3):
            raise ValueError(f"X must be [n x d] or [n x h x w], got shape {X.shape}")
        y = y.astype(np.int64)
        labeled = y != UNLABELED
        if not labeled.any():
            raise ValueError("at least one labeled sample (y != -1) is required")

        self.classes_ = np.unique(y[labeled])
        self.sample_shape_ = X.shape[1:]
        self.n_features_in_ = int(np.prod(self.sample_shape_))
        y_idx = np.searchsorted(self.classes_, y[labeled])
        x_l, x_u = X[labeled], X[~labeled]

        self.hyperparams_ = self._hyperparams()
        self.weak_policy_, self.strong_policy_ = default_policies(
            X, shift_max=self.shift_max, flip_prob=self.flip_prob,
            noise_scale=self.noise_scale, jitter_scale=self.jitter_scale,
            cutout_frac=self.cutout_frac)
        dims = (self.n_features_in_, *self.hidden_layer_sizes,
                self.representation_dim, len(self.classes_))

        self.eval_errors_ = []
        on_epoch = None
        if eval_set is not None:
            x_eval, y_eval = eval_set

            def on_epoch(epoch, params):
                self.params_ = params
                self.eval_errors_.append(1.0 - self.score(x_eval, y_eval))

        self.params_, self.history_ = fit_loop(
            x_l, y_idx, x_u, self.hyperparams_, dims,
            weak=self.weak_policy_, strong=self.strong_policy_,
            seed=self._seed(), n_steps=self.max_steps, epochs=self.epochs,
            objective=self.objective, rank_kind=self.ranking_loss,
            lr0=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, on_step=on_step, on_epoch=on_epoch)
        return self

    @classmethod
    def from_params(cls, params: ModelParams, classes, sample_shape=None, **kwargs):
        """Wrap trained parameters (e.g. a loaded checkpoint) in a fitted estimator."""
        est = cls(**kwargs)
        est.params_ = params
        est.classes_ = np.asarray(classes)
        est.sample_shape_ = tuple(sample_shape) if sample_shape is not None else (params.dims[0],)
        est.n_features_in_ = params.dims[0]
        est.history_ = []
        if len(est.classes_) != params.n_classes:
            raise ConfigError(f"{len(est.classes_)} classes for a head of width {params.n_classes}")
        return est

    def _flat(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        X = X.reshape(X.shape[0], -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def decision_function(self, X):
        X = self._flat(X)
        return forward(self.params_, X).logits.value

    def predict_proba(self, X):
        return ad.softmax(ad.Node(self.decision_function(X))).value

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X):
        """L2-normalized logits, the space the ranking losses act on."""
        return ad.l2_normalize(ad.Node(self.decision_function(X))).value

    def representation(self, X):
        X = self._flat(X)
        return forward(self.params_, X).representation.value
