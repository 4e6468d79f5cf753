"""scikit-learn style front end: ``RIGNetSegmenter().fit(X, y).predict(X)``."""
from __future__ import annotations

from typing import List, Optional, Union

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .backbone import PRESETS, BackboneSpec
from .metrics import ConfusionMatrix
from .ops import IGNORE_LABEL
from .trainer import TrainConfig, evaluate, predict_logits, train
from .unroll import NetworkSpec, effective_depth, init_network, named_parameters, parse_variant
from .validation import check_images, check_labels, infer_num_classes


class RIGNetSegmenter(BaseEstimator):
    """Per-pixel classifier built on a recurrently gated backbone.

    Parameters
    ----------
    variant : str
        Unroll variant, e.g. ``"FF"``, ``"Pu<6..4>x2"``, ``"Su<6..4>x3"``.
    backbone : {"desk8", "desk32"} or BackboneSpec
        Preset name or an explicit backbone; a spec's class count must
        agree with the labels.
    num_classes : int, optional
        Inferred from the labels when omitted.
    interaction, pooling : str
        Gate configuration (``mul_sigmoid|mul_tanh|add_relu``,
        ``none|max|avg``).
    base_lr, momentum, weight_decay, epochs, batch_size, poly_power, flip_prob
        Optimizer and schedule settings, see :class:`rignet.trainer.TrainConfig`.
    loss_all_iterations : bool
        Average the loss over every iteration instead of the final one.
    random_state : int
        Seeds initialization, shuffling and flips.
    """

    def __init__(
        self,
        variant: str = "Pu<6..4>x2",
        backbone: Union[str, BackboneSpec] = "desk8",
        num_classes: Optional[int] = None,
        interaction: str = "mul_sigmoid",
        pooling: str = "avg",
        base_lr: float = 0.01,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        epochs: int = 30,
        batch_size: int = 8,
        poly_power: float = 0.9,
        flip_prob: float = 0.5,
        loss_all_iterations: bool = False,
        ignore_label: int = IGNORE_LABEL,
        random_state: int = 0,
    ):
        self.variant = variant
        self.backbone = backbone
        self.num_classes = num_classes
        self.interaction = interaction
        self.pooling = pooling
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.poly_power = poly_power
        self.flip_prob = flip_prob
        self.loss_all_iterations = loss_all_iterations
        self.ignore_label = ignore_label
        self.random_state = random_state

    # -- construction ---------------------------------------------------

    def _backbone_spec(self, num_classes: Optional[int]) -> BackboneSpec:
        if isinstance(self.backbone, BackboneSpec):
            if num_classes is not None and num_classes != self.backbone.num_classes:
                raise ValueError(
                    f"backbone is built for {self.backbone.num_classes} classes, got {num_classes}"
                )
            return self.backbone
        if self.backbone not in PRESETS:
            raise ValueError(f"unknown backbone preset {self.backbone!r}; expected one of {sorted(PRESETS)}")
        return PRESETS[self.backbone](num_classes or 2)

    def network_spec(self, num_classes: Optional[int] = None) -> NetworkSpec:
        k = num_classes if num_classes is not None else self.num_classes
        return NetworkSpec(
            self._backbone_spec(k),
            parse_variant(self.variant),
            self.interaction,
            self.pooling,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            base_lr=self.base_lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            poly_power=self.poly_power,
            seed=self.random_state,
            flip_prob=self.flip_prob,
            loss_all_iterations=self.loss_all_iterations,
            ignore_label=self.ignore_label,
        )

    def initialize(self, num_classes: Optional[int] = None) -> "RIGNetSegmenter":
        """Set up freshly initialized weights without training."""
        spec = self.network_spec(num_classes)
        self.spec_ = spec
        self.params_, self.gates_ = init_network(spec, self.random_state)
        self.n_classes_ = spec.backbone.num_classes
        self.classes_ = np.arange(self.n_classes_)
        self.train_log_ = []
        return self

    # -- fitting --------------------------------------------------------

    def fit(self, X, y, callback=None) -> "RIGNetSegmenter":
        X = check_images(X)
        y = check_labels(y, X, self.num_classes, self.ignore_label)
        k = self.num_classes
        if k is None:
            k = (
                self.backbone.num_classes
                if isinstance(self.backbone, BackboneSpec)
                else infer_num_classes(y, self.ignore_label)
            )
        self.initialize(k)
        if X.shape[1] != self.spec_.backbone.in_channels:
            raise ValueError(
                f"backbone expects {self.spec_.backbone.in_channels} channels, images have {X.shape[1]}"
            )
        check_labels(y, X, self.n_classes_, self.ignore_label)
        result = train(self.spec_, X, y, self.train_config(), self.params_, self.gates_, callback)
        self.train_log_ = result.log
        return self

    # -- inference ------------------------------------------------------

    def _checked(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return check_images(X, self.spec_.backbone.in_channels)

    def decision_function(self, X) -> np.ndarray:
        """Final-iteration logits, shape (n, K, h, w)."""
        X = self._checked(X)
        return predict_logits(self.spec_, self.params_, self.gates_, X, self.batch_size)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    def predict_iterations(self, X) -> List[np.ndarray]:
        """Label maps from every iteration's head output (one entry unless parallel)."""
        X = self._checked(X)
        logits = predict_logits(self.spec_, self.params_, self.gates_, X, self.batch_size, all_iterations=True)
        return [lg.argmax(axis=1) for lg in logits]

    def confusion(self, X, y) -> ConfusionMatrix:
        X = self._checked(X)
        y = check_labels(y, X, self.n_classes_, self.ignore_label)
        return evaluate(self.spec_, self.params_, self.gates_, X, y, self.batch_size, self.ignore_label)

    def score(self, X, y) -> float:
        """Mean IoU on ``(X, y)``."""
        return self.confusion(X, y).scores().miou

    # -- persistence ----------------------------------------------------

    def named_parameters(self):
        check_is_fitted(self, "params_")
        return named_parameters(self.params_, self.gates_)

    def save_weights(self, path) -> None:
        checkpoint.save_checkpoint(self.named_parameters(), path)

    def load_weights(self, path, num_classes: Optional[int] = None) -> "RIGNetSegmenter":
        if not hasattr(self, "params_"):
            self.initialize(num_classes)
        checkpoint.assign(self.named_parameters(), checkpoint.load_checkpoint(path))
        return self

    def depth_report(self, num_classes: Optional[int] = None):
        return effective_depth(self.network_spec(num_classes or self.num_classes))
