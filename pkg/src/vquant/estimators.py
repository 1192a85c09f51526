"""scikit-learn compatible estimators over the codec, trainer and PTQ pipeline.

``random_state`` on these estimators is an integer seed for the toolkit's own
SplitMix64 stream (not a ``numpy.random.RandomState``), so results are
reproducible bit for bit.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .codec import QuantConfig, dequantize, quant_error, quantize
from .network import MlpNetwork, logits
from .ptq import InferenceQuantConfig, finetune, quantize_model
from .training import AnnealSchedule, TrainConfig, train


class ValueAwareQuantizer(TransformerMixin, BaseEstimator):
    """Quantize-dequantize transformer.

    ``transform`` profiles each input afresh: the top ``large_ratio`` fraction
    of elements by magnitude pass through exactly and the rest snap to a
    ``bits``-bit uniform grid over their own range.  ``fit`` records the
    calibration of the training tensor for inspection.

    Parameters
    ----------
    bits : int, default=3
        Bit width of the low-precision codes (1..8).
    large_ratio : float, default=0.01
        Fraction of elements kept at outlier precision.
    mode : {"vquant", "rvquant"}, default="vquant"
    range_policy : {"symmetric", "asymmetric", "nonnegative"}, default="symmetric"
    outlier_precision : {32, 16}, default=32

    Attributes
    ----------
    threshold_ : float
        Smallest outlier magnitude in the fitted tensor (``inf`` if none).
    qmin_, qmax_, step_ : float
        Small-value range and grid spacing of the fitted tensor.
    n_outliers_ : int
    error_ : dict
        ``quant_error`` of the fitted tensor.
    """

    def __init__(self, bits=3, large_ratio=0.01, mode="vquant", range_policy="symmetric", outlier_precision=32):
        self.bits = bits
        self.large_ratio = large_ratio
        self.mode = mode
        self.range_policy = range_policy
        self.outlier_precision = outlier_precision

    def _config(self):
        return QuantConfig(self.bits, self.large_ratio, self.mode, self.range_policy, self.outlier_precision)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32, ensure_2d=False)
        q = quantize(X, self._config())
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        self.qmin_, self.qmax_, self.step_ = q.qmin, q.qmax, q.step
        self.n_outliers_ = len(q.outliers)
        self.threshold_ = float(np.abs(q.outliers.values.astype(np.float32)).min()) if len(q.outliers) else np.inf
        self.error_ = quant_error(X, q)
        return self

    def encode(self, X):
        """Return the :class:`~vquant.codec.QuantizedTensor` for ``X``."""
        check_is_fitted(self, "step_")
        return quantize(check_array(X, dtype=np.float32, ensure_2d=False), self._config())

    def transform(self, X):
        return dequantize(self.encode(X))


class QuantizedMLPClassifier(ClassifierMixin, BaseEstimator):
    """ReLU MLP trained with quantized activation storage.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(64, 64)
    schedule : str, default="F"
        Comma-separated phases split evenly over ``epochs``; ``"F"`` is full
        precision and ``"3:2"`` stores activations at 3 bits with 2% outliers
        (rvquant).  ``"F,3:2,2:0"`` anneals from float to 2 bits.
    learning_rate : float, default=0.1
    lr_decay : float, default=1.0
        Learning-rate multiplier applied at each phase boundary.
    batch_size : int, default=32
    epochs : int, default=20
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray
    network_ : MlpNetwork
    report_ : ExperimentReport
    """

    def __init__(self, hidden_layer_sizes=(64, 64), schedule="F", learning_rate=0.1, lr_decay=1.0,
                 batch_size=32, epochs=20, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.schedule = schedule
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        sizes = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        seed = int(self.random_state)
        config = TrainConfig(
            self.learning_rate,
            self.batch_size,
            self.epochs,
            seed,
            AnnealSchedule.parse(self.schedule, self.epochs),
            self.lr_decay,
        )
        if eval_set is not None:
            Xe, ye = eval_set
            eval_set = (check_array(Xe, dtype=np.float32), np.searchsorted(self.classes_, ye))
        self.network_, self.report_ = train(MlpNetwork.init(sizes, seed), X, y_idx, config, eval_set)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        return logits(self.network_, check_array(X, dtype=np.float32))

    def predict_proba(self, X):
        z = self.decision_function(X).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class PTQClassifier(ClassifierMixin, BaseEstimator):
    """Post-training quantized view of a trained network, with fine-tuning.

    ``fit`` fine-tunes a copy of the float weights for ``finetune_epochs``
    through the quantized forward pass; prediction always runs quantized.

    Parameters
    ----------
    base : QuantizedMLPClassifier or MlpNetwork
        Trained float model.
    weight_bits, act_bits : int, default=4
        32 disables the corresponding quantizer.
    weight_ratio, act_ratio : float, default=0.01
    outlier_precision : {16, 32}, default=16
    finetune_epochs : int, default=1
    learning_rate : float, default=0.01
    batch_size : int, default=32
    random_state : int, default=0
    """

    def __init__(self, base=None, weight_bits=4, act_bits=4, weight_ratio=0.01, act_ratio=0.01,
                 outlier_precision=16, finetune_epochs=1, learning_rate=0.01, batch_size=32, random_state=0):
        self.base = base
        self.weight_bits = weight_bits
        self.act_bits = act_bits
        self.weight_ratio = weight_ratio
        self.act_ratio = act_ratio
        self.outlier_precision = outlier_precision
        self.finetune_epochs = finetune_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def _base_network(self):
        if isinstance(self.base, MlpNetwork):
            return self.base, None
        check_is_fitted(self.base, "network_")
        return self.base.network_, self.base.classes_

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float32)
        net, classes = self._base_network()
        self.classes_ = classes if classes is not None else np.arange(net.weights[-1].shape[0])
        self.n_features_in_ = X.shape[1]
        self.config_ = InferenceQuantConfig(
            self.weight_bits, self.act_bits, self.weight_ratio, self.act_ratio, self.outlier_precision
        )
        y_idx = np.searchsorted(self.classes_, y)
        self.network_, self.losses_ = finetune(
            net, self.config_, X, y_idx, self.finetune_epochs, self.learning_rate, self.batch_size,
            int(self.random_state),
        )
        self.model_ = quantize_model(self.network_, self.config_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.logits(check_array(X, dtype=np.float32))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
