"""Seeded toy classification tasks.

Everything is generated from :class:`~vquant.rng.RngStream`, so a seed fully
determines the data on every platform.  The 8x8 digits task uses the copy of
the UCI handwritten digits that ships inside scikit-learn (no download).
"""

import functools
import os

import numpy as np

from .exceptions import ParameterError
from .rng import Distribution, RngStream, sample
from .tensor import read_tensor, write_tensor


def make_blobs(n_samples=400, n_features=2, n_classes=2, spread=1.0, separation=4.0, seed=0):
    """Isotropic Gaussian blobs with centers drawn uniformly in a box.

    Returns ``(X, y)``; classes are interleaved so any prefix is balanced.
    """
    if n_samples < n_classes or n_classes < 2:
        raise ParameterError("need n_classes >= 2 and at least one sample per class")
    rng = RngStream(seed)
    centers = sample(Distribution("uniform", -separation, separation), (n_classes, n_features), rng)
    y = np.arange(n_samples, dtype=np.int64) % n_classes
    noise = sample(Distribution("gaussian", 0.0, spread), (n_samples, n_features), rng)
    X = (centers[y] + noise).astype(np.float32)
    return X, y


def train_test_split(X, y, test_fraction=0.25, seed=0):
    perm = RngStream(seed).spawn(7).permutation(len(X))
    n_test = int(round(test_fraction * len(X)))
    test, train = perm[:n_test], perm[n_test:]
    return X[train], y[train], X[test], y[test]


def load_digits_task(seed=0, test_fraction=0.25):
    """8x8 handwritten digits scaled to [0, 1], split deterministically.

    Returns ``(X_train, y_train, X_test, y_test)``.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    X = (digits.data / 16.0).astype(np.float32)
    y = digits.target.astype(np.int64)
    return train_test_split(X, y, test_fraction, seed)


def load_blobs_task(seed=0, test_fraction=0.25):
    """The default synthetic task: 10 overlapping 16-D blobs, 2000 points."""
    X, y = make_blobs(2000, 16, 10, spread=1.6, separation=2.0, seed=seed)
    return train_test_split(X, y, test_fraction, seed)


TASKS = {"digits": load_digits_task, "blobs": load_blobs_task}


def load_task(name, seed=0):
    try:
        return TASKS[name](seed=seed)
    except KeyError:
        raise ParameterError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


DATASET_FILES = ("train_features.vqtn", "train_labels.vqtn", "test_features.vqtn", "test_labels.vqtn")


def save_dataset(directory, X_train, y_train, X_test, y_test):
    """Write the four split tensors as ``.vqtn`` files (labels as float32)."""
    os.makedirs(directory, exist_ok=True)
    arrays = (X_train, y_train, X_test, y_test)
    for name, arr in zip(DATASET_FILES, arrays):
        write_tensor(os.path.join(directory, name), np.asarray(arr, dtype=np.float32))


def load_dataset(directory):
    X_train, y_train, X_test, y_test = (read_tensor(os.path.join(directory, f)) for f in DATASET_FILES)
    return X_train, y_train.astype(np.int64), X_test, y_test.astype(np.int64)


TOY_HIDDEN = (64, 64)
TOY_EPOCHS = 30
TOY_SCHEDULE = "F,F,F"


def toy_train_config(seed=0, schedule=TOY_SCHEDULE, epochs=TOY_EPOCHS):
    """Recipe shared by the toy model and the training experiments.

    Three equal phases with a 10x learning-rate drop at each boundary.
    """
    from .training import AnnealSchedule, TrainConfig

    return TrainConfig(0.1, 32, epochs, seed, AnnealSchedule.parse(schedule, epochs), lr_decay=0.1)


@functools.lru_cache(maxsize=8)
def load_toy_model(seed=0):
    """Float MLP trained on the digits task with the toy recipe (cached)."""
    from .network import MlpNetwork
    from .training import train

    X_train, y_train, _, _ = load_digits_task(seed=0)
    net = MlpNetwork.init([X_train.shape[1], *TOY_HIDDEN, 10], seed)
    net, _ = train(net, X_train, y_train, toy_train_config(seed))
    return net
