"""Independent float64 reference implementations used as test oracles."""

import numpy as np


def loss64(weights, biases, X, y):
    h = np.asarray(X, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ np.asarray(w, np.float64).T + np.asarray(b, np.float64)
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    h = h - h.max(axis=1, keepdims=True)
    logp = h - np.log(np.exp(h).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(y)), y].mean()


def central_differences(net, X, y, h=1e-3):
    """d(loss)/d(param) for every weight and bias by central differences."""
    weights = [w.astype(np.float64) for w in net.weights]
    biases = [b.astype(np.float64) for b in net.biases]
    out_w, out_b = [], []
    for params, out in ((weights, out_w), (biases, out_b)):
        for p in params:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss64(weights, biases, X, y)
                p[idx] = old - h
                down = loss64(weights, biases, X, y)
                p[idx] = old
                g[idx] = (up - down) / (2 * h)
            out.append(g)
    return out_w, out_b


def preactivation_margin(net, X):
    """Smallest |pre-activation| over hidden units; kinks closer than h break differencing."""
    h = np.asarray(X, dtype=np.float64)
    margin = np.inf
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w.astype(np.float64).T + b
        margin = min(margin, float(np.abs(z).min()))
        h = np.maximum(z, 0.0)
    return margin


def relative_error(a, b, floor=1e-3):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
