"""Reference computations written independently of the package, used to freeze expected values."""

import math

import numpy as np


def puct(q, p, n_sa, n_total, c_p):
    return q + c_p * p * math.sqrt(n_total) / (1 + n_sa)


def net_outputs(flat, D, H, A, X):
    """Log-softmax policy and Q outputs for a flat parameter vector laid out w1,b1,wp,bp,wq,bq."""
    sizes = [H * D, H, A * H, A, A * H, A]
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    w1, b1 = parts[0].reshape(H, D), parts[1]
    wp, bp = parts[2].reshape(A, H), parts[3]
    wq, bq = parts[4].reshape(A, H), parts[5]
    h = np.tanh(X @ w1.T + b1)
    z = h @ wp.T + bp
    logp = z - np.log(np.sum(np.exp(z - z.max(1, keepdims=True)), 1, keepdims=True)) - z.max(1, keepdims=True)
    return logp, h @ wq.T + bq


def frozen_loss(flat, D, H, A, X, actions, coef, targets, weight):
    logp, q = net_outputs(flat, D, H, A, X)
    rows = np.arange(len(actions))
    return float(np.sum(coef * logp[rows, actions]) + weight * np.sum((q[rows, actions] - targets) ** 2))


def central_difference(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def value_iteration(next_state, reward, terminal, gamma, tol=1e-13):
    """Q for a deterministic tabular MDP given as (S, A) tables."""
    S, A = reward.shape
    Q = np.zeros((S, A))
    while True:
        V = Q.max(axis=1)
        new = reward + np.where(terminal, 0.0, gamma * V[next_state])
        if np.max(np.abs(new - Q)) < tol:
            return new
        Q = new


def sale_to_list(deal, listed, target):
    if deal is None:
        return 0.0
    return min(max((listed - deal) / (listed - target), 0.0), 1.5)
