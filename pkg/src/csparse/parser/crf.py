"""Linear-chain CRF numerics over dense score arrays.

Shapes: emissions (T, K), transitions (K, K) indexed [previous, current],
start (K,). Disallowed moves are encoded as -inf in `transitions`/`start`.
"""
from __future__ import annotations

import numpy as np


def logsumexp(x: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def sequence_score(emissions, transitions, tags, start=None) -> float:
    tags = np.asarray(tags)
    score = emissions[np.arange(len(tags)), tags].sum()
    score += transitions[tags[:-1], tags[1:]].sum()
    if start is not None:
        score += start[tags[0]]
    return float(score)


def forward(emissions, transitions, start=None) -> np.ndarray:
    T, K = emissions.shape
    alpha = np.empty((T, K))
    alpha[0] = emissions[0] + (0.0 if start is None else start)
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + transitions, axis=0) + emissions[t]
    return alpha


def backward(emissions, transitions) -> np.ndarray:
    T, K = emissions.shape
    beta = np.zeros((T, K))
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(transitions + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(emissions, transitions, start=None) -> float:
    return float(logsumexp(forward(emissions, transitions, start)[-1]))


def nll_and_grad(emissions, transitions, tags, start=None):
    """Negative log-likelihood of `tags` and its gradients w.r.t. emissions and transitions."""
    tags = np.asarray(tags)
    T, K = emissions.shape
    alpha = forward(emissions, transitions, start)
    beta = backward(emissions, transitions)
    log_z = float(logsumexp(alpha[-1]))
    nll = log_z - sequence_score(emissions, transitions, tags, start)

    d_emit = np.exp(alpha + beta - log_z)
    d_emit[np.arange(T), tags] -= 1.0

    d_trans = np.zeros((K, K))
    for t in range(1, T):
        pair = alpha[t - 1][:, None] + transitions + (emissions[t] + beta[t])[None, :] - log_z
        d_trans += np.exp(pair)
    np.add.at(d_trans, (tags[:-1], tags[1:]), -1.0)
    return nll, d_emit, d_trans


def viterbi(emissions, transitions, start=None) -> tuple[list[int], float]:
    """Best path; ties resolve to the lowest tag index at every step."""
    T, K = emissions.shape
    delta = emissions[0] + (0.0 if start is None else start)
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + transitions
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(K)] + emissions[t]
    best = int(np.argmax(delta))
    score = float(delta[best])
    path = [best]
    for t in range(T - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    return path[::-1], score
