"""Numpy implementations of the hot kernels.

Same call signatures and operation order as ``_kernels.pyx``.  Used when the
compiled extension is unavailable or ``TEMA_TTA_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np


def batch_moments(x):
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    var = (centered * centered).mean(axis=1)
    # a constant channel is exact: no rounding in the mean or variance
    const = x.min(axis=1) == x.max(axis=1)
    mean[const] = x[const, 0]
    var[const] = 0.0
    return mean, var


def normalize(x, mean, var, scale, shift, eps):
    inv = scale / np.sqrt(var + eps)
    return (x - mean[:, None]) * inv[:, None] + shift[:, None]


def mix_moments(alpha, mu_s, var_s, mu_t, var_t):
    beta = 1.0 - alpha
    d = mu_s - mu_t
    mean = alpha * mu_s + beta * mu_t
    var = alpha * var_s + beta * var_t + (alpha * beta) * (d * d)
    return mean, var


def ema_update(m, prev_mean, prev_var, batch_mean, batch_var):
    keep = 1.0 - m
    return m * batch_mean + keep * prev_mean, m * batch_var + keep * prev_var


def sym_kl(mu_p, var_p, mu_q, var_q, floor, reduce_mean=True):
    vp = np.maximum(var_p, floor)
    vq = np.maximum(var_q, floor)
    d = mu_p - mu_q
    d2 = d * d
    # log terms of the two directions cancel
    per_channel = 0.25 * ((vp + d2) / vq + (vq + d2) / vp) - 0.5
    per_channel = np.maximum(per_channel, 0.0)
    total = float(np.sum(per_channel))
    return total / per_channel.shape[0] if reduce_mean else total


def composition_nonempty(uniforms, n_slots):
    """Count nonempty parts of stars-and-bars compositions.

    Each row of ``uniforms`` drives Floyd's subset sampler to choose
    ``uniforms.shape[1]`` bar positions among ``n_slots``.
    """
    trials, n_bars = uniforms.shape
    if n_bars == 0:
        return np.ones(trials, dtype=np.int64)
    chosen = np.empty((trials, n_bars), dtype=np.int64)
    first = n_slots - n_bars
    for s in range(n_bars):
        j = first + s
        t = np.floor(uniforms[:, s] * (j + 1)).astype(np.int64)
        np.minimum(t, j, out=t)
        if s:
            dup = (chosen[:, :s] == t[:, None]).any(axis=1)
            t = np.where(dup, j, t)
        chosen[:, s] = t
    chosen.sort(axis=1)
    empty = (chosen[:, 0] == 0).astype(np.int64)
    empty += (chosen[:, -1] == n_slots - 1)
    if n_bars > 1:
        empty += (np.diff(chosen, axis=1) == 1).sum(axis=1)
    return (n_bars + 1) - empty
