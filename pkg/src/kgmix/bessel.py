"""Bessel function of the first kind, order one.

Two branches: the ascending power series below ``SWITCH`` and the Hankel
asymptotic expansion above it.  At the switch point both branches agree to
better than 1e-10 absolute (the asymptotic series is truncated at its
smallest term, which is about exp(-2x)).
"""
import math

import numpy as np

SWITCH = 12.0


def _j1_series(x):
    # J1(x) = sum_k (-1)^k (x/2)^(2k+1) / (k! (k+1)!)
    x = np.asarray(x, dtype=float)
    half = 0.5 * x
    q = -half * half
    term = half.copy()
    total = term.copy()
    for k in range(1, 80):
        term = term * q / (k * (k + 1))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
            break
    return total


def _j1_asymptotic(x):
    # Hankel expansion with mu = 4 nu^2 = 4, truncated at the smallest term
    x = np.asarray(x, dtype=float)
    mu = 4.0
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    last = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 60):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(term)
        active &= mag < last
        if not active.any():
            break
        contrib = np.where(active, term, 0.0)
        if k % 2 == 1:
            # odd orders feed Q with sign (-1)^((k-1)/2)
            q = q + (1 if (k - 1) % 4 == 0 else -1) * contrib
        else:
            p = p + (-1 if k % 4 == 2 else 1) * contrib
        last = np.where(active, mag, last)
    chi = x - 0.75 * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def j1(x):
    """J1 evaluated elementwise; odd in ``x``."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax < SWITCH
    if small.any():
        out[small] = _j1_series(ax[small])
    if (~small).any():
        out[~small] = _j1_asymptotic(ax[~small])
    out = np.where(x < 0, -out, out)
    return out if out.ndim else float(out)
