"""Power-law frequency noise generators."""

import math

import numpy as np
from scipy.signal import fftconvolve


def white_fm(n, dt, h0_sqrt, rng):
    """White frequency noise sampled as bin averages of width ``dt``.

    ``h0_sqrt`` is the square root of the one-sided PSD level (1/sqrt(Hz)); the
    Allan deviation of the output is ``h0_sqrt / sqrt(2 tau)``.
    """
    if h0_sqrt == 0:
        return np.zeros(n)
    return rng.standard_normal(n) * h0_sqrt / math.sqrt(2 * dt)


def flicker_fm(n, floor, rng):
    """Flicker frequency noise with Allan-deviation floor ``floor``.

    Kasdin fractional differencing with alpha = 1: the one-sided PSD is
    ``h_-1 / f`` with ``h_-1 = Q / pi`` for white input of variance ``Q``, and
    the flicker floor is ``sqrt(2 ln 2 h_-1)``.
    """
    if floor == 0:
        return np.zeros(n)
    q = math.pi * floor ** 2 / (2 * math.log(2))
    h = np.empty(n)
    h[0] = 1.0
    k = np.arange(1, n)
    h[1:] = np.cumprod((k - 0.5) / k)
    w = rng.standard_normal(n) * math.sqrt(q)
    return fftconvolve(h, w)[:n]
