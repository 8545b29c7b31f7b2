"""Naive reference implementations used by several test modules."""

import math

import numpy as np
import scipy.linalg


def naive_autocov(hv, tau):
    nc, ns = len(hv), len(hv[0])
    n = nc * ns
    mean = sum(hv[k][i] for k in range(nc) for i in range(ns)) / n
    acc = 0.0
    for k in range(nc):
        for i in range(ns - tau):
            acc += hv[k][i] * hv[k][i + tau]
    return acc / (n - tau * nc) - mean * mean


def naive_gamma(hv):
    ns = len(hv[0])
    r0 = naive_autocov(hv, 0)
    return 2.0 * sum((ns - tau) / ns * naive_autocov(hv, tau) / r0 for tau in range(1, ns))


def naive_estimator_variance(hv):
    n = len(hv) * len(hv[0])
    return naive_autocov(hv, 0) / n * (1.0 + naive_gamma(hv))


def random_chains(gen, nc, ns, d=2):
    return gen.standard_normal((nc, ns, d))


def expm_oracle(m, k, c, dt):
    """Zero-order hold via the augmented exponential expm([[Ac, Bc], [0, 0]] dt)."""
    M = np.zeros((3, 3))
    M[:2, :2] = [[0.0, 1.0], [-k / m, -c / m]]
    M[:2, 2] = [0.0, 1.0 / m]
    E = scipy.linalg.expm(M * dt)
    return E[:2, :2], E[:2, 2]


# (mass, stiffness, damping, step): stiff, near-critical, undamped and fine-step cases
GRID = [(3.0, k, c, dt) for k in (0.5, 4 * math.pi, 40.0, 120.0) for c, dt in
        ((0.0, 0.01), (0.4 * math.pi, 0.01), (3.0, 0.05), (2 * math.sqrt(3 * 40.0), 0.02), (30.0, 0.001))]
