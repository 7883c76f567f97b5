"""Pure numpy implementations of the numerical core.

Same signatures and semantics as the compiled ``_ckernels`` module.
"""
import math

import numpy as np

HUBER, LOGISTIC, LINEAR, CONSTANT = 0, 1, 2, 3


def _phi(link, z, y, clip):
    if link == HUBER:
        r = z - y
        if math.isinf(clip):
            return r * r
        a = np.abs(r)
        return np.where(a <= clip, r * r, 2.0 * clip * a - clip * clip)
    if link == LOGISTIC:
        return np.logaddexp(0.0, -y * z)
    if link == LINEAR:
        return z
    return np.broadcast_to(y, np.shape(z)).astype(float)


def _dphi(link, z, y, clip):
    if link == HUBER:
        r = 2.0 * (z - y)
        if math.isinf(clip):
            return r
        return np.clip(r, -2.0 * clip, 2.0 * clip)
    if link == LOGISTIC:
        m = -y * z
        # numerically stable sigmoid(m)
        s = np.where(m >= 0, 1.0 / (1.0 + np.exp(-np.abs(m))),
                     np.exp(-np.abs(m)) / (1.0 + np.exp(-np.abs(m))))
        return -y * s
    if link == LINEAR:
        return np.ones_like(z)
    return np.zeros_like(z)


def point_losses(link, A, b, clip, sigma, theta):
    theta = np.asarray(theta, dtype=float)
    z = A @ theta
    return _phi(link, z, b, clip) + 0.5 * sigma * float(theta @ theta)


def link_derivs(link, A, b, clip, theta):
    return np.asarray(_dphi(link, A @ np.asarray(theta, dtype=float), b, clip), dtype=float)


def objective(link, A, b, clip, sigma, h, theta):
    theta = np.asarray(theta, dtype=float)
    z = A @ theta
    mass = float(h.sum())
    val = float(h @ _phi(link, z, b, clip)) + mass * 0.5 * sigma * float(theta @ theta)
    grad = A.T @ (h * _dphi(link, z, b, clip)) + mass * sigma * theta
    return val, grad


def _project(theta, lo, hi, radius):
    if radius > 0:
        nrm = math.sqrt(float(theta @ theta))
        if nrm > radius:
            return theta * (radius / nrm)
        return theta
    return np.minimum(np.maximum(theta, lo), hi)


def pgd(link, A, b, clip, sigma, h, theta0, lo, hi, radius, step, tol, diam, max_iter):
    theta = _project(np.array(theta0, dtype=float), lo, hi, radius)
    f, g = objective(link, A, b, clip, sigma, h, theta)
    s = step if step > 0 else 1.0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        while True:
            t_new = _project(theta - s * g, lo, hi, radius)
            f_new, g_new = objective(link, A, b, clip, sigma, h, t_new)
            if step > 0:
                break
            diff = t_new - theta
            if f_new <= f + float(g @ diff) + float(diff @ diff) / (2.0 * s) + 1e-15 * abs(f) or s < 1e-20:
                break
            s *= 0.5
        gm = math.sqrt(float((theta - t_new) @ (theta - t_new))) / s
        theta, f, g = t_new, f_new, g_new
        if gm * diam <= tol:
            converged = True
            break
    return theta.copy(), f, it, converged


def net_values(link, A, b, clip, sigma, h, net):
    Z = net @ A.T
    mass = float(h.sum())
    return _phi(link, Z, b, clip) @ h + mass * 0.5 * sigma * np.einsum("ij,ij->i", net, net)


def mw_reweight(hist, u, eta):
    hist = np.asarray(hist, dtype=float)
    pos = hist > 0
    if not pos.any():
        raise FloatingPointError("multiplicative weights lost all mass")
    logw = np.full(hist.shape, -np.inf)
    logw[pos] = np.log(hist[pos]) - eta * np.asarray(u, dtype=float)[pos]
    w = np.zeros_like(hist)
    w[pos] = np.exp(logw[pos] - logw[pos].max())
    total = w.sum()
    if not total > 0:
        raise FloatingPointError("multiplicative weights lost all mass")
    return w / total


def sample_index(logits, u01):
    logits = np.asarray(logits, dtype=float)
    w = np.exp(logits - logits.max())
    cdf = np.cumsum(w)
    idx = int(np.searchsorted(cdf, u01 * cdf[-1], side="right"))
    return min(idx, len(logits) - 1)
