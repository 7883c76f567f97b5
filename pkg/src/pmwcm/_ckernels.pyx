# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical core.

Every function here has a twin with the same signature in ``_pykernels``;
``pmwcm.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, fabs, isinf, INFINITY

cnp.import_array()

DEF HUBER = 0
DEF LOGISTIC = 1
DEF LINEAR = 2
DEF CONSTANT = 3


cdef inline double _phi(int link, double z, double y, double clip) nogil:
    cdef double r, m
    if link == HUBER:
        r = z - y
        if isinf(clip) or fabs(r) <= clip:
            return r * r
        return 2.0 * clip * fabs(r) - clip * clip
    elif link == LOGISTIC:
        m = -y * z
        if m > 0:
            return m + log1p(exp(-m))
        return log1p(exp(m))
    elif link == LINEAR:
        return z
    return y


cdef inline double _dphi(int link, double z, double y, double clip) nogil:
    cdef double r, m, s
    if link == HUBER:
        r = 2.0 * (z - y)
        if not isinf(clip):
            if r > 2.0 * clip:
                return 2.0 * clip
            if r < -2.0 * clip:
                return -2.0 * clip
        return r
    elif link == LOGISTIC:
        m = -y * z
        if m >= 0:
            s = 1.0 / (1.0 + exp(-m))
        else:
            s = exp(m) / (1.0 + exp(m))
        return -y * s
    elif link == LINEAR:
        return 1.0
    return 0.0


cdef double _objective(int link, const double[:, :] A, const double[:] b,
                       double clip, double sigma, const double[:] h,
                       const double[:] theta, double[:] grad) nogil:
    cdef Py_ssize_t nx = A.shape[0], d = A.shape[1], i, k
    cdef double z, val = 0.0, sq = 0.0, g, mass = 0.0
    for k in range(d):
        grad[k] = 0.0
        sq += theta[k] * theta[k]
    for i in range(nx):
        if h[i] == 0.0:
            continue
        z = 0.0
        for k in range(d):
            z += A[i, k] * theta[k]
        val += h[i] * _phi(link, z, b[i], clip)
        g = h[i] * _dphi(link, z, b[i], clip)
        for k in range(d):
            grad[k] += g * A[i, k]
        mass += h[i]
    if sigma != 0.0:
        val += mass * 0.5 * sigma * sq
        for k in range(d):
            grad[k] += mass * sigma * theta[k]
    return val


cdef void _project(double[:] theta, const double[:] lo, const double[:] hi,
                   double radius) nogil:
    cdef Py_ssize_t d = theta.shape[0], k
    cdef double nrm = 0.0
    if radius > 0:
        for k in range(d):
            nrm += theta[k] * theta[k]
        nrm = sqrt(nrm)
        if nrm > radius:
            for k in range(d):
                theta[k] = theta[k] * (radius / nrm)
    else:
        for k in range(d):
            if theta[k] < lo[k]:
                theta[k] = lo[k]
            elif theta[k] > hi[k]:
                theta[k] = hi[k]


def point_losses(int link, const double[:, :] A, const double[:] b, double clip,
                 double sigma, const double[:] theta):
    cdef Py_ssize_t nx = A.shape[0], d = A.shape[1], i, k
    cdef double z, sq = 0.0
    out = np.empty(nx)
    cdef double[:] o = out
    for k in range(d):
        sq += theta[k] * theta[k]
    for i in range(nx):
        z = 0.0
        for k in range(d):
            z += A[i, k] * theta[k]
        o[i] = _phi(link, z, b[i], clip) + 0.5 * sigma * sq
    return out


def link_derivs(int link, const double[:, :] A, const double[:] b, double clip,
                const double[:] theta):
    cdef Py_ssize_t nx = A.shape[0], d = A.shape[1], i, k
    cdef double z
    out = np.empty(nx)
    cdef double[:] o = out
    for i in range(nx):
        z = 0.0
        for k in range(d):
            z += A[i, k] * theta[k]
        o[i] = _dphi(link, z, b[i], clip)
    return out


def objective(int link, const double[:, :] A, const double[:] b, double clip,
              double sigma, const double[:] h, const double[:] theta):
    grad = np.empty(A.shape[1])
    val = _objective(link, A, b, clip, sigma, h, theta, grad)
    return val, grad


def pgd(int link, const double[:, :] A, const double[:] b, double clip,
        double sigma, const double[:] h, const double[:] theta0,
        const double[:] lo, const double[:] hi, double radius, double step,
        double tol, double diam, long max_iter):
    """Projected gradient descent with gradient-mapping stopping rule.

    ``step <= 0`` switches to backtracking.  Returns
    ``(theta, value, iterations, converged)``.
    """
    cdef Py_ssize_t d = A.shape[1], k
    cdef long it = 0
    cdef double f, f_new, s, gm, dot, dist2
    cdef bint converged = False
    theta_a = np.array(theta0, dtype=np.float64)
    new_a = np.empty(d)
    grad_a = np.empty(d)
    gnew_a = np.empty(d)
    cdef double[:] theta = theta_a, t_new = new_a, g = grad_a, g_new = gnew_a, tmp
    _project(theta, lo, hi, radius)
    f = _objective(link, A, b, clip, sigma, h, theta, g)
    s = step if step > 0 else 1.0
    while it < max_iter:
        it += 1
        while True:
            for k in range(d):
                t_new[k] = theta[k] - s * g[k]
            _project(t_new, lo, hi, radius)
            f_new = _objective(link, A, b, clip, sigma, h, t_new, g_new)
            if step > 0:
                break
            dot = 0.0
            dist2 = 0.0
            for k in range(d):
                dot += g[k] * (t_new[k] - theta[k])
                dist2 += (t_new[k] - theta[k]) * (t_new[k] - theta[k])
            if f_new <= f + dot + dist2 / (2.0 * s) + 1e-15 * fabs(f) or s < 1e-20:
                break
            s *= 0.5
        gm = 0.0
        for k in range(d):
            gm += (theta[k] - t_new[k]) * (theta[k] - t_new[k])
        gm = sqrt(gm) / s
        tmp = theta
        theta = t_new
        t_new = tmp
        tmp = g
        g = g_new
        g_new = tmp
        f = f_new
        if gm * diam <= tol:
            converged = True
            break
    return np.asarray(theta).copy(), f, it, converged


def net_values(int link, const double[:, :] A, const double[:] b, double clip,
               double sigma, const double[:] h, const double[:, :] net):
    cdef Py_ssize_t m = net.shape[0], nx = A.shape[0], d = A.shape[1]
    cdef Py_ssize_t j, i, k
    cdef double z, val, sq, mass = 0.0
    out = np.empty(m)
    cdef double[:] o = out
    for i in range(nx):
        mass += h[i]
    for j in range(m):
        val = 0.0
        sq = 0.0
        for k in range(d):
            sq += net[j, k] * net[j, k]
        for i in range(nx):
            if h[i] == 0.0:
                continue
            z = 0.0
            for k in range(d):
                z += A[i, k] * net[j, k]
            val += h[i] * _phi(link, z, b[i], clip)
        o[j] = val + mass * 0.5 * sigma * sq
    return out


def mw_reweight(const double[:] hist, const double[:] u, double eta):
    """Return ``hist * exp(-eta * u)`` renormalised, computed in log space."""
    cdef Py_ssize_t n = hist.shape[0], i
    cdef double mx = -INFINITY, total = 0.0
    out = np.zeros(n)
    cdef double[:] o = out
    for i in range(n):
        if hist[i] > 0.0:
            o[i] = log(hist[i]) - eta * u[i]
            if o[i] > mx:
                mx = o[i]
    for i in range(n):
        if hist[i] > 0.0:
            o[i] = exp(o[i] - mx)
            total += o[i]
        else:
            o[i] = 0.0
    if not total > 0.0:
        raise FloatingPointError("multiplicative weights lost all mass")
    for i in range(n):
        o[i] = o[i] / total
    return out


def sample_index(const double[:] logits, double u01):
    """Inverse-CDF draw from the softmax of ``logits`` using a uniform ``u01``."""
    cdef Py_ssize_t n = logits.shape[0], i
    cdef double mx = -INFINITY, total = 0.0, acc = 0.0, target
    for i in range(n):
        if logits[i] > mx:
            mx = logits[i]
    for i in range(n):
        total += exp(logits[i] - mx)
    target = u01 * total
    for i in range(n):
        acc += exp(logits[i] - mx)
        if acc > target:
            return i
    return n - 1
