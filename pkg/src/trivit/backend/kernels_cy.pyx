# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core: single-pass fused loops for the per-row ops that
dominate desk-scale training (softmax, layernorm, GELU, Adam).

Same call signatures as ``kernels_py``; float32 and float64 via fused types.
"""

from libc.math cimport exp, expf, sqrt, sqrtf, pow

NAME = "cy"

ctypedef fused real:
    float
    double

cdef double GELU_C0 = 0.7978845608028654
cdef double GELU_C1 = 0.044715


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


cdef inline real _sqrt(real x) noexcept nogil:
    if real is float:
        return sqrtf(x)
    else:
        return sqrt(x)


cdef inline real _tanh(real x) noexcept nogil:
    # via exp: glibc's scalar tanh falls off a fast path for |x| > 1 and costs
    # ~4x more than exp; the identity saturates cleanly (exp overflow -> +-1)
    cdef real e = _exp(x + x)
    return 1 - 2 / (e + 1)


def softmax_fwd(real[:, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t r, i, R = x.shape[0], N = x.shape[1]
    cdef real m, s
    with nogil:
        for r in range(R):
            m = x[r, 0]
            for i in range(1, N):
                if x[r, i] > m:
                    m = x[r, i]
            s = 0
            for i in range(N):
                out[r, i] = _exp(x[r, i] - m)
                s += out[r, i]
            for i in range(N):
                out[r, i] /= s


def softmax_bwd(real[:, ::1] y, real[:, ::1] dy, real[:, ::1] dx):
    cdef Py_ssize_t r, i, R = y.shape[0], N = y.shape[1]
    cdef real dot
    with nogil:
        for r in range(R):
            dot = 0
            for i in range(N):
                dot += dy[r, i] * y[r, i]
            for i in range(N):
                dx[r, i] = y[r, i] * (dy[r, i] - dot)


def layernorm_fwd(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps,
                  real[:, ::1] y, real[:, ::1] xhat, real[::1] rstd):
    cdef Py_ssize_t r, i, R = x.shape[0], D = x.shape[1]
    cdef real mu, var, d, rs
    with nogil:
        for r in range(R):
            mu = 0
            for i in range(D):
                mu += x[r, i]
            mu /= D
            var = 0
            for i in range(D):
                d = x[r, i] - mu
                var += d * d
            var /= D
            rs = 1.0 / _sqrt(var + <real> eps)
            rstd[r] = rs
            for i in range(D):
                xhat[r, i] = (x[r, i] - mu) * rs
                y[r, i] = xhat[r, i] * gain[i] + bias[i]


def layernorm_bwd(real[:, ::1] dy, real[:, ::1] xhat, real[::1] rstd,
                  real[::1] gain, real[:, ::1] dx, real[::1] dgain, real[::1] dbias):
    cdef Py_ssize_t r, i, R = dy.shape[0], D = dy.shape[1]
    cdef real a, c, h
    with nogil:
        for r in range(R):
            a = 0
            c = 0
            for i in range(D):
                h = dy[r, i] * gain[i]
                a += h
                c += h * xhat[r, i]
            a /= D
            c /= D
            for i in range(D):
                h = dy[r, i] * gain[i]
                dx[r, i] = rstd[r] * (h - a - xhat[r, i] * c)
                dgain[i] += dy[r, i] * xhat[r, i]
                dbias[i] += dy[r, i]


def gelu_fwd(real[::1] x, real[::1] out):
    cdef Py_ssize_t i, N = x.shape[0]
    cdef real t
    with nogil:
        for i in range(N):
            t = _tanh(<real> GELU_C0 * (x[i] + <real> GELU_C1 * x[i] * x[i] * x[i]))
            out[i] = 0.5 * x[i] * (1.0 + t)


def gelu_bwd(real[::1] x, real[::1] dy, real[::1] dx):
    cdef Py_ssize_t i, N = x.shape[0]
    cdef real t, dt
    with nogil:
        for i in range(N):
            t = _tanh(<real> GELU_C0 * (x[i] + <real> GELU_C1 * x[i] * x[i] * x[i]))
            dt = (1.0 - t * t) * <real> GELU_C0 * (1.0 + 3.0 * <real> GELU_C1 * x[i] * x[i])
            dx[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * dt)


def adam_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v, long t,
                double lr, double beta1, double beta2, double eps, double weight_decay):
    cdef Py_ssize_t i, N = p.shape[0]
    cdef real b1 = <real> beta1, b2 = <real> beta2
    cdef real bc1 = <real> (1.0 - pow(beta1, t))
    cdef real bc2 = <real> (1.0 - pow(beta2, t))
    cdef real step
    with nogil:
        for i in range(N):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            step = (m[i] / bc1) / (_sqrt(v[i] / bc2) + <real> eps)
            if weight_decay != 0.0:
                step += <real> weight_decay * p[i]
            p[i] -= <real> lr * step
