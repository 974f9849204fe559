# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled edge kernels; float64 twin of ``pure.py`` (same operation order)."""

from libc.math cimport exp

import numpy as np

BACKEND = "compiled"


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def sigmoid(double x):
    return _sigmoid(x)


def pair_score(double co_count, double start_count, double end_count):
    cdef double denom = (start_count + end_count) / 2.0
    if denom == 0.0:
        return 0.0
    return co_count / denom


def cluster_score(double[::1] counts_a, double[::1] counts_b):
    cdef Py_ssize_t n = counts_a.shape[0]
    cdef Py_ssize_t i
    cdef double a, b, hi, lo, total = 0.0
    if n == 0:
        return 0.0
    for i in range(n):
        a = counts_a[i]
        b = counts_b[i]
        hi = a if a > b else b
        lo = a if a < b else b
        if hi > 0.0:
            total += lo / hi
    return total / n


def cluster_match_score(double count_a, double count_b, double total):
    if total == 0.0:
        return 0.0
    return (count_a + count_b) / total


def time_score(double gap_mean, double gap_max, double since_last):
    if gap_max == 0.0:
        return 0.0
    return (gap_mean - since_last) / gap_max


def activation_value(double[::1] weights, double[::1] scores):
    cdef double z = 0.0
    cdef Py_ssize_t i
    for i in range(5):
        z += weights[i] * scores[i]
    return _sigmoid(z)


def edge_loss(double activation, bint vulnerable):
    if vulnerable:
        return 1.0 - activation
    return 1.0 + activation


cdef double _mean_loss(double[:, ::1] weights, long[::1] edge_index,
                       double[:, ::1] scores, unsigned char[::1] vulnerable) nogil:
    cdef Py_ssize_t n_rows = edge_index.shape[0]
    cdef Py_ssize_t i, j
    cdef long e
    cdef double z, a, total = 0.0
    if n_rows == 0:
        return 0.0
    for j in range(n_rows):
        e = edge_index[j]
        z = 0.0
        for i in range(5):
            z += weights[e, i] * scores[j, i]
        a = _sigmoid(z)
        if vulnerable[j]:
            total += 1.0 - a
        else:
            total += 1.0 + a
    return total / n_rows


def train_epochs(double[:, ::1] weights, long[::1] edge_index,
                 double[:, ::1] scores, unsigned char[::1] vulnerable,
                 double lr, int epochs):
    cdef Py_ssize_t n_rows = edge_index.shape[0]
    cdef Py_ssize_t i, j
    cdef int epoch
    cdef long e
    cdef double z, a, g
    losses = np.zeros(epochs + 1, dtype=np.float64)
    cdef double[::1] losses_view = losses
    with nogil:
        losses_view[0] = _mean_loss(weights, edge_index, scores, vulnerable)
        for epoch in range(epochs):
            for j in range(n_rows):
                e = edge_index[j]
                z = 0.0
                for i in range(5):
                    z += weights[e, i] * scores[j, i]
                a = _sigmoid(z)
                g = a * (1.0 - a)
                if vulnerable[j]:
                    g = -g
                for i in range(5):
                    weights[e, i] -= lr * g * scores[j, i]
            losses_view[epoch + 1] = _mean_loss(weights, edge_index, scores, vulnerable)
    return losses
