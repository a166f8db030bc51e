"""Numpy reference implementations of the fused kernels."""

import numpy as np

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def pairwise_gauss_logpdf(z, mean, sigma):
    # out[b, k] = sum_d log N(z[b, d] | mean[k, d], sigma[k, d])
    diff = (z[:, None, :] - mean[None, :, :]) / sigma[None, :, :]
    const = -z.shape[1] * _HALF_LOG_2PI - np.log(sigma).sum(axis=1)
    return const[None, :] - 0.5 * np.einsum("bkd,bkd->bk", diff, diff)


def pairwise_gauss_logpdf_grad(z, mean, sigma, g):
    inv_var = 1.0 / (sigma * sigma)
    delta = z[:, None, :] - mean[None, :, :]
    scaled = delta * inv_var[None, :, :]
    gs = g[:, :, None] * scaled
    gz = -gs.sum(axis=1)
    gmean = gs.sum(axis=0)
    gsigma = (np.einsum("bk,bkd->kd", g, delta * scaled) - g.sum(axis=0)[:, None]) / sigma
    return gz, gmean, gsigma


def rbf_gram(a, b, gamma):
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-np.maximum(sq, 0.0) / gamma)


def rbf_gram_grad(a, b, gamma, kmat, g):
    w = g * kmat * (-2.0 / gamma)
    ga = w.sum(axis=1)[:, None] * a - w @ b
    gb = w.sum(axis=0)[:, None] * b - w.T @ a
    return ga, gb


def softplus_sigmoid(x):
    # softplus(x) and its derivative sigmoid(x), sharing exp(-|x|)
    e = np.exp(-np.abs(x))
    sp = np.maximum(x, 0.0) + np.log1p(e)
    sig = np.where(x >= 0, 1.0, e) / (1.0 + e)
    return sp, sig
