"""Full-covariance Gaussian mixtures over RGB colours.

Covariances are regularised by adding ``eps * I``. The same ``eps`` enters
the per-pixel cost as ``eps/2 * tr(Sigma^-1)``; with that term the
regularised covariance is the exact minimiser of the cost for a fixed
assignment, so alternating assignment and refit never increases it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-4
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 3)
    covs: np.ndarray  # (K, 3, 3)
    eps: float = EPS

    @property
    def k(self):
        return len(self.weights)

    def component_costs(self, x):
        """``(n, K)`` costs ``-log pi_k - log N(x | mu_k, Sigma_k) + eps/2 tr(Sigma_k^-1)``."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((len(x), self.k))
        for k in range(self.k):
            if self.weights[k] <= 0:
                out[:, k] = np.inf
                continue
            inv = np.linalg.inv(self.covs[k])
            _, logdet = np.linalg.slogdet(self.covs[k])
            d = x - self.means[k]
            maha = np.einsum("ni,ij,nj->n", d, inv, d)
            out[:, k] = (-np.log(self.weights[k]) + 0.5 * (logdet + maha + x.shape[1] * LOG_2PI)
                         + 0.5 * self.eps * np.trace(inv))
        return out

    def assign(self, x):
        """Best component per sample and its cost."""
        c = self.component_costs(x)
        k = np.argmin(c, axis=1)
        return k, c[np.arange(len(x)), k]


def kmeans_pp(x, k, rng):
    """k-means++ seeding: indices of ``k`` distinct-as-possible centres."""
    n = len(x)
    centres = [int(rng.integers(n))]
    d2 = np.sum((x - x[centres[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centres.append(int(rng.integers(n)))
        else:
            centres.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((x - x[centres[-1]]) ** 2, axis=1))
    return x[centres].copy()


def kmeans(x, k, seed=0, iters=10):
    rng = np.random.default_rng(seed)
    centres = kmeans_pp(x, k, rng)
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(iters):
        d = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d, axis=1)
        if _ > 0 and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            sel = labels == j
            if sel.any():
                centres[j] = x[sel].mean(axis=0)
    return labels


def estimate(x, labels, k, eps=EPS):
    """Weights, means and regularised covariances from hard assignments."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    weights = np.zeros(k)
    means = np.zeros((k, dim))
    covs = np.tile(np.eye(dim) * eps, (k, 1, 1))
    for j in range(k):
        sel = x[labels == j]
        if len(sel) == 0:
            continue
        weights[j] = len(sel) / len(x)
        means[j] = sel.mean(axis=0)
        d = sel - means[j]
        covs[j] = d.T @ d / len(sel) + eps * np.eye(dim)
    return GmmModel(weights, means, covs, eps)


def fit_gmm(pixels, k=5, seed=0, eps=EPS):
    """Seeded k-means initialisation followed by parameter estimation.

    With fewer pixels than ``k`` the component count drops to the pixel count.
    """
    x = np.asarray(pixels, dtype=np.float64).reshape(len(pixels), -1)
    if len(x) == 0:
        raise ValueError("cannot fit a mixture to zero pixels")
    k = min(k, len(x))
    labels = kmeans(x, k, seed=seed)
    return estimate(x, labels, k, eps)
