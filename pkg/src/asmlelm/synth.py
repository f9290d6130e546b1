"""Synthetic hyperspectral scenes with blocky class layouts."""

import numpy as np

from .data_model import HsiCube, LabelGrid


def make_scene(rows=48, cols=48, n_classes=4, bands=10, block=8, separation=1.0,
               noise=0.1, seed=0):
    """Piecewise-constant class map with Gaussian-perturbed class spectra.

    The grid is tiled with ``block x block`` rectangles, each assigned a class
    at random (every class is guaranteed at least one tile). Class mean
    spectra are ``0.5 + separation * (u - 0.5)`` with ``u ~ U[0, 1]^bands``;
    each pixel adds i.i.d. ``N(0, noise^2)`` per band.
    """
    rng = np.random.default_rng(seed)
    tr = -(-rows // block)
    tc = -(-cols // block)
    if tr * tc < n_classes:
        raise ValueError("too few tiles to place every class")
    tiles = np.concatenate([np.arange(1, n_classes + 1),
                            rng.integers(1, n_classes + 1, size=tr * tc - n_classes)])
    tiles = rng.permutation(tiles).reshape(tr, tc)
    labels = np.kron(tiles, np.ones((block, block), dtype=np.int64))[:rows, :cols]

    means = 0.5 + separation * (rng.uniform(size=(n_classes, bands)) - 0.5)
    values = means[labels - 1] + noise * rng.normal(size=(rows, cols, bands))
    return HsiCube(values), LabelGrid(labels, n_classes)


def nearest_mean_oa(train, test) -> float:
    """Overall accuracy of a nearest-class-mean rule; a difficulty reference."""
    classes = np.unique(train.labels)
    means = np.stack([train.features[:, train.labels == k].mean(axis=1) for k in classes])
    d2 = ((test.features.T[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d2, axis=1)]
    return float(np.mean(pred == test.labels))
