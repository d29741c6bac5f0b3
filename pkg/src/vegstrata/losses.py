"""Training losses: occupancy data term, elevation likelihood, entropy prior.

The data term compares predicted and annotated plot occupancies with a
smooth surrogate of the absolute value, phi(x) = sqrt(x^2 + 1e-4).  The
elevation term is the negative log-likelihood of the observed heights under
the fitted ground / non-ground Gamma mixture, with the network's soft class
assignment acting as the posterior over the two groups; it is averaged over
points so its weight stays comparable across plots of different size.  The
entropy term penalizes the average binary entropy of the occupancy map
cells, pushing maps toward crisp 0/1 values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .gammamix import GammaMixture, Z_FLOOR, gamma_pdf
from .raster import StratumRasterSet, PixelIndexMap, rasterize, rasterize_backward

PHI_EPS = 1e-4
PROB_CLAMP = 1e-8
DENSITY_FLOOR = 1e-30


@dataclass(frozen=True)
class LossWeights:
    """Regularization strengths of the elevation and entropy terms."""

    elevation: float = 1.0
    entropy: float = 0.2

    def __post_init__(self):
        if self.elevation < 0 or self.entropy < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    data: float
    elevation: float
    entropy: float
    total: float


def phi(x):
    """Smooth absolute-value surrogate; phi(0) = 0.01."""
    return np.sqrt(np.square(x) + PHI_EPS)


def phi_grad(x):
    return x / phi(x)


def data_loss(pred, truth) -> float:
    """Sum of phi over the three per-stratum occupancy residuals."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(phi(pred - truth).sum())


def data_loss_grad(pred, truth) -> np.ndarray:
    return phi_grad(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float))


def _group_densities(z, mixture: GammaMixture):
    z = np.maximum(np.asarray(z, dtype=float), Z_FLOOR)
    return gamma_pdf(z, mixture.ground), gamma_pdf(z, mixture.nonground)


def _check_prob_rows(probs):
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[1] != 4:
        raise ContractError("probs must have shape (N, 4)")
    rowsum = probs.sum(axis=1)
    if np.any(np.abs(rowsum - 1.0) > 1e-5) or np.any(probs < -1e-9):
        raise ContractError("probs rows must be probability vectors")
    return probs


def elevation_loss(probs, heights, mixture: GammaMixture) -> float:
    """Mean negative log-likelihood of heights under the soft group posterior.

    The ground group density is weighted by the bare-soil + low-vegetation
    mass, the non-ground one by the medium + high mass.
    """
    probs = _check_prob_rows(probs)
    dg, dng = _group_densities(heights, mixture)
    w_g = probs[:, 0] + probs[:, 1]
    w_ng = probs[:, 2] + probs[:, 3]
    lik = np.maximum(w_g * dg + w_ng * dng, DENSITY_FLOOR)
    return float(-np.log(lik).mean())


def elevation_loss_grad(probs, heights, mixture: GammaMixture) -> np.ndarray:
    """Gradient of elevation_loss with respect to the (N, 4) probabilities."""
    probs = np.asarray(probs)
    dg, dng = _group_densities(heights, mixture)
    w_g = probs[:, 0] + probs[:, 1]
    w_ng = probs[:, 2] + probs[:, 3]
    raw = w_g * dg + w_ng * dng
    lik = np.maximum(raw, DENSITY_FLOOR)
    live = raw > DENSITY_FLOOR  # the floor is a constant region: zero gradient
    n = probs.shape[0]
    grad = np.empty_like(probs, dtype=float)
    gg = np.where(live, -dg / lik / n, 0.0)
    gng = np.where(live, -dng / lik / n, 0.0)
    grad[:, 0] = gg
    grad[:, 1] = gg
    grad[:, 2] = gng
    grad[:, 3] = gng
    return grad


def binary_entropy(p):
    """Elementwise Bernoulli entropy in nats, clamped away from {0, 1}."""
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -p * np.log(p) - (1.0 - p) * np.log1p(-p)


def binary_entropy_grad(p):
    # Exact derivative of the clamped entropy: zero in the clamped region.
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.where(inside, -np.log(pc / (1.0 - pc)), 0.0)


def entropy_loss(rasters: StratumRasterSet, mask=None) -> float:
    """Average cell entropy: sum over the three maps of the in-disk mean."""
    mask = rasters._index.mask if mask is None else mask
    d = int(mask.sum())
    return float(binary_entropy(rasters.maps[:, mask]).sum() / d)


def entropy_loss_grad_maps(rasters: StratumRasterSet, mask=None) -> np.ndarray:
    """Gradient of entropy_loss with respect to the (3, k, k) maps."""
    mask = rasters._index.mask if mask is None else mask
    d = int(mask.sum())
    grad = binary_entropy_grad(rasters.maps) / d
    return grad * mask[None, :, :]


def global_loss(
    pred,
    truth,
    probs,
    heights,
    rasters: StratumRasterSet,
    mixture: GammaMixture,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Weighted sum of the three terms for one plot."""
    d = data_loss(pred, truth)
    e = elevation_loss(probs, heights, mixture)
    h = entropy_loss(rasters)
    return LossBreakdown(
        data=d,
        elevation=e,
        entropy=h,
        total=d + weights.elevation * e + weights.entropy * h,
    )


def plot_loss_and_grad(
    probs,
    heights,
    truth,
    index: PixelIndexMap,
    mixture: GammaMixture,
    weights: LossWeights = LossWeights(),
):
    """Full differentiable pipeline for one plot.

    Rasterizes the probabilities, evaluates the three loss terms, and
    returns (breakdown, rasters, dL/dprobs) with the raster max and the
    aggregation already folded into the gradient.
    """
    probs = _check_prob_rows(probs)
    rasters = rasterize(probs, index)
    d = data_loss(rasters.occupancies, truth)
    e = elevation_loss(probs, heights, mixture)
    h = entropy_loss(rasters)
    total = d + weights.elevation * e + weights.entropy * h

    d_occ = data_loss_grad(rasters.occupancies, truth)
    d_maps = weights.entropy * entropy_loss_grad_maps(rasters)
    dprobs = rasterize_backward(rasters, d_maps, d_occ, index)
    dprobs += weights.elevation * elevation_loss_grad(probs, heights, mixture)
    breakdown = LossBreakdown(data=d, elevation=e, entropy=h, total=total)
    return breakdown, rasters, dprobs
