"""Non-learned and directly-regressing baselines.

The handcrafted predictor thresholds heights into the three strata and
separates bare soil from low vegetation by distance to two prototype
feature vectors averaged from plots with extreme lower-stratum labels.
The regression baseline trains the plot-level network head on the same
smooth occupancy loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FittingError
from .losses import data_loss_grad, phi
from .pointcloud import NormalizedPlot, sample_points
from .raster import StratumRasterSet, build_index, disk_mask
from .segnet import AdamState, OccupancyRegressor, adam_step, learning_rate

LOW_BAND = 0.5
HIGH_BAND = 1.5
# Non-geometric normalized features: r, g, b, nir, intensity, return number.
FEATURE_SLICE = slice(3, 9)


@dataclass(frozen=True)
class PrototypePair:
    """Mean non-geometric feature vectors of pure bare-soil and low-vegetation."""

    bare_soil: np.ndarray
    low_veg: np.ndarray


def fit_prototypes(training_plots) -> PrototypePair:
    """Average the 6 non-geometric features of low points of extreme plots.

    Bare-soil points come from plots labeled 0 lower occupancy, low
    vegetation from plots labeled 1; only points below 0.5 m participate.
    """
    sums = {"bare_soil": np.zeros(6), "low_veg": np.zeros(6)}
    counts = {"bare_soil": 0, "low_veg": 0}
    for plot in training_plots:
        if plot.labels is None:
            continue
        o_low = plot.labels[0]
        if o_low == 0.0:
            key = "bare_soil"
        elif o_low == 1.0:
            key = "low_veg"
        else:
            continue
        low = plot.features[:, 2] < LOW_BAND
        sums[key] += plot.features[low, FEATURE_SLICE].sum(axis=0)
        counts[key] += int(low.sum())
    for key in ("bare_soil", "low_veg"):
        if counts[key] == 0:
            raise FittingError(
                f"no training plot provides {key} points "
                "(need lower-stratum labels of exactly 0 and exactly 1)"
            )
    return PrototypePair(
        bare_soil=sums["bare_soil"] / counts["bare_soil"],
        low_veg=sums["low_veg"] / counts["low_veg"],
    )


def handcrafted_predict(plot: NormalizedPlot, protos: PrototypePair, k: int = 32):
    """Threshold-and-vote occupancy prediction for one plot.

    Points below 0.5 m are classified to the nearest prototype; lower-raster
    cells take the majority vote of their points (ties count as low
    vegetation) and the lower occupancy is the fraction of voted cells among
    cells containing any low point.  Cells with at least one point in
    [0.5, 1.5) m or above 1.5 m are occupied for the medium and higher maps,
    each aggregated over all in-disk cells.
    """
    index = build_index(plot.features[:, :2], k)
    mask = index.mask
    d = index.n_in_disk
    heights = plot.features[:, 2]
    maps = np.zeros((3, k * k))

    low = heights < LOW_BAND
    sel = low & index.in_disk_point
    pid = index.pixel_id[sel]
    feats = plot.features[sel, FEATURE_SLICE]
    dist_soil = np.linalg.norm(feats - protos.bare_soil, axis=1)
    dist_veg = np.linalg.norm(feats - protos.low_veg, axis=1)
    is_veg = dist_veg <= dist_soil
    votes_veg = np.bincount(pid, weights=is_veg, minlength=k * k)
    votes_all = np.bincount(pid, minlength=k * k)
    occupied_low = votes_all > 0
    # Tie -> low vegetation.
    maps[0, occupied_low] = (
        votes_veg[occupied_low] >= votes_all[occupied_low] / 2.0
    ).astype(float)
    o_low = float(maps[0, occupied_low].sum() / occupied_low.sum()) if occupied_low.any() else 0.0

    for row, band in ((1, (heights >= LOW_BAND) & (heights < HIGH_BAND)),
                      (2, heights >= HIGH_BAND)):
        sel = band & index.in_disk_point
        counts = np.bincount(index.pixel_id[sel], minlength=k * k)
        maps[row, counts > 0] = 1.0
    o_medium = float(maps[1].reshape(k, k)[mask].sum() / d)
    o_high = float(maps[2].reshape(k, k)[mask].sum() / d)

    maps = maps.reshape(3, k, k) * mask
    rasters = StratumRasterSet(
        k=k,
        maps=maps,
        occupancies=maps[:, mask].sum(axis=1) / d,
        argmax=np.full((3, k, k), -1, dtype=np.int64),
        _index=index,
    )
    return o_low, o_medium, o_high, rasters


def regression_train_predict(
    train_plots,
    eval_plots=None,
    epochs: int = 100,
    batch_size: int = 20,
    m_points: int = 2048,
    seed: int = 0,
    lr: float = 1e-3,
    lr_drop_epoch: int = 50,
):
    """Train the direct-regression baseline and predict occupancy triples.

    Returns ``{plot_id: (o_low, o_medium, o_high)}`` for ``eval_plots``
    (defaulting to the training plots, predicted in eval mode).
    """
    train_plots = list(train_plots)
    eval_plots = train_plots if eval_plots is None else list(eval_plots)
    rng = np.random.default_rng(seed)
    net = OccupancyRegressor(seed=int(rng.integers(2**31 - 1)))
    state = AdamState.for_network(net)
    truths = np.array([p.labels for p in train_plots])

    n = len(train_plots)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        cur_lr = learning_rate(epoch, base=lr, drop_epoch=lr_drop_epoch)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = np.stack(
                [
                    sample_points(train_plots[i], m_points,
                                  int(rng.integers(2**31 - 1)))[0]
                    for i in idx
                ]
            )
            occ, tape = net.forward(batch, train=True,
                                    seed=int(rng.integers(2**31 - 1)))
            resid_grad = data_loss_grad(occ, truths[idx]) / idx.size
            grads = net.backward(tape, resid_grad)
            adam_step(net.params, grads, state, cur_lr)

    out = {}
    for plot in eval_plots:
        feats, _ = sample_points(plot, m_points, seed=seed)
        occ, _ = net.forward(feats[None], train=False)
        out[plot.id] = tuple(float(v) for v in occ[0])
    return out
