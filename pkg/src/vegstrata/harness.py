"""Training loop, evaluation metrics, and k-fold cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fit_prototypes, handcrafted_predict, regression_train_predict
from .errors import ContractError
from .gammamix import GammaMixture, ecm_fit
from .losses import LossWeights, plot_loss_and_grad
from .pointcloud import NormalizedPlot, sample_points, upsample_predictions
from .raster import build_index, rasterize
from .segnet import AdamState, SegNet, adam_step, learning_rate

log = logging.getLogger("vegstrata")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; the defaults are the reference training recipe."""

    epochs: int = 100
    batch_size: int = 20
    m_points: int = 4096
    raster_k: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    lr_drop_epoch: int = 50
    lr_drop_factor: float = 0.1
    dropout: float = 0.4
    seed: int = 0
    folds: int = 5
    dtype: str = "float32"

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.m_points, self.raster_k,
               self.folds) < 1:
            raise ContractError("config counts must be positive")


@dataclass
class EvalReport:
    """Per-stratum mean absolute occupancy errors and their macro average."""

    e_low: float
    e_medium: float
    e_high: float
    e_avg: float
    residuals: dict  # plot id -> (pred - truth) triple

    @classmethod
    def from_residuals(cls, residuals: dict) -> "EvalReport":
        r = np.abs(np.array(list(residuals.values())))
        e = r.mean(axis=0)
        return cls(
            e_low=float(e[0]),
            e_medium=float(e[1]),
            e_high=float(e[2]),
            e_avg=float(e.mean()),
            residuals=residuals,
        )


def fit_elevation_mixture(plots, init=None) -> GammaMixture:
    """ECM fit on the pooled heights of the given plots."""
    heights = np.concatenate([p.heights for p in plots])
    mixture, _ = ecm_fit(heights, init=init)
    return mixture


def train(
    plots,
    config: TrainConfig,
    mixture: GammaMixture,
    log_rows: list | None = None,
):
    """Train the segmentation network on labeled normalized plots.

    Each epoch shuffles the plots, resamples every plot to ``m_points``
    (fresh randomness per epoch), runs the forward pass in train mode,
    rasterizes, evaluates the weighted loss, backpropagates and applies
    one Adam step per batch.  Deterministic given the config seed.
    Returns the trained network; per-epoch loss means go into ``log_rows``
    as dicts with keys epoch/data/elevation/entropy/total/lr.
    """
    plots = list(plots)
    for plot in plots:
        if plot.labels is None:
            raise ContractError(f"training plot {plot.id!r} has no labels")
    truths = [np.asarray(plot.labels, dtype=float) for plot in plots]
    rng = np.random.default_rng(config.seed)
    net = SegNet(seed=int(rng.integers(2**31 - 1)), dtype=config.dtype,
                 dropout=config.dropout)
    state = AdamState.for_network(net)
    n = len(plots)

    for epoch in range(1, config.epochs + 1):
        cur_lr = learning_rate(epoch, base=config.lr,
                               drop_epoch=config.lr_drop_epoch,
                               factor=config.lr_drop_factor)
        order = rng.permutation(n)
        epoch_terms = np.zeros(4)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            feats, indices, heights = [], [], []
            for i in idx:
                f, src = sample_points(plots[i], config.m_points,
                                       int(rng.integers(2**31 - 1)))
                feats.append(f)
                indices.append(build_index(f[:, :2], config.raster_k))
                heights.append(plots[i].heights[src])
            batch = np.stack(feats)
            probs, tape = net.forward(batch, train=True,
                                      seed=int(rng.integers(2**31 - 1)))
            probs64 = probs.astype(float)
            dprobs = np.empty_like(probs64)
            for j, i in enumerate(idx):
                breakdown, _, dp = plot_loss_and_grad(
                    probs64[j], heights[j], truths[i], indices[j], mixture,
                    config.weights,
                )
                dprobs[j] = dp / idx.size
                epoch_terms += [breakdown.data, breakdown.elevation,
                                breakdown.entropy, breakdown.total]
            grads = net.backward(tape, dprobs)
            adam_step(net.params, grads, state, cur_lr)
        epoch_terms /= n
        row = {
            "epoch": epoch,
            "data": epoch_terms[0],
            "elevation": epoch_terms[1],
            "entropy": epoch_terms[2],
            "total": epoch_terms[3],
            "lr": cur_lr,
        }
        if log_rows is not None:
            log_rows.append(row)
        log.info(
            "epoch %3d  data %.4f  elevation %.4f  entropy %.4f  total %.4f",
            epoch, *epoch_terms,
        )
    return net


def predict(net: SegNet, plot: NormalizedPlot, config: TrainConfig):
    """Occupancy triple and stratum rasters for one plot (eval mode).

    The plot is sampled to ``m_points``, classified, and the predictions are
    spread back to all points by nearest-neighbor before rasterization.
    """
    feats, src = sample_points(plot, config.m_points, seed=config.seed)
    probs, _ = net.forward(feats[None], train=False)
    full = upsample_predictions(
        probs[0].astype(float), src, plot.n_points, coords=plot.features[:, :3]
    )
    index = build_index(plot.features[:, :2], config.raster_k)
    rasters = rasterize(full, index)
    return tuple(float(v) for v in rasters.occupancies), rasters


def evaluate(predictions: dict, truths: dict) -> EvalReport:
    """Mean absolute occupancy error per stratum plus the macro average."""
    if set(predictions) != set(truths):
        raise ContractError("prediction and truth plot ids differ")
    residuals = {
        pid: tuple(
            float(p - t) for p, t in zip(predictions[pid], truths[pid])
        )
        for pid in sorted(predictions)
    }
    return EvalReport.from_residuals(residuals)


def make_folds(n: int, folds: int, seed: int):
    """Seeded shuffle followed by a contiguous split into ``folds`` parts."""
    if folds > n:
        raise ContractError("more folds than plots")
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, folds)


def cross_validate(
    plots,
    config: TrainConfig,
    method: str = "segnet",
    callbacks: dict | None = None,
):
    """K-fold cross-validation over labeled plots.

    Per fold, every fit (Gamma mixture, prototypes, network) sees training
    plots only.  Returns (per-fold reports, pooled report over all held-out
    predictions).  ``callbacks['fold_done'](fold, net)`` is invoked with the
    trained network of each fold when given.
    """
    plots = list(plots)
    folds = make_folds(len(plots), config.folds, config.seed)
    fold_reports = []
    pooled_preds, pooled_truths = {}, {}
    for f, held in enumerate(folds):
        held_set = set(held.tolist())
        train_plots = [p for i, p in enumerate(plots) if i not in held_set]
        test_plots = [plots[i] for i in held]
        preds = {}
        if method == "segnet":
            mixture = fit_elevation_mixture(train_plots)
            fold_config = replace(config, seed=config.seed + 1000 * (f + 1))
            net = train(train_plots, fold_config, mixture)
            for plot in test_plots:
                preds[plot.id], _ = predict(net, plot, fold_config)
            if callbacks and "fold_done" in callbacks:
                callbacks["fold_done"](f, net)
        elif method == "handcrafted":
            protos = fit_prototypes(train_plots)
            for plot in test_plots:
                o_l, o_m, o_h, _ = handcrafted_predict(plot, protos,
                                                       k=config.raster_k)
                preds[plot.id] = (o_l, o_m, o_h)
        elif method == "regression":
            preds = regression_train_predict(
                train_plots,
                eval_plots=test_plots,
                epochs=config.epochs,
                batch_size=config.batch_size,
                seed=config.seed + 1000 * (f + 1),
                lr=config.lr,
                lr_drop_epoch=config.lr_drop_epoch,
            )
        else:
            raise ContractError(f"unknown method {method!r}")
        truths = {p.id: p.labels for p in test_plots}
        fold_reports.append(evaluate(preds, truths))
        pooled_preds.update(preds)
        pooled_truths.update(truths)
    return fold_reports, evaluate(pooled_preds, pooled_truths)
