"""Release gate: one test per acceptance criterion, pinned tolerances.

Each test prints a single ``[criterion N] ... PASS`` line on success; the
corresponding pytest outcome is the machine-readable verdict.  Criterion 4
is the expensive one (full 5-fold cross-validation on a 200-plot corpus)
and dominates the suite's runtime.
"""

import time

import numpy as np
import pytest

import vegstrata as vs
from vegstrata import synth
from vegstrata.baselines import fit_prototypes, handcrafted_predict
from vegstrata.gammamix import ecm_fit
from vegstrata.harness import TrainConfig, cross_validate, fit_elevation_mixture, predict, train
from vegstrata.losses import LossWeights, elevation_loss, entropy_loss, plot_loss_and_grad
from vegstrata.raster import STRATA, STRATUM_CLASS, build_index, disk_mask, rasterize
from vegstrata.segnet import SegNet


def verdict(n, name, ok, detail=""):
    line = f"[criterion {n}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


def test_criterion_1_gradient_integrity(small_mixture):
    """Full-loss gradients vs central finite differences, float64, 2 plots."""
    t0 = time.time()
    samples = [synth.generate(synth.random_scene(s, density=2.0)) for s in (11, 15)]
    plots = [vs.normalize(s.plot) for s in samples]
    m, k = 64, 8
    net = SegNet(seed=0, dtype="float64")
    weights = LossWeights()
    feats, heights, truths, indices = [], [], [], []
    for s, p in zip(samples, plots):
        f, src = vs.sample_points(p, m, seed=7)
        feats.append(f)
        heights.append(p.heights[src])
        truths.append(np.asarray(s.labels, dtype=float))
        indices.append(build_index(f[:, :2], k))
    batch = np.stack(feats)

    def total_loss():
        probs, _ = net.forward(batch, train=True, seed=42)
        return sum(
            plot_loss_and_grad(
                probs[j], heights[j], truths[j], indices[j], small_mixture, weights
            )[0].total
            for j in range(2)
        ) / 2.0

    probs, tape = net.forward(batch, train=True, seed=42)
    dprobs = np.empty_like(probs)
    for j in range(2):
        _, _, dp = plot_loss_and_grad(
            probs[j], heights[j], truths[j], indices[j], small_mixture, weights
        )
        dprobs[j] = dp / 2.0
    grads = net.backward(tape, dprobs)

    h = 1e-4
    rng = np.random.default_rng(3)
    worst = 0.0
    for name, p in net.params.items():
        flat = p.ravel()
        for i in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = total_loss()
            flat[i] = orig - h
            down = total_loss()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = grads[name].ravel()[i]
            worst = max(worst, abs(fd - an) / max(1.0, abs(fd), abs(an)))
    elapsed = time.time() - t0
    verdict(
        1, "gradient integrity",
        worst <= 1e-4 and elapsed < 60.0,
        f"max rel err {worst:.2e}, {elapsed:.1f} s",
    )


def test_criterion_2_ecm_recovery():
    """50k-sample recovery of 0.55*Gamma(0.2,0.5) + 0.45*Gamma(2.2,2.5)."""
    rng = np.random.default_rng(5)
    n = 50_000
    from_ground = rng.random(n) < 0.55
    z = np.where(
        from_ground,
        rng.gamma(0.2, 1.0 / 0.5, size=n),
        rng.gamma(2.2, 1.0 / 2.5, size=n),
    )
    t0 = time.time()
    mix, trace = ecm_fit(z)
    elapsed = time.time() - t0
    # Identify components by mean (the ground one is the low-mean one here).
    pairs = sorted(
        [(mix.ground, mix.weight_ground), (mix.nonground, mix.weight_nonground)],
        key=lambda cw: cw[0].mean,
    )
    (low, w_low), (high, w_high) = pairs
    ok = (
        abs(w_low - 0.55) <= 0.02
        and abs(w_high - 0.45) <= 0.02
        and abs(low.shape - 0.2) <= 0.1 * 0.2
        and abs(low.rate - 0.5) <= 0.1 * 0.5
        and abs(high.shape - 2.2) <= 0.1 * 2.2
        and abs(high.rate - 2.5) <= 0.1 * 2.5
        and np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))
        and elapsed < 10.0
    )
    verdict(
        2, "ECM recovery", ok,
        f"w={w_low:.3f}/{w_high:.3f}, "
        f"g=({low.shape:.3f},{low.rate:.3f}), ng=({high.shape:.3f},{high.rate:.3f}), "
        f"{elapsed:.2f} s",
    )


def test_criterion_3_raster_geometry():
    """In-disk pixel count vs enumeration; exact aggregation on 100 instances."""
    k = 32
    centers = -1.0 + (np.arange(k) + 0.5) * (2.0 / k)
    count = sum(
        1
        for i in range(k)
        for j in range(k)
        if centers[i] ** 2 + centers[j] ** 2 <= 1.0
    )
    mask = disk_mask(k)
    d_ok = int(mask.sum()) == count and abs(count - np.pi / 4 * k * k) <= (
        0.05 * np.pi / 4 * k * k
    )

    rng = np.random.default_rng(303)
    agg_ok = True
    for _ in range(100):
        kk = int(rng.choice([4, 8, 16, 32]))
        n = int(rng.integers(5, 300))
        xy = rng.uniform(-1, 1, size=(n, 2))
        probs = rng.dirichlet(np.ones(4), size=n)
        rasters = rasterize(probs, build_index(xy, kk))
        ref_mask = disk_mask(kk)
        maps = np.zeros((3, kk, kk))
        for s, stratum in enumerate(STRATA):
            col = STRATUM_CLASS[stratum]
            for p in range(n):
                i = min(max(int(np.floor((xy[p, 0] + 1) * kk / 2)), 0), kk - 1)
                j = min(max(int(np.floor((xy[p, 1] + 1) * kk / 2)), 0), kk - 1)
                if ref_mask[i, j]:
                    maps[s, i, j] = max(maps[s, i, j], probs[p, col])
        ref_occ = maps[:, ref_mask].sum(axis=1) / ref_mask.sum()
        if not np.array_equal(rasters.occupancies, ref_occ):
            agg_ok = False
            break
    verdict(
        3, "raster geometry", d_ok and agg_ok,
        f"D={count} (pi/4*K^2={np.pi / 4 * k * k:.1f}), aggregation exact={agg_ok}",
    )


@pytest.fixture(scope="module")
def challenging_corpus():
    samples = synth.generate_corpus(200, seed=904, challenging=True)
    return samples, [vs.normalize(s.plot) for s in samples]


def test_criterion_4_end_to_end_learning(challenging_corpus):
    """5-fold CV on 200 synthetic plots: macro MAE <= 0.15 and beats handcrafted."""
    _, plots = challenging_corpus
    config = TrainConfig(
        epochs=100, batch_size=20, m_points=4096, raster_k=32, seed=904, folds=5
    )
    t0 = time.time()
    _, pooled = cross_validate(plots, config, method="segnet")
    elapsed = time.time() - t0
    _, hand = cross_validate(plots, config, method="handcrafted")
    ok = pooled.e_avg <= 0.15 and pooled.e_avg < hand.e_avg and elapsed < 45 * 60
    verdict(
        4, "end-to-end synthetic learning", ok,
        f"segnet e={pooled.e_avg:.4f}, handcrafted e={hand.e_avg:.4f}, "
        f"{elapsed / 60:.1f} min",
    )


def test_criterion_5_regularizer_effects():
    """mu lowers map entropy (3 paired seeds); lambda raises elevation LL."""
    samples = synth.generate_corpus(24, seed=505, density=10.0)
    plots = [vs.normalize(s.plot) for s in samples]
    mixture = fit_elevation_mixture(plots)

    def run(seed, weights):
        config = TrainConfig(
            epochs=15, batch_size=8, m_points=1024, raster_k=32,
            seed=seed, weights=weights,
        )
        net = train(plots, config, mixture)
        entropies, loglik = [], []
        for plot in plots:
            _, rasters = predict(net, plot, config)
            entropies.append(entropy_loss(rasters) / 3.0)
            feats, src = vs.sample_points(plot, config.m_points, seed=config.seed)
            probs, _ = net.forward(feats[None], train=False)
            loglik.append(
                -elevation_loss(probs[0].astype(float), plot.heights[src], mixture)
            )
        return float(np.mean(entropies)), float(np.mean(loglik))

    entropy_ok = True
    details = []
    for seed in (1, 2, 3):
        e_mu, _ = run(seed, LossWeights(elevation=1.0, entropy=0.2))
        e_0, _ = run(seed, LossWeights(elevation=1.0, entropy=0.0))
        entropy_ok &= e_mu < e_0
        details.append(f"seed{seed}: {e_mu:.3f}<{e_0:.3f}")
    _, ll_lam = run(1, LossWeights(elevation=1.0, entropy=0.2))
    _, ll_0 = run(1, LossWeights(elevation=0.0, entropy=0.2))
    elevation_ok = ll_lam > ll_0
    verdict(
        5, "regularizer effects", entropy_ok and elevation_ok,
        "; ".join(details) + f"; LL {ll_lam:.3f}>{ll_0:.3f}",
    )


def test_criterion_6_handcrafted_exactness():
    """o_M / o_H within 1 pixel of the generator footprint for 95% of plots."""
    samples = synth.generate_corpus(60, seed=606, density=10.0)
    plots = [vs.normalize(s.plot) for s in samples]
    protos = fit_prototypes(plots)
    d = int(disk_mask(32).sum())
    hits = 0
    for sample, plot in zip(samples, plots):
        _, o_medium, o_high, _ = handcrafted_predict(plot, protos, k=32)
        if (
            abs(o_medium - sample.labels[1]) <= 1.0 / d + 1e-12
            and abs(o_high - sample.labels[2]) <= 1.0 / d + 1e-12
        ):
            hits += 1
    verdict(
        6, "handcrafted baseline exactness", hits >= 0.95 * len(samples),
        f"{hits}/{len(samples)} plots within 1 pixel",
    )


def test_criterion_7_real_data_tier():
    """Optional: requires the real dataset converted to the CSV schema."""
    pytest.skip(
        "[criterion 7] real-data tier: SKIPPED (no real dataset in this "
        "environment; optional per the release gate)"
    )
