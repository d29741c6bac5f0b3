"""Compare the handcrafted baseline against the learned model.

The handcrafted predictor thresholds heights into bands and separates
soil from grass by nearest prototype; on cleanly separable scenes it is
near-exact.  On the challenging recipe (ambiguous radiometry, heights
leaking across bands, trunk returns) it degrades, while the weakly
supervised network can still exploit the joint geometry + radiometry.
This demo uses a small corpus and few epochs, so treat the numbers as a
direction, not a benchmark; the acceptance suite runs the full protocol.
"""

import numpy as np

from vegstrata import TrainConfig, cross_validate, normalize
from vegstrata import synth


def pooled_mae(plots, method, config):
    _, pooled = cross_validate(plots, config, method=method)
    return pooled


for challenging in (False, True):
    name = "challenging" if challenging else "separable"
    samples = synth.generate_corpus(30, seed=42, density=8.0,
                                    challenging=challenging)
    plots = [normalize(s.plot) for s in samples]
    config = TrainConfig(epochs=25, batch_size=10, m_points=1024, raster_k=32,
                         seed=0, folds=3)
    hand = pooled_mae(plots, "handcrafted", config)
    net = pooled_mae(plots, "segnet", config)
    print(f"{name} corpus (30 plots, 3-fold CV):")
    print(f"  handcrafted  e_low={hand.e_low:.3f} e_medium={hand.e_medium:.3f} "
          f"e_high={hand.e_high:.3f} e_avg={hand.e_avg:.3f}")
    print(f"  segnet       e_low={net.e_low:.3f} e_medium={net.e_medium:.3f} "
          f"e_high={net.e_high:.3f} e_avg={net.e_avg:.3f}")
    print()
