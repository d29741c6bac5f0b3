"""Project per-point class probabilities onto stratum occupancy rasters.

Each point falls into one cell of a K x K grid covering the plot square;
a cell's occupancy for a stratum is the maximum predicted probability of
the matching class over its points, and the plot-level occupancy averages
the cells whose centers lie inside the inscribed disk.  The same max
operation is differentiated during training by routing each cell's
gradient to its argmax point.
"""

import numpy as np

from vegstrata import build_index, disk_mask, normalize, rasterize
from vegstrata import synth

sample = synth.generate(
    synth.SceneSpec(seed=5, density=6.0, k=16,
                    grass=(synth.GrassPatch(-3.0, 0.0, 5.0),),
                    trees=(synth.TreeCrown(4.0, 3.0, 3.0, 2.5, 2.0, 6.0),))
)
plot = normalize(sample.plot)
index = build_index(plot.features[:, :2], 16)
print(f"{plot.n_points} points -> {index.n_in_disk} in-disk cells (K=16)")

# Fake a perfect classifier from the generator's point classes to show the
# projection in isolation.
probs = np.zeros((plot.n_points, 4))
cls_to_col = {0: 0, 1: 1, 2: 2, 3: 3, 4: 0}
for i, c in enumerate(sample.point_class):
    probs[i, cls_to_col[c]] = 1.0

rasters = rasterize(probs, index)
print(f"aggregated: o_low={rasters.o_low:.3f} o_medium={rasters.o_medium:.3f} "
      f"o_high={rasters.o_high:.3f}")
print(f"labels:     o_low={sample.labels[0]:.3f} o_medium={sample.labels[1]:.3f} "
      f"o_high={sample.labels[2]:.3f}")

mask = disk_mask(16)
print("\nhigh-stratum occupancy map (#=1, .=0, space=outside disk):")
for i in range(16):
    row = ""
    for j in range(16):
        if not mask[i, j]:
            row += " "
        else:
            row += "#" if rasters.maps[2, i, j] > 0.5 else "."
    print("  " + row)
