"""Projection of per-point class probabilities onto stratum occupancy rasters.

A plot's points live in the normalized square [-1, 1]^2 with the plot disk
inscribed in it.  Each point falls into one cell of a K x K grid; the
occupancy of a cell for a stratum is the maximum predicted probability of
that stratum over the points projected into it.  Plot-level occupancy is
the mean over cells whose center lies inside the disk.

The max is sub-differentiable: the backward pass routes each cell's
gradient to the point that attained the maximum (lowest index on ties),
which keeps training deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

# Column layout of probability matrices: [bare_soil, low_veg, medium_veg, high_veg].
CLASS_BARE_SOIL = 0
CLASS_LOW_VEG = 1
CLASS_MEDIUM_VEG = 2
CLASS_HIGH_VEG = 3

STRATA = ("low", "medium", "high")
# Class column feeding each stratum map.
STRATUM_CLASS = {"low": CLASS_LOW_VEG, "medium": CLASS_MEDIUM_VEG, "high": CLASS_HIGH_VEG}


@dataclass
class PixelIndexMap:
    """Point-to-pixel assignment for one plot.

    Attributes
    ----------
    k : grid side length.
    pixel_id : flattened pixel index (i * k + j) per point.
    in_disk_point : whether each point's pixel center lies inside the disk.
    mask : (k, k) boolean, True for pixels whose center is inside the
        inscribed unit disk.
    n_in_disk : number of True cells in ``mask`` (the D of the aggregation).
    """

    k: int
    pixel_id: np.ndarray
    in_disk_point: np.ndarray
    mask: np.ndarray
    n_in_disk: int

    @property
    def n_points(self) -> int:
        return self.pixel_id.shape[0]


def disk_mask(k: int) -> np.ndarray:
    """Boolean (k, k) mask of pixels whose center falls in the unit disk."""
    centers = -1.0 + (np.arange(k) + 0.5) * (2.0 / k)
    cx, cy = np.meshgrid(centers, centers, indexing="ij")
    return cx * cx + cy * cy <= 1.0


def build_index(points_xy: np.ndarray, k: int) -> PixelIndexMap:
    """Assign each point in [-1, 1]^2 to its grid cell.

    Cell indices are ``floor((coord + 1) * k / 2)`` clamped into [0, k-1] so
    the coordinate 1.0 itself lands in the last cell.
    """
    if k < 2:
        raise ContractError("raster needs k >= 2")
    xy = np.asarray(points_xy, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise ContractError("points_xy must have shape (N, 2)")
    ij = np.floor((xy + 1.0) * (k / 2.0)).astype(np.int64)
    np.clip(ij, 0, k - 1, out=ij)
    pixel_id = ij[:, 0] * k + ij[:, 1]
    mask = disk_mask(k)
    return PixelIndexMap(
        k=k,
        pixel_id=pixel_id,
        in_disk_point=mask.reshape(-1)[pixel_id],
        mask=mask,
        n_in_disk=int(mask.sum()),
    )


@dataclass
class StratumRasterSet:
    """Three K x K occupancy maps with their plot-level aggregates.

    ``maps`` has shape (3, k, k) ordered (low, medium, high); out-of-disk
    cells are 0 and excluded from the aggregation.  ``argmax`` records, per
    stratum and cell, the index of the point attaining the cell maximum
    (-1 for cells without points) for the backward pass.
    """

    k: int
    maps: np.ndarray
    occupancies: np.ndarray  # (3,) aggregated o_low, o_medium, o_high
    argmax: np.ndarray = field(repr=False)
    _index: PixelIndexMap | None = field(default=None, repr=False)

    @property
    def o_low(self) -> float:
        return float(self.occupancies[0])

    @property
    def o_medium(self) -> float:
        return float(self.occupancies[1])

    @property
    def o_high(self) -> float:
        return float(self.occupancies[2])


def rasterize(probs: np.ndarray, index: PixelIndexMap) -> StratumRasterSet:
    """Per-cell maximum of the stratum class probabilities plus aggregation.

    Cells inside the disk that receive no point keep occupancy 0; the
    aggregation divides by the number of in-disk cells regardless.
    """
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[1] != 4:
        raise ContractError("probs must have shape (N, 4)")
    if probs.shape[0] != index.n_points:
        raise ContractError(
            f"probs rows ({probs.shape[0]}) != indexed points ({index.n_points})"
        )
    k = index.k
    n = probs.shape[0]
    sel = index.in_disk_point
    pid = index.pixel_id[sel]
    idx_orig = np.nonzero(sel)[0]

    maps = np.zeros((3, k * k), dtype=probs.dtype)
    argmax = np.full((3, k * k), -1, dtype=np.int64)
    for s, stratum in enumerate(STRATA):
        vals = probs[sel, STRATUM_CLASS[stratum]]
        if pid.size:
            # Sort by (pixel, -value, original index): the first row of each
            # pixel group is its max with the lowest-index tie-break.
            order = np.lexsort((idx_orig, -vals, pid))
            pid_sorted = pid[order]
            first = np.ones(pid_sorted.size, dtype=bool)
            first[1:] = pid_sorted[1:] != pid_sorted[:-1]
            winners = order[first]
            argmax[s, pid_sorted[first]] = idx_orig[winners]
            maps[s, pid_sorted[first]] = vals[winners]
    maps = maps.reshape(3, k, k)
    argmax = argmax.reshape(3, k, k)
    flat_mask = index.mask
    occ = maps[:, flat_mask].sum(axis=1) / index.n_in_disk
    return StratumRasterSet(k=k, maps=maps, occupancies=occ, argmax=argmax, _index=index)


def rasterize_backward(
    rasters: StratumRasterSet,
    d_maps: np.ndarray,
    d_occupancies: np.ndarray,
    index: PixelIndexMap,
) -> np.ndarray:
    """Gradients on the (N, 4) probabilities from upstream raster gradients.

    ``d_maps`` is (3, k, k) and ``d_occupancies`` (3,).  The aggregation
    spreads 1/D to every in-disk cell; each cell then forwards its total
    gradient to its recorded argmax point.
    """
    if index is not rasters._index:
        raise ContractError("index does not match the one used in the forward pass")
    d_maps = np.asarray(d_maps)
    d_occ = np.asarray(d_occupancies)
    if d_maps.shape != (3, index.k, index.k) or d_occ.shape != (3,):
        raise ContractError("upstream gradient shapes do not match the raster set")
    dprobs = np.zeros((index.n_points, 4), dtype=d_maps.dtype)
    inv_d = 1.0 / index.n_in_disk
    for s, stratum in enumerate(STRATA):
        total = d_maps[s] + d_occ[s] * inv_d * index.mask
        arg = rasters.argmax[s]
        occupied = arg >= 0
        # Points landing in out-of-disk cells never entered the forward max.
        occupied &= index.mask
        np.add.at(dprobs[:, STRATUM_CLASS[stratum]], arg[occupied], total[occupied])
    return dprobs


def export_raster_csv(path, stratum_map: np.ndarray, mask: np.ndarray) -> None:
    """Write one stratum map as K rows x K comma-separated columns.

    Out-of-disk cells are written as -1.
    """
    out = np.where(mask, stratum_map, -1.0)
    np.savetxt(path, out, delimiter=",", fmt="%.6f")


def export_raster_pgm(path, stratum_map: np.ndarray, mask: np.ndarray) -> None:
    """Write one stratum map as an 8-bit binary PGM; out-of-disk cells are 0."""
    vals = np.where(mask, stratum_map, 0.0)
    pixels = np.round(255.0 * np.clip(vals, 0.0, 1.0)).astype(np.uint8)
    k = stratum_map.shape[0]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{k} {k}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
