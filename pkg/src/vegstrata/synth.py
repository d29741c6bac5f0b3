"""Synthetic plot generator with exact occupancy ground truth.

Scenes are built from geometric primitives on a flat (optionally tilted)
ground: grass patches are disks, bushes are cylinders with heights in
[0.5, 1.5), tree crowns are ellipsoids with base above 1.5 m.  Ground
returns cover the whole plot disk; vegetation returns are sampled per
occupied raster cell so the generated point cloud occupies exactly the
cells of the pixel-exact reference rasters.  Labels are the aggregation of
those reference rasters; analytic footprint areas are kept alongside for
cross-checks.

Two small generation details keep per-plot feature scaling comparable
across plots: a ring of ground returns sits exactly on the plot boundary
(so the recovered plot center is exact), and every plot carries two
calibration returns pinning the intensity range and the maximum return
number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import shapely
import shapely.affinity

from .errors import ContractError
from .pointcloud import Plot
from .raster import disk_mask

N_EDGE_POINTS = 24
PIXEL_JITTER = 0.3  # vegetation points stay in the central 60 % of their cell


@dataclass(frozen=True)
class MaterialSignature:
    """Radiometric identity of one material in normalized feature space.

    ``rgbni`` holds mean r, g, b, nir, intensity in [0, 1]; the return
    number is drawn from ``rn_probs`` over {1, 2, 3}.
    """

    rgbni: tuple[float, float, float, float, float]
    sigma: float
    rn_probs: tuple[float, float, float]

    def mean6(self) -> np.ndarray:
        """Expected normalized 6-vector (r, g, b, nir, intensity, rn/3)."""
        e_rn = sum(p * (i + 1) for i, p in enumerate(self.rn_probs))
        return np.array(list(self.rgbni) + [e_rn / 3.0])


# Cleanly separable materials (prototype and baseline oracles).
DEFAULT_SIGNATURES = {
    "soil": MaterialSignature((0.50, 0.32, 0.22, 0.15, 0.70), 0.05, (1.0, 0.0, 0.0)),
    "grass": MaterialSignature((0.20, 0.55, 0.15, 0.80, 0.45), 0.05, (1.0, 0.0, 0.0)),
    "bush": MaterialSignature((0.18, 0.42, 0.20, 0.65, 0.30), 0.05, (0.7, 0.3, 0.0)),
    "crown": MaterialSignature((0.12, 0.38, 0.10, 0.75, 0.22), 0.05, (0.5, 0.3, 0.2)),
    "trunk": MaterialSignature((0.35, 0.26, 0.18, 0.30, 0.52), 0.05, (0.0, 0.5, 0.5)),
}

# Radiometrically ambiguous grass vs soil: the prototype gap shrinks well
# below the per-channel noise, so geometry has to disambiguate.
CHALLENGING_SIGNATURES = dict(
    DEFAULT_SIGNATURES,
    soil=MaterialSignature((0.35, 0.44, 0.19, 0.54, 0.56), 0.08, (1.0, 0.0, 0.0)),
    grass=MaterialSignature((0.33, 0.45, 0.18, 0.56, 0.54), 0.08, (1.0, 0.0, 0.0)),
)


@dataclass(frozen=True)
class GrassPatch:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class Bush:
    cx: float
    cy: float
    r: float
    height: float  # in [0.5, 1.5)


@dataclass(frozen=True)
class TreeCrown:
    cx: float
    cy: float
    rx: float
    ry: float
    base: float  # >= 1.5 m
    top: float


@dataclass(frozen=True)
class SceneSpec:
    """Full recipe for one synthetic plot."""

    seed: int
    radius: float = 10.0
    density: float = 10.0  # ground returns per square meter
    k: int = 32
    grass: tuple = ()
    bushes: tuple = ()
    trees: tuple = ()
    signatures: dict = field(default_factory=lambda: dict(DEFAULT_SIGNATURES))
    grass_height_range: tuple[float, float] = (0.02, 0.45)
    soil_height_range: tuple[float, float] = (0.0, 0.05)
    bush_return_range: tuple[float, float] = (0.55, 1.45)
    crown_margin: float = 0.1
    trunk_points: int = 3
    tilt: float = 0.0
    origin: tuple[float, float, float] = (650000.0, 6800000.0, 120.0)

    def __post_init__(self):
        for bush in self.bushes:
            if not 0.5 <= bush.height < 1.5:
                raise ContractError("bush heights must lie in [0.5, 1.5)")
            if np.hypot(bush.cx, bush.cy) + bush.r > self.radius + 1e-9:
                raise ContractError("bush footprint outside the plot disk")
        for tree in self.trees:
            if tree.base < 1.5:
                raise ContractError("crown base must be >= 1.5 m")
            if np.hypot(tree.cx, tree.cy) + max(tree.rx, tree.ry) > self.radius + 1e-9:
                raise ContractError("crown footprint outside the plot disk")
        for patch in self.grass:
            if np.hypot(patch.cx, patch.cy) + patch.r > self.radius + 1e-9:
                raise ContractError("grass patch outside the plot disk")


@dataclass
class SceneSample:
    """Generated plot plus every piece of ground truth the generator knows."""

    spec: SceneSpec
    plot: Plot
    labels: tuple[float, float, float]
    reference_rasters: np.ndarray  # (3, k, k) bool, footprint per stratum
    analytic_labels: tuple[float, float, float]
    point_class: np.ndarray  # per-point material index into CLASS_NAMES


CLASS_NAMES = ("soil", "grass", "bush", "crown", "trunk")


def _pixel_centers(k: int, radius: float) -> np.ndarray:
    return (-1.0 + (np.arange(k) + 0.5) * (2.0 / k)) * radius


def _grass_mask(spec, gx, gy):
    mask = np.zeros_like(gx, dtype=bool)
    for p in spec.grass:
        mask |= (gx - p.cx) ** 2 + (gy - p.cy) ** 2 <= p.r ** 2
    return mask


def _bush_mask(spec, gx, gy):
    mask = np.zeros_like(gx, dtype=bool)
    for bush in spec.bushes:
        mask |= (gx - bush.cx) ** 2 + (gy - bush.cy) ** 2 <= bush.r ** 2
    return mask


def _crown_mask(spec, gx, gy):
    mask = np.zeros_like(gx, dtype=bool)
    for t in spec.trees:
        mask |= ((gx - t.cx) / t.rx) ** 2 + ((gy - t.cy) / t.ry) ** 2 <= 1.0
    return mask


def reference_rasters(spec: SceneSpec) -> np.ndarray:
    """Pixel-exact footprints: cell center inside the footprint and the disk."""
    centers = _pixel_centers(spec.k, spec.radius)
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    in_disk = disk_mask(spec.k)
    return np.stack(
        [
            _grass_mask(spec, gx, gy) & in_disk,
            _bush_mask(spec, gx, gy) & in_disk,
            _crown_mask(spec, gx, gy) & in_disk,
        ]
    )


def analytic_labels(spec: SceneSpec) -> tuple[float, float, float]:
    """Footprint union areas over the disk area, via exact geometry."""
    disk = shapely.Point(0, 0).buffer(spec.radius, quad_segs=256)
    out = []
    for shapes in (
        [shapely.Point(p.cx, p.cy).buffer(p.r, quad_segs=256) for p in spec.grass],
        [shapely.Point(b.cx, b.cy).buffer(b.r, quad_segs=256) for b in spec.bushes],
        [
            shapely.affinity.scale(
                shapely.Point(t.cx, t.cy).buffer(1.0, quad_segs=256), t.rx, t.ry,
                origin=(t.cx, t.cy),
            )
            for t in spec.trees
        ],
    ):
        union = shapely.union_all(shapes) if shapes else shapely.Polygon()
        out.append(union.intersection(disk).area / disk.area)
    return tuple(out)


def _draw_features(rng, sig: MaterialSignature, n: int):
    rgbni = np.clip(
        sig.rgbni + rng.normal(0.0, sig.sigma, size=(n, 5)), 0.0, 1.0
    )
    rn = rng.choice([1, 2, 3], size=n, p=sig.rn_probs)
    return rgbni, rn


def _cell_points(rng, occupied, centers, cell, per_cell_extra):
    """One guaranteed point per occupied cell plus extras, jittered centrally."""
    ii, jj = np.nonzero(occupied)
    reps = 1 + rng.poisson(per_cell_extra, size=ii.size)
    ci = np.repeat(centers[ii], reps)
    cj = np.repeat(centers[jj], reps)
    n = ci.size
    jitter = rng.uniform(-PIXEL_JITTER, PIXEL_JITTER, size=(n, 2)) * (cell / 2.0)
    return np.column_stack([ci, cj]) + jitter


def generate(spec: SceneSpec) -> SceneSample:
    """Sample one plot according to the scene recipe. Deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    radius, k = spec.radius, spec.k
    cell = 2.0 * radius / k
    centers = _pixel_centers(k, radius)
    rasters = reference_rasters(spec)
    d = int(disk_mask(k).sum())
    labels = tuple(float(m.sum()) / d for m in rasters)

    xy_parts, z_parts, cls_parts = [], [], []

    # Ground returns everywhere in the disk, plus the exact boundary ring.
    n_ground = int(round(spec.density * np.pi * radius * radius))
    r = radius * np.sqrt(rng.random(n_ground))
    theta = rng.uniform(0.0, 2.0 * np.pi, n_ground)
    gx, gy = r * np.cos(theta), r * np.sin(theta)
    grassy = _grass_mask(spec, gx, gy)
    h_soil = rng.uniform(*spec.soil_height_range, n_ground)
    h_grass = rng.uniform(*spec.grass_height_range, n_ground)
    xy_parts.append(np.column_stack([gx, gy]))
    z_parts.append(np.where(grassy, h_grass, h_soil))
    cls_parts.append(np.where(grassy, 1, 0))

    ring_theta = np.linspace(0.0, 2.0 * np.pi, N_EDGE_POINTS, endpoint=False)
    xy_parts.append(radius * np.column_stack([np.cos(ring_theta), np.sin(ring_theta)]))
    z_parts.append(np.full(N_EDGE_POINTS, 0.01))
    cls_parts.append(np.zeros(N_EDGE_POINTS, dtype=int))

    per_cell_extra = max(spec.density * cell * cell - 1.0, 0.5)

    # Bush returns, one cell at a time so occupied cells match the raster.
    if rasters[1].any():
        xy = _cell_points(rng, rasters[1], centers, cell, per_cell_extra)
        lo, hi = spec.bush_return_range
        xy_parts.append(xy)
        z_parts.append(rng.uniform(lo, hi, xy.shape[0]))
        cls_parts.append(np.full(xy.shape[0], 2))

    # Crown returns.
    if rasters[2].any():
        xy = _cell_points(rng, rasters[2], centers, cell, per_cell_extra)
        z = np.empty(xy.shape[0])
        z[:] = 1.5 + spec.crown_margin
        for t in spec.trees:
            inside = ((xy[:, 0] - t.cx) / t.rx) ** 2 + (
                (xy[:, 1] - t.cy) / t.ry
            ) ** 2 <= 1.0
            z[inside] = rng.uniform(
                t.base + spec.crown_margin, t.top, int(inside.sum())
            )
        xy_parts.append(xy)
        z_parts.append(z)
        cls_parts.append(np.full(xy.shape[0], 3))

    # Sparse trunk returns under each crown (excluded from every stratum).
    for t in spec.trees:
        if spec.trunk_points <= 0:
            continue
        n = spec.trunk_points
        xy = np.column_stack(
            [t.cx + rng.normal(0, 0.05, n), t.cy + rng.normal(0, 0.05, n)]
        )
        xy_parts.append(xy)
        z_parts.append(rng.uniform(0.3, t.base - 0.1, n))
        cls_parts.append(np.full(n, 4))

    xy = np.concatenate(xy_parts)
    height = np.concatenate(z_parts)
    cls = np.concatenate(cls_parts)
    n_total = xy.shape[0]

    rgbni = np.empty((n_total, 5))
    rn = np.empty(n_total, dtype=int)
    for ci, name in enumerate(CLASS_NAMES):
        idx = np.nonzero(cls == ci)[0]
        if idx.size:
            rgbni[idx], rn[idx] = _draw_features(rng, spec.signatures[name], idx.size)

    # Calibration returns pin the per-plot intensity range and max return.
    cal_xy = np.array([[radius, 0.0], [-radius, 0.0]])
    cal_rgbni, _ = _draw_features(rng, spec.signatures["soil"], 2)
    cal_rgbni[:, 4] = (0.0, 1.0)
    xy = np.concatenate([xy, cal_xy])
    height = np.concatenate([height, [0.01, 0.01]])
    cls = np.concatenate([cls, [0, 0]])
    rgbni = np.concatenate([rgbni, cal_rgbni])
    rn = np.concatenate([rn, [1, 3]])
    n_total += 2

    order = rng.permutation(n_total)
    xy, height, cls, rgbni, rn = (
        xy[order], height[order], cls[order], rgbni[order], rn[order]
    )

    x0, y0, z0 = spec.origin
    terrain = spec.tilt * xy[:, 0]
    points = np.column_stack(
        [
            x0 + xy[:, 0],
            y0 + xy[:, 1],
            z0 + terrain + height,
            rgbni[:, :4] * 255.0,
            rgbni[:, 4] * 1000.0,
            rn.astype(float),
        ]
    )
    plot = Plot(
        id=f"synth_{spec.seed:05d}",
        points=points,
        radius=radius,
        labels=labels,
        center=(x0, y0),
    )
    return SceneSample(
        spec=spec,
        plot=plot,
        labels=labels,
        reference_rasters=rasters,
        analytic_labels=analytic_labels(spec),
        point_class=cls,
    )


def random_scene(
    seed: int,
    radius: float = 10.0,
    density: float = 10.0,
    k: int = 32,
    challenging: bool = False,
    rng: np.random.Generator | None = None,
) -> SceneSpec:
    """Draw a random scene recipe.

    ``challenging`` selects the hard corpus: near-ambiguous grass/soil
    radiometry, taller grass, bush returns leaking outside the nominal
    0.5-1.5 m band, and trunk returns; height thresholds alone then no
    longer solve the task.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    grass, bushes, trees = [], [], []

    layout = rng.random()
    if layout < 0.08:
        pass  # bare plot, no grass
    elif layout < 0.16:
        grass.append(GrassPatch(0.0, 0.0, radius))  # fully grassed
    else:
        for _ in range(rng.integers(1, 4)):
            r = rng.uniform(1.5, 6.0)
            rho = rng.uniform(0.0, radius - r)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            grass.append(GrassPatch(rho * np.cos(ang), rho * np.sin(ang), r))

    for _ in range(rng.integers(0, 5)):
        r = rng.uniform(0.8, 2.5)
        rho = rng.uniform(0.0, radius - r)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        bushes.append(
            Bush(rho * np.cos(ang), rho * np.sin(ang), r, rng.uniform(0.6, 1.4))
        )

    for _ in range(rng.integers(0, 3)):
        rx = rng.uniform(1.5, 4.0)
        ry = rng.uniform(0.75 * rx, 1.25 * rx)
        rho = rng.uniform(0.0, max(radius - max(rx, ry), 0.0))
        ang = rng.uniform(0.0, 2.0 * np.pi)
        base = rng.uniform(1.6, 3.0)
        trees.append(
            TreeCrown(
                rho * np.cos(ang), rho * np.sin(ang), rx, ry, base,
                base + rng.uniform(2.0, 6.0),
            )
        )

    spec = SceneSpec(
        seed=seed,
        radius=radius,
        density=density,
        k=k,
        grass=tuple(grass),
        bushes=tuple(bushes),
        trees=tuple(trees),
    )
    if challenging:
        spec = replace(
            spec,
            signatures=dict(CHALLENGING_SIGNATURES),
            grass_height_range=(0.02, 0.75),
            bush_return_range=(0.35, 1.7),
        )
    return spec


def generate_corpus(
    n_plots: int,
    seed: int,
    radius: float = 10.0,
    density: float = 10.0,
    k: int = 32,
    challenging: bool = False,
    trunk_points: int | None = None,
) -> list[SceneSample]:
    """Generate a seeded corpus of random plots.

    The first four plots are forced to the lower-stratum extremes (two bare,
    two fully grassed) so prototype fitting always has its anchors.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_plots):
        plot_seed = int(rng.integers(0, 2**31 - 1))
        spec = random_scene(
            plot_seed, radius=radius, density=density, k=k, challenging=challenging
        )
        if i < 2:
            spec = replace(spec, grass=())
        elif i < 4:
            spec = replace(spec, grass=(GrassPatch(0.0, 0.0, radius),))
        if trunk_points is not None:
            spec = replace(spec, trunk_points=trunk_points)
        if not challenging:
            spec = replace(spec, trunk_points=0 if trunk_points is None else trunk_points)
        samples.append(generate(spec))
    return samples
