"""Synthetic parametric-shape corpus: surface sampling, silhouette renders, dataset files.

Five analytic families (sphere, box, cylinder, torus, cone) are sampled
uniformly by surface area, centered at the origin, and scaled so the
analytic maximum absolute coordinate of the surface lands at 0.9. That
leaves headroom inside the normalized [-1, 1] cube and, because the scale
factor is analytic rather than empirical, keeps every emitted point exactly
on a known scaled surface for oracle checks.

Dataset layout on disk:
    out_dir/shapes/<id>.ply          ASCII PLY, float32 xyz
    out_dir/images/<id>_v<k>.png     8-bit grayscale silhouettes
    out_dir/manifest.jsonl           one JSON entry per shape
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import DataConfig
from .errors import ConfigError, SpecificationError

FAMILY_ARITY = {"sphere": 1, "box": 3, "cylinder": 2, "torus": 2, "cone": 2}
PARAM_RANGE = (0.2, 1.0)
TARGET_EXTENT = 0.9
# Orthographic view window half-width; covers the corner radius 0.9 * sqrt(3).
VIEW_HALF_EXTENT = 1.6
SPLAT_RADIUS_PX = 1.5


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: tuple[float, ...]
    seed: int

    def __post_init__(self):
        if self.family not in FAMILY_ARITY:
            raise SpecificationError(f"unknown family {self.family!r}")
        arity = FAMILY_ARITY[self.family]
        if len(self.params) != arity:
            raise SpecificationError(
                f"{self.family} takes {arity} params, got {len(self.params)}"
            )
        lo, hi = PARAM_RANGE
        for p in self.params:
            if not (lo <= p <= hi):
                raise SpecificationError(f"param {p} outside [{lo}, {hi}]")


@dataclass
class PointCloudShape:
    points: np.ndarray  # (n, 3) float64

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def validate(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.n == 0:
            raise SpecificationError(f"bad point array shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise SpecificationError("non-finite coordinates")
        if np.abs(self.points).max() > 1.0:
            raise SpecificationError("coordinates outside [-1, 1]")


@dataclass
class SilhouetteImage:
    pixels: np.ndarray  # (H, W) float in [0, 1]
    view: tuple[float, float]  # (azimuth, elevation) radians


@dataclass
class ViewRecord:
    png_path: str
    azimuth: float
    elevation: float


@dataclass
class ManifestEntry:
    shape_id: str
    spec: ShapeSpec
    ply_path: str
    views: list[ViewRecord]
    split: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


# ---------------------------------------------------------------------------
# surface samplers (all centered at the origin by construction)


def _sample_sphere(params, n, rng):
    (r,) = params
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r


def _sample_box(params, n, rng):
    hx, hy, hz = params
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    half = np.array([hx, hy, hz])
    for a in range(3):
        m = axis == a
        o1, o2 = [b for b in range(3) if b != a]
        pts[m, a] = sign[m] * half[a]
        pts[m, o1] = u[m] * half[o1]
        pts[m, o2] = v[m] * half[o2]
    return pts


def _sample_cylinder(params, n, rng):
    r, hh = params
    lateral = 2.0 * math.pi * r * (2.0 * hh)
    cap = math.pi * r * r
    probs = np.array([lateral, cap, cap])
    part = rng.choice(3, size=n, p=probs / probs.sum())
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    side = part == 0
    pts[side, 0] = r * np.cos(theta[side])
    pts[side, 1] = r * np.sin(theta[side])
    pts[side, 2] = rng.uniform(-hh, hh, size=side.sum())
    for idx, zsign in ((1, 1.0), (2, -1.0)):
        m = part == idx
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
        pts[m, 0] = rad * np.cos(theta[m])
        pts[m, 1] = rad * np.sin(theta[m])
        pts[m, 2] = zsign * hh
    return pts


def _sample_torus(params, n, rng):
    big_r, small_r = params
    out = np.empty((n, 3))
    filled = 0
    # Rejection in the tube angle: surface density is proportional to
    # R + r*cos(v); candidates with non-positive weight are interior points
    # of a self-intersecting (spindle) torus and are rejected.
    while filled < n:
        m = max(2 * (n - filled), 64)
        u = rng.uniform(0.0, 2.0 * math.pi, size=m)
        v = rng.uniform(0.0, 2.0 * math.pi, size=m)
        accept = rng.uniform(0.0, 1.0, size=m) * (big_r + small_r) < (
            big_r + small_r * np.cos(v)
        )
        u, v = u[accept], v[accept]
        take = min(n - filled, u.shape[0])
        ring = big_r + small_r * np.cos(v[:take])
        out[filled : filled + take, 0] = ring * np.cos(u[:take])
        out[filled : filled + take, 1] = ring * np.sin(u[:take])
        out[filled : filled + take, 2] = small_r * np.sin(v[:take])
        filled += take
    return out


def _sample_cone(params, n, rng):
    r, hh = params
    # Apex at z = +hh, closed base disk at z = -hh.
    slant = math.sqrt(r * r + (2.0 * hh) ** 2)
    lateral = math.pi * r * slant
    base = math.pi * r * r
    part = rng.choice(2, size=n, p=np.array([lateral, base]) / (lateral + base))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    s = np.sqrt(rng.uniform(0.0, 1.0, size=n))
    pts = np.empty((n, 3))
    lat = part == 0
    pts[lat, 0] = s[lat] * r * np.cos(theta[lat])
    pts[lat, 1] = s[lat] * r * np.sin(theta[lat])
    pts[lat, 2] = hh - s[lat] * 2.0 * hh
    flat = ~lat
    pts[flat, 0] = s[flat] * r * np.cos(theta[flat])
    pts[flat, 1] = s[flat] * r * np.sin(theta[flat])
    pts[flat, 2] = -hh
    return pts


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "torus": _sample_torus,
    "cone": _sample_cone,
}


def analytic_extent(spec: ShapeSpec) -> float:
    """Maximum absolute coordinate over the un-scaled parametric surface."""
    p = spec.params
    if spec.family == "sphere":
        return p[0]
    if spec.family == "box":
        return max(p)
    if spec.family == "cylinder":
        return max(p[0], p[1])
    if spec.family == "torus":
        return p[0] + p[1]
    if spec.family == "cone":
        return max(p[0], p[1])
    raise SpecificationError(spec.family)


def shape_scale(spec: ShapeSpec) -> float:
    """Factor applied to raw surface points so the extent lands at 0.9."""
    return TARGET_EXTENT / analytic_extent(spec)


def generate_shape(
    spec: ShapeSpec, n_points: int, rng: np.random.Generator | None = None
) -> PointCloudShape:
    """Sample n_points uniformly on the spec's surface, centered and scaled.

    Deterministic for a fixed (spec, n_points, rng seed); with rng omitted
    the generator is seeded from spec.seed, so a shape can always be
    regenerated bit-exactly from its spec alone.
    """
    if n_points < 8:
        raise SpecificationError("n_points must be at least 8")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    raw = _SAMPLERS[spec.family](spec.params, n_points, rng)
    shape = PointCloudShape(points=raw * shape_scale(spec))
    shape.validate()
    return shape


# ---------------------------------------------------------------------------
# silhouette rendering


def view_basis(azimuth: float, elevation: float) -> tuple[np.ndarray, np.ndarray]:
    """Right/up unit vectors of the orthographic image plane for a view."""
    d = np.array(
        [
            math.cos(elevation) * math.cos(azimuth),
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ]
    )
    right = np.array([-math.sin(azimuth), math.cos(azimuth), 0.0])
    up = np.cross(d, right)
    return right, up


def render_silhouette(
    shape: PointCloudShape, view: tuple[float, float], res: int = 32
) -> SilhouetteImage:
    """Orthographic binary splat of the cloud onto a res x res grid.

    Each point becomes a filled disk of radius 1.5 px; a pixel is lit when
    its center falls inside any disk. Pixel centers are symmetric about the
    optical axis, so mirrored views produce exactly mirrored images.
    """
    if res < 8:
        raise ConfigError("resolution must be at least 8")
    az, el = view
    right, up = view_basis(az, el)
    u = shape.points @ right
    v = shape.points @ up

    half = VIEW_HALF_EXTENT
    px = 2.0 * half / res
    centers = (np.arange(res) + 0.5) * px - half
    # rows top-to-bottom follow decreasing v
    row_c = centers[::-1]
    du = centers[None, :, None] - u[None, None, :]
    dv = row_c[:, None, None] - v[None, None, :]
    lit = (du * du + dv * dv) <= (SPLAT_RADIUS_PX * px) ** 2
    pixels = lit.any(axis=2).astype(np.float64)
    return SilhouetteImage(pixels=pixels, view=(az, el))


# ---------------------------------------------------------------------------
# file formats


def write_ply(path: Path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float32)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    for x, y, z in pts:
        lines.append(f"{x:.9g} {y:.9g} {z:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path: Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ConfigError(f"{path} is not a PLY file")
    n = None
    body = 0
    for i, line in enumerate(lines):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        if line.strip() == "end_header":
            body = i + 1
            break
    if n is None:
        raise ConfigError(f"{path}: missing vertex element")
    rows = [[np.float32(t) for t in lines[body + j].split()] for j in range(n)]
    return np.asarray(rows, dtype=np.float32).astype(np.float64)


def write_png(path: Path, pixels: np.ndarray) -> None:
    img = np.clip(np.asarray(pixels), 0.0, 1.0)
    Image.fromarray((img * 255.0).round().astype(np.uint8), mode="L").save(path)


def read_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# dataset construction


def dataset_views(views_per_shape: int, elevation: float) -> list[tuple[float, float]]:
    """Evenly spaced azimuths at a fixed elevation."""
    return [
        (2.0 * math.pi * k / views_per_shape, elevation) for k in range(views_per_shape)
    ]


def draw_shape_specs(cfg: DataConfig) -> list[tuple[str, ShapeSpec]]:
    """Deterministically draw (shape_id, spec) pairs from the config seed."""
    rng = np.random.default_rng(cfg.seed)
    lo, hi = PARAM_RANGE
    out = []
    for family in cfg.families:
        for i in range(cfg.shapes_per_family):
            params = tuple(
                float(x) for x in rng.uniform(lo, hi, size=FAMILY_ARITY[family])
            )
            seed = int(rng.integers(0, 2**63, dtype=np.int64))
            out.append((f"{family}{i:03d}", ShapeSpec(family, params, seed)))
    return out


def build_dataset(cfg: DataConfig, out_dir: Path) -> DatasetManifest:
    """Generate shapes, render views, write PLY/PNG files and the manifest."""
    out = Path(out_dir)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)

    specs = draw_shape_specs(cfg)
    ids = [sid for sid, _ in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate shape ids")

    split_rng = np.random.default_rng(cfg.seed + 1)
    n_test = int(round(cfg.test_fraction * len(specs)))
    test_ids = set(split_rng.permutation(ids)[:n_test].tolist()) if n_test else set()

    views = dataset_views(cfg.views_per_shape, cfg.elevation)
    entries = []
    for shape_id, spec in specs:
        shape = generate_shape(spec, cfg.n_points)
        ply_rel = f"shapes/{shape_id}.ply"
        write_ply(out / ply_rel, shape.points)
        view_records = []
        for k, (az, el) in enumerate(views):
            img = render_silhouette(shape, (az, el), cfg.image_res)
            png_rel = f"images/{shape_id}_v{k}.png"
            write_png(out / png_rel, img.pixels)
            view_records.append(ViewRecord(png_rel, az, el))
        entries.append(
            ManifestEntry(
                shape_id=shape_id,
                spec=spec,
                ply_path=ply_rel,
                views=view_records,
                split="test" if shape_id in test_ids else "train",
            )
        )

    manifest = DatasetManifest(root=out, entries=entries)
    write_manifest(manifest, out / "manifest.jsonl")
    return manifest


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    lines = []
    for e in manifest.entries:
        lines.append(
            json.dumps(
                {
                    "shape_id": e.shape_id,
                    "family": e.spec.family,
                    "params": list(e.spec.params),
                    "seed": e.spec.seed,
                    "ply": e.ply_path,
                    "views": [
                        {"png": v.png_path, "azimuth": v.azimuth, "elevation": v.elevation}
                        for v in e.views
                    ],
                    "split": e.split,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        entries.append(
            ManifestEntry(
                shape_id=rec["shape_id"],
                spec=ShapeSpec(rec["family"], tuple(rec["params"]), rec["seed"]),
                ply_path=rec["ply"],
                views=[ViewRecord(v["png"], v["azimuth"], v["elevation"]) for v in rec["views"]],
                split=rec["split"],
            )
        )
    return DatasetManifest(root=path.parent, entries=entries)
