"""Point cloud I/O (ASCII PLY, CSV) and the synthetic tabletop generator."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ScenarioError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(len(pts), 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(len(pts))

    def __len__(self) -> int:
        return len(self.points)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)))

    def select(self, mask_or_index) -> "PointCloud":
        return PointCloud(
            self.points[mask_or_index],
            None if self.colors is None else self.colors[mask_or_index],
            None if self.labels is None else self.labels[mask_or_index],
        )

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud.empty()
        pts = np.concatenate([c.points for c in clouds])
        colors = labels = None
        if all(c.colors is not None for c in clouds):
            colors = np.concatenate([c.colors for c in clouds])
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        return PointCloud(pts, colors, labels)


# ---------------------------------------------------------------------------
# file formats

_PLY_TYPES = {
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64",
}


def _guess_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return "ply-ascii"
    if ext in (".csv", ".xyz", ".txt"):
        return "xyz-csv"
    raise ParseError(f"cannot infer point cloud format from extension {ext!r}", path=path)


def load_point_cloud(path: str, format: Optional[str] = None) -> PointCloud:
    fmt = format or _guess_format(path)
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if fmt == "ply-ascii":
        return _parse_ply(lines, path)
    if fmt == "xyz-csv":
        return _parse_csv(lines, path)
    raise ValueError(f"unknown point cloud format {fmt!r}")


def _parse_ply(lines: list[str], path: str) -> PointCloud:
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)
    elements: list[tuple[str, int, list[str]]] = []
    lineno = 1
    header_done = False
    seen_format = False
    while lineno < len(lines):
        raw = lines[lineno].strip()
        lineno += 1
        if not raw or raw.startswith("comment") or raw.startswith("obj_info"):
            continue
        tok = raw.split()
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] != "ascii":
                raise ParseError(f"unsupported format line {raw!r} (only ascii 1.0)", lineno, path)
            seen_format = True
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"malformed element line {raw!r}", lineno, path)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"non-integer element count {tok[2]!r}", lineno, path) from None
            if count < 0:
                raise ParseError("negative element count", lineno, path)
            elements.append((tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno, path)
            if len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1][2].append(tok[2])
            elif len(tok) == 5 and tok[1] == "list":
                elements[-1][2].append("__list__:" + tok[4])
            else:
                raise ParseError(f"malformed property line {raw!r}", lineno, path)
        elif tok[0] == "end_header":
            header_done = True
            break
        else:
            raise ParseError(f"unexpected header line {raw!r}", lineno, path)
    if not header_done:
        raise ParseError("truncated header (no end_header)", lineno, path)
    if not seen_format:
        raise ParseError("missing format line", lineno, path)

    body = lines[lineno:]
    cursor = 0
    result = None
    for name, count, props in elements:
        if name != "vertex":
            # skip foreign elements line by line
            if cursor + count > len(body):
                raise ParseError(f"truncated file: element {name!r} expects {count} rows",
                                 lineno + len(body), path)
            cursor += count
            continue
        if any(p.startswith("__list__") for p in props):
            raise ParseError("list properties on vertices are not supported", lineno, path)
        for axis in ("x", "y", "z"):
            if axis not in props:
                raise ParseError(f"vertex element lacks property {axis!r}", lineno, path)
        rows = []
        for k in range(count):
            if cursor >= len(body):
                raise ParseError(
                    f"truncated file: expected {count} vertices, found {k}",
                    lineno + cursor + 1, path,
                )
            text = body[cursor]
            cursor += 1
            fields = text.split()
            if len(fields) != len(props):
                raise ParseError(
                    f"expected {len(props)} values, got {len(fields)}", lineno + cursor, path
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise ParseError(f"non-numeric field in {text!r}", lineno + cursor, path) from None
        data = np.array(rows, dtype=float).reshape(count, len(props))
        col = {p: i for i, p in enumerate(props)}
        pts = data[:, [col["x"], col["y"], col["z"]]]
        if not np.all(np.isfinite(pts)):
            raise ParseError("non-finite coordinate", lineno, path)
        colors = None
        if all(c in col for c in ("red", "green", "blue")):
            colors = data[:, [col["red"], col["green"], col["blue"]]].astype(np.uint8)
        labels = data[:, col["label"]].astype(np.int64) if "label" in col else None
        result = PointCloud(pts, colors, labels)
    if result is None:
        raise ParseError("no vertex element declared", lineno, path)
    return result


def _parse_csv(lines: list[str], path: str) -> PointCloud:
    rows = []
    width = None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        fields = [f.strip() for f in text.split(",")]
        if len(fields) not in (3, 4, 6, 7):
            raise ParseError(f"expected x,y,z[,r,g,b][,label], got {len(fields)} fields", lineno, path)
        if width is None:
            width = len(fields)
        elif width != len(fields):
            raise ParseError("inconsistent column count", lineno, path)
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-numeric field in {text!r}", lineno, path) from None
        if not all(math.isfinite(v) for v in vals[:3]):
            raise ParseError("non-finite coordinate", lineno, path)
        rows.append(vals)
    if not rows:
        return PointCloud.empty()
    data = np.array(rows)
    colors = data[:, 3:6].astype(np.uint8) if width in (6, 7) else None
    labels = data[:, -1].astype(np.int64) if width in (4, 7) else None
    return PointCloud(data[:, :3], colors, labels)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def save_point_cloud(cloud: PointCloud, path: str, format: Optional[str] = None) -> None:
    fmt = format or _guess_format(path)
    pts = cloud.points
    out = []
    if fmt == "ply-ascii":
        out += ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
                "property float x", "property float y", "property float z"]
        if cloud.colors is not None:
            out += ["property uchar red", "property uchar green", "property uchar blue"]
        if cloud.labels is not None:
            out.append("property int label")
        out.append("end_header")
        sep = " "
    elif fmt == "xyz-csv":
        sep = ","
    else:
        raise ValueError(f"unknown point cloud format {fmt!r}")
    for i in range(len(pts)):
        row = [_fmt(pts[i, 0]), _fmt(pts[i, 1]), _fmt(pts[i, 2])]
        if cloud.colors is not None:
            row += [str(int(c)) for c in cloud.colors[i]]
        if cloud.labels is not None:
            row.append(str(int(cloud.labels[i])))
        out.append(sep.join(row))
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(out) + ("\n" if out else ""))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write point cloud: {exc.strerror}", path) from exc


# ---------------------------------------------------------------------------
# synthetic tabletop scenes

SCENARIO_KINDS = ("add", "remove", "move", "swap", "unchanged")

TABLE_LABEL = 0
FLOOR_LABEL = -1


@dataclass(frozen=True)
class ObjectSpec:
    """A box (``size = (sx, sy, h)``) or cylinder (``size = (r, r, h)``) standing on the table.

    Positions are table-relative (x, y) of the footprint centre; ``None``
    means the object is absent from that scene.
    """

    id: int
    shape: str
    size: tuple[float, float, float]
    source_xy: Optional[tuple[float, float]]
    target_xy: Optional[tuple[float, float]]
    name: str = ""

    @property
    def height(self) -> float:
        return self.size[2]

    def half_extent(self) -> tuple[float, float]:
        if self.shape == "cylinder":
            return self.size[0], self.size[0]
        return self.size[0] / 2, self.size[1] / 2

    @property
    def changed(self) -> bool:
        return self.source_xy != self.target_xy


@dataclass(frozen=True)
class SyntheticScenario:
    kind: str
    objects: tuple[ObjectSpec, ...]
    table_extent: tuple[float, float] = (1.2, 0.8)
    table_height: float = 0.75
    table_center: tuple[float, float] = (0.0, 0.0)
    floor_extent: tuple[float, float] = (1.6, 1.2)
    noise_sigma: float = 0.0
    density: float = 40000.0

    @property
    def ground_truth(self) -> list[int]:
        return sorted(o.id for o in self.objects if o.changed)

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.noise_sigma < 0 or self.density <= 0:
            raise ScenarioError("noise must be >= 0 and density > 0")
        if min(self.table_extent) <= 0 or self.table_height <= 0:
            raise ScenarioError("table must have positive extent and height")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
            raise ScenarioError("object ids must be unique positive integers")
        hx, hy = self.table_extent[0] / 2, self.table_extent[1] / 2
        for o in self.objects:
            if o.shape not in ("box", "cylinder"):
                raise ScenarioError(f"object {o.id}: unknown shape {o.shape!r}")
            if min(o.size) <= 0:
                raise ScenarioError(f"object {o.id}: degenerate size {o.size}")
            ex, ey = o.half_extent()
            for xy in (o.source_xy, o.target_xy):
                if xy is None:
                    continue
                if abs(xy[0]) + ex > hx + 1e-12 or abs(xy[1]) + ey > hy + 1e-12:
                    raise ScenarioError(f"object {o.id}: footprint leaves the table")
        changed = [o for o in self.objects if o.changed]
        kind = self.kind
        ok = {
            "unchanged": not changed,
            "add": bool(changed) and all(o.source_xy is None for o in changed),
            "remove": bool(changed) and all(o.target_xy is None for o in changed),
            "move": bool(changed) and all(o.source_xy is not None and o.target_xy is not None
                                          for o in changed),
            "swap": len(changed) == 2
            and changed[0].source_xy == changed[1].target_xy
            and changed[1].source_xy == changed[0].target_xy
            and changed[0].source_xy is not None,
        }[kind]
        if not ok:
            raise ScenarioError(f"object changes are inconsistent with scenario kind {kind!r}")


@dataclass
class ObjectAnnotation:
    id: int
    name: str
    present_source: bool
    present_target: bool
    source_pose: Optional[tuple[float, float, float]]
    target_pose: Optional[tuple[float, float, float]]
    changed: bool


@dataclass
class SceneGroundTruth:
    objects: list[ObjectAnnotation]
    changed_ids: list[int]
    source_changed: PointCloud = field(default_factory=PointCloud.empty)
    target_changed: PointCloud = field(default_factory=PointCloud.empty)

    def changed_points(self) -> PointCloud:
        """Labelled points of all changed objects from both scenes."""
        return PointCloud.concatenate([self.source_changed, self.target_changed])


def _axis_samples(a: float, b: float, spacing: float) -> np.ndarray:
    n = max(int(math.ceil((b - a) / spacing - 1e-9)), 1) + 1
    return np.linspace(a, b, n)


def _rect_lattice(x0, x1, y0, y1, spacing) -> np.ndarray:
    xs = _axis_samples(x0, x1, spacing)
    ys = _axis_samples(y0, y1, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _sample_object(obj: ObjectSpec, cx: float, cy: float, z0: float, spacing: float) -> np.ndarray:
    h = obj.height
    zs = _axis_samples(0.0, h, spacing)
    if obj.shape == "box":
        ex, ey = obj.half_extent()
        top = _rect_lattice(-ex, ex, -ey, ey, spacing)
        parts = [np.column_stack([top, np.full(len(top), h)])]
        xs = _axis_samples(-ex, ex, spacing)
        ys = _axis_samples(-ey, ey, spacing)
        for side in (-ey, ey):
            gx, gz = np.meshgrid(xs, zs, indexing="ij")
            parts.append(np.column_stack([gx.ravel(), np.full(gx.size, side), gz.ravel()]))
        for side in (-ex, ex):
            gy, gz = np.meshgrid(ys, zs, indexing="ij")
            parts.append(np.column_stack([np.full(gy.size, side), gy.ravel(), gz.ravel()]))
        local = np.concatenate(parts)
    else:
        r = obj.size[0]
        disk = _rect_lattice(-r, r, -r, r, spacing)
        disk = disk[np.hypot(disk[:, 0], disk[:, 1]) < r]
        n_ring = max(int(math.ceil(2 * math.pi * r / spacing)), 8)
        ang = 2 * math.pi * np.arange(n_ring) / n_ring
        ring = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        top = np.concatenate([disk, ring])
        parts = [np.column_stack([top, np.full(len(top), h)])]
        ga, gz = np.meshgrid(ang, zs, indexing="ij")
        parts.append(np.column_stack([r * np.cos(ga).ravel(), r * np.sin(ga).ravel(), gz.ravel()]))
        local = np.concatenate(parts)
    # boxes share edge samples between faces
    local = np.unique(np.round(local, 12), axis=0)
    return local + np.array([cx, cy, z0])


def _inside_footprint(xy: np.ndarray, obj: ObjectSpec, cx: float, cy: float) -> np.ndarray:
    if obj.shape == "cylinder":
        return np.hypot(xy[:, 0] - cx, xy[:, 1] - cy) < obj.size[0]
    ex, ey = obj.half_extent()
    return (np.abs(xy[:, 0] - cx) < ex) & (np.abs(xy[:, 1] - cy) < ey)


_OBJECT_COLORS = np.array(
    [[200, 60, 60], [60, 160, 60], [60, 80, 200], [200, 160, 40], [150, 60, 170],
     [40, 170, 170], [220, 120, 60], [120, 120, 40]], dtype=np.uint8)


def _sample_scene(scn: SyntheticScenario, which: str, rng: np.random.Generator) -> PointCloud:
    spacing = 1.0 / math.sqrt(scn.density)
    tcx, tcy = scn.table_center
    hx, hy = scn.table_extent[0] / 2, scn.table_extent[1] / 2
    fx, fy = scn.floor_extent[0] / 2, scn.floor_extent[1] / 2
    z_table = scn.table_height
    present = []
    for o in scn.objects:
        xy = o.source_xy if which == "source" else o.target_xy
        if xy is not None:
            present.append((o, tcx + xy[0], tcy + xy[1]))

    floor = _rect_lattice(tcx - fx, tcx + fx, tcy - fy, tcy + fy, spacing)
    table = _rect_lattice(tcx - hx, tcx + hx, tcy - hy, tcy + hy, spacing)
    keep = np.ones(len(table), dtype=bool)
    for o, cx, cy in present:
        keep &= ~_inside_footprint(table, o, cx, cy)
    table = table[keep]

    pts = [np.column_stack([floor, np.zeros(len(floor))]),
           np.column_stack([table, np.full(len(table), z_table)])]
    labels = [np.full(len(floor), FLOOR_LABEL), np.full(len(table), TABLE_LABEL)]
    colors = [np.tile([128, 128, 128], (len(floor), 1)), np.tile([150, 110, 70], (len(table), 1))]
    for o, cx, cy in present:
        p = _sample_object(o, cx, cy, z_table, spacing)
        pts.append(p)
        labels.append(np.full(len(p), o.id))
        colors.append(np.tile(_OBJECT_COLORS[(o.id - 1) % len(_OBJECT_COLORS)], (len(p), 1)))
    points = np.concatenate(pts)
    if scn.noise_sigma > 0:
        # truncated at 3 sigma so removed objects leave a clean inflated box
        noise = rng.normal(0.0, scn.noise_sigma, size=points.shape)
        points = points + np.clip(noise, -3 * scn.noise_sigma, 3 * scn.noise_sigma)
    return PointCloud(points, np.concatenate(colors).astype(np.uint8), np.concatenate(labels))


def generate_scene_pair(scenario: SyntheticScenario, seed: int):
    """Sample the source and target clouds of ``scenario``.

    Surfaces are sampled on regular lattices that include their edges, so a
    noiseless object voxelizes identically wherever it is observed. Noise is
    drawn from per-scene streams derived from ``seed``.
    """
    scenario.validate()
    rng_src = np.random.default_rng([seed, 1])
    rng_tgt = np.random.default_rng([seed, 2])
    source = _sample_scene(scenario, "source", rng_src)
    if scenario.kind == "unchanged":
        target = PointCloud(source.points.copy(), source.colors.copy(), source.labels.copy())
    else:
        target = _sample_scene(scenario, "target", rng_tgt)

    z = scenario.table_height
    anns = []
    for o in scenario.objects:
        anns.append(ObjectAnnotation(
            id=o.id,
            name=o.name,
            present_source=o.source_xy is not None,
            present_target=o.target_xy is not None,
            source_pose=None if o.source_xy is None else (o.source_xy[0], o.source_xy[1], z),
            target_pose=None if o.target_xy is None else (o.target_xy[0], o.target_xy[1], z),
            changed=o.changed,
        ))
    changed = scenario.ground_truth
    gt = SceneGroundTruth(
        objects=anns,
        changed_ids=changed,
        source_changed=source.select(np.isin(source.labels, changed)),
        target_changed=target.select(np.isin(target.labels, changed)),
    )
    return source, target, gt


# name, shape, size (sx, sy, h) or (r, r, h)
CATALOG = (
    ("mug", "cylinder", (0.042, 0.042, 0.095)),
    ("can", "cylinder", (0.034, 0.034, 0.125)),
    ("toy_car", "box", (0.16, 0.08, 0.075)),
    ("small_box", "box", (0.12, 0.11, 0.055)),
    ("bottle", "cylinder", (0.037, 0.037, 0.24)),
    ("cereal_box", "box", (0.19, 0.08, 0.27)),
    ("book_stack", "box", (0.22, 0.16, 0.33)),
)

# table-relative slot centres; neighbours stay >= 10 cm apart for any catalog pair
_SLOTS = ((-0.4, -0.19), (0.0, -0.19), (0.4, -0.19), (-0.4, 0.19), (0.0, 0.19), (0.4, 0.19))


def make_scenario(kind: str, seed: int, noise_sigma: float = 0.0, density: float = 40000.0,
                  n_objects: int = 3) -> SyntheticScenario:
    """Random tabletop scenario of the given kind, deterministic in ``seed``."""
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    rng = np.random.default_rng([seed, 0])
    n_objects = int(np.clip(n_objects, 2, len(_SLOTS) - 1))

    def pick_items(count):
        idx = rng.choice(len(CATALOG), size=count, replace=False)
        items = []
        for i in idx:
            name, shape, (a, b, h) = CATALOG[i]
            s = rng.uniform(0.95, 1.05, size=3)
            items.append((name, shape, (a * s[0], (a * s[0] if shape == "cylinder" else b * s[1]), h * s[2])))
        return items

    for _ in range(100):
        items = pick_items(n_objects + (1 if kind == "add" else 0))
        if kind == "swap":
            hs = sorted(it[2][2] for it in items[:2])
            if hs[1] - hs[0] < 0.05:
                continue
        break
    slots = [int(s) for s in rng.permutation(len(_SLOTS))]
    jitter = rng.uniform(-0.02, 0.02, size=(len(_SLOTS), 2))
    pos = [(_SLOTS[s][0] + jitter[s][0], _SLOTS[s][1] + jitter[s][1]) for s in slots]

    objs = []
    for k, (name, shape, size) in enumerate(items[:n_objects]):
        objs.append(ObjectSpec(k + 1, shape, size, pos[k], pos[k], name))
    if kind == "add":
        name, shape, size = items[n_objects]
        objs.append(ObjectSpec(n_objects + 1, shape, size, None, pos[n_objects], name))
    elif kind == "remove":
        objs[0] = replace(objs[0], target_xy=None)
    elif kind == "move":
        objs[0] = replace(objs[0], target_xy=pos[n_objects])
    elif kind == "swap":
        objs[0] = replace(objs[0], target_xy=objs[1].source_xy)
        objs[1] = replace(objs[1], target_xy=objs[0].source_xy)
    scn = SyntheticScenario(kind=kind, objects=tuple(objs), noise_sigma=noise_sigma, density=density)
    scn.validate()
    return scn
