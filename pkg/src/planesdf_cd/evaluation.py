"""Point- and cluster-level scoring of detected change points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .scene_io import PointCloud


@dataclass
class EvaluationReport:
    precision: float
    recall: float
    f1: float
    missed_objects: int
    wrong_clusters: int
    n_clusters: int
    n_objects: int
    per_object: dict = field(default_factory=dict)
    vacuous: bool = False

    @property
    def object_recall(self) -> float:
        return 1.0 if self.n_objects == 0 else (self.n_objects - self.missed_objects) / self.n_objects

    @property
    def object_precision(self) -> float:
        return 1.0 if self.n_clusters == 0 else (self.n_clusters - self.wrong_clusters) / self.n_clusters

    def as_text(self) -> str:
        rows = [
            ("precision", f"{self.precision:.6f}"),
            ("recall", f"{self.recall:.6f}"),
            ("f1", f"{self.f1:.6f}"),
            ("missed_objects", str(self.missed_objects)),
            ("wrong_clusters", str(self.wrong_clusters)),
            ("clusters", str(self.n_clusters)),
            ("objects", str(self.n_objects)),
        ]
        if self.vacuous:
            rows.append(("note", "empty ground truth; recall is vacuous"))
        for oid, (n_gt, n_hit) in sorted(self.per_object.items()):
            rows.append((f"object_{oid}", f"{n_hit}/{n_gt}"))
        return "\n".join(f"{k}: {v}" for k, v in rows) + "\n"

    CSV_HEADER = "precision,recall,f1,missed_objects,wrong_clusters,clusters,objects"

    def as_csv_row(self) -> str:
        return (f"{self.precision:.6f},{self.recall:.6f},{self.f1:.6f},{self.missed_objects},"
                f"{self.wrong_clusters},{self.n_clusters},{self.n_objects}")


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def grid_clusters(points: np.ndarray, cell: float) -> np.ndarray:
    """Cluster labels from 26-connected occupied cells of size ``cell``."""
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    keys = np.floor(points / cell).astype(np.int64)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    pairs = cKDTree(cells).query_pairs(np.sqrt(3) + 1e-9, output_type="ndarray")
    n = len(cells)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) \
        else coo_matrix((n, n))
    _, lab = connected_components(graph, directed=False)
    return lab[inverse.ravel()]


def score(detected: PointCloud, ground_truth: PointCloud, match_radius: float = 0.014,
          cluster_cell: float = 0.014) -> EvaluationReport:
    """``ground_truth`` holds changed points labelled with their object id."""
    det = detected.points
    gt = ground_truth.points
    gt_ids = ground_truth.labels if ground_truth.labels is not None else np.ones(len(gt), dtype=np.int64)
    objects = np.unique(gt_ids) if len(gt) else np.zeros(0, dtype=np.int64)

    if len(det):
        if len(gt):
            d, _ = cKDTree(gt).query(det, distance_upper_bound=match_radius)
            det_hit = np.isfinite(d)
        else:
            det_hit = np.zeros(len(det), dtype=bool)
        clusters = grid_clusters(det, cluster_cell)
        n_clusters = int(clusters.max()) + 1
        hit_clusters = np.unique(clusters[det_hit])
        wrong = n_clusters - len(hit_clusters)
    else:
        det_hit = np.zeros(0, dtype=bool)
        n_clusters = wrong = 0

    if len(gt) and len(det):
        d, _ = cKDTree(det).query(gt, distance_upper_bound=match_radius)
        gt_hit = np.isfinite(d)
    else:
        gt_hit = np.zeros(len(gt), dtype=bool)

    vacuous = len(gt) == 0
    if vacuous:
        precision = 0.0 if len(det) else 1.0
        recall = 1.0
    else:
        precision = float(det_hit.mean()) if len(det) else 0.0
        recall = float(gt_hit.mean())
    per_object = {}
    missed = 0
    for oid in objects:
        sel = gt_ids == oid
        n_hit = int(gt_hit[sel].sum())
        per_object[int(oid)] = (int(sel.sum()), n_hit)
        missed += n_hit == 0
    return EvaluationReport(precision, recall, f1_score(precision, recall), int(missed), int(wrong),
                            n_clusters, len(objects), per_object, vacuous)
