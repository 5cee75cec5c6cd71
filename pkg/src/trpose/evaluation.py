"""Evaluation harness: RMSE teach x repeat matrices, integrated VO tracks,
error distributions, standalone localization traces, and the fused
propagate-and-correct path-following loop.

Predictors share one interface (predict / predict_many on vertex pairs), so
every artifact runs identically against a trained network, a ground-truth
oracle, or a corrupted oracle used to validate the harness itself.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from .data import ImageCache, stack_pair
from .geometry import (DEFAULT_WEIGHTS, Pose2, compose, inverse, weighted_norm,
                       wrap_angle)
from .model import PoseRegressor
from .pose_graph import (LOCALIZATION, VO, GraphStructureError, PoseGraph,
                         VertexId)

MATRIX_CSV_COLUMNS = ["repeat_run", "teach_run", "rmse_x_m", "rmse_y_m",
                      "rmse_theta_deg", "kind", "repeat_condition",
                      "teach_condition"]


def graph_relative_pose(graph: PoseGraph, a: VertexId, b: VertexId) -> Pose2:
    """Ground-truth pose of a relative to b implied by the graph's edges:
    along the temporal chain within a run, through spatial edges and the
    teach chain across runs."""
    if a.run == b.run:
        return graph.chain_transform(a.run, b.index, a.index)

    def to_teach(v: VertexId) -> tuple[int, Pose2]:
        if v.run == 0:
            return v.index, Pose2.identity()
        edge = graph.spatial_edge(v)
        if edge is None:
            raise GraphStructureError(f"vertex {v} has no spatial edge")
        return edge.teach.index, edge.xi

    ta, xa = to_teach(a)
    tb, xb = to_teach(b)
    xa_at_tb = compose(graph.chain_transform(0, tb, ta), xa)
    return compose(inverse(xb), xa_at_tb)


# -- predictors ---------------------------------------------------------------

class Predictor:
    """Anything that estimates the pose of vertex a relative to vertex b."""

    def predict(self, a: VertexId, b: VertexId) -> Pose2:
        raise NotImplementedError

    def predict_many(self, pairs) -> list[Pose2]:
        return [self.predict(a, b) for a, b in pairs]


class OraclePredictor(Predictor):
    """Returns the graph-derived ground truth; the harness-validation stub."""

    def __init__(self, graph: PoseGraph):
        self.graph = graph

    def predict(self, a: VertexId, b: VertexId) -> Pose2:
        return graph_relative_pose(self.graph, a, b)


class BiasedPredictor(Predictor):
    """Base predictor plus a constant per-component offset."""

    def __init__(self, base: Predictor, bias: Pose2):
        self.base = base
        self.bias = bias

    def predict(self, a: VertexId, b: VertexId) -> Pose2:
        xi = self.base.predict(a, b)
        return Pose2(xi.x + self.bias.x, xi.y + self.bias.y,
                     xi.theta + self.bias.theta)


class NoisyPredictor(Predictor):
    """Base predictor plus zero-mean Gaussian noise per component."""

    def __init__(self, base: Predictor, sigma: float, rng: np.random.Generator):
        self.base = base
        self.sigma = sigma
        self.rng = rng

    def predict(self, a: VertexId, b: VertexId) -> Pose2:
        xi = self.base.predict(a, b)
        n = self.rng.normal(0.0, self.sigma, size=3)
        return Pose2(xi.x + n[0], xi.y + n[1], xi.theta + n[2])


class ModelPredictor(Predictor):
    """Runs a trained regressor on the stacked stereo pairs of (a, b)."""

    def __init__(self, graph: PoseGraph, model: PoseRegressor,
                 batch_size: int = 64, cache: ImageCache | None = None):
        self.graph = graph
        self.model = model.eval()
        self.batch_size = batch_size
        self.cache = cache if cache is not None else ImageCache()
        cfg = model.config
        self._size = (cfg.input_height, cfg.input_width)

    def predict_many(self, pairs) -> list[Pose2]:
        pairs = list(pairs)
        out = []
        with torch.no_grad():
            for i in range(0, len(pairs), self.batch_size):
                chunk = pairs[i:i + self.batch_size]
                x = torch.stack([stack_pair(self.graph, a, b, self.cache, self._size)
                                 for a, b in chunk])
                out.extend(Pose2(float(r[0]), float(r[1]), float(r[2]))
                           for r in self.model(x))
        return out

    def predict(self, a: VertexId, b: VertexId) -> Pose2:
        return self.predict_many([(a, b)])[0]


# -- residual helpers ---------------------------------------------------------

def residuals(pred_target_pairs) -> np.ndarray:
    """N x 3 signed errors (x, y, wrapped theta) for (prediction, target)."""
    rows = [(p.x - t.x, p.y - t.y, wrap_angle(p.theta - t.theta))
            for p, t in pred_target_pairs]
    return np.array(rows, dtype=np.float64).reshape(len(rows), 3)


def rmse_per_dof(res: np.ndarray) -> tuple[float, float, float]:
    r = np.sqrt(np.mean(np.square(res), axis=0))
    return float(r[0]), float(r[1]), float(r[2])


def error_cdf(source) -> np.ndarray:
    """Sorted absolute errors per DOF (columns x, y, theta), one row per
    trace entry.  Accepts a FusionTrace, a localization trace, or a raw
    N x 3 residual array."""
    if isinstance(source, FusionTrace):
        res = residuals([(s.corrected, s.target) for s in source.steps])
    elif isinstance(source, np.ndarray):
        res = source.reshape(-1, 3)
    else:
        entries = list(source)
        if entries and isinstance(entries[0], LocSample):
            res = residuals([(s.prediction, s.target) for s in entries])
        else:
            res = residuals(entries)
    return np.sort(np.abs(res), axis=0)


# -- standalone localization and the RMSE matrix ------------------------------

@dataclass(frozen=True)
class LocSample:
    live: VertexId
    map: VertexId
    prediction: Pose2
    target: Pose2


def _anchor_table(graph: PoseGraph, run: int) -> tuple[np.ndarray, np.ndarray]:
    """(keyframe indices, their teach-anchor indices) for one repeat run,
    restricted to anchored keyframes; anchor indices are monotone by
    construction."""
    idx, anchors = [], []
    for i in range(graph.run_length(run)):
        edge = graph.spatial_edge(VertexId(run, i))
        if edge is not None:
            idx.append(i)
            anchors.append(edge.teach.index)
    return np.array(idx, dtype=np.int64), np.array(anchors, dtype=np.int64)


def localize_standalone(graph: PoseGraph, predictor: Predictor,
                        repeat_run: int, teach_run: int = 0) -> list[LocSample]:
    """Per-keyframe localization of a repeat run against a map run: the true
    teach (run 0) pairs each live keyframe with its anchor; any other map run
    pairs it with the map keyframe anchored nearest on the teach chain."""
    if repeat_run == teach_run:
        raise ValueError("repeat and teach run must differ; the diagonal is VO's job")
    pairs: list[tuple[VertexId, VertexId]] = []
    if teach_run == 0:
        for i in range(graph.run_length(repeat_run)):
            live = VertexId(repeat_run, i)
            edge = graph.spatial_edge(live)
            if edge is not None:
                pairs.append((live, edge.teach))
    else:
        map_idx, map_anchors = _anchor_table(graph, teach_run)
        if len(map_idx) == 0:
            raise GraphStructureError(
                f"run {teach_run} has no co-localizable keyframes (no spatial edges)")
        for i in range(graph.run_length(repeat_run)):
            live = VertexId(repeat_run, i)
            edge = graph.spatial_edge(live)
            if edge is None:
                continue
            pos = int(np.searchsorted(map_anchors, edge.teach.index))
            best = min((j for j in (pos - 1, pos) if 0 <= j < len(map_idx)),
                       key=lambda j: abs(int(map_anchors[j]) - edge.teach.index))
            pairs.append((live, VertexId(teach_run, int(map_idx[best]))))
    preds = predictor.predict_many(pairs)
    return [LocSample(live=a, map=b, prediction=p,
                      target=graph_relative_pose(graph, a, b))
            for (a, b), p in zip(pairs, preds)]


@dataclass(frozen=True)
class MatrixCell:
    repeat_run: int
    teach_run: int
    rmse_x_m: float
    rmse_y_m: float
    rmse_theta_deg: float
    kind: str
    repeat_condition: str
    teach_condition: str


def rmse_matrix(graph: PoseGraph, vo_predictor: Predictor,
                loc_predictor: Predictor, test_runs: list[int]) -> list[MatrixCell]:
    """Per-DOF RMSE over all (repeat, teach) pairs of the given runs:
    diagonal cells score the VO predictor against temporal-edge labels,
    off-diagonal cells score the localization predictor with the repeat run
    of the row localized against the map run of the column."""
    cells = []
    for r in test_runs:
        cond_r = graph.keyframe(VertexId(r, 0)).condition
        for t in test_runs:
            cond_t = graph.keyframe(VertexId(t, 0)).condition
            if r == t:
                vo_pairs = graph.sample_vo_pairs(r)
                if not vo_pairs:
                    raise GraphStructureError(f"run {r} has no temporal edges")
                preds = vo_predictor.predict_many([(p.a, p.b) for p in vo_pairs])
                res = residuals(list(zip(preds, [p.xi for p in vo_pairs])))
                kind = VO
            else:
                trace = localize_standalone(graph, loc_predictor, r, t)
                if not trace:
                    raise GraphStructureError(
                        f"run {r} has no co-localizable keyframes against run {t}")
                res = residuals([(s.prediction, s.target) for s in trace])
                kind = LOCALIZATION
            x, y, th = rmse_per_dof(res)
            cells.append(MatrixCell(r, t, x, y, math.degrees(th), kind,
                                    cond_r, cond_t))
    return cells


# -- VO integration ------------------------------------------------------------

def integrate_vo(source, run: int | None = None,
                 start: Pose2 = Pose2.identity()) -> list[Pose2]:
    """Left-fold of compose over a sequence of relative poses, starting at
    `start`; pass a PoseGraph plus run to integrate that run's temporal
    edges.  Returns len(edges) + 1 poses including the start."""
    if isinstance(source, PoseGraph):
        if run is None:
            raise ValueError("integrating a graph needs a run index")
        xis = [source.temporal_edge(run, i).xi
               for i in range(source.run_length(run) - 1)]
    else:
        xis = list(source)
    poses = [start]
    for xi in xis:
        poses.append(compose(poses[-1], xi))
    return poses


# -- fused path following -------------------------------------------------------

@dataclass(frozen=True)
class FusionStep:
    live_index: int
    teach_index: int
    propagated: Pose2 | None
    localized: Pose2
    corrected: Pose2
    target: Pose2


@dataclass(frozen=True)
class FusionTrace:
    repeat_run: int
    teach_run: int
    window: int
    weights: tuple[float, float]
    steps: list[FusionStep]
    truncated: bool


def path_follow(graph: PoseGraph, vo_predictor: Predictor,
                loc_predictor: Predictor, repeat_run: int, teach_run: int = 0,
                window: int = 5,
                fusion_weights: tuple[float, float] = (0.3, 0.7)) -> FusionTrace:
    """Propagate-and-correct along a repeat run.

    Step 0 localizes the first live keyframe against the first teach
    keyframe.  Each later step propagates the previous localization estimate
    through the VO prediction, re-expresses it against the next `window`
    teach keyframes, keeps the one with the smallest weighted norm, localizes
    against it, and blends per component: w_vo * propagated + w_loc *
    localized, theta averaged on the wrapped difference.  When no teach
    keyframe remains ahead the trace ends early, flagged as truncated.
    """
    w_vo, w_loc = fusion_weights
    if window < 1:
        raise ValueError("window must be >= 1")
    if not math.isclose(w_vo + w_loc, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"fusion weights must sum to 1, got {w_vo} + {w_loc}")

    n_live = graph.run_length(repeat_run)
    n_teach = graph.run_length(teach_run)
    live0, teach0 = VertexId(repeat_run, 0), VertexId(teach_run, 0)
    loc0 = loc_predictor.predict(live0, teach0)
    steps = [FusionStep(0, 0, None, loc0, loc0,
                        graph_relative_pose(graph, live0, teach0))]
    prev_loc, prev_teach = loc0, 0
    truncated = False

    for k in range(1, n_live):
        candidates = [prev_teach + d for d in range(1, window + 1)
                      if prev_teach + d < n_teach]
        if not candidates:
            truncated = True
            break
        vo_xi = vo_predictor.predict(VertexId(repeat_run, k),
                                     VertexId(repeat_run, k - 1))
        prop_at_prev = compose(prev_loc, vo_xi)
        best_j, best_prop, best_norm = None, None, math.inf
        for j in candidates:
            cand = compose(graph.chain_transform(teach_run, j, prev_teach),
                           prop_at_prev)
            norm = weighted_norm(cand, DEFAULT_WEIGHTS)
            if norm < best_norm:
                best_j, best_prop, best_norm = j, cand, norm
        live = VertexId(repeat_run, k)
        teach = VertexId(teach_run, best_j)
        loc = loc_predictor.predict(live, teach)
        dtheta = wrap_angle(loc.theta - best_prop.theta)
        corrected = Pose2(w_vo * best_prop.x + w_loc * loc.x,
                          w_vo * best_prop.y + w_loc * loc.y,
                          best_prop.theta + w_loc * dtheta)
        steps.append(FusionStep(k, best_j, best_prop, loc, corrected,
                                graph_relative_pose(graph, live, teach)))
        prev_loc, prev_teach = loc, best_j

    return FusionTrace(repeat_run, teach_run, window, (w_vo, w_loc),
                       steps, truncated)


# -- report files ----------------------------------------------------------------

def write_matrix_csv(cells: list[MatrixCell], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MATRIX_CSV_COLUMNS)
        for c in cells:
            writer.writerow([c.repeat_run, c.teach_run, repr(c.rmse_x_m),
                             repr(c.rmse_y_m), repr(c.rmse_theta_deg), c.kind,
                             c.repeat_condition, c.teach_condition])


def write_track_csv(poses: list[Pose2], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "y", "theta"])
        for i, p in enumerate(poses):
            writer.writerow([i, repr(p.x), repr(p.y), repr(p.theta)])


def write_cdf_csv(cdf: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "abs_x", "abs_y", "abs_theta"])
        n = len(cdf)
        for i, row in enumerate(cdf):
            writer.writerow([repr((i + 1) / n), repr(float(row[0])),
                             repr(float(row[1])), repr(float(row[2]))])


def write_fusion_csv(trace: FusionTrace, path: str) -> None:
    cols = ["step", "live_index", "teach_index"]
    for tag in ("prop", "loc", "corr", "target"):
        cols += [f"{tag}_x", f"{tag}_y", f"{tag}_theta"]
    cols += ["err_x", "err_y", "err_theta"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i, s in enumerate(trace.steps):
            row = [i, s.live_index, s.teach_index]
            for pose in (s.propagated, s.localized, s.corrected, s.target):
                row += ["", "", ""] if pose is None else \
                    [repr(pose.x), repr(pose.y), repr(pose.theta)]
            row += [repr(s.corrected.x - s.target.x),
                    repr(s.corrected.y - s.target.y),
                    repr(wrap_angle(s.corrected.theta - s.target.theta))]
            writer.writerow(row)
        if trace.truncated:
            fh.write("# truncated: teach run exhausted before the repeat run ended\n")


@dataclass
class EvalReport:
    """Bundle of evaluation artifacts, writable as one CSV set."""

    matrix: list[MatrixCell]
    vo_tracks: dict[int, list[Pose2]]
    cdfs: dict[str, np.ndarray]
    fusion_traces: list[FusionTrace]

    def save(self, out_dir: str) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []

        def emit(name, writer, *args):
            p = os.path.join(out_dir, name)
            writer(*args, p)
            written.append(p)

        emit("rmse_matrix.csv", write_matrix_csv, self.matrix)
        for run, track in sorted(self.vo_tracks.items()):
            emit(f"vo_track_run{run:02d}.csv", write_track_csv, track)
        for name, cdf in sorted(self.cdfs.items()):
            emit(f"cdf_{name}.csv", write_cdf_csv, cdf)
        for tr in self.fusion_traces:
            emit(f"fusion_run{tr.repeat_run:02d}_teach{tr.teach_run:02d}.csv",
                 write_fusion_csv, tr)
        return written
