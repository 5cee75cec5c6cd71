"""Spatio-temporal pose graph: runs of keyframes, VO edges, localization edges.

Run 0 is the privileged teach traversal; every run > 0 is an autonomous
repeat.  Temporal edges join consecutive keyframes of one run and carry the
VO relative pose.  Spatial edges localize a repeat keyframe against a teach
keyframe (at most one per repeat keyframe).  Training labels are sampled from
this structure by compounding edge transforms.

File format (one record per line, whitespace separated):

    PGRAPH v1 convention=a_rel_b angles=radians
    V  run index timestamp condition image_left image_right
    ET run index x y theta          (edge from (run,index) to (run,index+1))
    ES run_rep idx_rep idx_teach x y theta

All relative poses follow the package-wide convention: the stored xi is the
pose of the later/live frame expressed relative to the earlier/map frame.
Empty text fields are written as "-".
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, compose, inverse

HEADER = "PGRAPH v1 convention=a_rel_b angles=radians"

VO = "vo"
LOCALIZATION = "localization"


class GraphStructureError(ValueError):
    """A structural invariant of the pose graph was violated."""


class PoseGraphFormatError(ValueError):
    """A pose-graph file could not be parsed."""


class SamplingExhaustedError(RuntimeError):
    """Sampling could not reach the requested count within the retry bound."""


@dataclass(frozen=True, order=True)
class VertexId:
    run: int
    index: int

    def __post_init__(self):
        if self.run < 0 or self.index < 0:
            raise ValueError(f"vertex ids must be non-negative, got {self}")

    def __str__(self):
        return f"({self.run},{self.index})"


@dataclass(frozen=True)
class Keyframe:
    id: VertexId
    image_left: str = ""
    image_right: str = ""
    condition: str = ""
    timestamp: float = 0.0


@dataclass(frozen=True)
class TemporalEdge:
    """VO edge from src to dst; xi is the pose of dst relative to src."""

    src: VertexId
    dst: VertexId
    xi: Pose2

    def __post_init__(self):
        if self.src.run != self.dst.run or self.dst.index != self.src.index + 1:
            raise GraphStructureError(
                f"temporal edge must join consecutive keyframes of one run, "
                f"got {self.src} -> {self.dst}"
            )


@dataclass(frozen=True)
class SpatialEdge:
    """Localization edge; xi is the pose of the repeat keyframe relative to the teach keyframe."""

    repeat: VertexId
    teach: VertexId
    xi: Pose2

    def __post_init__(self):
        if self.teach.run != 0:
            raise GraphStructureError(f"spatial edge teach vertex must be on run 0, got {self.teach}")
        if self.repeat.run == 0:
            raise GraphStructureError(f"spatial edge repeat vertex must be on a run > 0, got {self.repeat}")


@dataclass(frozen=True)
class LabeledPair:
    """A training sample: frame a (live) paired with frame b (map), with the
    target pose of a relative to b."""

    a: VertexId
    b: VertexId
    xi: Pose2
    kind: str

    def __post_init__(self):
        if self.kind not in (VO, LOCALIZATION):
            raise ValueError(f"unknown pair kind {self.kind!r}")


@dataclass
class PoseGraph:
    """Mutable during construction (add_run / add_spatial_edge), then treated
    as read-only for sampling and evaluation."""

    _keyframes: dict[VertexId, Keyframe] = field(default_factory=dict)
    _run_lengths: dict[int, int] = field(default_factory=dict)
    _temporal: dict[VertexId, TemporalEdge] = field(default_factory=dict)
    _spatial: dict[VertexId, SpatialEdge] = field(default_factory=dict)
    _by_teach: dict[VertexId, list[VertexId]] = field(default_factory=dict)
    base_dir: str | None = None

    # -- construction -----------------------------------------------------

    def add_run(self, keyframes: list[Keyframe], temporal_xis: list[Pose2]) -> "PoseGraph":
        if not keyframes:
            raise GraphStructureError("a run must contain at least one keyframe")
        run = keyframes[0].id.run
        if run in self._run_lengths:
            raise GraphStructureError(f"run {run} already exists")
        if len(temporal_xis) != len(keyframes) - 1:
            raise GraphStructureError(
                f"run {run}: expected {len(keyframes) - 1} temporal edges for "
                f"{len(keyframes)} keyframes, got {len(temporal_xis)}"
            )
        for i, kf in enumerate(keyframes):
            if kf.id.run != run or kf.id.index != i:
                raise GraphStructureError(
                    f"run {run}: keyframe {i} carries id {kf.id}, expected ({run},{i})"
                )
        for kf in keyframes:
            self._keyframes[kf.id] = kf
        for i, xi in enumerate(temporal_xis):
            src = VertexId(run, i)
            self._temporal[src] = TemporalEdge(src, VertexId(run, i + 1), xi)
        self._run_lengths[run] = len(keyframes)
        return self

    def add_spatial_edge(self, repeat: VertexId, teach: VertexId, xi: Pose2) -> "PoseGraph":
        for v in (repeat, teach):
            if v not in self._keyframes:
                raise GraphStructureError(f"unknown vertex {v}")
        if repeat in self._spatial:
            raise GraphStructureError(f"repeat vertex {repeat} already has a spatial edge")
        edge = SpatialEdge(repeat, teach, xi)
        self._spatial[repeat] = edge
        self._by_teach.setdefault(teach, []).append(repeat)
        return self

    # -- queries -----------------------------------------------------------

    def runs(self) -> list[int]:
        return sorted(self._run_lengths)

    def run_length(self, run: int) -> int:
        if run not in self._run_lengths:
            raise GraphStructureError(f"unknown run {run}")
        return self._run_lengths[run]

    def keyframe(self, vid: VertexId) -> Keyframe:
        try:
            return self._keyframes[vid]
        except KeyError:
            raise GraphStructureError(f"unknown vertex {vid}") from None

    def keyframes(self, run: int) -> list[Keyframe]:
        return [self._keyframes[VertexId(run, i)] for i in range(self.run_length(run))]

    def temporal_edge(self, run: int, index: int) -> TemporalEdge:
        try:
            return self._temporal[VertexId(run, index)]
        except KeyError:
            raise GraphStructureError(f"no temporal edge from ({run},{index})") from None

    def spatial_edge(self, repeat: VertexId) -> SpatialEdge | None:
        return self._spatial.get(repeat)

    def colocalized(self, teach: VertexId) -> list[VertexId]:
        """Repeat vertices holding a spatial edge to this teach vertex."""
        return list(self._by_teach.get(teach, ()))

    def chain_transform(self, run: int, i: int, j: int) -> Pose2:
        """Pose of keyframe (run, j) relative to keyframe (run, i), compounded
        along the run's temporal chain."""
        n = self.run_length(run)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphStructureError(f"chain query ({run},{i})->({run},{j}) outside run of length {n}")
        xi = Pose2.identity()
        if j >= i:
            for k in range(i, j):
                xi = compose(xi, self._temporal[VertexId(run, k)].xi)
        else:
            for k in range(j, i):
                xi = compose(xi, self._temporal[VertexId(run, k)].xi)
            xi = inverse(xi)
        return xi

    def resolve_image_paths(self, kf: Keyframe) -> tuple[str, str]:
        """Image paths, resolved against the directory the graph was loaded from."""
        paths = []
        for p in (kf.image_left, kf.image_right):
            if self.base_dir and p and not os.path.isabs(p):
                p = os.path.join(self.base_dir, p)
            paths.append(p)
        return paths[0], paths[1]

    # -- label sampling ----------------------------------------------------

    def sample_vo_pairs(self, run: int) -> list[LabeledPair]:
        """One pair per temporal edge of the run, targets copied verbatim."""
        n = self.run_length(run)
        return [
            LabeledPair(a=VertexId(run, i + 1), b=VertexId(run, i),
                        xi=self._temporal[VertexId(run, i)].xi, kind=VO)
            for i in range(n - 1)
        ]

    def sample_localization_pairs(
        self,
        n: int,
        rng: np.random.Generator,
        spatial_hops: int = 0,
        runs: list[int] | None = None,
    ) -> list[LabeledPair]:
        """Randomly sample n cross-experience pairs by compounding through teach anchors.

        Pick a repeat vertex A, follow its spatial edge to the teach chain,
        optionally hop up to `spatial_hops` teach keyframes (either direction),
        then pick another repeat vertex B localized to that teach keyframe.
        The target is the pose of A relative to B, both re-expressed in the
        common teach frame.  Vertices without a co-localized partner are
        skipped and resampled, up to 100*n attempts.

        `runs` restricts candidate repeat vertices (both A and B) to the given
        repeat runs; by default all repeat runs participate.
        """
        if spatial_hops < 0:
            raise ValueError("spatial_hops must be >= 0")
        allowed = None if runs is None else set(runs)
        candidates = sorted(
            v for v in self._spatial
            if allowed is None or v.run in allowed
        )
        if len({v.run for v in candidates}) < 2:
            raise GraphStructureError(
                "localization sampling needs spatial edges from at least two repeat runs"
            )
        teach_len = self.run_length(0)

        bound = 100 * n
        attempts = 0
        out: list[LabeledPair] = []
        while len(out) < n:
            attempts += 1
            if attempts > bound:
                raise SamplingExhaustedError(
                    f"could not draw {n} localization pairs within {bound} attempts "
                    f"({len(out)} drawn); the graph is too sparsely co-localized"
                )
            a = candidates[rng.integers(len(candidates))]
            edge_a = self._spatial[a]
            anchor = edge_a.teach
            xi_a = edge_a.xi
            if spatial_hops > 0:
                k = int(rng.integers(-spatial_hops, spatial_hops + 1))
                shifted = min(max(anchor.index + k, 0), teach_len - 1)
                if shifted != anchor.index:
                    walk = self.chain_transform(0, anchor.index, shifted)
                    xi_a = compose(inverse(walk), xi_a)
                    anchor = VertexId(0, shifted)
            partners = [
                v for v in self._by_teach.get(anchor, ())
                if v != a and (allowed is None or v.run in allowed)
            ]
            if not partners:
                continue
            b = partners[rng.integers(len(partners))]
            xi_b = self._spatial[b].xi
            out.append(LabeledPair(a=a, b=b, xi=compose(inverse(xi_b), xi_a), kind=LOCALIZATION))
        return out

    # -- serialization -----------------------------------------------------

    def save(self, path: str) -> None:
        lines = [HEADER]
        for run in self.runs():
            for kf in self.keyframes(run):
                for p in (kf.image_left, kf.image_right, kf.condition):
                    if " " in p:
                        raise ValueError(f"field {p!r} contains a space; not representable")
                lines.append(
                    f"V {run} {kf.id.index} {kf.timestamp!r} {kf.condition or '-'} "
                    f"{kf.image_left or '-'} {kf.image_right or '-'}"
                )
        for run in self.runs():
            for i in range(self.run_length(run) - 1):
                xi = self._temporal[VertexId(run, i)].xi
                lines.append(f"ET {run} {i} {xi.x!r} {xi.y!r} {xi.theta!r}")
        for rep in sorted(self._spatial):
            e = self._spatial[rep]
            lines.append(
                f"ES {rep.run} {rep.index} {e.teach.index} {e.xi.x!r} {e.xi.y!r} {e.xi.theta!r}"
            )
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str) -> "PoseGraph":
        with open(path) as f:
            raw = f.read().splitlines()
        if not raw or raw[0].strip() != HEADER:
            raise PoseGraphFormatError(f"line 1: expected header {HEADER!r}")

        vertices: dict[int, dict[int, Keyframe]] = {}
        temporal: dict[int, dict[int, Pose2]] = {}
        spatial: list[tuple[int, VertexId, VertexId, Pose2]] = []

        def fail(ln, msg):
            raise PoseGraphFormatError(f"line {ln}: {msg}")

        for ln, line in enumerate(raw[1:], start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "V":
                    if len(parts) != 7:
                        fail(ln, f"V record needs 6 fields, got {len(parts) - 1}")
                    run, idx = int(parts[1]), int(parts[2])
                    kf = Keyframe(
                        id=VertexId(run, idx),
                        timestamp=float(parts[3]),
                        condition="" if parts[4] == "-" else parts[4],
                        image_left="" if parts[5] == "-" else parts[5],
                        image_right="" if parts[6] == "-" else parts[6],
                    )
                    if idx in vertices.setdefault(run, {}):
                        fail(ln, f"duplicate vertex ({run},{idx})")
                    vertices[run][idx] = kf
                elif tag == "ET":
                    if len(parts) != 6:
                        fail(ln, f"ET record needs 5 fields, got {len(parts) - 1}")
                    run, idx = int(parts[1]), int(parts[2])
                    if idx in temporal.setdefault(run, {}):
                        fail(ln, f"duplicate temporal edge ({run},{idx})")
                    temporal[run][idx] = Pose2(float(parts[3]), float(parts[4]), float(parts[5]))
                elif tag == "ES":
                    run_rep, idx_rep, idx_teach = int(parts[1]), int(parts[2]), int(parts[3])
                    if len(parts) != 7:
                        fail(ln, f"ES record needs 6 fields, got {len(parts) - 1}")
                    spatial.append(
                        (ln, VertexId(run_rep, idx_rep), VertexId(0, idx_teach),
                         Pose2(float(parts[4]), float(parts[5]), float(parts[6])))
                    )
                else:
                    fail(ln, f"unknown record tag {tag!r}")
            except (ValueError, GraphStructureError) as e:
                if isinstance(e, PoseGraphFormatError):
                    raise
                fail(ln, str(e))

        graph = cls(base_dir=os.path.dirname(os.path.abspath(path)))
        for run in sorted(vertices):
            kfs = vertices[run]
            n = len(kfs)
            if sorted(kfs) != list(range(n)):
                raise PoseGraphFormatError(f"run {run}: keyframe indices are not contiguous from 0")
            edges = temporal.get(run, {})
            if sorted(edges) != list(range(n - 1)):
                raise PoseGraphFormatError(
                    f"run {run}: expected temporal edges at indices 0..{n - 2}, "
                    f"got {sorted(edges)}"
                )
            graph.add_run([kfs[i] for i in range(n)], [edges[i] for i in range(n - 1)])
        for run in sorted(temporal):
            if run not in vertices:
                raise PoseGraphFormatError(f"temporal edges reference unknown run {run}")
        for ln, rep, teach, xi in spatial:
            try:
                graph.add_spatial_edge(rep, teach, xi)
            except GraphStructureError as e:
                raise PoseGraphFormatError(f"line {ln}: {e}") from None
        return graph
