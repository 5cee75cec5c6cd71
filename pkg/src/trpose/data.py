"""Dataset assembly: turning sampled keyframe pairs into training tensors.

A pair (a, b) becomes a 12-channel input: the RGB stereo pair of the live
frame `a` stacked on the stereo pair of the map frame `b`, channel order
[a_left, a_right, b_left, b_right], values scaled to [0, 1].  The same
stacking is used at evaluation time so a trained model sees one layout
everywhere.
"""

from __future__ import annotations

import os

import numpy as np
import torch
from torch.utils.data import Dataset

from .geometry import Pose2
from .pose_graph import (LOCALIZATION, VO, LabeledPair, PoseGraph,
                         PoseGraphFormatError, VertexId)
from .rendering import load_png

PAIRS_HEADER = "PAIRS v1 convention=a_rel_b angles=radians"


class ImageCache:
    """Decoded-image cache keyed by absolute path; images stay uint8 and are
    converted per batch, which keeps a few thousand desk-scale frames well
    under memory limits."""

    def __init__(self):
        self._images: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        img = self._images.get(path)
        if img is None:
            img = load_png(path)
            self._images[path] = img
        return img


def check_images_resolvable(graph: PoseGraph, vertices) -> None:
    """Raise FileNotFoundError naming the first vertex whose stereo pair is
    missing on disk."""
    for vid in vertices:
        kf = graph.keyframe(vid)
        for path in graph.resolve_image_paths(kf):
            if not path or not os.path.isfile(path):
                raise FileNotFoundError(
                    f"vertex {vid}: image not resolvable: {path!r}")


def stack_pair(graph: PoseGraph, a: VertexId, b: VertexId, cache: ImageCache,
               image_size: tuple[int, int] | None = None) -> torch.Tensor:
    """12 x H x W float32 tensor in [0, 1] for the pair (live a, map b)."""
    planes = []
    for vid in (a, b):
        kf = graph.keyframe(vid)
        for path in graph.resolve_image_paths(kf):
            img = cache.get(path)
            if image_size is not None and img.shape[:2] != image_size:
                raise ValueError(
                    f"vertex {vid}: image {path!r} is {img.shape[1]}x{img.shape[0]}, "
                    f"expected {image_size[1]}x{image_size[0]}")
            planes.append(np.moveaxis(img, 2, 0))
    stacked = np.concatenate(planes, axis=0).astype(np.float32) / 255.0
    return torch.from_numpy(stacked)


def target_tensor(xi: Pose2) -> torch.Tensor:
    return torch.tensor([xi.x, xi.y, xi.theta], dtype=torch.float32)


class PairDataset(Dataset):
    """LabeledPairs materialized lazily as (input, target) tensor tuples."""

    def __init__(self, graph: PoseGraph, pairs: list[LabeledPair],
                 image_size: tuple[int, int] | None = None,
                 cache: ImageCache | None = None):
        self.graph = graph
        self.pairs = list(pairs)
        self.image_size = image_size
        self.cache = cache if cache is not None else ImageCache()

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, idx: int) -> tuple[torch.Tensor, torch.Tensor]:
        pair = self.pairs[idx]
        x = stack_pair(self.graph, pair.a, pair.b, self.cache, self.image_size)
        return x, target_tensor(pair.xi)


def assemble_dataset(graph: PoseGraph, kind: str, n: int,
                     rng: np.random.Generator, val_fraction: float = 0.1, *,
                     runs: list[int] | None = None, spatial_hops: int = 0,
                     image_size: tuple[int, int] | None = None,
                     cache: ImageCache | None = None) -> tuple[PairDataset, PairDataset]:
    """Sample pairs of the given kind and return a disjoint (train, val)
    split.  vo pools every temporal edge of the chosen runs capped at n;
    localization draws exactly n random co-localized pairs."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    if kind == VO:
        use = runs if runs is not None else graph.runs()
        pairs = [p for r in use for p in graph.sample_vo_pairs(r)]
        perm = rng.permutation(len(pairs))
        pairs = [pairs[i] for i in perm[:n]]
    elif kind == LOCALIZATION:
        pairs = graph.sample_localization_pairs(n, rng, spatial_hops=spatial_hops,
                                                runs=runs)
    else:
        raise ValueError(f"unknown pair kind {kind!r} (expected {VO!r} or {LOCALIZATION!r})")
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs to split, got {len(pairs)}")

    check_images_resolvable(graph, {v for p in pairs for v in (p.a, p.b)})

    n_val = min(max(int(round(len(pairs) * val_fraction)), 1), len(pairs) - 1)
    shared = cache if cache is not None else ImageCache()
    val = PairDataset(graph, pairs[:n_val], image_size, shared)
    train = PairDataset(graph, pairs[n_val:], image_size, shared)
    return train, val


def save_pairs(pairs: list[LabeledPair], path: str) -> None:
    lines = [PAIRS_HEADER]
    for p in pairs:
        lines.append(f"{p.kind} {p.a.run} {p.a.index} {p.b.run} {p.b.index} "
                     f"{p.xi.x!r} {p.xi.y!r} {p.xi.theta!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pairs(path: str) -> list[LabeledPair]:
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != PAIRS_HEADER:
        raise PoseGraphFormatError(f"line 1: expected header {PAIRS_HEADER!r}")
    out = []
    for ln, line in enumerate(raw[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise PoseGraphFormatError(f"line {ln}: expected 8 fields, got {len(parts)}")
        kind = parts[0]
        if kind not in (VO, LOCALIZATION):
            raise PoseGraphFormatError(f"line {ln}: unknown pair kind {kind!r}")
        try:
            ar, ai, br, bi = (int(v) for v in parts[1:5])
            x, y, theta = (float(v) for v in parts[5:8])
        except ValueError:
            raise PoseGraphFormatError(f"line {ln}: malformed numeric field") from None
        out.append(LabeledPair(a=VertexId(ar, ai), b=VertexId(br, bi),
                               xi=Pose2(x, y, theta), kind=kind))
    return out
