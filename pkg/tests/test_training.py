"""Pair tensor assembly, manifest files, and the optimization loop."""

import os

import numpy as np
import pytest
import torch
from torch.utils.data import Dataset

from trpose.data import (
    PAIRS_HEADER,
    ImageCache,
    PairDataset,
    assemble_dataset,
    check_images_resolvable,
    load_pairs,
    save_pairs,
    stack_pair,
    target_tensor,
)
from trpose.geometry import Pose2
from trpose.model import init, tiny_config
from trpose.pose_graph import (
    LOCALIZATION,
    VO,
    LabeledPair,
    PoseGraph,
    PoseGraphFormatError,
    VertexId,
)
from trpose.rendering import load_png
from trpose.training import EarlyStopping, TrainConfig, TrainReport, train


def test_stack_pair_channel_order_and_range(mini_gen):
    graph = mini_gen.graph
    cache = ImageCache()
    a, b = VertexId(1, 0), VertexId(0, 0)
    x = stack_pair(graph, a, b, cache, image_size=(96, 128))
    assert x.shape == (12, 96, 128)
    assert x.dtype == torch.float32
    assert x.min() >= 0.0 and x.max() <= 1.0
    left_a = load_png(graph.resolve_image_paths(graph.keyframe(a))[0])
    right_b = load_png(graph.resolve_image_paths(graph.keyframe(b))[1])
    assert torch.equal(x[0:3], torch.from_numpy(
        np.moveaxis(left_a, 2, 0).astype(np.float32) / 255.0))
    assert torch.equal(x[9:12], torch.from_numpy(
        np.moveaxis(right_b, 2, 0).astype(np.float32) / 255.0))


def test_stack_pair_size_mismatch_names_vertex(mini_gen):
    with pytest.raises(ValueError, match=r"vertex \(1,0\)"):
        stack_pair(mini_gen.graph, VertexId(1, 0), VertexId(0, 0), ImageCache(),
                   image_size=(64, 64))


def test_unresolvable_images_name_vertex():
    g = PoseGraph(base_dir="/nonexistent")
    from trpose.pose_graph import Keyframe

    g.add_run([Keyframe(id=VertexId(0, 0), image_left="a.png", image_right="b.png")], [])
    with pytest.raises(FileNotFoundError, match=r"vertex \(0,0\)"):
        check_images_resolvable(g, [VertexId(0, 0)])


def test_target_tensor_matches_pose():
    t = target_tensor(Pose2(0.25, -0.1, 0.3))
    assert t.dtype == torch.float32
    assert torch.allclose(t, torch.tensor([0.25, -0.1, 0.3]))


def test_assemble_vo_dataset_counts_and_split(mini_gen):
    graph = mini_gen.graph
    total = sum(graph.run_length(r) - 1 for r in graph.runs())
    train_set, val_set = assemble_dataset(graph, VO, 10**9,
                                          np.random.default_rng(0), 0.1)
    assert len(train_set) + len(val_set) == total
    assert len(val_set) == round(0.1 * total)
    vertices = {p.a for p in train_set.pairs} & {p.a for p in val_set.pairs}
    assert not vertices  # split is disjoint
    capped, _ = assemble_dataset(graph, VO, 20, np.random.default_rng(0), 0.1)
    assert len(capped.pairs) == 18


def test_assemble_vo_runs_filter(mini_gen):
    graph = mini_gen.graph
    train_set, val_set = assemble_dataset(graph, VO, 10**9,
                                          np.random.default_rng(0), 0.1, runs=[1, 2])
    runs = {p.a.run for p in train_set.pairs + val_set.pairs}
    assert runs == {1, 2}


def test_assemble_localization_dataset_exact_count(mini_gen):
    train_set, val_set = assemble_dataset(mini_gen.graph, LOCALIZATION, 50,
                                          np.random.default_rng(1), 0.2)
    assert len(train_set) == 40 and len(val_set) == 10
    for p in train_set.pairs:
        assert p.kind == LOCALIZATION


def test_assemble_dataset_deterministic(mini_gen):
    a_train, a_val = assemble_dataset(mini_gen.graph, LOCALIZATION, 30,
                                      np.random.default_rng(5), 0.1)
    b_train, b_val = assemble_dataset(mini_gen.graph, LOCALIZATION, 30,
                                      np.random.default_rng(5), 0.1)
    assert a_train.pairs == b_train.pairs
    assert a_val.pairs == b_val.pairs


def test_assemble_dataset_rejects_bad_arguments(mini_gen):
    with pytest.raises(ValueError, match="unknown pair kind"):
        assemble_dataset(mini_gen.graph, "odometry", 5, np.random.default_rng(0))
    with pytest.raises(ValueError, match="val_fraction"):
        assemble_dataset(mini_gen.graph, VO, 5, np.random.default_rng(0), 1.5)


def test_pair_dataset_lazy_and_indexable(mini_gen):
    pairs = mini_gen.graph.sample_localization_pairs(8, np.random.default_rng(2))
    ds = PairDataset(mini_gen.graph, pairs, image_size=(96, 128))
    assert len(ds) == 8
    x, y = ds[3]
    assert x.shape == (12, 96, 128)
    assert torch.allclose(y, target_tensor(pairs[3].xi))


def test_pairs_manifest_roundtrip(tmp_path):
    pairs = [
        LabeledPair(VertexId(1, 4), VertexId(0, 3), Pose2(0.125, -0.0625, 0.25), VO),
        LabeledPair(VertexId(2, 0), VertexId(1, 9), Pose2(1e-17, 0.3, -3.0), LOCALIZATION),
    ]
    path = str(tmp_path / "pairs.txt")
    save_pairs(pairs, path)
    assert load_pairs(path) == pairs
    text = open(path).read().splitlines()
    assert text[0] == PAIRS_HEADER


def test_pairs_manifest_errors(tmp_path):
    path = str(tmp_path / "pairs.txt")
    with open(path, "w") as fh:
        fh.write("nonsense\n")
    with pytest.raises(PoseGraphFormatError, match="line 1"):
        load_pairs(path)
    with open(path, "w") as fh:
        fh.write(f"{PAIRS_HEADER}\nvo 0 1 0 0 0.1 0.0\n")
    with pytest.raises(PoseGraphFormatError, match="line 2.*8 fields"):
        load_pairs(path)
    with open(path, "w") as fh:
        fh.write(f"{PAIRS_HEADER}\nteleport 0 1 0 0 0.1 0.0 0.0\n")
    with pytest.raises(PoseGraphFormatError, match="unknown pair kind"):
        load_pairs(path)
    with open(path, "w") as fh:
        fh.write(f"{PAIRS_HEADER}\nvo 0 1 0 0 0.1 oops 0.0\n")
    with pytest.raises(PoseGraphFormatError, match="malformed numeric"):
        load_pairs(path)


def test_early_stopping_exact_patience():
    stop = EarlyStopping(patience=3)
    assert stop.update(1.0) is True
    assert stop.update(0.9) is True
    assert stop.update(0.95) is False
    assert not stop.should_stop
    assert stop.update(0.9) is False
    assert not stop.should_stop
    assert stop.update(2.0) is False
    assert stop.should_stop
    # an improvement resets the stale counter
    stop = EarlyStopping(patience=2)
    stop.update(1.0)
    stop.update(1.5)
    stop.update(0.5)
    assert stop.stale == 0 and not stop.should_stop
    with pytest.raises(ValueError):
        EarlyStopping(0)


class _BrightnessSet(Dataset):
    """Learnable toy task: regress per-channel-group mean brightness."""

    def __init__(self, n, seed):
        gen = torch.Generator().manual_seed(seed)
        self.x = torch.rand(n, 12, 8, 8, generator=gen)
        self.y = torch.stack([
            self.x[:, 0:4].mean(dim=(1, 2, 3)),
            self.x[:, 4:8].mean(dim=(1, 2, 3)) - 0.5,
            self.x[:, 8:12].mean(dim=(1, 2, 3)) * 0.2,
        ], dim=1)

    def __len__(self):
        return len(self.x)

    def __getitem__(self, idx):
        return self.x[idx], self.y[idx]


def _toy_setup(seed=0, n=64):
    model = init(tiny_config(), seed=seed)
    train_set = _BrightnessSet(n, seed=seed + 1)
    val_set = _BrightnessSet(16, seed=seed + 2)
    return model, train_set, val_set


def test_train_decreases_loss_and_counts_steps():
    model, train_set, val_set = _toy_setup()
    cfg = TrainConfig(batch_size=16, learning_rate=1e-3, max_epochs=6,
                      patience=6, seed=0)
    model, report = train(model, train_set, val_set, cfg)
    assert report.stopped_epoch == 6
    assert len(report.train_losses) == 6
    assert report.train_losses[-1] < report.train_losses[0]
    assert int(model.steps) == 6 * 4  # 64 samples / batch 16
    assert not model.training  # returned in eval mode


def test_train_is_reproducible():
    runs = []
    for _ in range(2):
        model, train_set, val_set = _toy_setup(seed=3)
        cfg = TrainConfig(batch_size=16, learning_rate=1e-3, max_epochs=4,
                          patience=4, seed=11)
        _, report = train(model, train_set, val_set, cfg)
        runs.append((report.train_losses, report.val_losses))
    assert runs[0] == runs[1]


def test_train_stops_after_patience_with_stubbed_evaluator():
    model, train_set, val_set = _toy_setup()
    script = [5.0, 4.0, 3.0, 3.5, 3.5, 3.5, 3.5, 3.5, 3.5]
    probes = {}

    def evaluator(m, epoch):
        probes[epoch] = m.head[-1].bias.detach().clone()
        return script[epoch - 1]

    cfg = TrainConfig(batch_size=16, learning_rate=1e-3, max_epochs=50,
                      patience=3, seed=0)
    model, report = train(model, train_set, val_set, cfg, val_evaluator=evaluator)
    assert report.stopped_epoch == 6  # three stale epochs after the best at 3
    assert report.best_epoch == 3
    assert report.best_val_loss == 3.0
    # the returned model carries the best epoch's parameters, not the last
    assert torch.equal(model.head[-1].bias, probes[3])
    assert not torch.equal(probes[3], probes[6])


def test_train_runs_all_epochs_when_loss_keeps_improving():
    model, train_set, val_set = _toy_setup()
    script = iter(range(100, 0, -1))
    cfg = TrainConfig(batch_size=32, learning_rate=1e-3, max_epochs=5,
                      patience=2, seed=0)
    _, report = train(model, train_set, val_set, cfg,
                      val_evaluator=lambda m, e: float(next(script)))
    assert report.stopped_epoch == 5
    assert report.best_epoch == 5


class _PoisonSet(Dataset):
    def __len__(self):
        return 8

    def __getitem__(self, idx):
        x = torch.zeros(12, 8, 8)
        y = torch.tensor([float("nan"), 0.0, 0.0])
        return x, y


def test_train_aborts_on_nonfinite_loss():
    model = init(tiny_config(), seed=0)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, max_epochs=2,
                      patience=2, seed=0)
    with pytest.raises(RuntimeError, match="epoch 1, batch 0"):
        train(model, _PoisonSet(), _PoisonSet(), cfg)


def test_train_writes_checkpoint_on_improvement(tmp_path):
    from trpose.model import load_checkpoint

    model, train_set, val_set = _toy_setup()
    path = str(tmp_path / "best.pt")
    cfg = TrainConfig(batch_size=16, learning_rate=1e-3, max_epochs=3,
                      patience=3, seed=0)
    model, report = train(model, train_set, val_set, cfg, checkpoint_path=path)
    assert os.path.isfile(path)
    clone = load_checkpoint(path)
    for k, v in model.state_dict().items():
        assert torch.equal(v, clone.state_dict()[k]), k


def test_train_rejects_empty_sets():
    model, train_set, _ = _toy_setup()
    cfg = TrainConfig(max_epochs=1)

    class _Empty(Dataset):
        def __len__(self):
            return 0

        def __getitem__(self, idx):
            raise IndexError(idx)

    with pytest.raises(ValueError, match="nonempty"):
        train(model, train_set, _Empty(), cfg)


def test_train_report_csv(tmp_path):
    report = TrainReport(train_losses=[0.5, 0.25], val_losses=[0.6, 0.3],
                         epoch_seconds=[1.0, 1.1], stopped_epoch=2,
                         best_epoch=2, best_val_loss=0.3)
    path = str(tmp_path / "report.csv")
    report.to_csv(path)
    lines = open(path).read().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds"
    assert len(lines) == 3
    assert lines[1].startswith("1,0.5,0.6")


def test_train_config_validation():
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="val_fraction"):
        TrainConfig(val_fraction=0.0)
    with pytest.raises(ValueError, match="patience"):
        TrainConfig(patience=0)
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="max_epochs"):
        TrainConfig(max_epochs=0)
