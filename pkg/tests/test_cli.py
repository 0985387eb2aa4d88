import numpy as np
import pytest

from edgelab.checkpoint import save_checkpoint
from edgelab.cli import main
from edgelab.imaging import load_image, save_image
from edgelab.model import ModelParams
from edgelab.seeding import rng_for


def _write_dataset(root, n=4, h=16, w=24, kinds=("edges",), seed=31):
    rng = rng_for(seed, "clidata")
    (root / "images").mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        (root / kind).mkdir(parents=True, exist_ok=True)
    for i in range(n):
        save_image(root / "images" / f"im{i}.png",
                   rng.random((h, w)).astype(np.float32))
        for kind in kinds:
            mask = np.zeros((h, w), dtype=np.float32)
            mask[rng.integers(0, h), :] = 1.0
            save_image(root / kind / f"im{i}.png", mask)


def _fresh_checkpoint(path, seed=8):
    mp = ModelParams.create(rng_for(seed, "cli-model"))
    save_checkpoint(mp, None, path)
    return path


def test_usage_error_exits_1():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_unknown_config_key_exits_1(tmp_path):
    assert main(["synth", "--set", "bogus=1"]) == 1


def test_unreadable_config_exits_1(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "none.cfg")]) == 1


def test_synth_writes_dataset_and_reruns_identically(tmp_path):
    out = tmp_path / "data"
    args = ["synth", "--set", "synth.count=3", "--set", "synth.height=40",
            "--set", "synth.width=48", "--set", f"synth.out_dir={out}"]
    assert main(args) == 0
    first = {p.name: p.read_bytes() for p in (out / "images").iterdir()}
    manifest = (out / "manifest.txt").read_bytes()
    assert len(first) == 3
    assert main(args) == 0
    assert {p.name: p.read_bytes() for p in (out / "images").iterdir()} == first
    assert (out / "manifest.txt").read_bytes() == manifest


def test_train_synth_and_resume(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data)
    base = ["--set", f"train_synth.data_dir={data}",
            "--set", "train.batch_size=2", "--set", "seed=5"]
    full = tmp_path / "full"
    assert main(["train-synth", *base, "--set", "train.epochs=3",
                 "--set", f"train_synth.out_dir={full}"]) == 0
    assert (full / "epoch_003.ckpt").exists()

    part = tmp_path / "part"
    assert main(["train-synth", *base, "--set", "train.epochs=2",
                 "--set", f"train_synth.out_dir={part}"]) == 0
    assert main(["train-synth", *base, "--set", "train.epochs=3",
                 "--set", f"train_synth.out_dir={part}",
                 "--set", f"train_synth.resume={part / 'epoch_002.ckpt'}"]) == 0
    assert (part / "epoch_003.ckpt").read_bytes() == \
        (full / "epoch_003.ckpt").read_bytes()
    assert (part / "loss_log.tsv").read_bytes() == \
        (full / "loss_log.tsv").read_bytes()


def test_annotate_requires_checkpoint(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, kinds=())
    assert main(["annotate", "--set", f"annotate.data_dir={data}"]) == 1


def _annotate_args(data, ckpt):
    return ["annotate", "--set", f"annotate.data_dir={data}",
            "--set", f"annotate.checkpoint={ckpt}",
            "--set", "annotate.n_homographies=2"]


def test_annotate_writes_labels(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, n=2, kinds=())
    ckpt = _fresh_checkpoint(tmp_path / "model.ckpt")
    assert main(_annotate_args(data, ckpt)) == 0
    for kind in ("pixel_labels", "object_labels", "combined_labels"):
        assert sorted(p.name for p in (data / kind).iterdir()) == \
            ["im0.png", "im1.png"]
    assert (data / "labels_manifest.txt").exists()


def test_annotate_partial_failure_exits_2(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, n=2, kinds=())
    (data / "images" / "broken.png").write_text("not a png")
    ckpt = _fresh_checkpoint(tmp_path / "model.ckpt")
    assert main(_annotate_args(data, ckpt)) == 2
    # the healthy images still got labeled
    assert (data / "combined_labels" / "im1.png").exists()


def test_train_real_with_init_checkpoint(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, kinds=("pixel_labels", "object_labels"))
    init = _fresh_checkpoint(tmp_path / "init.ckpt")
    out = tmp_path / "run"
    assert main(["train-real", "--set", f"train_real.data_dir={data}",
                 "--set", f"train_real.out_dir={out}",
                 "--set", f"train_real.init_checkpoint={init}",
                 "--set", "train.epochs=1", "--set", "train.batch_size=2"]) == 0
    assert (out / "epoch_001.ckpt").exists()
    assert (out / "loss_log.tsv").read_text().startswith("epoch\tl_pix\tl_obj")


def test_numerical_failure_exits_3(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, kinds=("pixel_labels", "object_labels"))
    mp = ModelParams.create(rng_for(8, "cli-model"))
    mp.params["objp.w"].data[:] = 1e38
    bad = tmp_path / "bad.ckpt"
    save_checkpoint(mp, None, bad)
    with np.errstate(over="ignore", invalid="ignore"):
        code = main(["train-real", "--set", f"train_real.data_dir={data}",
                     "--set", f"train_real.out_dir={tmp_path / 'run'}",
                     "--set", f"train_real.init_checkpoint={bad}",
                     "--set", "train.epochs=1",
                     "--set", "train.batch_size=4"])
    assert code == 3


def test_train_real_wiring_uses_label_dirs(tmp_path):
    # missing object_labels must fail fast, not silently train on edges
    data = tmp_path / "data"
    _write_dataset(data, kinds=("pixel_labels",))
    assert main(["train-real", "--set", f"train_real.data_dir={data}",
                 "--set", f"train_real.out_dir={tmp_path / 'run'}",
                 "--set", "train.epochs=1"]) == 1


def test_infer_and_eval_roundtrip(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, n=2)
    ckpt = _fresh_checkpoint(tmp_path / "model.ckpt")
    out = tmp_path / "maps"
    assert main(["infer", "--set", f"infer.checkpoint={ckpt}",
                 "--set", f"infer.data_dir={data}",
                 "--set", f"infer.out_dir={out}"]) == 0
    for kind in ("pix", "obj", "fused"):
        assert sorted(p.name for p in (out / kind).iterdir()) == \
            ["im0.png", "im1.png"]
    m = load_image(out / "pix" / "im0.png")
    assert m.shape == (16, 24)

    # evaluating the ground truth against itself is a perfect score
    scores = tmp_path / "scores"
    assert main(["eval", "--set", f"eval.pred_dir={data / 'edges'}",
                 "--set", f"eval.gt_dir={data / 'edges'}",
                 "--set", f"eval.out_dir={scores}",
                 "--set", "eval.n_thresholds=5"]) == 0
    report = (scores / "report.txt").read_text()
    assert "ods = 1.000000" in report
    assert (scores / "pr_curve.tsv").exists()


def test_eval_stem_mismatch_exits_2(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, n=2)
    lonely = tmp_path / "preds"
    lonely.mkdir()
    save_image(lonely / "im0.png", np.zeros((16, 24), dtype=np.float32))
    assert main(["eval", "--set", f"eval.pred_dir={lonely}",
                 "--set", f"eval.gt_dir={data / 'edges'}",
                 "--set", f"eval.out_dir={tmp_path / 'scores'}",
                 "--set", "eval.n_thresholds=3"]) == 2


def test_eval_no_shared_stems_exits_1(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data, n=1)
    lonely = tmp_path / "preds"
    lonely.mkdir()
    save_image(lonely / "other.png", np.zeros((16, 24), dtype=np.float32))
    assert main(["eval", "--set", f"eval.pred_dir={lonely}",
                 "--set", f"eval.gt_dir={data / 'edges'}",
                 "--set", f"eval.out_dir={tmp_path / 'scores'}"]) == 1


def test_missing_images_dir_exits_1(tmp_path):
    assert main(["train-synth",
                 "--set", f"train_synth.data_dir={tmp_path / 'nowhere'}",
                 "--set", f"train_synth.out_dir={tmp_path / 'run'}"]) == 1
