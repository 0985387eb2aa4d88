import numpy as np
import pytest

from edgelab.dataset import ingest_dataset
from edgelab.imaging import save_image
from edgelab.seeding import rng_for
from edgelab.training import (StageData, epoch_of_checkpoint, load_stage_data,
                              read_loss_log, resume_state, train_stage)


def _tiny_data(n=4, h=16, w=16, seed=11) -> StageData:
    rng = rng_for(seed, "tinydata")
    images = rng.random((n, h, w)).astype(np.float32)
    pix = rng.random((n, h, w)) < 0.05
    obj = rng.random((n, h, w)) < 0.05
    # guarantee at least one edge pixel per map so losses exercise both terms
    pix[:, 3, 3] = True
    obj[:, 5, 2] = True
    return StageData(stems=[f"s{i}" for i in range(n)], images=images,
                     pixel_maps=pix, object_maps=obj)


def _run(tmp_path, name, **kw):
    args = dict(stage="synth", seed=5, lr=1e-3, lam=1.1, epochs=2,
                batch_size=3, out_dir=tmp_path / name)
    args.update(kw)
    return train_stage(_tiny_data(), **args)


def test_epoch_artifacts(tmp_path):
    mp, adam, rows = _run(tmp_path, "run")
    out = tmp_path / "run"
    assert (out / "epoch_001.ckpt").exists()
    assert (out / "epoch_002.ckpt").exists()
    assert [r[0] for r in rows] == [1, 2]
    logged = read_loss_log(out / "loss_log.tsv")
    assert [r[0] for r in logged] == [1, 2]
    for want, got in zip(rows, logged):
        assert got[1] == pytest.approx(want[1], abs=5e-7)
        assert got[2] == pytest.approx(want[2], abs=5e-7)
    assert adam.step == 4  # ceil(4 / 3) = 2 steps per epoch, 2 epochs


def test_rerun_byte_identical(tmp_path):
    _run(tmp_path, "a")
    _run(tmp_path, "b")
    for fname in ("epoch_001.ckpt", "epoch_002.ckpt", "loss_log.tsv"):
        assert (tmp_path / "a" / fname).read_bytes() == \
            (tmp_path / "b" / fname).read_bytes(), fname


def test_loss_decreases_on_easy_data(tmp_path):
    _, _, rows = _run(tmp_path, "run", epochs=4, batch_size=4)
    total = [lp + lo for _, lp, lo in rows]
    assert total[-1] < total[0]


def test_resume_is_bit_exact(tmp_path):
    mp_full, _, rows_full = _run(tmp_path, "full", epochs=3)
    _run(tmp_path, "part", epochs=2)
    ckpt = tmp_path / "part" / "epoch_002.ckpt"
    mp, adam, start = resume_state(ckpt, lr=1e-3)
    assert start == 2
    prior = read_loss_log(tmp_path / "part" / "loss_log.tsv")
    mp_res, _, rows_res = _run(tmp_path, "part", epochs=3, mp=mp, adam=adam,
                               start_epoch=start, prior_rows=prior)
    assert [r[0] for r in rows_res] == [1, 2, 3]
    # with the exact optimizer scalars restored, resumption reproduces the
    # uninterrupted run down to the last bit
    for name in mp_full.params:
        assert np.array_equal(mp_res.params[name].data,
                              mp_full.params[name].data), name
    assert (tmp_path / "part" / "epoch_003.ckpt").read_bytes() == \
        (tmp_path / "full" / "epoch_003.ckpt").read_bytes()
    assert (tmp_path / "part" / "loss_log.tsv").read_bytes() == \
        (tmp_path / "full" / "loss_log.tsv").read_bytes()


def test_resume_without_optimizer_state_rejected(tmp_path):
    mp, _, _ = _run(tmp_path, "run")
    from edgelab.checkpoint import save_checkpoint
    p = tmp_path / "run" / "epoch_002.ckpt"
    save_checkpoint(mp, None, p)
    with pytest.raises(ValueError, match="no optimizer state"):
        resume_state(p, lr=1e-3)


def test_epochs_below_resume_epoch_rejected(tmp_path):
    with pytest.raises(ValueError, match="below resume epoch"):
        _run(tmp_path, "run", epochs=1, start_epoch=2)


def test_bad_batch_size_rejected(tmp_path):
    with pytest.raises(ValueError, match="batch_size"):
        _run(tmp_path, "run", batch_size=0)


def test_epoch_of_checkpoint():
    assert epoch_of_checkpoint("/x/epoch_007.ckpt") == 7
    assert epoch_of_checkpoint("epoch_123.ckpt") == 123
    with pytest.raises(ValueError, match="epoch_007.ckpt"):
        epoch_of_checkpoint("final.ckpt")


def _write_png_dataset(root, n=3, h=16, w=24, kinds=("edges",)):
    rng = rng_for(99, "pngs")
    (root / "images").mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        (root / kind).mkdir(parents=True, exist_ok=True)
    for i in range(n):
        save_image(root / "images" / f"im{i}.png",
                   rng.random((h, w)).astype(np.float32))
        for kind in kinds:
            save_image(root / kind / f"im{i}.png",
                       (rng.random((h, w)) < 0.1).astype(np.float32))


def test_load_stage_data_from_disk(tmp_path):
    _write_png_dataset(tmp_path, kinds=("edges",))
    ds = ingest_dataset(tmp_path)
    data = load_stage_data(ds, "edges", "edges")
    assert data.images.shape == (3, 16, 24)
    assert data.images.dtype == np.float32
    assert data.pixel_maps.dtype == np.bool_
    assert np.array_equal(data.pixel_maps, data.object_maps)


def test_load_stage_data_crops_to_multiple_of_8(tmp_path):
    _write_png_dataset(tmp_path, h=19, w=25, kinds=("edges",))
    ds = ingest_dataset(tmp_path)
    data = load_stage_data(ds, "edges", "edges")
    assert data.images.shape == (3, 16, 24)


def test_load_stage_data_skips_unlabeled(tmp_path, caplog):
    _write_png_dataset(tmp_path, kinds=("edges",))
    save_image(tmp_path / "images" / "zz_extra.png",
               np.zeros((16, 24), dtype=np.float32))
    ds = ingest_dataset(tmp_path)
    import logging
    with caplog.at_level(logging.WARNING, logger="edgelab.training"):
        data = load_stage_data(ds, "edges", "edges")
    assert len(data.stems) == 3
    assert any("zz_extra" in r.message for r in caplog.records)


def test_load_stage_data_rejects_mixed_sizes(tmp_path):
    _write_png_dataset(tmp_path, kinds=("edges",))
    save_image(tmp_path / "images" / "zz_big.png",
               np.zeros((32, 32), dtype=np.float32))
    save_image(tmp_path / "edges" / "zz_big.png",
               np.zeros((32, 32), dtype=np.float32))
    ds = ingest_dataset(tmp_path)
    with pytest.raises(ValueError, match="uniform image sizes"):
        load_stage_data(ds, "edges", "edges")


def test_load_stage_data_rejects_label_shape_mismatch(tmp_path):
    _write_png_dataset(tmp_path, n=1, kinds=("edges",))
    save_image(tmp_path / "edges" / "im0.png",
               np.zeros((8, 8), dtype=np.float32))
    ds = ingest_dataset(tmp_path)
    with pytest.raises(ValueError, match="differs"):
        load_stage_data(ds, "edges", "edges")


def test_load_stage_data_no_labeled_samples(tmp_path):
    _write_png_dataset(tmp_path, kinds=())
    ds = ingest_dataset(tmp_path)
    with pytest.raises(ValueError, match="no sample has both"):
        load_stage_data(ds, "edges", "edges")
