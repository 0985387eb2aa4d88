"""Command-line front end tying the pipeline stages together.

    edgelab <subcommand> --config <path> [--set key=value]...

Subcommands: ``synth`` (generate the synthetic set), ``train-synth``
(pretrain on it), ``annotate`` (pseudo-label a real image directory),
``train-real`` (fine-tune on those labels), ``infer`` (write probability
maps), ``eval`` (score predictions against ground truth).

Exit codes: 0 success, 1 usage or configuration error, 2 completed with
per-item data failures, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .autodiff import AdamState
from .checkpoint import load_checkpoint
from .config import Config, ConfigError, load_config
from .dataset import flat_image_files, ingest_dataset
from .imaging import load_image, save_image
from .model import ModelParams, predict
from .postprocess import fuse
from .pseudolabel import export_labels
from .evaluation import evaluate_dataset, write_report
from .synthetic import generate_dataset
from .training import (load_stage_data, read_loss_log, resume_state,
                       train_stage)

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="plain-text key = value configuration file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append",
                        default=[], dest="overrides",
                        help="override one config key (repeatable)")
    parser = _Parser(prog="edgelab",
                     description="self-supervised edge detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    for name, helptext in (
            ("synth", "generate the synthetic pretraining dataset"),
            ("train-synth", "pretrain on the synthetic dataset"),
            ("annotate", "write pseudo labels for a real image directory"),
            ("train-real", "fine-tune on pseudo labels"),
            ("infer", "write per-image probability maps"),
            ("eval", "score predictions against ground truth")):
        sub.add_parser(name, parents=[common], help=helptext)
    return parser


def _require_path(cfg: Config, key: str) -> str:
    value = cfg[key]
    if not value:
        raise ConfigError(f"{key} must be set for this command")
    return value


def _load_model(path) -> ModelParams:
    mp, _ = load_checkpoint(path)
    return mp


def cmd_synth(cfg: Config) -> int:
    generate_dataset(cfg["synth.count"], cfg["synth.height"],
                     cfg["synth.width"], cfg["seed"], cfg["synth.out_dir"])
    log.info("wrote %d samples to %s", cfg["synth.count"], cfg["synth.out_dir"])
    return 0


def _run_training(cfg: Config, *, stage: str, data_dir: str, out_dir: str,
                  resume: str, init: str, pixel_kind: str,
                  object_kind: str) -> int:
    ds = ingest_dataset(data_dir)
    for w in ds.warnings:
        log.warning("%s", w)
    data = load_stage_data(ds, pixel_kind, object_kind)
    lr = cfg["train.lr"]
    mp = adam = None
    start_epoch = 0
    prior_rows = None
    if resume:
        mp, adam, start_epoch = resume_state(resume, lr)
        log_path = Path(out_dir) / "loss_log.tsv"
        if log_path.exists():
            prior_rows = [r for r in read_loss_log(log_path)
                          if r[0] <= start_epoch]
        log.info("resuming %s from epoch %d", stage, start_epoch)
    elif init:
        mp = _load_model(init)
        adam = AdamState.create(mp.params, lr=lr)
        log.info("initialized %s weights from %s", stage, init)
    train_stage(data, stage=stage, seed=cfg["seed"], lr=lr,
                lam=cfg["train.lam"], epochs=cfg["train.epochs"],
                batch_size=cfg["train.batch_size"], out_dir=out_dir,
                mp=mp, adam=adam, start_epoch=start_epoch,
                prior_rows=prior_rows)
    return 0


def cmd_train_synth(cfg: Config) -> int:
    return _run_training(cfg, stage="synth",
                         data_dir=cfg["train_synth.data_dir"],
                         out_dir=cfg["train_synth.out_dir"],
                         resume=cfg["train_synth.resume"], init="",
                         pixel_kind="edges", object_kind="edges")


def cmd_train_real(cfg: Config) -> int:
    return _run_training(cfg, stage="real",
                         data_dir=cfg["train_real.data_dir"],
                         out_dir=cfg["train_real.out_dir"],
                         resume=cfg["train_real.resume"],
                         init=cfg["train_real.init_checkpoint"],
                         pixel_kind="pixel_labels",
                         object_kind="object_labels")


def cmd_annotate(cfg: Config) -> int:
    mp = _load_model(_require_path(cfg, "annotate.checkpoint"))
    failures = export_labels(cfg["annotate.data_dir"],
                             lambda img: predict(img, mp)[0],
                             cfg.annotator_config(), cfg.label_config())
    if failures:
        for name, err in failures:
            log.error("failed to annotate %s: %s", name, err)
        return 2
    return 0


def cmd_infer(cfg: Config) -> int:
    mp = _load_model(_require_path(cfg, "infer.checkpoint"))
    ds = ingest_dataset(cfg["infer.data_dir"])
    out = Path(cfg["infer.out_dir"])
    for kind in ("pix", "obj", "fused"):
        (out / kind).mkdir(parents=True, exist_ok=True)
    failed = 0
    for sample in ds.samples:
        try:
            o_pix, o_obj = predict(load_image(sample.image_path), mp)
            fused = fuse(o_pix, o_obj, cfg["infer.pix_threshold"],
                         cfg["infer.obj_threshold"])
        except Exception as exc:
            log.error("inference failed on %s: %s", sample.stem, exc)
            failed += 1
            continue
        save_image(out / "pix" / f"{sample.stem}.png", o_pix)
        save_image(out / "obj" / f"{sample.stem}.png", o_obj)
        save_image(out / "fused" / f"{sample.stem}.png", fused)
    log.info("wrote maps for %d images to %s", len(ds.samples) - failed, out)
    return 2 if failed else 0


def cmd_eval(cfg: Config) -> int:
    pred_dir = Path(_require_path(cfg, "eval.pred_dir"))
    gt_dir = Path(_require_path(cfg, "eval.gt_dir"))
    preds = flat_image_files(pred_dir)
    gts = flat_image_files(gt_dir)
    if not preds:
        raise FileNotFoundError(f"no prediction images under {pred_dir}")
    common = sorted(set(preds) & set(gts))
    skipped = sorted(set(preds) ^ set(gts))
    for stem in skipped:
        log.warning("%s present on only one side, skipped", stem)
    if not common:
        raise ValueError(f"no stems shared between {pred_dir} and {gt_dir}")
    report = evaluate_dataset([load_image(preds[s]) for s in common],
                              [load_image(gts[s]) for s in common],
                              n_thresholds=cfg["eval.n_thresholds"],
                              max_dist=cfg["eval.tolerance"])
    write_report(report, cfg["eval.out_dir"])
    print(f"ods={report.ods:.6f} ois={report.ois:.6f} ap={report.ap:.6f} "
          f"({len(common)} images)")
    return 2 if skipped else 0


_COMMANDS = {
    "synth": cmd_synth,
    "train-synth": cmd_train_synth,
    "annotate": cmd_annotate,
    "train-real": cmd_train_real,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except ValueError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
