"""Command-line entry point: ``ksvs <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from typing import List, Optional

from . import __version__

log = logging.getLogger("ksvs")


@dataclass
class CommandResult:
    code: int
    summary: str
    artifacts: List[str] = field(default_factory=list)


class CliError(Exception):
    pass


def _need_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise CliError(f"{flag} is required")
    if not os.path.isfile(path):
        raise CliError(f"file not found: {path}")
    return path


def _need_out(a) -> str:
    if not a.out:
        raise CliError("--out is required")
    return a.out


def cmd_dataset(a) -> CommandResult:
    from .synthetic import load_manifest, make_dataset
    if a.action != "synth":
        raise CliError(f"unknown dataset action {a.action!r} (expected 'synth')")
    out = _need_out(a)
    manifest = make_dataset(out, n_songs=a.n_songs, seed=a.seed or 0)
    items = load_manifest(manifest)
    paths = [manifest] + [p for it in items for p in (it["score"], it["wav"])]
    return CommandResult(0, f"wrote {len(items)} songs to {out}", paths)


def _train_config(a):
    from .config import TrainConfig
    cfg = TrainConfig.from_json(_need_file(a.config, "--config")) if a.config else TrainConfig()
    over = {}
    if a.manifest:
        over["manifest"] = a.manifest
    if a.seed is not None:
        over["seed"] = a.seed
    if a.iters is not None:
        over["iters"] = a.iters
    return replace(cfg, **over)


def cmd_train(a) -> CommandResult:
    from .synthetic import load_manifest
    from .trainer import Trainer, load_songs, write_config
    cfg = _train_config(a)
    manifest = _need_file(cfg.manifest, "--manifest")
    out = _need_out(a)
    os.makedirs(out, exist_ok=True)
    items = load_manifest(manifest)
    train = load_songs([it for it in items if it["split"] == "train"])
    val = load_songs([it for it in items if it["split"] == "val"])
    ckpt = os.path.join(out, "checkpoint.svsk")
    metrics = os.path.join(out, "metrics.jsonl")
    kw = dict(log_path=metrics, ckpt_path=ckpt)
    if a.checkpoint:
        tr = Trainer.from_checkpoint(_need_file(a.checkpoint, "--checkpoint"), train, val, **kw)
        tr.cfg = replace(tr.cfg, iters=cfg.iters)
    else:
        tr = Trainer(cfg, train, val, **kw)
    write_config(os.path.join(out, "config.json"), tr.cfg)
    tr.fit(tr.cfg.iters)
    tr.save(ckpt)
    return CommandResult(0, f"trained to iteration {tr.iteration}", [ckpt, metrics, os.path.join(out, "config.json")])


def _load_for_inference(a):
    from .synthetic import load_score
    from .trainer import load_generator
    score_path = _need_file(a.score, "--score")
    gen, _ = load_generator(_need_file(a.checkpoint, "--checkpoint"))
    return gen, load_score(score_path)


def cmd_synth(a) -> CommandResult:
    from .dsp import write_wav
    from .synthesis import synthesize
    out = _need_out(a)
    gen, score = _load_for_inference(a)
    res = synthesize(gen, score, gl_iters=a.gl_iters)
    write_wav(out, res.wave)
    return CommandResult(0, f"wrote {len(res.wave.samples) / res.wave.sample_rate:.2f} s of audio", [out])


def cmd_eval(a) -> CommandResult:
    from .evaluate import evaluate_model, evaluate_reference
    from .synthetic import load_manifest
    manifest = _need_file(a.manifest, "--manifest")
    out = _need_out(a)
    if a.reference:
        report = evaluate_reference([it for it in load_manifest(manifest) if it["split"] == a.split])
    else:
        report = evaluate_model(_need_file(a.checkpoint, "--checkpoint"), manifest, a.split, a.gl_iters)
    csv_path = os.path.splitext(out)[0] + ".csv"
    report.save(out, csv_path)
    agg = json.loads(report.to_json())["aggregate"]
    return CommandResult(0, f"precision {agg['precision']:.3f} recall {agg['recall']:.3f} f1 {agg['f1']:.3f}",
                         [out, csv_path])


def cmd_plot(a) -> CommandResult:
    from .plot import render_spectrogram_image
    from .synthesis import synthesize
    out = _need_out(a)
    gen, score = _load_for_inference(a)
    res = synthesize(gen, score, gl_iters=0)
    written = []
    for name, mat in (("mask", res.mask), ("dm", res.dm), ("mel", res.mel), ("linear", res.linear)):
        written += render_spectrogram_image(mat, os.path.join(out, name + ".pgm"))
    return CommandResult(0, f"wrote {len(written)} images to {out}", written)


def cmd_gradcheck(a) -> CommandResult:
    from .gradcheck import run_suite
    res = run_suite(seed=a.seed or 0, log=print)
    worst = max(res.values())
    ok = worst < 1e-4
    return CommandResult(0 if ok else 1, f"max relative error {worst:.2e} ({'ok' if ok else 'FAILED'})")


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "synth": cmd_synth, "eval": cmd_eval,
            "plot": cmd_plot, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    for flag in ("--config", "--manifest", "--checkpoint", "--score", "--out"):
        common.add_argument(flag)
    common.add_argument("--seed", type=int)
    common.add_argument("--iters", type=int)
    p = argparse.ArgumentParser(prog="ksvs", description="Korean singing voice synthesis toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("dataset", parents=[common], help="generate a synthetic dataset")
    d.add_argument("action", choices=["synth"])
    d.add_argument("--n-songs", type=int, default=10)
    sub.add_parser("train", parents=[common], help="train (or resume with --checkpoint)")
    for name, hlp in (("synth", "score -> WAV"), ("plot", "mask / D_M / mel / linear images")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--gl-iters", type=int, default=60)
    e = sub.add_parser("eval", parents=[common], help="pitch precision/recall/F1 on a split")
    e.add_argument("--split", default="test")
    e.add_argument("--gl-iters", type=int, default=60)
    e.add_argument("--reference", action="store_true", help="score the recorded audio instead of a model")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return p


def dispatch(argv=None) -> CommandResult:
    """Parse and run; usage errors still raise SystemExit from argparse."""
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[a.command](a)
    except (CliError, FileNotFoundError) as e:
        return CommandResult(2, f"error: {e}")
    except ValueError as e:
        return CommandResult(1, f"error: {e}")


def main(argv=None) -> int:
    res = dispatch(argv)
    print(res.summary, file=sys.stderr if res.code else sys.stdout)
    for path in res.artifacts:
        print(path)
    return res.code


if __name__ == "__main__":
    sys.exit(main())
