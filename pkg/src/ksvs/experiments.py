"""Small reproducible experiments on synthetic data (overfit run, adversarial ablation)."""
from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import replace
from typing import Optional

import numpy as np
import torch

from . import synthetic
from .config import TrainConfig
from .trainer import Trainer, _crop, full_song_batch, load_songs, make_batch


def synthetic_songs(n_songs: int, seed: int = 0, out_dir: Optional[str] = None):
    """(train, val, test) SongData lists for a freshly generated dataset."""
    out_dir = out_dir or tempfile.mkdtemp(prefix="ksvs_data_")
    manifest = synthetic.make_dataset(out_dir, n_songs=n_songs, seed=seed)
    items = synthetic.load_manifest(manifest)
    split = {k: [it for it in items if it["split"] == k] for k in ("train", "val", "test")}
    return tuple(load_songs(split[k]) for k in ("train", "val", "test"))


@torch.no_grad()
def crops_mel_l1(trainer: Trainer, batch) -> float:
    """Teacher-forced mel L1 on a fixed batch, dropout off."""
    gen = trainer.gen
    gen.eval()
    try:
        ms, _ = gen(batch.M_prev, batch.T, batch.P)
        return float((ms.mel - batch.M).abs().mean())
    finally:
        gen.train()


def overfit_run(iters: int = 2000, seed: int = 0, d_model: int = 64, batch_size: int = 2,
                crop_frames: int = 64, cached: bool = True, log=None) -> dict:
    """Train on two synthetic songs and track mel L1 on fixed training crops.

    ``cached`` trains on exactly those crops every step (overfit mode);
    otherwise batches are random crops and the fixed crops only measure.
    """
    songs = synthetic_songs(2, seed)[0]  # fewer than 3 songs: all go to the train split
    cfg = TrainConfig(d_model=d_model, sr_channels=d_model, batch_size=batch_size,
                      crop_frames=crop_frames, iters=iters, seed=seed)
    tr = Trainer(cfg, songs)
    # fixed evaluation crops: one per song, from the middle
    eval_batch = make_batch([_crop(s, max(0, (s.n_frames - crop_frames) // 2), crop_frames) for s in songs])
    t0 = time.time()
    curve = {}

    def cb(it, m):
        if it + 1 in (10, 100, 500, 1000, iters) or (it + 1) % 250 == 0:
            curve[it + 1] = crops_mel_l1(tr, eval_batch)
            if log:
                log(f"iter {it + 1} crop mel L1 {curve[it + 1]:.5f}")

    records = tr.fit(iters, callback=cb, batch=eval_batch if cached else None)
    return {"cached": cached, "curve": curve, "l1_iter10": curve[10], "l1_final": curve[iters],
            "ratio": curve[iters] / curve[10], "seconds": time.time() - t0,
            "train_l1_first": records[0]["L1_mel"], "train_l1_last": records[-1]["L1_mel"]}


HIGH_BAND = 0.25
GAN_START = 5000  # first iteration with a non-zero adversarial weight


@torch.no_grad()
def high_band_l1(trainer: Trainer, song, autoregressive: bool = False) -> float:
    """L1 between predicted and true linear spectrogram over the top quarter of bins."""
    gen = trainer.gen
    gen.eval()
    try:
        b = full_song_batch(song)
        if autoregressive:
            ms = gen.melsyn.synth_autoregressive(b.T, b.P)
        else:
            ms = gen.melsyn(b.M_prev, b.T, b.P)
        spec = gen.sr(ms.mel, ms.enc.K, ms.enc.V, ms.enc.E_P).spec
    finally:
        gen.train()
    lo = int(round((1 - HIGH_BAND) * spec.shape[1]))
    return float((spec[:, lo:] - b.S[:, lo:]).abs().mean())


def adversarial_ablation(seeds=(0, 1, 2), iters: int = 10000, n_songs: int = 10,
                         base: Optional[TrainConfig] = None, data_seed: int = 0,
                         log=None, out_path: Optional[str] = None) -> dict:
    """Adversarial ramp on vs. off, same data and init per seed; lower high-band L1 wins."""
    base = base or TrainConfig(d_model=32, sr_channels=32, batch_size=2, crop_frames=32)
    train, _, test = synthetic_songs(n_songs, data_seed)
    held_out = test[0]
    runs = []
    for seed in seeds:
        row = {"seed": seed}
        # both arms are identical until the first adversarial step; train that prefix once
        shared = Trainer(replace(base, seed=seed, iters=iters, adversarial=True), train)
        t0 = time.time()
        shared.fit(min(iters, GAN_START))
        prefix = time.time() - t0
        meta, tensors = shared.state()
        tensors = {k: v.detach().clone() for k, v in tensors.items()}
        for name, adv in (("gan", True), ("l1_only", False)):
            tr = Trainer(replace(base, seed=seed, iters=iters, adversarial=adv), train)
            tr.load_state(meta, tensors)
            t0 = time.time()
            tr.fit(iters)
            row[name] = {"high_band_l1": high_band_l1(tr, held_out),
                         "high_band_l1_ar": high_band_l1(tr, held_out, autoregressive=True),
                         "seconds": prefix + time.time() - t0}
            if log:
                log(f"seed {seed} {name}: {row[name]}")
        row["gan_wins"] = row["gan"]["high_band_l1"] < row["l1_only"]["high_band_l1"]
        runs.append(row)
        if out_path:
            _dump(out_path, base, iters, n_songs, runs)
    return _dump(out_path, base, iters, n_songs, runs)


def _dump(path, base, iters, n_songs, runs) -> dict:
    wins = sum(r["gan_wins"] for r in runs)
    result = {"config": base.to_dict(), "iters": iters, "n_songs": n_songs, "runs": runs,
              "gan_wins": wins, "majority": wins * 2 > len(runs)}
    if path:
        from .io_utils import atomic_write_text
        atomic_write_text(path, json.dumps(result, indent=1))
    return result
