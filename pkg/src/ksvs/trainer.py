"""Joint training of mel-synthesis, super-resolution and discriminator."""
from __future__ import annotations

import base64
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from . import checkpoint, dsp, hangul
from .adversary import adv_losses, r1_penalty
from .config import TrainConfig
from .io_utils import atomic_write_text
from .melsyn import melsyn_loss
from .model import build_models
from .score import Score, align_frames
from .srnet import sr_loss
from .tensor import AdamState, NonFiniteError, adam_step, set_dropout_generator

log = logging.getLogger(__name__)

METRIC_KEYS = ("L1_mel", "Ld_mel", "L_att", "L1_diff", "L1_sr", "Ld_sr",
               "L_advG", "L_advD", "R1", "lr_SR", "lr_GAN", "lr")


class TrainingDiverged(RuntimeError):
    pass


def loss_weights(it: int):
    """(lr_SR, lr_GAN) ramps that phase in the SR and adversarial terms."""
    if it < 0:
        raise ValueError("iteration must be >= 0")
    return min(0.2 * (it / 100), 1.0), min(0.01 * int(it / 5000), 1.0)


def lr_schedule(it: int, base_lr: float = 2e-4, halve_every: int = 30000) -> float:
    return base_lr * 0.5 ** (it // halve_every)


# -- data ---------------------------------------------------------------------

@dataclass
class SongData:
    """One song on the coarse grid: ids (L,), mel (80, L), linear (513, 4L)."""
    name: str
    T: np.ndarray
    P: np.ndarray
    M: np.ndarray
    S: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.T)


def prepare_song(score: Score, wav: dsp.Waveform, name: str = "") -> SongData:
    mag = dsp.magnitude(wav)
    L = int(math.ceil(mag.shape[1] / dsp.COARSE))
    mag = np.pad(mag, ((0, 0), (0, dsp.COARSE * L - mag.shape[1])))
    S = dsp.normalize_mag(mag).astype(np.float32)
    M = dsp.to_mel(mag).astype(np.float32)
    aligned = align_frames(score, sr=wav.sample_rate, total_frames=L)
    return SongData(name, aligned.T, aligned.P, M, S)


def load_songs(items) -> List[SongData]:
    from .synthetic import load_item
    songs = []
    for it in items:
        score, wav = load_item(it)
        songs.append(prepare_song(score, wav, it["id"]))
    return songs


@dataclass
class Batch:
    T: torch.Tensor
    P: torch.Tensor
    M: torch.Tensor
    M_prev: torch.Tensor
    S: torch.Tensor


def _crop(song: SongData, start: int, n: int):
    end = start + n
    T = np.full(n, hangul.PAD, np.int64)
    P = np.full(n, hangul.PITCH_PAD, np.int64)
    M = np.zeros((song.M.shape[0], n), np.float32)
    S = np.zeros((song.S.shape[0], 4 * n), np.float32)
    k = min(end, song.n_frames) - start
    T[:k], P[:k], M[:, :k] = song.T[start:start + k], song.P[start:start + k], song.M[:, start:start + k]
    S[:, :4 * k] = song.S[:, 4 * start:4 * (start + k)]
    M_prev = np.zeros_like(M)
    M_prev[:, 1:] = M[:, :-1]
    if start > 0:
        M_prev[:, 0] = song.M[:, start - 1]
    return T, P, M, M_prev, S


def make_batch(crops) -> Batch:
    T, P, M, Mp, S = (np.stack(x) for x in zip(*crops))
    return Batch(torch.from_numpy(T), torch.from_numpy(P), torch.from_numpy(M),
                 torch.from_numpy(Mp), torch.from_numpy(S))


def full_song_batch(song: SongData) -> Batch:
    return make_batch([_crop(song, 0, song.n_frames)])


# -- trainer --------------------------------------------------------------------

def _torch_state(g: torch.Generator) -> str:
    return base64.b64encode(g.get_state().numpy().tobytes()).decode("ascii")


def _set_torch_state(g: torch.Generator, s: str) -> None:
    g.set_state(torch.from_numpy(np.frombuffer(base64.b64decode(s), dtype=np.uint8).copy()))


class Trainer:
    def __init__(self, cfg: TrainConfig, songs: Sequence[SongData],
                 val_songs: Sequence[SongData] = (), log_path: Optional[str] = None,
                 ckpt_path: Optional[str] = None):
        if not songs:
            raise ValueError("no training songs")
        self.cfg = cfg
        self.songs = list(songs)
        self.val_songs = list(val_songs)
        self.log_path = log_path
        self.ckpt_path = ckpt_path
        self.gen, self.disc = build_models(cfg.model_config())
        self.g_params = self.gen.params()
        self.d_params = {f"disc.{k}": p for k, p in self.disc.named_parameters()}
        self.g_state, self.d_state = AdamState(), AdamState()
        self.iteration = 0
        self.rng = np.random.default_rng(cfg.seed)
        self.dropout_gen = torch.Generator().manual_seed(cfg.seed + 1)
        set_dropout_generator(self.gen, self.dropout_gen)

    # sampling
    def sample_batch(self) -> Batch:
        crops = []
        for _ in range(self.cfg.batch_size):
            song = self.songs[int(self.rng.integers(len(self.songs)))]
            start = int(self.rng.integers(0, max(1, song.n_frames - self.cfg.crop_frames + 1)))
            crops.append(_crop(song, start, self.cfg.crop_frames))
        return make_batch(crops)

    def weights(self, it: int):
        w_sr, w_gan = loss_weights(it)
        return w_sr, (w_gan if self.cfg.adversarial else 0.0)

    def train_step(self, batch: Batch, it: Optional[int] = None) -> dict:
        cfg = self.cfg
        it = self.iteration if it is None else it
        w_sr, w_gan = self.weights(it)
        lr = lr_schedule(it, cfg.base_lr, cfg.halve_every)
        self.gen.train()
        ms, sro = self.gen(batch.M_prev, batch.T, batch.P)
        l_ms = melsyn_loss(ms, batch.M, cfg.guided_g)
        l_sr = sr_loss(sro, batch.S)

        loss_d = loss_g = r1 = torch.zeros(())
        if w_gan > 0:
            for p in self.d_params.values():
                p.requires_grad_(True)
                p.grad = None
            real = self.disc(batch.M, batch.S).logit
            fake = self.disc(ms.mel.detach(), sro.spec.detach()).logit
            r1 = r1_penalty(self.disc, batch.M, batch.S, cfg.r1_gamma, cfg.r1_wrt)
            loss_d, _ = adv_losses(real, fake, r1, cfg.gan_mode)
            (w_gan * loss_d).backward()
            self._update(self.d_params, self.d_state, lr, "discriminator")
            for p in self.d_params.values():
                p.requires_grad_(False)
            fake_g = self.disc(ms.mel, sro.spec).logit
            _, loss_g = adv_losses(real.detach(), fake_g, 0.0, cfg.gan_mode)

        total = l_ms.total + w_sr * l_sr.total + w_gan * loss_g
        for p in self.g_params.values():
            p.grad = None
        total.backward()
        self._update(self.g_params, self.g_state, lr, "generator")
        self.iteration = it + 1
        vals = [l_ms.l1, l_ms.ld, l_ms.att, l_ms.l1_diff, l_sr.l1, l_sr.ld, loss_g, loss_d, r1]
        metrics = {k: float(torch.as_tensor(v).detach()) for k, v in zip(METRIC_KEYS, vals)}
        metrics.update(lr_SR=w_sr, lr_GAN=w_gan, lr=lr)
        return metrics

    def _update(self, params, state, lr, which):
        try:
            adam_step(params, None, state, lr, self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        except NonFiniteError as e:
            dump = self.dump_on_failure()
            raise TrainingDiverged(f"{which} update at iteration {self.iteration}: {e}; state dumped to {dump}") from e

    def dump_on_failure(self) -> Optional[str]:
        if not self.ckpt_path:
            return None
        path = self.ckpt_path + ".diverged"
        self.save(path)
        return path

    @torch.no_grad()
    def evaluate_losses(self, songs: Sequence[SongData]) -> dict:
        """Teacher-forced losses over whole songs with dropout off."""
        self.gen.eval()
        sums = {k: 0.0 for k in ("L1_mel", "Ld_mel", "L_att", "L1_diff", "L1_sr", "Ld_sr")}
        try:
            for song in songs:
                b = full_song_batch(song)
                ms, sro = self.gen(b.M_prev, b.T, b.P)
                l_ms, l_sr = melsyn_loss(ms, b.M, self.cfg.guided_g), sr_loss(sro, b.S)
                for k, v in zip(sums, (l_ms.l1, l_ms.ld, l_ms.att, l_ms.l1_diff, l_sr.l1, l_sr.ld)):
                    sums[k] += float(v) / len(songs)
        finally:
            self.gen.train()
        return sums

    def fit(self, iters: Optional[int] = None, callback=None, batch: Optional[Batch] = None) -> List[dict]:
        """Run until ``iters`` total iterations; returns the metric records.

        Passing ``batch`` trains on that one cached batch every step (overfit mode).
        """
        target = self.cfg.iters if iters is None else iters
        records = []
        log_file = open(self.log_path, "a", encoding="utf-8") if self.log_path else None
        try:
            while self.iteration < target:
                it = self.iteration
                metrics = self.train_step(batch if batch is not None else self.sample_batch(), it)
                if not all(math.isfinite(v) for v in metrics.values()):
                    dump = self.dump_on_failure()
                    raise TrainingDiverged(f"non-finite loss at iteration {it}; state dumped to {dump}")
                records.append(metrics)
                if log_file and it % self.cfg.log_every == 0:
                    log_file.write(json.dumps({"iter": it, **metrics}) + "\n")
                if self.val_songs and (it + 1) % self.cfg.val_every == 0:
                    val = self.evaluate_losses(self.val_songs)
                    log.info("iter %d val %s", it + 1, val)
                    if log_file:
                        log_file.write(json.dumps({"iter": it, "val": val}) + "\n")
                if self.ckpt_path and (it + 1) % self.cfg.ckpt_every == 0:
                    self.save(self.ckpt_path)
                if callback:
                    callback(it, metrics)
        finally:
            if log_file:
                log_file.close()
        return records

    # checkpointing
    def state(self):
        meta = {"config": self.cfg.to_dict(), "iteration": self.iteration,
                "adam_t": {"gen": self.g_state.t, "disc": self.d_state.t},
                "rng": {"numpy": self.rng.bit_generator.state, "dropout": _torch_state(self.dropout_gen)}}
        tensors = {**self.g_params, **self.d_params}
        for tag, params, st in (("gen", self.g_params, self.g_state), ("disc", self.d_params, self.d_state)):
            for name in params:
                if name in st.m:
                    tensors[f"adam.{tag}.m.{name}"] = st.m[name]
                    tensors[f"adam.{tag}.v.{name}"] = st.v[name]
        return meta, tensors

    def save(self, path) -> None:
        checkpoint.save(path, *self.state())

    @classmethod
    def from_checkpoint(cls, path, songs, val_songs=(), **kw) -> "Trainer":
        meta, tensors = checkpoint.load(path)
        cfg = TrainConfig.from_dict(meta["config"])
        tr = cls(cfg, songs, val_songs, **kw)
        tr.load_state(meta, tensors)
        return tr

    def load_state(self, meta, tensors) -> None:
        missing = [n for n in list(self.g_params) + list(self.d_params) if n not in tensors]
        if missing:
            raise checkpoint.CheckpointError(f"checkpoint lacks parameters: {missing[:3]}...")
        with torch.no_grad():
            for params in (self.g_params, self.d_params):
                for name, p in params.items():
                    if tuple(tensors[name].shape) != tuple(p.shape):
                        raise checkpoint.CheckpointError(f"shape mismatch for {name}")
                    p.copy_(tensors[name])
        for tag, params, st in (("gen", self.g_params, self.g_state), ("disc", self.d_params, self.d_state)):
            st.t = int(meta["adam_t"][tag])
            st.m, st.v = {}, {}
            for name in params:
                key = f"adam.{tag}.m.{name}"
                if key in tensors:
                    st.m[name] = tensors[key].clone()
                    st.v[name] = tensors[f"adam.{tag}.v.{name}"].clone()
        self.iteration = int(meta["iteration"])
        self.rng.bit_generator.state = meta["rng"]["numpy"]
        _set_torch_state(self.dropout_gen, meta["rng"]["dropout"])


def load_generator(path):
    """Generator (eval mode) and TrainConfig from a checkpoint file."""
    meta, tensors = checkpoint.load(path)
    cfg = TrainConfig.from_dict(meta["config"])
    gen, _ = build_models(cfg.model_config())
    with torch.no_grad():
        for name, p in gen.params().items():
            if name not in tensors:
                raise checkpoint.CheckpointError(f"checkpoint lacks parameter {name}")
            p.copy_(tensors[name])
    gen.eval()
    return gen, cfg


def write_config(path, cfg: TrainConfig) -> None:
    atomic_write_text(path, json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
