"""
Joint training of the two streams.

Training runs in two phases.  First the content U-Net's base weights and the
text encoder are fitted as a per-frame text-to-image denoiser (this stands in
for a pretrained image model); the base is then frozen for good.  The joint
phase optimises ``w_con * L_con + w_mot * L_mot`` over the low-rank
increments, the exchange blocks, the motion U-Net, the text encoder and the
motion decomposer/combiner.  The combiner additionally receives a
reconstruction loss (``w_comb``) that teaches it to fuse content with motion.

Every random draw of step ``s`` comes from ``default_rng([seed, phase, s])``,
so a run resumed from a checkpoint replays the uninterrupted run exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, TextIO, Union

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .codec import FrameCodec
from .config import Config
from .content import ContentUNet, noise_loss
from .data import make_corpus, stack_videos
from .errors import ConfigError, FormatError, NumericalError, StateError, TrainingError
from .interaction import DualStreamDenoiser
from .motion import MotionOps, combine, decompose
from .motion_stream import MotionUNet
from .nn import Adam, Module
from .schedule import NoiseSchedule, make_linear_schedule, q_sample
from .tensor import Tensor
from .text import TextEncoder, Vocabulary, tokenize

BASE_PHASE, JOINT_PHASE = 1, 2


def sub_seed(seed: int, *path: int) -> int:
    """Independent 32-bit seed derived from ``seed`` and a component path."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


class DualStreamModel(Module):
    """Everything the generator learns: text encoder, both U-Nets, exchanges and motion ops."""

    _buffers = ("base_trained",)

    def __init__(self, config: Config, vocab_size: int):
        c = config
        channels = c.latent_channels_effective
        self.text = TextEncoder(vocab_size, c.text_dim, c.text_layers, c.text_heads,
                                max_positions=max(32, c.max_tokens), seed=sub_seed(c.seed, 1))
        content = ContentUNet(channels, c.content_width, c.text_dim, c.heads, c.rank,
                              c.adapter_scale, seed=sub_seed(c.seed, 2))
        motion = MotionUNet(channels, c.motion_width, c.text_dim, c.heads, seed=sub_seed(c.seed, 3))
        self.denoiser = DualStreamDenoiser(content, motion, c.exchange_dim, c.exchange_heads,
                                           seed=sub_seed(c.seed, 4))
        self.ops = MotionOps(channels, c.motion_reduction, seed=sub_seed(c.seed, 5))
        self.base_trained = np.array(0)

    @property
    def content(self) -> ContentUNet:
        return self.denoiser.content

    @property
    def motion(self) -> MotionUNet:
        return self.denoiser.motion

    def exchange_parameters(self) -> list[Tensor]:
        return [p for ex in self.denoiser.exchanges for p in ex.parameters()]


@dataclass
class StepLog:
    step: int
    loss_con: float
    loss_mot: float
    loss_comb: float
    total: float

    def line(self) -> str:
        return f"{self.step} {self.loss_con:.8f} {self.loss_mot:.8f} {self.total:.8f}"


@dataclass
class TrainData:
    """Encoded training clips: content latents ``[N, L, C, h, w]`` and token ids ``[N, n]``."""

    latents: np.ndarray
    ids: np.ndarray
    captions: list


@dataclass
class TrainState:
    config: Config
    vocab: Vocabulary
    codec: FrameCodec
    model: DualStreamModel
    schedule: NoiseSchedule
    optimizer: Optional[Adam] = None
    step: int = 0
    history: list = field(default_factory=list)

    def trainable(self) -> list[Tensor]:
        return self.model.trainable_parameters()


def build_state(config: Config, codec: Optional[FrameCodec] = None) -> TrainState:
    """Fresh state; the codec defaults to an (untrained, unless identity) one built from ``config``."""
    if codec is None:
        codec = FrameCodec(config.codec_mode, config.latent_channels, config.image_size,
                           config.codec_width, seed=sub_seed(config.seed, 0))
    if codec.latent_channels != config.latent_channels_effective:
        raise ConfigError(f"codec has {codec.latent_channels} latent channels, config expects "
                          f"{config.latent_channels_effective}")
    vocab = Vocabulary.from_templates()
    model = DualStreamModel(config, len(vocab))
    schedule = make_linear_schedule(config.T, config.beta_start, config.beta_end)
    return TrainState(config, vocab, codec, model, schedule)


def prepare_data(state: TrainState, corpus=None) -> TrainData:
    """Encode the training corpus (the configured synthetic one by default) with the frozen codec."""
    c = state.config
    if corpus is None:
        corpus = make_corpus(c.corpus_size, c.corpus_seed, c.frames, c.image_size)
    videos, captions = stack_videos(corpus)
    latents = state.codec.encode(videos)
    ids = np.stack([tokenize(cap, state.vocab, c.max_tokens) for cap in captions])
    return TrainData(latents, ids, captions)


def calibrate_motion_scale(ops: MotionOps, latents: np.ndarray) -> float:
    """Set ``motion_scale`` so decomposed training latents have unit standard deviation."""
    ops.motion_scale = np.array(1.0)
    with T.no_grad():
        std = float(np.concatenate([decompose(latents[i:i + 16], ops).data.ravel()
                                    for i in range(0, len(latents), 16)]).std())
    ops.motion_scale = np.array(1.0 / max(std, 1e-6))
    return float(ops.motion_scale)


def _batch(state: TrainState, data: TrainData, rng: np.random.Generator):
    c = state.config
    n = len(data.latents)
    idx = rng.choice(n, size=min(c.batch_size, n), replace=False)
    t = rng.integers(1, state.schedule.T + 1, size=len(idx))
    return data.latents[idx], data.ids[idx], t


def _frame_batch(state: TrainState, data: TrainData, rng: np.random.Generator):
    """Single frames from distinct clips as ``[B, 1, C, h, w]``, one step per frame."""
    n, frames = data.latents.shape[:2]
    idx = rng.choice(n, size=min(state.config.base_batch, n), replace=False)
    which = rng.integers(0, frames, size=len(idx))
    t = rng.integers(1, state.schedule.T + 1, size=len(idx))
    return data.latents[idx, which][:, None], data.ids[idx], t


def _guard(step: int, phase: str, fn: Callable):
    try:
        return fn()
    except (NumericalError, TrainingError) as err:
        raise TrainingError(f"{phase} step {step}: {err}") from err


def pretrain_base(state: TrainState, data: TrainData, steps: Optional[int] = None,
                  log: Optional[Callable[[str], None]] = None) -> list[float]:
    """Fit the content base (with the text encoder) as a per-frame denoiser, then freeze it."""
    c = state.config
    steps = c.base_steps if steps is None else steps
    model = state.model
    if int(model.base_trained):
        raise StateError("content base is already trained and frozen")
    content = model.content
    model.freeze()
    for p in content.base_parameters() + model.text.parameters():
        p.requires_grad = True
    params = model.trainable_parameters()
    opt = Adam(params, lr=c.base_lr, betas=(c.adam_beta1, c.adam_beta2), eps=c.adam_eps)
    losses = []
    for step in range(steps):
        rng = np.random.default_rng([c.seed, BASE_PHASE, step])
        z0, ids, t = _frame_batch(state, data, rng)
        eps = rng.standard_normal(z0.shape, dtype=np.float32)

        def run():
            opt.zero_grad()
            prompt = model.text(ids)
            loss = noise_loss(content(q_sample(z0, t, eps, state.schedule), t, prompt), eps, "content")
            loss.backward()
            return loss

        loss = _guard(step, "base", run)
        opt.step()
        losses.append(loss.item())
        if log is not None:
            log(f"base {step} {losses[-1]:.8f}")
    model.base_trained = np.array(1)
    configure_trainable(state)
    return losses


def configure_trainable(state: TrainState) -> Adam:
    """Freeze the codec and content base, unfreeze the joint-phase set, (re)create Adam."""
    c = state.config
    model = state.model
    if not int(model.base_trained):
        raise StateError("the content base must be pretrained before the joint phase")
    state.codec.freeze()
    model.freeze()
    groups = [model.content.adapter_parameters(), model.exchange_parameters(),
              model.text.parameters(), model.ops.parameters()]
    if not c.freeze_motion_stream:
        groups.append(model.motion.parameters())
    for group in groups:
        for p in group:
            p.requires_grad = True
    state.optimizer = Adam(model.trainable_parameters(), lr=c.lr,
                           betas=(c.adam_beta1, c.adam_beta2), eps=c.adam_eps)
    return state.optimizer


def joint_losses(state: TrainState, z0: np.ndarray, ids: np.ndarray, t: np.ndarray,
                 rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
    """``(L_con, L_mot, L_comb)`` for one batch; noise is drawn from ``rng`` in a fixed order."""
    c = state.config
    model = state.model
    eps_content = rng.standard_normal(z0.shape, dtype=np.float32)
    eps_motion = rng.standard_normal(z0.shape, dtype=np.float32)
    comb_noise = rng.standard_normal(z0.shape, dtype=np.float32)
    with T.no_grad():
        m0 = decompose(z0, model.ops).data
    prompt = model.text(ids)
    z_t = q_sample(z0, t, eps_content, state.schedule)
    m_t = q_sample(m0, t, eps_motion, state.schedule)
    eps_c, eps_m = model.denoiser(z_t, m_t, t, prompt)
    loss_con = noise_loss(eps_c, eps_content, "content")
    loss_mot = noise_loss(eps_m, eps_motion, "motion")
    noisy = z0 + np.float32(c.comb_noise) * comb_noise
    fused = combine(noisy, decompose(z0, model.ops), model.ops)
    loss_comb = noise_loss(fused, z0, "combiner")
    return loss_con, loss_mot, loss_comb


def train_step(state: TrainState, data: TrainData) -> StepLog:
    """One joint optimisation step at ``state.step``; advances the step counter."""
    c = state.config
    if state.optimizer is None:
        raise StateError("call configure_trainable (or pretrain_base) before train_step")
    step = state.step
    rng = np.random.default_rng([c.seed, JOINT_PHASE, step])
    z0, ids, t = _batch(state, data, rng)
    opt = state.optimizer

    def run():
        opt.zero_grad()
        lc, lm, lb = joint_losses(state, z0, ids, t, rng)
        total = c.w_con * lc + c.w_mot * lm
        (total + c.w_comb * lb).backward()
        return lc.item(), lm.item(), lb.item(), total.item()

    lc, lm, lb, total = _guard(step, "joint", run)
    if not np.isfinite([lc, lm, lb, total]).all():
        raise TrainingError(f"joint step {step}: non-finite loss (con={lc}, mot={lm}, comb={lb})")
    opt.step()
    record = StepLog(step, lc, lm, lb, total)
    state.history.append(record)
    state.step += 1
    return record


def train(state: TrainState, data: TrainData, steps: int, log_stream: Optional[TextIO] = None,
          checkpoint_path: Union[str, Path, None] = None, checkpoint_every: int = 0) -> list[StepLog]:
    """Run ``steps`` joint steps, writing one ``step loss_con loss_mot total`` line each."""
    records = []
    for _ in range(steps):
        rec = train_step(state, data)
        records.append(rec)
        if log_stream is not None:
            log_stream.write(rec.line() + "\n")
            log_stream.flush()
        if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    return records


def window_means(history: list, width: int = 50) -> tuple[float, float]:
    """Mean total loss over the first and last ``width`` records."""
    totals = np.array([r.total for r in history])
    if len(totals) < width:
        raise ConfigError(f"need at least {width} steps, have {len(totals)}")
    return float(totals[:width].mean()), float(totals[-width:].mean())


# checkpoints -----------------------------------------------------------------

def state_entries(state: TrainState) -> dict[str, np.ndarray]:
    entries = {
        "meta.config": ckpt.text_entry(state.config.to_json()),
        "meta.vocab": ckpt.text_entry(state.vocab.to_json()),
        "meta.step": np.array(state.step, dtype=np.int64),
        "meta.history": np.array([[r.step, r.loss_con, r.loss_mot, r.loss_comb, r.total]
                                  for r in state.history], dtype=np.float64).reshape(-1, 5),
    }
    entries.update({f"codec.{k}": v for k, v in state.codec.state_dict().items()})
    entries.update({f"model.{k}": v for k, v in state.model.state_dict().items()})
    if state.optimizer is not None:
        entries.update({f"optim.{k}": v for k, v in state.optimizer.state_dict().items()})
    return entries


def save_checkpoint(state: TrainState, path: Union[str, Path]) -> None:
    ckpt.save(state_entries(state), path)


def _section(entries: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in entries.items() if k.startswith(prefix)}


def codec_from_entries(entries: dict, config: Config) -> FrameCodec:
    codec = FrameCodec(config.codec_mode, config.latent_channels, config.image_size, config.codec_width)
    codec.load_state_dict(_section(entries, "codec."))
    codec.freeze()
    return codec


def state_from_entries(entries: dict) -> TrainState:
    for key in ("meta.config", "meta.vocab", "meta.step"):
        if key not in entries:
            raise FormatError(f"checkpoint lacks entry '{key}'")
    config = Config.from_json(ckpt.entry_text(entries["meta.config"]))
    vocab = Vocabulary.from_json(ckpt.entry_text(entries["meta.vocab"]))
    if vocab.words != Vocabulary.from_templates().words:
        raise FormatError("checkpoint vocabulary does not match the template vocabulary")
    codec = codec_from_entries(entries, config)
    state = build_state(config, codec)
    state.model.load_state_dict(_section(entries, "model."))
    state.step = int(entries["meta.step"])
    hist = entries.get("meta.history", np.zeros((0, 5)))
    state.history = [StepLog(int(r[0]), *map(float, r[1:])) for r in np.asarray(hist)]
    if int(state.model.base_trained):
        configure_trainable(state)
        optim = _section(entries, "optim.")
        if optim:
            state.optimizer.load_state_dict(optim)
    return state


def load_checkpoint(path: Union[str, Path]) -> TrainState:
    """Rebuild a :class:`TrainState`; nothing is returned unless every entry loads."""
    return state_from_entries(ckpt.load(path))
