"""
Command-line entry point.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on
runtime failures (bad checkpoints, diverged training, I/O errors).
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from .codec import FrameCodec, train_codec
from .config import Config, describe_defaults, load_config
from .data import corpus_hash, dump_corpus, held_out_corpus, make_corpus, stack_videos
from .errors import (ConfigError, ContractError, DimensionError, FormatError, NumericalError,
                     StateError, TrainingError)
from .media import read_frames, read_manifest, write_manifest
from .text import Vocabulary

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _say(text: str = "") -> None:
    print(text, flush=True)


# ---------------------------------------------------------------- commands

def cmd_data_gen(args, config: Config) -> None:
    n = config.corpus_size if args.n is None else args.n
    seed = config.corpus_seed if args.seed is None else args.seed
    corpus = make_corpus(n, seed, config.frames, config.image_size)
    out = Path(args.out)
    dump_corpus(corpus, out)
    digest = corpus_hash(corpus)
    write_manifest(out / "manifest.json", {"clips": n, "seed": seed, "frames": config.frames,
                                           "image_size": config.image_size, "corpus_hash": digest,
                                           "version": __version__})
    _say(f"wrote {n} clips to {out} (corpus hash {digest})")


def cmd_train_codec(args, config: Config) -> None:
    from .trainer import sub_seed
    if config.codec_mode != "learned":
        raise ConfigError("codec_mode is 'identity'; nothing to train")
    videos, _ = stack_videos(make_corpus(config.corpus_size, config.corpus_seed, config.frames,
                                         config.image_size))
    codec = FrameCodec("learned", config.latent_channels, config.image_size, config.codec_width,
                       seed=sub_seed(config.seed, 0))
    report = train_codec(codec, videos, config.codec_epochs, config.codec_lr, config.codec_batch,
                         seed=config.seed)
    for i, loss in enumerate(report.epoch_losses):
        _say(f"epoch {i} loss {loss:.6f}")
    if report.halted:
        _say(f"halted: {report.reason}")
    held, _ = stack_videos(held_out_corpus(20, config.corpus_seed, config.frames, config.image_size))
    _say(f"held-out reconstruction mse {codec.reconstruction_mse(held):.6f}")
    entries = {f"codec.{k}": v for k, v in codec.state_dict().items()}
    entries["meta.config"] = ckpt.text_entry(config.to_json())
    ckpt.save(entries, args.out)
    _say(f"saved codec to {args.out}")


def _load_embedder(path):
    from .metrics import FrameEmbedder
    entries = ckpt.load(path)
    if "meta.config" not in entries:
        raise FormatError(f"{path}: missing entry 'meta.config'")
    config = Config.from_json(ckpt.entry_text(entries["meta.config"]))
    vocab = Vocabulary.from_json(ckpt.entry_text(entries["meta.vocab"]))
    emb = FrameEmbedder(len(vocab), config.embedder_dim, config.image_size, config.max_tokens)
    emb.load_state_dict({k[len("embedder."):]: v for k, v in entries.items() if k.startswith("embedder.")})
    emb.freeze()
    return emb, vocab


def cmd_train_embedder(args, config: Config) -> None:
    from .metrics import fit_embedder, matched_vs_shuffled
    vocab = Vocabulary.from_templates()
    emb, report = fit_embedder(config, vocab)
    for i, loss in enumerate(report.epoch_losses):
        _say(f"epoch {i} loss {loss:.6f}")
    held_v, held_c = stack_videos(held_out_corpus(50, config.corpus_seed, config.frames, config.image_size))
    frac, _, _ = matched_vs_shuffled(held_v, held_c, emb, vocab, seed=config.seed)
    _say(f"held-out matched > shuffled caption: {frac:.3f}")
    entries = {f"embedder.{k}": v for k, v in emb.state_dict().items()}
    entries["meta.config"] = ckpt.text_entry(config.to_json())
    entries["meta.vocab"] = ckpt.text_entry(vocab.to_json())
    ckpt.save(entries, args.out)
    _say(f"saved embedder to {args.out}")


def cmd_train(args, config: Config) -> None:
    from .trainer import (build_state, calibrate_motion_scale, codec_from_entries, load_checkpoint,
                          prepare_data, pretrain_base, save_checkpoint, train)
    if args.resume:
        state = load_checkpoint(args.resume)
        if args.config and state.config != config:
            raise ConfigError("--config differs from the configuration stored in the resumed checkpoint")
        config = state.config
    else:
        codec = None
        if config.codec_mode == "learned":
            if not args.codec:
                raise UsageError("train: --codec is required when codec_mode = learned")
            codec = codec_from_entries(ckpt.load(args.codec), config)
            if not int(codec.trained):
                raise StateError(f"{args.codec}: codec is untrained")
        state = build_state(config, codec)
    data = prepare_data(state)
    log = open(args.log, "a") if args.log else sys.stdout
    try:
        if not int(state.model.base_trained):
            scale = calibrate_motion_scale(state.model.ops, data.latents)
            _say(f"motion scale {scale:.6f}")
            start = time.time()
            losses = pretrain_base(state, data)
            if losses:
                _say(f"content base: {len(losses)} steps, loss {np.mean(losses[:50]):.4f} -> "
                     f"{np.mean(losses[-50:]):.4f} ({time.time() - start:.0f}s)")
        target = config.steps if args.steps is None else args.steps
        remaining = max(0, target - state.step)
        start = time.time()
        train(state, data, remaining, log, args.out, args.checkpoint_every)
        _say(f"joint steps {state.step} ({time.time() - start:.0f}s)")
    finally:
        if log is not sys.stdout:
            log.close()
    save_checkpoint(state, args.out)
    _say(f"saved checkpoint to {args.out}")


def _sample(args, disable: Optional[str]) -> None:
    from .sampler import generate_batch, write_generation
    from .trainer import load_checkpoint
    state = load_checkpoint(args.checkpoint)
    if not int(state.model.base_trained):
        raise StateError(f"{args.checkpoint}: model has not been trained")
    gen = generate_batch([args.prompt], [args.seed], state, args.steps, args.frames, disable)[0]
    out = write_generation(gen, state, args.out)
    _say(f"wrote {gen.video.shape[0]} frames to {out}")


def cmd_sample(args, config: Config) -> None:
    _sample(args, None)


def cmd_ablate(args, config: Config) -> None:
    _sample(args, args.disable)


def _prompt_for(video_dir: Path) -> str:
    manifest = video_dir / "manifest.json"
    if manifest.exists():
        data = read_manifest(manifest)
        if "prompt" in data:
            return data["prompt"]
    caption = video_dir / "caption.txt"
    if caption.exists():
        return caption.read_text().strip()
    raise FormatError(f"{video_dir}: no prompt in manifest.json and no caption.txt")


def cmd_eval(args, config: Config) -> None:
    from .metrics import frame_consistency, textual_alignment
    emb, vocab = _load_embedder(args.embedder)
    rows = []
    for d in map(Path, args.videos):
        video = read_frames(d)
        fc = frame_consistency(video, emb)
        ta = textual_alignment(video, _prompt_for(d), emb, vocab)
        rows.append((fc, ta))
        _say(f"{d.name} {fc:.6f} {ta:.6f}")
    means = np.mean(rows, axis=0)
    _say(f"mean {means[0]:.6f} {means[1]:.6f}")


def cmd_gradcheck(args, config: Config) -> int:
    from .gradcheck import TOLERANCE, check_networks, run_kernel_suite
    start = time.time()
    results = run_kernel_suite(range(args.seeds))
    results.update(check_networks())
    worst = 0.0
    for name, err in results.items():
        worst = max(worst, err)
        _say(f"{name:24s} {err:.3e} {'ok' if err <= TOLERANCE else 'FAIL'}")
    _say(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g}, {time.time() - start:.0f}s)")
    return 0 if worst <= TOLERANCE else 2


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualstream", description="Desk-scale dual-stream text-to-video diffusion.",
                     epilog="configuration keys (key = value files):\n" + describe_defaults(),
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file (defaults when omitted)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    data = sub.add_parser("data", help="synthetic corpus tools")
    data_sub = data.add_subparsers(dest="data_command", required=True, parser_class=_Parser)
    gen = data_sub.add_parser("gen", parents=[common], help="dump the synthetic corpus as PPM clips")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int)
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_data_gen)

    p = sub.add_parser("train-codec", parents=[common], help="train the frame codec")
    p.add_argument("--out", required=True, help="codec checkpoint to write")
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-embedder", parents=[common], help="train the evaluation embedder")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_embedder)

    p = sub.add_parser("train", parents=[common], help="pretrain the content base, then train jointly")
    p.add_argument("--codec", help="codec checkpoint from train-codec")
    p.add_argument("--out", required=True, help="model checkpoint to write")
    p.add_argument("--resume", help="continue from this model checkpoint")
    p.add_argument("--steps", type=int, help="total joint steps (default: config steps)")
    p.add_argument("--log", help="append 'step loss_con loss_mot total' lines here (default stdout)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    for name, fn, text in (("sample", cmd_sample, "generate a video"),
                           ("ablate", cmd_ablate, "generate with one component disabled")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--prompt", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, help="reverse steps (default: config sample_steps)")
        p.add_argument("--frames", type=int)
        p.add_argument("--out", required=True, help="directory for frames and manifest.json")
        if name == "ablate":
            p.add_argument("--disable", required=True, choices=("motion_stream", "interaction", "adapter"))
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", parents=[common], help="score video directories")
    p.add_argument("--embedder", required=True)
    p.add_argument("videos", nargs="+", help="directories with frame_###.ppm and a prompt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20, help="random cases per kernel")
    p.set_defaults(func=cmd_gradcheck)
    return parser


RUNTIME_ERRORS = (FormatError, StateError, TrainingError, NumericalError, DimensionError,
                  ContractError, OSError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config)
        code = args.func(args, config)
        return int(code or 0)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
