"""
From corpus to video in about a minute
======================================

A shrunken configuration (32x32 frames, four per clip, ten diffusion steps)
runs the whole pipeline: train the frame codec, fit the content base as a
per-frame denoiser, train both streams jointly, then sample a clip and write
it as PPM frames.  The samples are poor at this size; the point is the flow.
"""

import sys
import tempfile
from pathlib import Path

from dualstream.codec import train_codec
from dualstream.config import Config
from dualstream.data import make_corpus, stack_videos
from dualstream.sampler import ablate_generate, generate, write_generation
from dualstream import trainer as TR

config = Config(corpus_size=12, frames=4, image_size=32, codec_width=16, codec_epochs=4, T=10,
                sample_steps=10, text_dim=16, text_layers=1, text_heads=2, content_width=8,
                motion_width=8, heads=2, exchange_dim=8, exchange_heads=2, rank=2,
                base_steps=60, steps=40)

# 1. frame codec, trained once and frozen
state = TR.build_state(config)
videos, captions = stack_videos(make_corpus(config.corpus_size, config.corpus_seed, config.frames,
                                            config.image_size))
codec_report = train_codec(state.codec, videos, config.codec_epochs, config.codec_lr, config.codec_batch)
print("codec epoch losses", [round(x, 4) for x in codec_report.epoch_losses])

# 2. encode the corpus; calibrate the motion features to unit scale
data = TR.prepare_data(state)
print("motion scale", round(TR.calibrate_motion_scale(state.model.ops, data.latents), 3))

# 3. content base as a text-to-image denoiser, then frozen
base = TR.pretrain_base(state, data)
print(f"base loss {base[0]:.3f} -> {base[-1]:.3f}")

# 4. joint phase: increments, exchanges, motion stream, text encoder, motion ops
records = TR.train(state, data, config.steps, log_stream=sys.stdout)

# 5. sample, with and without the motion stream
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
prompt = "a blue circle moving right"
write_generation(generate(prompt, state, seed=0), state, out / "full")
write_generation(ablate_generate(prompt, state, "motion_stream", seed=0), state, out / "no_motion")
TR.save_checkpoint(state, out / "tiny.dsdn")
print("wrote", sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())[:4], "... to", out)
