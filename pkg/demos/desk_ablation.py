"""
Does the motion stream make frames more consistent?
===================================================

The desk-scale experiment: train at the default configuration (100 clips of
64x64, eight frames, 50 diffusion steps), fit the evaluation embedder, then
sample every prompt and seed twice, once with the full model and once with
the motion stream switched off, and compare frame consistency with a paired
sign test.  Expect roughly half an hour on one CPU core.
"""

import sys
import time
from pathlib import Path

import numpy as np

from dualstream.ablation import ablation_study
from dualstream.codec import train_codec
from dualstream.config import Config
from dualstream.data import held_out_corpus, make_corpus, stack_videos
from dualstream.metrics import fit_embedder, matched_vs_shuffled
from dualstream.sampler import ablate_generate, generate, write_generation
from dualstream import trainer as TR

config = Config()
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("desk_run")
out.mkdir(parents=True, exist_ok=True)
start = time.time()

state = TR.build_state(config)
videos, _ = stack_videos(make_corpus(config.corpus_size, config.corpus_seed, config.frames, config.image_size))
train_codec(state.codec, videos, config.codec_epochs, config.codec_lr, config.codec_batch, seed=config.seed)
held, _ = stack_videos(held_out_corpus(20, config.corpus_seed, config.frames, config.image_size))
print(f"codec held-out mse {state.codec.reconstruction_mse(held):.5f}")

data = TR.prepare_data(state)
TR.calibrate_motion_scale(state.model.ops, data.latents)
TR.pretrain_base(state, data)
with open(out / "train.log", "w") as log:
    TR.train(state, data, config.steps, log_stream=log)
first, last = TR.window_means(state.history)
print(f"joint loss {first:.4f} -> {last:.4f} (ratio {last / first:.3f}), {(time.time() - start) / 60:.1f} min")
TR.save_checkpoint(state, out / "model.dsdn")

# evaluation embedder, trained separately and frozen
vocab = state.vocab
embedder, _ = fit_embedder(config, vocab)
hv, hc = stack_videos(held_out_corpus(50, config.corpus_seed, config.frames, config.image_size))
print(f"embedder: matched caption beats a shuffled one on {matched_vs_shuffled(hv, hc, embedder, vocab)[0]:.0%}")

prompts = ["a red square moving right", "a green circle moving up", "a blue square moving left",
           "a red circle moving down", "a blue circle moving right", "a green square moving down"]
result = ablation_study(state, embedder, prompts, [0, 1, 2, 3], "motion_stream")
print(f"frame consistency: full {result.full.mean():.4f}, motion stream off {result.ablated.mean():.4f}")
print(f"full model wins {result.wins} of {len(result.full) - result.ties} pairs, sign test p = {result.p_value:.3g}")

write_generation(generate(prompts[0], state, seed=0), state, out / "full")
write_generation(ablate_generate(prompts[0], state, "motion_stream", seed=0), state, out / "no_motion")
print("frames in", out)
