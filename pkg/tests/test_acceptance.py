"""
Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The fast criteria use their own fixtures; the training, ablation and
persistence criteria share the session-wide desk run (codec, content base
and 500 joint steps at the default configuration).
"""
import time

import numpy as np
import pytest

from dualstream import sampler as S
from dualstream import trainer as TR
from dualstream.ablation import ablation_study
from dualstream.content import ContentUNet, LowRankAdapter, apply_adapter
from dualstream.gradcheck import TOLERANCE, check_networks, run_kernel_suite
from dualstream.interaction import CrossStreamBlock, ExchangeBlock, cross_attend, exchange
from dualstream.motion import MotionOps, combine, decompose
from dualstream.schedule import make_linear_schedule, q_sample
from dualstream.tensor import Tensor
from dualstream.text import PromptEmbedding

from conftest import report
from test_motion_ops import identity_ops, random_ops, reference_combine, reference_decompose

ABLATION_PROMPTS = ["a red square moving right", "a green circle moving up", "a blue square moving left",
                    "a red circle moving down", "a blue circle moving right", "a green square moving down"]
ABLATION_SEEDS = [0, 1, 2, 3]


def test_gradient_suite():
    start = time.perf_counter()
    results = run_kernel_suite(range(20))
    results.update(check_networks())
    seconds = time.perf_counter() - start
    worst_name = max(results, key=results.get)
    worst = results[worst_name]
    ok = worst <= TOLERANCE and seconds <= 300
    report("gradient suite", ok, f"{len(results)} checks, max rel err {worst:.2e} ({worst_name}), {seconds:.0f}s")
    assert worst <= TOLERANCE
    assert seconds <= 300


def test_schedule_identities():
    rng = np.random.default_rng(0)
    product_err = 0.0
    for T in (1, 2, 10, 50, 1000):
        s = make_linear_schedule(T, float(rng.uniform(1e-4, 0.01)), float(rng.uniform(0.02, 0.3)))
        running = np.cumprod(1.0 - s.beta)
        product_err = max(product_err, float(np.max(np.abs(running - s.alpha_bar))))
        loop = 1.0
        for k in range(T):
            loop *= 1.0 - s.beta[k]
            product_err = max(product_err, abs(loop - s.alpha_bar[k]))

    s = make_linear_schedule(50, 0.001, 0.2)
    n = 100_000
    moment_ok = True
    worst_mean_z, worst_var_rel = 0.0, 0.0
    for t in (1, 10, 25, 50):
        z0 = np.array([1.5, -0.7, 0.0])
        eps = rng.standard_normal((n, 3))
        x = q_sample(np.broadcast_to(z0, (n, 3)), t, eps, s)
        ab = s.alpha_bar[t - 1]
        sigma = np.sqrt(1 - ab)
        mean_z = np.abs(x.mean(axis=0) - np.sqrt(ab) * z0) / (sigma / np.sqrt(n))
        var_rel = np.abs(x.var(axis=0) / (1 - ab) - 1)
        worst_mean_z = max(worst_mean_z, float(mean_z.max()))
        worst_var_rel = max(worst_var_rel, float(var_rel.max()))
        moment_ok &= bool((mean_z <= 3).all() and (var_rel <= 0.02).all())
    ok = product_err <= 1e-12 and moment_ok
    report("schedule identities", ok, f"running product err {product_err:.1e}; mean off by {worst_mean_z:.2f} sigma, "
                                      f"variance off by {100 * worst_var_rel:.2f}%")
    assert product_err <= 1e-12 and moment_ok


def test_motion_op_algebra():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        reduction = int(rng.choice([1, 2, 4]))
        channels = reduction * int(rng.integers(1, 3))
        shape = (int(rng.integers(1, 3)), int(rng.integers(2, 6)), channels,
                 int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        ops = random_ops(channels, reduction, rng)
        z = rng.normal(size=shape)
        m = rng.normal(size=shape)
        worst = max(worst, float(np.max(np.abs(decompose(z, ops).data - reference_decompose(z, ops)))),
                    float(np.max(np.abs(combine(z, m, ops).data - reference_combine(z, m, ops)))))

    # unit (Dirac) kernels: the motion of a two-frame scalar clip is the frame difference
    ops = identity_ops()
    ops.dec_diff.weight.data = np.zeros((1, 1, 3, 3))
    ops.dec_diff.weight.data[0, 0, 1, 1] = 1.0
    for conv in (ops.comb_left, ops.comb_right):
        conv.weight.data = np.zeros((1, 1, 3, 3))
        conv.weight.data[0, 0, 1, 1] = 1.0
    clip = np.array([2.0, 5.0]).reshape(1, 2, 1, 1, 1)
    dirac_ok = decompose(clip, ops).data.ravel().tolist() == [3.0, 3.0]
    dirac_ok &= combine(np.zeros((1, 2, 1, 1, 1)), clip, ops).data.ravel().tolist() == [2.0, 7.0]
    # a zeroed combiner hands the content latents through untouched
    zeroed = MotionOps(4, 2, seed=1, dtype=np.float64)
    for conv in (zeroed.comb_reduce, zeroed.comb_left, zeroed.comb_right, zeroed.comb_restore):
        conv.weight.data = np.zeros_like(conv.weight.data)
    z = np.random.default_rng(0).normal(size=(2, 3, 4, 3, 3))
    dirac_ok &= bool(np.array_equal(combine(z, np.ones_like(z), zeroed).data, z))

    lengths_ok = all(decompose(np.random.default_rng(L).normal(size=(1, L, 4, 3, 3)),
                               random_ops(4, 2, np.random.default_rng(L))).shape[1] == L for L in range(2, 10))
    ok = worst <= 1e-6 and dirac_ok and lengths_ok
    report("motion-op algebra", ok, f"50 seeds, max |diff| vs reference loop {worst:.1e}; identity cases "
                                    f"{'exact' if dirac_ok else 'WRONG'}; length preserved {lengths_ok}")
    assert ok


def _unit_block(dim):
    block = CrossStreamBlock(dim, dim, dim, 1, zero_out=False, dtype=np.float64)
    for lin in (block.to_q, block.to_k, block.to_v, block.to_out):
        lin.weight.data = np.eye(dim)
    return block


def test_interaction_contracts():
    rng = np.random.default_rng(0)
    # a single key returns its value exactly; identical keys give the exact mean of values
    block = _unit_block(3)
    kv = np.array([[[0.3, -1.0, 2.0]]])
    singleton = np.array_equal(cross_attend(rng.normal(size=(1, 4, 3)), kv, block).data,
                               np.broadcast_to(kv, (1, 4, 3)))
    block = _unit_block(2)
    block.to_k.weight.data = np.zeros((2, 2))
    symmetric = np.array_equal(cross_attend(np.array([[[0.5, 0.5]]]), np.array([[[1.0, 4.0], [3.0, -2.0]]]),
                                            block).data, [[[2.0, 1.0]]])

    worst_row = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        blk = CrossStreamBlock(5, 7, 8, 2, r, zero_out=False, dtype=np.float64)
        w = blk.weights(Tensor(r.normal(size=(2, 6, 5)) * 5), Tensor(r.normal(size=(2, 9, 7)) * 5)).data
        worst_row = max(worst_row, float(np.max(np.abs(w.sum(axis=-1) - 1))))

    ex = ExchangeBlock(6, 4, 8, 2, rng, dtype=np.float32)
    c = rng.normal(size=(2, 3, 6, 4, 4)).astype(np.float32)
    m = rng.normal(size=(2, 3, 4, 4, 4)).astype(np.float32)
    new_c, new_m = exchange(c, m, ex)
    no_op = np.array_equal(new_c.data, c) and np.array_equal(new_m.data, m)

    ex = ExchangeBlock(6, 4, 8, 2, rng, zero_out=False, dtype=np.float64)
    for p in ex.parameters():
        p.data = rng.normal(size=p.shape)
    c, m = rng.normal(size=(1, 2, 6, 3, 3)), rng.normal(size=(1, 2, 4, 3, 3))
    new_c, new_m = exchange(c, m, ex)
    ct, mt = c.reshape(2, 6, 9).transpose(0, 2, 1), m.reshape(2, 4, 9).transpose(0, 2, 1)
    # motion update computed first, then content, both from the pre-exchange features
    dm = cross_attend(ct, mt, ex.to_motion).data
    dc = cross_attend(mt, ct, ex.to_content).data
    order_free = (np.array_equal(new_m.data, m + dm.transpose(0, 2, 1).reshape(m.shape))
                  and np.array_equal(new_c.data, c + dc.transpose(0, 2, 1).reshape(c.shape)))

    ok = singleton and symmetric and worst_row <= 1e-6 and no_op and order_free
    report("interaction contracts", ok, f"singleton {singleton}, symmetric {symmetric}, row-sum err {worst_row:.1e}, "
                                        f"zero-init no-op {no_op}, order independent {order_free}")
    assert ok


def test_adapter_contracts():
    a = LowRankAdapter(2, 2, 1, 1.0, np.random.default_rng(0), dtype=np.float64)
    a.A.data = np.array([[1.0], [2.0]])
    a.B.data = np.array([[3.0], [4.0]])
    example = np.array_equal(apply_adapter(Tensor(np.zeros((2, 2))), a).data, [[3.0, 4.0], [6.0, 8.0]])

    prompt = PromptEmbedding(Tensor(np.random.default_rng(1).normal(size=(1, 3, 16)).astype(np.float32)),
                             np.ones((1, 3), dtype=bool))
    z = np.random.default_rng(2).normal(size=(1, 2, 4, 8, 8)).astype(np.float32)
    t = np.array([5])

    def net_with_random_weights():
        net = ContentUNet(4, width=8, context_dim=16, heads=2, rank=2, seed=3)
        rng = np.random.default_rng(4)
        for p in net.parameters():
            p.data = (rng.normal(size=p.shape) * 0.2).astype(np.float32)
        return net

    net = net_with_random_weights()
    adapted = net(z, t, prompt).data
    stripped = net_with_random_weights()
    for ad in stripped.adapters():
        ad.A.data[:] = 0
        ad.B.data[:] = 0
    base = stripped(z, t, prompt).data
    net.set_adapter_scale(0.0)
    lam_zero = np.array_equal(net(z, t, prompt).data, base)
    net.set_adapter_scale(1.0)
    for ad in net.adapters():
        ad.A.data[:] = 0
    a_zero = np.array_equal(net(z, t, prompt).data, base)
    ok = example and lam_zero and a_zero and not np.array_equal(adapted, base)
    report("adapter contracts", ok, f"2x2 rank-1 example {example}, strength 0 bitwise {lam_zero}, "
                                    f"zero factor bitwise {a_zero}")
    assert ok


# ---------------------------------------------------------------- desk-scale criteria

def test_freezing_contract(desk_run):
    state, data = desk_run.state, desk_run.data
    now = [p.data for p in state.model.content.base_parameters() + state.codec.parameters()]
    at_100 = all(np.array_equal(a, b) for a, b in zip(desk_run.frozen_at_start, desk_run.frozen_at_100))
    at_end = all(np.array_equal(a, b) for a, b in zip(desk_run.frozen_at_start, now))

    rng = np.random.default_rng(12345)
    z0, ids, t = TR._batch(state, data, rng)
    state.optimizer.zero_grad()
    lc, lm, lb = TR.joint_losses(state, z0, ids, t, rng)
    (lc + lm + lb).backward()
    trainable = state.trainable()
    live = sum(p.grad is not None and bool(np.any(p.grad != 0)) for p in trainable)
    frozen_grads = sum(p.grad is not None for p in state.model.content.base_parameters() + state.codec.parameters())
    state.optimizer.zero_grad()
    ok = at_100 and at_end and live == len(trainable) and frozen_grads == 0
    report("freezing contract", ok, f"base+codec bit-identical after 100 steps {at_100}, after "
                                    f"{len(desk_run.records)} {at_end}; {live}/{len(trainable)} trainable tensors "
                                    f"carry gradient, {frozen_grads} frozen ones do")
    assert ok


def test_end_to_end_training(desk_run):
    first, last = TR.window_means(desk_run.records, 50)
    ratio = last / first
    minutes = (desk_run.codec_seconds + desk_run.base_seconds + desk_run.joint_seconds) / 60
    ok = ratio <= 0.5 and minutes <= 30
    report("end-to-end training", ok,
           f"total loss {first:.4f} -> {last:.4f} (ratio {ratio:.3f}); wall clock {minutes:.1f} min "
           f"(codec {desk_run.codec_seconds / 60:.1f}, base {desk_run.base_seconds / 60:.1f}, "
           f"joint {desk_run.joint_seconds / 60:.1f})")
    assert ratio <= 0.5
    assert minutes <= 30


def test_ablation_direction(desk_run, desk_embedder):
    emb, _ = desk_embedder
    result = ablation_study(desk_run.state, emb, ABLATION_PROMPTS, ABLATION_SEEDS, "motion_stream")
    n = len(result.full)
    ok = n >= 20 and result.full.mean() > result.ablated.mean() and result.p_value < 0.05
    report("ablation direction", ok,
           f"{n} pairs, frame consistency full {result.full.mean():.4f} vs motion-off {result.ablated.mean():.4f}; "
           f"full wins {result.wins}/{n - result.ties}, sign test p={result.p_value:.3g}")
    assert ok


def test_determinism_and_persistence(desk_run, tmp_path):
    state = desk_run.state
    a = S.generate("a blue circle moving up", state, seed=11)
    b = S.generate("a blue circle moving up", state, seed=11)
    S.write_generation(a, state, tmp_path / "a")
    S.write_generation(b, state, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    identical = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)

    # continue the desk model for four more steps, straight through and via a checkpoint
    entries = TR.state_entries(state)
    straight = TR.state_from_entries(entries)
    TR.train(straight, desk_run.data, 4)
    TR.save_checkpoint(TR.state_from_entries(entries), tmp_path / "c.dsdn")
    first = TR.load_checkpoint(tmp_path / "c.dsdn")
    TR.train(first, desk_run.data, 2)
    TR.save_checkpoint(first, tmp_path / "c.dsdn")
    resumed = TR.load_checkpoint(tmp_path / "c.dsdn")
    TR.train(resumed, desk_run.data, 2)
    worst = max(abs(x - y) for ra, rb in zip(straight.history[-4:], resumed.history[-4:])
                for x, y in zip((ra.loss_con, ra.loss_mot, ra.total), (rb.loss_con, rb.loss_mot, rb.total)))
    ok = identical and worst <= 1e-6
    report("determinism and persistence", ok, f"same-seed files byte-identical {identical} ({len(files)} files); "
                                              f"resumed vs uninterrupted loss diff {worst:.1e}")
    assert ok
