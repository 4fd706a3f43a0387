"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`. Criteria 6-8 train many
small models and dominate the runtime (tens of minutes of CPU total); the
rest complete in a few minutes.
"""

import hashlib
import json
import time

import numpy as np
import pytest
from helpers import (
    check_gradients,
    full_model_grad_check,
    rand_tensor,
    scalar_loss,
)

from adlraw import sensorsim
from adlraw.adl import (
    AdlConfig,
    AdlState,
    EvalQueue,
    adl_step,
    adl_train,
    ablation_variant,
    baseline_finetune,
)
from adlraw.engine import (
    add,
    concat_channels,
    conv2d,
    l1_loss,
    linear,
    mul,
    scale_shift,
    sub,
    tanh,
    upsample_nearest2,
)
from adlraw.engine.tensor import Tensor
from adlraw.metrics import eval_mean_psnr, psnr, ssim
from adlraw.modnet import MetaEncoder, ModulatedDenoiser
from adlraw.sensorsim import DomainDataset

RESULTS = []


def report(n, passed, detail, elapsed):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail} ({elapsed:.1f}s)"
    print(line)
    RESULTS.append(line)
    assert passed, line


# ---------------------------------------------------------------------------
# shared experiment scaffolding (criteria 6-8)

EXP = {
    "patch": 16,
    "widths": (4, 8, 16),
    "pool": 32,
    "test_count": 24,
    "source_count": 16,
    "target_iso": (1600,),
    "source_iso": (100, 400, 1600, 3200),
    "misfrac": [0.0, 0.15, 0.3, 0.5, 0.8],
    "batch": 8,
    "queue_capacity": 32,
    "pretrain": 50,
    "finetune": 100,
    "seeds": (0, 1, 2, 3, 4),
}


def subset(dom, size, seed):
    rng = np.random.default_rng([seed, dom.sensor_id, 0x7AD])
    idx = sorted(int(i) for i in rng.choice(len(dom.pairs), size=size, replace=False))
    return DomainDataset(dom.sensor_id, [dom.pairs[i] for i in idx], dom.split, dom.label)


class Fleet:
    def __init__(self, misfrac):
        self.profiles = sensorsim.default_fleet("default5")
        self.pmap = {p.sensor_id: p for p in self.profiles}
        self.encoder = MetaEncoder([p.sensor_id for p in self.profiles])
        self.pools, self.tests, self.sources = {}, {}, {}
        for i, p in enumerate(self.profiles):
            mf = misfrac[i] if isinstance(misfrac, (list, tuple)) else misfrac
            self.pools[p.sensor_id] = sensorsim.build_domain(
                p, EXP["pool"], EXP["patch"], iso_choices=EXP["target_iso"], seed=7)
            self.tests[p.sensor_id] = sensorsim.build_domain(
                p, EXP["test_count"], EXP["patch"], iso_choices=EXP["target_iso"],
                seed=1007, split="test")
            self.sources[p.sensor_id] = sensorsim.build_domain(
                p, EXP["source_count"], EXP["patch"], iso_choices=EXP["source_iso"],
                seed=8, misaligned_fraction=mf)

    def source_list(self, target):
        return [self.sources[s] for s in sorted(self.sources) if s != target]


@pytest.fixture(scope="module")
def mixed_fleet():
    return Fleet(EXP["misfrac"])


@pytest.fixture(scope="module")
def clean_fleet():
    return Fleet(0.0)


def make_cfg(target, seed, iters, **over):
    kw = dict(iters=iters, pretrain_iters=EXP["pretrain"], finetune_iters=EXP["finetune"],
              batch=EXP["batch"], queue_capacity=EXP["queue_capacity"], seed=seed,
              target_sensor_id=target)
    kw.update(over)
    return AdlConfig(**kw)


def train_and_eval(fleet, method, target, seed, size, iters, sources=None):
    tadp = subset(fleet.pools[target], size, seed)
    src = sources if sources is not None else fleet.source_list(target)
    cfg = make_cfg(target, seed, iters)
    model = ModulatedDenoiser(n_sensors=5, widths=EXP["widths"], seed=seed)
    if method == "finetune":
        baseline_finetune(model, src, tadp, cfg, encoder=fleet.encoder)
        return eval_mean_psnr(model, fleet.tests[target].pairs, fleet.encoder, modulate=False)
    flags = {"adl": (), "no-dynamic-val": ("no-dynamic-val",),
             "no-pretrain": ("no-pretrain",), "no-adl": ("no-adl",)}[method]
    _, enc_used = ablation_variant(flags, model, src, tadp, cfg,
                                   profiles=fleet.pmap, encoder=fleet.encoder)
    return eval_mean_psnr(model, fleet.tests[target].pairs, enc_used)


def medians(fleet, methods, target, size, iters, sources=None):
    out = {}
    for m in methods:
        vals = [train_and_eval(fleet, m, target, seed, size, iters, sources=sources)
                for seed in EXP["seeds"]]
        out[m] = float(np.median(vals))
    return out


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness

def test_criterion_1_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(101)
    # every differentiable op, >= 20 random configurations each
    for _ in range(20):
        k = int(rng.integers(1, 4))
        x = rand_tensor(rng, (1, int(rng.integers(1, 3)), k + 3, k + 4))
        w = rand_tensor(rng, (int(rng.integers(1, 3)), x.shape[1], k, k))
        b = rand_tensor(rng, (w.shape[0],))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        check_gradients(lambda: scalar_loss(conv2d(x, w, bias=b, stride=stride, pad=pad)),
                        [x, w, b])

        d, e = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        xl = rand_tensor(rng, (2, d))
        wl = rand_tensor(rng, (d, e))
        bl = rand_tensor(rng, (e,))
        check_gradients(lambda: scalar_loss(linear(xl, wl, bl)), [xl, wl, bl])

        a = rand_tensor(rng, (3, 4))
        b2 = rand_tensor(rng, (3, 4))
        check_gradients(lambda: scalar_loss(add(a, b2)), [a, b2])
        check_gradients(lambda: scalar_loss(sub(a, b2)), [a, b2])
        check_gradients(lambda: scalar_loss(mul(a, b2)), [a, b2])
        check_gradients(lambda: scalar_loss(tanh(a)), [a])

        f = rand_tensor(rng, (2, 3, 4, 4))
        g = rand_tensor(rng, (2, 3))
        bb = rand_tensor(rng, (2, 3))
        check_gradients(lambda: scalar_loss(scale_shift(f, g, bb)), [f, g, bb])

        u = rand_tensor(rng, (1, 2, 3, 3))
        v = rand_tensor(rng, (1, 3, 6, 6))
        check_gradients(lambda: scalar_loss(concat_channels(upsample_nearest2(u), v)), [u, v])

        p = rand_tensor(rng, (3, 3))
        tgt = Tensor(p.data + np.sign(rng.standard_normal((3, 3))) * 0.5, dtype=np.float64)
        check_gradients(lambda: l1_loss(p, tgt), [p])

    # the full network, 20 random configurations
    worst = max(full_model_grad_check(config_seed=s) for s in range(20))
    elapsed = time.time() - t0
    report(1, worst < 1e-4 and elapsed < 120,
           f"per-op and full-model finite differences, worst rel err {worst:.2e}", elapsed)


# ---------------------------------------------------------------------------
# criterion 2: revert exactness

def digest(model, opt):
    h = hashlib.sha256()
    for _, p in model.parameters():
        h.update(p.data.tobytes())
    for a in opt.state_arrays():
        h.update(a.tobytes())
    h.update(str(opt.step_count).encode())
    return h.hexdigest()


def test_criterion_2_revert_exactness():
    t0 = time.time()
    profiles = sensorsim.default_fleet()
    enc = MetaEncoder([p.sensor_id for p in profiles])
    tadp = sensorsim.build_domain(profiles[1], 6, 8, iso_choices=(400,), seed=3)
    source = sensorsim.build_domain(profiles[2], 6, 8, seed=4)
    model = ModulatedDenoiser(n_sensors=5, widths=(4, 8, 12), seed=0)
    cfg = AdlConfig(iters=200, pretrain_iters=0, finetune_iters=0, batch=2, seed=0)
    opt = cfg.make_optimizer(model.param_tensors())
    state = AdlState(queue=EvalQueue(cfg.queue_capacity))
    state.queue.admit(eval_mean_psnr(model, tadp.pairs[:2], enc))
    rng = np.random.default_rng(5)
    mismatches = 0
    rejected = 0
    for t in range(1, 201):
        state.t = t
        batch = [source.pairs[int(i)] for i in rng.integers(0, 6, 2)]
        before = digest(model, opt)
        decision = adl_step(state, model, opt, batch, tadp.pairs[2:], tadp.pairs[:2],
                            enc, cfg, decision_override=lambda tt, e, m: tt % 2 == 0)
        if decision == "rejected":
            rejected += 1
            if digest(model, opt) != before:
                mismatches += 1
    elapsed = time.time() - t0
    report(2, mismatches == 0 and rejected == 100 and elapsed < 60,
           f"{rejected} forced rejections all byte-identical to pre-step snapshots", elapsed)


# ---------------------------------------------------------------------------
# criterion 3: decision-rule oracle over >= 2000 iterations

def test_criterion_3_decision_oracle(tmp_path):
    t0 = time.time()
    profiles = sensorsim.default_fleet()
    pmap = {p.sensor_id: p for p in profiles}
    enc = MetaEncoder([p.sensor_id for p in profiles])
    target = 1
    tadp = sensorsim.build_domain(profiles[target], 6, 8, iso_choices=(400,), seed=11)
    sources = [sensorsim.build_domain(p, 6, 8, seed=12) for p in profiles
               if p.sensor_id != target]
    model = ModulatedDenoiser(n_sensors=5, widths=(4, 8, 12), seed=1)
    cfg = AdlConfig(iters=2000, pretrain_iters=10, finetune_iters=0, batch=2, seed=13,
                    target_sensor_id=target)
    log = adl_train(model, sources, tadp, cfg, profiles=pmap, encoder=enc)
    path = tmp_path / "log.jsonl"
    log.to_jsonl(path)

    # independent replay: own queue representation, reading only the file
    lines = [json.loads(line) for line in open(path)]
    assert lines[0]["event"] == "seed"
    queue = [lines[0]["eval_psnr"]]
    cap = cfg.queue_capacity
    mismatches = 0
    for rec in lines[1:]:
        mean = float(np.sum(np.asarray(sorted(queue), dtype=np.float64)) / len(queue))
        accepted = rec["eval_psnr"] > mean
        if mean != rec["queue_mean"] or accepted != (rec["decision"] == "accepted") \
                or len(queue) != rec["queue_size"]:
            mismatches += 1
        if accepted:
            if len(queue) == cap:
                queue.remove(min(queue))
            queue.append(rec["eval_psnr"])
    elapsed = time.time() - t0
    report(3, mismatches == 0 and len(lines) - 1 == 2000,
           f"replayed {len(lines) - 1} decisions with {mismatches} mismatches", elapsed)


# ---------------------------------------------------------------------------
# criterion 4: modulation identity and scale range

def test_criterion_4_modulation_identity():
    t0 = time.time()
    model = ModulatedDenoiser(n_sensors=3, widths=(4, 8, 12), seed=8)
    model.zero_modulation_()
    enc = MetaEncoder([0, 1, 2])
    rng = np.random.default_rng(9)
    identical = 0
    for _ in range(100):
        x = rng.random((1, 4, 8, 8)).astype(np.float32)
        meta = np.stack([enc.encode(int(rng.integers(0, 3)), 400)])
        a = model.forward(Tensor(x), meta, modulate=True).data
        b = model.forward(Tensor(x), meta, modulate=False).data
        identical += a.tobytes() == b.tobytes()

    in_range = True
    probe = ModulatedDenoiser(n_sensors=3, widths=(4, 8, 12), seed=10)
    for i in range(10_000):
        if i % 50 == 0:  # fresh weight draw every 50 probes
            probe = ModulatedDenoiser(n_sensors=3, widths=(4, 8, 12), seed=100 + i)
        meta = rng.random(6).astype(np.float32)
        gamma, _ = probe.modulation_params(meta, int(rng.integers(0, 3)))
        if not (gamma.data.min() > 0.0 and gamma.data.max() < 2.0):
            in_range = False
    elapsed = time.time() - t0
    report(4, identical == 100 and in_range,
           f"{identical}/100 bit-identical zero-modulation outputs; scale in (0,2) on 1e4 draws",
           elapsed)


# ---------------------------------------------------------------------------
# criterion 5: noise-model statistics

def test_criterion_5_noise_statistics():
    t0 = time.time()
    settings = []
    fleet = sensorsim.default_fleet("default5")
    # settings stay inside the clamp range (clipping would invalidate the
    # additive variance model being verified)
    for i, (prof, iso, level) in enumerate([
            (0, 100, 0.3), (0, 1600, 0.6), (1, 400, 0.5), (1, 3200, 0.4), (2, 100, 0.7),
            (2, 1600, 0.5), (3, 400, 0.6), (3, 400, 0.7), (4, 100, 0.5), (4, 400, 0.4)]):
        p = fleet[prof]
        p = sensorsim.SensorProfile(
            sensor_id=p.sensor_id, name=p.name, base_gain=p.base_gain,
            read_noise=p.read_noise, row_noise=p.row_noise, fpn_amplitude=0.0,
            fpn_seed=p.fpn_seed, black_level=p.black_level, bayer_layout=p.bayer_layout,
            iso_set=p.iso_set)
        settings.append((p, iso, level, i))
    ok = True
    details = []
    for p, iso, level, i in settings:
        clean = np.full((1000, 1000), level)
        rng = np.random.default_rng(500 + i)
        noisy = apply = sensorsim.apply_noise(clean, p, iso, 1.0, rng)
        resid = noisy.astype(np.float64) - clean - p.black_level
        want = p.gain(iso) * level + p.read_noise**2 + p.row_noise**2
        got = float(np.var(resid))
        bias = abs(float(resid.mean()))
        sigma = float(np.std(resid))
        var_ok = abs(got - want) / want < 0.05
        bias_ok = bias < 3 * sigma / np.sqrt(resid.size)
        ok = ok and var_ok and bias_ok
        details.append(f"{abs(got - want) / want:.3f}")
    elapsed = time.time() - t0
    report(5, ok and elapsed < 60,
           f"10 settings, variance rel errs [{' '.join(details)}], bias within 3 sigma/sqrt(n)",
           elapsed)


# ---------------------------------------------------------------------------
# criterion 6: harmful-data reproduction

def test_criterion_6_harmful_data(clean_fleet):
    t0 = time.time()
    target = 1
    size = 16
    iters = 700
    base_src = clean_fleet.source_list(target)
    harm = []
    for i, d in enumerate(base_src):
        mode = "shuffled-gt" if i % 2 == 0 else "black-gt"
        harm.append(sensorsim.make_harmful2(
            d, mode, seed=900 + i, black_level=clean_fleet.pmap[d.sensor_id].black_level))
    cells = {}
    for name, sources in (("base", base_src), ("harmful2", base_src + harm)):
        for method in ("finetune", "adl"):
            cells[(method, name)] = medians(clean_fleet, [method], target, size, iters,
                                            sources=sources)[method]
    ft_drop = cells[("finetune", "base")] - cells[("finetune", "harmful2")]
    adl_drop = cells[("adl", "base")] - cells[("adl", "harmful2")]
    elapsed = time.time() - t0
    report(6, ft_drop >= 2.0 and adl_drop <= 0.5 and elapsed < 900,
           f"fine-tuning degrades {ft_drop:.2f} dB under 50% misaligned sources, "
           f"adaptive training {adl_drop:.2f} dB", elapsed)


# ---------------------------------------------------------------------------
# criterion 7: size-sweep direction

def test_criterion_7_size_sweep(mixed_fleet):
    t0 = time.time()
    target = 1
    small = medians(mixed_fleet, ["adl", "finetune", "no-dynamic-val"], target, 4, 1000)
    large = medians(mixed_fleet, ["adl", "finetune", "no-dynamic-val"], target, 32, 1400)
    small_ok = small["adl"] > small["finetune"] and small["adl"] > small["no-dynamic-val"]
    large_ok = (large["adl"] >= large["finetune"] - 0.3
                and large["adl"] >= large["no-dynamic-val"] - 0.3)
    elapsed = time.time() - t0
    report(7, small_ok and large_ok and elapsed < 1200,
           f"size 4: adl {small['adl']:.2f} vs ft {small['finetune']:.2f} "
           f"vs fixed-val {small['no-dynamic-val']:.2f}; size 32: adl {large['adl']:.2f} "
           f"vs ft {large['finetune']:.2f} vs fixed-val {large['no-dynamic-val']:.2f}", elapsed)


# ---------------------------------------------------------------------------
# criterion 8: ablation direction

def test_criterion_8_ablations(mixed_fleet):
    t0 = time.time()
    targets = (1, 3, 4)
    size = 8
    iters = 1000
    wins = {"no-pretrain": 0, "no-dynamic-val": 0, "no-adl": 0}
    table = []
    for target in targets:
        med = medians(mixed_fleet, ["adl", "no-pretrain", "no-dynamic-val", "no-adl"],
                      target, size, iters)
        for abl in wins:
            if med["adl"] >= med[abl]:
                wins[abl] += 1
        table.append(f"t{target} adl {med['adl']:.2f} nopre {med['no-pretrain']:.2f} "
                     f"nodyn {med['no-dynamic-val']:.2f} noadl {med['no-adl']:.2f}")
    ok = all(w >= 2 for w in wins.values())
    elapsed = time.time() - t0
    report(8, ok and elapsed < 1800, "; ".join(table) + f"; wins {dict(wins)}", elapsed)


# ---------------------------------------------------------------------------
# criterion 9: metric oracles

def test_criterion_9_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(900)
    worst_psnr = 0.0
    worst_ssim = 0.0
    from test_metrics import ssim_bruteforce

    for i in range(100):
        a = rng.random((2, 12, 13))
        b = rng.random((2, 12, 13))
        direct = 10 * np.log10(1.0 / np.mean((a - b) ** 2))
        worst_psnr = max(worst_psnr, abs(psnr(a, b) - direct))
        if i < 5:
            worst_ssim = max(worst_ssim, abs(ssim(a, b) - ssim_bruteforce(a, b)))
    base = np.zeros((4, 8, 8))
    twenty = f"{psnr(base + 0.1, base, peak=1.0):.4f}"
    elapsed = time.time() - t0
    report(9, worst_psnr < 1e-9 and worst_ssim < 1e-6 and twenty == "20.0000",
           f"psnr err {worst_psnr:.1e}, ssim err {worst_ssim:.1e}, "
           f"constant-0.1 psnr prints {twenty}", elapsed)


# ---------------------------------------------------------------------------
# criterion 10: end-to-end determinism

def test_criterion_10_determinism(tmp_path):
    import os

    from adlraw.harness.cli import main as cli_main

    t0 = time.time()
    cfg_text = """
[fleet]
kind = "default5"
seed = 3
patch = 16
tadp_pool = 6
test_count = 3
source_count = 4

[adl]
iters = 6
pretrain_iters = 2
finetune_iters = 2
batch = 2
queue_capacity = 4

[run]
target = 1
tadp_size = 4
seeds = [0]
widths = [4, 8, 12]
"""
    cfg_path = tmp_path / "exp.toml"
    cfg_path.write_text(cfg_text)
    blobs = []
    for d in ("r1", "r2"):
        out = tmp_path / d
        rc = cli_main(["adl-train", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        csv = (out / "results.csv").read_bytes()
        ckpt = next(n for n in sorted(os.listdir(out)) if n.endswith(".mdl"))
        blobs.append((csv, (out / ckpt).read_bytes()))
    same = blobs[0] == blobs[1]
    elapsed = time.time() - t0
    report(10, same, "two adl-train invocations: results.csv and checkpoints byte-identical",
           elapsed)
