"""Adaptive domain learning: three-stage training with per-step source-data
acceptance.

Stage 1 pretrains on the small target set. Stage 2 repeatedly takes one
optimizer step on a merged batch (the target remainder plus a batch from one
source domain), scores the stepped model on a freshly sampled target
validation subset, and keeps the step only if that score beats the running
mean of a bounded queue of historical scores; otherwise parameters AND
optimizer moments roll back byte-exactly. Stage 3 fine-tunes on the target
set. A plain source-train-then-finetune baseline with the same step budget
is provided for comparison, plus the single-mechanism ablation variants.
"""

import bisect
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import l1_loss, record
from .engine.optim import make_optimizer, restore_params, snapshot_params
from .engine.tensor import Tensor
from .errors import ContractViolation
from .metrics import eval_mean_psnr
from .modnet import MetaEncoder

ABLATION_FLAGS = ("no-pretrain", "no-dynamic-val", "no-iso-mod", "no-type-mod", "no-adl")


@dataclass
class AdlConfig:
    """Hyperparameters for the three training stages.

    Defaults are desk-scale: minutes of CPU rather than the full-scale
    hundreds of thousands of iterations. Every field is overridable from the
    experiment TOML.
    """

    iters: int = 2000            # adaptive-learning steps (0 skips the stage)
    pretrain_iters: int = 500
    finetune_iters: int = 500
    batch: int = 4               # source patches merged into each adaptive step
    queue_capacity: int = 10
    val_frac_start: float = 0.2
    val_frac_end: float = 0.5
    diverse_threshold: int = 10  # below this target-set size, pick by gain spread
    dynamic_val: bool = True
    optimizer: str = "adamw"     # "adamw" | "sgd" (plain gradient step)
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    target_sensor_id: int = -1   # when >= 0, source batches must not contain it

    def __post_init__(self):
        if not 0 < self.val_frac_start <= self.val_frac_end < 1:
            raise ContractViolation(
                f"need 0 < val_frac_start <= val_frac_end < 1, got "
                f"{self.val_frac_start}, {self.val_frac_end}")
        if self.queue_capacity < 1:
            raise ContractViolation(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if self.iters < 0 or self.pretrain_iters < 0 or self.finetune_iters < 0:
            raise ContractViolation("iteration counts must be >= 0")
        if self.batch < 1:
            raise ContractViolation(f"batch must be >= 1, got {self.batch}")

    def make_optimizer(self, params):
        return make_optimizer(params, kind=self.optimizer, lr=self.lr, beta1=self.beta1,
                              beta2=self.beta2, eps=self.eps, weight_decay=self.weight_decay)


class EvalQueue:
    """Bounded ascending multiset of PSNR scores; admission pops the minimum
    first when full, and the acceptance rule compares against the mean."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ContractViolation(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.values = []

    def __len__(self):
        return len(self.values)

    def admit(self, value):
        value = float(value)
        if not math.isfinite(value):
            raise ContractViolation(f"queue admit of non-finite value {value}")
        if len(self.values) == self.capacity:
            self.values.pop(0)
        bisect.insort(self.values, value)

    def mean(self):
        if not self.values:
            raise ContractViolation("mean of an empty queue")
        return float(np.sum(np.asarray(self.values, dtype=np.float64)) / len(self.values))


@dataclass
class AdlState:
    """Mutable loop state: the score queue, iteration counter, per-iteration
    accept/reject records, RNG streams, and the rotation counter for the
    diverse validation picker."""

    queue: EvalQueue
    t: int = 0
    records: list = field(default_factory=list)
    rotation: int = 0
    rngs: dict = field(default_factory=dict)


@dataclass
class AdlRunLog:
    """Result of one adaptive run: the queue seed score plus one record per
    iteration {t, source_domain, eval_psnr, queue_mean, queue_size, decision, k}."""

    seed_psnr: float
    records: list

    @property
    def accept_rate(self):
        if not self.records:
            return 0.0
        n = sum(1 for r in self.records if r["decision"] == "accepted")
        return n / len(self.records)

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"t": 0, "event": "seed", "eval_psnr": self.seed_psnr}) + "\n")
            for r in self.records:
                f.write(json.dumps(r) + "\n")

    @staticmethod
    def from_jsonl(path):
        with open(path, encoding="utf-8") as f:
            lines = [json.loads(line) for line in f if line.strip()]
        if not lines or lines[0].get("event") != "seed":
            raise ContractViolation(f"log {path} does not start with a seed record")
        return AdlRunLog(seed_psnr=lines[0]["eval_psnr"], records=lines[1:])


# ---------------------------------------------------------------------------
# schedules and splits

def k_schedule(t, total_iters, tadp_size, cfg):
    """Validation-set size at iteration t: grows linearly from
    val_frac_start to val_frac_end of the target set, clamped so the
    training remainder is never empty."""
    if tadp_size < 2:
        raise ContractViolation(f"cannot split a target set of size {tadp_size}")
    if not 0 <= t <= total_iters:
        raise ContractViolation(f"t={t} outside [0, {total_iters}]")
    progress = t / total_iters if total_iters > 0 else 0.0
    frac = cfg.val_frac_start + (cfg.val_frac_end - cfg.val_frac_start) * progress
    k = round(tadp_size * frac)
    return min(max(k, 1), tadp_size - 1)


def sample_validation_split(pairs, k, rng, profiles=None, diverse_threshold=10, rotation=0):
    """Partition the target pairs into (validation, train remainder).

    Normally a uniform draw of k items; for very small target sets the
    validation items are picked by farthest-point sampling on effective
    system gain (starting from a rotating index) so they span the gain range.
    """
    n = len(pairs)
    if not 1 <= k < n:
        raise ContractViolation(f"split size k={k} invalid for {n} pairs")
    if n < diverse_threshold and profiles is not None:
        gains = np.asarray([profiles[p.sensor_id].gain(p.iso) for p in pairs], dtype=np.float64)
        start = rotation % n
        chosen = [start]
        dist = np.abs(gains - gains[start])
        dist[start] = -1.0
        while len(chosen) < k:
            nxt = int(np.argmax(dist))
            chosen.append(nxt)
            dist = np.minimum(dist, np.abs(gains - gains[nxt]))
            dist[nxt] = -1.0
        val_idx = sorted(chosen)
    else:
        val_idx = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    val_set = set(val_idx)
    train_idx = [i for i in range(n) if i not in val_set]
    return [pairs[i] for i in val_idx], [pairs[i] for i in train_idx]


# ---------------------------------------------------------------------------
# plain training stages

def _sample_batch(pairs, batch, rng):
    n = len(pairs)
    if batch >= n:
        idx = rng.permutation(n) if batch == n else rng.integers(0, n, size=batch)
    else:
        idx = rng.choice(n, size=batch, replace=False)
    return [pairs[int(i)] for i in idx]


def _train_step(model, optimizer, batch_pairs, encoder, modulate=True):
    noisy = np.stack([p.noisy for p in batch_pairs]).astype(model.dtype, copy=False)
    clean = np.stack([p.clean for p in batch_pairs]).astype(model.dtype, copy=False)
    meta = encoder.encode_pairs(batch_pairs, dtype=model.dtype)
    model.zero_grad()
    with record() as tape:
        out = model.forward(Tensor(noisy, dtype=model.dtype), meta, modulate=modulate)
        loss = l1_loss(out, Tensor(clean, dtype=model.dtype))
    tape.backward(loss)
    optimizer.step()
    return float(loss.data)


def _train_plain(model, optimizer, pairs, iters, batch, encoder, rng, modulate=True):
    for _ in range(iters):
        _train_step(model, optimizer, _sample_batch(pairs, batch, rng), encoder,
                    modulate=modulate)


def pretrain_target(model, target_set, cfg, encoder, optimizer=None, rng=None):
    """Stage 1: train on the target set alone."""
    pairs = target_set.pairs if hasattr(target_set, "pairs") else list(target_set)
    if not pairs:
        raise ContractViolation("pretrain_target on an empty dataset")
    if optimizer is None:
        optimizer = cfg.make_optimizer(model.param_tensors())
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9E7]))
    _train_plain(model, optimizer, pairs, cfg.pretrain_iters, cfg.batch, encoder, rng)
    return optimizer


def finetune_target(model, target_set, cfg, encoder, optimizer=None, rng=None, iters=None):
    """Stage 3: train on the target set alone for finetune_iters."""
    pairs = target_set.pairs if hasattr(target_set, "pairs") else list(target_set)
    if not pairs:
        raise ContractViolation("finetune_target on an empty dataset")
    if optimizer is None:
        optimizer = cfg.make_optimizer(model.param_tensors())
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF1E]))
    _train_plain(model, optimizer, pairs, cfg.finetune_iters if iters is None else iters,
                 cfg.batch, encoder, rng)
    return optimizer


# ---------------------------------------------------------------------------
# the adaptive stage

def _check_isolation(source_pairs, cfg):
    if cfg.target_sensor_id >= 0:
        for p in source_pairs:
            if p.sensor_id == cfg.target_sensor_id:
                raise ContractViolation(
                    f"target sensor {cfg.target_sensor_id} leaked into a source batch")


def adl_step(state, model, optimizer, source_pairs, train_pairs, val_pairs, encoder, cfg,
             source_label="", k=0, decision_override=None):
    """One adaptive iteration: step on the merged batch, score on the
    validation subset, keep or roll back."""
    if len(state.queue) == 0:
        raise ContractViolation("adl_step with an unseeded queue")
    _check_isolation(source_pairs, cfg)

    snap = snapshot_params(model, optimizer)
    _train_step(model, optimizer, list(train_pairs) + list(source_pairs), encoder)
    eval_psnr = eval_mean_psnr(model, val_pairs, encoder)
    queue_mean = state.queue.mean()
    queue_size = len(state.queue)

    accepted = eval_psnr > queue_mean
    if decision_override is not None:
        accepted = bool(decision_override(state.t, eval_psnr, queue_mean))
    if accepted:
        state.queue.admit(eval_psnr)
    else:
        restore_params(model, snap, optimizer)

    decision = "accepted" if accepted else "rejected"
    state.records.append({
        "t": state.t,
        "source_domain": source_label,
        "eval_psnr": eval_psnr,
        "queue_mean": queue_mean,
        "queue_size": queue_size,
        "decision": decision,
        "k": k,
    })
    return decision


def adl_train(model, source_domains, target_set, cfg, profiles=None, encoder=None,
              decision_override=None):
    """Full three-stage run. Mutates the model in place and returns the
    accept/reject log of the adaptive stage."""
    target_pairs = target_set.pairs if hasattr(target_set, "pairs") else list(target_set)
    if len(target_pairs) < 2:
        raise ContractViolation(f"target set needs >= 2 pairs, got {len(target_pairs)}")
    if cfg.iters > 0 and not source_domains:
        raise ContractViolation("adaptive stage needs at least one source domain")
    if encoder is None:
        raise ContractViolation("adl_train needs a MetaEncoder")

    ss = np.random.SeedSequence([cfg.seed, 0xAD1])
    rng_pre, rng_domain, rng_batch, rng_split, rng_fine = [
        np.random.default_rng(c) for c in ss.spawn(5)]

    optimizer = cfg.make_optimizer(model.param_tensors())
    _train_plain(model, optimizer, target_pairs, cfg.pretrain_iters, cfg.batch, encoder, rng_pre)

    state = AdlState(queue=EvalQueue(cfg.queue_capacity))
    k0 = k_schedule(0, cfg.iters, len(target_pairs), cfg)
    val0, train0 = sample_validation_split(
        target_pairs, k0, rng_split, profiles, cfg.diverse_threshold, rotation=state.rotation)
    state.rotation += 1
    seed_psnr = eval_mean_psnr(model, val0, encoder)
    state.queue.admit(seed_psnr)

    for t in range(1, cfg.iters + 1):
        state.t = t
        dom = source_domains[int(rng_domain.integers(0, len(source_domains)))]
        source_pairs = _sample_batch(dom.pairs, cfg.batch, rng_batch)
        if cfg.dynamic_val:
            k = k_schedule(t, cfg.iters, len(target_pairs), cfg)
            val_pairs, train_pairs = sample_validation_split(
                target_pairs, k, rng_split, profiles, cfg.diverse_threshold,
                rotation=state.rotation)
            state.rotation += 1
        else:
            k, val_pairs, train_pairs = k0, val0, train0
        adl_step(state, model, optimizer, source_pairs, train_pairs, val_pairs, encoder,
                 cfg, source_label=dom.label or str(dom.sensor_id), k=k,
                 decision_override=decision_override)

    _train_plain(model, optimizer, target_pairs, cfg.finetune_iters, cfg.batch, encoder, rng_fine)
    return AdlRunLog(seed_psnr=seed_psnr, records=state.records)


def baseline_finetune(model, source_domains, target_set, cfg, encoder=None, profiles=None,
                      modulate=False):
    """Naive comparison: pretraining happens on pooled source batches (the
    pretrain budget plus every step the adaptive stage would take), then the
    target set is used only for fine-tuning. Total gradient steps match
    adl_train's pretrain + adaptive + finetune budget.

    By default the backbone runs unconditioned (the plain train-then-finetune
    baseline); modulate=True is the variant used by the no-adl ablation,
    which keeps modulation and removes only the accept/reject scheme.
    """
    target_pairs = target_set.pairs if hasattr(target_set, "pairs") else list(target_set)
    if len(target_pairs) < 1:
        raise ContractViolation("baseline_finetune needs a nonempty target set")
    source_steps = cfg.pretrain_iters + cfg.iters
    if source_steps > 0 and not source_domains:
        raise ContractViolation("baseline_finetune needs at least one source domain")
    if encoder is None:
        raise ContractViolation("baseline_finetune needs a MetaEncoder")

    ss = np.random.SeedSequence([cfg.seed, 0xBA5E])
    rng_domain, rng_batch, rng_fine = [np.random.default_rng(c) for c in ss.spawn(3)]

    params = model.param_tensors() if modulate else model.backbone_tensors()
    optimizer = cfg.make_optimizer(params)
    for _ in range(source_steps):
        dom = source_domains[int(rng_domain.integers(0, len(source_domains)))]
        batch = _sample_batch(dom.pairs, cfg.batch, rng_batch)
        _check_isolation(batch, cfg)
        _train_step(model, optimizer, batch, encoder, modulate=modulate)

    _train_plain(model, optimizer, target_pairs, cfg.finetune_iters,
                 cfg.batch, encoder, rng_fine, modulate=modulate)
    return None


def ablation_variant(flags, model, source_domains, target_set, cfg, profiles=None,
                     encoder=None):
    """Train with one or more mechanisms disabled.

    Returns (log, encoder_used); the possibly-masked encoder must also be
    used at evaluation time.
    """
    flags = set(flags)
    unknown = flags - set(ABLATION_FLAGS)
    if unknown:
        raise ContractViolation(f"unknown ablation flags {sorted(unknown)}")
    if "no-adl" in flags and flags & {"no-pretrain", "no-dynamic-val"}:
        raise ContractViolation(
            "no-adl disables the adaptive stage; it cannot combine with "
            "no-pretrain or no-dynamic-val")
    if encoder is None:
        raise ContractViolation("ablation_variant needs a MetaEncoder")

    if flags & {"no-iso-mod", "no-type-mod"}:
        encoder = MetaEncoder(encoder.sensor_ids, iso_max=encoder.iso_max,
                              use_type="no-type-mod" not in flags,
                              use_iso="no-iso-mod" not in flags)
    run_cfg = cfg
    if "no-pretrain" in flags:
        run_cfg = replace(run_cfg, pretrain_iters=0)
    if "no-dynamic-val" in flags:
        run_cfg = replace(run_cfg, dynamic_val=False)

    if "no-adl" in flags:
        log = baseline_finetune(model, source_domains, target_set, run_cfg,
                                encoder=encoder, profiles=profiles, modulate=True)
    else:
        log = adl_train(model, source_domains, target_set, run_cfg,
                        profiles=profiles, encoder=encoder)
    return log, encoder
