"""Experiment drivers: fleet data construction, single runs, cross-validation,
harmful-data studies, and the target-set-size sweep."""

import time
from dataclasses import dataclass, replace

import numpy as np

from .. import sensorsim
from ..adl import ablation_variant, adl_train, baseline_finetune
from ..errors import ConfigError, ContractViolation
from ..metrics import eval_model
from ..modnet import MetaEncoder, ModulatedDenoiser
from ..sensorsim import DomainDataset
from .results import ResultRecord
from .svgplot import line_plot


@dataclass
class FleetData:
    profiles: list
    pmap: dict
    encoder: MetaEncoder
    pools: dict    # sensor_id -> adaptation pool (target-role data, curated)
    sources: dict  # sensor_id -> source-role dataset (legacy-pool quality)
    tests: dict    # sensor_id -> held-out test set


def build_fleet_data(fleet):
    """Generate every per-sensor dataset for one fleet configuration.

    Adaptation pools and test sets use the target-role ISO distribution and
    perfectly aligned ground truth; source-role datasets use the source ISO
    distribution and the configured misalignment fraction. Test scenes come
    from a disjoint seed stream.
    """
    profiles = sensorsim.default_fleet(fleet.kind)
    lfs = tuple(fleet.light_factors)
    pools, sources, tests = {}, {}, {}
    for i, p in enumerate(profiles):
        pools[p.sensor_id] = sensorsim.build_domain(
            p, fleet.tadp_pool, fleet.patch, iso_choices=fleet.target_iso,
            light_factors=lfs, seed=fleet.seed)
        sources[p.sensor_id] = sensorsim.build_domain(
            p, fleet.source_count, fleet.patch, iso_choices=fleet.source_iso,
            light_factors=lfs, seed=fleet.seed + 1,
            misaligned_fraction=fleet.misaligned_fraction_for(i))
        tests[p.sensor_id] = sensorsim.build_domain(
            p, fleet.test_count, fleet.patch, iso_choices=fleet.target_iso,
            light_factors=lfs, seed=fleet.seed + 1000, split="test")
    return FleetData(
        profiles=profiles,
        pmap={p.sensor_id: p for p in profiles},
        encoder=MetaEncoder([p.sensor_id for p in profiles]),
        pools=pools, sources=sources, tests=tests)


def draw_tadp(pool, size, seed):
    """Per-seed target adaptation subset of the curated pool."""
    if size > len(pool.pairs):
        raise ConfigError(f"tadp_size {size} exceeds pool of {len(pool.pairs)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, pool.sensor_id, 0x7AD]))
    idx = sorted(int(i) for i in rng.choice(len(pool.pairs), size=size, replace=False))
    return DomainDataset(pool.sensor_id, [pool.pairs[i] for i in idx],
                         split="adaptation", label=pool.label)


def _parse_method(method):
    if method in ("adl", "finetune"):
        return method, ()
    if method.startswith("ablation:"):
        flags = tuple(f for f in method[len("ablation:"):].split(",") if f)
        return "ablation", flags
    raise ConfigError(f"unknown method {method!r}")


def run_single(config, fleet_data, method, target_sid, seed, tadp_size,
               sources_override=None):
    """Train one model and evaluate it on the target's held-out test set."""
    kind, flags = _parse_method(method)
    pool = fleet_data.pools[target_sid]
    tadp = draw_tadp(pool, tadp_size, seed)
    sources = sources_override if sources_override is not None else [
        d for sid, d in sorted(fleet_data.sources.items()) if sid != target_sid]
    for d in sources:
        if d.sensor_id == target_sid:
            raise ContractViolation(
                f"target sensor {target_sid} present in the source domain list")

    cfg = replace(config.adl, seed=seed, target_sensor_id=target_sid)
    model = ModulatedDenoiser(
        n_sensors=fleet_data.encoder.n_sensors, widths=tuple(config.run.widths),
        seed=int(np.random.SeedSequence([config.fleet.seed, target_sid, seed]).generate_state(1)[0]))
    encoder = fleet_data.encoder

    t0 = time.perf_counter()
    modulate = True
    if kind == "adl":
        log = adl_train(model, sources, tadp, cfg, profiles=fleet_data.pmap, encoder=encoder)
    elif kind == "finetune":
        log = baseline_finetune(model, sources, tadp, cfg, encoder=encoder,
                                profiles=fleet_data.pmap)
        modulate = False  # the plain baseline trains and runs unconditioned
    else:
        log, encoder = ablation_variant(flags, model, sources, tadp, cfg,
                                        profiles=fleet_data.pmap, encoder=fleet_data.encoder)
    wall = time.perf_counter() - t0

    report = eval_model(model, fleet_data.tests[target_sid], encoder, modulate=modulate)
    record = ResultRecord(
        method=method,
        target=fleet_data.pmap[target_sid].name,
        seed=seed,
        tadp_size=tadp_size,
        psnr_db=report.mean_psnr,
        ssim=report.mean_ssim,
        accept_rate=log.accept_rate if log is not None else None,
        wall_s=wall if config.run.record_walltime else 0.0,
    )
    return record, model, log


def run_cross_validation(config, fleet_data=None):
    """Every configured sensor takes one turn as the target domain."""
    fleet_data = fleet_data or build_fleet_data(config.fleet)
    if len(fleet_data.profiles) < 2:
        raise ConfigError("cross-validation needs a fleet of >= 2 sensors")
    targets = config.run.targets or [p.sensor_id for p in fleet_data.profiles]
    records = []
    for target_sid in targets:
        for method in config.run.methods:
            for seed in config.run.seeds:
                rec, _, _ = run_single(config, fleet_data, method, target_sid, seed,
                                       config.run.tadp_size)
                records.append(rec)
    return records


def harmful_sources(config, fleet_data, target_sid, variant):
    """Source list for one harmful-study cell. The harmful variants add one
    corrupted domain per clean source domain, so corrupted pairs are half of
    the pool."""
    base = [d for sid, d in sorted(fleet_data.sources.items()) if sid != target_sid]
    if variant == "base":
        return base
    if variant == "harmful1":
        return base + [sensorsim.make_harmful1(d, config.run.harmful_sigma, seed=900 + i)
                       for i, d in enumerate(base)]
    if variant == "harmful2":
        extra = []
        for i, d in enumerate(base):
            mode = "shuffled-gt" if i % 2 == 0 else "black-gt"
            extra.append(sensorsim.make_harmful2(
                d, mode, seed=900 + i,
                black_level=fleet_data.pmap[d.sensor_id].black_level))
        return base + extra
    raise ConfigError(f"unknown harmful variant {variant!r}")


def run_harmful(config, fleet_data=None):
    """Fine-tuning vs adaptive training on clean and corrupted source pools."""
    fleet_data = fleet_data or build_fleet_data(config.fleet)
    target_sid = config.run.target
    records = []
    for variant in config.run.harmful_variants:
        sources = harmful_sources(config, fleet_data, target_sid, variant)
        for method in ("finetune", "adl"):
            for seed in config.run.seeds:
                rec, _, _ = run_single(config, fleet_data, method, target_sid, seed,
                                       config.run.tadp_size, sources_override=sources)
                rec.method = f"{method}+{variant}"
                records.append(rec)
    return records


SWEEP_METHODS = ("adl", "ablation:no-dynamic-val", "finetune")


def run_size_sweep(config, fleet_data=None, plot_path=None):
    """Train each method at every target-set size; emit the PSNR-vs-size plot."""
    if not config.run.sizes:
        raise ConfigError("run.sizes must be nonempty")
    fleet_data = fleet_data or build_fleet_data(config.fleet)
    target_sid = config.run.target
    records = []
    for size in config.run.sizes:
        for method in SWEEP_METHODS:
            for seed in config.run.seeds:
                rec, _, _ = run_single(config, fleet_data, method, target_sid, seed, size)
                records.append(rec)
    if plot_path is not None:
        plot_size_sweep(records, plot_path)
    return records


def plot_size_sweep(records, path):
    sizes = sorted({r.tadp_size for r in records})
    methods = sorted({r.method for r in records})
    series = {}
    for m in methods:
        series[m] = [float(np.median([r.psnr_db for r in records
                                      if r.method == m and r.tadp_size == s]))
                     for s in sizes]
    return line_plot(path, sizes, series, title="target-set size sweep",
                     xlabel="target adaptation set size", ylabel="test PSNR (dB)")
