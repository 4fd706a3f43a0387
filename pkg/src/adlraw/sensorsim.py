"""Synthetic multi-sensor RAW data generation.

Each sensor is a parametric camera model (system gain vs ISO, read noise, row
noise, fixed-pattern offsets, black level). Scenes are deterministic functions
of a seed; captures simulate an underexposed exposure whose shot-noise
variance scales with the per-ISO system gain, then re-expose by the light
factor. Mosaics are packed into 4 half-resolution channels, 2x2 tile order
(top-left, top-right, bottom-left, bottom-right).
"""

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, MagicError, ShapeError, TruncationError

BAYER_LAYOUTS = ("RGGB", "BGGR", "GRBG", "GBRG")

NOISY_MIN, NOISY_MAX = -0.5, 2.0

DATASET_MAGIC = b"ADLRAW1\0"


@dataclass(frozen=True)
class SensorProfile:
    """Parametric camera model; all noise parameters in normalized [0,1] units."""

    sensor_id: int
    name: str
    base_gain: float  # system gain at ISO 100
    read_noise: float
    row_noise: float
    fpn_amplitude: float
    fpn_seed: int
    black_level: float
    bayer_layout: str
    iso_set: tuple

    def __post_init__(self):
        if self.base_gain <= 0:
            raise ContractViolation(f"base_gain must be > 0, got {self.base_gain}")
        if self.read_noise < 0 or self.row_noise < 0 or self.fpn_amplitude < 0:
            raise ContractViolation("noise amplitudes must be >= 0")
        if not 0 <= self.black_level < 0.25:
            raise ContractViolation(f"black_level must be in [0, 0.25), got {self.black_level}")
        if self.bayer_layout not in BAYER_LAYOUTS:
            raise ContractViolation(f"unknown bayer layout {self.bayer_layout!r}")
        if not self.iso_set or any(i <= 0 for i in self.iso_set):
            raise ContractViolation("iso_set must be nonempty with positive ISO values")

    def gain(self, iso):
        """System gain at the given ISO (proportional to ISO)."""
        return self.base_gain * iso / 100.0

    def to_dict(self):
        return {
            "sensor_id": self.sensor_id,
            "name": self.name,
            "base_gain": self.base_gain,
            "read_noise": self.read_noise,
            "row_noise": self.row_noise,
            "fpn_amplitude": self.fpn_amplitude,
            "fpn_seed": self.fpn_seed,
            "black_level": self.black_level,
            "bayer_layout": self.bayer_layout,
            "iso_set": list(self.iso_set),
        }


def profile_from_dict(d):
    return SensorProfile(
        sensor_id=int(d["sensor_id"]),
        name=str(d["name"]),
        base_gain=float(d["base_gain"]),
        read_noise=float(d["read_noise"]),
        row_noise=float(d["row_noise"]),
        fpn_amplitude=float(d["fpn_amplitude"]),
        fpn_seed=int(d["fpn_seed"]),
        black_level=float(d["black_level"]),
        bayer_layout=str(d["bayer_layout"]),
        iso_set=tuple(int(i) for i in d["iso_set"]),
    )


@dataclass
class SamplePair:
    """One training example: packed noisy input and packed clean target."""

    noisy: np.ndarray  # (4, h, w) float32
    clean: np.ndarray  # (4, h, w) float32
    sensor_id: int
    iso: int
    light_factor: float
    scene_seed: int


@dataclass
class DomainDataset:
    """All pairs of one sensor for one split."""

    sensor_id: int
    pairs: list
    split: str = "adaptation"  # "adaptation" | "test"
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.pairs:
            raise ContractViolation("DomainDataset needs at least one pair")
        if any(p.sensor_id != self.sensor_id for p in self.pairs):
            raise ContractViolation("all pairs of a domain must share sensor_id")

    def __len__(self):
        return len(self.pairs)


# ---------------------------------------------------------------------------
# scenes

def _bilinear_upsample(coarse, h, w):
    gh, gw = coarse.shape
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = coarse[np.ix_(y0, x0)] * (1 - fx) + coarse[np.ix_(y0, x1)] * fx
    bot = coarse[np.ix_(y1, x0)] * (1 - fx) + coarse[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def render_clean_scene(scene_seed, height, width):
    """Deterministic ground-truth mosaic in [0,1]: a smooth gradient plus a
    band-limited random field plus a few step edges."""
    if height % 2 or width % 2:
        raise ContractViolation(f"scene dims must be even, got {height}x{width}")
    rng = np.random.default_rng(np.random.SeedSequence([int(scene_seed) & (2**63 - 1), 0x5CE2E]))

    # Content (orientation, field realization, edge placement) is random per
    # seed but component amplitudes are fixed, so every scene has a similar
    # structure-to-noise balance. That keeps per-patch achievable PSNR
    # homogeneous, which the per-iteration validation scores rely on.
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = rng.uniform(0, 2 * np.pi)
    diag = max(np.hypot(height, width), 1.0)
    img = 0.5 + 0.18 * ((xx * np.cos(theta) + yy * np.sin(theta)) / diag)

    # coarse enough that structure is separable from per-pixel noise
    gh = max(height // 16, 2)
    gw = max(width // 16, 2)
    img += 0.12 * _bilinear_upsample(rng.normal(size=(gh, gw)), height, width)

    for _ in range(3):
        r0 = int(rng.integers(0, height))
        c0 = int(rng.integers(0, width))
        rh = int(rng.integers(height // 4 + 1, height // 2 + 2))
        cw = int(rng.integers(width // 4 + 1, width // 2 + 2))
        delta = 0.18 * (1 if rng.uniform() < 0.5 else -1)
        img[r0:r0 + rh, c0:c0 + cw] += delta

    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# noise

def fixed_pattern(profile, height, width):
    """Static per-pixel offset pattern of this sensor (DSNU analogue)."""
    rng = np.random.default_rng(np.random.SeedSequence([profile.fpn_seed, 0xF9]))
    return (profile.fpn_amplitude * rng.standard_normal((height, width))).astype(np.float64)


def apply_noise(clean_mosaic, profile, iso, light_factor, rng):
    """Simulate one capture of a clean mosaic.

    Exposure is reduced by the light factor; shot noise has variance
    gain * signal at that reduced exposure; read/row/fixed-pattern noise
    and the black level are added; the result is re-exposed by the light
    factor and clamped.
    """
    if iso not in profile.iso_set:
        raise ContractViolation(f"iso {iso} not supported by sensor {profile.sensor_id} {profile.iso_set}")
    if light_factor < 1:
        raise ContractViolation(f"light_factor must be >= 1, got {light_factor}")
    clean = np.asarray(clean_mosaic, dtype=np.float64)
    h, w = clean.shape
    under = clean / light_factor
    k = profile.gain(iso)

    shot = rng.standard_normal(under.shape) * np.sqrt(k * under)
    read = rng.normal(0.0, profile.read_noise, under.shape) if profile.read_noise > 0 else 0.0
    row = rng.normal(0.0, profile.row_noise, (h, 1)) if profile.row_noise > 0 else 0.0
    fpn = fixed_pattern(profile, h, w) if profile.fpn_amplitude > 0 else 0.0

    noisy = (under + shot + read + row + fpn + profile.black_level) * light_factor
    return np.clip(noisy, NOISY_MIN, NOISY_MAX).astype(np.float32)


# ---------------------------------------------------------------------------
# packing

def pack_bayer(mosaic, layout="RGGB"):
    """Pack an h x w mosaic into 4 half-resolution channels.

    Channel order is positional within the 2x2 tile (top-left, top-right,
    bottom-left, bottom-right); the layout names which color each position
    carries and must be one of the known patterns.
    """
    if layout not in BAYER_LAYOUTS:
        raise ContractViolation(f"unknown bayer layout {layout!r}")
    m = np.asarray(mosaic)
    if m.ndim != 2 or m.shape[0] % 2 or m.shape[1] % 2:
        raise ContractViolation(f"pack_bayer needs even 2-d dims, got {m.shape}")
    return np.ascontiguousarray(
        np.stack([m[0::2, 0::2], m[0::2, 1::2], m[1::2, 0::2], m[1::2, 1::2]]))


def unpack_bayer(packed, layout="RGGB"):
    """Inverse of pack_bayer."""
    if layout not in BAYER_LAYOUTS:
        raise ContractViolation(f"unknown bayer layout {layout!r}")
    p = np.asarray(packed)
    if p.ndim != 3 or p.shape[0] != 4:
        raise ContractViolation(f"unpack_bayer needs (4, h, w), got {p.shape}")
    h, w = p.shape[1] * 2, p.shape[2] * 2
    m = np.empty((h, w), dtype=p.dtype)
    m[0::2, 0::2] = p[0]
    m[0::2, 1::2] = p[1]
    m[1::2, 0::2] = p[2]
    m[1::2, 1::2] = p[3]
    return m


# ---------------------------------------------------------------------------
# dataset construction

def build_domain(profile, count, patch_size, iso_choices=None, light_factors=(1.0,),
                 seed=0, split="adaptation", label="", misaligned_fraction=0.0):
    """Generate `count` sample pairs for one sensor.

    patch_size is the packed patch side; the rendered mosaic is twice that.
    Deterministic given (profile, seed). misaligned_fraction > 0 gives that
    share of pairs a spatially shifted ground truth, imitating the imperfect
    alignment of large legacy capture pools (the small curated target sets
    are built with 0).
    """
    if count < 1:
        raise ContractViolation(f"count must be >= 1, got {count}")
    if not 0 <= misaligned_fraction <= 1:
        raise ContractViolation(f"misaligned_fraction must be in [0,1], got {misaligned_fraction}")
    isos = tuple(iso_choices) if iso_choices else profile.iso_set
    if any(i not in profile.iso_set for i in isos):
        raise ContractViolation(f"iso_choices {isos} not all in profile iso_set {profile.iso_set}")
    lfs = tuple(light_factors)
    root = np.random.default_rng(np.random.SeedSequence([seed, profile.sensor_id, 0xD07]))

    pairs = []
    for _ in range(count):
        scene_seed = int(root.integers(0, 2**63))
        iso = int(isos[int(root.integers(0, len(isos)))])
        lf = float(lfs[int(root.integers(0, len(lfs)))])
        misaligned = root.uniform() < misaligned_fraction
        # displacements well above the scene correlation length, so a
        # misaligned target is genuinely wrong, not just blurred
        dy = int(root.integers(4, max(5, patch_size // 2 + 1))) * 2
        dx = int(root.integers(4, max(5, patch_size // 2 + 1))) * 2
        scene = render_clean_scene(scene_seed, 2 * patch_size, 2 * patch_size)
        noise_rng = np.random.default_rng(np.random.SeedSequence([scene_seed, profile.sensor_id, 0xA0]))
        noisy = apply_noise(scene, profile, iso, lf, noise_rng)
        gt = np.roll(scene, (dy, dx), axis=(0, 1)) if misaligned else scene
        pairs.append(SamplePair(
            noisy=pack_bayer(noisy, profile.bayer_layout),
            clean=pack_bayer(gt, profile.bayer_layout),
            sensor_id=profile.sensor_id,
            iso=iso,
            light_factor=lf,
            scene_seed=scene_seed,
        ))
    return DomainDataset(sensor_id=profile.sensor_id, pairs=pairs, split=split,
                         label=label or profile.name)


def make_harmful1(base_domain, sigma, seed):
    """Bright-scene pairs corrupted with flat Gaussian noise of level sigma
    (8-bit scale, so normalized sigma/255) - a mismatched-intensity source."""
    if sigma <= 0:
        raise ContractViolation(f"sigma must be > 0, got {sigma}")
    h, w = base_domain.pairs[0].clean.shape[1:]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4A1]))
    sig = sigma / 255.0
    pairs = []
    for src in base_domain.pairs:
        scene_seed = int(rng.integers(0, 2**63))
        scene = render_clean_scene(scene_seed, 2 * h, 2 * w)
        bright = (0.5 + 0.5 * scene).astype(np.float32)  # bright-light ground truth
        noisy = np.clip(bright + rng.normal(0.0, sig, bright.shape), NOISY_MIN, NOISY_MAX)
        pairs.append(SamplePair(
            noisy=pack_bayer(noisy.astype(np.float32)),
            clean=pack_bayer(bright),
            sensor_id=base_domain.sensor_id,
            iso=src.iso,
            light_factor=1.0,
            scene_seed=scene_seed,
        ))
    return DomainDataset(sensor_id=base_domain.sensor_id, pairs=pairs, split=base_domain.split,
                         label=f"{base_domain.label}+harmful1")


def make_harmful2(base_domain, mode, seed, black_level=0.0):
    """Misaligned pairs: targets permuted across scenes (derangement) or
    replaced by the black-level constant."""
    n = len(base_domain.pairs)
    if mode not in ("shuffled-gt", "black-gt"):
        raise ContractViolation(f"unknown harmful2 mode {mode!r}")
    pairs = []
    if mode == "shuffled-gt":
        if n < 2:
            raise ContractViolation("shuffled-gt needs at least 2 pairs")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4A2]))
        # Sattolo shuffle: a uniformly random cyclic permutation, hence no
        # pair keeps its own target
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = int(rng.integers(0, i))
            idx[i], idx[j] = idx[j], idx[i]
        for i, src in enumerate(base_domain.pairs):
            pairs.append(replace(src, clean=base_domain.pairs[idx[i]].clean.copy()))
    else:
        for src in base_domain.pairs:
            pairs.append(replace(src, clean=np.full_like(src.clean, np.float32(black_level))))
    return DomainDataset(sensor_id=base_domain.sensor_id, pairs=pairs, split=base_domain.split,
                         label=f"{base_domain.label}+harmful2-{mode}")


# ---------------------------------------------------------------------------
# default fleets

FLEET_LIGHT_FACTORS = {"default5": (1.0,), "lowlight2": (100.0, 300.0)}

# Per-sensor fixed patterns are strong on purpose: they are the out-of-model
# component a channel-wise-conditioned network cannot absorb, so data from a
# sensor with a different pattern is genuinely (partially) harmful.
_DEFAULT5 = [
    # name, base_gain, read, row, fpn_amp, fpn_seed, black, layout
    ("camA", 0.002, 0.005, 0.000, 0.030, 901, 0.010, "RGGB"),
    ("camB", 0.005, 0.010, 0.002, 0.018, 902, 0.020, "BGGR"),
    ("camC", 0.012, 0.018, 0.003, 0.040, 903, 0.030, "GRBG"),
    ("camD", 0.025, 0.028, 0.005, 0.012, 904, 0.040, "GBRG"),
    ("camE", 0.050, 0.040, 0.008, 0.025, 905, 0.050, "RGGB"),
]

# Low-light profiles are used with light factors of 100-300; every additive
# term is multiplied by that factor, so read noise and black level must be
# tiny in normalized units to survive the re-exposure.
_LOWLIGHT2 = [
    ("dslrA", 0.001, 0.0010, 0.0002, 0.0010, 911, 0.0005, "RGGB"),
    ("dslrB", 0.004, 0.0025, 0.0005, 0.0020, 912, 0.0010, "BGGR"),
]


def default_fleet(kind="default5"):
    """Built-in sensor fleets: 5 smartphone-like profiles spanning a 25x gain
    range, or 2 low-light profiles used with large light factors."""
    rows = {"default5": _DEFAULT5, "lowlight2": _LOWLIGHT2}.get(kind)
    if rows is None:
        raise ContractViolation(f"unknown fleet kind {kind!r}")
    return [
        SensorProfile(sensor_id=i, name=name, base_gain=k0, read_noise=rd, row_noise=row,
                      fpn_amplitude=fpn, fpn_seed=fs, black_level=bl, bayer_layout=lay,
                      iso_set=(100, 400, 1600, 3200))
        for i, (name, k0, rd, row, fpn, fs, bl, lay) in enumerate(rows)
    ]


# ---------------------------------------------------------------------------
# file format

def write_dataset(path, dataset, profile=None):
    """Serialize a DomainDataset (see read_dataset for the layout)."""
    pairs = dataset.pairs
    h, w = pairs[0].noisy.shape[1:]
    meta = dict(dataset.meta)
    meta.update({"split": dataset.split, "label": dataset.label})
    if profile is not None:
        meta["profile"] = profile.to_dict()
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<6I", 1, len(pairs), 4, h, w, dataset.sensor_id))
        for p in pairs:
            if p.noisy.shape != (4, h, w) or p.clean.shape != (4, h, w):
                raise ContractViolation(f"inconsistent pair shape {p.noisy.shape} in dataset")
            f.write(struct.pack("<If Q", p.iso, p.light_factor, p.scene_seed))
            f.write(np.ascontiguousarray(p.noisy, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(p.clean, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def _read_exact(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise TruncationError(f"dataset file truncated while reading {what}")
    return b


def read_dataset(path):
    """Parse a dataset file.

    Layout: 8-byte magic, six little-endian u32 header fields (version,
    count, channels, h, w, sensor_id), per-pair records (u32 iso, f32
    light_factor, u64 scene_seed, f32 noisy[4hw], f32 clean[4hw]), then a
    u32-length-prefixed JSON metadata trailer.
    """
    with open(path, "rb") as f:
        magic = f.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise MagicError(f"bad dataset magic {magic!r}")
        version, count, channels, h, w, sensor_id = struct.unpack("<6I", _read_exact(f, 24, "header"))
        if version != 1:
            raise ShapeError(f"unsupported dataset version {version}")
        if channels != 4 or h == 0 or w == 0 or count == 0:
            raise ShapeError(f"bad dataset geometry: count={count} channels={channels} h={h} w={w}")
        plane = 4 * h * w
        pairs = []
        for _ in range(count):
            iso, lf, scene_seed = struct.unpack("<If Q", _read_exact(f, 16, "pair header"))
            noisy = np.frombuffer(_read_exact(f, plane * 4, "noisy plane"), dtype="<f4").reshape(4, h, w)
            clean = np.frombuffer(_read_exact(f, plane * 4, "clean plane"), dtype="<f4").reshape(4, h, w)
            pairs.append(SamplePair(noisy=noisy.copy(), clean=clean.copy(), sensor_id=sensor_id,
                                    iso=iso, light_factor=lf, scene_seed=scene_seed))
        (blob_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        meta = json.loads(_read_exact(f, blob_len, "metadata").decode("utf-8"))
    return DomainDataset(sensor_id=sensor_id, pairs=pairs,
                         split=meta.get("split", "adaptation"),
                         label=meta.get("label", ""), meta=meta)
