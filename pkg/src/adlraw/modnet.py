"""Denoiser network: a small encoder-decoder conv net whose encoder features
are conditioned on sensor identity and ISO.

Conditioning: the sensor one-hot p and the normalized ISO (duplicated to the
same length) are concatenated and fed to two 4-layer MLPs per encoder stage,
producing a per-channel scale 1 + tanh(.) in (0, 2) and a per-channel shift;
features are transformed channel-wise before the activation. The network
predicts a residual added to its input, so a zero-initialized final layer
makes it start as the identity.
"""

import json
import struct

import numpy as np

from .engine import ops
from .engine.tensor import Tensor
from .errors import ContractViolation, MagicError, ShapeError, TruncationError

CHECKPOINT_MAGIC = b"ADLMDL1\0"

DEFAULT_WIDTHS = (16, 32, 64)
ISO_MAX = 3200


class MetaEncoder:
    """Maps (sensor_id, iso) to the conditioning vector (p, s) of length 2n.

    p is the one-hot sensor type, s is iso/iso_max duplicated n times.
    Either half can be masked to zero for the modulation ablations.
    """

    def __init__(self, sensor_ids, iso_max=ISO_MAX, use_type=True, use_iso=True):
        if not sensor_ids:
            raise ContractViolation("MetaEncoder needs at least one sensor id")
        if len(set(sensor_ids)) != len(sensor_ids):
            raise ContractViolation("duplicate sensor ids")
        self.sensor_ids = tuple(int(s) for s in sensor_ids)
        self.index = {sid: i for i, sid in enumerate(self.sensor_ids)}
        self.iso_max = int(iso_max)
        self.use_type = bool(use_type)
        self.use_iso = bool(use_iso)

    @property
    def n_sensors(self):
        return len(self.sensor_ids)

    def encode(self, sensor_id, iso, dtype=np.float32):
        if sensor_id not in self.index:
            raise ContractViolation(
                f"sensor id {sensor_id} not in the model's one-hot space {self.sensor_ids}")
        n = self.n_sensors
        vec = np.zeros(2 * n, dtype=dtype)
        if self.use_type:
            vec[self.index[sensor_id]] = 1.0
        if self.use_iso:
            vec[n:] = iso / self.iso_max
        return vec

    def encode_pairs(self, pairs, dtype=np.float32):
        return np.stack([self.encode(p.sensor_id, p.iso, dtype) for p in pairs])


class _Conv:
    def __init__(self, name, in_ch, out_ch, rng, dtype, zero=False):
        k = 3
        fan_in = in_ch * k * k
        limit = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-limit, limit, size=(out_ch, in_ch, k, k))
        b = rng.uniform(-limit, limit, size=(out_ch,))
        if zero:
            w = np.zeros_like(w)
            b = np.zeros_like(b)
        self.name = name
        self.w = Tensor(w, requires_grad=True, dtype=dtype)
        self.b = Tensor(b, requires_grad=True, dtype=dtype)

    def __call__(self, x, stride=1):
        return ops.conv2d(x, self.w, bias=self.b, stride=stride, pad=1)

    def parameters(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class _Mlp:
    """Four dense layers, ReLU between hidden layers, linear output."""

    def __init__(self, name, in_dim, width, rng, dtype):
        dims = [in_dim, width, width, width, width]
        self.name = name
        self.layers = []
        for i in range(4):
            limit = 1.0 / np.sqrt(dims[i])
            w = Tensor(rng.uniform(-limit, limit, size=(dims[i], dims[i + 1])),
                       requires_grad=True, dtype=dtype)
            b = Tensor(rng.uniform(-limit, limit, size=(dims[i + 1],)),
                       requires_grad=True, dtype=dtype)
            self.layers.append((w, b))

    def __call__(self, x):
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = ops.linear(h, w, b)
            if i < 3:
                h = ops.relu(h)
        return h

    def parameters(self):
        out = []
        for i, (w, b) in enumerate(self.layers):
            out.append((f"{self.name}.l{i}.w", w))
            out.append((f"{self.name}.l{i}.b", b))
        return out

    def zero_(self):
        for w, b in self.layers:
            w.data[...] = 0.0
            b.data[...] = 0.0


class ModulatedDenoiser:
    """Residual encoder-decoder denoiser with per-stage channel modulation."""

    def __init__(self, n_sensors, widths=DEFAULT_WIDTHS, in_channels=4, seed=0,
                 dtype=np.float32):
        if len(widths) != 3:
            raise ContractViolation(f"widths must have 3 stages, got {widths}")
        self.n_sensors = int(n_sensors)
        self.widths = tuple(int(w) for w in widths)
        self.in_channels = int(in_channels)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x30DE1]))

        w1, w2, w3 = self.widths
        c = self.in_channels
        self.enc = [
            _Conv("enc1", c, w1, rng, dtype),
            _Conv("enc2", w1, w2, rng, dtype),
            _Conv("enc3", w2, w3, rng, dtype),
        ]
        self.dec = [
            _Conv("dec1", w3 + w2, w2, rng, dtype),
            _Conv("dec2", w2 + w1, w1, rng, dtype),
            _Conv("dec3", w1 + c, c, rng, dtype, zero=True),  # skip from the input itself
        ]
        meta_dim = 2 * self.n_sensors
        self.mlps_gamma = [_Mlp(f"mod{i}.gamma", meta_dim, w, rng, dtype)
                           for i, w in enumerate(self.widths)]
        self.mlps_beta = [_Mlp(f"mod{i}.beta", meta_dim, w, rng, dtype)
                          for i, w in enumerate(self.widths)]

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        out = []
        for layer in self.enc + self.dec:
            out.extend(layer.parameters())
        for g, b in zip(self.mlps_gamma, self.mlps_beta):
            out.extend(g.parameters())
            out.extend(b.parameters())
        return out

    def param_tensors(self):
        return [p for _, p in self.parameters()]

    def backbone_tensors(self):
        """Conv-stack parameters only (what an unconditioned run trains)."""
        out = []
        for layer in self.enc + self.dec:
            out.extend(p for _, p in layer.parameters())
        return out

    def count_params(self):
        return int(sum(p.data.size for p in self.param_tensors()))

    def zero_grad(self):
        for p in self.param_tensors():
            p.grad = None

    def zero_modulation_(self):
        """Zero every MLP so gamma == 1 and beta == 0 everywhere."""
        for m in self.mlps_gamma + self.mlps_beta:
            m.zero_()

    # -- forward ------------------------------------------------------------

    def _meta_tensor(self, meta):
        m = np.asarray(meta, dtype=self.dtype)
        if m.ndim == 1:
            m = m[None, :]
        if m.ndim != 2 or m.shape[1] != 2 * self.n_sensors:
            raise ContractViolation(
                f"meta shape {m.shape} incompatible with n_sensors={self.n_sensors}")
        return Tensor(m)

    def modulation_params(self, meta, stage):
        """Per-channel (scale, shift) for one encoder stage; scale is in (0, 2)."""
        if not 0 <= stage < len(self.widths):
            raise ContractViolation(f"stage {stage} out of range")
        mt = self._meta_tensor(meta)
        raw = ops.tanh(self.mlps_gamma[stage](mt))
        ones = Tensor(np.ones_like(raw.data), dtype=raw.data.dtype)
        gamma = ops.add(ones, raw)
        beta = self.mlps_beta[stage](mt)
        return gamma, beta

    def forward(self, x, meta, modulate=True):
        """Denoise a packed batch (N, 4, h, w); h and w divisible by 8."""
        if isinstance(x, np.ndarray):
            x = Tensor(x, dtype=self.dtype)
        n, c, h, w = x.shape
        if c != self.in_channels or h % 8 or w % 8:
            raise ContractViolation(
                f"forward needs (N, {self.in_channels}, 8k, 8k) input, got {tuple(x.shape)}")

        feats = []
        cur = x
        for stage, layer in enumerate(self.enc):
            cur = layer(cur, stride=2)
            if modulate:
                gamma, beta = self.modulation_params(meta, stage)
                cur = ops.scale_shift(cur, gamma, beta)
            cur = ops.relu(cur)
            feats.append(cur)

        cur = ops.upsample_nearest2(feats[2])
        cur = ops.relu(self.dec[0](ops.concat_channels(cur, feats[1])))
        cur = ops.upsample_nearest2(cur)
        cur = ops.relu(self.dec[1](ops.concat_channels(cur, feats[0])))
        cur = ops.upsample_nearest2(cur)
        residual = self.dec[2](ops.concat_channels(cur, x))
        return ops.add(x, residual)

    def denoise(self, noisy, meta, modulate=True):
        """Forward pass outside any tape, returning a numpy array."""
        x = noisy if noisy.ndim == 4 else noisy[None]
        out = self.forward(Tensor(x.astype(self.dtype, copy=False)), meta, modulate=modulate)
        return out.data if noisy.ndim == 4 else out.data[0]

    def descriptor(self):
        return {
            "version": 1,
            "n_sensors": self.n_sensors,
            "widths": list(self.widths),
            "in_channels": self.in_channels,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# checkpoints

def save_model(path, model, encoder=None):
    """Write magic, a JSON architecture block, then the f32 parameter payload
    in deterministic parameter order."""
    desc = model.descriptor()
    if encoder is not None:
        desc["sensor_ids"] = list(encoder.sensor_ids)
        desc["iso_max"] = encoder.iso_max
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, p in model.parameters():
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_model(path):
    """Rebuild a model (and its MetaEncoder, if saved) from a checkpoint."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise MagicError(f"bad checkpoint magic {magic!r}")
        raw = f.read(4)
        if len(raw) != 4:
            raise TruncationError("checkpoint truncated in descriptor length")
        (blob_len,) = struct.unpack("<I", raw)
        blob = f.read(blob_len)
        if len(blob) != blob_len:
            raise TruncationError("checkpoint truncated in descriptor")
        desc = json.loads(blob.decode("utf-8"))
        model = ModulatedDenoiser(
            n_sensors=desc["n_sensors"], widths=tuple(desc["widths"]),
            in_channels=desc["in_channels"], seed=desc.get("seed", 0))
        payload = f.read()
    expected = model.count_params() * 4
    if len(payload) < expected:
        raise TruncationError(f"checkpoint payload {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise ShapeError(f"checkpoint payload {len(payload)} bytes, expected {expected}")
    off = 0
    for _, p in model.parameters():
        n = p.data.size
        vals = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(p.data.shape)
        np.copyto(p.data, vals)
        off += n * 4
    encoder = None
    if "sensor_ids" in desc:
        encoder = MetaEncoder(desc["sensor_ids"], iso_max=desc.get("iso_max", ISO_MAX))
    return model, encoder
