"""The 1-D pre-activation residual network and its checkpoint format."""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import CorruptCheckpoint, ShapeError, UnsupportedVersion
from .labels import N_CLASSES, N_LEADS

MAGIC = b"ECGDNN01"
FORMAT_VERSION = 1


@dataclass
class ArchitectureConfig:
    n_residual_blocks: int = 4
    kernel_length: int = 16
    initial_filters: int = 64
    filter_growth: int = 64
    growth_every: int = 2
    subsample_factor: int = 4
    dropout_rate: float = 0.8
    n_classes: int = N_CLASSES
    n_leads: int = N_LEADS
    input_length: int = 4096

    def block_filters(self):
        return [self.initial_filters + self.filter_growth * (i // self.growth_every)
                for i in range(self.n_residual_blocks)]

    def block_lengths(self):
        lengths, length = [], self.input_length
        for _ in range(self.n_residual_blocks):
            length = -(-length // self.subsample_factor)
            lengths.append(length)
        return lengths

    def n_features(self):
        return self.block_filters()[-1] * self.block_lengths()[-1]


@dataclass
class Model:
    config: ArchitectureConfig
    params: dict
    state: dict
    thresholds: np.ndarray = field(default_factory=lambda: np.full(N_CLASSES, 0.5))
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params["dense.w"].dtype

    def astype(self, dtype):
        """Copy of the model with parameters and running stats cast to ``dtype``."""
        return Model(
            ArchitectureConfig(**asdict(self.config)),
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.state.items()},
            self.thresholds.copy(),
            dict(self.meta),
        )

    def n_parameters(self):
        return sum(v.size for v in self.params.values())

    # -- forward / backward -------------------------------------------------

    def _conv(self, name, x, stride, caches):
        w, b = self.params[name + ".w"], self.params[name + ".b"]
        caches.append(("conv", name, x, stride))
        return nn.conv1d_forward(x, w, b, stride)

    def _bn(self, name, x, mode, caches):
        y, c = nn.batchnorm_forward(
            x, self.params[name + ".gamma"], self.params[name + ".beta"],
            self.state[name + ".mean"], self.state[name + ".var"], mode)
        caches.append(("bn", name, c))
        return y

    def _act(self, x, mode, rng, caches):
        caches.append(("relu", x))
        h = nn.relu(x)
        h, mask = nn.dropout(h, self.config.dropout_rate, mode, rng)
        caches.append(("dropout", mask))
        return h

    def logits(self, x, mode="infer", rng=None, trace=None):
        """Pre-sigmoid outputs and the tape needed by :meth:`backward`."""
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        expected = (cfg.n_leads, cfg.input_length)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(f"expected batch of shape (N, {expected[0]}, {expected[1]}), got {x.shape}")
        if mode == "train" and rng is None:
            rng = np.random.default_rng(0)
        tape = []
        h = self._conv("stem.conv", x, 1, tape)
        h = self._bn("stem.bn", h, mode, tape)
        tape.append(("relu", h))
        h = nn.relu(h)
        if trace is not None:
            trace.append(h.shape)
        skip = h
        for i in range(cfg.n_residual_blocks):
            p = f"block{i}"
            sub = cfg.subsample_factor
            y, idx = nn.maxpool1d(skip, sub, sub)
            tape.append(("skip_pool", skip.shape[2], idx))
            if p + ".skip.w" in self.params:
                y = self._conv(p + ".skip", y, 1, tape)
                tape.append(("skip_conv_done", p))
            a = self._conv(p + ".conv1", h, 1, tape)
            a = self._bn(p + ".bn1", a, mode, tape)
            a = self._act(a, mode, rng, tape)
            a = self._conv(p + ".conv2", a, sub, tape)
            s = a + y
            tape.append(("add", p))
            skip = s
            h = self._bn(p + ".bn2", s, mode, tape)
            h = self._act(h, mode, rng, tape)
            if trace is not None:
                trace.append(h.shape)
        flat = h.reshape(h.shape[0], -1)
        if trace is not None:
            trace.append(flat.shape)
        tape.append(("dense", flat, h.shape))
        z = nn.dense_forward(flat, self.params["dense.w"], self.params["dense.b"])
        if trace is not None:
            trace.append(z.shape)
        return z, tape

    def backward(self, tape, grad_logits):
        """Gradients of a scalar loss w.r.t. every entry of ``params``."""
        grads = {}
        tape = list(tape)
        _, flat, h_shape = tape.pop()
        gflat, grads["dense.w"], grads["dense.b"] = nn.dense_backward(
            flat, self.params["dense.w"], grad_logits)
        g = gflat.reshape(h_shape)
        g_skip = None
        for i in reversed(range(self.config.n_residual_blocks)):
            p = f"block{i}"
            g = self._back_act(tape, g)
            g = self._back_bn(tape, g, grads)
            # gradient into the block sum s = main + skip; the next block's
            # skip path also consumed s
            if g_skip is not None:
                g = g + g_skip
            assert tape.pop() == ("add", p)
            g_sum = g
            g = self._back_conv(tape, g, grads)
            g = self._back_act(tape, g)
            g = self._back_bn(tape, g, grads)
            g_main = self._back_conv(tape, g, grads)
            gy = g_sum
            if tape[-1] == ("skip_conv_done", p):
                tape.pop()
                gy = self._back_conv(tape, gy, grads)
            _, length, idx = tape.pop()
            g_skip = nn.maxpool1d_backward(gy, idx, length)
            g = g_main
        # stem output feeds both the first main branch and the first skip
        g = g + g_skip
        _, pre = tape.pop()
        g = nn.relu_backward(pre, g)
        g = self._back_bn(tape, g, grads)
        self._back_conv(tape, g, grads)
        assert not tape
        return grads

    def _back_conv(self, tape, g, grads):
        _, name, x, stride = tape.pop()
        gx, grads[name + ".w"], grads[name + ".b"] = nn.conv1d_backward(
            x, self.params[name + ".w"], g, stride)
        return gx

    def _back_bn(self, tape, g, grads):
        _, name, cache = tape.pop()
        gx, grads[name + ".gamma"], grads[name + ".beta"] = nn.batchnorm_backward(g, cache)
        return gx

    @staticmethod
    def _back_act(tape, g):
        _, mask = tape.pop()
        g = nn.dropout_backward(g, mask)
        _, pre = tape.pop()
        return nn.relu_backward(pre, g)

    def predict(self, x, batch_size=32):
        """Infer-mode probabilities for an ``(N, 12, 4096)`` array."""
        x = np.asarray(x)
        out = np.empty((x.shape[0], self.config.n_classes), dtype=self.dtype)
        for start in range(0, x.shape[0], batch_size):
            z, _ = self.logits(x[start:start + batch_size], "infer")
            out[start:start + batch_size] = nn.sigmoid(z)
        return out


def build(config=None, rng_seed=0, dtype=np.float32):
    """Freshly initialised network: He-normal conv/dense weights, zero biases."""
    cfg = config or ArchitectureConfig()
    rng = np.random.default_rng(rng_seed)
    params, state = {}, {}
    k = cfg.kernel_length

    def conv(name, c_in, c_out, klen):
        params[name + ".w"] = nn.he_normal(rng, (c_out, c_in, klen), c_in * klen, dtype)
        params[name + ".b"] = np.zeros(c_out, dtype)

    def bn(name, ch):
        params[name + ".gamma"] = np.ones(ch, dtype)
        params[name + ".beta"] = np.zeros(ch, dtype)
        state[name + ".mean"] = np.zeros(ch, dtype)
        state[name + ".var"] = np.ones(ch, dtype)

    conv("stem.conv", cfg.n_leads, cfg.initial_filters, k)
    bn("stem.bn", cfg.initial_filters)
    c_prev = cfg.initial_filters
    for i, c in enumerate(cfg.block_filters()):
        p = f"block{i}"
        if c != c_prev:
            conv(p + ".skip", c_prev, c, 1)
        conv(p + ".conv1", c_prev, c, k)
        bn(p + ".bn1", c)
        conv(p + ".conv2", c, c, k)
        bn(p + ".bn2", c)
        c_prev = c
    n_feat = cfg.n_features()
    params["dense.w"] = nn.he_normal(rng, (n_feat, cfg.n_classes), n_feat, dtype)
    params["dense.b"] = np.zeros(cfg.n_classes, dtype)
    return Model(cfg, params, state, meta={"rng_seed": rng_seed})


def forward(model, batch, mode="infer", rng=None):
    z, _ = model.logits(batch, mode, rng)
    return nn.sigmoid(z)


def save(model, path):
    arrays = [("param", k, v) for k, v in model.params.items()]
    arrays += [("state", k, v) for k, v in model.state.items()]
    manifest, offset = [], 0
    for kind, name, arr in arrays:
        manifest.append({"kind": kind, "name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "thresholds": [float(t) for t in model.thresholds],
        "meta": model.meta,
        "arrays": manifest,
        "n_values": offset,
    }
    hbytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8")
    blob = np.concatenate([a.astype("<f4").ravel() for _, _, a in arrays]) if arrays else b""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(np.asarray(blob, dtype="<f4").tobytes())


def load(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise CorruptCheckpoint(f"{path}: missing {MAGIC.decode()} magic")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: checkpoint version {header.get('version')!r}, "
                                 f"this build reads {FORMAT_VERSION}")
    blob = raw[12 + hlen:]
    if len(blob) != 4 * header["n_values"]:
        raise CorruptCheckpoint(f"{path}: expected {4 * header['n_values']} data bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4").astype(np.float32)
    params, state = {}, {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        arr = values[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
        (params if entry["kind"] == "param" else state)[entry["name"]] = arr
    return Model(ArchitectureConfig(**header["config"]), params, state,
                 np.asarray(header["thresholds"], dtype=np.float64), header["meta"])
