"""Three-channel convolutional VAE in numpy.

Encoder: conv(3->c1)+ReLU+maxpool, conv(c1->c2)+ReLU+maxpool, dense -> (mu, log_var).
Decoder: dense+ReLU, tconv(c2->c2)+ReLU+upsample, tconv(c2->c1)+ReLU+upsample,
tconv(c1->3) + sigmoid.

Params file (little-endian):
    b"EDVW", u32 version = 1,
    config block: u32 channels, height, width, latent_dim, c1, c2, epochs, batch_size;
                  u64 seed; f64 beta_kl, learning_rate,
    u32 array count, then per array in declaration order:
        u16 name length, utf-8 name, u8 ndim, u32 dims, f64 data (C order).
"""
from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import layers as L

MAGIC = b"EDVW"
VERSION = 1
PARAM_ORDER = ("enc1_W", "enc1_b", "enc2_W", "enc2_b", "enc_fc_W", "enc_fc_b",
               "dec_fc_W", "dec_fc_b", "dec1_W", "dec1_b", "dec2_W", "dec2_b", "dec3_W", "dec3_b")
LOGIT_CLIP = 30.0  # keeps decoded values strictly inside (0, 1) in double precision


class VaeTrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class VaeConfig:
    height: int
    width: int
    channels: int = 3
    latent_dim: int = 64
    beta_kl: float = 1.0
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    c1: int = 16
    c2: int = 32

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be >= 0")
        if self.height % 4 or self.width % 4:
            raise ValueError(f"resolution {self.height}x{self.width} must be divisible by 4")
        if min(self.height, self.width, self.channels, self.c1, self.c2, self.epochs, self.batch_size) < 1:
            raise ValueError("sizes must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def shape(self) -> tuple:
        return (self.channels, self.height, self.width)

    @property
    def flat(self) -> int:
        return self.c2 * (self.height // 4) * (self.width // 4)


def padded_size(n: int) -> int:
    return -(-n // 4) * 4


def pad_to(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Edge-pad the last two axes up to (h, w)."""
    ph, pw = h - x.shape[-2], w - x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad, mode="edge")


def param_shapes(cfg: VaeConfig) -> dict:
    C, c1, c2, z = cfg.channels, cfg.c1, cfg.c2, cfg.latent_dim
    return dict(enc1_W=(c1, C, 3, 3), enc1_b=(c1,), enc2_W=(c2, c1, 3, 3), enc2_b=(c2,),
                enc_fc_W=(cfg.flat, 2 * z), enc_fc_b=(2 * z,), dec_fc_W=(z, cfg.flat), dec_fc_b=(cfg.flat,),
                dec1_W=(c2, c2, 3, 3), dec1_b=(c2,), dec2_W=(c2, c1, 3, 3), dec2_b=(c1,),
                dec3_W=(c1, C, 3, 3), dec3_b=(C,))


def init_params(cfg: VaeConfig, rng: Optional[np.random.Generator] = None) -> dict:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    out = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_b"):
            out[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            fan_in = shape[1] * 9 if name.startswith("enc") else shape[0] * 9
        else:
            fan_in = shape[0]
        out[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return out


def zero_params(cfg: VaeConfig) -> dict:
    return {k: np.zeros(s) for k, s in param_shapes(cfg).items()}


def _batch(x: np.ndarray, cfg: VaeConfig) -> tuple:
    x = np.asarray(x, float)
    single = x.ndim == 3
    x = x[None] if single else x
    if x.shape[1:] != cfg.shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match config {cfg.shape}")
    return x, single


# --------------------------------------------------------------------------
# forward / backward

def _encode(p, x, cache=None):
    h1, c1 = L.conv_forward(x, p["enc1_W"], p["enc1_b"])
    a1 = L.relu_forward(h1)
    q1, i1 = L.maxpool_forward(a1)
    h2, c2 = L.conv_forward(q1, p["enc2_W"], p["enc2_b"])
    a2 = L.relu_forward(h2)
    q2, i2 = L.maxpool_forward(a2)
    f = q2.reshape(len(x), -1)
    out = f @ p["enc_fc_W"] + p["enc_fc_b"]
    z = out.shape[1] // 2
    if cache is not None:
        cache.update(c1=c1, h1=h1, i1=i1, c2=c2, h2=h2, i2=i2, q2_shape=q2.shape, f=f)
    return out[:, :z], out[:, z:]


def _decode_logits(p, z, cfg: VaeConfig, cache=None):
    g = z @ p["dec_fc_W"] + p["dec_fc_b"]
    a0 = L.relu_forward(g).reshape(len(z), cfg.c2, cfg.height // 4, cfg.width // 4)
    h1, c1 = L.tconv_forward(a0, p["dec1_W"], p["dec1_b"])
    u1 = L.upsample_forward(L.relu_forward(h1))
    h2, c2 = L.tconv_forward(u1, p["dec2_W"], p["dec2_b"])
    u2 = L.upsample_forward(L.relu_forward(h2))
    logits, c3 = L.tconv_forward(u2, p["dec3_W"], p["dec3_b"])
    if cache is not None:
        cache.update(z=z, g=g, d1=c1, dh1=h1, d2=c2, dh2=h2, d3=c3)
    return logits


def encode(params: dict, x: np.ndarray, cfg: VaeConfig):
    """(mu, log_var) for one raster (C, H, W) or a batch (N, C, H, W)."""
    xb, single = _batch(x, cfg)
    mu, lv = _encode(params, xb)
    return (mu[0], lv[0]) if single else (mu, lv)


def decode(params: dict, z: np.ndarray, cfg: VaeConfig) -> np.ndarray:
    """Rasters in (0, 1) for one latent vector or a batch of them."""
    z = np.asarray(z, float)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.shape[1] != cfg.latent_dim:
        raise ValueError(f"latent vector of size {zb.shape[1]}, config needs {cfg.latent_dim}")
    out = L.sigmoid(np.clip(_decode_logits(params, zb, cfg), -LOGIT_CLIP, LOGIT_CLIP))
    return out[0] if single else out


def kl_divergence(mu, lv) -> np.ndarray:
    """KL(N(mu, exp(lv)) || N(0, I)) per sample."""
    return -0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv), axis=-1)


def loss_and_grad(params: dict, x: np.ndarray, eps: np.ndarray, cfg: VaeConfig, beta: Optional[float] = None):
    """Batch-mean negative ELBO with a fixed reparameterization noise ``eps``.

    Returns (total, reconstruction, kl, grads)."""
    beta = cfg.beta_kl if beta is None else beta
    n = len(x)
    ec, dc = {}, {}
    mu, lv = _encode(params, x, ec)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    logits = _decode_logits(params, z, cfg, dc)
    # binary cross-entropy from logits, summed over pixels and channels
    rec = np.sum(L.softplus(logits) - x * logits) / n
    kl = float(np.mean(kl_divergence(mu, lv)))
    g = {}

    dlog = (L.sigmoid(logits) - x) / n
    du2, g["dec3_W"], g["dec3_b"] = L.tconv_backward(dlog, dc["d3"], params["dec3_W"])
    dh2 = L.relu_backward(L.upsample_backward(du2), dc["dh2"])
    du1, g["dec2_W"], g["dec2_b"] = L.tconv_backward(dh2, dc["d2"], params["dec2_W"])
    dh1 = L.relu_backward(L.upsample_backward(du1), dc["dh1"])
    da0, g["dec1_W"], g["dec1_b"] = L.tconv_backward(dh1, dc["d1"], params["dec1_W"])
    dg = L.relu_backward(da0.reshape(n, -1), dc["g"])
    g["dec_fc_W"] = z.T @ dg
    g["dec_fc_b"] = dg.sum(axis=0)
    dz = dg @ params["dec_fc_W"].T

    dmu = dz + beta * mu / n
    dlv = dz * eps * 0.5 * std + beta * 0.5 * (np.exp(lv) - 1.0) / n
    dout = np.concatenate([dmu, dlv], axis=1)
    g["enc_fc_W"] = ec["f"].T @ dout
    g["enc_fc_b"] = dout.sum(axis=0)
    dq2 = (dout @ params["enc_fc_W"].T).reshape(ec["q2_shape"])
    dh2e = L.relu_backward(L.maxpool_backward(dq2, ec["i2"]), ec["h2"])
    dq1, g["enc2_W"], g["enc2_b"] = L.conv_backward(dh2e, ec["c2"], params["enc2_W"])
    dh1e = L.relu_backward(L.maxpool_backward(dq1, ec["i1"]), ec["h1"])
    _, g["enc1_W"], g["enc1_b"] = L.conv_backward(dh1e, ec["c1"], params["enc1_W"], need_dx=False)
    return float(rec + beta * kl), float(rec), kl, g


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainReport:
    loss: tuple
    reconstruction: tuple
    kl: tuple
    checksum: str

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "reconstruction", "kl"])
            for k, row in enumerate(zip(self.loss, self.reconstruction, self.kl)):
                w.writerow([k, *map(repr, row)])
            w.writerow(["checksum", self.checksum, "", ""])


class Adam:
    def __init__(self, params: dict, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in PARAM_ORDER:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def params_checksum(params: dict) -> str:
    h = hashlib.sha256()
    for k in PARAM_ORDER:
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()


def train_vae(cfg: VaeConfig, data: np.ndarray, params: Optional[dict] = None):
    """Minimize the negative ELBO with Adam; fully determined by cfg.seed and the data."""
    x = np.asarray(data, float)
    if x.ndim != 4 or len(x) == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) array")
    if x.shape[1:] != cfg.shape:
        raise ValueError(f"dataset rasters {x.shape[1:]} do not match config {cfg.shape}")
    rng = np.random.default_rng(cfg.seed)
    p = init_params(cfg, rng) if params is None else {k: np.array(v, float) for k, v in params.items()}
    opt = Adam(p, cfg.learning_rate)
    hist = ([], [], [])
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        tot = rec = kl = 0.0
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            eps = rng.standard_normal((len(idx), cfg.latent_dim))
            l, r, k, g = loss_and_grad(p, x[idx], eps, cfg)
            if not np.isfinite(l):
                raise VaeTrainingError(f"non-finite loss at epoch {epoch}")
            opt.step(p, g)
            w = len(idx) / len(x)
            tot, rec, kl = tot + w * l, rec + w * r, kl + w * k
        for h, v in zip(hist, (tot, rec, kl)):
            h.append(v)
    return p, TrainReport(*map(tuple, hist), params_checksum(p))


# --------------------------------------------------------------------------
# params file

def save_params(path, params: dict, cfg: VaeConfig) -> None:
    out = [MAGIC, struct.pack("<I", VERSION),
           struct.pack("<8I", cfg.channels, cfg.height, cfg.width, cfg.latent_dim, cfg.c1, cfg.c2,
                       cfg.epochs, cfg.batch_size),
           struct.pack("<Q", cfg.seed), struct.pack("<2d", cfg.beta_kl, cfg.learning_rate),
           struct.pack("<I", len(PARAM_ORDER))]
    for k in PARAM_ORDER:
        a = np.ascontiguousarray(params[k], dtype="<f8")
        name = k.encode()
        out += [struct.pack("<H", len(name)), name, struct.pack("<B", a.ndim),
                struct.pack(f"<{a.ndim}I", *a.shape), a.tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_params(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not an EDVW params file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported params version {version}")
    C, H, W, z, c1, c2, epochs, batch = struct.unpack_from("<8I", data, 8)
    (seed,) = struct.unpack_from("<Q", data, 40)
    beta, lr = struct.unpack_from("<2d", data, 48)
    (count,) = struct.unpack_from("<I", data, 64)
    cfg = VaeConfig(height=H, width=W, channels=C, latent_dim=z, beta_kl=beta, epochs=epochs,
                    batch_size=batch, learning_rate=lr, seed=seed, c1=c1, c2=c2)
    pos, params = 68, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        name = data[pos + 2:pos + 2 + n].decode()
        pos += 2 + n
        (nd,) = struct.unpack_from("<B", data, pos)
        shape = struct.unpack_from(f"<{nd}I", data, pos + 1)
        pos += 1 + 4 * nd
        size = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(data[pos:pos + size], dtype="<f8").reshape(shape).astype(float)
        pos += size
    return params, cfg
