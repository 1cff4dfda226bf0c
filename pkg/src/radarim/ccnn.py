"""Complex-valued CNNs (CCNN-2D and the angle-equivariant CCNN-3D).

Activations are real torch tensors in *packed* layout ``[B, 2, C, *spatial]``
where index 0/1 of axis 1 holds the real/imaginary part.  A complex
convolution then becomes a single real convolution with the block weight
``[[W_re, -W_im], [W_im, W_re]]``.  Public helpers accept and return complex
numpy arrays ``[B, C, *spatial]``.

Layer ``l`` of a model is ``conv -> CReLU -> complex BN``; the last layer is a
bare convolution and the first layer has no batch normalisation.
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .tensor import DTYPE, read_crt1, write_crt1

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Architecture of a CCNN.

    ``channels`` lists the output channels of every layer.  ``padding`` gives
    ``"zero"`` or ``"circular"`` per spatial axis.  ``batch_norm`` switches the
    complex BN of the hidden layers (all but the first and the last).
    """
    variant: str
    channels: tuple[int, ...]
    kernel: tuple[int, ...]
    in_channels: int = 1
    padding: Optional[tuple[str, ...]] = None
    batch_norm: bool = True

    def __post_init__(self):
        if self.variant not in ("2d", "3d"):
            raise ValueError(f"unknown variant {self.variant!r}")
        rank = 3 if self.variant == "3d" else 2
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        pad = self.padding or ("zero",) * rank
        object.__setattr__(self, "padding", tuple(pad))
        if len(self.kernel) != rank or len(self.padding) != rank:
            raise ValueError(f"{self.variant} model needs {rank} kernel dims and padding modes")
        if any(k % 2 == 0 or k < 1 for k in self.kernel):
            raise ValueError("kernel dims must be odd")
        if any(p not in ("zero", "circular") for p in self.padding):
            raise ValueError(f"bad padding modes {self.padding}")
        if not self.channels or min(self.channels) < 1:
            raise ValueError("channels must be positive")
        if self.variant == "3d" and (self.channels[-1] != 1 or self.in_channels != 1):
            raise ValueError("3d models map one RDA channel to one RDA channel")
        if self.variant == "2d" and self.channels[-1] != self.in_channels:
            raise ValueError("2d models must output as many channels as antennas")

    @property
    def rank(self) -> int:
        return len(self.kernel)

    def bn_layers(self) -> list[bool]:
        n = len(self.channels)
        return [self.batch_norm and 0 < i < n - 1 for i in range(n)]

    def with_padding(self, axis: int, mode: str) -> "ModelSpec":
        pad = list(self.padding)
        pad[axis] = mode
        return dataclasses.replace(self, padding=tuple(pad))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["kernel"] = list(self.kernel)
        d["padding"] = list(self.padding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["variant"], tuple(d["channels"]), tuple(d["kernel"]), d.get("in_channels", 1),
                   tuple(d["padding"]) if d.get("padding") else None, d.get("batch_norm", True))


PRESETS = {
    "ccnn3d-l": (32, 16, 8, 4, 1),
    "ccnn3d-m": (16, 8, 4, 2, 1),
    "ccnn3d-s": (8, 4, 2, 1),
    "ccnn3d-xs": (4, 2, 1),
    "ccnn2d": (32, 16, 16),
}

# Table order of the reported mitigation methods
NN_METHODS = ("ccnn3d-l", "ccnn3d-m", "ccnn3d-s", "ccnn3d-xs", "ccnn2d")


def preset(name: str, n_antennas: int = 16, angle_padding: str = "zero") -> ModelSpec:
    """Named architectures.  The 2-D baseline carries no batch normalisation."""
    if name not in PRESETS:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(PRESETS)}")
    if name == "ccnn2d":
        channels = PRESETS[name][:-1] + (n_antennas,)
        return ModelSpec("2d", channels, (3, 3), in_channels=n_antennas, batch_norm=False)
    return ModelSpec("3d", PRESETS[name], (3, 3, 3), padding=("zero", "zero", angle_padding))


def param_count(spec: ModelSpec) -> int:
    """Number of real trainable parameters (running statistics excluded)."""
    taps = math.prod(spec.kernel)
    total = 0
    c_in = spec.in_channels
    for c_out, bn in zip(spec.channels, spec.bn_layers()):
        total += 2 * (c_out * c_in * taps + c_out)
        if bn:
            total += 5 * c_out
        c_in = c_out
    return total


# ----------------------------------------------------------------------------
# packing


def pack(x, dtype=torch.float32) -> torch.Tensor:
    """Complex ``[B, C, *S]`` -> packed real ``[B, 2, C, *S]``."""
    arr = np.asarray(x)
    return torch.from_numpy(np.stack([arr.real, arr.imag], axis=1)).to(dtype)


def unpack(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().numpy()
    return a[:, 0] + 1j * a[:, 1]


def _circular_pad(x: torch.Tensor, pads: Sequence[int], modes: Sequence[str]) -> torch.Tensor:
    """Wrap-pad the circular axes of a ``[B, C, *S]`` tensor; zero padding is left to the conv."""
    for i, (p, mode) in enumerate(zip(pads, modes)):
        if mode == "circular" and p:
            dim = 2 + i
            n = x.shape[dim]
            x = torch.cat([x.narrow(dim, n - p, p), x, x.narrow(dim, 0, p)], dim=dim)
    return x


# ----------------------------------------------------------------------------
# layers


class ComplexConv(nn.Module):
    """Same-size, stride-one complex cross-correlation with per-channel bias."""

    def __init__(self, c_in: int, c_out: int, kernel: Sequence[int], padding: Sequence[str]):
        super().__init__()
        self.kernel = tuple(kernel)
        self.padding = tuple(padding)
        self.weight = nn.Parameter(torch.zeros(2, c_out, c_in, *self.kernel))
        self.bias = nn.Parameter(torch.zeros(2, c_out))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        c_out, c_in = self.weight.shape[1:3]
        taps = math.prod(self.kernel)
        sigma = math.sqrt(1.0 / (c_in * taps + c_out * taps))
        shape = tuple(self.weight.shape[1:])
        mag = rng.rayleigh(sigma, size=shape)
        phase = rng.uniform(-np.pi, np.pi, size=shape)
        w = np.stack([mag * np.cos(phase), mag * np.sin(phase)])
        with torch.no_grad():
            self.weight.copy_(torch.from_numpy(w))
            self.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, c_in = x.shape[:3]
        c_out = self.weight.shape[1]
        pads = [(k - 1) // 2 for k in self.kernel]
        wr, wi = self.weight[0], self.weight[1]
        w = torch.cat([torch.cat([wr, -wi], dim=1), torch.cat([wi, wr], dim=1)], dim=0)
        if len(self.kernel) == 3:
            conv, fmt = F.conv3d, torch.channels_last_3d
        else:
            conv, fmt = F.conv2d, torch.channels_last
        # channels-last is several times faster for these narrow layers on CPU
        xx = x.reshape(b, 2 * c_in, *x.shape[3:]).contiguous(memory_format=fmt)
        xx = _circular_pad(xx, pads, self.padding)
        zero_pads = [0 if m == "circular" else p for p, m in zip(pads, self.padding)]
        y = conv(xx, w, self.bias.reshape(-1), padding=zero_pads)
        return y.reshape(b, 2, c_out, *y.shape[2:])


class CReLU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(x)


class ComplexBatchNorm(nn.Module):
    """Whitening batch norm over the (Re, Im) pair of each channel.

    ``gamma`` holds the symmetric scale ``(g_rr, g_ii, g_ri)``, ``beta`` the
    complex shift; running mean and covariance ``(V_rr, V_ii, V_ri)`` are
    tracked with momentum 0.1.
    """

    def __init__(self, channels: int):
        super().__init__()
        g = torch.zeros(3, channels)
        g[:2] = 1 / math.sqrt(2)
        self.gamma = nn.Parameter(g)
        self.beta = nn.Parameter(torch.zeros(2, channels))
        cov = torch.zeros(3, channels)
        cov[:2] = 0.5
        self.register_buffer("running_mean", torch.zeros(2, channels))
        self.register_buffer("running_cov", cov)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = x.shape[2]
        view = (1, 2, c) + (1,) * (x.dim() - 3)
        if self.training:
            dims = [0] + list(range(3, x.dim()))
            mean = x.mean(dim=dims)
            xc = x - mean.reshape(view)
            xr, xi = xc[:, 0], xc[:, 1]
            rdims = [0] + list(range(2, xr.dim()))
            v_rr = (xr * xr).mean(dim=rdims)
            v_ii = (xi * xi).mean(dim=rdims)
            v_ri = (xr * xi).mean(dim=rdims)
            with torch.no_grad():
                m = BN_MOMENTUM
                self.running_mean.mul_(1 - m).add_(m * mean)
                self.running_cov.mul_(1 - m).add_(m * torch.stack([v_rr, v_ii, v_ri]))
        else:
            xc = x - self.running_mean.reshape(view)
            v_rr, v_ii, v_ri = self.running_cov
        v_rr = v_rr + BN_EPS
        v_ii = v_ii + BN_EPS
        # closed-form inverse square root of [[v_rr, v_ri], [v_ri, v_ii]]
        s = torch.sqrt(v_rr * v_ii - v_ri * v_ri)
        t = torch.sqrt(v_rr + v_ii + 2 * s)
        inv = 1.0 / (s * t)
        w_rr, w_ii, w_ri = (v_ii + s) * inv, (v_rr + s) * inv, -v_ri * inv
        g_rr, g_ii, g_ri = self.gamma
        # fold scale and whitening into one 2x2 matrix per channel
        m_rr = g_rr * w_rr + g_ri * w_ri
        m_ri = g_rr * w_ri + g_ri * w_ii
        m_ir = g_ri * w_rr + g_ii * w_ri
        m_ii = g_ri * w_ri + g_ii * w_ii
        col_r = torch.stack([m_rr, m_ir]).reshape(view)
        col_i = torch.stack([m_ri, m_ii]).reshape(view)
        return col_r * xc[:, :1] + col_i * xc[:, 1:] + self.beta.reshape(view)


# Glorot scaling of the linear output layer.  Unit-variance hidden activations
# otherwise give outputs an order of magnitude above the clean targets, and the
# first optimiser steps kill every ReLU while shrinking them.
OUTPUT_INIT_GAIN = 0.05


class CCNN(nn.Module):
    def __init__(self, spec: ModelSpec, seed: int = 0, output_gain: float = OUTPUT_INIT_GAIN):
        super().__init__()
        self.spec = spec
        convs, norms = [], []
        c_in = spec.in_channels
        for c_out, bn in zip(spec.channels, spec.bn_layers()):
            convs.append(ComplexConv(c_in, c_out, spec.kernel, spec.padding))
            norms.append(ComplexBatchNorm(c_out) if bn else nn.Identity())
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.act = CReLU()
        rng = np.random.default_rng(seed)
        for conv in self.convs:
            conv.reset_parameters(rng)
        with torch.no_grad():
            self.convs[-1].weight.mul_(output_gain)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        expected = 2 + self.spec.rank + 1
        if x.dim() != expected or x.shape[1] != 2 or x.shape[2] != self.spec.in_channels:
            raise ValueError(
                f"expected packed input [B, 2, {self.spec.in_channels}, ...] of rank {expected}, "
                f"got {tuple(x.shape)}")
        last = len(self.convs) - 1
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            x = conv(x)
            if i < last:
                x = norm(self.act(x))
        return x

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build(spec: ModelSpec, seed: int = 0, output_gain: float = OUTPUT_INIT_GAIN) -> CCNN:
    return CCNN(spec, seed, output_gain)


# ----------------------------------------------------------------------------
# numpy-facing forward / backward


def cconv_forward(x, conv: ComplexConv) -> np.ndarray:
    """Apply a single complex convolution to complex ``[B, C, *S]`` data."""
    with torch.no_grad():
        return unpack(conv(pack(x, conv.weight.dtype)))


def crelu_forward(x) -> np.ndarray:
    arr = np.asarray(x)
    return np.maximum(arr.real, 0) + 1j * np.maximum(arr.imag, 0)


def cbn_forward(x, bn: ComplexBatchNorm, mode: str = "train") -> np.ndarray:
    bn.train(mode == "train")
    with torch.no_grad():
        return unpack(bn(pack(x, bn.gamma.dtype)))


def model_forward(model: CCNN, x, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    model.train(mode == "train")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return unpack(model(pack(x, dtype)))


@dataclasses.dataclass
class ForwardCache:
    model: CCNN
    inputs: torch.Tensor
    outputs: torch.Tensor


def forward_with_cache(model: CCNN, x, mode: str = "train") -> tuple[np.ndarray, ForwardCache]:
    model.train(mode == "train")
    dtype = next(model.parameters()).dtype
    inp = pack(x, dtype).requires_grad_(True)
    out = model(inp)
    return unpack(out), ForwardCache(model, inp, out)


def _is_complex_name(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in ("weight", "bias", "beta", "running_mean")


def model_backward(cache: Optional[ForwardCache], upstream) -> tuple[dict, np.ndarray]:
    """Reverse-mode gradients of a real loss given ``dL/dRe + j dL/dIm`` of the output.

    Returns ``(param_grads, input_grad)``; complex parameters get complex
    gradients in the same convention, real ones (BN scale) real gradients.
    """
    if cache is None:
        raise RuntimeError("model_backward needs the cache of a forward pass")
    model = cache.model
    names, params = zip(*model.named_parameters())
    g = pack(upstream, cache.outputs.dtype)
    if g.shape != cache.outputs.shape:
        raise ValueError(f"upstream gradient shape {tuple(g.shape)} != output {tuple(cache.outputs.shape)}")
    grads = torch.autograd.grad(cache.outputs, list(params) + [cache.inputs], g,
                                retain_graph=True, allow_unused=True)
    out = {}
    for name, p, gr in zip(names, params, grads[:-1]):
        a = np.zeros(tuple(p.shape)) if gr is None else gr.detach().cpu().numpy()
        out[name] = a[0] + 1j * a[1] if _is_complex_name(name) else a
    return out, unpack(grads[-1])


# ----------------------------------------------------------------------------
# CKP1 checkpoints

CKP_MAGIC = b"CKP1"


def state_tensors(model: CCNN, prefix: str = "") -> dict[str, np.ndarray]:
    """Model parameters and buffers as complex arrays (real ones with zero imaginary part)."""
    out = {}
    for name, t in model.state_dict().items():
        a = t.detach().cpu().numpy().astype(np.float32)
        out[prefix + name] = (a[0] + 1j * a[1]) if _is_complex_name(name) else a.astype(DTYPE)
    return out


def load_state_tensors(model: CCNN, tensors: dict, prefix: str = "") -> None:
    state = {}
    for name, t in model.state_dict().items():
        a = np.asarray(tensors[prefix + name])
        real = np.stack([a.real, a.imag]) if _is_complex_name(name) else a.real
        state[name] = torch.from_numpy(np.ascontiguousarray(real)).to(t.dtype)
    model.load_state_dict(state)


def write_checkpoint(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(CKP_MAGIC)
    head = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        block = io.BytesIO()
        write_crt1(block, tensors[name])
        data = block.getvalue()
        buf.write(struct.pack("<Q", len(data)))
        buf.write(data)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fp:
        if fp.read(4) != CKP_MAGIC:
            raise ValueError(f"{path} is not a CKP1 checkpoint")
        (n,) = struct.unpack("<I", fp.read(4))
        header = json.loads(fp.read(n))
        (count,) = struct.unpack("<I", fp.read(4))
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", fp.read(2))
            name = fp.read(ln).decode()
            (size,) = struct.unpack("<Q", fp.read(8))
            tensors[name] = read_crt1(io.BytesIO(fp.read(size)))
    return header, tensors


def load_model(path) -> tuple[CCNN, dict]:
    header, tensors = read_checkpoint(path)
    model = CCNN(ModelSpec.from_dict(header["spec"]))
    load_state_tensors(model, tensors, "model.")
    model.eval()
    return model, header
