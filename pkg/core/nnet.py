"""Half-channel ResNet-34 embedding network (forward pass only).

Layer layout, input (1, D, L) with D the feature dimension and L the number
of frames:

    Conv1   3x3x32   stride 1   ->  32 x D   x L
    Res1    3x3x32   stride 1   ->  32 x D   x L        3 blocks
    Res2    3x3x64   stride 2   ->  64 x D/2 x ceil(L/2)  4 blocks
    Res3    3x3x128  stride 2   -> 128 x D/4 x ceil(L/4)  6 blocks
    Res4    3x3x256  stride 2   -> 256 x D/8 x ceil(L/8)  3 blocks
    Pool                        -> 2 x C x F = 64 D (same for Res2, Res3, Res4)
    Linear                      -> M

Strides apply to both axes, so the time axis shrinks with every strided
stage. Pooled widths do not depend on L.

H2 and H3 networks pool Res4 + Res3 (+ Res2) with one head per stage,
project each to M and combine them with a per-dimension softmax over stages.
"""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, List, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.config import NetworkConfig
from core.dsp import FeatureMatrix
from core.errors import InputError
from core.storage import atomic_write

logger = logging.getLogger(__name__)

MIN_FRAMES = 8
WEIGHTS_MAGIC = b"HRN34WT1"
_POOLING_CODES = {"SP": 0, "ASP": 1}
# Stage taps for the aggregator, deepest first: Res4, Res3, Res2.
_AGGREGATE_TAPS = (4, 3, 2)


def stats_pool(x: torch.Tensor) -> torch.Tensor:
    """Mean and population std over time for every (channel, freq) cell.

    x: (..., C, F, L) -> (..., 2*C*F), means first, channel-major.
    """
    mean = x.mean(dim=-1)
    std = x.var(dim=-1, unbiased=False).sqrt()
    return torch.cat([mean.flatten(-2), std.flatten(-2)], dim=-1)


def weighted_stats(x: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted mean and sqrt(sum w x^2 - (sum w x)^2) with weights over time.

    x: (B, C, F, L), weights: (B, L) summing to one along L.
    """
    w = weights[:, None, None, :]
    mean = torch.sum(w * x, dim=-1)
    second = torch.sum(w * x * x, dim=-1)
    std = torch.sqrt(torch.clamp(second - mean * mean, min=0.0))
    return torch.cat([mean.flatten(1), std.flatten(1)], dim=-1)


class StatsPool(nn.Module):
    """Statistics pooling (SP)."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return stats_pool(x)


class AttentiveStatsPool(nn.Module):
    """Attentive statistics pooling (ASP).

    The attention branch sees the frequency-averaged activations (C values per
    frame) and emits one scalar score per frame; a softmax over time turns the
    scores into pooling weights.
    """

    def __init__(self, in_channels: int, hidden: int = 128):
        super().__init__()
        self.linear1 = nn.Conv1d(in_channels, hidden, kernel_size=1)
        self.linear2 = nn.Conv1d(hidden, 1, kernel_size=1)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, F, L) -> (B, L) weights summing to one over time."""
        summary = x.mean(dim=2)
        scores = self.linear2(torch.tanh(self.linear1(summary))).squeeze(1)
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return weighted_stats(x, self.attention(x))


def attentive_stats_pool(x: torch.Tensor, attn: AttentiveStatsPool) -> torch.Tensor:
    """Functional form of ASP for a (C, F, L) or (B, C, F, L) tensor."""
    batched = x.dim() == 4
    out = attn(x if batched else x.unsqueeze(0))
    return out if batched else out.squeeze(0)


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with a residual connection."""

    def __init__(self, in_planes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, kernel_size=3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_planes, planes, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class HalfResNet34(nn.Module):
    """Trunk: Conv1 followed by four residual stages."""

    def __init__(self, channels: Sequence[int], blocks: Sequence[int]):
        super().__init__()
        self.conv1 = nn.Conv2d(1, channels[0], kernel_size=3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels[0])
        in_planes = channels[0]
        stages = []
        for index, (planes, count) in enumerate(zip(channels, blocks)):
            stride = 1 if index == 0 else 2
            layers = []
            for block in range(count):
                layers.append(BasicBlock(in_planes, planes, stride if block == 0 else 1))
                in_planes = planes
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        """(B, 1, D, L) -> [Conv1, Res1, Res2, Res3, Res4] activations."""
        out = F.relu(self.bn1(self.conv1(x)))
        outputs = [out]
        for stage in self.stages:
            out = stage(out)
            outputs.append(out)
        return outputs


class SpeakerNet(nn.Module):
    """Trunk, pooling head(s), linear projection(s) and the optional aggregator."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = HalfResNet34(cfg.channels, cfg.blocks_per_stage)
        self.taps = _AGGREGATE_TAPS[:cfg.aggregate_stages]
        heads = []
        for tap in self.taps:
            if cfg.pooling == "ASP":
                heads.append(AttentiveStatsPool(cfg.channels[tap - 1], cfg.asp_hidden))
            else:
                heads.append(StatsPool())
        self.heads = nn.ModuleList(heads)
        self.projections = nn.ModuleList(nn.Linear(pooled_width(cfg), cfg.embed_dim) for _ in self.taps)
        if cfg.aggregate_stages > 1:
            self.agg_weights = nn.Parameter(torch.zeros(cfg.aggregate_stages, cfg.embed_dim))
        else:
            self.register_parameter("agg_weights", None)

    def stage_embeddings(self, x: torch.Tensor) -> List[torch.Tensor]:
        """Per-tap embeddings (each (B, M)), deepest stage first."""
        outputs = self.trunk(x)
        return [proj(head(outputs[tap])) for tap, head, proj in zip(self.taps, self.heads, self.projections)]

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """(B, L, D) features -> (B, M) embeddings."""
        embs = self.stage_embeddings(_to_trunk_input(feats, self.cfg.feat_dim))
        if self.agg_weights is None:
            return embs[0]
        return aggregate_embeddings(embs, self.agg_weights)


def pooled_width(cfg: NetworkConfig) -> int:
    """Flattened pooling output width: 2 * C * F = 64 D for every tapped stage."""
    return 2 * cfg.channels[-1] * (cfg.feat_dim // 8)


def stage_shapes(cfg: NetworkConfig, n_frames: int) -> List[tuple]:
    """Expected (C, F, L) after Conv1, Res1, Res2, Res3 and Res4."""
    shapes = [(cfg.channels[0], cfg.feat_dim, n_frames)]
    freq, time = cfg.feat_dim, n_frames
    for index, planes in enumerate(cfg.channels):
        if index > 0:
            freq, time = (freq + 1) // 2, (time + 1) // 2
        shapes.append((planes, freq, time))
    return shapes


def aggregate_embeddings(embs: Sequence[torch.Tensor], agg_weights: torch.Tensor) -> torch.Tensor:
    """out[d] = sum_k softmax_k(w[k, d]) * emb_k[d]."""
    if len(embs) == 0:
        raise InputError("aggregation needs at least one embedding")
    dims = {tuple(e.shape[-1:]) for e in embs}
    if len(dims) != 1 or agg_weights.shape != (len(embs), embs[0].shape[-1]):
        raise InputError(
            f"cannot aggregate embeddings of widths {sorted(d[0] for d in dims)} "
            f"with weights of shape {tuple(agg_weights.shape)}"
        )
    stacked = torch.stack(list(embs), dim=0)
    mix = torch.softmax(agg_weights, dim=0)
    if stacked.dim() == 3:
        mix = mix[:, None, :]
    return torch.sum(mix * stacked, dim=0)


def build_network(cfg: NetworkConfig, init_seed: int, dtype: torch.dtype = torch.float64) -> SpeakerNet:
    """Construct the network with deterministic He-uniform (fan-in) weights.

    Norm layers start at scale 1 and shift 0 with unit running statistics and
    are used in inference mode. Weights are rounded to float32 precision so the
    binary weight container round-trips bit-exactly.
    """
    net = SpeakerNet(cfg)
    generator = torch.Generator().manual_seed(int(init_seed) % (2 ** 63))
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name.endswith("agg_weights") or param.dim() == 1:
                continue
            fan_in = param[0].numel()
            bound = float(np.sqrt(6.0 / fan_in))
            param.copy_(torch.empty(param.shape, dtype=torch.float64).uniform_(-bound, bound, generator=generator))
        for module in net.modules():
            if isinstance(module, (nn.Conv1d, nn.Conv2d, nn.Linear)) and module.bias is not None:
                module.bias.zero_()
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.running_mean.zero_()
                module.running_var.fill_(1.0)
        for param in net.parameters():
            param.copy_(param.float().double())
    net = net.to(dtype)
    net.eval()
    logger.debug("built %s (D=%d) with %d parameters", cfg.system_name, cfg.feat_dim, count_parameters(net))
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def _to_trunk_input(feats: torch.Tensor, feat_dim: int) -> torch.Tensor:
    if feats.dim() == 2:
        feats = feats.unsqueeze(0)
    if feats.shape[-1] != feat_dim:
        raise InputError(f"expected {feat_dim} feature bins, got {feats.shape[-1]}")
    if feats.shape[1] < MIN_FRAMES:
        raise InputError(f"need at least {MIN_FRAMES} frames for three stride-2 stages, got {feats.shape[1]}")
    return feats.transpose(1, 2).unsqueeze(1)


def _as_tensor(feat: Union[FeatureMatrix, np.ndarray, torch.Tensor], net: nn.Module) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    if isinstance(feat, FeatureMatrix):
        feat = feat.values
    if isinstance(feat, np.ndarray):
        feat = torch.from_numpy(np.ascontiguousarray(feat))
    return feat.to(dtype)


def trunk_forward(net: SpeakerNet, feat: Union[FeatureMatrix, np.ndarray, torch.Tensor]) -> List[torch.Tensor]:
    """Activations after Conv1 and each residual stage, each shaped (C, F, L)."""
    x = _to_trunk_input(_as_tensor(feat, net), net.cfg.feat_dim)
    with torch.no_grad():
        return [out.squeeze(0) for out in net.trunk(x)]


def embed(net: SpeakerNet, feat: Union[FeatureMatrix, np.ndarray, torch.Tensor]) -> np.ndarray:
    """Embedding of one (L, D) feature matrix, or of a (B, L, D) batch."""
    x = _as_tensor(feat, net)
    batched = x.dim() == 3
    with torch.no_grad():
        out = net(x if batched else x.unsqueeze(0))
    out = out.to(torch.float64).numpy()
    return out if batched else out[0]


def save_weights(net: SpeakerNet, path: Union[str, Path]) -> None:
    """Write the binary weight container (float32 little-endian blobs)."""
    with atomic_write(path) as handle:
        write_weights(net, handle)


def write_weights(net: SpeakerNet, handle: BinaryIO) -> None:
    cfg = net.cfg
    blobs = _weight_blobs(net)
    handle.write(WEIGHTS_MAGIC)
    handle.write(struct.pack(
        "<IIIIII",
        cfg.feat_dim,
        cfg.embed_dim,
        _POOLING_CODES[cfg.pooling],
        cfg.aggregate_stages,
        cfg.asp_hidden,
        len(blobs),
    ))
    for name, tensor in blobs.items():
        encoded = name.encode("utf-8")
        array = tensor.detach().to(torch.float64).numpy().astype("<f4")
        handle.write(struct.pack("<H", len(encoded)))
        handle.write(encoded)
        handle.write(struct.pack("<B", array.ndim))
        handle.write(struct.pack(f"<{array.ndim}I", *array.shape))
        handle.write(array.tobytes())


def load_weights(path: Union[str, Path], dtype: torch.dtype = torch.float64) -> SpeakerNet:
    """Rebuild a network from its binary weight container."""
    try:
        with open(path, "rb") as handle:
            return read_weights(handle, dtype)
    except OSError as exc:
        raise InputError(f"cannot read network weights {path}: {exc}") from exc


def read_weights(handle: BinaryIO, dtype: torch.dtype = torch.float64) -> SpeakerNet:
    if handle.read(len(WEIGHTS_MAGIC)) != WEIGHTS_MAGIC:
        raise InputError("not a network weight file (bad magic)")
    feat_dim, embed_dim, pooling, stages, hidden, count = _unpack(handle, "<IIIIII")
    codes = {v: k for k, v in _POOLING_CODES.items()}
    if pooling not in codes:
        raise InputError(f"unknown pooling code {pooling} in weight file")
    cfg = NetworkConfig(
        feat_dim=feat_dim, embed_dim=embed_dim, pooling=codes[pooling],
        aggregate_stages=stages, asp_hidden=hidden,
    )
    net = SpeakerNet(cfg).to(torch.float64)
    expected = _weight_blobs(net)
    seen = set()
    with torch.no_grad():
        for _ in range(count):
            (name_len,) = _unpack(handle, "<H")
            name = handle.read(name_len).decode("utf-8")
            (rank,) = _unpack(handle, "<B")
            shape = _unpack(handle, f"<{rank}I") if rank else ()
            size = int(np.prod(shape)) if shape else 1
            raw = handle.read(4 * size)
            if len(raw) != 4 * size:
                raise InputError(f"weight file truncated inside {name!r}")
            if name not in expected or tuple(expected[name].shape) != tuple(shape):
                raise InputError(f"unexpected weight blob {name!r} with shape {tuple(shape)}")
            values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
            expected[name].copy_(torch.from_numpy(values))
            seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise InputError(f"weight file is missing {len(missing)} blobs, e.g. {sorted(missing)[0]!r}")
    net = net.to(dtype)
    net.eval()
    return net


def _weight_blobs(net: SpeakerNet) -> Dict[str, torch.Tensor]:
    return {
        name: tensor
        for name, tensor in net.state_dict(keep_vars=True).items()
        if not name.endswith("num_batches_tracked")
    }


def _unpack(handle: BinaryIO, fmt: str) -> tuple:
    size = struct.calcsize(fmt)
    raw = handle.read(size)
    if len(raw) != size:
        raise InputError("weight file truncated")
    return struct.unpack(fmt, raw)
