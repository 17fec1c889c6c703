"""
Adversarial Go Lab - Policy/Value Networks
Convolutional and vision-transformer backbones sharing one set of output heads
"""

import copy
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
import structlog
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange
from pydantic import BaseModel, ConfigDict, model_validator

from api.services.features import NUM_GLOBALS, NUM_PLANES
from utils.config import DeskConfig, PublishedConstants
from utils.errors import CorruptCheckpoint, NonFiniteLoss, ShapeMismatch, StorageError, VersionMismatch

logger = structlog.get_logger(__name__)

CHECKPOINT_MAGIC = b"GLNP"
CHECKPOINT_VERSION = 1

ArrayLike = Union[np.ndarray, torch.Tensor]


class NetworkConfig(BaseModel):
    """Architecture descriptor; tensor shapes depend on nothing else"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    backbone: Literal["cnn", "vit"] = "cnn"
    blocks: int = 4
    channels: int = 32  # CNN width or ViT embedding size
    patch_size: int = 2
    heads: int = 4
    mlp_dim: int = 256
    input_planes: int = NUM_PLANES
    input_globals: int = NUM_GLOBALS
    max_board: int = 19
    value_hidden: int = 32

    @model_validator(mode="after")
    def _check(self):
        if self.blocks < 1 or self.channels < 1:
            raise ValueError("blocks and channels must be positive")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.backbone == "vit":
            if self.channels % self.heads != 0:
                raise ValueError("embedding size must be divisible by heads")
            if self.mlp_dim < self.channels:
                raise ValueError("mlp_dim must be >= embedding size")
        return self

    @classmethod
    def preset(cls, name: str) -> "NetworkConfig":
        presets = {
            "desk-cnn": dict(backbone="cnn", blocks=4, channels=32),
            "desk-vit": dict(backbone="vit", blocks=4, channels=64, heads=4, patch_size=2, mlp_dim=256),
            "b6c96": dict(backbone="cnn", blocks=6, channels=96),
            "b10c128": dict(backbone="cnn", blocks=10, channels=128),
            "b18c384": dict(backbone="cnn", blocks=18, channels=384),
        }
        for layers in (4, 8, 16):
            presets[f"vit-b{layers}"] = dict(
                backbone="vit", blocks=layers, channels=PublishedConstants.VIT_EMBED,
                heads=PublishedConstants.VIT_HEADS, patch_size=PublishedConstants.VIT_PATCH_SIZE,
                mlp_dim=PublishedConstants.VIT_MLP,
            )
        if name not in presets:
            raise ValueError(f"unknown network preset {name!r}")
        return cls(**presets[name])


# Modules --------------------------------------------------------------------

class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.scale1 = nn.Parameter(torch.ones(channels))
        self.scale2 = nn.Parameter(torch.ones(channels))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = F.mish(self.conv1(x) * self.scale1[:, None, None]) * mask
        h = self.conv2(h) * self.scale2[:, None, None]
        return F.mish(x + h) * mask


class ConvBackbone(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        c = config.channels
        self.stem = nn.Conv2d(config.input_planes, c, 3, padding=1)
        self.global_proj = nn.Linear(config.input_globals, c)
        self.blocks = nn.ModuleList([ResidualBlock(c) for _ in range(config.blocks)])

    def forward(self, planes: torch.Tensor, globals_: torch.Tensor) -> torch.Tensor:
        mask = planes[:, :1]
        x = self.stem(planes) + self.global_proj(globals_)[:, :, None, None]
        x = F.mish(x) * mask
        for block in self.blocks:
            x = block(x, mask)
        return x


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.norm = nn.LayerNorm(dim)
        self.to_qkv = nn.Linear(dim, dim * 3, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm(x)
        q, k, v = (rearrange(t, "b n (h d) -> b h n d", h=self.heads) for t in self.to_qkv(x).chunk(3, dim=-1))
        attn = torch.softmax(torch.matmul(q, k.transpose(-1, -2)) * self.scale, dim=-1)
        out = rearrange(torch.matmul(attn, v), "b h n d -> b n (h d)")
        return self.to_out(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(self.norm(x))))


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.attn = Attention(dim, heads)
        self.mlp = FeedForward(dim, mlp_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(x)
        return x + self.mlp(x)


class VitBackbone(nn.Module):
    """Zero-pad, broadcast globals, patchify, transformer, unembed to the board"""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        p = config.patch_size
        c = config.channels
        self.patch_size = p
        self.channels = c
        in_channels = config.input_planes + config.input_globals
        self.patch_embed = nn.Linear(p * p * in_channels, c)
        side = math.ceil(config.max_board / p)
        self.position = nn.Parameter(torch.randn(side, side, c) * 0.02)
        self.blocks = nn.ModuleList([TransformerBlock(c, config.heads, config.mlp_dim) for _ in range(config.blocks)])
        self.norm = nn.LayerNorm(c)
        self.unembed = nn.Linear(c, p * p * c)

    def forward(self, planes: torch.Tensor, globals_: torch.Tensor) -> torch.Tensor:
        batch, _, height, width = planes.shape
        p = self.patch_size
        hp, wp = math.ceil(height / p), math.ceil(width / p)
        padded = F.pad(planes, (0, wp * p - width, 0, hp * p - height))
        spread = globals_[:, :, None, None].expand(batch, globals_.shape[1], hp * p, wp * p)
        x = torch.cat([padded, spread], dim=1)
        tokens = rearrange(x, "b c (h p1) (w p2) -> b (h w) (p1 p2 c)", p1=p, p2=p)
        tokens = self.patch_embed(tokens) + self.position[:hp, :wp].reshape(hp * wp, -1)
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.unembed(self.norm(tokens))
        grid = rearrange(tokens, "b (h w) (p1 p2 c) -> b c (h p1) (w p2)", h=hp, w=wp, p1=p, p2=p)
        return grid[:, :, :height, :width] * planes[:, :1]


class OutputHeads(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        c = config.channels
        self.policy_conv = nn.Conv2d(c, 1, 1)
        self.pass_fc = nn.Linear(c, 1)
        self.value_fc1 = nn.Linear(c, config.value_hidden)
        self.value_fc2 = nn.Linear(config.value_hidden, 1)

    def zero_(self):
        for layer in (self.policy_conv, self.pass_fc, self.value_fc2):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, trunk: torch.Tensor, mask: torch.Tensor):
        pooled = (trunk * mask).sum(dim=(2, 3)) / mask.sum(dim=(2, 3)).clamp(min=1.0)
        plays = self.policy_conv(trunk).flatten(1)
        logits = torch.cat([plays, self.pass_fc(pooled)], dim=1)
        value = torch.tanh(self.value_fc2(F.mish(self.value_fc1(pooled)))).squeeze(1)
        return logits, value


class PolicyValueNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.backbone = ConvBackbone(config) if config.backbone == "cnn" else VitBackbone(config)
        self.heads = OutputHeads(config)

    def forward(self, planes: torch.Tensor, globals_: torch.Tensor):
        trunk = self.backbone(planes, globals_)
        return self.heads(trunk, planes[:, :1])


# Parameters -----------------------------------------------------------------

class NetworkParameters:
    """Named tensors of one network plus its config and training-step count"""

    def __init__(self, config: NetworkConfig, model: PolicyValueNet, step_count: int = 0):
        self.config = config
        self.model = model
        self.step_count = step_count
        self.momentum: Dict[str, torch.Tensor] = {}

    @property
    def tensors(self) -> Dict[str, torch.Tensor]:
        return dict(self.model.named_parameters())

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype

    def clone(self) -> "NetworkParameters":
        cloned = NetworkParameters(self.config, copy.deepcopy(self.model), self.step_count)
        cloned.momentum = {k: v.clone() for k, v in self.momentum.items()}
        return cloned

    def to_dtype(self, dtype: torch.dtype) -> "NetworkParameters":
        cloned = self.clone()
        cloned.model.to(dtype)
        cloned.momentum = {k: v.to(dtype) for k, v in cloned.momentum.items()}
        return cloned

    def fingerprint(self) -> int:
        """CRC of the raw float bytes, used to check frozen networks stay untouched"""
        crc = 0
        for name, tensor in sorted(self.tensors.items()):
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(tensor.detach().cpu().numpy().tobytes(), crc)
        return crc


def create_network(config: NetworkConfig, seed: int = 0, zero_heads: bool = False) -> NetworkParameters:
    """Fresh float32 network initialised from `seed` without touching global RNG state"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = PolicyValueNet(config)
    if zero_heads:
        model.heads.zero_()
    model.eval()
    return NetworkParameters(config, model)


def count_parameters(config: NetworkConfig) -> int:
    return sum(p.numel() for p in PolicyValueNet(config).parameters())


def symmetrize_cnn_weights(params: NetworkParameters) -> NetworkParameters:
    """Make every 3x3 kernel invariant under the eight board symmetries"""
    if params.config.backbone != "cnn":
        raise ShapeMismatch("only CNN kernels can be symmetrized")
    with torch.no_grad():
        for module in params.model.modules():
            if isinstance(module, nn.Conv2d) and module.kernel_size == (3, 3):
                w = module.weight
                variants = []
                for k in range(4):
                    rotated = torch.rot90(w, k, dims=(2, 3))
                    variants.append(rotated)
                    variants.append(rotated.transpose(2, 3))
                module.weight.copy_(torch.stack(variants).mean(dim=0))
    return params


# Forward and loss -----------------------------------------------------------

@dataclass
class NetworkOutput:
    policy_logits: torch.Tensor  # (B, area + 1)
    value: torch.Tensor  # (B,)

    def policy(self) -> torch.Tensor:
        return torch.softmax(self.policy_logits, dim=-1)


def _as_tensor(x: ArrayLike, dtype: torch.dtype) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def forward(params: NetworkParameters, planes: ArrayLike, globals_: ArrayLike) -> NetworkOutput:
    """Policy logits and tanh value for a batch (or a single unbatched position)"""
    dtype = params.dtype
    planes_t = _as_tensor(planes, dtype)
    globals_t = _as_tensor(globals_, dtype)
    if planes_t.dim() == 3:
        planes_t = planes_t.unsqueeze(0)
        globals_t = globals_t.unsqueeze(0)
    config = params.config
    if planes_t.dim() != 4 or planes_t.shape[1] != config.input_planes:
        raise ShapeMismatch(f"expected {config.input_planes} planes, got shape {tuple(planes_t.shape)}")
    if globals_t.shape != (planes_t.shape[0], config.input_globals):
        raise ShapeMismatch(f"expected {config.input_globals} globals, got shape {tuple(globals_t.shape)}")
    if planes_t.shape[2] > config.max_board or planes_t.shape[3] > config.max_board:
        raise ShapeMismatch(f"board {planes_t.shape[2]}x{planes_t.shape[3]} exceeds max_board {config.max_board}")
    logits, value = params.model(planes_t, globals_t)
    return NetworkOutput(logits, value)


def vit_backbone(params: NetworkParameters, planes: ArrayLike, globals_: ArrayLike) -> torch.Tensor:
    """Embedding grid of shape (B, height, width, c) from the transformer backbone"""
    if params.config.backbone != "vit":
        raise ShapeMismatch("network does not have a ViT backbone")
    dtype = params.dtype
    planes_t = _as_tensor(planes, dtype)
    globals_t = _as_tensor(globals_, dtype)
    if planes_t.dim() == 3:
        planes_t, globals_t = planes_t.unsqueeze(0), globals_t.unsqueeze(0)
    grid = params.model.backbone(planes_t, globals_t)
    return grid.permute(0, 2, 3, 1)


def per_row_loss(output: NetworkOutput,
                 policy_targets: torch.Tensor,
                 value_targets: torch.Tensor,
                 value_weight: float = DeskConfig.VALUE_LOSS_WEIGHT) -> torch.Tensor:
    policy_term = -(policy_targets * torch.log_softmax(output.policy_logits, dim=-1)).sum(dim=-1)
    value_term = (output.value - value_targets) ** 2
    return policy_term + value_weight * value_term


def loss(output: NetworkOutput,
         policy_targets: ArrayLike,
         value_targets: ArrayLike,
         weights: Optional[ArrayLike] = None,
         value_weight: float = DeskConfig.VALUE_LOSS_WEIGHT) -> torch.Tensor:
    """Weighted mean of cross-entropy plus value_weight * squared value error"""
    dtype = output.policy_logits.dtype
    rows = per_row_loss(output, _as_tensor(policy_targets, dtype), _as_tensor(value_targets, dtype), value_weight)
    if weights is None:
        return rows.mean()
    return (rows * _as_tensor(weights, dtype)).sum() / rows.shape[0]


# Training -------------------------------------------------------------------

@dataclass
class BatchGroup:
    """Rows of one board size"""

    planes: np.ndarray
    globals_: np.ndarray
    policy_targets: np.ndarray
    value_targets: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.planes.shape[0]


@dataclass
class TrainingBatch:
    groups: List[BatchGroup] = field(default_factory=list)

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups)

    @classmethod
    def from_arrays(cls, planes, globals_, policy_targets, value_targets, weights=None) -> "TrainingBatch":
        planes = np.asarray(planes)
        weights = np.ones(planes.shape[0], dtype=np.float32) if weights is None else np.asarray(weights)
        return cls([BatchGroup(planes, np.asarray(globals_), np.asarray(policy_targets),
                               np.asarray(value_targets), weights)])

    def duplicated(self) -> "TrainingBatch":
        return TrainingBatch([BatchGroup(*(np.concatenate([a, a]) for a in (
            g.planes, g.globals_, g.policy_targets, g.value_targets, g.weights))) for g in self.groups])


def batch_loss(params: NetworkParameters, batch: TrainingBatch,
               value_weight: float = DeskConfig.VALUE_LOSS_WEIGHT) -> torch.Tensor:
    """Mean weighted loss over every row of every size group"""
    total = None
    dtype = params.dtype
    for group in batch.groups:
        output = forward(params, group.planes, group.globals_)
        rows = per_row_loss(output, _as_tensor(group.policy_targets, dtype),
                            _as_tensor(group.value_targets, dtype), value_weight)
        term = (rows * _as_tensor(group.weights, dtype)).sum()
        total = term if total is None else total + term
    return total / len(batch)


def gradients(params: NetworkParameters, batch: TrainingBatch,
              value_weight: float = DeskConfig.VALUE_LOSS_WEIGHT) -> Dict[str, torch.Tensor]:
    """Exact gradient of the mean batch loss for every named tensor"""
    if len(batch) == 0:
        raise ValueError("batch is empty")
    model = params.model
    model.zero_grad(set_to_none=True)
    with torch.enable_grad():
        value = batch_loss(params, batch, value_weight)
        if not torch.isfinite(value):
            raise NonFiniteLoss(f"loss is {value.item()}")
        value.backward()
    grads = {}
    for name, tensor in model.named_parameters():
        grads[name] = tensor.grad.detach().clone() if tensor.grad is not None else torch.zeros_like(tensor)
    model.zero_grad(set_to_none=True)
    return grads


def sgd_step(params: NetworkParameters, grads: Dict[str, torch.Tensor],
             lr: float, momentum: float = 0.9) -> NetworkParameters:
    """SGD with heavy-ball momentum; velocity lives on the parameters object"""
    with torch.no_grad():
        for name, tensor in params.model.named_parameters():
            if name not in grads or grads[name].shape != tensor.shape:
                raise ShapeMismatch(f"gradient for {name} missing or misshapen")
            velocity = params.momentum.get(name)
            velocity = grads[name].clone() if velocity is None else velocity.mul_(momentum).add_(grads[name])
            params.momentum[name] = velocity
            tensor.sub_(lr * velocity)
    params.step_count += 1
    return params


# Checkpoints ----------------------------------------------------------------
# Layout (little-endian): magic, u32 version, u32 config length, config JSON,
# u64 step count, u32 tensor count, then per tensor u16 name length, name,
# u8 ndim, u32 dims, float32 data; trailing u32 CRC32 of everything before.

def save_checkpoint(params: NetworkParameters, path: Union[str, Path]) -> Path:
    path = Path(path)
    config_bytes = json.dumps(params.config.model_dump(), sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(config_bytes)), config_bytes]
    named = list(params.model.named_parameters())
    chunks.append(struct.pack("<QI", params.step_count, len(named)))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        data = tensor.detach().cpu().numpy().astype("<f4")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    except OSError as e:
        logger.error("Failed to save checkpoint", path=str(path), error=str(e))
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e
    logger.debug("Saved checkpoint", path=str(path), step_count=params.step_count)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CorruptCheckpoint("checkpoint is truncated")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path], expected: Optional[NetworkConfig] = None) -> NetworkParameters:
    """Read a checkpoint; `expected` rejects files written for another architecture"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path} is not a checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    reader = _Reader(body)
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint(f"{path} failed its checksum")
    (config_len,) = reader.unpack("<I")
    try:
        config = NetworkConfig(**json.loads(reader.take(config_len).decode("utf-8")))
    except (ValueError, TypeError) as e:
        raise CorruptCheckpoint(f"bad config block: {e}") from e
    if expected is not None and expected != config:
        raise ShapeMismatch("checkpoint was written for a different network config")
    step_count, count = reader.unpack("<QI")
    params = create_network(config)
    named = dict(params.model.named_parameters())
    if count != len(named):
        raise ShapeMismatch(f"checkpoint holds {count} tensors, config needs {len(named)}")
    with torch.no_grad():
        for _ in range(count):
            (name_len,) = reader.unpack("<H")
            name = reader.take(name_len).decode("utf-8")
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(shape)
            if name not in named or tuple(named[name].shape) != tuple(shape):
                raise ShapeMismatch(f"tensor {name} does not fit the config")
            named[name].copy_(torch.from_numpy(data.astype(np.float32)))
    if reader.offset != len(body):
        raise CorruptCheckpoint("trailing bytes after tensors")
    params.step_count = step_count
    return params
