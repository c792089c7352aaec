"""Model zoo: four families mapping a normalized 30x30 patch to 5-class probabilities.

All families end in a softmax so their outputs live on the probability
simplex and can be scored directly against fractional labels. Widths and
depths are fixed; the trainable-parameter counts are pinned per family:

    cnn   60,549      four conv blocks (1-16-32-64-64) + linear head
    unet  1,861,957   two down / two up stages, widths 64-128-256
    vit   1,265,413   6 pre-norm encoder layers, dim 128, 4 heads, ff 512
    mdn   825,820     900-128 tanh trunk, 3-component Gaussian mixture heads

Checkpoints are a small binary container: magic, JSON manifest (family,
spec hash, seed, epoch, metrics, array index), then the named weight
arrays concatenated as little-endian float32.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import ndtr

from .errors import ConfigError, DataError, ParameterError

FAMILIES = ("cnn", "unet", "vit", "mdn")

PARAM_TARGETS = {"cnn": 60_549, "unet": 1_861_957, "vit": 1_265_413, "mdn": 825_820}
# Published parameter budgets in millions; realized counts must sit within 2 %.
PARAM_BUDGETS_M = {"cnn": 0.06, "unet": 1.86, "vit": 1.27, "mdn": 0.83}

_DEFAULT_DROPOUT = {"cnn": 0.3, "unet": 0.3, "vit": 0.1, "mdn": 0.0}

N_CLASSES = 5
INPUT_SIZE = 30


@dataclass(frozen=True)
class ModelSpec:
    family: str
    dropout: float
    output_classes: int = N_CLASSES


def model_spec(family: str, dropout: float | None = None) -> ModelSpec:
    """Spec for one of the four families; dropout defaults per family."""
    if family not in FAMILIES:
        raise ConfigError([f"unknown model family {family!r}; expected one of {list(FAMILIES)}"])
    if dropout is None:
        dropout = _DEFAULT_DROPOUT[family]
    if not 0.0 <= dropout < 1.0:
        raise ConfigError([f"dropout must lie in [0, 1), got {dropout}"])
    return ModelSpec(family=family, dropout=dropout)


def spec_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(json.dumps(asdict(spec), sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------


class CNNNet(nn.Module):
    """Four conv blocks with ReLU and dropout, max pooling after the first
    three, global average pooling, linear head."""

    def __init__(self, dropout: float = 0.3, classes: int = N_CLASSES):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.ReLU(), nn.Dropout(dropout), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.Dropout(dropout), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.Dropout(dropout), nn.MaxPool2d(2),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(), nn.Dropout(dropout),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(64, classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = self.pool(x).flatten(1)
        return torch.softmax(self.head(x), dim=1)


class _DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, dropout: float):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(), nn.Dropout(dropout),
            nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.ReLU(), nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class UNetNet(nn.Module):
    """Compact encoder-decoder classifier: two down- and two up-sampling
    stages with skip connections, a five-channel 1x1 head, global pooling."""

    def __init__(self, dropout: float = 0.3, classes: int = N_CLASSES):
        super().__init__()
        self.enc1 = _DoubleConv(1, 64, dropout)
        self.enc2 = _DoubleConv(64, 128, dropout)
        self.bottleneck = _DoubleConv(128, 256, dropout)
        self.up1 = nn.ConvTranspose2d(256, 128, 2, stride=2)
        self.dec1 = _DoubleConv(256, 128, dropout)
        self.up2 = nn.ConvTranspose2d(128, 64, 2, stride=2)
        self.dec2 = _DoubleConv(128, 64, dropout)
        self.out_conv = nn.Conv2d(64, classes, 1)
        self.pool = nn.MaxPool2d(2)
        self.gap = nn.AdaptiveAvgPool2d(1)

    @staticmethod
    def _match(up: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        # Odd input sizes floor under pooling; pad the upsampled map back
        # to the skip's spatial size before concatenation.
        dr = skip.shape[2] - up.shape[2]
        dc = skip.shape[3] - up.shape[3]
        if dr or dc:
            up = F.pad(up, (dc // 2, dc - dc // 2, dr // 2, dr - dr // 2))
        return up

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bottleneck(self.pool(e2))
        d1 = self.dec1(torch.cat([self._match(self.up1(b), e2), e2], dim=1))
        d2 = self.dec2(torch.cat([self._match(self.up2(d1), e1), e1], dim=1))
        logits = self.gap(self.out_conv(d2)).flatten(1)
        return torch.softmax(logits, dim=1)


class _Attention(nn.Module):
    """Multi-head self-attention with per-head query/key LayerNorm."""

    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.q_norm = nn.LayerNorm(self.head_dim)
        self.k_norm = nn.LayerNorm(self.head_dim)
        self.proj = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(dropout)
        self.proj_drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, t, d = x.shape
        qkv = self.qkv(x).reshape(n, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        q = self.q_norm(q)
        k = self.k_norm(k)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        attn = self.attn_drop(attn)
        out = (attn @ v).transpose(1, 2).reshape(n, t, d)
        return self.proj_drop(self.proj(out))


class _EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, ff_dim), nn.GELU(), nn.Dropout(dropout),
            nn.Linear(ff_dim, dim), nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ViTNet(nn.Module):
    """Compact ViT: 5x5 patches -> 36 tokens, dim 128, class token,
    learned positional table, 6 pre-norm layers, MLP head 128-256-128-5."""

    PATCH = 5
    DIM = 128
    HEADS = 4
    FF = 512
    LAYERS = 6

    def __init__(self, dropout: float = 0.1, classes: int = N_CLASSES):
        super().__init__()
        n_tokens = (INPUT_SIZE // self.PATCH) ** 2  # 36
        self.embed = nn.Linear(self.PATCH * self.PATCH, self.DIM)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, self.DIM))
        self.pos_table = nn.Parameter(torch.zeros(1, n_tokens + 1, self.DIM))
        self.embed_drop = nn.Dropout(dropout)
        self.blocks = nn.ModuleList(
            [_EncoderBlock(self.DIM, self.HEADS, self.FF, dropout) for _ in range(self.LAYERS)]
        )
        self.norm = nn.LayerNorm(self.DIM)
        self.head = nn.Sequential(
            nn.Linear(self.DIM, 256), nn.ReLU(),
            nn.Linear(256, self.DIM), nn.ReLU(),
            nn.Linear(self.DIM, classes),
        )

    def _tokenize(self, x: torch.Tensor) -> torch.Tensor:
        p = self.PATCH
        n = x.shape[0]
        x = x.unfold(2, p, p).unfold(3, p, p)  # (n, 1, 6, 6, 5, 5), row-major grid
        return x.reshape(n, 1, -1, p * p).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.embed(self._tokenize(x))
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        x = torch.cat([cls, tokens], dim=1) + self.pos_table
        x = self.embed_drop(x)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return torch.softmax(self.head(x[:, 0]), dim=1)


class MDNNet(nn.Module):
    """MDN-C1 classifier on flattened patches.

    A tanh trunk predicts a Gaussian mixture per input dimension (weights,
    means, softplus standard deviations). Each component's CDF is evaluated
    at every input dimension and the concatenated features feed a linear
    layer producing the class logits. The mixture weights complete the
    mixture parameterization; the classifier head consumes the unweighted
    per-component CDF features.
    """

    def __init__(
        self,
        in_features: int = INPUT_SIZE * INPUT_SIZE,
        hidden: int = 128,
        components: int = 3,
        classes: int = N_CLASSES,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.in_features = in_features
        self.components = components
        self.trunk = nn.Linear(in_features, hidden)
        self.drop = nn.Dropout(dropout)
        self.head_weights = nn.Linear(hidden, components)
        self.head_means = nn.Linear(hidden, components * in_features)
        self.head_stds = nn.Linear(hidden, components * in_features)
        self.head_logits = nn.Linear(components * in_features, classes)

    def mixture(self, flat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Mixture parameters (weights, means, stds) for a flat (N, D) batch."""
        h = self.drop(torch.tanh(self.trunk(flat)))
        n = flat.shape[0]
        weights = torch.softmax(self.head_weights(h), dim=1)
        means = self.head_means(h).reshape(n, self.components, self.in_features)
        # softplus keeps stds positive; the floor keeps CDF arguments finite
        # even if the raw head output underflows.
        stds = F.softplus(self.head_stds(h)).reshape(n, self.components, self.in_features) + 1e-6
        return weights, means, stds

    def cdf_features(self, flat: torch.Tensor) -> torch.Tensor:
        _, means, stds = self.mixture(flat)
        z = (flat.unsqueeze(1) - means) / stds
        phi = 0.5 * (1.0 + torch.erf(z / math.sqrt(2.0)))
        # erf saturates for extreme z; keep features inside the open unit
        # interval so extreme inputs never produce exact 0/1 features.
        info = torch.finfo(phi.dtype)
        phi = phi.clamp(min=info.tiny, max=1.0 - info.eps / 2)
        return phi.reshape(flat.shape[0], -1)  # component-major (k, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise DataError(
                f"mdn expects {self.in_features} input features, got {flat.shape[1]}"
            )
        logits = self.head_logits(self.cdf_features(flat))
        return torch.softmax(logits, dim=1)


# ---------------------------------------------------------------------------
# Mixture parameters and the CDF-feature operation
# ---------------------------------------------------------------------------


@dataclass
class MixtureParams:
    """Gaussian mixture for one sample: (K,) weights, (K, D) means/stds."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def validate(self) -> None:
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-6:
            raise ParameterError(
                f"mixture weights must be nonnegative and sum to 1, got {self.weights}"
            )
        if self.means.shape != self.stds.shape:
            raise ParameterError(
                f"means shape {self.means.shape} != stds shape {self.stds.shape}"
            )
        if np.any(self.stds <= 0):
            raise ParameterError("mixture stds must be strictly positive")


def mdn_cdf_features(x: np.ndarray, mix: MixtureParams) -> np.ndarray:
    """Standard-normal CDF of each input dimension under each component.

    Feature (k, d) = Phi((x_d - mean_kd) / std_kd), returned component-major
    as a flat (K * D,) vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(mix.stds <= 0):
        raise ParameterError("mixture stds must be strictly positive")
    if x.shape != (mix.means.shape[1],):
        raise DataError(
            f"input length {x.shape} does not match mixture dimension "
            f"{mix.means.shape[1]}"
        )
    z = (x[np.newaxis, :] - mix.means) / mix.stds
    phi = ndtr(z)
    # ndtr saturates for |z| beyond ~8/38; keep the features strictly inside
    # the open unit interval so the documented range holds for any finite z.
    info = np.finfo(np.float64)
    return np.clip(phi, info.tiny, 1.0 - info.eps / 2).ravel()


def mixture_for_sample(model: MDNNet, x: np.ndarray) -> MixtureParams:
    """Mixture parameters the model predicts for a single input patch."""
    flat = torch.as_tensor(np.asarray(x, dtype=np.float64).ravel()[np.newaxis, :],
                           dtype=torch.float32)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        weights, means, stds = model.mixture(flat)
    if was_training:
        model.train()
    return MixtureParams(
        weights=weights[0].numpy().astype(np.float64),
        means=means[0].numpy().astype(np.float64),
        stds=stds[0].numpy().astype(np.float64),
    )


# ---------------------------------------------------------------------------
# Construction, initialization, counting
# ---------------------------------------------------------------------------


def _fan_in(module: nn.Module) -> int:
    w = module.weight
    if isinstance(module, nn.Linear):
        return w.shape[1]
    if isinstance(module, nn.ConvTranspose2d):
        return w.shape[0] * w.shape[2] * w.shape[3]
    return w.shape[1] * w.shape[2] * w.shape[3]


def init_weights(model: nn.Module, seed: int) -> None:
    """Deterministic init: fan-in-scaled uniform weights, zero biases,
    0.02-scaled normal for the ViT class token and positional table."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
                bound = 1.0 / math.sqrt(_fan_in(module))
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
        if isinstance(model, ViTNet):
            model.cls_token.normal_(0.0, 0.02, generator=gen)
            model.pos_table.normal_(0.0, 0.02, generator=gen)


def build_model(spec: ModelSpec, seed: int) -> nn.Module:
    """Build and deterministically initialize one model family."""
    if spec.family == "cnn":
        model = CNNNet(dropout=spec.dropout, classes=spec.output_classes)
    elif spec.family == "unet":
        model = UNetNet(dropout=spec.dropout, classes=spec.output_classes)
    elif spec.family == "vit":
        model = ViTNet(dropout=spec.dropout, classes=spec.output_classes)
    elif spec.family == "mdn":
        model = MDNNet(dropout=spec.dropout, classes=spec.output_classes)
    else:
        raise ConfigError([f"unknown model family {spec.family!r}"])
    init_weights(model, seed)
    model.spec = spec
    target = PARAM_TARGETS[spec.family]
    count = count_parameters(model)
    if abs(count - target) / target > 0.02:
        raise ConfigError(
            [f"{spec.family} realized {count} parameters, expected ~{target}"]
        )
    return model


def count_parameters(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def forward(model: nn.Module, batch: np.ndarray) -> np.ndarray:
    """Run a batch of 30x30 patches through a model; returns (N, 5) numpy
    probabilities. Respects the model's current train/eval mode."""
    batch = np.asarray(batch)
    if batch.ndim == 3:
        batch = batch[:, np.newaxis, :, :]
    if batch.ndim != 4 or batch.shape[1] != 1 or batch.shape[2:] != (INPUT_SIZE, INPUT_SIZE):
        raise DataError(
            f"expected batch of shape (N, {INPUT_SIZE}, {INPUT_SIZE}), got {batch.shape}"
        )
    x = torch.as_tensor(batch, dtype=torch.float32)
    grad_needed = model.training
    if grad_needed:
        out = model(x)
    else:
        with torch.no_grad():
            out = model(x)
    return out.detach().numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"QDBENCH1"


def save_checkpoint(
    model: nn.Module,
    path,
    *,
    seed: int,
    epoch: int,
    metrics: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Serialize named weight arrays as little-endian float32 plus a manifest."""
    spec: ModelSpec = model.spec
    arrays = []
    blobs = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        arrays.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    manifest = {
        "family": spec.family,
        "spec": asdict(spec),
        "spec_hash": spec_hash(spec),
        "seed": seed,
        "epoch": epoch,
        "metrics": metrics or {},
        "extra": extra or {},
        "arrays": arrays,
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    payload = (
        _CKPT_MAGIC
        + len(header).to_bytes(8, "little")
        + header
        + b"".join(blobs)
    )
    with open(path, "wb") as fh:
        fh.write(payload)


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    """Rebuild the model from a checkpoint; forward outputs match the saved
    model exactly (float32 round-trips bit-exactly)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a qdbench checkpoint")
    hlen = int.from_bytes(blob[8:16], "little")
    manifest = json.loads(blob[16 : 16 + hlen].decode())
    spec = ModelSpec(**manifest["spec"])
    model = build_model(spec, seed=manifest["seed"])
    offset = 16 + hlen
    state = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += n * 4
        state[entry["name"]] = torch.from_numpy(arr.copy())
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes in checkpoint payload")
    model.load_state_dict(state)
    model.eval()
    return model, manifest
