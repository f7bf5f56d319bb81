"""DB-KAUNet assembly, composite loss and the training step."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import ops
from .core.module import BatchNorm2d, LayerNorm, Linear, Module, Parameter
from .core.tensor import NonFiniteError, ShapeError, Tensor, ensure_tensor
from .fusion import CCI, SFE
from .geometric import Conv2d, ConvTranspose2d, DepthwiseConv2d, SamplingPattern, xshape_pattern
from .kan import GRKAN, KANConvBlock, KANLinear, kan_pixelwise

N_LEVELS = 5
STANDARD_LEVELS = (2, 4)
KA_LEVELS = (3, 5)


# -- configuration -------------------------------------------------------------------

ABLATIONS = {
    "A": dict(use_transformer=False, use_hdbe=False, use_cci=False, use_sfe=False, use_gaf=False, use_kan_decoder=False),
    "B": dict(use_transformer=True, use_hdbe=False, use_cci=False, use_sfe=False, use_gaf=False, use_kan_decoder=False),
    "C": dict(use_transformer=True, use_hdbe=False, use_cci=False, use_sfe=False, use_gaf=False, use_kan_decoder=True),
    "D": dict(use_transformer=True, use_hdbe=True, use_cci=False, use_sfe=False, use_gaf=False, use_kan_decoder=True),
    "E": dict(use_transformer=True, use_hdbe=True, use_cci=True, use_sfe=False, use_gaf=False, use_kan_decoder=True),
    "F": dict(use_transformer=True, use_hdbe=True, use_cci=False, use_sfe=True, use_gaf=False, use_kan_decoder=True),
    "G": dict(use_transformer=True, use_hdbe=True, use_cci=True, use_sfe=True, use_gaf=False, use_kan_decoder=True),
    "H": dict(use_transformer=True, use_hdbe=True, use_cci=True, use_sfe=True, use_gaf=True, use_kan_decoder=True),
}


@dataclass
class NetworkConfig:
    base_channels: int = 16
    multipliers: tuple[int, ...] = (1, 2, 4, 8, 16)
    heads: tuple[int, ...] = (2, 2, 4, 4)
    mlp_ratio: int = 2
    rational_m: int = 5
    rational_n: int = 4
    rational_groups: int = 8
    grid_intervals: int = 5
    spline_order: int = 3
    grid_min: float = -2.0
    grid_max: float = 2.0
    ldconv_center: tuple[float, float] = (4.0, 4.0)
    in_channels: int = 1
    num_classes: int = 2
    use_transformer: bool = True
    use_hdbe: bool = True
    use_cci: bool = True
    use_sfe: bool = True
    use_gaf: bool = True
    use_kan_decoder: bool = True

    def __post_init__(self):
        self.multipliers = tuple(self.multipliers)
        self.heads = tuple(self.heads)
        self.ldconv_center = tuple(float(v) for v in self.ldconv_center)
        if len(self.multipliers) != N_LEVELS:
            raise ValueError(f"need {N_LEVELS} level multipliers, got {self.multipliers}")
        if len(self.heads) != N_LEVELS - 1:
            raise ValueError(f"need {N_LEVELS - 1} head counts, got {self.heads}")
        if self.use_gaf and not self.use_sfe:
            raise ValueError("use_gaf requires use_sfe (SFE-GAF replaces SFE at Kolmogorov-Arnold levels)")
        if (self.use_cci or self.use_sfe) and not self.use_transformer:
            raise ValueError("use_cci/use_sfe require the Transformer branch")

    @property
    def cnn_channels(self) -> list[int]:
        return [self.base_channels * m for m in self.multipliers]

    @property
    def trans_dims(self) -> list[int]:
        """Transformer embedding width at levels 2..5 (equal to the CNN width there)."""
        return self.cnn_channels[1:]

    @classmethod
    def ablation(cls, name: str, **overrides) -> "NetworkConfig":
        try:
            flags = ABLATIONS[name.upper()]
        except KeyError:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None
        return cls(**{**flags, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown NetworkConfig fields {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# -- standard blocks -------------------------------------------------------------------

class ResidualBlock(Module):
    """conv-BN-ReLU-conv-BN plus (projected) shortcut, then ReLU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride, padding=0, bias=False)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        short = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ops.relu(y + short)


def residual_block_forward(x, params: ResidualBlock) -> Tensor:
    return params(x)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention over tokens ``(B, T, D)``.

    Keys carry no bias: softmax over keys is invariant to it, so it would
    be a parameter with identically zero gradient.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"embedding dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng, bias=False)
        self.q_bias = Parameter(np.zeros(dim))
        self.v_bias = Parameter(np.zeros(dim))
        self.proj = Linear(dim, dim, rng)

    def _qkv(self, x: Tensor):
        b, t, d = x.shape
        hd = d // self.heads
        bias = ops.concat([self.q_bias, Tensor(np.zeros(d, dtype=self.q_bias.dtype)), self.v_bias], axis=0)
        qkv = ops.transpose(ops.reshape(self.qkv(x) + bias, (b, t, 3, self.heads, hd)), (2, 0, 3, 1, 4))
        return qkv[0], qkv[1], qkv[2], hd

    def attention_weights(self, x: Tensor) -> Tensor:
        q, k, _, hd = self._qkv(x)
        return ops.softmax(ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(hd)), dim=-1)

    def forward(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        q, k, v, hd = self._qkv(x)
        att = ops.softmax(ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(hd)), dim=-1)
        out = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (b, t, d))
        return self.proj(out)


class MLP(Module):
    """linear -> activation -> linear; ``activation=None`` keeps it linear."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, activation: str | None = "gelu"):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.activation = activation

    def forward(self, x):
        h = self.fc1(x)
        if self.activation == "gelu":
            h = ops.gelu(h)
        elif self.activation is not None:
            raise ValueError(f"unknown activation {self.activation!r}")
        return self.fc2(h)


class ViTBlock(Module):
    """Pre-norm multi-head self-attention and MLP, both residual."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 2,
                 activation: str | None = "gelu"):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng, activation)

    def forward(self, tokens) -> Tensor:
        tokens = ensure_tensor(tokens)
        x = tokens + self.attn(self.norm1(tokens))
        return x + self.mlp(self.norm2(x))


class KATBlock(Module):
    """ViT block whose MLP is two group-rational KAN layers (rational -> linear, twice)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 2,
                 groups: int = 8, m: int = 5, n: int = 4, init: str = "silu"):
        super().__init__()
        hidden = dim * mlp_ratio
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.kan1 = GRKAN(dim, hidden, rng, groups, m, n, init)
        self.kan2 = GRKAN(hidden, dim, rng, groups, m, n, init)

    def forward(self, tokens) -> Tensor:
        tokens = ensure_tensor(tokens)
        x = tokens + self.attn(self.norm1(tokens))
        return x + self.kan2(self.kan1(self.norm2(x)))


def vit_block_forward(tokens, params: ViTBlock) -> Tensor:
    return params(tokens)


def kat_block_forward(tokens, params: KATBlock) -> Tensor:
    return params(tokens)


def map_to_tokens(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (b, c, h * w)), (0, 2, 1))


def tokens_to_map(t: Tensor, h: int, w: int) -> Tensor:
    b, n, d = t.shape
    if n != h * w:
        raise ShapeError(f"{n} tokens cannot form a {h}x{w} map")
    return ops.reshape(ops.transpose(t, (0, 2, 1)), (b, d, h, w))


class TransformerStage(Module):
    """Halve resolution, embed each pixel as a token, run one block, fold back to a map."""

    def __init__(self, cin: int, dim: int, heads: int, rng: np.random.Generator, kind: str = "vit",
                 mlp_ratio: int = 2, groups: int = 8, m: int = 5, n: int = 4):
        super().__init__()
        self.embed = Linear(cin, dim, rng)
        if kind == "vit":
            self.block = ViTBlock(dim, heads, rng, mlp_ratio)
        elif kind == "kat":
            self.block = KATBlock(dim, heads, rng, mlp_ratio, min(groups, dim), m, n)
        else:
            raise ValueError(f"unknown transformer kind {kind!r}")
        self.kind = kind

    def forward(self, x: Tensor) -> Tensor:
        x = ops.avg_pool2d(x, 2)
        h, w = x.shape[-2:]
        return tokens_to_map(self.block(self.embed(map_to_tokens(x))), h, w)


# -- encoder ---------------------------------------------------------------------------

@dataclass
class EncoderState:
    cnn_features: list[Tensor] = field(default_factory=list)
    transformer_features: list[Tensor | None] = field(default_factory=list)
    skip_outputs: list[Tensor] = field(default_factory=list)

    @property
    def bottleneck(self) -> Tensor:
        return self.skip_outputs[-1]


class HDBE(Module):
    """Five-level heterogeneous dual-branch encoder."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        cc, td = cfg.cnn_channels, cfg.trans_dims
        self.stem = Conv2d(cfg.in_channels, cc[0], 7, rng, stride=2, padding=3, bias=False)
        self.stem_bn = BatchNorm2d(cc[0])
        kan_kw = dict(grid_intervals=cfg.grid_intervals, spline_order=cfg.spline_order,
                      grid_range=(cfg.grid_min, cfg.grid_max))
        pattern = xshape_pattern(cfg.ldconv_center)
        self.cnn_blocks, self.trans_stages, self.cci, self.sfe = [], [], [], []
        for level in range(2, N_LEVELS + 1):
            i = level - 1
            ka = cfg.use_hdbe and level in KA_LEVELS
            if ka:
                self.cnn_blocks.append(KANConvBlock(cc[i - 1], rng, out_channels=cc[i], **kan_kw))
            else:
                self.cnn_blocks.append(ResidualBlock(cc[i - 1], cc[i], rng, stride=2))
            if cfg.use_transformer:
                tin = cc[0] if level == 2 else td[i - 2]
                self.trans_stages.append(TransformerStage(
                    tin, td[i - 1], cfg.heads[i - 1], rng, "kat" if ka else "vit", cfg.mlp_ratio,
                    cfg.rational_groups, cfg.rational_m, cfg.rational_n))
            if cfg.use_cci:
                self.cci.append(CCI(cc[i], td[i - 1], rng))
            if cfg.use_sfe:
                gaf = cfg.use_gaf and level in KA_LEVELS
                self.sfe.append(SFE(cc[i], td[i - 1], cc[i], rng, gaf=gaf, pattern=pattern))

    def skip_channels(self) -> list[int]:
        cfg = self.cfg
        cc, td = cfg.cnn_channels, cfg.trans_dims
        out = [cc[0]]
        for i in range(1, N_LEVELS):
            if cfg.use_transformer and not cfg.use_sfe:
                out.append(cc[i] + td[i - 1])
            else:
                out.append(cc[i])
        return out

    def forward(self, image) -> EncoderState:
        x = ensure_tensor(image)
        if x.ndim == 3:
            x = ops.reshape(x, (1,) + x.shape)
        h, w = x.shape[-2:]
        div = 2 ** N_LEVELS
        if h % div or w % div:
            raise ShapeError(f"input spatial dims {(h, w)} must be divisible by {div}")
        cfg = self.cfg
        l1 = ops.relu(self.stem_bn(self.stem(x)))
        state = EncoderState([l1], [None], [l1])
        lmap, gmap = l1, l1
        for j in range(N_LEVELS - 1):
            lmap = self.cnn_blocks[j](lmap)
            if cfg.use_transformer:
                gmap = self.trans_stages[j](gmap)
                if cfg.use_cci:
                    lmap, gmap = self.cci[j](lmap, gmap)
                skip = self.sfe[j](lmap, gmap) if cfg.use_sfe else ops.concat([lmap, gmap], axis=1)
            else:
                gmap = None
                skip = lmap
            state.cnn_features.append(lmap)
            state.transformer_features.append(gmap)
            state.skip_outputs.append(skip)
        return state


def hdbe_forward(image, encoder: HDBE) -> EncoderState:
    return encoder(image)


# -- decoders ------------------------------------------------------------------------

class CNNDecoder(Module):
    """Transposed 2x upsampling followed by two conv-BN-ReLU blocks."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.up = ConvTranspose2d(cin, cout, 2, rng, stride=2)
        self.conv1 = Conv2d(cout, cout, 3, rng, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(cout)

    def forward(self, x):
        y = self.up(x)
        y = ops.relu(self.bn1(self.conv1(y)))
        return ops.relu(self.bn2(self.conv2(y)))


class KANDecoder(Module):
    """Transposed 2x upsampling followed by (KANLinear -> depthwise 3x3 -> BN) twice."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, **kan_kw):
        super().__init__()
        self.up = ConvTranspose2d(cin, cout, 2, rng, stride=2)
        self.phi1 = KANLinear(cout, cout, rng, **kan_kw)
        self.dw1 = DepthwiseConv2d(cout, 3, rng, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.phi2 = KANLinear(cout, cout, rng, **kan_kw)
        self.dw2 = DepthwiseConv2d(cout, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(cout)

    def forward(self, x):
        y = self.up(x)
        y = self.bn1(self.dw1(kan_pixelwise(self.phi1, y)))
        return self.bn2(self.dw2(kan_pixelwise(self.phi2, y)))


class Decoder(Module):
    """Five decoder layers, deepest first; KAN and CNN layers alternate when enabled."""

    def __init__(self, cfg: NetworkConfig, skip_channels: list[int], rng: np.random.Generator):
        super().__init__()
        cc = cfg.cnn_channels
        kan_kw = dict(grid_intervals=cfg.grid_intervals, spline_order=cfg.spline_order,
                      grid_range=(cfg.grid_min, cfg.grid_max))
        self.kinds: list[str] = []
        self.blocks = []
        prev = None
        for level in range(N_LEVELS, 0, -1):
            cin = skip_channels[level - 1] if prev is None else prev + skip_channels[level - 1]
            cout = cc[level - 2] if level >= 2 else cc[0]
            kan = cfg.use_kan_decoder and (N_LEVELS - level) % 2 == 0
            self.blocks.append(KANDecoder(cin, cout, rng, **kan_kw) if kan else CNNDecoder(cin, cout, rng))
            self.kinds.append("kan" if kan else "cnn")
            prev = cout
        self.head = Conv2d(cc[0], cfg.num_classes, 1, rng, padding=0)

    def forward(self, state: EncoderState) -> Tensor:
        skips = state.skip_outputs
        d = None
        for j, block in enumerate(self.blocks):
            level = N_LEVELS - j
            skip = skips[level - 1]
            inp = skip if d is None else ops.concat([d, skip], axis=1)
            d = block(inp)
        return self.head(d)


def decoder_forward(state: EncoderState, decoder: Decoder) -> Tensor:
    return decoder(state)


class DBKAUNet(Module):
    def __init__(self, cfg: NetworkConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or NetworkConfig()
        rng = np.random.default_rng(seed)
        self.encoder = HDBE(self.cfg, rng)
        self.decoder = Decoder(self.cfg, self.encoder.skip_channels(), rng)

    def logits(self, image) -> Tensor:
        return self.decoder(self.encoder(image))

    def forward(self, image) -> Tensor:
        """Vessel-class probability map ``(B, H, W)`` (``(1, H, W)`` for one unbatched image)."""
        probs = ops.softmax(self.logits(image), dim=1)
        return probs[:, 1]


def dbkaunet_forward(image, model: DBKAUNet) -> Tensor:
    return model(image)


# -- loss ------------------------------------------------------------------------------

PROB_CLAMP = 1e-7


def composite_loss(prob_map, target, alpha: float = 0.5, smooth: float = 1.0,
                   clamp: float = PROB_CLAMP) -> Tensor:
    """``alpha * CE + (1 - alpha) * Dice`` on vessel probabilities.

    CE is the mean pixelwise binary cross-entropy with log arguments
    clamped to ``[clamp, 1]``; Dice loss is
    ``1 - (2 sum(p t) + smooth) / (sum p + sum t + smooth)``.
    """
    p = ensure_tensor(prob_map)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=p.dtype)
    if t.shape != p.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("target mask must be binary")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    tt = Tensor(t)
    log_p = ops.log(ops.clip(p, clamp, 1.0))
    log_q = ops.log(ops.clip(1.0 - p, clamp, 1.0))
    ce = ops.neg(ops.mean(tt * log_p + (1.0 - tt) * log_q))
    inter = ops.sum(p * tt)
    dice = 1.0 - (2.0 * inter + smooth) / (ops.sum(p) + float(t.sum()) + smooth)
    if alpha == 1.0:
        return ce
    if alpha == 0.0:
        return dice
    return alpha * ce + (1.0 - alpha) * dice


# -- optimization ----------------------------------------------------------------------

def cosine_lr(step: int, total_steps: int, base_lr: float = 5e-4, min_lr: float = 0.0) -> float:
    """Cosine-annealed rate: ``base_lr`` at step 0, approaching ``min_lr`` at the end."""
    if total_steps <= 0:
        return base_lr
    t = min(step, total_steps) / total_steps
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * t))


def global_grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))


def clip_grad_norm(params, max_norm: float = 5.0) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    params = list(params)
    total = global_grad_norm(params)
    if total > max_norm:
        factor = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(factor, dtype=p.grad.dtype)
    return total


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-5):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        return {"step_count": self.step_count, "lr": self.lr, "betas": list(self.betas),
                "eps": self.eps, "weight_decay": self.weight_decay}

    def load_state(self, meta: dict, m: list[np.ndarray], v: list[np.ndarray]) -> None:
        self.step_count = int(meta["step_count"])
        self.lr = float(meta["lr"])
        self.betas = tuple(meta["betas"])
        self.eps = float(meta["eps"])
        self.weight_decay = float(meta["weight_decay"])
        self.m = [np.array(a, dtype=p.data.dtype) for a, p in zip(m, self.params)]
        self.v = [np.array(a, dtype=p.data.dtype) for a, p in zip(v, self.params)]


def first_nonfinite(out: Tensor) -> Tensor | None:
    """Earliest graph node (inputs first) holding a NaN or Inf."""
    for node in out.topological_order():
        if not np.all(np.isfinite(node.data)):
            return node
    return None


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    lr: float


def train_step(model: DBKAUNet, batch, optimizer: AdamW, lr: float | None = None,
               alpha: float = 0.5, clip_norm: float = 5.0) -> StepResult:
    """Forward, composite loss, backward, global-norm clipping, AdamW update."""
    images, masks = batch
    images = np.asarray(images)
    dtype = model.parameters()[0].dtype
    if images.ndim == 3:
        images = images[:, None]
    x = Tensor(images.astype(dtype, copy=False))
    model.train()
    optimizer.zero_grad()
    prob = model(x)
    loss = composite_loss(prob, np.asarray(masks), alpha)
    if not np.isfinite(loss.data).all():
        bad = first_nonfinite(loss)
        where = f"{bad.op} output of shape {bad.shape}" if bad is not None else "loss"
        raise NonFiniteError(f"non-finite loss; first non-finite value at {where}")
    loss.backward()
    norm = clip_grad_norm(optimizer.params, clip_norm)
    if not math.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    optimizer.step(lr)
    return StepResult(float(loss.data), norm, optimizer.lr if lr is None else lr)


def count_parameters(model: Module) -> int:
    return model.num_parameters()


def build_model(ablation: str | None = None, seed: int = 0, **overrides) -> DBKAUNet:
    cfg = NetworkConfig.ablation(ablation, **overrides) if ablation else NetworkConfig(**overrides)
    return DBKAUNet(cfg, seed)


__all__ = [
    "ABLATIONS", "AdamW", "CNNDecoder", "DBKAUNet", "Decoder", "EncoderState", "HDBE", "KANDecoder",
    "KATBlock", "MultiHeadSelfAttention", "NetworkConfig", "ResidualBlock", "TransformerStage", "ViTBlock",
    "build_model", "clip_grad_norm", "composite_loss", "cosine_lr", "count_parameters", "decoder_forward",
    "dbkaunet_forward", "first_nonfinite", "hdbe_forward", "kat_block_forward", "residual_block_forward",
    "train_step", "vit_block_forward", "SamplingPattern",
]
