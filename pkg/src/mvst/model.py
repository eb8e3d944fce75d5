"""Multi-view spectrogram transformer: patch splitting, per-view encoders.

A square spectrogram of side n is cut into non-overlapping patches whose
shape depends on the view level l: (n / 2**l) frequency rows by 2**l time
columns. Every level yields exactly n tokens of dimension n, which is what
makes the element-wise fusion across views well-defined. Each view owns an
unshared embedding, positional table and encoder stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .rng import stream, truncated_normal
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ViewConfig:
    """One patch shape: level 0 is the full-bandwidth 1-column slab, level 4
    the square patch."""

    level: int
    n: int = 256

    def __post_init__(self):
        if not 0 <= self.level <= 4:
            raise ValueError(f"view level must be in 0..4, got {self.level}")
        if self.n % (1 << self.level) != 0 or self.patch_freq < 1:
            raise ValueError(f"side {self.n} incompatible with level {self.level}")
        if self.n % self.patch_freq != 0 or self.n % self.patch_time != 0:
            raise ValueError(f"side {self.n} not divisible by patch {self.patch_freq}x{self.patch_time}")

    @property
    def patch_freq(self) -> int:
        return self.n >> self.level

    @property
    def patch_time(self) -> int:
        return 1 << self.level

    @property
    def n_tokens(self) -> int:
        return (self.n // self.patch_freq) * (self.n // self.patch_time)

    @property
    def token_dim(self) -> int:
        return self.patch_freq * self.patch_time


@dataclass(frozen=True)
class ModelConfig:
    n: int = 256
    d_t: int = 768
    depth: int = 12
    heads: int = 12
    mlp_ratio: int = 4
    views: tuple[int, ...] = (0, 1, 2, 3, 4)
    mlp_gelu: str = "outer"
    dropout: float = 0.0
    gate_mode: str = "per_view"
    pool: str = "mean"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.d_t % self.heads != 0:
            raise ValueError(f"d_t={self.d_t} not divisible by heads={self.heads}")
        if not self.views:
            raise ValueError("no active views")
        if len(set(self.views)) != len(self.views):
            raise ValueError("duplicate view levels")
        if self.mlp_gelu not in ("inner", "outer"):
            raise ValueError(f"mlp_gelu must be inner|outer, got {self.mlp_gelu!r}")
        if self.gate_mode not in ("per_view", "shared_sum"):
            raise ValueError(f"gate_mode must be per_view|shared_sum, got {self.gate_mode!r}")
        if self.pool != "mean":
            raise ValueError(f"pool must be mean, got {self.pool!r}")
        for level in self.views:
            ViewConfig(level, self.n)  # validates divisibility

    def view_configs(self) -> list[ViewConfig]:
        return [ViewConfig(level, self.n) for level in sorted(self.views)]


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

@dataclass
class BlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


@dataclass
class ViewParams:
    view: ViewConfig
    embed_w: Tensor
    embed_b: Tensor
    pos: Tensor
    blocks: list[BlockParams] = field(default_factory=list)


@dataclass
class ModelParams:
    views: list[ViewParams]
    gates: list[Tensor]            # one [d_t, d_t] matrix per active view
    classifier: "ClassifierParams"

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for vp in self.views:
            v = f"view{vp.view.level}"
            out += [(f"{v}.embed.w", vp.embed_w), (f"{v}.embed.b", vp.embed_b),
                    (f"{v}.pos", vp.pos)]
            for j, blk in enumerate(vp.blocks):
                b = f"{v}.block{j}"
                out += [(f"{b}.ln1.gain", blk.ln1_gain), (f"{b}.ln1.bias", blk.ln1_bias),
                        (f"{b}.attn.wq", blk.wq), (f"{b}.attn.wk", blk.wk),
                        (f"{b}.attn.wv", blk.wv), (f"{b}.attn.wo", blk.wo),
                        (f"{b}.ln2.gain", blk.ln2_gain), (f"{b}.ln2.bias", blk.ln2_bias),
                        (f"{b}.mlp.w1", blk.mlp_w1), (f"{b}.mlp.b1", blk.mlp_b1),
                        (f"{b}.mlp.w2", blk.mlp_w2), (f"{b}.mlp.b2", blk.mlp_b2)]
        for vp, w in zip(self.views, self.gates):
            out.append((f"gate.view{vp.view.level}.w", w))
        head = self.classifier
        out += [("classifier.w1", head.w1), ("classifier.b1", head.b1),
                ("classifier.w2", head.w2), ("classifier.b2", head.b2)]
        return out


def _init(name: str, seed: int, shape, std: float = 0.02) -> Tensor:
    return tensor.parameter(truncated_normal(stream(seed, "init." + name), shape, std), name)


def _zeros(name: str, shape) -> Tensor:
    return tensor.parameter(np.zeros(shape), name)


def _ones(name: str, shape) -> Tensor:
    return tensor.parameter(np.ones(shape), name)


def init_model(cfg: ModelConfig, seed: int) -> ModelParams:
    """Truncated-normal weights (std 0.02), zero biases, unit LN gains."""
    from .fusion import init_classifier

    d = cfg.d_t
    views = []
    for vc in cfg.view_configs():
        v = f"view{vc.level}"
        blocks = []
        for j in range(cfg.depth):
            b = f"{v}.block{j}"
            blocks.append(BlockParams(
                ln1_gain=_ones(f"{b}.ln1.gain", d), ln1_bias=_zeros(f"{b}.ln1.bias", d),
                wq=_init(f"{b}.attn.wq", seed, (d, d)), wk=_init(f"{b}.attn.wk", seed, (d, d)),
                wv=_init(f"{b}.attn.wv", seed, (d, d)), wo=_init(f"{b}.attn.wo", seed, (d, d)),
                ln2_gain=_ones(f"{b}.ln2.gain", d), ln2_bias=_zeros(f"{b}.ln2.bias", d),
                mlp_w1=_init(f"{b}.mlp.w1", seed, (d, cfg.mlp_ratio * d)),
                mlp_b1=_zeros(f"{b}.mlp.b1", cfg.mlp_ratio * d),
                mlp_w2=_init(f"{b}.mlp.w2", seed, (cfg.mlp_ratio * d, d)),
                mlp_b2=_zeros(f"{b}.mlp.b2", d)))
        views.append(ViewParams(
            view=vc,
            embed_w=_init(f"{v}.embed.w", seed, (vc.token_dim, d)),
            embed_b=_zeros(f"{v}.embed.b", d),
            pos=_init(f"{v}.pos", seed, (vc.n_tokens, d)),
            blocks=blocks))
    gates = [_init(f"gate.view{vc.level}.w", seed, (d, d)) for vc in cfg.view_configs()]
    return ModelParams(views=views, gates=gates, classifier=init_classifier(d, seed))


# --------------------------------------------------------------------------
# Forward
# --------------------------------------------------------------------------

def split_patches(mel: np.ndarray, view: ViewConfig) -> np.ndarray:
    """Cut an n x n spectrogram into the view's tokens.

    Token order is a frequency-major raster: all time positions of the lowest
    frequency band first. Within a token, patch pixels are flattened row-major
    (frequency rows, then time columns).
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.shape != (view.n, view.n):
        raise ShapeError(f"split_patches: expected {(view.n, view.n)}, got {mel.shape}")
    mu, nu = view.patch_freq, view.patch_time
    fb, tb = view.n // mu, view.n // nu
    return (mel.reshape(fb, mu, tb, nu)
               .transpose(0, 2, 1, 3)
               .reshape(fb * tb, mu * nu))


def embed_tokens(tokens, vp: ViewParams) -> Tensor:
    """Affine embedding into d_t dimensions plus the learned positional table."""
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if x.shape[1] != vp.embed_w.shape[0]:
        raise ShapeError(f"embed_tokens: token dim {x.shape[1]} vs embed {vp.embed_w.shape}")
    return tensor.add(tensor.affine(x, vp.embed_w, vp.embed_b), vp.pos)


def msa(f: Tensor, blk: BlockParams, heads: int,
        probs_out: list | None = None) -> Tensor:
    """Multi-head self-attention sublayer: MSA(LN(f)) + f."""
    x = tensor.layer_norm(f, blk.ln1_gain, blk.ln1_bias)
    q = tensor.matmul(x, blk.wq)
    k = tensor.matmul(x, blk.wk)
    v = tensor.matmul(x, blk.wv)
    attended = tensor.attention_core(q, k, v, heads, probs_out=probs_out)
    return tensor.add(tensor.matmul(attended, blk.wo), f)


def encoder_block(f: Tensor, blk: BlockParams, heads: int,
                  mlp_gelu: str = "outer", dropout_rate: float = 0.0,
                  rng: np.random.Generator | None = None,
                  probs_out: list | None = None) -> Tensor:
    """One transformer block.

    mlp_gelu="outer" applies the activation to the whole MLP output (the
    default here); "inner" places it between the two MLP layers as in
    standard ViT stacks.
    """
    z = msa(f, blk, heads, probs_out=probs_out)
    if dropout_rate > 0.0:
        z = tensor.dropout(z, dropout_rate, rng)
    y = tensor.layer_norm(z, blk.ln2_gain, blk.ln2_bias)
    h = tensor.affine(y, blk.mlp_w1, blk.mlp_b1)
    if mlp_gelu == "inner":
        h = tensor.gelu(h)
    h = tensor.affine(h, blk.mlp_w2, blk.mlp_b2)
    if mlp_gelu == "outer":
        h = tensor.gelu(h)
    if dropout_rate > 0.0:
        h = tensor.dropout(h, dropout_rate, rng)
    return tensor.add(h, z)


def encode_view(f0: Tensor, vp: ViewParams, heads: int, mlp_gelu: str = "outer",
                dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
    out = f0
    for blk in vp.blocks:
        out = encoder_block(out, blk, heads, mlp_gelu, dropout_rate, rng)
    return out


def forward_all_views(mel: np.ndarray, params: ModelParams, cfg: ModelConfig,
                      dropout_rate: float = 0.0,
                      rng: np.random.Generator | None = None) -> list[Tensor]:
    """Split, embed and encode every active view; outputs in ascending level."""
    feats = []
    for vp in params.views:
        tokens = split_patches(mel, vp.view)
        f0 = embed_tokens(tokens, vp)
        if dropout_rate > 0.0:
            f0 = tensor.dropout(f0, dropout_rate, rng)
        feats.append(encode_view(f0, vp, cfg.heads, cfg.mlp_gelu, dropout_rate, rng))
    return feats


def forward_logits(mel: np.ndarray, params: ModelParams, cfg: ModelConfig,
                   dropout_rate: float = 0.0,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Full single-sample pipeline: views -> gated fusion -> classifier logits."""
    from . import fusion

    feats = forward_all_views(mel, params, cfg, dropout_rate, rng)
    gates = fusion.gate_coefficients(feats, params.gates, mode=cfg.gate_mode)
    fused = fusion.fuse(feats, gates)
    return fusion.classify(fused, params.classifier)
