"""Toy vision transformer: patch embedding, block stack with defense hooks,
class-token classification.

The forward pass is deterministic given (image, weights, defense plan); all
defense randomness is sampled into a :class:`~qbba_lab.defenses.DefensePlan`
before the encoder runs, which lets the numba and numpy kernels stay free of
RNG state.

Blocks use pre-normalization with residual additions around the attention
and MLP sublayers, plus a final layer norm before the classifier head; the
defense hooks act on the raw keys/queries/attention/token list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from qbba_lab import kernels
from qbba_lab.defenses import DefenseConfig, DefensePlan, apply_input_defenses, build_plan
from qbba_lab.numerics import softmax_rows
from qbba_lab.rng import RngStream

CLASS_TOKEN = -1  # origin marker for the class token


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 16
    channels: int = 1
    patch_size: int = 4
    embed_dim: int = 32
    num_heads: int = 2
    num_blocks: int = 2
    mlp_hidden: int = 64
    num_classes: int = 4

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


TOY_CONFIG = ModelConfig()


@dataclass
class ModelWeights:
    """All learnable tensors, float64, block tensors stacked on a leading
    num_blocks axis. Q/K/V projections carry no bias, matching the attention
    equations; the output projection, MLP and head do."""

    config: ModelConfig
    patch_w: np.ndarray   # (patch_dim, D)
    patch_b: np.ndarray   # (D,)
    pos: np.ndarray       # (n_patches + 1, D), slot 0 = class token
    cls: np.ndarray       # (D,)
    ln1_g: np.ndarray     # (L, D)
    ln1_b: np.ndarray
    wq: np.ndarray        # (L, D, D)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray        # (L, D)
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray        # (L, D, mlp_hidden)
    b1: np.ndarray        # (L, mlp_hidden)
    w2: np.ndarray        # (L, mlp_hidden, D)
    b2: np.ndarray        # (L, D)
    lnf_g: np.ndarray     # (D,)
    lnf_b: np.ndarray
    head_w: np.ndarray    # (D, K)
    head_b: np.ndarray    # (K,)

    TENSOR_NAMES = (
        "patch_w", "patch_b", "pos", "cls",
        "ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "bo",
        "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
        "lnf_g", "lnf_b", "head_w", "head_b",
    )

    def tensors(self):
        """(name, array) pairs in a fixed order."""
        for name in self.TENSOR_NAMES:
            yield name, getattr(self, name)

    def encoder_params(self) -> tuple:
        return (self.ln1_g, self.ln1_b, self.wq, self.wk, self.wv, self.wo,
                self.bo, self.ln2_g, self.ln2_b, self.w1, self.b1, self.w2,
                self.b2, self.lnf_g, self.lnf_b, self.head_w, self.head_b)

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, *(a.copy() for _, a in self.tensors()))

    def expected_shapes(self) -> dict[str, tuple]:
        return expected_shapes(self.config)

    def validate(self):
        exp = self.expected_shapes()
        for name, arr in self.tensors():
            if arr.shape != exp[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {exp[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, L, m, k = cfg.embed_dim, cfg.num_blocks, cfg.mlp_hidden, cfg.num_classes
    return {
        "patch_w": (cfg.patch_dim, d), "patch_b": (d,),
        "pos": (cfg.n_patches + 1, d), "cls": (d,),
        "ln1_g": (L, d), "ln1_b": (L, d),
        "wq": (L, d, d), "wk": (L, d, d), "wv": (L, d, d), "wo": (L, d, d),
        "bo": (L, d),
        "ln2_g": (L, d), "ln2_b": (L, d),
        "w1": (L, d, m), "b1": (L, m), "w2": (L, m, d), "b2": (L, d),
        "lnf_g": (d,), "lnf_b": (d,),
        "head_w": (d, k), "head_b": (k,),
    }


def init_weights(cfg: ModelConfig, rng: RngStream, scale: float = 0.02) -> ModelWeights:
    """Gaussian init (std=scale) for projections, ones/zeros for norms."""
    shapes = expected_shapes(cfg)
    arrays = {}
    for name in ModelWeights.TENSOR_NAMES:
        shape = shapes[name]
        if name.endswith("_g"):
            arrays[name] = np.ones(shape)
        elif name.endswith("_b") or name in ("bo", "b1", "b2"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = scale * rng.gaussian(shape)
    return ModelWeights(cfg, **arrays)


# ---------------------------------------------------------------------------
# patch pipeline


@dataclass
class PatchSequence:
    """Ordered token list; origins[i] is the spatial patch index that
    produced token i, or CLASS_TOKEN for the class slot."""

    tokens: np.ndarray   # (n, D)
    origins: np.ndarray  # (n,)

    def __post_init__(self):
        if int(np.sum(self.origins == CLASS_TOKEN)) != 1:
            raise ValueError("sequence must contain exactly one class token")
        imgs = self.origins[self.origins != CLASS_TOKEN]
        if np.unique(imgs).size != imgs.size:
            raise ValueError("duplicate patch origins")


def patchify(image: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Split an (S, S, C) image into (n_patches, P*P*C) rows, row-major."""
    s, p, c = cfg.image_size, cfg.patch_size, cfg.channels
    if image.shape != (s, s, c):
        raise ValueError(f"image shape {image.shape} does not match config {(s, s, c)}")
    g = s // p
    return (image.reshape(g, p, g, p, c)
                 .transpose(0, 2, 1, 3, 4)
                 .reshape(g * g, p * p * c))


def unpatchify(patches: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    s, p, c = cfg.image_size, cfg.patch_size, cfg.channels
    g = s // p
    return (patches.reshape(g, g, p, p, c)
                   .transpose(0, 2, 1, 3, 4)
                   .reshape(s, s, c))


def embed_patches(patches: np.ndarray, weights: ModelWeights,
                  perm: np.ndarray | None = None) -> PatchSequence:
    """Project patches and add positional embeddings, class token first.

    token_i = proj(x_i) + pos[perm(i)]; perm defaults to the identity and
    must be a permutation of the supplied patch indices.
    """
    n = patches.shape[0]
    if perm is None:
        perm = np.arange(n, dtype=np.int64)
    else:
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("perm is not a valid permutation of the patch indices")
    tokens = np.empty((n + 1, weights.config.embed_dim))
    tokens[0] = weights.cls + weights.pos[0]
    tokens[1:] = patches @ weights.patch_w + weights.patch_b + weights.pos[perm + 1]
    origins = np.concatenate(([CLASS_TOKEN], np.arange(n))).astype(np.int64)
    return PatchSequence(tokens=tokens, origins=origins)


def attention_head(tokens: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                   w_v: np.ndarray, dims: np.ndarray | None = None,
                   scale_mode: str = "literal"):
    """Single-head self-attention over a token sequence.

    w_q/w_k/w_v are (head_dim, D) so that K_i = w_k @ tokens[i]. When
    ``dims`` is given, keys and queries are reduced to those dimension
    indices before the score product. ``scale_mode`` picks the denominator:
    sqrt(head_dim) ("literal", default) or sqrt(|dims|) ("rescale").

    Returns (outputs (n, head_dim), attention (n, n)).
    """
    q = tokens @ w_q.T
    k = tokens @ w_k.T
    v = tokens @ w_v.T
    d_head = q.shape[1]
    if dims is not None:
        dims = np.asarray(dims, dtype=np.int64)
        if dims.size == 0:
            raise ValueError("degenerate attention: empty dimension set")
        q = q[:, dims]
        k = k[:, dims]
    if scale_mode == "literal":
        denom = math.sqrt(d_head)
    elif scale_mode == "rescale":
        denom = math.sqrt(q.shape[1])
    else:
        raise ValueError(f"unknown scale_mode {scale_mode!r}")
    attn = softmax_rows(q @ k.T / denom)
    return attn @ v, attn


# ---------------------------------------------------------------------------
# full forward pass


def forward_from_plan(image: np.ndarray, weights: ModelWeights, plan: DefensePlan):
    """Forward pass with all randomness fixed by the plan.

    Equivalent to composing apply_input_defenses, patchify, embed_patches and
    token dropping, but skips per-call sequence validation: this path runs
    once per oracle query.
    """
    cfg = weights.config
    img = apply_input_defenses(np.asarray(image, dtype=np.float64), plan)
    patches = patchify(img, cfg)
    kept = plan.kept
    if kept.size != patches.shape[0]:
        patches = patches[kept]
    tok = np.empty((kept.size + 1, cfg.embed_dim))
    tok[0] = weights.cls + weights.pos[0]
    tok[1:] = patches @ weights.patch_w + weights.patch_b + weights.pos[plan.perm[kept] + 1]
    logits = kernels.encode_tokens(
        tok, weights.encoder_params(), cfg.num_heads,
        plan.dim_keep, plan.attn_scale, plan.pni_msa, plan.pni_mlp,
    )
    e = np.exp(logits - logits.max())
    return logits, e / e.sum()


def model_forward(image: np.ndarray, weights: ModelWeights,
                  defense: DefenseConfig | None = None,
                  rng: RngStream | None = None):
    """Defended stochastic forward pass; returns (logits, probs).

    ``rng`` should be freshly forked per call so every pass draws its own
    defense randomness; it may be omitted when no defense is active.
    """
    plan = build_plan(defense, weights.config, rng)
    return forward_from_plan(image, weights, plan)


class DefendedModel:
    """A weights + defense bundle with a per-call stochastic forward."""

    def __init__(self, weights: ModelWeights, defense: DefenseConfig | None = None):
        self.weights = weights
        self.defense = defense if defense is not None else DefenseConfig.none()

    @property
    def num_classes(self) -> int:
        return self.weights.config.num_classes

    def forward(self, image: np.ndarray, rng: RngStream | None = None):
        return model_forward(image, self.weights, self.defense, rng)

    def predict(self, image: np.ndarray, rng: RngStream | None = None) -> int:
        _, probs = self.forward(image, rng)
        return int(np.argmax(probs))
