"""Stochastic defenses: configuration, per-forward-pass sampling, and the
plan that carries one pass worth of defense randomness into the encoder.

Six defenses plus composition:

==========  =====================================  =========================
kind        strength meaning                       acts on
==========  =====================================  =========================
snd         sigma of input Gaussian noise          image
rp          resize reduction fraction (0 = none)   image
prperm      fraction of patches permuted           position embeddings
prdrop      per-patch drop probability             token sequence
pattnpert   per-dimension drop probability alpha   attention keys/queries
pni         sigma of activation Gaussian noise     every MSA/MLP output
==========  =====================================  =========================

Every defense at zero strength is the identity: the sampled plan is then
exactly the neutral plan, so forward outputs are bit-identical to the
undefended model. Fresh randomness is drawn on every call.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from qbba_lab.numerics import bilinear_resize, clamp_unit
from qbba_lab.rng import RngStream

_KINDS = ("none", "snd", "pni", "rp", "prperm", "prdrop", "pattnpert", "composite")

# canonical application order: input side, then embedding side, then blocks
_STAGE = {"snd": 0, "rp": 1, "prperm": 2, "prdrop": 3, "pattnpert": 4, "pni": 5}


@dataclass(frozen=True)
class DefenseConfig:
    """One defense (or a composite) with a single strength scalar.

    ``clamp`` (snd only) re-clamps the noisy image to [0, 1].
    ``rescale`` (pattnpert only) divides attention scores by sqrt(|kept|)
    instead of the default sqrt(head_dim).
    ``per_head`` (pattnpert only) samples one kept-dimension set per head
    instead of sharing one across heads of a layer.
    """

    kind: str = "none"
    strength: float = 0.0
    members: tuple = ()
    clamp: bool = False
    rescale: bool = False
    per_head: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}")
        if self.strength < 0:
            raise ValueError("strength must be >= 0")
        if self.kind in ("prperm", "prdrop", "pattnpert") and not self.strength < 1:
            raise ValueError(f"{self.kind} strength must lie in [0, 1)")
        if self.kind == "rp" and not self.strength < 1:
            raise ValueError("rp strength must lie in [0, 1)")
        if self.kind == "composite":
            if not self.members:
                raise ValueError("composite defense needs at least one member")
            for m in self.members:
                if m.kind == "composite":
                    raise ValueError("nested composite defense")
        elif self.members:
            raise ValueError("only composite defenses carry members")

    @staticmethod
    def none() -> "DefenseConfig":
        return DefenseConfig("none", 0.0)


def compose(members) -> DefenseConfig:
    """Combine defenses; application follows the canonical stage order."""
    return DefenseConfig("composite", 0.0, members=tuple(members))


def canonical_members(defense: DefenseConfig | None) -> list[DefenseConfig]:
    """Flatten a config into members sorted by application stage."""
    if defense is None or defense.kind == "none":
        return []
    if defense.kind == "composite":
        return sorted(defense.members, key=lambda m: _STAGE.get(m.kind, 9))
    return [defense]


# ---------------------------------------------------------------------------
# individual defense sampling ops


def snd_apply(image: np.ndarray, sigma: float, rng: RngStream, clamp: bool = False) -> np.ndarray:
    """Add N(0, sigma^2) noise to the image. No clamping unless asked."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return image
    noisy = image + sigma * rng.gaussian(image.shape, dtype=image.dtype)
    return clamp_unit(noisy) if clamp else noisy


def rp_sample(image_size: int, min_size: int, rng: RngStream) -> tuple[int, int, int] | None:
    """Draw (target size, offset y, offset x) for resize-and-pad; None = no-op."""
    if min_size > image_size:
        raise ValueError("min_size exceeds image size")
    target = int(rng.integers(min_size, image_size + 1))
    if target == image_size:
        return None
    max_off = image_size - target
    return (target, int(rng.integers(0, max_off + 1)), int(rng.integers(0, max_off + 1)))


def rp_pad(image: np.ndarray, params: tuple[int, int, int] | None) -> np.ndarray:
    if params is None:
        return image.copy()
    target, off_y, off_x = params
    small = bilinear_resize(image, target)
    out = np.zeros_like(image)
    out[off_y:off_y + target, off_x:off_x + target, :] = small
    return out


def rp_apply(image: np.ndarray, min_size: int, rng: RngStream) -> np.ndarray:
    """Randomly resize to s in {min_size..S}, zero-pad back at a random offset."""
    return rp_pad(image, rp_sample(image.shape[0], min_size, rng))


def rp_min_size(image_size: int, patch_size: int, strength: float) -> int:
    """Map the rp strength (resize reduction fraction) to a minimum size."""
    return max(patch_size, int(round(image_size * (1.0 - strength))))


def prperm_apply(n_patches: int, fraction: float, rng: RngStream) -> np.ndarray:
    """Permutation over patch positions: ceil(fraction*n) patches are selected
    and their positional slots shuffled uniformly (fixed points allowed); all
    other patches keep their slot. The class token is never touched."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    perm = np.arange(n_patches, dtype=np.int64)
    k = int(math.ceil(fraction * n_patches))
    if k <= 1:
        return perm
    selected = rng.choice_without_replacement(n_patches, k)
    shuffled = selected[rng.permutation(k)]
    perm[selected] = shuffled
    return perm


def prdrop_keep_indices(n_patches: int, p: float, rng: RngStream) -> np.ndarray:
    """Indices of retained image patches; each dropped independently with
    probability p. If everything would drop, one uniform patch is retained."""
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    if p == 0:
        return np.arange(n_patches, dtype=np.int64)
    u = rng.uniform(n_patches)
    keep = np.nonzero(u > p)[0]
    if keep.size == 0:
        keep = np.array([int(rng.integers(0, n_patches))], dtype=np.int64)
    return keep.astype(np.int64)


def prdrop_apply(seq, p: float, rng: RngStream):
    """Drop image tokens from a patch sequence (class token always kept)."""
    n_image = seq.origins.size - 1
    keep = prdrop_keep_indices(n_image, p, rng)
    rows = np.concatenate(([0], keep + 1))
    return dataclasses.replace(seq, tokens=seq.tokens[rows], origins=seq.origins[rows])


def pattnpert_sample(d_head: int, alpha: float, rng: RngStream) -> np.ndarray:
    """Kept dimension indices for keys/queries; each index kept with
    probability 1 - alpha, re-sampled if empty."""
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    if alpha == 0:
        return np.arange(d_head, dtype=np.int64)
    while True:
        kept = np.nonzero(rng.uniform(d_head) >= alpha)[0]
        if kept.size:
            return kept.astype(np.int64)


# ---------------------------------------------------------------------------
# per-forward-pass plan


@dataclass
class DefensePlan:
    """All randomness for one forward pass, sampled up front.

    The encoder kernels consume only this plus the token array, which keeps
    them free of RNG state and lets the numba and numpy backends share exact
    semantics.
    """

    perm: np.ndarray                      # (n_patches,) positional permutation
    kept: np.ndarray                      # retained image-patch indices
    dim_keep: np.ndarray                  # (L, n_heads, head_dim) bool
    attn_scale: np.ndarray                # (L, n_heads) score denominators
    image_noise: np.ndarray | None = None  # snd, pre-sampled
    clamp_input: bool = False
    rp: tuple[int, int, int] | None = None  # (target size, off_y, off_x)
    pni_msa: np.ndarray | None = None     # (L, n_tokens, D)
    pni_mlp: np.ndarray | None = None


_NEUTRAL_CACHE: dict = {}


def neutral_plan(cfg) -> DefensePlan:
    """Plan of an undefended pass. Cached per config; treat fields as
    read-only (build_plan rebinds fields on a copy, never mutates arrays)."""
    cached = _NEUTRAL_CACHE.get(cfg)
    if cached is None:
        n_p = cfg.n_patches
        L, h, dh = cfg.num_blocks, cfg.num_heads, cfg.head_dim
        cached = DefensePlan(
            perm=np.arange(n_p, dtype=np.int64),
            kept=np.arange(n_p, dtype=np.int64),
            dim_keep=np.ones((L, h, dh), dtype=np.bool_),
            attn_scale=np.full((L, h), math.sqrt(dh)),
        )
        _NEUTRAL_CACHE[cfg] = cached
    return dataclasses.replace(cached)


def build_plan(defense: DefenseConfig | None, cfg, rng: RngStream | None) -> DefensePlan:
    """Sample one forward pass worth of defense randomness.

    Members draw in the canonical stage order so a given (defense, stream)
    pair always produces the same plan.
    """
    plan = neutral_plan(cfg)
    members = canonical_members(defense)
    if not members:
        return plan
    if rng is None:
        raise ValueError("active defenses need an RngStream")
    L, h, dh = cfg.num_blocks, cfg.num_heads, cfg.head_dim
    for m in members:
        if m.kind == "snd":
            if m.strength > 0:
                shape = (cfg.image_size, cfg.image_size, cfg.channels)
                plan.image_noise = m.strength * rng.gaussian(shape)
                plan.clamp_input = m.clamp
        elif m.kind == "rp":
            min_size = rp_min_size(cfg.image_size, cfg.patch_size, m.strength)
            plan.rp = rp_sample(cfg.image_size, min_size, rng)
        elif m.kind == "prperm":
            plan.perm = prperm_apply(cfg.n_patches, m.strength, rng)
        elif m.kind == "prdrop":
            plan.kept = prdrop_keep_indices(cfg.n_patches, m.strength, rng)
        elif m.kind == "pattnpert":
            mask = np.zeros((L, h, dh), dtype=np.bool_)
            for layer in range(L):
                if m.per_head:
                    for head in range(h):
                        mask[layer, head, pattnpert_sample(dh, m.strength, rng)] = True
                else:
                    shared = pattnpert_sample(dh, m.strength, rng)
                    mask[layer, :, shared] = True
            plan.dim_keep = mask
            if m.rescale:
                counts = mask.sum(axis=2).astype(np.float64)
                plan.attn_scale = np.sqrt(counts)
        elif m.kind == "pni":
            n_tok = plan.kept.size + 1
            d = cfg.embed_dim
            sigma = m.strength
            if sigma > 0:
                plan.pni_msa = sigma * rng.gaussian((L, n_tok, d))
                plan.pni_mlp = sigma * rng.gaussian((L, n_tok, d))
        else:
            raise ValueError(f"cannot plan defense kind {m.kind!r}")
    return plan


def apply_input_defenses(image: np.ndarray, plan: DefensePlan) -> np.ndarray:
    """Input-side part of the plan: additive noise, then resize-and-pad."""
    out = image
    if plan.image_noise is not None:
        out = out + plan.image_noise.astype(out.dtype)
        if plan.clamp_input:
            out = clamp_unit(out)
    if plan.rp is not None:
        out = rp_pad(out, plan.rp)
    return out
