"""The four architectures: Image-MAE, VideoMAE, LAMAE and Video-LAMAE.

All four share one code path.  The video variants swap the per-frame patch
embedding for a joint space-time tube embedding and encode/decode a whole
clip at once; the LA variants insert a transformer over the pooled latent
tokens of a study between encoder and decoder.  Everything else is
identical, so a LAMAE with a 0-layer latent stack reduces to its MAE twin.

Batched tensors use the layout ``(B, V, S, T, ...)``: studies, views,
temporal slots (frames, or tubes for video variants), patches per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .errors import ConfigError, DimensionError, EquivalenceError, IntegrityError
from .masking import MaskPlan, full_plan, restore_from_index, restore_index, sample_plan
from .params import ModelParams, add_linear, normal
from .tensor import Tensor
from .vit import (
    BlockConfig,
    PatchGrid,
    embed_tokens,
    init_embed,
    init_stack,
    patchify,
    sincos_2d,
    sincos_3d,
    transformer_stack,
    tubify,
)

VARIANTS = ("image_mae", "video_mae", "lamae", "video_lamae")
LOSS_NORMS = ("sum_masked", "mean_masked")
TASKS = ("multilabel", "regression")
MAE_TWIN = {"lamae": "image_mae", "video_lamae": "video_mae"}

BACKBONE_GROUPS = ("patch_embed", "encoder", "la")
DECODER_GROUPS = ("decoder",)
HEAD_GROUPS = ("head",)


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "lamae"
    grid: PatchGrid = field(default_factory=PatchGrid)
    encoder: BlockConfig = field(default_factory=lambda: BlockConfig(768, 12, 12))
    decoder: BlockConfig = field(default_factory=lambda: BlockConfig(192, 4, 3))
    latent: BlockConfig = field(default_factory=lambda: BlockConfig(768, 3, 12))
    alpha_e: float = 0.875
    alpha_la: float = 0.25
    loss_norm: str = "mean_masked"
    pixel_norm: bool = False
    views_per_study: int = 8
    frames_per_view: int = 8
    frame_window: int = 32
    identity_embed: bool = True
    task: str = "multilabel"
    num_outputs: int = 40
    head_hidden: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.loss_norm not in LOSS_NORMS:
            raise ConfigError(f"unknown loss_norm {self.loss_norm!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not self.has_la:
            # The MAE baselines are defined by the absence of the LA module.
            object.__setattr__(self, "latent", replace(self.latent, num_layers=0))
            object.__setattr__(self, "alpha_la", 0.0)
        if self.latent.embed_dim != self.encoder.embed_dim:
            raise ConfigError("latent attention width must equal the encoder width")
        if not self.is_video and self.grid.time_patch != 1:
            raise ConfigError("image variants require time_patch == 1")
        if self.frames_per_view % self.grid.time_patch:
            raise ConfigError("time_patch must divide frames_per_view")
        if not 0.0 <= self.alpha_la < 1.0:
            raise ConfigError(f"alpha_la must be in [0, 1), got {self.alpha_la}")
        if not 0.0 < self.alpha_e < 1.0:
            raise ConfigError(f"alpha_e must be in (0, 1), got {self.alpha_e}")
        if self.views_per_study < 1 or self.frames_per_view < 1:
            raise ConfigError("need at least one view and one frame per study")

    @property
    def is_video(self) -> bool:
        return self.variant in ("video_mae", "video_lamae")

    @property
    def has_la(self) -> bool:
        return self.variant in ("lamae", "video_lamae")

    @property
    def slots(self) -> int:
        """Temporal token slots per view."""
        return self.frames_per_view // self.grid.time_patch

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.encoder.embed_dim

    @classmethod
    def full(cls, variant: str = "lamae", **overrides) -> "ModelConfig":
        """Full-size defaults (ViT-Base encoder, ViT-Tiny decoder, 3-layer LA)."""
        grid = PatchGrid(224, 14, 1, 1)
        return cls(variant=variant, grid=grid, **overrides)

    @classmethod
    def desk(cls, variant: str = "lamae", **overrides) -> "ModelConfig":
        """Laptop-scale overrides used by the tests and the synthetic runs."""
        base = dict(
            variant=variant,
            grid=PatchGrid(28, 7, 1, 1),
            encoder=BlockConfig(16, 2, 2),
            decoder=BlockConfig(8, 1, 2),
            latent=BlockConfig(16, 1, 2),
            alpha_e=0.75,
            alpha_la=0.25,
            views_per_study=2,
            frames_per_view=2,
            frame_window=32,
        )
        base.update(overrides)
        return cls(**base)


def twin_config(cfg: ModelConfig) -> ModelConfig:
    """The MAE baseline matching an LA variant (same everything, no LA module)."""
    if cfg.variant not in MAE_TWIN:
        raise ConfigError(f"{cfg.variant} has no MAE twin")
    return replace(cfg, variant=MAE_TWIN[cfg.variant])


# -- parameters ----------------------------------------------------------------
def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Pretraining parameters (no task head).  Each tensor draws from its own
    keyed stream, so shared names initialise identically across variants."""
    d, dd = cfg.encoder.embed_dim, cfg.decoder.embed_dim
    p = ModelParams()
    init_embed(p, seed, cfg.grid, d)
    init_stack(p, seed, "encoder", cfg.encoder)
    if cfg.has_la:
        if cfg.identity_embed:
            p["la.view_embed"] = Tensor(normal(seed, "la.view_embed", (cfg.views_per_study, d)), requires_grad=True)
            p["la.frame_embed"] = Tensor(normal(seed, "la.frame_embed", (cfg.slots, d)), requires_grad=True)
        init_stack(p, seed, "la", cfg.latent)
    add_linear(p, seed, "decoder.proj", d, dd)
    p["decoder.mask_token"] = Tensor(normal(seed, "decoder.mask_token", (dd,)), requires_grad=True)
    init_stack(p, seed, "decoder", cfg.decoder)
    add_linear(p, seed, "decoder.pred", dd, cfg.grid.patch_dim)
    return p.astype(cfg.np_dtype)


def init_head(params: ModelParams, cfg: ModelConfig, seed: int) -> ModelParams:
    """Add the 2-layer MLP head (hidden width = encoder width by default)."""
    d = cfg.encoder.embed_dim
    out = params.copy()
    head = ModelParams()
    add_linear(head, seed, "head.fc1", d, cfg.head_width)
    add_linear(head, seed, "head.fc2", cfg.head_width, cfg.num_outputs)
    out.update(head.astype(cfg.np_dtype))
    return out


def param_group(name: str) -> str:
    return name.split(".", 1)[0]


# -- token batches -------------------------------------------------------------
@dataclass
class TokenBatch:
    """Latent tokens of B studies with their (view, slot, patch) coordinates."""

    tokens: Tensor
    coords: np.ndarray
    study_ids: tuple = ()

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise DimensionError(f"TokenBatch tokens must be (B, N, D), got {self.tokens.shape}")
        if self.coords.shape != self.tokens.shape[:2] + (3,):
            raise IntegrityError(f"coords {self.coords.shape} do not match tokens {self.tokens.shape}")

    @property
    def num_studies(self) -> int:
        return self.tokens.shape[0]

    def validate(self) -> None:
        for b in range(self.num_studies):
            if np.unique(self.coords[b], axis=0).shape[0] != self.coords.shape[1]:
                raise IntegrityError(f"duplicate token coordinates in study {b}")


def _as_pixels(pixels: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Accept (B, V, F, H, W) or (B, V, F, C, H, W); return the 6-D form at model dtype."""
    arr = np.asarray(pixels, dtype=cfg.np_dtype)
    if arr.ndim == 5:
        arr = arr[:, :, :, None]
    if arr.ndim != 6:
        raise DimensionError(f"pixels must be (B, V, F, [C,] H, W), got {np.shape(pixels)}")
    return arr


def target_patches(pixels: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B, V, F, C, H, W) pixels -> (B, V, S, T, P) reconstruction targets."""
    arr = _as_pixels(pixels, cfg)
    if cfg.is_video:
        return tubify(arr, cfg.grid)
    return patchify(arr, cfg.grid)


def _positions(cfg: ModelConfig, dim: int) -> np.ndarray:
    """(S, T, dim) position table for one view."""
    g = cfg.grid
    if cfg.is_video:
        return sincos_3d(cfg.slots, g.side, dim).reshape(cfg.slots, g.tokens_per_frame, dim)
    return np.broadcast_to(sincos_2d(g.side, dim), (cfg.slots, g.tokens_per_frame, dim))


def _stack_plans(plans: list[MaskPlan], attr: str) -> np.ndarray:
    arrays = [getattr(p, attr) for p in plans]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise IntegrityError(f"plans in one batch disagree on {attr} shape: {sorted(shapes)}")
    return np.stack(arrays)


def encode_batch(pixels: np.ndarray, plans: list[MaskPlan], params: ModelParams, cfg: ModelConfig) -> TokenBatch:
    """Embed visible patches and run the encoder per frame (image) or per clip (video)."""
    patches = target_patches(pixels, cfg)  # (B, V, S, T, P)
    b, v, s, t, pdim = patches.shape
    if len(plans) != b:
        raise IntegrityError(f"{len(plans)} plans for {b} studies")
    for plan in plans:
        if plan.visible_idx.shape[:2] != (v, s) or plan.tokens_per_frame != t:
            raise IntegrityError(
                f"plan covers {plan.visible_idx.shape[:2]} x {plan.tokens_per_frame} tokens, "
                f"frames are {(v, s)} x {t}"
            )
    vis = _stack_plans(plans, "visible_idx")  # (B, V, S, K)
    k = vis.shape[-1]
    d = cfg.encoder.embed_dim
    selected = np.take_along_axis(patches, vis[..., None], axis=3)
    pos_table = _positions(cfg, d)
    pos = pos_table[np.arange(s)[None, None, :, None], vis]  # (B, V, S, K, D)
    if cfg.is_video:
        x = embed_tokens(selected.reshape(b * v, s * k, pdim), pos.reshape(b * v, s * k, d), params)
    else:
        x = embed_tokens(selected.reshape(b * v * s, k, pdim), pos.reshape(b * v * s, k, d), params)
    z = transformer_stack(x, cfg.encoder, params, "encoder")
    coords = np.stack([p.coords() for p in plans])
    return TokenBatch(z.reshape(b, v * s * k, d), coords)


def encode_study(pixels: np.ndarray, plan: MaskPlan, params: ModelParams, cfg: ModelConfig) -> TokenBatch:
    """Single-study form of :func:`encode_batch`; ``pixels`` is (V, F, [C,] H, W)."""
    return encode_batch(np.asarray(pixels)[None], [plan], params, cfg)


def latent_fuse(batch: TokenBatch, plans: list[MaskPlan], params: ModelParams, cfg: ModelConfig) -> TokenBatch:
    """Identity embeddings, latent masking, then joint attention over each study's tokens."""
    if not cfg.has_la:
        return batch
    b, n, d = batch.tokens.shape
    x = batch.tokens
    if cfg.identity_embed:
        x = x + T.embedding(params["la.view_embed"], batch.coords[..., 0])
        x = x + T.embedding(params["la.frame_embed"], batch.coords[..., 1])
    keeps = [p.latent_keep() for p in plans]
    if len({len(kp) for kp in keeps}) != 1:
        raise IntegrityError("studies in one batch keep different numbers of latent tokens")
    keep = np.stack(keeps)  # (B, Nk)
    if keep.shape[1] != n:
        rows = (np.arange(b)[:, None] * n + keep).reshape(-1)
        x = T.gather(x.reshape(b * n, d), rows).reshape(b, keep.shape[1], d)
        coords = np.take_along_axis(batch.coords, keep[..., None], axis=1)
    else:
        coords = batch.coords
    x = transformer_stack(x, cfg.latent, params, "la")
    return TokenBatch(x, coords, batch.study_ids)


def decode_and_reconstruct(
    fused: TokenBatch, plans: list[MaskPlan], params: ModelParams, cfg: ModelConfig
) -> Tensor:
    """Project to decoder width, re-insert mask tokens, decode, map to pixels.

    Returns per-token pixel predictions of shape (B, V, S, T, P).
    """
    b, nk, _ = fused.tokens.shape
    dd = cfg.decoder.embed_dim
    y = T.linear(fused.tokens, params["decoder.proj.w"], params["decoder.proj.b"])
    index = np.stack([restore_index(p) for p in plans])  # (B, V, S, T)
    _, v, s, t = index.shape
    index = np.where(index < 0, -1, index + (np.arange(b) * nk)[:, None, None, None])
    full = restore_from_index(
        y.reshape(b * nk, dd), index.reshape(b * v, s, t), params["decoder.mask_token"], _positions(cfg, dd)
    )  # (B*V, S, T, Dd)
    if cfg.is_video:
        h = transformer_stack(full.reshape(b * v, s * t, dd), cfg.decoder, params, "decoder")
    else:
        h = transformer_stack(full.reshape(b * v * s, t, dd), cfg.decoder, params, "decoder")
    pred = T.linear(h, params["decoder.pred.w"], params["decoder.pred.b"])
    return pred.reshape(b, v, s, t, cfg.grid.patch_dim)


def _normalise_patches(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def reconstruction_loss(target: np.ndarray, pred: Tensor, plans: list[MaskPlan], cfg: ModelConfig) -> Tensor:
    """Masked-patch reconstruction error averaged over views, frames and studies.

    ``target`` and ``pred`` are (B, V, S, T, P).  Each masked token contributes
    its mean squared pixel error with weight 1/(alpha_e * V * S), further
    divided by T under ``mean_masked``; the batch loss is the mean over studies.
    """
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"target {target.shape} vs prediction {pred.shape}")
    b, v, s, t, pdim = pred.shape
    masked = _stack_plans(plans, "masked_idx")  # (B, V, S, M)
    m = masked.shape[-1]
    if m == 0:
        raise ConfigError("reconstruction loss needs at least one masked token per frame")
    base = ((np.arange(b)[:, None, None] * v + np.arange(v)[None, :, None]) * s + np.arange(s)[None, None, :]) * t
    rows = base[..., None] + masked
    pm = T.gather(pred.reshape(b * v * s * t, pdim), rows)  # (B, V, S, M, P)
    tm = np.take_along_axis(target, masked[..., None], axis=3)
    if cfg.pixel_norm:
        tm = _normalise_patches(tm)
    diff = pm - tm
    per_patch = T.mean(diff * diff, axis=-1)  # (B, V, S, M)
    alphas = np.array([p.alpha_e for p in plans], dtype=np.float64)
    w = 1.0 / (alphas * v * s)
    if cfg.loss_norm == "mean_masked":
        w = w / t
    w = np.broadcast_to((w / b)[:, None, None, None], per_patch.shape).astype(pred.dtype)
    return T.tsum(per_patch * w)


def sample_plans(cfg: ModelConfig, study_keys: list, seed: int, epoch: int) -> list[MaskPlan]:
    """One plan per study from that study's own keyed masking stream."""
    return [
        sample_plan(
            cfg.views_per_study,
            cfg.slots,
            cfg.grid.tokens_per_frame,
            cfg.alpha_e,
            cfg.alpha_la,
            rngmod.stream(seed, rngmod.MASK, epoch, key),
            tube_mode=cfg.is_video,
        )
        for key in study_keys
    ]


def pretrain_loss(pixels: np.ndarray, plans: list[MaskPlan], params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Full pretraining path: encode, fuse, decode, masked loss."""
    z = encode_batch(pixels, plans, params, cfg)
    fused = latent_fuse(z, plans, params, cfg)
    pred = decode_and_reconstruct(fused, plans, params, cfg)
    return reconstruction_loss(target_patches(pixels, cfg), pred, plans, cfg)


# -- finetuning path -----------------------------------------------------------
def _set_mean(x: Tensor, axis: int) -> Tensor:
    return T.set_sum(x, axis) * (1.0 / x.shape[axis])


def pool_tokens(fused: TokenBatch, cfg: ModelConfig) -> Tensor:
    """Average latent tokens: frames within a view, then views, then patches.

    Requires the unmasked token grid.  Reductions are order-independent, so
    permuting views or frames leaves the result bit-identical.
    """
    b, n, d = fused.tokens.shape
    if n == 0:
        raise ConfigError("cannot pool an empty study")
    v, s, t = cfg.views_per_study, cfg.slots, cfg.grid.tokens_per_frame
    if n != v * s * t:
        raise IntegrityError(f"pooling expects the full {v}x{s}x{t} token grid, got {n} tokens")
    x = fused.tokens.reshape(b, v, s, t, d)
    x = _set_mean(x, axis=2)  # frames within each view
    x = _set_mean(x, axis=1)  # views
    return _set_mean(x, axis=1)  # patch tokens


def head_forward(pooled: Tensor, params: ModelParams) -> Tensor:
    h = T.gelu(T.linear(pooled, params["head.fc1.w"], params["head.fc1.b"]))
    return T.linear(h, params["head.fc2.w"], params["head.fc2.b"])


def pool_and_head(fused: TokenBatch, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """(B, num_outputs) logits or regression values."""
    return head_forward(pool_tokens(fused, cfg), params)


def finetune_features(pixels: np.ndarray, params: ModelParams, cfg: ModelConfig) -> TokenBatch:
    """Encoder + LA on unmasked frames (no encoder or latent masking)."""
    arr = _as_pixels(pixels, cfg)
    b = arr.shape[0]
    plans = [full_plan(cfg.views_per_study, cfg.slots, cfg.grid.tokens_per_frame) for _ in range(b)]
    z = encode_batch(arr, plans, params, cfg)
    return latent_fuse(z, plans, params, cfg)


def predict(pixels: np.ndarray, params: ModelParams, cfg: ModelConfig) -> Tensor:
    return pool_and_head(finetune_features(pixels, params, cfg), params, cfg)


# -- degeneracy check ----------------------------------------------------------
def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def assert_mae_equivalence(
    cfg_lamae: ModelConfig,
    cfg_mae: ModelConfig,
    seed: int,
    batch: int = 2,
    loss_tol: float = 1e-12,
    grad_tol: float = 1e-10,
) -> bool:
    """Check that an LA-free LAMAE matches its MAE twin in loss and gradients.

    Raises :class:`EquivalenceError` naming the first diverging tensor.
    """
    if MAE_TWIN.get(cfg_lamae.variant) != cfg_mae.variant:
        raise ConfigError(f"{cfg_lamae.variant} and {cfg_mae.variant} are not an LA/MAE pair")
    if cfg_lamae.latent.num_layers != 0 or cfg_lamae.alpha_la != 0.0 or cfg_lamae.identity_embed:
        raise ConfigError("equivalence needs LA layers = 0, alpha_la = 0 and identity embeddings off")
    cfg_lamae = replace(cfg_lamae, dtype="float64")
    cfg_mae = replace(cfg_mae, dtype="float64")

    pa = init_params(cfg_lamae, seed)
    pb = init_params(cfg_mae, seed)
    extra = pa.names() ^ pb.names()
    if extra:
        raise EquivalenceError(f"parameter names differ: {sorted(extra)}")
    for name in sorted(pa):
        if not np.array_equal(pa[name].data, pb[name].data):
            raise EquivalenceError(f"initial value of {name} differs")

    g = cfg_lamae.grid
    data_rng = rngmod.stream(seed, rngmod.DATA, "equivalence")
    pixels = data_rng.random((batch, cfg_lamae.views_per_study, cfg_lamae.frames_per_view, g.channels, g.image_size, g.image_size))
    keys = [f"study{i}" for i in range(batch)]
    plans_a = sample_plans(cfg_lamae, keys, seed, 0)
    plans_b = sample_plans(cfg_mae, keys, seed, 0)

    losses = []
    for params, cfg, plans in ((pa, cfg_lamae, plans_a), (pb, cfg_mae, plans_b)):
        params.zero_grad()
        loss = pretrain_loss(pixels, plans, params, cfg)
        loss.backward()
        losses.append(loss.item())
    la, lb = losses
    if abs(la - lb) > loss_tol * max(abs(la), abs(lb), 1e-300):
        raise EquivalenceError(f"loss differs: {la!r} vs {lb!r}")
    for name in sorted(pa):
        ga, gb = pa[name].grad, pb[name].grad
        if (ga is None) != (gb is None):
            raise EquivalenceError(f"gradient presence differs for {name}")
        if ga is not None and _rel_diff(ga, gb) > grad_tol:
            raise EquivalenceError(f"gradient of {name} differs (rel {_rel_diff(ga, gb):.3e})")
    return True
