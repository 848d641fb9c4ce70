"""Toy masked-autoencoder transformer over 3-image training inputs.

All visible patches of the three images are embedded into one joint sequence
(per-image ground-scaled positional encodings, geographic embeddings per
``geo_mode``, and learned source/time-slot embeddings) so the encoder can
route complementary information across sources and times. The decoder sees
encoder outputs plus mask tokens at every image's masked positions and
reconstructs normalized pixels; the loss averages squared error over masked
patches only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import InvalidArgument
from .geo import PADDED_BITS, PosencConfig, corner_bit_vector, one_hot_geo_encoding, scaled_posenc
from .imageset import SOURCES, Image, TrainingInput
from .masking import MaskPlan

GEO_MODES = ("none", "one_hot", "scale_only", "full_gem")
SOURCE_IDS = tuple(sorted(SOURCES))  # gf1like, gf2like, l8like, s2like


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    decoder_dim: int = 32
    decoder_depth: int = 1
    mlp_ratio: int = 4
    geo_mode: str = "full_gem"
    one_hot_bins: int = 6
    reference_gsd: float = 1.0
    posenc_base: float = 10000.0
    n_time_slots: int = 3

    def __post_init__(self):
        if self.geo_mode not in GEO_MODES:
            raise InvalidArgument(f"geo_mode {self.geo_mode!r} not in {GEO_MODES}")
        if self.embed_dim % self.heads:
            raise InvalidArgument(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        for dim, name in ((self.embed_dim, "embed_dim"), (self.decoder_dim, "decoder_dim")):
            if dim % 4:
                raise InvalidArgument(f"{name} {dim} must be a multiple of 4 for the posenc")

    @property
    def patch_len(self) -> int:
        return self.patch_size * self.patch_size * 3

    def posenc_cfg(self, dim: int) -> PosencConfig:
        return PosencConfig(embed_dim=dim, reference_gsd=self.reference_gsd,
                            base=self.posenc_base)


def patchify(image, patch_size: int) -> np.ndarray:
    """Split (H, W, 3) pixels into (N, patch_size^2 * 3) row-major patch vectors."""
    pixels = image.pixels if isinstance(image, Image) else np.asarray(image)
    h, w, c = pixels.shape
    if h % patch_size or w % patch_size:
        raise InvalidArgument(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    patches = pixels.reshape(gh, patch_size, gw, patch_size, c)
    return patches.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * c)


def unpatchify(patches: np.ndarray, patch_size: int, h: int, w: int) -> np.ndarray:
    gh, gw = h // patch_size, w // patch_size
    c = patches.shape[1] // (patch_size * patch_size)
    grid = patches.reshape(gh, gw, patch_size, patch_size, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape(h, w, c)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, nm.Tensor]:
    """Fresh parameter dict; insertion order fixes the checkpoint framing."""
    params: dict[str, nm.Tensor] = {}

    def param(name, shape, scale=0.02):
        params[name] = nm.Tensor(rng.normal(size=shape) * scale, requires_grad=True)

    def zeros(name, shape):
        params[name] = nm.Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, shape):
        params[name] = nm.Tensor(np.ones(shape), requires_grad=True)

    def block(prefix, dim):
        ones(f"{prefix}.ln1.g", (dim,))
        zeros(f"{prefix}.ln1.b", (dim,))
        for w in ("wq", "wk", "wv", "wo"):
            param(f"{prefix}.attn.{w}", (dim, dim))
            zeros(f"{prefix}.attn.{w}b", (dim,))
        ones(f"{prefix}.ln2.g", (dim,))
        zeros(f"{prefix}.ln2.b", (dim,))
        param(f"{prefix}.mlp.w1", (dim, dim * cfg.mlp_ratio))
        zeros(f"{prefix}.mlp.b1", (dim * cfg.mlp_ratio,))
        param(f"{prefix}.mlp.w2", (dim * cfg.mlp_ratio, dim))
        zeros(f"{prefix}.mlp.b2", (dim,))

    param("patch_embed.w", (cfg.patch_len, cfg.embed_dim))
    zeros("patch_embed.b", (cfg.embed_dim,))
    param("src_embed", (len(SOURCE_IDS), cfg.embed_dim))
    param("time_embed", (cfg.n_time_slots, cfg.embed_dim))
    if cfg.geo_mode == "full_gem":
        param("geo_proj", (PADDED_BITS, cfg.embed_dim))
        param("dec_geo_proj", (PADDED_BITS, cfg.decoder_dim))
    elif cfg.geo_mode == "one_hot":
        param("onehot_proj", (cfg.one_hot_bins**2, cfg.embed_dim))
        param("dec_onehot_proj", (cfg.one_hot_bins**2, cfg.decoder_dim))
    for i in range(cfg.depth):
        block(f"enc{i}", cfg.embed_dim)
    ones("enc_norm.g", (cfg.embed_dim,))
    zeros("enc_norm.b", (cfg.embed_dim,))

    param("dec_embed.w", (cfg.embed_dim, cfg.decoder_dim))
    zeros("dec_embed.b", (cfg.decoder_dim,))
    param("mask_token", (1, cfg.decoder_dim))
    param("dec_src_embed", (len(SOURCE_IDS), cfg.decoder_dim))
    param("dec_time_embed", (cfg.n_time_slots, cfg.decoder_dim))
    for i in range(cfg.decoder_depth):
        block(f"dec{i}", cfg.decoder_dim)
    ones("dec_norm.g", (cfg.decoder_dim,))
    zeros("dec_norm.b", (cfg.decoder_dim,))
    param("pred.w", (cfg.decoder_dim, cfg.patch_len))
    zeros("pred.b", (cfg.patch_len,))
    return params


def parameter_count(cfg: ModelConfig) -> int:
    return sum(p.size for p in init_params(cfg, np.random.default_rng(0)).values())


def _row(table: nm.Tensor, index: int, dim: int) -> nm.Tensor:
    return nm.reshape(nm.gather(table, [index]), (dim,))


def _affine_ln(x: nm.Tensor, params, prefix: str) -> nm.Tensor:
    return nm.layernorm(x) * params[f"{prefix}.g"] + params[f"{prefix}.b"]


def _attention(x: nm.Tensor, params, prefix: str, heads: int) -> nm.Tensor:
    t, dim = x.shape
    dh = dim // heads

    def proj(w):
        return x @ params[f"{prefix}.{w}"] + params[f"{prefix}.{w}b"]

    def split(z):
        return nm.transpose(nm.reshape(z, (t, heads, dh)), (1, 0, 2))

    q, k, v = split(proj("wq")), split(proj("wk")), split(proj("wv"))
    scores = nm.matmul(q, nm.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    ctx = nm.matmul(nm.softmax(scores, axis=-1), v)
    merged = nm.reshape(nm.transpose(ctx, (1, 0, 2)), (t, dim))
    return merged @ params[f"{prefix}.wo"] + params[f"{prefix}.wob"]


def _block(x: nm.Tensor, params, prefix: str, heads: int) -> nm.Tensor:
    x = x + _attention(_affine_ln(x, params, f"{prefix}.ln1"), params, f"{prefix}.attn", heads)
    h = _affine_ln(x, params, f"{prefix}.ln2")
    h = nm.gelu(h @ params[f"{prefix}.mlp.w1"] + params[f"{prefix}.mlp.b1"])
    return x + (h @ params[f"{prefix}.mlp.w2"] + params[f"{prefix}.mlp.b2"])


def _run_encoder(tokens: nm.Tensor, params, cfg: ModelConfig) -> nm.Tensor:
    x = tokens
    for i in range(cfg.depth):
        x = _block(x, params, f"enc{i}", cfg.heads)
    return _affine_ln(x, params, "enc_norm")


def _geo_vector(meta, cfg: ModelConfig) -> np.ndarray | None:
    if cfg.geo_mode == "full_gem":
        return corner_bit_vector(meta.geo)
    if cfg.geo_mode == "one_hot":
        return one_hot_geo_encoding(meta.geo, cfg.one_hot_bins)
    return None


def _geo_proj_name(cfg: ModelConfig, decoder: bool) -> str:
    base = "geo_proj" if cfg.geo_mode == "full_gem" else "onehot_proj"
    return f"dec_{base}" if decoder else base


def _posenc(meta, grid: int, dim: int, cfg: ModelConfig, with_geo: bool) -> np.ndarray:
    scaled = with_geo and cfg.geo_mode in ("scale_only", "full_gem")
    gsd = meta.geo.gsd_m if scaled else cfg.reference_gsd
    return scaled_posenc(grid, grid, gsd, cfg.posenc_cfg(dim))


def _time_slots(metas) -> dict[int, int]:
    return {t: i for i, t in enumerate(sorted({m.time for m in metas}))}


def _embed_image_tokens(pixels3: np.ndarray, meta, time_slot: int, params,
                        cfg: ModelConfig, with_geo: bool) -> nm.Tensor:
    patches = nm.Tensor(patchify(pixels3, cfg.patch_size))
    grid = pixels3.shape[0] // cfg.patch_size
    tok = patches @ params["patch_embed.w"] + params["patch_embed.b"]
    tok = tok + nm.Tensor(_posenc(meta, grid, cfg.embed_dim, cfg, with_geo))
    if with_geo:
        vec = _geo_vector(meta, cfg)
        if vec is not None:
            proj = params[_geo_proj_name(cfg, decoder=False)]
            tok = tok + nm.reshape(nm.Tensor(vec[None, :]) @ proj, (cfg.embed_dim,))
    tok = tok + _row(params["src_embed"], SOURCE_IDS.index(meta.source), cfg.embed_dim)
    tok = tok + _row(params["time_embed"], time_slot, cfg.embed_dim)
    return tok


def forward_outputs(inp: TrainingInput, plan: MaskPlan, bands, cfg: ModelConfig,
                    params) -> tuple[nm.Tensor, dict]:
    """Loss tensor plus an aux dict (pred/targets/row_mask) for bookkeeping."""
    sizes = {img.pixels.shape[0] for img in inp.images}
    if len(sizes) != 1:
        raise InvalidArgument(f"images must share one size, got {sorted(sizes)}")
    size = sizes.pop()
    n = (size // cfg.patch_size) ** 2
    if plan.n_patches != n:
        raise InvalidArgument(
            f"plan covers {plan.n_patches} patches but images patchify to {n}")
    for img, band in zip(inp.images, bands):
        if len(band) != 3 or max(band) >= img.n_bands:
            raise InvalidArgument(f"band selection {band} invalid for {img.n_bands} bands")
    slots = _time_slots(inp.metas)

    selected = [img.pixels[:, :, list(band)] for img, band in zip(inp.images, bands)]
    visible_tokens = []
    for j, (pixels3, img) in enumerate(zip(selected, inp.images)):
        tok = _embed_image_tokens(pixels3, img.meta, slots[img.meta.time], params,
                                  cfg, with_geo=True)
        visible_tokens.append(nm.gather(tok, sorted(plan.visible[j])))
    encoded = _run_encoder(nm.concat(visible_tokens, axis=0), params, cfg)
    dec_tok = encoded @ params["dec_embed.w"] + params["dec_embed.b"]

    grid = size // cfg.patch_size
    offset = 0
    dec_images = []
    for j, img in enumerate(inp.images):
        vis = sorted(plan.visible[j])
        msk = sorted(plan.masked[j])
        enc_part = nm.slice_rows(dec_tok, offset, offset + len(vis))
        offset += len(vis)
        fill = nm.Tensor(np.ones((len(msk), 1))) @ params["mask_token"]
        combined = nm.concat([enc_part, fill], axis=0)
        order = np.empty(n, dtype=np.intp)
        order[vis] = np.arange(len(vis))
        order[msk] = len(vis) + np.arange(len(msk))
        full = nm.gather(combined, order)
        full = full + nm.Tensor(_posenc(img.meta, grid, cfg.decoder_dim, cfg, with_geo=True))
        vec = _geo_vector(img.meta, cfg)
        if vec is not None:
            proj = params[_geo_proj_name(cfg, decoder=True)]
            full = full + nm.reshape(nm.Tensor(vec[None, :]) @ proj, (cfg.decoder_dim,))
        full = full + _row(params["dec_src_embed"], SOURCE_IDS.index(img.meta.source),
                           cfg.decoder_dim)
        full = full + _row(params["dec_time_embed"], slots[img.meta.time], cfg.decoder_dim)
        dec_images.append(full)

    x = nm.concat(dec_images, axis=0)
    for i in range(cfg.decoder_depth):
        x = _block(x, params, f"dec{i}", cfg.heads)
    pred = _affine_ln(x, params, "dec_norm") @ params["pred.w"] + params["pred.b"]

    targets = np.concatenate([patchify(p, cfg.patch_size) for p in selected], axis=0)
    row_mask = np.zeros(3 * n)
    for j in range(3):
        row_mask[j * n + np.fromiter(plan.masked[j], dtype=np.intp)] = 1.0
    loss = nm.mse(pred, targets, row_mask)
    return loss, {"pred": pred.data, "targets": targets, "row_mask": row_mask}


def forward_pretrain(inp: TrainingInput, plan: MaskPlan, bands, cfg: ModelConfig,
                     params) -> nm.Tensor:
    """Masked-reconstruction loss over all three images (scalar tensor)."""
    return forward_outputs(inp, plan, bands, cfg, params)[0]


def _pooled_features(groups: list[tuple[np.ndarray, object]], metas_time_slot: int,
                     params, cfg: ModelConfig, with_geo: bool) -> np.ndarray:
    token_blocks = [
        _embed_image_tokens(pix, meta, metas_time_slot, params, cfg, with_geo)
        for pix, meta in groups
    ]
    encoded = _run_encoder(nm.concat(token_blocks, axis=0), params, cfg)
    return nm.mean(encoded, axis=0).data


def encode(image: Image, cfg: ModelConfig, params, with_geo: bool = False) -> np.ndarray:
    """Mean-pooled encoder features of one 3-band image, no masking."""
    if image.n_bands != 3:
        raise InvalidArgument(
            f"encode expects 3 bands, got {image.n_bands}; use multiband_tokenize")
    return _pooled_features([(image.pixels, image.meta)], 0, params, cfg, with_geo)


def band_groups(n_bands: int) -> list[tuple[int, int, int]]:
    """Consecutive 3-band groups; a short final group repeats its last band."""
    if n_bands < 3:
        raise InvalidArgument(f"band grouping needs >= 3 bands, got {n_bands}")
    return [tuple(min(start + i, n_bands - 1) for i in range(3))
            for start in range(0, n_bands, 3)]


def multiband_tokenize(image: Image, cfg: ModelConfig, params,
                       with_geo: bool = False) -> np.ndarray:
    """Frozen-feature path for C >= 3 bands: 3-band sub-images, concatenated tokens.

    All groups' token sequences feed the encoder as one sequence and the
    result is mean-pooled; C = 3 reduces to ``encode``.
    """
    groups = [(image.pixels[:, :, list(idx)], image.meta)
              for idx in band_groups(image.n_bands)]
    return _pooled_features(groups, 0, params, cfg, with_geo)
