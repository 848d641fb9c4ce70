import dataclasses

import numpy as np
import pytest

from anchormae import imageset as ims
from anchormae import masking, model
from anchormae import numerics as nm
from anchormae.errors import InvalidArgument
from helpers import finite_diff_grad, grad_matches

GEN = ims.GeneratorConfig(seed=21, input_size=16, max_sim_ratio=4)
CFG = model.ModelConfig(patch_size=8, embed_dim=16, depth=1, heads=2,
                        decoder_dim=8, decoder_depth=1, mlp_ratio=2, geo_mode="full_gem")


def make_input(location_id=0, kind=ims.SetKind.GFS2, seed=0):
    image_set = ims.assemble_set(location_id, kind, GEN)
    return ims.sample_training_input(image_set, np.random.default_rng(seed))


def make_forward(inp, cfg=CFG, seed=3, ratio=0.75):
    rng = np.random.default_rng(seed)
    metas = inp.metas
    anchor = masking.choose_anchor(metas, rng)
    plan = masking.plan_masks(metas, anchor, 4, ratio, rng)
    bands = masking.select_bands([ims.get_source(m.source) for m in metas], rng)
    params = model.init_params(cfg, np.random.default_rng(seed + 1))
    return plan, bands, params


def test_patchify_counts():
    img = np.arange(64 * 64 * 3, dtype=np.float64).reshape(64, 64, 3)
    patches = model.patchify(img, 8)
    assert patches.shape == (64, 192)


def test_patchify_constant_image():
    patches = model.patchify(np.full((16, 16, 3), 2.0), 8)
    assert np.all(patches == patches[0])


def test_unpatchify_inverts_patchify():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(24, 24, 3))
    back = model.unpatchify(model.patchify(img, 8), 8, 24, 24)
    assert np.array_equal(back, img)


def test_patchify_rejects_indivisible():
    with pytest.raises(InvalidArgument):
        model.patchify(np.zeros((20, 20, 3)), 8)


def test_band_groups():
    assert model.band_groups(3) == [(0, 1, 2)]
    assert model.band_groups(4) == [(0, 1, 2), (3, 3, 3)]
    assert model.band_groups(7) == [(0, 1, 2), (3, 4, 5), (6, 6, 6)]
    assert len(model.band_groups(12)) == 4
    with pytest.raises(InvalidArgument):
        model.band_groups(2)


def test_forward_loss_finite_nonnegative():
    inp = make_input()
    plan, bands, params = make_forward(inp)
    loss = model.forward_pretrain(inp, plan, bands, CFG, params)
    assert loss.shape == ()
    assert np.isfinite(loss.item()) and loss.item() >= 0


def test_zeroed_params_loss_is_masked_target_power():
    inp = make_input(1)
    plan, bands, params = make_forward(inp)
    for p in params.values():
        p.data[...] = 0.0
    loss, aux = model.forward_outputs(inp, plan, bands, CFG, params)
    assert np.array_equal(aux["pred"], np.zeros_like(aux["pred"]))
    masked = aux["row_mask"].astype(bool)
    expected = (aux["targets"][masked] ** 2).mean()
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_loss_depends_only_on_masked_targets():
    inp = make_input(2)
    plan, bands, params = make_forward(inp)
    loss, aux = model.forward_outputs(inp, plan, bands, CFG, params)
    pred, targets, row_mask = aux["pred"], aux["targets"], aux["row_mask"]
    visible = ~row_mask.astype(bool)
    bumped = targets.copy()
    bumped[visible] += 123.0
    same = nm.mse(nm.Tensor(pred), bumped, row_mask).item()
    assert same == pytest.approx(loss.item(), rel=1e-12)
    bumped2 = targets.copy()
    bumped2[row_mask.astype(bool)] += 1.0
    assert nm.mse(nm.Tensor(pred), bumped2, row_mask).item() != pytest.approx(
        loss.item(), rel=1e-9)


def test_forward_rejects_plan_mismatch():
    inp = make_input(3)
    plan, bands, params = make_forward(inp)
    bad = masking.plan_masks(inp.metas, plan.anchor_index, 16, 0.75,
                             np.random.default_rng(0))
    with pytest.raises(InvalidArgument):
        model.forward_pretrain(inp, bad, bands, CFG, params)


def test_forward_gradients_match_finite_differences():
    inp = make_input(4)
    plan, bands, params = make_forward(inp)

    def run(leaves):
        return model.forward_pretrain(inp, plan, bands, CFG, leaves).item()

    with nm.Tape() as tape:
        loss = model.forward_pretrain(inp, plan, bands, CFG, params)
        tape.backward(loss)
    for name in ("patch_embed.b", "mask_token", "dec_embed.b"):
        fd = finite_diff_grad(run, params, name)
        assert grad_matches(params[name].grad, fd), name


def test_encode_deterministic_and_stable():
    inp = make_input(5)
    plan, bands, params = make_forward(inp)
    img3 = inp.images[1].select_bands(bands[1])
    a = model.encode(img3, CFG, params)
    b = model.encode(img3, CFG, params)
    assert np.array_equal(a, b)
    assert a.shape == (CFG.embed_dim,)
    twin = ims.Image(img3.meta, img3.pixels.copy())
    assert np.array_equal(model.encode(twin, CFG, params), a)


def test_encode_rejects_wrong_band_count():
    inp = make_input(6)
    _, _, params = make_forward(inp)
    with pytest.raises(InvalidArgument):
        model.encode(inp.images[0], CFG, params)  # raw bands, not 3


def test_encode_pooling_is_permutation_invariant():
    inp = make_input(7)
    plan, bands, params = make_forward(inp)
    img3 = inp.images[0].select_bands(bands[0])
    tokens = model._embed_image_tokens(img3.pixels, img3.meta, 0, params, CFG,
                                       with_geo=False)
    perm = np.random.default_rng(0).permutation(tokens.shape[0])
    pooled = nm.mean(model._run_encoder(tokens, params, CFG), axis=0).data
    pooled_perm = nm.mean(model._run_encoder(nm.gather(tokens, perm), params, CFG),
                          axis=0).data
    assert np.allclose(pooled, pooled_perm, atol=1e-10)


def test_multiband_reduces_to_encode_for_three_bands():
    inp = make_input(8)
    plan, bands, params = make_forward(inp)
    img3 = inp.images[2].select_bands((0, 1, 2))
    assert np.allclose(model.multiband_tokenize(img3, CFG, params),
                       model.encode(img3, CFG, params), atol=1e-12)


def test_multiband_handles_all_source_band_counts():
    inp = make_input(9, kind=ims.SetKind.S2L8_CITY)
    _, _, params = make_forward(inp)
    for img in inp.images:
        feats = model.multiband_tokenize(img, CFG, params)
        assert feats.shape == (CFG.embed_dim,)
        assert np.all(np.isfinite(feats))


def test_geo_mode_none_ignores_geo_metadata():
    cfg = dataclasses.replace(CFG, geo_mode="none")
    inp = make_input(10)
    plan, bands, _ = make_forward(inp)
    params = model.init_params(cfg, np.random.default_rng(0))
    moved = []
    for img in inp.images:
        geo2 = dataclasses.replace(img.meta.geo, gsd_m=img.meta.geo.gsd_m * 3)
        moved.append(ims.Image(dataclasses.replace(img.meta, geo=geo2), img.pixels))
    inp2 = ims.TrainingInput(images=moved, set_ref=inp.set_ref, kind=inp.kind)
    a = model.forward_pretrain(inp, plan, bands, cfg, params).item()
    b = model.forward_pretrain(inp2, plan, bands, cfg, params).item()
    assert a == b


def test_full_gem_scales_posenc_with_gsd():
    inp = make_input(11)
    meta10 = dataclasses.replace(inp.images[0].meta,
                                 geo=dataclasses.replace(inp.images[0].meta.geo, gsd_m=10.0))
    meta30 = dataclasses.replace(inp.images[0].meta,
                                 geo=dataclasses.replace(inp.images[0].meta.geo, gsd_m=30.0))
    a = model._posenc(meta10, 4, CFG.embed_dim, CFG, with_geo=True)
    b = model._posenc(meta30, 4, CFG.embed_dim, CFG, with_geo=True)
    assert not np.allclose(a, b)
    # and with geo disabled they coincide
    assert np.array_equal(model._posenc(meta10, 4, CFG.embed_dim, CFG, with_geo=False),
                          model._posenc(meta30, 4, CFG.embed_dim, CFG, with_geo=False))


def _block_params(dim, mlp_ratio):
    return (4 + 2 * mlp_ratio) * dim * dim + (9 + mlp_ratio) * dim


@pytest.mark.parametrize("geo_mode", ["none", "one_hot", "scale_only", "full_gem"])
def test_parameter_count_closed_form(geo_mode):
    cfg = dataclasses.replace(CFG, geo_mode=geo_mode)
    e, d, p = cfg.embed_dim, cfg.decoder_dim, cfg.patch_len
    expected = (
        p * e + e                      # patch embed
        + 4 * e + 3 * e                # source + time tables
        + cfg.depth * _block_params(e, cfg.mlp_ratio) + 2 * e
        + e * d + d + d                # decoder embed + mask token
        + 4 * d + 3 * d                # decoder source + time tables
        + cfg.decoder_depth * _block_params(d, cfg.mlp_ratio) + 2 * d
        + d * p + p                    # prediction head
    )
    if geo_mode == "full_gem":
        expected += 240 * e + 240 * d
    elif geo_mode == "one_hot":
        expected += cfg.one_hot_bins**2 * (e + d)
    assert model.parameter_count(cfg) == expected


def test_model_config_validation():
    with pytest.raises(InvalidArgument):
        model.ModelConfig(geo_mode="learned")
    with pytest.raises(InvalidArgument):
        model.ModelConfig(embed_dim=30, heads=4)
    with pytest.raises(InvalidArgument):
        model.ModelConfig(decoder_dim=30)
