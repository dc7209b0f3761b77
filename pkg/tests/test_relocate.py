import numpy as np
import pytest
import scipy.ndimage as ndi

from uvweave import (Correspondence, Field2, FlowConfig, FlowField, SceneConfig,
                     ValidationError, block_flow, gen_sequence, identity_correspondence,
                     init_correspondence, patch_fill, prune_mismatch, read_flo,
                     to_image_uv, write_flo)
from uvweave.fields import pixel_center_grid
from uvweave.relocate import _candidates, frame_zero_products, relocate_frame
from uvweave.warpmap import UVMap, texture_grid, warp


def noise_texture(h=96, w=96, seed=11):
    rng = np.random.default_rng(seed)
    tex = ndi.gaussian_filter(rng.uniform(0, 1, (h, w, 3)), (1.5, 1.5, 0))
    return (tex - tex.min()) / (tex.max() - tex.min())


def scene_pair(size=96):
    fs = gen_sequence(SceneConfig(image_w=size, image_h=size, tex_w=size,
                                  tex_h=size, frames=2, seed=5,
                                  amplitude=0.02, frequency=1.5))
    f0, f1 = fs.frames
    T_o, Q0 = frame_zero_products(f0.uv_gt, f0.image, size, size)
    g = texture_grid(f1.uv_gt, size, size)
    T_t = warp(f1.image, g)
    return fs, T_o, Q0, T_t, g, f1


def brute_single_level(a, b, radius, block):
    """Exhaustive single-level block search, first minimum wins."""
    offs = _candidates(radius)
    h, w = a.shape[:2]
    best_cost = np.full((h, w), np.inf)
    best = np.zeros((h, w, 2))
    for dy, dx in offs:
        ys = np.clip(np.arange(h) + dy, 0, h - 1)
        xs = np.clip(np.arange(w) + dx, 0, w - 1)
        d = a - b[ys[:, None], xs[None, :]]
        cost = ndi.uniform_filter(np.sum(d * d, axis=2), size=block, mode="nearest")
        upd = cost < best_cost - 1e-12
        best_cost = np.where(upd, cost, best_cost)
        best[upd] = (dy, dx)
    return best[..., ::-1]               # (dx, dy) texels


def test_flow_config_validation():
    with pytest.raises(ValidationError):
        FlowConfig(pyramid_levels=0)
    with pytest.raises(ValidationError):
        FlowConfig(block=1)
    with pytest.raises(ValidationError):
        FlowConfig(search_radius=0)


def test_flowfield_requires_two_channels():
    with pytest.raises(ValidationError, match="2 channels"):
        FlowField(Field2(np.zeros((4, 4, 1))))


def test_candidates_prefer_small_displacements():
    offs = _candidates(1)
    assert offs == [(0, 0), (-1, 0), (0, -1), (0, 1), (1, 0),
                    (-1, -1), (-1, 1), (1, -1), (1, 1)]


def test_block_flow_identical_is_zero():
    a = Field2(noise_texture())
    assert np.abs(block_flow(a, a).texels()).max() == 0.0


def test_block_flow_integer_shifts_exact():
    tex = noise_texture()
    a = Field2(tex)
    m = 16
    for s in ((0, 3), (3, -2), (6, -5)):     # last one needs the pyramid
        b = Field2(np.roll(tex, s, axis=(0, 1)))
        f = block_flow(a, b).texels()[m:-m, m:-m]
        assert np.abs(f - np.array([s[1], s[0]])).max() == 0.0


def test_block_flow_matches_single_level_oracle():
    tex = noise_texture()
    a = Field2(tex)
    b = Field2(0.7 * np.roll(tex, (3, -2), axis=(0, 1))
               + 0.3 * np.roll(tex, (4, -2), axis=(0, 1)))
    got = block_flow(a, b, FlowConfig(pyramid_levels=1, subpixel=False)).texels()
    want = brute_single_level(a.data, b.data, 4, 8)
    m = 12
    assert (got[m:-m, m:-m] == want[m:-m, m:-m]).all()


def test_block_flow_subpixel_refinement():
    tex = noise_texture()
    a = Field2(tex)
    b = Field2(0.7 * np.roll(tex, (3, -2), axis=(0, 1))
               + 0.3 * np.roll(tex, (4, -2), axis=(0, 1)))
    e = np.abs(block_flow(a, b).texels()[16:-16, 16:-16] - np.array([-2, 3.3]))
    assert e.max() < 0.3
    assert e.mean() < 0.08


def test_block_flow_pyramid_extends_range():
    tex = noise_texture()
    a = Field2(tex)
    b = Field2(np.roll(tex, (6, -5), axis=(0, 1)))
    single = block_flow(a, b, FlowConfig(pyramid_levels=1)).texels()[16:-16, 16:-16]
    assert np.linalg.norm(single - np.array([-5, 6]), axis=-1).min() > 0.5


def test_block_flow_noise_pair_bounded():
    rng = np.random.default_rng(3)
    a = Field2(rng.uniform(0, 1, (64, 64, 3)))
    b = Field2(rng.uniform(0, 1, (64, 64, 3)))
    f = block_flow(a, b).texels()
    # radius 4 per level over 3 levels: 4*(4+2+1), plus 0.5 subpixel
    assert np.abs(f).max() <= 28.5


def test_block_flow_errors():
    a = Field2(np.zeros((32, 32, 3)))
    with pytest.raises(ValidationError, match="resolution"):
        block_flow(a, Field2(np.zeros((32, 40, 3))))
    with pytest.raises(ValidationError, match="3 channels"):
        block_flow(Field2(np.zeros((32, 32, 2))), Field2(np.zeros((32, 32, 2))))


def test_flo_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    tex = np.round(rng.uniform(-6, 6, (12, 20, 2)) * 8) / 8   # f32-exact values
    flow = FlowField(Field2(tex / np.array([20.0, 12.0])))
    p = tmp_path / "f.flo"
    write_flo(p, flow)
    back = read_flo(p)
    assert back.width == 20 and back.height == 12
    assert (back.texels() == flow.texels()).all()


def test_read_flo_errors(tmp_path):
    p = tmp_path / "bad.flo"
    p.write_bytes(b"XXXX")
    with pytest.raises(ValidationError, match="magic"):
        read_flo(p)
    p.write_bytes(b"PIEH" + b"\x01\x00\x00\x00")
    with pytest.raises(ValidationError, match="header"):
        read_flo(p)
    p.write_bytes(b"PIEH" + np.array([0, 5], dtype="<i4").tobytes())
    with pytest.raises(ValidationError, match="header"):
        read_flo(p)
    good = b"PIEH" + np.array([4, 3], dtype="<i4").tobytes()
    p.write_bytes(good + b"\x00" * (4 * 3 * 8 - 8))
    with pytest.raises(ValidationError, match="data"):
        read_flo(p)


def test_init_correspondence_zero_flow_noop():
    Q0 = identity_correspondence(16, 12)
    Q0.valid[3:5, 3:5] = False
    out = init_correspondence(Q0, FlowField(Field2(np.zeros((12, 16, 2)))))
    assert (out.target.data == Q0.target.data).all()
    assert (out.valid == Q0.valid).all()


def test_init_correspondence_constant_shift():
    Q0 = identity_correspondence(16, 16)
    d = np.array([2.0 / 16, -1.0 / 16])
    out = init_correspondence(Q0, FlowField(Field2(np.full((16, 16, 2), d))))
    want = pixel_center_grid(16, 16) + d
    inner = out.target.data[2:-2, 2:-2]
    assert np.allclose(inner, want[2:-2, 2:-2], atol=1e-12)


def test_init_correspondence_resolution_error():
    Q0 = identity_correspondence(16, 16)
    with pytest.raises(ValidationError, match="resolution"):
        init_correspondence(Q0, FlowField(Field2(np.zeros((8, 8, 2)))))


def test_flow_derived_correspondence_accuracy():
    _, T_o, Q0, T_t, g, f1 = scene_pair()
    flow = block_flow(T_t, T_o)
    Qr = init_correspondence(Q0, flow)
    Qr.valid &= g.coverage > 0
    gt = f1.corr_gt
    both = Qr.valid & gt.valid
    er = np.linalg.norm((Qr.target.data - gt.target.data) * 96, axis=-1)[both]
    assert er.mean() < 1.0
    Qc = prune_mismatch(Qr, T_o, T_t, 0.05)
    bothc = Qc.valid & gt.valid
    ec = np.linalg.norm((Qc.target.data - gt.target.data) * 96, axis=-1)[bothc]
    assert (ec <= 1.0).mean() >= 0.95


def test_prune_mismatch_rules():
    tex = noise_texture(32, 32)
    T = Field2(tex)
    Q = identity_correspondence(32, 32)
    kept = prune_mismatch(Q, T, T, 0.05)
    assert (kept.valid == Q.valid).all()         # exact match: nothing pruned
    bad = tex.copy()
    bad[8:16, 8:16] += 0.5
    pruned = prune_mismatch(Q, T, Field2(np.clip(bad, 0, 1)), 0.05)
    assert not pruned.valid[10:14, 10:14].any()
    assert pruned.valid[0:4, 0:4].all()
    with pytest.raises(ValidationError, match="tau"):
        prune_mismatch(Q, T, T, -0.1)
    with pytest.raises(ValidationError, match="resolution"):
        prune_mismatch(Q, T, Field2(np.zeros((8, 8, 3))), 0.05)


def test_prune_monotone_in_tau():
    _, T_o, Q0, T_t, g, _ = scene_pair()
    flow = block_flow(T_t, T_o)
    Qr = init_correspondence(Q0, flow)
    Qr.valid &= g.coverage > 0
    small = prune_mismatch(Qr, T_o, T_t, 0.01)
    large = prune_mismatch(Qr, T_o, T_t, 0.10)
    assert not (small.valid & ~large.valid).any()
    zero = prune_mismatch(Qr, T_o, T_t, 0.0)
    assert zero.valid.sum() < 0.05 * Qr.valid.sum()


def test_patch_fill_noop_and_self_match():
    tex = noise_texture(48, 48)
    T = Field2(tex)
    Q0 = identity_correspondence(48, 48)
    out = patch_fill(Q0.copy(), T, T, Q0)
    assert (out.target.data == Q0.target.data).all()
    assert out.valid.all()
    holed = Q0.copy()
    holed.valid[20:28, 20:28] = False
    filled = patch_fill(holed, T, T, Q0)
    assert filled.valid.all()
    # identical textures: the best tile is the tile itself, fill == Q0
    assert np.allclose(filled.target.data, Q0.target.data, atol=1e-12)


def test_patch_fill_never_modifies_valid():
    _, T_o, Q0, T_t, g, _ = scene_pair()
    Qr = init_correspondence(Q0, block_flow(T_t, T_o))
    Qr.valid &= g.coverage > 0
    rng = np.random.default_rng(0)
    Qp = Qr.copy()
    Qp.valid &= rng.uniform(size=Qp.valid.shape) >= 0.2
    out = patch_fill(Qp, T_o, T_t, Q0, domain=g.coverage > 0)
    assert (out.target.data[Qp.valid] == Qp.target.data[Qp.valid]).all()
    assert (out.valid & Qp.valid).sum() == Qp.valid.sum()
    assert (out.valid | ~(g.coverage > 0).reshape(out.valid.shape)).all()


def test_patch_fill_pruned_scene_accuracy():
    _, T_o, Q0, T_t, g, f1 = scene_pair()
    Qr = init_correspondence(Q0, block_flow(T_t, T_o))
    Qr.valid &= g.coverage > 0
    rng = np.random.default_rng(0)
    drop = rng.uniform(size=Qr.valid.shape) < 0.2
    Qp = Qr.copy()
    Qp.valid &= ~drop
    out = patch_fill(Qp, T_o, T_t, Q0, domain=g.coverage > 0)
    gt = f1.corr_gt
    filled = out.valid & drop & (g.coverage > 0).reshape(out.valid.shape) & gt.valid
    e = np.linalg.norm((out.target.data - gt.target.data) * 96, axis=-1)[filled]
    assert (e <= 1.5).mean() >= 0.90


def test_patch_fill_config_errors():
    Q = identity_correspondence(16, 16)
    T = Field2(np.zeros((16, 16, 3)))
    with pytest.raises(ValidationError, match="patch"):
        patch_fill(Q, T, T, Q, patch=0)
    with pytest.raises(ValidationError, match="patch"):
        patch_fill(Q, T, T, Q, window=0)


def test_to_image_uv_identity_and_shift():
    fs, T_o, Q0, _, _, f1 = scene_pair()
    P = f1.uv_gt
    ident = identity_correspondence(96, 96)
    back = to_image_uv(ident, P)
    sil = P.silhouette
    assert np.allclose(back.uv.data[sil], P.uv.data[sil], atol=1e-9)
    assert (back.uv.data[~sil] == 0.0).all()
    d = np.array([3.0 / 96, -2.0 / 96])
    shifted = Correspondence(Field2(ident.target.data + d), ident.valid)
    out = to_image_uv(shifted, P)
    assert np.allclose(out.uv.data[sil], P.uv.data[sil] - d, atol=1e-9)


def test_frame_zero_products_and_self_relocation():
    fs, T_o, Q0, _, _, _ = scene_pair()
    f0 = fs.frames[0]
    assert (Q0.target.data == pixel_center_grid(96, 96)).all()
    g0 = texture_grid(f0.uv_gt, 96, 96)
    assert (Q0.valid == (g0.coverage > 0).reshape(96, 96)).all()
    P_f, Qt, flow, T_t = relocate_frame(f0.uv_gt, f0.image, T_o, Q0)
    assert (T_t.data == T_o.data).all()
    assert np.abs(flow.texels()[Q0.valid]).max() == 0.0
    assert np.allclose(Qt.target.data[Qt.valid & Q0.valid],
                       Q0.target.data[Qt.valid & Q0.valid], atol=1e-12)
    sil = f0.uv_gt.silhouette
    assert np.allclose(P_f.uv.data[sil], f0.uv_gt.uv.data[sil], atol=1e-9)
