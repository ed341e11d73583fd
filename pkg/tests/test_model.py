import numpy as np
import pytest

from mclcr import tensor as T
from mclcr.gradcheck import grad_check
from mclcr.losses import ce_loss, combined_loss, supcon_loss
from mclcr.model import ModelConfig, forward, forward_batch, init_model, prepare_inputs
from mclcr.synth import gen_real
from mclcr.tensor import Tensor

TINY = dict(image_size=32, patch=8, backbone_scale=16, fusion_dim=24, proj_dim=6)
# no pooling: central differences with eps=1e-3 would otherwise straddle max-pool ties
SMOOTH = dict(TINY, backbone_scale=4, backbone_pool=False, dropout=0.0)


def images(n, size=32, seed=0):
    return [gen_real(size, size, seed + i, P=8) for i in range(n)]


def test_fusion_width_paper_and_desk():
    paper = ModelConfig.paper()
    assert paper.segment_sizes() == {"ssf_b1": 64, "ssf_b2": 128, "ssf_b3": 256, "gf": 1024, "af": 256, "pf": 256}
    assert paper.fusion_in == 1984 and paper.n_patches == 256 and paper.embed_dim == 256
    assert ModelConfig().fusion_in == 496


def test_paper_scale_forward_shapes():
    cfg = ModelConfig.paper()
    st = init_model(cfg, 0)
    with T.no_grad():
        out = forward_batch(prepare_inputs([gen_real(256, 256, 1, P=16)], 16), st)
    assert out.f_mm.shape == (1, 1984) and out.f_e.shape == (1, 1024) and out.z.shape == (1, 128)


def test_config_validation():
    for bad in (dict(image_size=60), dict(heads=3), dict(alpha=1.5), dict(attention_scale="x"),
                dict(supcon_reduction="x"), dict(ssrb_taps=(1, 5)), dict(ssrb_taps=(1, 1)), dict(dropout=1.0)):
        with pytest.raises(ValueError):
            ModelConfig(**bad)


def test_eval_forward_deterministic():
    st = init_model(ModelConfig(**TINY), 3)
    img = images(1)[0]
    a, b = forward(img, st), forward(img, st)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]
    assert 0.0 < a[2] < 1.0 and abs(np.linalg.norm(a[1]) - 1) < 1e-12


def test_training_mode_uses_dropout():
    st = init_model(ModelConfig(**TINY), 3)
    inp = prepare_inputs(images(2), 8)
    a = forward_batch(inp, st, training=True, rng=np.random.default_rng(0))
    b = forward_batch(inp, st, training=False)
    assert np.array_equal(a.f_e.data, b.f_e.data)  # dropout acts after F_E
    assert not np.allclose(a.prob.data, b.prob.data)


@pytest.mark.parametrize("flag,zero", [("use_papda", ["af", "pf"]), ("use_ssrb", ["ssf_b1", "ssf_b2", "ssf_b3"])])
def test_ablation_zeros_segments(flag, zero):
    cfg = ModelConfig(**TINY, **{flag: False})
    out = forward_batch(prepare_inputs(images(3), 8), init_model(cfg, 0))
    off = 0
    for name, size in cfg.segment_sizes().items():
        seg = out.f_mm.data[:, off:off + size]
        assert (not np.any(seg)) == (name in zero), name
        off += size
    assert out.f_mm.shape[1] == cfg.fusion_in


def test_init_is_seeded_and_names_unique():
    a, b = init_model(ModelConfig(**TINY), 5), init_model(ModelConfig(**TINY), 5)
    assert list(a.params) == list(b.params) and len(set(a.params)) == len(a.params)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert init_model(ModelConfig(), 0).n_params() == sum(v.data.size for v in init_model(ModelConfig(), 0).params.values())


def test_extent_mismatch_rejected():
    st = init_model(ModelConfig(**TINY), 0)
    with pytest.raises(ValueError):
        forward(gen_real(64, 64, 0, P=8), st)


def test_full_toy_model_gradients():
    st = init_model(ModelConfig(**SMOOTH), 1)
    inp = prepare_inputs(images(4, seed=10), 8)
    labels = np.array([0, 1, 0, 1])

    def f():
        out = forward_batch(inp, st, training=False)
        return combined_loss(supcon_loss(out.z, labels, 0.1, reduction="mean"), ce_loss(out.prob, labels), 0.5)

    names = ["backbone.stem.w", "backbone.block1.dw", "backbone.block2.pw", "embed.amp.w", "embed.phase.pos",
             "papda.amp.wq", "papda.phase.wo", "mixer.amp.layer0.w1", "mixer.phase.layer1.w4",
             "fusion.ln.ssf_b1.g", "fusion.w", "proj.w", "cls.w", "cls.b"]
    report = grad_check(f, {k: st.params[k] for k in names}, max_coords=6, eps=1e-3)  # the criterion step
    assert report.worst <= 1e-4, report.max_rel_error
