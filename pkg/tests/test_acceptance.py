"""The nine acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the pytest terminal summary)
before asserting. Criteria 6-8 share one synthetic benchmark and one trained
full model; the whole file takes about ten minutes on one CPU core.
"""

import math
import time

import numpy as np
import pytest

from acceptance_log import record
from oracles import direct_dft2_batch, direct_supcon
from mclcr import tensor as T
from mclcr.checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from mclcr.imageio import decode_pnm, encode_pnm, read_pnm, to_grayscale, write_pnm
from mclcr.losses import auc, ce_loss, supcon_loss
from mclcr.mixer import init_mixer, mixer_layer
from mclcr.model import ModelConfig, forward, forward_batch, init_model, prepare_inputs
from mclcr.papda import init_papda, papda_forward
from mclcr.spectral import dft2, patch_spectra, region_patch_mask, residual_report
from mclcr.ssrb import gram
from mclcr.synth import GenConfig, apply_tamper, gen_dataset, gen_real, sample_tamper
from mclcr.tensor import Tensor
from mclcr.train import TrainConfig, evaluate, load_dataset, train
from mclcr.verify import gradient_suite

EPOCHS = 30
SEED = 0


def test_c1_dft_oracle_and_parseval():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    patches = rng.uniform(0.0, 255.0, (100, 16, 16))
    fast = np.stack([dft2(p) for p in patches])
    err = float(np.max(np.abs(fast - direct_dft2_batch(patches))))
    # with the 1/P^2 forward factor: sum |f|^2 = P^2 sum |F|^2
    lhs = (patches ** 2).sum(axis=(1, 2))
    rhs = 256.0 * (np.abs(fast) ** 2).sum(axis=(1, 2))
    parseval = float(np.max(np.abs(lhs - rhs) / lhs))
    dt = time.perf_counter() - t0
    ok = err <= 1e-9 and parseval <= 1e-9 and dt < 10
    record(1, ok, f"max |fast-direct| {err:.2e}, Parseval rel {parseval:.2e}, {dt:.1f}s")
    assert ok


def test_c2_gradient_suite():
    t0 = time.perf_counter()
    results = gradient_suite(seed=7, eps=1e-3, max_coords=4)
    dt = time.perf_counter() - t0
    worst = {k: r.report.worst for k, r in results.items()}
    ok = all(r.passed(1e-4) for r in results.values()) and dt < 300
    record(2, ok, "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {dt:.0f}s")
    assert ok


def test_c3_structural_identities():
    rng = np.random.default_rng(3)
    checks = {}
    fmap = Tensor(rng.normal(size=(6, 6, 5)))
    G = gram(fmap).data
    checks["gram symmetry"] = float(np.max(np.abs(G - G.T)))
    xs = rng.normal(size=(200, 5))
    quad = np.einsum("ni,ij,nj->n", xs, G, xs)
    checks["gram PSD"] = float(max(0.0, -quad.min()))

    rows = T.softmax(Tensor(rng.normal(0, 5, (7, 11)))).data.sum(axis=-1)
    checks["softmax rows"] = float(np.max(np.abs(rows - 1.0)))

    p = {k: Tensor(v) for k, v in init_papda(rng, 4, 8, 6).items()}
    for s in ("amp", "phase"):
        p[f"papda.{s}.wo"] = Tensor(np.zeros((8, 8)))
        p[f"papda.{s}.bo"] = Tensor(np.zeros(8))
    e_as, e_ps = Tensor(rng.normal(size=(6, 8))), Tensor(rng.normal(size=(6, 8)))
    at, pt = papda_forward(e_as, e_ps, p, heads=2)
    checks["papda residual"] = float(max(np.max(np.abs(at.data - e_as.data)), np.max(np.abs(pt.data - e_ps.data))))

    mp = {k: Tensor(np.zeros_like(v) if k.split(".")[-1][0] in "wb" and "ln" not in k else v)
          for k, v in init_mixer(rng, 6, 8, "mix", 1).items()}
    t = Tensor(rng.normal(size=(6, 8)))
    checks["mixer residual"] = float(np.max(np.abs(mixer_layer(t, mp, "mix.layer0").data - t.data)))

    paper = ModelConfig.paper()
    st = init_model(paper, 0)
    with T.no_grad():
        width = forward_batch(prepare_inputs([gen_real(256, 256, 1, P=16)], 16), st).f_mm.shape[1]
    ok_width = paper.fusion_in == 1984 and width == 1984
    ok = ok_width and all(v <= 1e-12 for v in checks.values())
    record(3, ok, ", ".join(f"{k} {v:.1e}" for k, v in checks.items()) + f"; |F_MM| {width}")
    assert ok


def test_c4_loss_oracles():
    z = Tensor(np.tile([[0.6, 0.8]], (4, 1)))
    y = [0, 0, 1, 1]
    sc = supcon_loss(z, y, 0.1).item()
    oracle = direct_supcon(z.data, y, 0.1)
    a = auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    ce = ce_loss(Tensor([0.5]), [1]).item()
    ok = (abs(sc - 4 * math.log(2)) <= 1e-9 and abs(oracle - 4 * math.log(2)) <= 1e-9
          and a == 0.75 and abs(ce - math.log(2)) <= 1e-9)
    record(4, ok, f"supcon {sc:.12f} (4 ln 2 = {4 * math.log(2):.12f}), AUC {a}, CE {ce:.12f}")
    assert ok


def test_c5_upsample_residual_localisation():
    t0 = time.perf_counter()
    cfg = GenConfig(size=64, patch=8, strength=(1.0, 1.0))
    ratio_hits = peak_hits = 0
    for i in range(50):
        rng = np.random.default_rng([5, i])
        real = gen_real(64, 64, int(rng.integers(2**31)), P=8)
        spec = sample_tamper(rng, "upsample-artifact", cfg)
        fake = apply_tamper(real, spec, int(rng.integers(2**31)), P=8)
        mask = region_patch_mask(64, 64, 8, spec.region)
        rep = residual_report(patch_spectra(to_grayscale(real), 8), patch_spectra(to_grayscale(fake), 8), mask)
        g = rep.group_means()
        ratio_hits += g["amp_tampered"] >= 2.0 * g["amp_untouched"]
        peak_hits += bool(mask[int(np.argmax(rep.amp_residual))])
    dt = time.perf_counter() - t0
    ok = ratio_hits >= 45 and peak_hits >= 45 and dt < 60
    record(5, ok, f"ratio>=2 in {ratio_hits}/50, peak inside region {peak_hits}/50, {dt:.1f}s")
    assert ok


# ------------------------------------------------------------ shared benchmark

@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    P = 8
    splits = {
        "train": gen_dataset(root, GenConfig(128, 128, seed=1, split="train")),
        "val": gen_dataset(root, GenConfig(32, 32, seed=2, split="val")),
        "test": gen_dataset(root, GenConfig(64, 64, seed=3, split="test")),
        "test_up": gen_dataset(root / "up", GenConfig(64, 64, seed=4, split="test", tamper_mix=1.0)),
        "test_tex": gen_dataset(root / "tex", GenConfig(64, 64, seed=5, split="test", tamper_mix=0.0)),
    }
    return {k: load_dataset(m, P) for k, m in splits.items()}


_models: dict[str, tuple] = {}


def trained(bench, variant: str):
    if variant not in _models:
        over = {"full": {}, "no-ssrb": {"use_ssrb": False}, "no-papda": {"use_papda": False}}[variant]
        t0 = time.perf_counter()
        state, _ = train(bench["train"], bench["val"], ModelConfig(**over), TrainConfig(epochs=EPOCHS, seed=SEED))
        _models[variant] = (state, time.perf_counter() - t0)
    return _models[variant]


def test_c6_end_to_end_benchmark(bench):
    state, dt = trained(bench, "full")
    res = evaluate(bench["test"], state)
    ok = res["auc"] >= 0.95 and res["acc"] >= 0.90 and dt < 1800
    record(6, ok, f"test AUC {res['auc']:.4f}, ACC {res['acc']:.4f} "
                  f"({len(bench['train'])}/{len(bench['val'])}/{len(bench['test'])} images, {EPOCHS} epochs, {dt:.0f}s)")
    assert ok


def test_c7_ablation_direction(bench):
    full = trained(bench, "full")[0]
    no_papda = trained(bench, "no-papda")[0]
    no_ssrb = trained(bench, "no-ssrb")[0]
    up_full, up_ab = evaluate(bench["test_up"], full)["auc"], evaluate(bench["test_up"], no_papda)["auc"]
    tex_full, tex_ab = evaluate(bench["test_tex"], full)["auc"], evaluate(bench["test_tex"], no_ssrb)["auc"]
    ok = up_full - up_ab >= 0.05 and tex_full - tex_ab >= 0.05
    record(7, ok, f"upsample-only AUC full {up_full:.4f} vs no-papda {up_ab:.4f} (gap {up_full - up_ab:+.4f}); "
                  f"texture-only AUC full {tex_full:.4f} vs no-ssrb {tex_ab:.4f} (gap {tex_full - tex_ab:+.4f})")
    assert ok


def test_c8_representation_separation(bench):
    state = trained(bench, "full")[0]
    assert state.config.alpha == 0.5 and state.config.use_scloss
    feats = evaluate(bench["test"], state)["f_e"]
    y = bench["test"].labels
    u = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    cos = u @ u.T
    iu = np.triu_indices(len(y), 1)
    same = (y[:, None] == y[None, :])[iu]
    intra, inter = float(cos[iu][same].mean()), float(cos[iu][~same].mean())
    ok = intra > inter
    record(8, ok, f"mean cosine of F_E intra-class {intra:.4f} vs inter-class {inter:.4f}")
    assert ok


def test_c9_reproducibility_and_formats(tmp_path):
    root = tmp_path / "d"
    tr = load_dataset(gen_dataset(root, GenConfig(16, 16, size=32, seed=1, split="train")), 8)
    va = load_dataset(gen_dataset(root, GenConfig(8, 8, size=32, seed=2, split="val")), 8)
    cfg = ModelConfig(image_size=32, backbone_scale=16, fusion_dim=32, proj_dim=8)
    runs = []
    for k in range(2):
        state, _ = train(tr, va, cfg, TrainConfig(epochs=2, seed=11), metrics_path=tmp_path / f"m{k}.csv")
        save_checkpoint(state, tmp_path / f"c{k}.ckpt")
        runs.append(((tmp_path / f"m{k}.csv").read_bytes(), (tmp_path / f"c{k}.ckpt").read_bytes()))
    same_run = runs[0] == runs[1]

    loaded = load_checkpoint(tmp_path / "c0.ckpt")
    img = read_pnm(root / "train" / "00000.pnm")
    a, b = forward(img, state), forward(img, loaded)
    stable = all(np.array_equal(x, y) for x, y in zip(a[:2], b[:2])) and a[2] == b[2]
    stable &= encode_checkpoint(loaded) == runs[0][1]

    rng = np.random.default_rng(9)
    from mclcr.imageio import Image
    pnm_ok = True
    for shape in ((7, 5, 1), (4, 9, 3)):
        im = Image(rng.integers(0, 256, shape, dtype=np.uint8))
        write_pnm(im, tmp_path / "x.pnm")
        pnm_ok &= read_pnm(tmp_path / "x.pnm") == im and decode_pnm(encode_pnm(im)) == im

    bad = bytearray(runs[0][1])
    bad[0:4] = b"XXXX"
    try:
        decode_checkpoint(bytes(bad))
        rejected = False
    except CheckpointError:
        rejected = True
    ok = same_run and stable and pnm_ok and rejected
    record(9, ok, f"same-seed bytes identical {same_run}, save->load->forward bit-stable {stable}, "
                  f"PNM round-trip {pnm_ok}, bad magic rejected {rejected}")
    assert ok
