import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclcr import tensor as T
from mclcr.gradcheck import grad_check
from mclcr.losses import DegenerateBatchError, accuracy, auc, ce_loss, ce_loss_logits, combined_loss, supcon_loss
from mclcr.tensor import Tensor
from oracles import direct_ce, direct_supcon, pair_count_auc


def unit_rows(r, b, p):
    z = r.normal(size=(b, p))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def test_supcon_identical_embeddings():
    z = np.tile([[0.6, 0.8]], (4, 1))
    labels = [0, 0, 1, 1]
    val = supcon_loss(Tensor(z), labels, 0.1).item()
    assert abs(val - 4 * math.log(2)) <= 1e-9
    assert abs(direct_supcon(z, labels, 0.1) - 4 * math.log(2)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([4, 6, 8]), st.floats(0.05, 2.0))
def test_supcon_matches_direct_summation(seed, b, tau):
    r = np.random.default_rng(seed)
    z = unit_rows(r, b, 5)
    labels = r.permutation([0] * (b // 2) + [1] * (b // 2))
    assert abs(supcon_loss(Tensor(z), labels, tau).item() - direct_supcon(z, labels, tau)) <= 1e-9 * b / tau


def test_supcon_separated_below_identical():
    labels = [0, 0, 1, 1]
    sep = np.array([[1.0, 0], [1.0, 0], [0, 1.0], [0, 1.0]])
    same = np.tile([[1.0, 0]], (4, 1))
    assert supcon_loss(Tensor(sep), labels).item() < supcon_loss(Tensor(same), labels).item()


def test_supcon_smooth_in_tau(rng):
    z, labels = unit_rows(rng, 8, 4), [0, 1] * 4
    taus = np.linspace(0.1, 0.2, 41)
    vals = np.array([supcon_loss(Tensor(z), labels, t).item() for t in taus])
    steps = np.abs(np.diff(vals))
    assert np.all(np.isfinite(vals)) and steps.max() < 4 * np.median(steps) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_supcon_rotation_and_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    z, labels = unit_rows(r, 6, 4), np.array([0, 1, 0, 1, 1, 0])
    q, _ = np.linalg.qr(r.normal(size=(4, 4)))
    base = supcon_loss(Tensor(z), labels).item()
    assert abs(supcon_loss(Tensor(z @ q), labels).item() - base) <= 1e-9
    perm = r.permutation(6)
    assert abs(supcon_loss(Tensor(z[perm]), labels[perm]).item() - base) <= 1e-9


def test_supcon_options(rng):
    z, labels = unit_rows(rng, 6, 3), [0, 0, 0, 1, 1, 1]
    s = supcon_loss(Tensor(z), labels, 0.5).item()
    assert supcon_loss(Tensor(z), labels, 0.5, reduction="mean").item() == pytest.approx(s / 6)
    assert supcon_loss(Tensor(z), labels, 0.5, denominator="all").item() != pytest.approx(s)
    for kw in ({"denominator": "x"}, {"reduction": "x"}):
        with pytest.raises(ValueError):
            supcon_loss(Tensor(z), labels, 0.5, **kw)
    with pytest.raises(ValueError):
        supcon_loss(Tensor(z), labels, 0.0)


@pytest.mark.parametrize("labels", [[0, 0, 0, 0], [0, 1, 1, 1], [0, 1]])
def test_supcon_degenerate_batches(labels):
    z = np.tile([[1.0, 0.0]], (len(labels), 1))
    with pytest.raises(DegenerateBatchError):
        supcon_loss(Tensor(z), labels)


def test_ce_examples():
    assert abs(ce_loss(Tensor([0.5]), [1]).item() - math.log(2)) <= 1e-9
    assert ce_loss(Tensor([1.0, 0.0]), [1, 0]).item() == pytest.approx(-math.log(1 - 1e-7))
    val = ce_loss(Tensor([0.9, 0.2]), [1, 0]).item()
    assert abs(val + 0.5 * (math.log(0.9) + math.log(0.8))) <= 1e-12
    assert abs(val - direct_ce([0.9, 0.2], [1, 0])) <= 1e-12
    assert np.isfinite(ce_loss(Tensor([0.0, 1.0]), [1, 0]).item())


def test_combined_loss():
    a, b = Tensor(2.0), Tensor(1.0)
    assert combined_loss(a, b, 0.0) is b
    assert combined_loss(a, b, 1.0) is a
    assert combined_loss(a, b, 0.5).item() == 1.5
    for alpha in (-0.1, 1.1):
        with pytest.raises(ValueError):
            combined_loss(a, b, alpha)


def test_accuracy():
    assert accuracy([0.9, 0.1], [1, 0]) == 1.0
    assert accuracy([0.9, 0.1], [0, 1]) == 0.0
    assert accuracy([0.5], [1]) == 1.0
    with pytest.raises(ValueError):
        accuracy([], [])


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1] * 3) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=30))
def test_auc_matches_pair_count_with_ties(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        return
    assert abs(auc(scores, labels) - pair_count_auc(scores, labels)) <= 1e-12
    # strictly increasing transform leaves the statistic unchanged
    assert abs(auc(np.exp(3 * np.array(scores)), labels) - auc(scores, labels)) <= 1e-12


def test_heads_gradient(rng):
    h = Tensor(rng.normal(size=(8, 6)), requires_grad=True)
    wp = Tensor(rng.normal(size=(6, 4)) * 0.5, requires_grad=True)
    wc = Tensor(rng.normal(size=(6, 1)) * 0.5, requires_grad=True)
    labels = np.array([0, 1] * 4)

    def f():
        z = T.l2_normalize(T.matmul(h, wp))
        prob = T.sigmoid(T.reshape(T.matmul(h, wc), (8,)))
        return combined_loss(supcon_loss(z, labels, 0.1), ce_loss(prob, labels), 0.5)

    assert grad_check(f, {"h": h, "wp": wp, "wc": wc}).worst <= 1e-4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12), st.integers(0, 2 ** 16))
def test_logit_ce_value_matches_clipped_ce(logits, seed):
    a = np.array(logits)
    y = np.random.default_rng(seed).integers(0, 2, a.size)
    probs = T.sigmoid(Tensor(a))
    assert ce_loss_logits(Tensor(a), y).item() == pytest.approx(ce_loss(probs, y).item(), rel=1e-12, abs=1e-12)


def test_logit_ce_gradient_inside_and_past_clip():
    a = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    y = np.array([1, 0, 0])
    assert grad_check(lambda: ce_loss_logits(a, y), {"a": a}, max_coords=None).worst <= 1e-6
    # a saturated wrong answer is flat under the clip but still pulled back here
    a = Tensor(np.array([40.0]), requires_grad=True)
    ce_loss(T.sigmoid(a), [0]).backward()
    assert a.grad[0] == 0.0
    a.grad = None
    ce_loss_logits(a, [0]).backward()
    assert a.grad[0] == pytest.approx(1.0)
