import math

import numpy as np
import pytest

from maskdiff import autodiff as ad
from maskdiff.autodiff import Tensor
from maskdiff.corruption import MaskedPair, MaskingDraw, PromptAnswer, assemble_pair
from maskdiff.errors import ContractError, DataError
from maskdiff.maloss import (
    FinetuneParams,
    LossConfig,
    ce_term,
    curriculum_max_masks,
    finetune,
    ma_loss,
    pair_loss,
    tv_term,
)
from maskdiff.model import CAUSAL, ModelConfig, init_model

from .conftest import central_difference, rel_error

MASK, EOS = 0, 1


def fixture_pair(p=0.5, u=(1, 0, 1), l1=0, l2=2):
    """V=6, n_q=2, n_a=3 with masks at answer slots 0 and 2."""
    a = PromptAnswer([2, 3], [4, 5, 3])
    u = np.array(u)
    draw = MaskingDraw(p, u, np.where(u == 1, MASK, a.a))
    return assemble_pair(a, draw, l1, l2, MASK, EOS)


def logits_for(pair, seed, V=6):
    r = np.random.default_rng(seed)
    return r.standard_normal((len(pair.x1), V)), r.standard_normal((len(pair.x2), V))


def literal_ce(l1, l2, pair):
    # direct transcription of the weighted two-input cross-entropy
    total = 0.0
    for logits, x in ((l1, pair.x1), (l2, pair.x2)):
        for j in range(pair.answer_idx[0], pair.answer_idx[-1] + 1):
            if x[j] == MASK:
                row = logits[j]
                logz = math.log(sum(math.exp(v) for v in row))
                total += -(row[pair.labels[j]] - logz)
    return total / (2 * pair.p * pair.n_m)


def literal_tv(l1, l2, pair):
    total = 0.0
    for j in range(pair.answer_idx[0], pair.answer_idx[-1] + 1):
        if pair.x1[j] == MASK:
            z1 = sum(math.exp(v) for v in l1[j])
            z2 = sum(math.exp(v) for v in l2[j])
            total += 0.5 * sum(abs(math.exp(a) / z1 - math.exp(b) / z2) for a, b in zip(l1[j], l2[j]))
    return pair.p / pair.n_m * total


def test_ce_matches_literal_transcription():
    pair = fixture_pair()
    assert pair.n_m == 2
    l1, l2 = logits_for(pair, 0)
    assert abs(ce_term(l1, l2, pair).item() - literal_ce(l1, l2, pair)) <= 1e-10


def test_tv_matches_literal_transcription():
    pair = fixture_pair()
    l1, l2 = logits_for(pair, 1)
    assert abs(tv_term(l1, l2, pair).item() - literal_tv(l1, l2, pair)) <= 1e-10


def test_uniform_logits_give_scaled_log_v():
    pair = fixture_pair(p=0.25)
    z = np.zeros((len(pair.x1), 6))
    assert math.isclose(ce_term(z, z, pair).item(), math.log(6) / 0.25, rel_tol=1e-12)


def test_single_token_reduction():
    a = PromptAnswer([2, 3], [4])
    pair = assemble_pair(a, MaskingDraw(1.0, np.array([1]), np.array([MASK])), 0, 1, MASK, EOS)
    l1, l2 = logits_for(pair, 2)
    ce1 = ad.cross_entropy(Tensor(l1[2]), 4).item()
    ce2 = ad.cross_entropy(Tensor(l2[2]), 4).item()
    assert math.isclose(ce_term(l1, l2, pair).item(), (ce1 + ce2) / 2, rel_tol=1e-12)


def test_tv_identity_and_symmetry():
    pair = fixture_pair()
    l1, l2 = logits_for(pair, 3)
    assert tv_term(l1, l1, pair).item() == 0.0
    assert tv_term(l1, l2, pair).item() == tv_term(l2, l1, pair).item()


def _one_slot_pair(p):
    a = PromptAnswer([2], [3])
    return assemble_pair(a, MaskingDraw(p, np.array([1]), np.array([MASK])), 0, 1, MASK, EOS)


def test_tv_disjoint_support_is_maximal():
    pair = _one_slot_pair(1.0)
    big = 60.0
    l1 = np.zeros((3, 2))
    l2 = np.zeros((3, 2))
    l1[1] = [big, -big]
    l2[1] = [-big, big]
    assert math.isclose(tv_term(l1, l2, pair).item(), 1.0, abs_tol=1e-12)


def test_tv_hand_value():
    pair = _one_slot_pair(0.5)
    l1 = np.zeros((3, 2))
    l2 = np.zeros((3, 2))
    l1[1] = np.log([0.6, 0.4])
    l2[1] = np.log([0.4, 0.6])
    assert math.isclose(tv_term(l1, l2, pair).item(), 0.1, abs_tol=1e-12)


def test_tv_range():
    rng = np.random.default_rng(4)
    for _ in range(50):
        pair = fixture_pair(p=float(rng.uniform(0.2, 0.8)))
        l1, l2 = (x * 10 for x in logits_for(pair, int(rng.integers(1 << 30))))
        tv = tv_term(l1, l2, pair).item()
        assert 0.0 <= tv <= pair.p + 1e-12


def test_total_combines_terms():
    pair = fixture_pair()
    l1, l2 = logits_for(pair, 5)
    cfg = LossConfig(alpha=0.1, beta=0.0)
    br = ma_loss(l1, l2, pair, cfg)
    assert br.total.item() / 0.1 == pytest.approx(br.ce.item(), rel=1e-15)
    assert br.total.item() == 0.1 * br.ce.item()
    br = ma_loss(l1, l2, pair, LossConfig(alpha=0.3, beta=2.0))
    assert math.isclose(br.total.item(), 0.3 * br.ce.item() + 2.0 * br.tv.item(), rel_tol=1e-14)


def test_scaling_audit():
    base = fixture_pair(p=0.3)
    scaled = fixture_pair(p=0.6)
    l1, l2 = logits_for(base, 6)
    assert math.isclose(tv_term(l1, l2, scaled).item(), 2 * tv_term(l1, l2, base).item(), rel_tol=1e-13)
    assert math.isclose(ce_term(l1, l2, scaled).item(), ce_term(l1, l2, base).item() / 2, rel_tol=1e-13)


def test_mask_count_invariant_stub():
    # logits that ignore appended masks: CE is the single-input weighted CE, TV is zero
    pair = fixture_pair(l1=0, l2=4)
    rows = np.random.default_rng(7).standard_normal((len(pair.x1), 6))
    single = sum(ad.cross_entropy(Tensor(rows[j]), int(pair.labels[j])).item() for j in pair.masked_answer)
    assert math.isclose(ce_term(rows, rows, pair).item(), single / (pair.p * pair.n_m), rel_tol=1e-13)
    assert tv_term(rows, rows, pair).item() == 0.0


def test_no_mask_pair_rejected():
    pair = fixture_pair()
    broken = MaskedPair(pair.labels.copy(), pair.labels.copy(), pair.labels, pair.answer_idx, 0, 1, 0, 0.5, MASK)
    z = np.zeros((len(broken.x1), 6))
    with pytest.raises(ContractError):
        ce_term(z, z, broken)


def test_ma_loss_gradients_finite_difference():
    pair = fixture_pair(u=(1, 1, 0))
    l1, l2 = logits_for(pair, 8)
    cfg = LossConfig(alpha=0.7, beta=1.3)

    def value():
        return ma_loss(Tensor(l1), Tensor(l2), pair, cfg).total.item()

    t1, t2 = Tensor(l1.copy(), requires_grad=True), Tensor(l2.copy(), requires_grad=True)
    ma_loss(t1, t2, pair, cfg).total.backward()
    n1, n2 = central_difference(value, [l1, l2], h=1e-6)
    assert rel_error(t1.grad, n1) <= 1e-4
    assert rel_error(t2.grad, n2) <= 1e-4


def tiny_model(**kw):
    cfg = ModelConfig(vocab_size=12, n_layers=1, d_model=8, n_heads=2, d_ff=16, max_context=32, seed=3, **kw)
    return init_model(cfg, np.float64)


def test_ma_loss_gradients_through_model():
    model = tiny_model()
    pair = fixture_pair(u=(1, 0, 1), l1=1, l2=3)
    cfg = LossConfig(alpha=0.5, beta=1.0)
    w = model.params["layers.0.mlp.w1"]
    pair_loss(model, pair, cfg).total.backward()

    def value():
        return pair_loss(model, pair, cfg).total.item()

    (num,) = central_difference(value, [w.data], h=1e-6)
    assert rel_error(w.grad, num) <= 1e-4


def test_pair_loss_matches_full_logits():
    model = tiny_model()
    pair = fixture_pair(l1=0, l2=5)
    cfg = LossConfig()
    l1 = model.forward(pair.x1).data
    l2 = model.forward(pair.x2).data
    full = ma_loss(l1, l2, pair, cfg)
    fast = pair_loss(model, pair, cfg)
    assert math.isclose(full.total.item(), fast.total.item(), rel_tol=1e-10)


def test_curriculum_endpoints():
    cfg = LossConfig(max_masks=600, curriculum_steps=5000)
    assert curriculum_max_masks(0, cfg) == 1
    assert curriculum_max_masks(5000, cfg) == 600
    assert curriculum_max_masks(12345, cfg) == 600
    assert curriculum_max_masks(2500, cfg) == math.floor(1 + 2499 * 599 / 4999)
    vals = [curriculum_max_masks(s, cfg) for s in range(0, 6000, 7)]
    assert vals == sorted(vals)


def _dataset():
    rng = np.random.default_rng(0)
    return [PromptAnswer(rng.integers(2, 12, size=6), rng.integers(2, 12, size=2)) for _ in range(4)]


def test_finetune_deterministic():
    cfg = LossConfig(max_masks=6, curriculum_steps=3, max_context=32)
    params = FinetuneParams(steps=3, lr=1e-3, grad_accum=2, batch_size=1, seed=11)
    _, r1 = finetune(tiny_model(), _dataset(), cfg, params)
    _, r2 = finetune(tiny_model(), _dataset(), cfg, params)
    assert r1 == r2
    assert [r["max_masks_current"] for r in r1] == [curriculum_max_masks(s, cfg) for s in range(3)]


def test_finetune_step_reduces_ce():
    model = tiny_model()
    data = _dataset()[:1]
    cfg = LossConfig(alpha=1.0, beta=0.0, max_masks=4, curriculum_steps=1, max_context=32)
    pair = fixture_pair()
    pair = assemble_pair(data[0], MaskingDraw(0.5, np.array([1, 1]), np.array([MASK, MASK])), 0, 2, MASK, EOS)
    before = pair_loss(model, pair, cfg).ce.item()
    finetune(model, data, cfg, FinetuneParams(steps=1, lr=1e-3, grad_accum=1, batch_size=1, seed=0))
    assert pair_loss(model, pair, cfg).ce.item() < before


def test_finetune_writes_log(tmp_path):
    path = tmp_path / "log.csv"
    cfg = LossConfig(max_masks=4, curriculum_steps=2, max_context=32)
    finetune(tiny_model(), _dataset(), cfg, FinetuneParams(steps=2, grad_accum=1, batch_size=1), log_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,ce,tv,total,lr,max_masks_current"
    assert len(lines) == 3


def test_finetune_errors():
    cfg = LossConfig(max_context=32)
    with pytest.raises(DataError):
        finetune(tiny_model(), [], cfg, FinetuneParams(steps=1))
    with pytest.raises(ContractError):
        finetune(tiny_model(mode=CAUSAL), _dataset(), cfg, FinetuneParams(steps=1))
    long = [PromptAnswer(np.full(40, 3), [4])]
    with pytest.raises(ContractError):
        finetune(tiny_model(), long, cfg, FinetuneParams(steps=1))
