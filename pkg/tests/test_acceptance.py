"""Acceptance checks, one test per criterion.

Each test writes one ``ACCEPT <n> PASS|FAIL <detail>`` line to the terminal.
The trained checkpoints are built once per session: a default-shape model is
pretrained through the CLI, then fine-tuned with CE+TV and with CE only under
the same budget.
"""

import time

import numpy as np
import pytest

from maskdiff import autodiff as ad
from maskdiff import cli
from maskdiff.autodiff import Tensor
from maskdiff.corruption import PromptAnswer, noise_answer, sample_pair_lengths, assemble_pair
from maskdiff.decoding import DecodeConfig, decode_single_step, iterative_unmask
from maskdiff.harness import (
    ExperimentConfig,
    degradation_metric,
    evaluate_cell,
    gradient_attribution,
    run_extra_mask_sweep,
    run_unmask_recovery,
    token_gradient_norms,
    tv_diagnostic,
)
from maskdiff.maloss import LossConfig, ce_term, ma_loss, pair_loss, tv_term
from maskdiff.model import ModelConfig, init_model, load_checkpoint, pretrain_loss
from maskdiff.taskgen import (
    TaskSpec,
    all_multidim_datasets,
    default_vocab,
    load_word_bank,
    make_cell_examples,
    number_label,
    render_cell,
    word_label,
)
from maskdiff.taskgen.tasks import FewShotExample, format_example

from .conftest import central_difference, rel_error
from .test_autodiff import OPS, check_grads
from .test_harness import PlantedStub
from .test_maloss import fixture_pair, literal_ce, literal_tv, logits_for
from .test_model import _oracle, fixed_batch
from . import test_taskgen

pytestmark = pytest.mark.acceptance

VOCAB = default_vocab()
TASK = "colour-smallest"
SUITE_START = time.perf_counter()

# pretraining recipe for the default-shape model (CLI defaults plus these)
PRETRAIN = [
    "--set", f'pretrain.tasks=["{TASK}"]',
]
PRETRAIN_BUDGET_S = 15 * 60

# fine-tuning budget shared by the CE+TV run and the CE-only ablation (toy defaults)
FINETUNE = [
    "--set", f'finetune.tasks=["{TASK}"]',
    "--set", "finetune.n_pairs=400",
    "--set", "finetune.max_relevant=6",
    "--set", "finetune.max_distractors=1",
]

# in-distribution layout for the smoke test; sweeps use the longest training episode
N_REL, N_DIS = 4, 1
SWEEP_REL, SWEEP_DIS = 6, 1
MASK_GRID = (1, 2, 4, 8, 16, 32, 64, 128)
SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(request):
    rep = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail=""):
        line = f"ACCEPT {n} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        if rep is not None:
            rep.write_line("")
            rep.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


def _checked(fn):
    """Run ``fn`` and return (ok, message); assertion failures become messages."""
    try:
        fn()
        return True, ""
    except AssertionError as e:
        return False, str(e) or "assertion failed"


# ---------------------------------------------------------------------------
# 1. numeric core
# ---------------------------------------------------------------------------


def _tiny(V=12):
    cfg = ModelConfig(vocab_size=V, n_layers=1, d_model=8, n_heads=2, d_ff=16, max_context=32, seed=3)
    return init_model(cfg, np.float64)


def test_1_numeric_core(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1234)
    failures = []
    for name in sorted(OPS):
        build, shapes = OPS[name]
        ok, _ = _checked(lambda: check_grads(build, *shapes, rng=rng))
        if not ok:
            failures.append(name)
    ok, _ = _checked(lambda: check_grads(lambda w: ad.embedding(w, np.array([[0, 2], [3, 2]])), (4, 3), rng=rng))
    if not ok:
        failures.append("embedding")
    ok, _ = _checked(lambda: check_grads(lambda a: ad.cross_entropy(a, np.array([1, 0, 4])), (3, 5), rng=rng))
    if not ok:
        failures.append("cross_entropy")

    # pretrain_loss end to end, every parameter
    m = _tiny(V=5)
    b = fixed_batch([0.4, 0.9], [[1, 0, 1, 0], [0, 1, 1, 0]])
    m.zero_grad()
    pretrain_loss(m, b).backward()
    for name, p in m.params.items():
        (num,) = central_difference(lambda: pretrain_loss(m, b).item(), [p.data], h=1e-6)
        if rel_error(p.grad, num) > 1e-4:
            failures.append(f"pretrain_loss:{name}")

    # ma_loss end to end, every parameter
    m = _tiny()
    pair = fixture_pair(u=(1, 0, 1), l1=1, l2=3)
    cfg = LossConfig(alpha=0.5, beta=1.0)
    m.zero_grad()
    pair_loss(m, pair, cfg).total.backward()
    for name, p in m.params.items():
        (num,) = central_difference(lambda: pair_loss(m, pair, cfg).total.item(), [p.data], h=1e-6)
        if rel_error(p.grad, num) > 1e-4:
            failures.append(f"ma_loss:{name}")
    took = time.perf_counter() - t0
    verdict(1, not failures and took <= 120, f"failures={failures} time={took:.1f}s")


# ---------------------------------------------------------------------------
# 2. loss oracles
# ---------------------------------------------------------------------------


def test_2_loss_oracles(verdict):
    errs = []
    pair = fixture_pair()
    for seed in range(5):
        l1, l2 = logits_for(pair, seed)
        errs.append(abs(ce_term(l1, l2, pair).item() - literal_ce(l1, l2, pair)))
        errs.append(abs(tv_term(l1, l2, pair).item() - literal_tv(l1, l2, pair)))
    m = _tiny(V=5)
    b = fixed_batch([0.3, 0.7], [[1, 0, 1, 1], [0, 1, 0, 0]])
    logits = m.forward(b.masked).data
    errs.append(abs(pretrain_loss(m, b).item() - _oracle(logits, b.clean, b.mask, b.p)))
    worst = max(errs)
    verdict(2, worst <= 1e-10, f"max_abs_err={worst:.2e}")


# ---------------------------------------------------------------------------
# 3. exact identities
# ---------------------------------------------------------------------------


def test_3_exact_identities(verdict):
    bad = []
    pair = fixture_pair()
    l1, l2 = logits_for(pair, 3)
    if tv_term(l1, l1, pair).item() != 0.0:
        bad.append("tv(A,A)")
    if tv_term(l1, l2, pair).item() != tv_term(l2, l1, pair).item():
        bad.append("tv symmetry")
    br = ma_loss(Tensor(l1), Tensor(l2), pair, LossConfig(alpha=0.3, beta=0.0))
    if br.total.item() != 0.3 * br.ce.item():
        bad.append("beta=0")

    model = init_model(ModelConfig(vocab_size=20, n_layers=1, d_model=16, n_heads=2, d_ff=32, max_context=32, seed=1), np.float64)
    rng = np.random.default_rng(0)
    for _ in range(10):
        seq = rng.integers(2, 20, size=12)
        seq[rng.choice(12, size=5, replace=False)] = 0
        a, _ = decode_single_step(model, seq)
        for strat in ("random", "confidence"):
            c, _ = iterative_unmask(model, seq, DecodeConfig(1, strat))
            if not np.array_equal(a, c):
                bad.append(f"steps=1 {strat}")

    a = PromptAnswer(list(range(2, 9)), [9, 10, 11, 12, 13])
    for _ in range(200):
        d = noise_answer(a, float(rng.uniform(0.2, 0.8)), rng, 0)
        n1, n2 = sample_pair_lengths(a.n_q, a.n_a, 40, 20, rng)
        pr = assemble_pair(a, d, n1, n2, 0, 1, 40)
        end = a.n_q + a.n_a
        if not np.array_equal(pr.x1[:end], pr.x2[:end]):
            bad.append("prefix agreement")
            break
    verdict(3, not bad, f"violations={bad}")


# ---------------------------------------------------------------------------
# 4. dataset fidelity
# ---------------------------------------------------------------------------


def test_4_dataset_fidelity(verdict):
    bad = []
    bank = load_word_bank()
    opts = ("knit", "quirky", "persuade")
    if word_label(opts, "adjective", bank) != "B":
        bad.append("adjective rule")
    if format_example(FewShotExample(opts, "B")) != "Options: (A) knit, (B) quirky, (C) persuade\nAnswer:[B].\n\n":
        bad.append("format")
    if number_label(("915", "491", "266"), "smallest") != "C":
        bad.append("smallest rule")
    sets = all_multidim_datasets()
    if len(sets) != 20 or len({(d.kind, d.seed) for d in sets}) != 20:
        bad.append("instance count")
    for d in sets:
        for xs, ys in ((d.train_x, d.train_y), (d.test_x, d.test_y)):
            if xs.min() < 1 or xs.max() > 100 or xs.dtype.kind != "i":
                bad.append(f"range {d.kind}-{d.seed}")
            if ys.count("Above") != ys.count("Below"):
                bad.append(f"balance {d.kind}-{d.seed}")
    for path in sorted(test_taskgen.GOLDEN.glob("*.txt")):
        ok, _ = _checked(lambda: test_taskgen.test_golden_snapshots(path))
        if not ok:
            bad.append(f"golden {path.stem}")
    verdict(4, not bad, f"violations={bad}")


# ---------------------------------------------------------------------------
# trained checkpoints
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept")
    t0 = time.perf_counter()
    code = cli.main(["pretrain", "--out", str(out / "pre"), *PRETRAIN])
    took = time.perf_counter() - t0
    assert code == 0
    (run,) = (out / "pre").iterdir()
    return {"ckpt": run / "model.ckpt", "seconds": took, "root": out}


def _accuracy(model, n_test=90, seed=99, extra_masks=1):
    c = make_cell_examples(TaskSpec.from_id(TASK, seed=seed), n_relevant=N_REL, n_distractors=N_DIS, n_test=n_test)
    renders = render_cell(c, arrangement=1.0, extra_masks=extra_masks)
    return evaluate_cell(model, renders).accuracy


@pytest.fixture(scope="session")
def finetuned(trained):
    out = {"base": load_checkpoint(trained["ckpt"])}
    for name, beta in (("ce_tv", 1.0), ("ce", 0.0)):
        root = trained["root"] / name
        argv = ["finetune", "--out", str(root), "--set", f"finetune.checkpoint={trained['ckpt']}",
                "--set", "finetune.alpha=0.1", "--set", f"finetune.beta={beta}", *FINETUNE]
        assert cli.main(argv) == 0
        (run,) = root.iterdir()
        out[name] = load_checkpoint(run / "model.ckpt")
    return out


def test_5_training_smoke(verdict, trained):
    model = load_checkpoint(trained["ckpt"])
    acc = _accuracy(model)
    ok = acc >= 0.80 and trained["seconds"] <= PRETRAIN_BUDGET_S
    verdict(5, ok, f"accuracy={acc:.3f} pretrain_time={trained['seconds']:.0f}s")


def test_6_ma_loss_effect(verdict, finetuned):
    cell = make_cell_examples(TaskSpec.from_id(TASK, seed=123), n_relevant=SWEEP_REL, n_distractors=SWEEP_DIS, n_test=40)
    tv = {k: tv_diagnostic(m, cell, n_relevant=SWEEP_REL, n_distractors=SWEEP_DIS, k=64) for k, m in finetuned.items()}
    red_tv = 1 - tv["ce_tv"] / tv["base"]
    red_ce = 1 - tv["ce"] / tv["base"]
    ok = red_tv >= 0.5 and red_ce < red_tv / 2
    verdict(6, ok, f"tv base={tv['base']:.4f} ce_tv={tv['ce_tv']:.4f} ce={tv['ce']:.4f} "
                   f"reduction ce_tv={red_tv:.3f} ce={red_ce:.3f}")


def _sweep_cfg(**kw):
    return ExperimentConfig(
        experiment="extra-mask-sweep", tasks=(TASK,), seeds=SEEDS, n_test=30,
        n_relevant=SWEEP_REL, n_distractors=SWEEP_DIS, **kw,
    ).validate()


def _degradation(model):
    rows = run_extra_mask_sweep(model, _sweep_cfg(mask_grid=MASK_GRID))
    per_seed = []
    for s in SEEDS:
        accs = [r.accuracy for r in rows if r.seed == s]
        per_seed.append(degradation_metric(accs))
    return float(np.mean(per_seed))


def test_7_mask_robustness(verdict, finetuned):
    base = _degradation(finetuned["base"])
    tuned = _degradation(finetuned["ce_tv"])
    verdict(7, tuned < base, f"degradation base={base:.2f} ce_tv={tuned:.2f}")


def test_8_unmask_recovery(verdict, trained):
    model = load_checkpoint(trained["ckpt"])
    cfg = ExperimentConfig(
        experiment="unmask-recovery", tasks=(TASK,), seeds=SEEDS, n_test=20, n_relevant=SWEEP_REL,
        n_distractors=SWEEP_DIS, mask_grid=(16, 32, 64, 128), steps_grid=(1, 40), strategies=("confidence",),
    ).validate()
    rows = run_unmask_recovery(model, cfg)
    bad, detail = [], []
    for k in cfg.mask_grid:
        one = np.mean([r.accuracy for r in rows if r.extra_masks == k and r.steps == 1])
        many = np.mean([r.accuracy for r in rows if r.extra_masks == k and r.steps == 40])
        detail.append(f"{k}:{one:.3f}->{many:.3f}")
        if many < one:
            bad.append(k)
    verdict(8, not bad, " ".join(detail))


# ---------------------------------------------------------------------------
# 9. attribution
# ---------------------------------------------------------------------------


def test_9_attribution(verdict):
    bad = []
    cfg = ModelConfig(vocab_size=len(VOCAB), n_layers=1, d_model=16, n_heads=2, d_ff=32, max_context=768,
                      mask_id=VOCAB.mask_id, eos_id=VOCAB.eos_id, seed=4)
    tiny = init_model(cfg, np.float64)
    c = make_cell_examples(TaskSpec.from_id(TASK, seed=3, n_test=3), n_relevant=4, n_distractors=4)
    for r in render_cell(c, arrangement="mixed"):
        s = gradient_attribution(tiny, r).token_scores.sum()
        if abs(s - 1) > 1e-9:
            bad.append(f"sum={s}")
    r = render_cell(c, arrangement=1.0)[0]
    a, b = r.example_spans[2]
    res = gradient_attribution(PlantedStub((a + b) // 2, V=len(VOCAB), d=6), r)
    if res.example_scores[2] < 0.99:
        bad.append(f"planted={res.example_scores[2]:.4f}")

    r = render_cell(make_cell_examples(TaskSpec.from_id(TASK, seed=3, n_test=1), 2, 1), arrangement=1.0)[0]
    norms, tok = token_gradient_norms(tiny, r.ids, r.answer_slot)
    emb = tiny.params["tok_emb"].data[r.ids][None].copy()
    h = 1e-4

    def logit(e):
        return tiny.logits_from_embeddings(Tensor(e), rows=[r.answer_slot]).data[0, tok]

    worst = 0.0
    for pos in range(len(r.ids)):
        g = np.zeros(emb.shape[-1])
        for ch in range(len(g)):
            up, dn = emb.copy(), emb.copy()
            up[0, pos, ch] += h
            dn[0, pos, ch] -= h
            g[ch] = (logit(up) - logit(dn)) / (2 * h)
        if norms[pos] > 0:
            worst = max(worst, abs(np.linalg.norm(g) - norms[pos]) / norms[pos])
    if worst > 0.05:
        bad.append(f"fd_rel={worst:.4f}")
    verdict(9, not bad, f"violations={bad} fd_worst_rel={worst:.2e}")


# ---------------------------------------------------------------------------
# 10. determinism and runtime
# ---------------------------------------------------------------------------


def test_10_determinism(verdict, trained, tmp_path):
    argv = [
        "eval", "--set", f"experiments.checkpoint={trained['ckpt']}",
        "--set", f'experiments.tasks=["{TASK}"]', "--set", "experiments.experiment=extra-mask-sweep",
        "--set", "experiments.n_test=8", "--set", "experiments.mask_grid=[0,1,16]",
        "--set", f"experiments.n_relevant={N_REL}", "--set", f"experiments.n_distractors={N_DIS}", "--seed", "3",
    ]
    blobs = []
    for i, par in enumerate((1, 1, 2)):
        out = tmp_path / f"r{i}"
        assert cli.main([*argv, "--out", str(out), "--parallel", str(par)]) == 0
        (run,) = out.iterdir()
        blobs.append(sorted((p.name, p.read_bytes()) for p in run.glob("*.csv")))
    same = blobs[0] == blobs[1] == blobs[2] and len(blobs[0]) > 0
    total = time.perf_counter() - SUITE_START
    verdict(10, same and total <= 30 * 60, f"identical_csvs={same} acceptance_time={total:.0f}s")
