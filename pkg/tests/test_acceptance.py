"""Acceptance criteria 1-10, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting. Criteria 5 and 6 share one set of training runs: four variants times
three seeds on the default synthetic task, trained through the CLI.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from crossview import cli, gradsuite
from crossview.attention import AttentionConfig, CrossViewTransformer, multi_head_cross_attention
from crossview.checkpoint import load_checkpoint
from crossview.data import LabelState
from crossview.losses import masked_multitask_ce
from crossview.metrics import auc_roc
from crossview.optim import ScheduleSpec, lr_at
from crossview.tensor import Tensor, precision
from crossview.tokenizer import Tokenizer


# -- 1 ----------------------------------------------------------------------


def test_c01_gradient_suite(criterion):
    start = time.perf_counter()
    results = gradsuite.run("all", seeds=10, eps=1e-5)
    seconds = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_error)
    ok = all(r.passed for r in results) and seconds <= 300
    criterion(1, ok, f"{len(results)} operations, worst {worst.name} {worst.max_error:.2e} (limit 1e-4), {seconds:.0f}s (limit 300s)")
    assert ok, gradsuite.format_table(results)


def test_c01_gradcheck_command_exit_code():
    assert cli.main(["gradcheck", "--scope", "all", "--seeds", "2"]) == 0


# -- 2 ----------------------------------------------------------------------


def oracle_multi_head(target, source, mod):
    """Per-pair scalar loops over one sample: heads, then head-major concat, then the 1x1 reduce."""
    h, d, f = mod.cfg.heads, mod.cfg.embed_dim, mod.cfg.features
    Wq, bq = mod.query.weight.data[:, :, 0, 0], mod.query.bias.data
    Wk, bk = mod.key.weight.data[:, :, 0, 0], mod.key.bias.data
    Wr, br = mod.reduce.weight.data[:, :, 0, 0], mod.reduce.bias.data
    t = target.reshape(f, -1)
    s = source.reshape(f, -1)
    n, m = t.shape[1], s.shape[1]
    concat = np.zeros((h * f, n))
    for k in range(h):
        for i in range(n):
            q = [bq[k * d + e] + sum(Wq[k * d + e, c] * t[c, i] for c in range(f)) for e in range(d)]
            logits = []
            for j in range(m):
                key = [bk[k * d + e] + sum(Wk[k * d + e, c] * s[c, j] for c in range(f)) for e in range(d)]
                logits.append(sum(q[e] * key[e] for e in range(d)) / math.sqrt(d))
            mx = max(logits)
            w = [math.exp(z - mx) for z in logits]
            total = sum(w)
            for c in range(f):
                concat[k * f + c, i] = sum(w[j] / total * s[c, j] for j in range(m))
    out = np.array([[br[o] + sum(Wr[o, r] * concat[r, i] for r in range(h * f)) for i in range(n)] for o in range(f)])
    return out.reshape(target.shape)


def test_c02_attention_oracle(criterion):
    worst = 0.0
    with precision(np.float64):
        for seed in range(100):
            g = np.random.default_rng([2, seed])
            mod = CrossViewTransformer(AttentionConfig(heads=3, embed_dim=4, source_mode="pixels", dropout=0.0, features=8), rng=g)
            for conv in (mod.query, mod.key, mod.reduce):
                conv.bias.data[:] = g.standard_normal(conv.bias.shape)
            t = g.standard_normal((1, 8, 4, 4))  # n = 16
            s = g.standard_normal((1, 8, 3, 4))  # m = 12
            got = multi_head_cross_attention(Tensor(t), Tensor(s), mod.cfg, mod).data[0]
            worst = max(worst, float(np.max(np.abs(got - oracle_multi_head(t[0], s[0], mod)))))
    ok = worst <= 1e-6
    criterion(2, ok, f"max |module - loop oracle| = {worst:.2e} over 100 seeds (limit 1e-6)")
    assert ok


# -- 3 ----------------------------------------------------------------------


def _max_permutation_change(mode: str, dtype) -> float:
    worst = 0.0
    with precision(dtype):
        for seed in range(50):
            g = np.random.default_rng([3, seed])
            mod = CrossViewTransformer(AttentionConfig(heads=4, embed_dim=8, source_mode=mode, tokens=16, dropout=0.1, features=16), rng=g)
            t = g.standard_normal((2, 16, 4, 4)).astype(dtype)
            s = g.standard_normal((2, 16, 5, 6)).astype(dtype)
            perm = g.permutation(30)
            s_perm = s.reshape(2, 16, 30)[:, :, perm].reshape(s.shape)
            a = mod(Tensor(t), Tensor(s)).data
            b = mod(Tensor(t), Tensor(s_perm)).data
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def test_c03_permutation_invariance(criterion):
    # checked in double precision; the float32 figure (summation-order rounding) is reported alongside
    worst = {mode: _max_permutation_change(mode, np.float64) for mode in ("pixels", "tokens")}
    single = {mode: _max_permutation_change(mode, np.float32) for mode in ("pixels", "tokens")}
    ok = all(v <= 1e-6 for v in worst.values())
    criterion(
        3,
        ok,
        f"max output change over 50 seeds (limit 1e-6): pixels {worst['pixels']:.1e}, tokens {worst['tokens']:.1e}"
        f" [float32: {single['pixels']:.1e}, {single['tokens']:.1e}]",
    )
    assert ok


# -- 4 ----------------------------------------------------------------------


def _convexity(dtype) -> tuple[float, float]:
    overshoot, weight_err = 0.0, 0.0
    with precision(dtype):
        for seed in range(100):
            g = np.random.default_rng([4, seed])
            f, L, m = int(g.integers(2, 17)), int(g.choice([16, 32, 48])), int(g.integers(1, 65))
            tok = Tokenizer(f, L, rng=g)
            X = Tensor((g.standard_normal((2, m, f)) * g.uniform(0.1, 5)).astype(dtype))
            ts = tok(X)
            lo, hi = X.data.min(axis=1, keepdims=True), X.data.max(axis=1, keepdims=True)
            for tokens, weights in zip(ts.layer_tokens, ts.weights):
                T = tokens.data
                overshoot = max(overshoot, float(np.max(lo - T)), float(np.max(T - hi)))
                weight_err = max(weight_err, float(np.max(np.abs(weights.data.sum(axis=1) - 1.0))))
                assert np.all(weights.data >= 0)
    return overshoot, weight_err


def test_c04_tokenizer_convexity(criterion):
    overshoot, weight_err = _convexity(np.float64)
    overshoot32, weight_err32 = _convexity(np.float32)
    # a convex combination may round a few ulps past the envelope; 1e-12 is far below any real violation
    ok = overshoot <= 1e-12 and weight_err <= 1e-6
    criterion(
        4,
        ok,
        f"100 instances x 3 layers: envelope overshoot {max(overshoot, 0.0):.1e}, weight-sum error {weight_err:.1e} (limit 1e-6)"
        f" [float32: {max(overshoot32, 0.0):.1e}, {weight_err32:.1e}]",
    )
    assert ok


# -- 5 and 6 ------------------------------------------------------------------

VARIANTS = ("cross-view-token", "cross-view-pixel", "late-join", "single-view")
SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def ordering_runs(tmp_path_factory):
    """Selected-epoch test AUC and wall time of every (variant, seed) run on the default task."""
    root = tmp_path_factory.mktemp("ordering")
    results = {}
    for variant in VARIANTS:
        for seed in SEEDS:
            out = root / f"{variant}-s{seed}"
            start = time.perf_counter()
            code = cli.main(["train", "--seed", str(seed), "--override", f"model.variant={variant}", "--out", str(out)])
            seconds = time.perf_counter() - start
            assert code == 0
            selection = load_checkpoint(out / "final.ckpt").extra["selection"]["agreement"]
            results[variant, seed] = (selection["test_auc"], seconds)
    return results


def _mean(runs, variant):
    return float(np.mean([runs[variant, s][0] for s in SEEDS]))


@pytest.mark.slow
def test_c05_ordering(ordering_runs, criterion):
    runs = ordering_runs
    token, late, single = (_mean(runs, v) for v in ("cross-view-token", "late-join", "single-view"))
    margins = [runs["cross-view-token", s][0] - runs["late-join", s][0] for s in SEEDS]
    slowest = max(t for _, t in runs.values())
    ok = token >= 0.85 and late <= 0.65 and single <= 0.55 and min(margins) >= 0.10 and slowest <= 1200
    per_seed = ", ".join(f"{v}: " + "/".join(f"{runs[v, s][0]:.3f}" for s in SEEDS) for v in VARIANTS)
    criterion(
        5,
        ok,
        f"mean test AUC token {token:.3f} (>= 0.85), late-join {late:.3f} (<= 0.65), single-view {single:.3f} (<= 0.55);"
        f" min per-seed margin {min(margins):.3f} (>= 0.10); slowest run {slowest:.0f}s (<= 1200s) [{per_seed}]",
    )
    assert ok


@pytest.mark.slow
def test_c06_pixel_token_parity(ordering_runs, criterion):
    token, pixel = _mean(ordering_runs, "cross-view-token"), _mean(ordering_runs, "cross-view-pixel")
    gap = abs(token - pixel)
    ok = gap <= 0.05
    criterion(6, ok, f"mean test AUC token {token:.3f}, pixel {pixel:.3f}, gap {gap:.3f} (limit 0.05)")
    assert ok


# -- 7 ----------------------------------------------------------------------


def test_c07_schedule_endpoints(criterion):
    checks = []
    for epochs, warmup in ((300, 30), (60, 6), (40, 4)):
        spec = ScheduleSpec(1e-4, 1e-6, epochs, warmup)
        jump = abs(lr_at(warmup - 1e-12, spec) - lr_at(warmup, spec))
        checks.append(lr_at(warmup, spec) == 1e-4 and lr_at(epochs, spec) == 1e-6 and jump <= 1e-12)
    ok = all(checks)
    criterion(7, ok, "lr_at(W) == 1e-4 and lr_at(E) == 1e-6 exactly, jump at W <= 1e-12, for (E, W) in (300, 30), (60, 6), (40, 4)")
    assert ok


# -- 8 ----------------------------------------------------------------------


def exact_pairwise_auc(scores, labels) -> Fraction:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(2 if p > q else 1 if p == q else 0 for p in pos for q in neg)
    return Fraction(wins, 2 * len(pos) * len(neg))


def test_c08_auc_matches_pairwise(criterion):
    mismatches = 0
    for seed in range(1000):
        g = np.random.default_rng([8, seed])
        n = int(g.integers(2, 80))
        scores = g.integers(0, int(g.integers(1, 20)) + 1, n) * 0.25  # heavy ties
        labels = g.random(n) < g.uniform(0.1, 0.9)
        labels[0], labels[1] = True, False
        mismatches += auc_roc(scores, labels) != float(exact_pairwise_auc(scores.tolist(), labels.tolist()))
    ok = mismatches == 0
    criterion(8, ok, f"{1000 - mismatches}/1000 tied random sets match the exact pairwise oracle bit-for-bit")
    assert ok


# -- 9 ----------------------------------------------------------------------


def test_c09_masked_gradients(criterion):
    nonzero = 0
    for seed in range(100):
        g = np.random.default_rng([9, seed])
        n, t = int(g.integers(1, 20)), int(g.integers(1, 6))
        states = g.integers(0, 4, size=(n, t))
        states[int(g.integers(n)), int(g.integers(t))] = LabelState.POS
        z = Tensor(g.standard_normal((n, t, 3)) * 3, requires_grad=True)
        masked_multitask_ce(z, states).backward()
        nonzero += int(np.count_nonzero(z.grad[states == LabelState.UNKNOWN]))
    ok = nonzero == 0
    criterion(9, ok, f"{nonzero} nonzero gradient entries at unknown-state logits over 100 random batches")
    assert ok


# -- 10 ---------------------------------------------------------------------


def test_c10_determinism(tmp_path, criterion):
    args = ["train", "--seed", "3", "--override", "schedule.epochs=3", "--override", "schedule.warmup=1"]
    args += ["--override", "synth.n=96", "--override", "synth.val_n=48", "--override", "synth.test_n=48"]
    args += ["--override", "train.checkpoint_every=1", "--override", "attention.dropout=0.3"]
    for name in ("a", "b"):
        assert cli.main([*args, "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    differing = [f for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = "metrics.csv" in files and "final.ckpt" in files and not differing and files == sorted(p.name for p in (tmp_path / "b").iterdir())
    criterion(10, ok, f"two identical cross-view-token runs (augmentation and dropout on): {len(files)} files compared, {len(differing)} differ")
    assert ok
