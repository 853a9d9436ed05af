"""The numbered acceptance gate. Each test is one criterion at its stated
tolerance; the terminal summary prints one PASS/FAIL line per criterion.

Criterion 8 (desk-scale training) is the slow pair of runs; everything else
finishes in seconds. Criterion 11 lives in the frontend's own test suite.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from phototag import fixture_path
from phototag.arch import Geometry, HeadConfig, expand_layers, parse_arch, parse_arch_file
from phototag.complexity import count_complexity, factorization_ratio
from phototag.datasets import SHAPE_CLASSES, make_shapes_corpus
from phototag.metrics import RankedPredictions, average_precision, mean_ap
from phototag.multilabel import (
    LabelSet,
    expected_loss_oracle,
    randomized_softmax_loss,
)
from phototag.network import TrainConfig, _to_nchw, augment, build_network, train
from phototag import tensor as T

FULL_HEAD = HeadConfig(spp_levels=(6, 3, 2, 1), hidden_fc_widths=(4096, 4096),
                       dropout_rate=0.2, num_classes=1000)
FULL_INPUT = Geometry(221, 221, 3)


def load_spec(name):
    return parse_arch_file(fixture_path("arch", f"{name}.arch").read_text())


def full_report(name):
    return count_complexity(expand_layers(load_spec(name), FULL_INPUT, FULL_HEAD))


# ---------------------------------------------------------------------------
# Criterion 1: Table-4 multiply-add reproduction

@pytest.mark.acceptance(1, "ops totals match the published table at stated tolerances, < 1 s")
@pytest.mark.parametrize("name,target_m,rel", [
    ("yfnet_a", 1117, 0.01),
    ("yfnet_d", 877, 0.01),
    ("yfnet_b", 1068, 0.025),
    ("yfnet_c", 940, 0.025),
    ("ctc_a", 926, 0.06),
    ("ctc_j", 901, 0.06),
])
def test_criterion_1_ops(name, target_m, rel):
    t0 = time.perf_counter()
    report = full_report(name)
    elapsed = time.perf_counter() - t0
    assert report.total_ops == pytest.approx(target_m * 1e6, rel=rel)
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# Criterion 2: Table-4 parameter reproduction + built-network equality

@pytest.mark.acceptance(2, "param totals within 2% and built network matches analyzer exactly")
@pytest.mark.parametrize("name,target_m", [
    ("yfnet_a", 80),
    # yfnet_b is expected to FAIL, honestly: the published 78M is inconsistent
    # with the table's own architecture definition. Factoring stage 2 alone
    # saves only 0.05M params off yfnet-a's 79.75M, so any convention that
    # matches yfnet-a at 80M necessarily puts yfnet-b at 79.70M, which is
    # 2.18% from 78M -- outside the stated 2%. See the decisions ledger.
    ("yfnet_b", 78),
    ("yfnet_c", 78),
    ("yfnet_d", 78),
])
def test_criterion_2_params(name, target_m):
    report = full_report(name)
    assert report.total_params == pytest.approx(target_m * 1e6, rel=0.02)


@pytest.mark.acceptance(2, "param totals within 2% and built network matches analyzer exactly")
def test_criterion_2_built_network_equality():
    spec = load_spec("yfnet_d")
    plan = expand_layers(spec, FULL_INPUT, FULL_HEAD)
    net = build_network(plan, FULL_HEAD, init_seed=0)
    assert net.param_count == count_complexity(plan).total_params


# ---------------------------------------------------------------------------
# Criterion 3: factorization ratio exactly 2/3

@pytest.mark.acceptance(3, "factored/square ops ratio is exactly 2/3 at equal channels")
def test_criterion_3_factorization():
    for ch in (1, 16, 128, 256, 512):
        assert factorization_ratio(ch, ch, Geometry(36, 36, ch)) == Fraction(2, 3)


# ---------------------------------------------------------------------------
# Criterion 4: SPP bin contract

@pytest.mark.acceptance(4, "SPP yields exactly 50 bins per channel for levels {6,3,2,1}")
def test_criterion_4_spp_bins():
    rng = np.random.default_rng(0)
    for h, w in [(6, 6), (6, 9), (7, 7), (13, 29), (36, 36), (64, 48)]:
        c = int(rng.integers(1, 5))
        out = T.spp(T.Tensor(rng.standard_normal((2, c, h, w))), [6, 3, 2, 1])
        assert out.shape == (2, c * 50)


# ---------------------------------------------------------------------------
# Criterion 5: gradient suite (50 random cases per layer, < 2 min)

def _proj_scalar(out, proj):
    flat = out.data.reshape(-1)
    w = np.resize(np.asarray(proj, dtype=np.float64).reshape(-1), flat.shape)
    scalar = T.Tensor(np.asarray(float(flat @ w)))
    scalar._parents = (out,)
    scalar._backward = lambda d: (w.reshape(out.shape) * d,)
    return scalar


@pytest.mark.acceptance(5, "every layer passes 50 finite-difference checks at <1e-5, <2 min")
def test_criterion_5_gradient_suite():
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    worst = {}

    def check(op_name, fn, inputs, rel=1e-5):
        report = T.gradient_check(fn, inputs, tolerance=rel)
        worst[op_name] = max(worst.get(op_name, 0.0), report.max_rel_err)

    for case in range(50):
        proj = rng.standard_normal(16)

        n, c, co = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(kh, kh + 4)), int(rng.integers(kw, kw + 4))
        stride = int(rng.integers(1, 3))
        padding = ("valid", "same")[int(rng.integers(0, 2))]
        check("conv2d",
              lambda x, k: _proj_scalar(T.conv2d(x, k, stride, padding), proj),
              [T.Tensor(rng.standard_normal((n, c, h, w))), T.Tensor(rng.standard_normal((co, c, kh, kw)))])

        win = int(rng.integers(1, 4))
        pst = int(rng.integers(1, 4))
        ph, pw = int(rng.integers(win, win + 4)), int(rng.integers(win, win + 4))
        check("max_pool",
              lambda x: _proj_scalar(T.max_pool(x, win, pst), proj),
              [T.Tensor(rng.standard_normal((n, c, ph, pw)))])

        levels = [[1], [2, 1], [3, 2, 1], [6, 3, 2, 1]][int(rng.integers(0, 4))]
        check("spp",
              lambda x: _proj_scalar(T.spp(x, levels), proj),
              [T.Tensor(rng.standard_normal((n, c, int(rng.integers(1, 7)), int(rng.integers(1, 7)))))])

        bc = int(rng.integers(1, 4))
        xbn = T.Tensor(rng.standard_normal((int(rng.integers(2, 4)), bc, 2, int(rng.integers(1, 4)))))
        check("batch_norm",
              lambda x, g, b: _proj_scalar(
                  T.batch_norm(x, g, b, T.BatchNormState(bc, dtype=np.float64), training=True), proj),
              [xbn, T.Tensor(rng.standard_normal(bc) + 1.5), T.Tensor(rng.standard_normal(bc))])

        f, o = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        check("fully_connected",
              lambda x, wt: _proj_scalar(T.fully_connected(x, wt), proj),
              [T.Tensor(rng.standard_normal((n, f))), T.Tensor(rng.standard_normal((o, f)))])

        xr = rng.standard_normal((3, 4))
        xr[np.abs(xr) < 1e-3] = 0.7  # relu kink at exactly 0 is excluded
        check("relu", lambda x: _proj_scalar(T.relu(x), proj), [T.Tensor(xr)])

        check("sigmoid", lambda x: _proj_scalar(T.sigmoid(x), proj),
              [T.Tensor(rng.standard_normal((2, 5)))])

        seed = case
        check("dropout",
              lambda x: _proj_scalar(T.dropout(x, 0.4, np.random.default_rng(seed), training=True), proj),
              [T.Tensor(rng.standard_normal((3, 4)))])

        v = int(rng.integers(2, 8))
        targets = rng.integers(0, v, size=n)
        check("softmax_ce", lambda x: T.softmax_cross_entropy(x, targets),
              [T.Tensor(rng.standard_normal((n, v)))])

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0, f"gradient suite took {elapsed:.0f}s"
    for op_name, err in worst.items():
        assert err < 1e-5, f"{op_name} worst rel err {err:.2e}"


# ---------------------------------------------------------------------------
# Criterion 6: randomized softmax vs enumeration oracle

@pytest.mark.acceptance(6, "10k-draw mean loss within 1% of the enumeration oracle, 20 instances")
def test_criterion_6_randomized_softmax():
    rng = np.random.default_rng(123)
    for _ in range(20):
        v = int(rng.integers(4, 24))
        logits = rng.standard_normal(v) * rng.uniform(0.5, 2.0)
        n_pos = int(rng.integers(1, min(v, 6)))
        labels = LabelSet.of(rng.choice(v, size=n_pos, replace=False))
        draws = sum(randomized_softmax_loss(logits, labels, rng)[0] for _ in range(10_000))
        empirical = draws / 10_000
        exact = expected_loss_oracle(logits, labels)
        assert empirical == pytest.approx(exact, rel=0.01)


# ---------------------------------------------------------------------------
# Criterion 7: mAP equals an independent brute-force implementation

def _brute_force_map(instance):
    """Straight-from-definition second implementation."""
    aps = []
    for tag in sorted(instance):
        items, scores, rel = instance[tag]
        if not any(rel):
            continue
        order = sorted(range(len(items)), key=lambda i: (-scores[i], i))
        hits = 0
        precisions = []
        for rank, idx in enumerate(order, start=1):
            if rel[idx]:
                hits += 1
                precisions.append(hits / rank)
        aps.append(sum(precisions) / len(precisions))
    return sum(aps) / len(aps)


@pytest.mark.acceptance(7, "mean_ap matches brute force exactly on 200 random instances")
def test_criterion_7_map_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n_tags = int(rng.integers(1, 21))
        n_items = int(rng.integers(1, 101))
        instance = {}
        preds = RankedPredictions()
        any_pos = False
        for t in range(n_tags):
            tag = f"tag{t:02d}"
            items = [f"i{j:03d}" for j in range(n_items)]
            scores = rng.standard_normal(n_items)
            rel = rng.random(n_items) < rng.uniform(0.05, 0.5)
            instance[tag] = (items, list(scores), list(rel))
            any_pos = any_pos or rel.any()
            for item, s in zip(items, scores):
                preds.add_score(tag, item, float(s))
            for item, r in zip(items, rel):
                if r:
                    preds.add_truth(tag, item)
        if not any_pos:
            instance["tag00"][2][0] = True
            preds.add_truth("tag00", "i000")
        assert mean_ap(preds) == _brute_force_map(instance)


# ---------------------------------------------------------------------------
# Criterion 8: desk-scale training, clean and with missing-label noise
#
# The mAP thresholds (0.90 clean / 0.70 noisy) are asserted faithfully and
# are expected to FAIL: dividing every width by 8 and feeding 64x64 input
# collapses the architecture's spatial geometry to 1x1 after stage 3, so the
# classifier head sees only 32 global-max features. A per-class probe on the
# trained trunk's features tops out near mAP 0.68, independent of the head,
# loss, or schedule (no train/infer mismatch and no train/test gap were
# measured). Best observed with this exact configuration: ~0.67 clean. The
# decisions ledger holds the full blocking analysis. The runtime and
# stage-loss sub-assertions do hold.

REDUCED_D = "(7,8)/2+3/3;(1x3+3x1,16)x2+2/2;(1x3+3x1,32)x3+3/3;(1x3+3x1,64)x2+(1x3+3x1,32)"
DESK_HEAD = HeadConfig(spp_levels=(6, 3, 2, 1), hidden_fc_widths=(512, 512),
                       dropout_rate=0.2, num_classes=len(SHAPE_CLASSES))
DESK_CONFIG = TrainConfig(batch_size=256, base_lr=0.05, lr_decay_factor=10.0,
                          lr_decay_every=20, total_epochs=60, momentum=0.9,
                          weight_decay=0.0005, seed=0, base_size=74, crop_size=64)


def _desk_test_map(net, test_set):
    preds = RankedPredictions()
    logits = []
    for lo in range(0, len(test_set), 200):
        batch = np.stack([augment(img, "test", crop_h=64, crop_w=64)
                          for img in test_set.images[lo:lo + 200]])
        logits.append(net.predict(_to_nchw(batch)))
    logits = np.concatenate(logits)
    for i in range(len(test_set)):
        for c in range(len(SHAPE_CLASSES)):
            preds.add_score(str(c), f"t{i:04d}", float(logits[i, c]))
        for c in test_set.labels[i]:
            preds.add_truth(str(c), f"t{i:04d}")
    return mean_ap(preds)


def _stage_means(losses, every):
    return [float(np.mean(losses[s : s + every])) for s in range(0, len(losses), every)]


def _run_desk(drop_rate):
    plan = expand_layers(parse_arch("yfnet-d-div8", REDUCED_D), Geometry(64, 64, 3), DESK_HEAD)
    net = build_network(plan, DESK_HEAD, init_seed=0)
    train_set = make_shapes_corpus(5000, seed=100, size=74, drop_label_rate=drop_rate)
    test_set = make_shapes_corpus(1000, seed=999, size=74)
    t0 = time.perf_counter()
    result = train(net, train_set, randomized_softmax_loss, DESK_CONFIG)
    elapsed = time.perf_counter() - t0
    return net, test_set, result, elapsed


@pytest.mark.acceptance(8, "reduced model reaches mAP >= 0.90 clean / >= 0.70 at 50% label deletion")
def test_criterion_8_clean():
    net, test_set, result, elapsed = _run_desk(drop_rate=0.0)
    assert elapsed < 1800, f"clean run took {elapsed:.0f}s"
    stages = _stage_means(result.epoch_losses, DESK_CONFIG.lr_decay_every)
    assert stages[0] > stages[1] > stages[2], f"stage losses not decreasing: {stages}"
    score = _desk_test_map(net, test_set)
    assert score >= 0.90, f"clean test mAP {score:.4f}"


@pytest.mark.acceptance(8, "reduced model reaches mAP >= 0.90 clean / >= 0.70 at 50% label deletion")
def test_criterion_8_missing_labels():
    net, test_set, result, elapsed = _run_desk(drop_rate=0.5)
    assert elapsed < 1800, f"noisy run took {elapsed:.0f}s"
    assert result.avg_tags_per_image < 1.5  # deletions really happened
    score = _desk_test_map(net, test_set)
    assert score >= 0.70, f"missing-label test mAP {score:.4f}"


# ---------------------------------------------------------------------------
# Criterion 9: tag pipeline determinism + ranking divergence

@pytest.mark.acceptance(9, "tag pipeline bit-identical across runs/orderings; photo vs user ranking diverges")
def test_criterion_9_tag_pipeline():
    from phototag.tagselect import (
        apply_exclusions, build_training_set, compute_tag_stats,
        ingest_metadata_file, load_rules, rank_tags,
    )

    result = ingest_metadata_file(fixture_path("metadata_1k.tsv"))
    assert len(result.records) == 1000
    rules = load_rules(fixture_path("rules"))

    def pipeline(records):
        stats = compute_tag_stats(records)
        by_user = rank_tags(stats, "user_count", 30)
        by_photo = rank_tags(stats, "photo_count", 30)
        vocab = apply_exclusions(by_user, rules, stats)
        sel = build_training_set(records, vocab, k=10)
        return (
            sorted(stats.photo_count.items()),
            sorted(stats.user_count.items()),
            by_user,
            by_photo,
            [(e.tag, e.decision) for e in vocab.decisions],
            {t: s.photos for t, s in sel.items()},
        )

    base = pipeline(result.records)
    again = pipeline(result.records)
    reordered = pipeline(list(reversed(result.records)))
    assert base == again == reordered

    by_photo = [t for t, _ in base[3]]
    by_user = [t for t, _ in base[2]]
    # The uploader-bot artifact tops raw photo counts but vanishes from the
    # distinct-user ranking.
    assert by_photo[0] in ("square+format", "iphoneography")
    assert by_photo[0] not in by_user


# ---------------------------------------------------------------------------
# Criterion 10: bias suggestion and table persistence

@pytest.mark.acceptance(10, "suggest_bias inverts the known threshold; tables round-trip bit-exactly")
def test_criterion_10_calibration(tmp_path):
    from phototag.calib import (
        CalibrationTable, JudgmentJournal, ScoreIndex, suggest_bias,
    )
    from phototag.multilabel import posterior

    s_star = 1.0
    index = ScoreIndex()
    journal = JudgmentJournal()
    pid = 0
    # Ten judged photos at each logit step above the threshold, exactly 9 of
    # 10 correct; every inspection window over them has precision 0.90.
    for step in range(11):
        s = s_star + 0.2 * step
        for k in range(10):
            photo = f"s{pid:04d}"
            index.add("cat", photo, s)
            journal.record(photo, "cat", "correct" if k < 9 else "incorrect")
            pid += 1
    index.finalize()

    suggestion = suggest_bias(index, journal, "cat", target_p=0.9, window=0.05)
    expected_bias = math.log(9) - s_star
    assert abs(suggestion.bias - expected_bias) < 0.05
    assert not suggestion.unconstrained

    # Empirical judged precision inside the posterior-0.9 window at that bias.
    verdicts = journal.for_tag("cat")
    logits = dict(index.tag_rows("cat"))
    in_window = [
        verdicts[p] == "correct"
        for p in verdicts
        if 0.85 <= posterior(logits[p], suggestion.bias) <= 0.95
    ]
    assert len(in_window) >= 10
    precision = sum(in_window) / len(in_window)
    assert precision == pytest.approx(0.90, abs=0.02)

    # Bit-exact persistence, current version.
    table = CalibrationTable(["cat", "dog"])
    table.set_bias("cat", suggestion.bias, stamp="2026-08-08T00:00:00")
    table.set_enabled("dog", False, stamp="2026-08-08T00:00:00")
    p1 = tmp_path / "t1.tsv"
    p2 = tmp_path / "t2.tsv"
    table.save(p1)
    loaded = CalibrationTable.load(p1)
    assert loaded.entries == table.entries
    loaded.save(p2)
    assert p2.read_bytes() == p1.read_bytes()

    # Tables written by the older format version load with identical biases.
    old = tmp_path / "old.tsv"
    old.write_text(f"phototag-calibtable\t1\ncat\t{suggestion.bias!r}\t1\n", encoding="utf-8")
    legacy = CalibrationTable.load(old)
    assert legacy.get("cat").bias == suggestion.bias
