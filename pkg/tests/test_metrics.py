import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mnmt_imit.metrics import (
    EvalReport,
    TierSpec,
    bootstrap_significance,
    chrfpp,
    copy_ratio,
    corpus_bleu,
    evaluate_outputs,
    forgetting_delta,
    off_target_ratio,
    tier_of,
)
from mnmt_imit.synthlang import oracle_translate, sample_gold_corpus


def S(text):
    return tuple(text.split())


# five hand-built corpora: (hyps, refs)
CORPORA = [
    ([S("a b c d")], [S("a b c e")]),
    ([S("the cat sat on the mat"), S("a dog")], [S("the cat sat on a mat"), S("the dog barked")]),
    ([S("x y z"), S("p q r s t"), S("one two")], [S("x y z"), S("p q r t s"), S("one two three four")]),
    ([S("hello , world !"), S("good day")], [S("hello world !"), S("good day sir .")]),
    ([S("aa bb aa bb aa"), S("cc"), S("dd ee ff gg")], [S("aa bb aa cc"), S("cc dd"), S("dd ee ff gg hh")]),
]


def oracle_bleu(hyps, refs):
    """Corpus BLEU by direct counting, zero counts at n >= 2 smoothed to 1 / (total + 1)."""
    matches, totals = [0] * 4, [0] * 4
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    for h, r in zip(hyps, refs):
        for n in range(1, 5):
            h_grams = [h[i:i + n] for i in range(len(h) - n + 1)]
            r_grams = [r[i:i + n] for i in range(len(r) - n + 1)]
            for g in set(h_grams):
                matches[n - 1] += min(h_grams.count(g), r_grams.count(g))
            totals[n - 1] += len(h_grams)
    if matches[0] == 0:
        return 0.0
    precs = []
    for n in range(4):
        if n > 0 and matches[n] == 0:
            precs.append(1 / (totals[n] + 1))
        else:
            precs.append(matches[n] / totals[n])
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100 * bp * math.exp(sum(math.log(p) for p in precs) / 4)


def _split(words):
    out = []
    for w in words:
        if len(w) > 1 and not w[-1].isalnum():
            out += [w[:-1], w[-1]]
        elif len(w) > 1 and not w[0].isalnum():
            out += [w[0], w[1:]]
        else:
            out.append(w)
    return out


def oracle_chrfpp(hyps, refs):
    """chrF++ (char 1-6, word 1-2, beta 2) from per-order corpus sums."""
    orders = [("c", n) for n in range(1, 7)] + [("w", n) for n in range(1, 3)]
    sums = {o: [0, 0, 0] for o in orders}
    for h, r in zip(hyps, refs):
        for kind, n in orders:
            if kind == "c":
                hs, rs = "".join(h), "".join(r)
            else:
                hs, rs = _split(h), _split(r)
            hg = [tuple(hs[i:i + n]) for i in range(len(hs) - n + 1)]
            rg = [tuple(rs[i:i + n]) for i in range(len(rs) - n + 1)]
            m = sum(min(hg.count(g), rg.count(g)) for g in set(hg))
            sums[(kind, n)][0] += len(hg) if rg else 0
            sums[(kind, n)][1] += len(rg)
            sums[(kind, n)][2] += m
    p = r = 0.0
    eff = 0
    for nh, nr, m in sums.values():
        if nh and nr:
            p += m / nh
            r += m / nr
            eff += 1
    if not eff:
        return 0.0
    p, r = p / eff, r / eff
    return 0.0 if p + r == 0 else 100 * 5 * p * r / (4 * p + r)


@pytest.mark.parametrize("hyps,refs", CORPORA)
def test_bleu_matches_oracle(hyps, refs):
    assert abs(corpus_bleu(hyps, refs) - oracle_bleu(hyps, refs)) < 1e-6


@pytest.mark.parametrize("hyps,refs", CORPORA)
def test_chrfpp_matches_oracle(hyps, refs):
    assert abs(chrfpp(hyps, refs) - oracle_chrfpp(hyps, refs)) < 1e-6


def test_bleu_hand_case():
    # precisions 3/4, 2/3, 1/2 and 0 -> 1/2 after smoothing; no brevity penalty
    expected = 100 * (0.75 * (2 / 3) * 0.5 * 0.5) ** 0.25
    assert abs(corpus_bleu([S("a b c d")], [S("a b c e")]) - expected) < 1e-9


def test_bleu_extremes():
    refs = [S("a b c d e"), S("f g h i")]
    assert corpus_bleu(refs, refs) == pytest.approx(100.0)
    assert corpus_bleu([S("x y z"), S("q")], refs) == 0.0
    assert corpus_bleu([()], [S("a")]) == 0.0


def test_chrfpp_extremes():
    refs = [S("a b c d e"), S("f g h i")]
    assert chrfpp(refs, refs) == pytest.approx(100.0)
    assert chrfpp([()], [S("abc")]) == 0.0


def test_sacrebleu_cross_check():
    sacrebleu = pytest.importorskip("sacrebleu")
    for hyps, refs in CORPORA:
        h = [" ".join(x) for x in hyps]
        r = [" ".join(x) for x in refs]
        chrf = sacrebleu.metrics.CHRF(word_order=2).corpus_score(h, [r]).score
        assert abs(chrfpp(hyps, refs) - chrf) < 1e-6
    hyps, refs = CORPORA[1]  # non-zero matches at every order, so smoothing plays no part
    ours = corpus_bleu(hyps, refs)
    theirs = sacrebleu.metrics.BLEU(tokenize="none", smooth_method="none").corpus_score(
        [" ".join(x) for x in hyps], [[" ".join(x) for x in refs]]).score
    assert abs(ours - theirs) < 1e-6


words = st.lists(st.sampled_from("a b c d e f".split()), min_size=1, max_size=8).map(tuple)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=6), st.randoms())
def test_metrics_permutation_invariant(pairs, rnd):
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    hp, rp = [hyps[i] for i in order], [refs[i] for i in order]
    assert corpus_bleu(hyps, refs) == pytest.approx(corpus_bleu(hp, rp), abs=1e-9)
    assert chrfpp(hyps, refs) == pytest.approx(chrfpp(hp, rp), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=5))
def test_bleu_100_iff_identical(pairs):
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    assert (abs(corpus_bleu(hyps, refs) - 100) < 1e-9) == (hyps == refs)


def test_copy_ratio_cases():
    assert copy_ratio([S("p q")], [S("x x y")]) == 1 / 3
    assert copy_ratio([S("a b c")], [S("a b c")]) == 1.0
    assert copy_ratio([S("a b")], [S("c d")]) == 0.0
    # copies are clipped by source multiplicity; the repeat is added on top
    assert copy_ratio([S("a")], [S("a a")]) == (1 + 1) / 2


def test_copy_ratio_on_oracle_output_is_repeat_rate(family):
    c = sample_gold_corpus(family, "ora", 100, 4)
    srcs = c.sources
    hyps = [oracle_translate(family, s, "ora", "orc") for s in srcs]
    repeats = sum(sum(a == b for a, b in zip(h, h[1:])) for h in hyps)
    assert copy_ratio(srcs, hyps) == repeats / sum(len(h) for h in hyps)


def test_off_target_ratio(family):
    c = sample_gold_corpus(family, "orb", 200, 2)
    hyps = [oracle_translate(family, p, "pvt", "orb") for p in c.targets]
    assert off_target_ratio(hyps, "orb", family) == 0.0
    quarter = [h if i % 4 else oracle_translate(family, h, "orb", "ord") for i, h in enumerate(hyps[:4])]
    assert off_target_ratio(quarter, "orb", family) == 0.25


def test_off_target_sweep_matches_hand_labels(family):
    rng = random.Random(0)
    c = sample_gold_corpus(family, "orc", 200, 5)
    hyps, wrong = [], 0
    for p in c.targets:
        lang = rng.choice(["orc", "orc", "ora", "pvt"])
        hyps.append(oracle_translate(family, p, "pvt", lang))
        wrong += lang != "orc"
    assert off_target_ratio(hyps, "orc", family) == wrong / 200


def test_tiers():
    assert tier_of(999) == "Low"
    assert tier_of(1000) == "Mid"
    assert tier_of(3999) == "Mid"
    assert tier_of(4000) == "High"
    assert [tier_of(n) for n in (500, 2000, 8000)] == ["Low", "Mid", "High"]
    assert tier_of(10, TierSpec((5, 20))) == "Mid"
    with pytest.raises(ValueError):
        TierSpec((5, 5))


def test_bootstrap():
    refs = [S(f"w{i} a b c d") for i in range(60)]
    p, sig = bootstrap_significance(refs, refs, refs, 1000, 0.01, seed=3)
    assert p == 1.0 and not sig
    rng = random.Random(1)
    junk = [tuple(rng.sample("q r s t u v".split(), 4)) for _ in refs]
    p, sig = bootstrap_significance(refs, junk, refs, 1000, 0.01, seed=3)
    assert p < 0.01 and sig
    p_rev, sig_rev = bootstrap_significance(junk, refs, refs, 1000, 0.01, seed=3)
    assert p_rev == 1.0 and not sig_rev
    half = [r if i % 2 else j for i, (r, j) in enumerate(zip(refs, junk))]
    assert bootstrap_significance(half, junk, refs, 500, seed=9) == bootstrap_significance(half, junk, refs, 500, seed=9)


def test_forgetting_delta():
    def rep(src, tgt, bleu):
        return EvalReport((src, tgt), bleu, 0.0, 0.0, 0.0, 10)

    expert = [rep("a", "p", 20.0), rep("b", "p", 30.0), rep("p", "a", 10.0)]
    ext = [rep("a", "p", 18.5), rep("b", "p", 31.0), rep("p", "a", 7.0)]
    assert forgetting_delta(expert, expert) == {d.direction: 0.0 for d in expert}
    delta = forgetting_delta(ext, expert)
    assert delta[("a", "p")] == pytest.approx(-1.5)
    assert sum(delta.values()) / 3 == pytest.approx((-1.5 + 1.0 - 3.0) / 3)
    with pytest.raises(KeyError):
        forgetting_delta(ext[:2], expert)


def test_eval_report_validation():
    with pytest.raises(ValueError):
        EvalReport(("a", "b"), 10.0, 10.0, 0.0, 1.5, 3)
    with pytest.raises(ValueError):
        EvalReport(("a", "b"), 120.0, 10.0, 0.0, 0.5, 3)


def test_evaluate_outputs(family):
    c = sample_gold_corpus(family, "ora", 20, 0)
    r = evaluate_outputs(c.targets, c.sources, c.sources, ("pvt", "ora"), family, "Low")
    assert r.bleu == pytest.approx(100) and r.otr == 0.0 and r.T == 20 and r.tier == "Low"
