from __future__ import annotations

import os
from pathlib import Path

import pytest

from mnmt_imit import harness

from mnmt_imit.corpus import train_tokenizer
from mnmt_imit.model import ModelConfig, train_expert
from mnmt_imit.synthlang import FamilySpec, make_language_family, sample_gold_corpus

ORIGINALS = ("ora", "orb", "orc", "ord")


@pytest.fixture(scope="session")
def family():
    return make_language_family(FamilySpec("pvt", ORIGINALS, ("nwa",), 50, seed=3))


@pytest.fixture(scope="session")
def corpora(family):
    sizes = {"ora": 40, "orb": 40, "orc": 80, "ord": 80}
    out = {lang: sample_gold_corpus(family, lang, n, seed=0) for lang, n in sizes.items()}
    out["nwa"] = sample_gold_corpus(family, "nwa", 40, seed=0)
    return out


@pytest.fixture(scope="session")
def tokenizer(family, corpora):
    return train_tokenizer(list(corpora.values()), None, family.languages)


@pytest.fixture(scope="session")
def tiny_expert(family, corpora, tokenizer):
    """A barely trained expert; good enough to exercise every code path."""
    cfg = ModelConfig(embed_dim=8, hidden_dim=16, dropout=0.1, max_decode_len=48, seed=0)
    originals = {lang: corpora[lang] for lang in family.originals}
    return train_expert(family, originals, cfg, tokenizer, steps=30, batch_size=8, lr=3e-3)


DESK_DIR = Path(os.environ.get("MNMT_DESK_DIR", Path(__file__).resolve().parents[1] / "runs" / "desk"))


@pytest.fixture(scope="session")
def desk():
    """The desk-scale plan run in ``MNMT_DESK_DIR`` (default runs/desk), resumed if incomplete."""
    plan = harness.desk_plan()
    table = harness.run_experiment(plan, DESK_DIR)
    ws = harness.prepare_data(plan, DESK_DIR)
    sig = harness.significance_by_seed(ws)
    checks = {c.number: c for c in harness.directional_checks(table, sig)}
    return ws, table, sig, checks


ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
