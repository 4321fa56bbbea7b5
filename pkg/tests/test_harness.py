import json
import shutil

import pytest
import yaml

from mnmt_imit import harness
from mnmt_imit.data import read_sentences
from mnmt_imit.metrics import EvalReport, evaluate_outputs, forgetting_delta

TINY = {
    "family": {"pivot": "pvt", "originals": ["ora", "orb", "orc", "ord", "ore", "orf"], "new": ["nwa"],
               "lexicon_size": 50, "seed": 3},
    "tier_sizes": {"ora": 20, "orb": 20, "orc": 60, "ord": 60, "ore": 120, "orf": 120},
    "new_size": 30,
    "seeds": [0],
    "expert": {"embed_dim": 8, "hidden_dim": 16, "steps": 20, "batch_size": 8, "lr": 0.003},
    "extend": {"steps": 3, "lr": 0.001, "batch_size": 4, "beam": 2},
    "dev_size": 4,
    "test_size": 6,
    "beam": 2,
    "tiers": [50, 100],
    "bootstrap_iterations": 100,
}


def tiny_plan(**over):
    return harness.ExperimentPlan.from_dict({**TINY, **over})


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    table = harness.run_experiment(tiny_plan(), out)
    return out, table


def test_plan_defaults_and_validation():
    plan = harness.desk_plan()
    assert [m.name for m in plan.methods] == ["finetune", "on_the_fly_k4", "imit_k2", "imit_k4"]
    assert len(plan.cells()) == 4 * 2 * 3
    with pytest.raises(ValueError):
        harness.ExperimentPlan.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        harness.ExperimentPlan.from_dict({**TINY, "expert": {"wings": 2}})
    with pytest.raises(ValueError):
        tiny_plan(methods=[{"name": "a", "kind": "imit", "k": 9}])
    with pytest.raises(ValueError):
        tiny_plan(methods=[{"name": "a", "kind": "finetune", "k": 2}])
    with pytest.raises(ValueError):
        tiny_plan(methods=[{"name": "expert", "kind": "finetune"}])
    with pytest.raises(ValueError):
        tiny_plan(seeds=[])
    with pytest.raises(ValueError):
        tiny_plan(bootstrap_iterations=10)
    with pytest.raises(ValueError):
        tiny_plan(tier_sizes={"ora": 5})


def test_plan_round_trip(tmp_path):
    plan = tiny_plan()
    assert harness.ExperimentPlan.from_dict(plan.to_dict()) == plan
    (tmp_path / "p.yaml").write_text(yaml.safe_dump(TINY))
    assert harness.ExperimentPlan.load(tmp_path / "p.yaml") == plan


def test_probe_and_new_directions():
    plan = tiny_plan()
    assert ("ora", "pvt") in plan.probe_directions() and ("pvt", "ora") in plan.probe_directions()
    assert plan.new_directions("new2orig")[0] == ("nwa", "ora")
    assert plan.new_directions("orig2new")[0] == ("ora", "nwa")


def test_run_writes_every_cell(full_run):
    out, table = full_run
    plan = tiny_plan()
    for m, d, s in plan.cells():
        man = json.loads((out / "cells" / harness.cell_name(m, d, s) / "manifest.json").read_text())
        assert man["status"] == "done"
        # the expert is never touched by an extension run
        assert man["expert_hash"] == man["expert_hash_after"]
    assert not table.failed()
    assert {p.name for p in (out / "tables").iterdir()} == {"q1.tsv", "q2.tsv", "results.tsv"}


def test_rerun_skips_completed_work(full_run):
    out, _ = full_run
    stamps = {p: p.stat().st_mtime_ns for p in out.rglob("*.ckpt")}
    before = (out / "tables" / "results.tsv").read_bytes()
    harness.run_experiment(tiny_plan(), out)
    assert {p: p.stat().st_mtime_ns for p in out.rglob("*.ckpt")} == stamps
    assert (out / "tables" / "results.tsv").read_bytes() == before


def test_interrupted_cell_is_rerun(full_run, tmp_path):
    out, _ = full_run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    plan = tiny_plan()
    victim = copy / "cells" / harness.cell_name(*plan.cells()[0]) / "manifest.json"
    victim.unlink()
    harness.run_experiment(plan, copy)
    assert json.loads(victim.read_text())["status"] == "done"
    for name in ("q1.tsv", "q2.tsv", "results.tsv"):
        assert (copy / "tables" / name).read_bytes() == (out / "tables" / name).read_bytes()


def test_end_to_end_deterministic(full_run, tmp_path):
    out, _ = full_run
    plan = tiny_plan(methods=[{"name": "imit_k2", "kind": "imit", "k": 2}], directions=["orig2new"])
    harness.run_experiment(plan, tmp_path / "a")
    harness.run_experiment(plan, tmp_path / "b")
    for name in ("q1.tsv", "q2.tsv", "results.tsv"):
        assert (tmp_path / "a" / "tables" / name).read_bytes() == (tmp_path / "b" / "tables" / name).read_bytes()
    # same cell inside the larger plan produced the same outputs
    cell = "imit_k2__orig2new__s0"
    for f in (out / "cells" / cell / "hyps").iterdir():
        assert (tmp_path / "a" / "cells" / cell / "hyps" / f.name).read_bytes() == f.read_bytes()


def test_numbers_recompute_from_hypotheses(full_run):
    out, table = full_run
    plan = tiny_plan()
    ws = harness.prepare_data(plan, out)
    for r in table.select(method="imit_k4", direction="new2orig"):
        hyps = read_sentences(out / "cells" / "imit_k4__new2orig__s0" / "hyps" / f"{r['src']}-{r['tgt']}.txt")
        rep = evaluate_outputs(ws.test[r["src"]], hyps, ws.test[r["tgt"]], (r["src"], r["tgt"]), ws.family)
        assert rep.bleu == r["bleu"] and rep.chrfpp == r["chrfpp"] and rep.cr == r["cr"] and rep.otr == r["otr"]


def _read_tsv(path):
    rows = [line.split("\t") for line in path.read_text().splitlines()]
    return rows[0], rows[1:]


def test_q1_columns_follow_plan_order(full_run):
    out, _ = full_run
    header, rows = _read_tsv(out / "tables" / "q1.tsv")
    assert header[:2] == ["direction", "method"]
    assert [h.split("(")[0] for h in header[2:8]] == list(tiny_plan().originals)
    assert header[8:] == ["Low", "Mid", "High", "avg"]
    assert [r[1] for r in rows[:5]] == ["expert", "finetune", "on_the_fly_k4", "imit_k2", "imit_k4"]


def test_delta_row_equals_forgetting_delta(full_run):
    out, table = full_run
    plan = tiny_plan()
    header, rows = _read_tsv(out / "tables" / "q2.tsv")
    by_label = {r[0]: r[1:] for r in rows}
    probes = plan.probe_directions()

    def reports(method, direction=None):
        where = {"method": method, "pair_class": "probe"}
        if direction:
            where["direction"] = direction
        return [EvalReport((r["src"], r["tgt"]), r["bleu"], 0.0, 0.0, 0.0, 1) for r in table.select(**where)]

    base = reports("expert")
    delta = forgetting_delta(reports("imit_k4", "orig2new"), base)
    got = by_label["delta imit_k4/orig2new"]
    for i, p in enumerate(probes):
        assert got[i] == f"{delta[p]:.2f}"


def test_single_method_single_seed(tmp_path):
    plan = tiny_plan(methods=[{"name": "finetune", "kind": "finetune"}], directions=["new2orig"])
    table = harness.run_experiment(plan, tmp_path)
    assert len(list((tmp_path / "cells").iterdir())) == 1
    _, rows = _read_tsv(tmp_path / "tables" / "q1.tsv")
    assert [r[1] for r in rows] == ["expert", "finetune"]
    assert len(table.select(method="finetune")) == 6 * 2 + 6


def test_failed_cell_is_recorded(full_run, tmp_path, monkeypatch):
    out, _ = full_run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    plan = tiny_plan()
    ws = harness.prepare_data(plan, copy)
    expert = harness.pretrain(ws)

    def boom(*a, **k):
        raise RuntimeError("injected")

    monkeypatch.setattr(harness, "train_imit", boom)
    method = plan.method("imit_k2")
    man = harness.run_cell(ws, expert, method, "new2orig", 0, force=True)
    assert man["status"] == "failed" and "injected" in man["error"]
    table = harness.collect_results(ws)
    assert table.failed() and "failed" in harness.q1_table(table)


def test_directional_checks_shape(full_run):
    out, table = full_run
    ws = harness.prepare_data(tiny_plan(), out)
    sig = harness.significance_by_seed(ws)
    checks = harness.directional_checks(table, sig)
    assert [c.number for c in checks] == [8, 9, 10, 11, 12, 13]
    assert all(isinstance(c.passed, bool) for c in checks)


def test_emit_tables_validation(full_run, tmp_path):
    _, table = full_run
    with pytest.raises(ValueError):
        harness.emit_tables(table, "q3", tmp_path)
    with pytest.raises(ValueError):
        harness.emit_tables(harness.ResultsTable(table.plan), "all", tmp_path)
    assert [p.name for p in harness.emit_tables(table, "q2", tmp_path)] == ["q2.tsv"]
