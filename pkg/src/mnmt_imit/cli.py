"""Command-line entry point.

Errors are reported on stderr as one line::

    error=<kind> message="<text>"

and the process exits with status 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import harness
from .baselines import normalize_kind
from .data import read_sentences
from .imitation import normalize_direction
from .metrics import bootstrap_significance, chrfpp, copy_ratio, corpus_bleu, off_target_ratio
from .synthlang import LanguageFamily, make_language_family


class CLIError(Exception):
    def __init__(self, kind: str, message: str, status: int = 1):
        super().__init__(message)
        self.kind = kind
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message, 2)


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="YAML experiment plan (defaults to the desk plan)")
    p.add_argument("--seed", type=int, default=default, help="seed override")
    p.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mnmt-imit", description="Extend a multilingual translation model to a new language.")
    _common(parser, False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("family", help="build or inspect a language family")
    _common(p, True)
    p.add_argument("--inspect", help="existing family.json to summarise")

    p = sub.add_parser("pretrain", help="prepare data and train the expert")
    _common(p, True)

    p = sub.add_parser("extend", help="run one extension cell")
    _common(p, True)
    p.add_argument("--method", required=True, help="imit | finetune | on-the-fly, or a method name from the plan")
    p.add_argument("--k", type=int)
    p.add_argument("--direction", default="new2orig")
    p.add_argument("--run-config", help="YAML run config (k, direction, steps, lr, batch_size, beam, seed, "
                                        "weights_mode, kind)")

    p = sub.add_parser("eval", help="recompute reports from persisted hypotheses")
    _common(p, True)
    p.add_argument("--cell", help="cell directory name; all cells when omitted")

    p = sub.add_parser("report", help="emit result tables")
    _common(p, True)
    p.add_argument("--style", default="all", choices=["q1", "q2", "all"])
    p.add_argument("--checks", action="store_true", help="also print the directional checks")

    p = sub.add_parser("run", help="run the whole plan (resumable)")
    _common(p, True)

    p = sub.add_parser("metrics", help="score hypothesis files")
    _common(p, True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--src", help="source file (enables the copy ratio)")
    p.add_argument("--family", help="family.json (enables the off-target ratio)")
    p.add_argument("--lang", help="expected output language for the off-target ratio")
    p.add_argument("--hyp-b", help="second system for paired bootstrap")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.01)
    return parser


def _plan(args) -> harness.ExperimentPlan:
    plan = harness.ExperimentPlan.load(args.config) if args.config else harness.desk_plan()
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    return plan


def _out(args) -> Path:
    if not args.out:
        raise CLIError("usage", "--out is required for this command", 2)
    return Path(args.out)


def cmd_family(args) -> None:
    if args.inspect:
        fam = LanguageFamily.load(args.inspect)
    else:
        spec = _plan(args).family
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        fam = make_language_family(spec)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            fam.save(out / "family.json")
    print(f"pivot={fam.pivot}")
    for lang in fam.languages:
        if lang == fam.pivot:
            continue
        r = fam.rules[lang]
        role = "original" if lang in fam.originals else "new"
        print(f"{lang}\trole={role}\taffix={r.affix}\taffixed={len(r.affixed)}\tswap={int(r.swap)}")


def cmd_pretrain(args) -> None:
    plan = _plan(args)
    ws = harness.prepare_data(plan, _out(args))
    harness.pretrain(ws)
    man = json.loads((ws.root / "expert" / "manifest.json").read_text())
    print(f"expert={ws.root / 'expert' / 'model.ckpt'} param_hash={man['param_hash']}")


def _method_for(plan, args) -> harness.MethodSpec:
    names = {m.name for m in plan.methods}
    if args.method in names:
        return plan.method(args.method)
    kind = normalize_kind(args.method)
    k = 0 if kind == "finetune" else (args.k if args.k is not None else 4)
    name = kind if kind == "finetune" else f"{kind}_k{k}"
    return harness.MethodSpec(name, kind, k)


def cmd_extend(args) -> None:
    plan = _plan(args)
    if args.run_config:
        rc = yaml.safe_load(Path(args.run_config).read_text(encoding="utf-8")) or {}
        kind = normalize_kind(rc.pop("kind", args.method))
        k = int(rc.pop("k", 0 if kind == "finetune" else 4))
        direction = normalize_direction(rc.pop("direction", args.direction))
        seed = int(rc.pop("seed", args.seed if args.seed is not None else plan.seeds[0]))
        plan = replace(plan, extend={**plan.extend, **rc})
        method = harness.MethodSpec(kind if kind == "finetune" else f"{kind}_k{k}", kind, k)
    else:
        method = _method_for(plan, args)
        direction = normalize_direction(args.direction)
        seed = args.seed if args.seed is not None else plan.seeds[0]
    ws = harness.prepare_data(plan, _out(args))
    expert = harness.pretrain(ws)
    man = harness.run_cell(ws, expert, method, direction, seed)
    if man["status"] != "done":
        raise CLIError("cell", man.get("error", "cell failed"))
    print(f"cell={man['cell']} status=done learner_hash={man['learner_hash']}")


def cmd_eval(args) -> None:
    plan = _plan(args)
    ws = harness.prepare_data(plan, _out(args))
    cells = [args.cell] if args.cell else [harness.cell_name(*c) for c in plan.cells()]
    for name in ["expert"] if args.cell == "expert" else cells:
        d = ws.root / ("expert" if name == "expert" else f"cells/{name}")
        if not (d / "hyps").exists():
            raise CLIError("missing", f"no hypotheses under {d}")
        if name == "expert":
            dirs = harness.expert_directions(plan)
        else:
            direction = name.split("__")[1]
            dirs = plan.new_directions(direction) + plan.probe_directions()
        for r in harness.reports_from_hyps(ws, dirs, d):
            print(f"{name}\t{r.direction[0]}-{r.direction[1]}\tbleu={r.bleu:.2f}\tchrfpp={r.chrfpp:.2f}"
                  f"\tcr={r.cr:.4f}\totr={r.otr:.4f}\ttier={r.tier}")


def cmd_report(args) -> None:
    plan = _plan(args)
    ws = harness.prepare_data(plan, _out(args))
    table = harness.collect_results(ws)
    for p in harness.emit_tables(table, args.style, ws.root / "tables"):
        print(f"wrote={p}")
    if args.checks:
        sig = harness.significance_by_seed(ws)
        for c in harness.directional_checks(table, sig):
            print(f"criterion={c.number}\tpassed={int(c.passed)}\t{c.name}\t{c.detail}")


def cmd_run(args) -> None:
    plan = _plan(args)
    table = harness.run_experiment(plan, _out(args))
    failed = table.failed()
    print(f"cells={len(plan.cells())} failed={len(failed)} tables={_out(args) / 'tables'}")


def cmd_metrics(args) -> None:
    hyps = read_sentences(args.hyp)
    refs = read_sentences(args.ref)
    if len(hyps) != len(refs):
        raise CLIError("length", f"{len(hyps)} hypotheses but {len(refs)} references")
    values = {"bleu": corpus_bleu(hyps, refs), "chrfpp": chrfpp(hyps, refs), "sentences": len(hyps)}
    if args.src:
        srcs = read_sentences(args.src)
        if len(srcs) != len(hyps):
            raise CLIError("length", f"{len(srcs)} sources but {len(hyps)} hypotheses")
        values["cr"] = copy_ratio(srcs, hyps)
    if args.family or args.lang:
        if not (args.family and args.lang):
            raise CLIError("usage", "--family and --lang go together", 2)
        values["otr"] = off_target_ratio(hyps, args.lang, LanguageFamily.load(args.family))
    for key, v in values.items():
        print(f"{key}={v:.6f}" if isinstance(v, float) else f"{key}={v}")
    if args.hyp_b:
        hyps_b = read_sentences(args.hyp_b)
        p, sig = bootstrap_significance(hyps, hyps_b, refs, args.iterations, args.alpha,
                                        seed=args.seed if args.seed is not None else 0)
        print(f"p={p:.6f} significant={int(sig)}")


COMMANDS = {
    "family": cmd_family,
    "pretrain": cmd_pretrain,
    "extend": cmd_extend,
    "eval": cmd_eval,
    "report": cmd_report,
    "run": cmd_run,
    "metrics": cmd_metrics,
}


def _quote(msg: str) -> str:
    return json.dumps(" ".join(str(msg).split()))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise CLIError("usage", "a subcommand is required: " + ", ".join(COMMANDS), 2)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(message)s")
        COMMANDS[args.command](args)
        return 0
    except CLIError as e:
        print(f"error={e.kind} message={_quote(e)}", file=sys.stderr)
        return e.status
    except (ValueError, KeyError, TypeError, FileNotFoundError, OSError, yaml.YAMLError) as e:
        print(f"error={type(e).__name__} message={_quote(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
