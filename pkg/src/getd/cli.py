"""``getd`` command-line interface.

Commands
--------
train   --config PATH [--resume CKPT] [--workers N] [--set KEY=VALUE ...]
eval    --ckpt PATH --data DIR --split {train,valid,test} [--out FILE]
synth   --entities N --relations M --arity A --facts F --seed S --out DIR
verify  [--seed S] [--perturb CHECK]
params  --config PATH [--set KEY=VALUE ...]

Relative output paths are resolved against ``$GETD_OUTPUT_ROOT`` when it is
set. Exit codes: 0 ok, 2 I/O, 3 schema/shape, 4 infeasible config,
5 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import OUTPUT_ROOT_ENV, ExperimentConfig, load_config
from .datasets import KnowledgeBase, SyntheticSpec, generate_synthetic, load_kb_dir, write_synthetic
from .errors import CapacityError, GetdError, InfeasibleError
from .evaluation import evaluate
from .filtering import build_filter_indices
from .models import init_model, param_count_for, param_shapes
from .training import train
from .verify import CHECKS, run_checks

EXIT_OK, EXIT_IO, EXIT_SCHEMA, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger("getd")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _output_path(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / path if root and not path.is_absolute() else path


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError(f"--set expects KEY=VALUE, got {pair!r}", EXIT_SCHEMA)
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _vocab_digest(kb: KnowledgeBase) -> str:
    h = hashlib.sha256()
    for label in (*kb.entities.labels, "\0", *kb.relations.labels):
        h.update(label.encode("utf-8") + b"\n")
    return h.hexdigest()


def _load_data(cfg: ExperimentConfig, out_dir: Path | None) -> KnowledgeBase:
    if cfg.synthetic:
        spec = SyntheticSpec(
            n_e=cfg.synth_entities or 10,
            n_r=cfg.synth_relations or 2,
            arity=cfg.synth_arity or 3,
            target_fact_count=cfg.synth_facts,
            split_ratios=tuple(cfg.synth_ratios),
            seed=cfg.synth_seed,
        )
        kb = generate_synthetic(spec)
        if out_dir is not None:
            write_synthetic(kb, spec, out_dir / "data")
        return kb
    if cfg.data_dir is None:
        raise CliError("config needs data_dir or synth_facts", EXIT_SCHEMA)
    return load_kb_dir(cfg.data_dir)


def _model_kwargs(cfg: ExperimentConfig) -> dict:
    return {"d_e": cfg.d_e, "d_r": cfg.d_r, "k": cfg.k, "ranks": cfg.ranks, "reshape_shape": cfg.reshape_shape}


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    cfg = load_config(args.config, overrides)
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    kb = _load_data(cfg, out)
    if args.resume:
        m, header = load_checkpoint(args.resume)
        expected = param_shapes(cfg.model, kb.arity, kb.n_entities, kb.n_relations, **_model_kwargs(cfg))
        got = {k: tuple(v.shape) for k, v in m.parameters().items()}
        if header["kind"] != cfg.model or got != expected:
            raise CliError(f"checkpoint {args.resume} does not match the configured {cfg.model} model", EXIT_SCHEMA)
        digest = header.get("extra", {}).get("vocab_sha256")
        if digest is not None and digest != _vocab_digest(kb):
            raise CliError(f"checkpoint {args.resume} was trained on a different vocabulary", EXIT_SCHEMA)
    else:
        m = init_model(
            cfg.model, kb.n_entities, kb.n_relations, seed=cfg.init_seed, arity=kb.arity, **_model_kwargs(cfg)
        )
    best, history = train(m, kb, cfg.train_config(), log_path=out / "train_log.jsonl")
    ckpt = save_checkpoint(
        best,
        out / "best.ckpt",
        extra={"vocab_sha256": _vocab_digest(kb), "epochs_run": len(history)},
    )
    _, eval_filter = build_filter_indices(kb)
    report = {}
    for split in ("valid", "test"):
        facts = kb.split(split)
        report[split] = evaluate(best, facts, eval_filter).as_dict() if len(facts) else None
    (out / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    print(f"checkpoint: {ckpt}")
    for split, r in report.items():
        if r is not None:
            print(f"{split}: MRR {r['mrr']:.4f}  Hits@1 {r['hits1']:.4f}  Hits@3 {r['hits3']:.4f}  Hits@10 {r['hits10']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    m, header = load_checkpoint(args.ckpt)
    kb = load_kb_dir(args.data)
    if (m.n_entities, m.n_relations, m.arity) != (kb.n_entities, kb.n_relations, kb.arity):
        raise CliError(
            f"checkpoint vocab (n_e={m.n_entities}, n_r={m.n_relations}, arity={m.arity}) does not match "
            f"{args.data} (n_e={kb.n_entities}, n_r={kb.n_relations}, arity={kb.arity})",
            EXIT_SCHEMA,
        )
    digest = header.get("extra", {}).get("vocab_sha256")
    if digest is not None and digest != _vocab_digest(kb):
        raise CliError(f"checkpoint {args.ckpt} was trained on a different vocabulary than {args.data}", EXIT_SCHEMA)
    _, eval_filter = build_filter_indices(kb)
    report = evaluate(m, kb.split(args.split), eval_filter)
    text = report.to_json()
    print(text)
    target = _output_path(args.out) if args.out else Path(args.ckpt).with_name(f"eval_{args.split}.json")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_e=args.entities,
        n_r=args.relations,
        arity=args.arity,
        target_fact_count=args.facts,
        split_ratios=tuple(args.ratios),
        seed=args.seed,
    )
    kb = generate_synthetic(spec)
    out = write_synthetic(kb, spec, _output_path(args.out))
    print(f"wrote {len(kb.train)}/{len(kb.valid)}/{len(kb.test)} train/valid/test facts to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(seed=args.seed, perturb=args.perturb)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    if cfg.data_dir is not None or cfg.synthetic:
        kb = _load_data(cfg, None)
        arity, n_e, n_r = kb.arity, kb.n_entities, kb.n_relations
    else:
        if cfg.entities is None or cfg.relations is None or cfg.arity is None:
            raise CliError("params needs data_dir, synth_* keys, or entities/relations/arity", EXIT_SCHEMA)
        arity, n_e, n_r = cfg.arity, cfg.entities, cfg.relations
    kwargs = dict(arity=arity, n_e=n_e, n_r=n_r, **_model_kwargs(cfg))
    shapes = param_shapes(cfg.model, **kwargs)
    counts = param_count_for(cfg.model, **kwargs)
    print(f"model: {cfg.model}  arity={arity}  n_e={n_e}  n_r={n_r}")
    for name, shape in shapes.items():
        size = 1
        for s in shape:
            size *= s
        print(f"  {name:<4} {str(list(shape)):<22} {size:>14,}")
    print(f"embedding_params {counts.embedding_params:>14,}")
    print(f"core_params      {counts.core_params:>14,}")
    print(f"total            {counts.total:>14,}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="getd", description="Tensor-ring Tucker models for n-ary link prediction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", metavar="CKPT", help="start from a saved checkpoint")
    p.add_argument("--workers", type=int, help="threads per mini-batch")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered MRR/Hits@k of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory with train/valid/test.txt")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--out", help="report path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a rank-1 synthetic KB")
    p.add_argument("--entities", type=int, required=True)
    p.add_argument("--relations", type=int, required=True)
    p.add_argument("--arity", type=int, required=True)
    p.add_argument("--facts", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1), metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run the built-in numerical self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", choices=CHECKS, help="corrupt one check to confirm it can fail")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("params", help="print the parameter breakdown of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InfeasibleError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except GetdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
