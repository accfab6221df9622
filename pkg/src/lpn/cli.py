"""Command-line entry point.

Subcommands cover every reproducible activity: train, eval, gradcheck,
gen-synthetic, export-prototypes, inspect-dataset. Every command is
deterministic given its config file and seed, and the effective config is
echoed into each artifact it writes.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from lpn import tensorcore as tc
from lpn.config import (ConfigError, RunConfig, config_from_dict, config_to_dict,
                        load_config)
from lpn.dataio import (FormatError, LabelDescription, Sentence, SyntheticSpec,
                        generate_synthetic, load_dataset, save_dataset)
from lpn.episodes import Episode, SamplingError, episode_seed, sample_episode
from lpn.metrics import STREAM_EVAL, EvalReport, evaluate
from lpn.model import bind_params, forward_episode, init_param_values
from lpn.trainer import load_checkpoint, save_checkpoint, train_loop

# seed-stream tags for runs and prototype export, disjoint from train/eval/val
STREAM_RUN = 4
STREAM_PROTO = 5


def _load_run_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    return load_config(path)


def _require_dataset(cfg: RunConfig):
    if cfg.dataset_path is None:
        raise ConfigError("config key 'dataset_path' is required")
    if not os.path.exists(cfg.dataset_path):
        raise ConfigError(f"config key 'dataset_path' points to a missing file: {cfg.dataset_path}")
    return load_dataset(cfg.dataset_path)


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    ds = _require_dataset(cfg)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    os.makedirs(cfg.report_dir, exist_ok=True)
    log_path = os.path.join(cfg.report_dir, "train_log.jsonl")
    ckpt_path = os.path.join(cfg.checkpoint_dir, "best.lpnc")
    with open(log_path, "w", encoding="utf-8") as log_file:
        log_file.write(json.dumps({"kind": "config", **config_to_dict(cfg)},
                                  sort_keys=True) + "\n")

        def log(rec):
            bd = rec.breakdown
            log_file.write(json.dumps({
                "kind": "step", "step": rec.step, "lepn": bd.lepn, "scl": bd.scl,
                "count": bd.count, "total": bd.total,
                "floor_events": rec.floor_events}, sort_keys=True) + "\n")

        def on_validation(step, report):
            log_file.write(json.dumps({
                "kind": "validation", "step": step, "auc": report.mean_auc,
                "macro_f1": report.mean_f1, "count_acc": report.mean_count_acc},
                sort_keys=True) + "\n")
            print(f"step {step}: validation AUC {report.mean_auc:.4f}")

        state = train_loop(cfg, ds, log=log, on_validation=on_validation)
    save_checkpoint(ckpt_path, state, cfg)
    print(f"trained {state.step} episodes; checkpoint written to {ckpt_path}")
    return 0


def _model_tag(variant: str) -> str:
    return "mean-prototype ablation" if variant == "oo" else f"label-enhanced ({variant})"


def cmd_eval(args) -> int:
    cfg = _load_run_config(args.config)
    ds = _require_dataset(cfg)
    state, _ = load_checkpoint(args.checkpoint, expect=cfg)
    values = state.best_values if state.best_values is not None else state.values
    reports = []
    for run in range(cfg.runs):
        base = episode_seed(cfg.seed, STREAM_RUN, run)
        reports.append(evaluate(values, ds, args.split, cfg, base_seed=base,
                                workers=cfg.workers))
    merged = EvalReport.merge(reports)
    os.makedirs(cfg.report_dir, exist_ok=True)
    out_path = os.path.join(cfg.report_dir, "eval_report.jsonl")
    records = merged.to_records(cfg)
    records[-1]["model"] = _model_tag(cfg.variant)
    records[-1]["split"] = args.split
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"{_model_tag(cfg.variant)} on {args.split}: "
          f"AUC {merged.mean_auc:.4f} (std {merged.std_auc:.4f}), "
          f"macro-F1 {merged.mean_f1:.4f}, count acc {merged.mean_count_acc:.4f} "
          f"over {merged.episodes} episodes in {merged.runs} runs")
    print(f"report written to {out_path}")
    return 0


def _gradcheck_episode(cfg: RunConfig, seed: int) -> Episode:
    """A small random episode: class means far apart, tokens lightly scattered."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=4.0, size=(cfg.n_way, cfg.d))
    next_id = [0]

    def sentence(class_idx, extra=()):
        next_id[0] += 1
        toks = means[class_idx] + rng.normal(size=(5, cfg.d))
        labels = frozenset({class_idx} | set(extra))
        return Sentence(id=next_id[0], token_matrix=toks, label_ids=labels)

    descs = tuple(LabelDescription(id=c, name=f"class-{c}",
                                   token_matrix=means[c] + rng.normal(size=(2, cfg.d)))
                  for c in range(cfg.n_way))
    support = tuple(tuple(sentence(c) for _ in range(cfg.k_shot))
                    for c in range(cfg.n_way))
    # one query carries two labels so the contrastive term sees positive pairs
    query = tuple(sentence(c, extra=((c + 1) % cfg.n_way,) if c == 0 else ())
                  for c in range(cfg.n_way))
    ep = Episode(class_ids=tuple(range(cfg.n_way)), descriptions=descs,
                 support=support, query=query)
    ep.validate()
    return ep


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        base = _load_run_config(args.config)
    else:
        base = RunConfig()
    variant = args.variant if args.variant is not None else base.variant
    cfg = dataclasses.replace(base, n_way=3, k_shot=2, q_per_class=1, d=8,
                              d_hidden=4, r_heads=2, k_rank=4, variant=variant).validate()
    ep = _gradcheck_episode(cfg, seed=cfg.seed)
    graph = tc.Graph()
    params = bind_params(graph, init_param_values(cfg, cfg.seed), cfg.variant)
    out = forward_episode(graph, params, ep, cfg)
    report = tc.grad_check(graph, out.total, tolerance=args.tolerance)

    groups: dict[str, list[str]] = {}
    for name in sorted(report.max_rel_err):
        groups.setdefault(name.split(".", 1)[0], []).append(name)
    unused = set(report.unused)
    for group, names in sorted(groups.items()):
        if all(n in unused for n in names):
            print(f"group {group}: unused")
        else:
            print(f"group {group}: max relative error "
                  f"{max(report.max_rel_err[n] for n in names):.3e}")
    status = "pass" if report.passed else "FAIL"
    print(f"gradient check {status} (tolerance {args.tolerance:g}, "
          f"worst {report.worst if report.worst is not None else 0.0:.3e})")
    return 0 if report.passed else 1


def _spec_from_file(path: str) -> SyntheticSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("spec file must hold a JSON object")
    known = {f.name for f in dataclasses.fields(SyntheticSpec)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown spec key {key!r}")
    if "aspect_count_probs" in raw:
        raw["aspect_count_probs"] = tuple(raw["aspect_count_probs"])
    try:
        return SyntheticSpec(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid spec: {exc}")


def cmd_gen_synthetic(args) -> int:
    spec = _spec_from_file(args.spec)
    ds = generate_synthetic(spec, seed=args.seed)
    save_dataset(ds, args.out)
    sidecar = args.out + ".spec.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"spec": dataclasses.asdict(spec), "seed": args.seed},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(ds.sentences)} sentences, {len(ds.labels)} labels "
          f"(d={ds.d}) to {args.out}")
    return 0


def cmd_export_prototypes(args) -> int:
    cfg = _load_run_config(args.config)
    ds = _require_dataset(cfg)
    state, _ = load_checkpoint(args.checkpoint, expect=cfg)
    values = state.best_values if state.best_values is not None else state.values
    header = ",".join(["episode", "class"] + [f"v{i}" for i in range(cfg.d)])
    lines = [f"# config: {json.dumps(config_to_dict(cfg), sort_keys=True)}", header]
    for e in range(args.episodes):
        ep = sample_episode(ds, args.split, cfg.n_way, cfg.k_shot, cfg.q_per_class,
                            seed=episode_seed(cfg.seed, STREAM_PROTO, e),
                            shared_pair_prob=cfg.shared_pair_prob)
        graph = tc.Graph()
        params = bind_params(graph, values, cfg.variant)
        out = forward_episode(graph, params, ep, cfg, with_loss=False)
        for i, cid in enumerate(ep.class_ids):
            cells = [str(e), str(cid)] + [repr(float(x)) for x in out.protos[i]]
            lines.append(",".join(cells))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.episodes * cfg.n_way} prototype rows to {args.out}")
    return 0


def cmd_inspect_dataset(args) -> int:
    ds = load_dataset(args.path)
    print(f"embedding width d = {ds.d}")
    print(f"{len(ds.labels)} labels, {len(ds.sentences)} sentences")
    for split in ("train", "validation", "test"):
        label_ids = ds.labels_for(split)
        if not label_ids:
            print(f"  {split}: empty")
            continue
        pool_sizes = [len(ds.pool(lid)) for lid in label_ids]
        print(f"  {split}: {len(label_ids)} classes, "
              f"pool sizes {min(pool_sizes)}..{max(pool_sizes)}")
    token_counts = [s.token_matrix.shape[0] for s in ds.sentences]
    if token_counts:
        print(f"tokens per sentence: {min(token_counts)}..{max(token_counts)}")
        multi = sum(1 for s in ds.sentences if len(s.label_ids) > 1)
        print(f"multi-label sentences: {multi} ({multi / len(ds.sentences):.1%})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpn",
        description="Label-enhanced prototypical networks for multi-label "
                    "few-shot aspect category detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on episodes sampled from the train split")
    p.add_argument("config", help="path to a JSON run config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over fresh episodes")
    p.add_argument("config", help="path to a JSON run config")
    p.add_argument("checkpoint", help="checkpoint file written by train")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the full objective on a "
                            "small internal episode (3-way 2-shot, d=8)")
    p.add_argument("--config", default=None, help="optional config for variant and weights")
    p.add_argument("--variant", default=None, choices=("oo", "wo", "ww"))
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic dataset file")
    p.add_argument("--spec", required=True, help="JSON file of generator settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset path")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("export-prototypes",
                       help="write per-episode class prototypes as CSV")
    p.add_argument("config", help="path to a JSON run config")
    p.add_argument("checkpoint", help="checkpoint file written by train")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_export_prototypes)

    p = sub.add_parser("inspect-dataset", help="print a summary of a dataset file")
    p.add_argument("path", help="dataset file")
    p.set_defaults(func=cmd_inspect_dataset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, SamplingError, tc.NonFiniteError, tc.ShapeError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
