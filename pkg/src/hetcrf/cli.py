"""Command-line surface: dataset inspection, training, evaluation and the
gradient-balance probe.

Exit codes: 0 success, 1 runtime failure, 2 configuration error. Every
command writes a run manifest into its output directory before doing work,
so a run is reproducible from the manifest alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import evaluate, trainer
from .errors import ConfigError, HetcrfError
from .graph import SyntheticSpec, generate_synthetic, load_dataset
from .objectives import gradient_balance_probe, probe_report_json


def _threads_cap():
    try:
        return max(1, int(os.environ.get("HETCRF_THREADS", "1")))
    except ValueError:
        raise ConfigError("HETCRF_THREADS must be an integer") from None


def _write_manifest(out_dir, command, args):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "dataset": getattr(args, "dataset", None),
        "synthetic": getattr(args, "synthetic", None),
        "config": getattr(args, "config", None),
        "out": out_dir,
        "seed": getattr(args, "seed", None),
        "ablate": getattr(args, "ablate", None),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "threads": _threads_cap(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def _load_graph(args):
    if args.synthetic:
        with open(args.synthetic) as f:
            raw = json.load(f)
        seed = raw.pop("seed", args.seed or 0)
        spec = SyntheticSpec(**raw)
        return generate_synthetic(spec, seed)
    if not args.dataset:
        raise ConfigError("either --dataset or --synthetic is required")
    return load_dataset(args.dataset)


def _load_config(args):
    if args.config:
        with open(args.config) as f:
            cfg = trainer.TrainConfig.from_json(f.read())
    else:
        cfg = trainer.TrainConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": str(args.seed)})
    if args.ablate:
        pairs = {}
        for item in args.ablate:
            if "=" not in item:
                raise ConfigError(f"--ablate expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            pairs[k] = v
        cfg = cfg.with_overrides(pairs)
    cfg.validate()
    return cfg


def cmd_inspect(args) -> int:
    graph = _load_graph(args)
    cfg = _load_config(args)
    pre = trainer.precompute(graph, cfg)
    summary = {
        "node_types": dict(graph.node_counts),
        "target_type": graph.target_type,
        "relations": {r.name: {"src": r.src, "dst": r.dst, "edges": r.adj.nnz}
                      for r in graph.relations.values()},
        "metapaths": {
            m.name: {
                "chain": list(m.chain),
                "edges": pre.metapath_adjs[i].nnz,
                "pathsim_nnz": pre.pathsim[i].nnz,
                "pathsim_density": pre.pathsim[i].nnz / max(1, graph.n_target ** 2),
            }
            for i, m in enumerate(graph.metapaths)
        },
        "labels": None if graph.labels is None
        else {str(c): int(n) for c, n in
              zip(*np.unique(graph.labels, return_counts=True))},
    }
    print(json.dumps(summary, indent=1))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    graph = _load_graph(args)
    out = args.out or "run"
    _write_manifest(out, "train", args)
    with open(os.path.join(out, "config.json"), "w") as f:
        f.write(cfg.to_json())
    state = trainer.fit(graph, cfg)
    trainer.save_checkpoint(state, os.path.join(out, "checkpoint.bin"))
    trainer.save_loss_history(os.path.join(out, "loss_history.csv"),
                              state.loss_history)
    print(f"trained {cfg.epochs} epochs; final loss "
          f"{state.loss_history[-1][3]:.6f}; wrote {out}/checkpoint.bin")
    return 0


def cmd_eval(args) -> int:
    graph = _load_graph(args)
    if graph.labels is None:
        raise ConfigError("evaluation requires labels")
    state = trainer.load_checkpoint(args.checkpoint, graph)
    out = args.out or "eval"
    _write_manifest(out, "eval", args)
    pre = trainer.precompute(graph, state.config)
    state.h_final, state.z_schema_final, state.z_fusion_final = \
        trainer.final_embeddings(state.params, graph, pre)
    emb = trainer.evaluation_embedding(state)
    rate = args.label_rate
    if graph.splits is None or rate not in graph.splits:
        raise ConfigError(f"dataset has no split for label rate {rate!r}")
    s = len(np.unique(graph.labels))
    report = evaluate.build_report(
        emb, graph.labels, graph.splits[rate], s,
        repeats=args.repeats, seed=state.config.seed,
        config={"label_rate": rate, "checkpoint": args.checkpoint})
    evaluate.export_report(report, os.path.join(out, "report"))
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return 0


def cmd_probe_theorem1(args) -> int:
    out = args.out
    if out:
        _write_manifest(out, "probe-theorem1", args)
    rng = np.random.default_rng(args.seed or 0)
    reports = []
    worst = 0.0
    for tau in (0.2, 0.5, 1.0):
        for n_pos in (1, 2, 4, 8, 16):
            n = int(rng.integers(n_pos + 2, 64))
            d = int(rng.integers(4, 32))
            z = rng.standard_normal((n, d))
            anchor = int(rng.integers(n))
            pool = [j for j in range(n) if j != anchor]
            positives = list(rng.choice(pool, size=min(n_pos, len(pool)),
                                        replace=False))
            r = gradient_balance_probe(z, anchor, positives, tau)
            reports.append(r)
            worst = max(worst, r["residual_norm"])
    text = probe_report_json(reports)
    if out:
        with open(os.path.join(out, "theorem1_probe.json"), "w") as f:
            f.write(text)
    else:
        print(text)
    print(f"max residual norm over {len(reports)} configurations: {worst:.3e}",
          file=sys.stderr)
    return 0 if worst <= 1e-10 else 1


def build_parser():
    p = argparse.ArgumentParser(prog="hetcrf")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        if dataset:
            sp.add_argument("--dataset")
            sp.add_argument("--synthetic", help="synthetic spec JSON file")
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--ablate", action="append", metavar="KEY=VALUE")

    sp = sub.add_parser("inspect", help="schema and meta-path statistics")
    common(sp)
    sp.set_defaults(fn=cmd_inspect)

    sp = sub.add_parser("train", help="fit the model, write checkpoint + losses")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="linear probe + clustering from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--label-rate", default="40")
    sp.add_argument("--repeats", type=int, default=5)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("probe-theorem1",
                        help="gradient-balance identity report")
    common(sp, dataset=False)
    sp.set_defaults(fn=cmd_probe_theorem1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except HetcrfError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
