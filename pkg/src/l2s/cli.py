"""Command-line entry point.

Subcommands: `gen` (synthetic data), `train` (fit a screening model),
`bench` (precision/speedup report or cluster sweep), `ppl` (hybrid
perplexity). Exit codes: 0 success, 1 runtime failure, 2 usage error.

Option defaults may be supplied by a `key = value` config file
(`--config`); explicit flags win. The seed falls back to the L2S_SEED
environment variable when neither flag nor config provides one.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import dataio
from .screen import ScreeningModel
from .train import TrainConfig, train


class UsageError(Exception):
    """Operator error (bad paths, bad flag combinations): exit code 2."""


_TRAIN_DEFAULTS = {
    f.name: f.default
    for f in dataclasses.fields(TrainConfig)
    if f.default is not dataclasses.MISSING
}
_GEN_DEFAULTS = dict(dataio.SynthSpec().__dict__)


def _load_config(path) -> dict[str, str]:
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(args, cfg: dict, name: str, cast, default):
    """Flag beats config beats default; the seed also consults L2S_SEED."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in cfg:
        return cast(cfg[name])
    if name == "seed":
        env = os.environ.get("L2S_SEED")
        if env is not None:
            return int(env)
    return default


def _require_files(*paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l2s",
        description="Learned screening for fast top-k softmax inference.",
    )
    parser.add_argument("--config", help="key = value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic layer + contexts")
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--L", dest="vocab_size", type=int)
    gen.add_argument("--d", dest="dim", type=int)
    gen.add_argument("--N", dest="n_contexts", type=int)
    gen.add_argument("--r-true", dest="r_true", type=int)
    gen.add_argument("--subset", dest="subset_size", type=int)
    gen.add_argument("--sigma", dest="noise_sigma", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--eval-n", type=int, default=0, help="also emit an eval stream")
    gen.add_argument("--force", action="store_true", help="overwrite existing files")

    tr = sub.add_parser("train", help="train a screening model")
    tr.add_argument("--layer", required=True)
    tr.add_argument("--contexts", required=True)
    tr.add_argument("--model-out", required=True)
    tr.add_argument("--log-out")
    tr.add_argument("--mode", choices=("l2s", "kmeans"), default="l2s")
    tr.add_argument("--r", type=int)
    tr.add_argument("--budget", type=float)
    tr.add_argument("--lambda", dest="lam", type=float)
    tr.add_argument("--gamma", type=float)
    tr.add_argument("--T", dest="outer_iters", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch", dest="batch_size", type=int)
    tr.add_argument("--temperature", type=float)
    tr.add_argument("--ema-decay", dest="ema_decay", type=float)
    tr.add_argument("--k", type=int)
    tr.add_argument("--epochs-per-step", dest="epochs_per_step", type=int)
    tr.add_argument("--probe-frac", dest="probe_frac", type=float)
    tr.add_argument("--seed", type=int)

    be = sub.add_parser("bench", help="precision / speedup report")
    be.add_argument("--layer", required=True)
    be.add_argument("--contexts", required=True)
    be.add_argument("--model", help="model file, or 'full' for the degenerate screen")
    be.add_argument("--k", dest="k_list", default="1,5", help="comma-separated precision cutoffs")
    be.add_argument("--reps", type=int, default=5)
    be.add_argument("--queries", type=int, default=1000)
    be.add_argument("--out", help="write the report here instead of stdout")
    be.add_argument("--sweep-r", help="comma-separated cluster counts to sweep")
    be.add_argument("--sweep-total", type=float, help="equalized r + budget total")
    be.add_argument("--sweep-csv", help="also write sweep rows as CSV")
    be.add_argument("--budget", type=float)
    be.add_argument("--T", dest="outer_iters", type=int)
    be.add_argument("--k-train", dest="k", type=int)
    be.add_argument("--seed", type=int)

    pp = sub.add_parser("ppl", help="exact vs hybrid perplexity")
    pp.add_argument("--layer", required=True)
    pp.add_argument("--model", required=True)
    pp.add_argument("--eval-contexts", required=True)
    pp.add_argument("--eval-targets", required=True)
    pp.add_argument("--rank", default="auto", help="int, 'full', or 'auto' (dim/4)")
    pp.add_argument("--out")
    return parser


def _emit(text: str, out_path) -> None:
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args, cfg) -> int:
    try:
        spec = dataio.SynthSpec(
            vocab_size=_resolve(args, cfg, "vocab_size", int, _GEN_DEFAULTS["vocab_size"]),
            dim=_resolve(args, cfg, "dim", int, _GEN_DEFAULTS["dim"]),
            n_contexts=_resolve(args, cfg, "n_contexts", int, _GEN_DEFAULTS["n_contexts"]),
            r_true=_resolve(args, cfg, "r_true", int, _GEN_DEFAULTS["r_true"]),
            subset_size=_resolve(args, cfg, "subset_size", int, _GEN_DEFAULTS["subset_size"]),
            noise_sigma=_resolve(args, cfg, "noise_sigma", float, _GEN_DEFAULTS["noise_sigma"]),
            seed=_resolve(args, cfg, "seed", int, _GEN_DEFAULTS["seed"]),
        )
    except ValueError as exc:
        # Contradictory flag values are usage errors, not runtime failures.
        raise UsageError(str(exc)) from exc
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "layer": out_dir / "layer.l2s",
        "contexts": out_dir / "contexts.l2s",
        "meta": out_dir / "meta.json",
    }
    if args.eval_n > 0:
        paths["eval_contexts"] = out_dir / "eval_contexts.l2s"
        paths["eval_targets"] = out_dir / "eval_targets.l2s"
    existing = [str(p) for p in paths.values() if p.exists()]
    if existing and not args.force:
        raise UsageError(
            f"refusing to overwrite {', '.join(existing)} (use --force)"
        )

    layer, contexts, meta = dataio.generate_synthetic(spec)
    dataio.save_layer(paths["layer"], layer)
    dataio.save_tensor(paths["contexts"], contexts)
    meta_json = {
        "spec": meta["spec"],
        "k": meta["k"],
        "containment": meta["containment"],
        "attempt": meta["attempt"],
        "bundle": meta["bundle"].tolist(),
        "subsets": meta["subsets"].tolist(),
        "centroids": meta["centroids"].tolist(),
    }
    paths["meta"].write_text(json.dumps(meta_json))

    if args.eval_n > 0:
        ev_rng, tgt_rng = np.random.SeedSequence((spec.seed, 0xE7A1)).spawn(2)
        rng = np.random.Generator(np.random.PCG64(ev_rng))
        centroids = meta["centroids"]
        bundle = rng.integers(0, spec.r_true, args.eval_n)
        eval_h = centroids[bundle] + spec.noise_sigma * rng.standard_normal(
            (args.eval_n, spec.dim)
        )
        targets = dataio.sample_targets(
            layer, eval_h, int(tgt_rng.generate_state(1)[0])
        )
        dataio.save_tensor(paths["eval_contexts"], eval_h)
        dataio.save_tensor(paths["eval_targets"], targets.astype(np.float64))

    sys.stdout.write(f"containment\t{meta['containment']!r}\n")
    sys.stdout.write(f"attempt\t{meta['attempt']}\n")
    for name, p in paths.items():
        sys.stdout.write(f"file_{name}\t{p}\n")
    return 0


def _train_config(args, cfg) -> TrainConfig:
    d = _TRAIN_DEFAULTS
    try:
        return TrainConfig(
            r=_resolve(args, cfg, "r", int, 20),
            budget=_resolve(args, cfg, "budget", float, 120.0),
            lam=_resolve(args, cfg, "lam", float, d["lam"]),
            gamma=_resolve(args, cfg, "gamma", float, d["gamma"]),
            outer_iters=_resolve(args, cfg, "outer_iters", int, d["outer_iters"]),
            lr=_resolve(args, cfg, "lr", float, d["lr"]),
            batch_size=_resolve(args, cfg, "batch_size", int, d["batch_size"]),
            temperature=_resolve(args, cfg, "temperature", float, d["temperature"]),
            ema_decay=_resolve(args, cfg, "ema_decay", float, d["ema_decay"]),
            seed=_resolve(args, cfg, "seed", int, d["seed"]),
            k=_resolve(args, cfg, "k", int, d["k"]),
            epochs_per_step=_resolve(args, cfg, "epochs_per_step", int, d["epochs_per_step"]),
            probe_frac=_resolve(args, cfg, "probe_frac", float, d["probe_frac"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args, cfg) -> int:
    _require_files(args.layer, args.contexts)
    layer = dataio.load_layer(args.layer)
    contexts = dataio.load_tensor(args.contexts, "matrix")
    config = _train_config(args, cfg)
    if args.mode == "kmeans":
        config = TrainConfig(**{**config.__dict__, "outer_iters": 0})
    model, entries = train(contexts, layer, config, log_path=args.log_out)
    dataio.save_model(args.model_out, model)
    last = entries[-1]
    sys.stdout.write(f"halfsteps\t{len(entries)}\n")
    sys.stdout.write(f"train_loss\t{last.loss!r}\n")
    sys.stdout.write(f"mean_candidate_size\t{last.mean_size!r}\n")
    sys.stdout.write(f"probe_p5\t{last.probe_p5!r}\n")
    sys.stdout.write(f"model_file\t{args.model_out}\n")
    return 0


def _full_model(layer) -> ScreeningModel:
    # Degenerate screen: one cluster holding the whole vocabulary.
    return ScreeningModel(
        cluster_weights=np.zeros((1, layer.dim)),
        candidate_masks=np.ones((1, layer.vocab_size), dtype=bool),
        budget=float(layer.vocab_size),
    )


def cmd_bench(args, cfg) -> int:
    _require_files(args.layer, args.contexts)
    layer = dataio.load_layer(args.layer)
    contexts = dataio.load_tensor(args.contexts, "matrix")

    if args.sweep_r:
        r_values = [int(v) for v in args.sweep_r.split(",") if v]
        if args.sweep_total is None:
            raise UsageError("--sweep-r requires --sweep-total")
        budgets = [args.sweep_total - r for r in r_values]
        config = _train_config(args, cfg)
        rows = bench_mod.cluster_sweep(contexts, layer, r_values, budgets, config)
        _emit(bench_mod.format_sweep(rows), args.out)
        if args.sweep_csv:
            Path(args.sweep_csv).write_text(bench_mod.sweep_csv(rows))
        return 0

    if not args.model:
        raise UsageError("--model is required unless sweeping")
    if args.model == "full":
        model = _full_model(layer)
    else:
        _require_files(args.model)
        model = dataio.load_model(args.model)
    ks = tuple(int(v) for v in args.k_list.split(",") if v)
    queries = contexts[: args.queries] if args.queries else contexts
    report = bench_mod.run_bench(model, layer, queries, ks=ks, repetitions=args.reps)
    _emit(bench_mod.format_report(report), args.out)
    return 0


def cmd_ppl(args, cfg) -> int:
    _require_files(args.layer, args.model, args.eval_contexts, args.eval_targets)
    layer = dataio.load_layer(args.layer)
    model = dataio.load_model(args.model)
    eval_h = dataio.load_tensor(args.eval_contexts, "matrix")
    raw_targets = dataio.load_tensor(args.eval_targets, "vector")
    targets = raw_targets.astype(np.int64)
    if np.any(targets != raw_targets):
        raise ValueError("eval targets must be integral token ids")

    full_rank = min(layer.vocab_size, layer.dim)
    if args.rank == "full":
        rank = full_rank
    elif args.rank == "auto":
        rank = max(1, layer.dim // 4)
    else:
        rank = int(args.rank)
    report = bench_mod.hybrid_perplexity(model, layer, rank, eval_h, targets)
    text = (
        f"svd_rank\t{report.svd_rank}\n"
        f"exact_ppl\t{report.exact_ppl!r}\n"
        f"hybrid_ppl\t{report.hybrid_ppl!r}\n"
        f"relative_gap\t{report.relative_gap!r}\n"
    )
    _emit(text, args.out)
    return 0


_HANDLERS = {"gen": cmd_gen, "train": cmd_train, "bench": cmd_bench, "ppl": cmd_ppl}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config) if args.config else {}
        return _HANDLERS[args.command](args, cfg)
    except UsageError as exc:
        print(f"l2s: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"l2s: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
