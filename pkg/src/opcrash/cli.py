"""Command line: gen-data, train, eval, bench-mem, bench-epoch.

Heavy modules are imported inside the commands so ``--threads`` can pin the
BLAS thread pools before numpy loads.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

SEED_ENV = "OPCRASH_SEED"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
BACKBONES = ("TS", "GeoTS", "GeoTS-FLARE")
STRATEGIES = ("ar", "teacher-forcing", "one-shot", "time-conditional")


def resolve_seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"error: {SEED_ENV}={env!r} is not an integer") from None
    return 0


def _choice(options):
    lower = {o.lower(): o for o in options}

    def parse(text: str) -> str:
        key = text.strip().lower().replace("_", "-")
        if key not in lower:
            raise argparse.ArgumentTypeError(f"invalid choice {text!r} (choose from {', '.join(options)})")
        return lower[key]

    return parse


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _levels(text: str) -> tuple[int, int, int]:
    vals = _int_list(text)
    if len(vals) != 3 or not all(1 <= v <= 3 for v in vals):
        raise argparse.ArgumentTypeError("--levels takes three counts in 1..3, e.g. 3,3,3")
    return tuple(vals)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, seed: int, inputs: dict,
                   outputs: list[Path], extra: dict | None = None) -> Path:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    record = {
        "command": command,
        "flags": flags,
        "seed": seed,
        "inputs": inputs,
        "outputs": {p.name: _digest(p) for p in outputs if p.exists()},
    }
    record.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=list) + "\n")
    return path


def _input_digests(paths) -> dict:
    return {str(p): _digest(Path(p)) for p in paths if p and Path(p).is_file()}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    from .crashdata import generate_doe, manifest_record, save_splits

    seed = resolve_seed(args.seed)
    out = Path(args.out)
    files = generate_doe(args.levels, nodes=args.nodes, frames=args.frames, seed=seed)
    digests = save_splits(files, out)
    rec = manifest_record(files, digests, levels=list(args.levels), nodes=args.nodes, frames=args.frames, seed=seed)
    write_manifest(out, "gen-data", args, seed, {}, [out / f"{s}.opds" for s in files], {"dataset": rec})
    counts = "/".join(str(len(files[s])) for s in files)
    print(f"wrote {sum(len(f) for f in files.values())} samples (train/val/test {counts}) to {out}")
    return 0


def _train_config(args, seed: int):
    from .trainer import load_config

    return load_config(args.config, backbone=args.backbone, strategy=args.strategy, epochs=args.epochs,
                       seed=seed if (args.seed is not None or os.environ.get(SEED_ENV)) else None)


def cmd_train(args) -> int:
    from .crashdata import load_split
    from .trainer import dump_config, train

    seed = resolve_seed(args.seed)
    cfg = _train_config(args, seed)
    data, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_split(data, "train")
    val_path = data / "val.opds"
    val_set = load_split(data, "val") if val_path.exists() else None
    (out / "config.txt").write_text(dump_config(cfg))
    result = train(cfg, train_set, val_set, out_dir=out, log=None if args.quiet else _log)
    unstable = [r["epoch"] for r in result.ledger.records if r["status"] == "unstable"]
    outputs = [out / "config.txt", out / "ledger.jsonl", out / "best.opck", out / "last.opck"]
    write_manifest(out, "train", args, cfg.seed, _input_digests([args.config, data / "train.opds", val_path]),
                   outputs, {"best_epoch": result.best_epoch, "unstable_epochs": unstable})
    verdict = "unstable" if unstable else "ok"
    print(f"trained {cfg.backbone}/{cfg.strategy} for {cfg.epochs} epochs; best epoch {result.best_epoch}; {verdict}")
    return 0


def error_table(record: dict, dt: float) -> str:
    lines = ["step\ttime_ms\trel_l2"]
    for i, v in enumerate(record.get("rel_l2_per_step", [])):
        lines.append(f"{i}\t{i * dt:.6g}\t{v:.6e}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    from .crashdata import load_split
    from .trainer import evaluate_checkpoint

    seed = resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"missing checkpoint {ckpt}")
    data = Path(args.data)
    ds = load_split(data, args.split)
    record = evaluate_checkpoint(ckpt, ds)
    record["checkpoint"] = str(ckpt)
    summary = {k: v for k, v in record.items() if k != "per_sample"}
    (out / "metrics.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    with open(out / "metrics.jsonl", "a") as fh:
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    (out / "errors.tsv").write_text(error_table(record, ds.dt))
    write_manifest(out, "eval", args, seed, _input_digests([ckpt, data / f"{args.split}.opds"]),
                   [out / "metrics.json", out / "errors.tsv"])
    flag = " (unstable rollouts: %d)" % len(record["unstable"]) if record["unstable"] else ""
    print(f"{args.split}: rel_l2={record['rel_l2']:.5g}{flag}")
    return 0


def cmd_bench_mem(args) -> int:
    from .bench import bench_mem

    seed = resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = bench_mem(args.n, args.tokens, args.channels, args.heads, backbones=args.backbones,
                    m_probe=not args.no_m_probe, seed=seed)
    path = out / "bench_mem.json"
    path.write_text(json.dumps(rep.to_record(), indent=2, sort_keys=True) + "\n")
    write_manifest(out, "bench-mem", args, seed, {}, [path])
    for name, share in rep.quadratic_share.items():
        print(f"{name}: peak@{rep.ns[-1]}={rep.peaks[name][-1]} B, quadratic share {share:.2e}")
    print(f"peak ratio GeoTS/GeoTS-FLARE = {rep.ratio:.3f} (reference ~2x); linear={rep.linear}")
    return 0


def cmd_bench_epoch(args) -> int:
    from .bench import bench_epoch
    from .crashdata import load_split

    seed = resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = Path(args.data)
    ds = load_split(data, "train")
    base = _train_config(args, seed)
    rep = bench_epoch(ds, args.epochs, base=base, log=None if args.quiet else _log)
    path = out / "bench_epoch.json"
    path.write_text(json.dumps(rep.to_record(), indent=2, sort_keys=True) + "\n")
    write_manifest(out, "bench-epoch", args, seed, _input_digests([args.config, data / "train.opds"]), [path])
    order = " < ".join(f"{k} {v:.3f}s" for k, v in sorted(rep.median.items(), key=lambda kv: kv[1]))
    print(f"median epoch: {order}; ordering one-shot < time-conditional < ar: {rep.ordering}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opcrash", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP threads (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help=f"global seed (falls back to ${SEED_ENV}, then 0)")
        sp.add_argument("--quiet", action="store_true")

    g = sub.add_parser("gen-data", help="simulate the design sweep and write OPDS files")
    g.add_argument("--levels", type=_levels, default=(3, 3, 3),
                   help="levels of velocity,thickness,offset to sweep (each 1..3)")
    g.add_argument("--nodes", type=int, default=None, help="approximate node count (default 516)")
    g.add_argument("--frames", type=int, default=50, help="output steps T")
    common(g, "data")
    g.set_defaults(func=cmd_gen_data)

    def model_flags(sp):
        sp.add_argument("--config", default=None, help="flat key = value run config")
        sp.add_argument("--data", default="data", help="dataset directory")
        sp.add_argument("--backbone", type=_choice(BACKBONES), default=None)
        sp.add_argument("--strategy", type=_choice(STRATEGIES), default=None)
        sp.add_argument("--epochs", type=int, default=None)

    t = sub.add_parser("train", help="train a model and write ledger + checkpoints")
    model_flags(t)
    common(t, "run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default="data")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--config", default=None, help="accepted for symmetry with train; unused")
    e.add_argument("--backbone", type=_choice(BACKBONES), default=None, help="unused; the checkpoint decides")
    e.add_argument("--strategy", type=_choice(STRATEGIES), default=None, help="unused; the checkpoint decides")
    common(e, "eval")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("bench-mem", help="peak attention-block bytes versus N")
    m.add_argument("--n", type=_int_list, default=[1024, 2048, 4096, 8192])
    m.add_argument("--tokens", type=int, default=128)
    m.add_argument("--channels", type=int, default=256)
    m.add_argument("--heads", type=int, default=8)
    m.add_argument("--backbones", type=lambda s: [_choice(BACKBONES)(x) for x in s.split(",")],
                   default=list(BACKBONES))
    m.add_argument("--no-m-probe", action="store_true", help="skip the doubled-M measurement")
    common(m, "bench")
    m.set_defaults(func=cmd_bench_mem)

    b = sub.add_parser("bench-epoch", help="median epoch time per temporal strategy")
    model_flags(b)
    b.set_defaults(epochs=3)
    common(b, "bench")
    b.set_defaults(func=cmd_bench_epoch)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
