"""Command-line driver.

Batch pipelines (train / eval / ablate / make-data) run in-process;
register / classify are thin clients for a running service instance.
"""
from __future__ import annotations

import argparse
import base64
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, Domain, SyntheticSpec, generate_synthetic,
                   load_directory, parse_synthetic_config, split_classes)
from .evaluation import (EvalConfig, METRIC_FNS, format_report, matrix_to_text,
                         matrix_to_tsv, run_matrix)
from .training import Stage1Config, Stage2Config, train_stage1, train_stage2

DESK_SPLIT = {"base": 10, "val": 4, "novel": 6}


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", help="load a photo/sketch directory tree instead of synthesising")
    p.add_argument("--data-config", help="key=value synthetic spec file")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=80)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--base-classes", type=int, default=DESK_SPLIT["base"])
    p.add_argument("--val-classes", type=int, default=DESK_SPLIT["val"])
    p.add_argument("--novel-classes", type=int, default=DESK_SPLIT["novel"])
    p.add_argument("--split-seed", type=int, default=0)


def _load_data(args) -> tuple[Dataset, dict]:
    if args.data_dir:
        ds = load_directory(args.data_dir, image_size=args.image_size)
    else:
        if args.data_config:
            spec = parse_synthetic_config(args.data_config)
        else:
            spec = SyntheticSpec(classes=args.classes, per_class_per_domain=args.per_class,
                                 image_size=args.image_size, seed=args.data_seed)
        ds = generate_synthetic(spec)
    counts = {"base": args.base_classes, "val": args.val_classes,
              "novel": args.novel_classes}
    return ds, counts


def _split(ds, counts, seed):
    return split_classes(ds, counts, seed)


def cmd_make_data(args) -> int:
    from PIL import Image

    ds, _ = _load_data(args)
    root = Path(args.out)
    for domain in Domain:
        for c, name in enumerate(ds.class_names):
            d = root / domain.value / name
            d.mkdir(parents=True, exist_ok=True)
            for j, i in enumerate(ds.indices_of(c, domain)):
                arr = (ds.items[i].image * 255.0).round().astype(np.uint8)
                Image.fromarray(arr).save(d / f"{j:04d}.png")
    print(f"wrote {len(ds.items)} images under {root}")
    return 0


def cmd_train(args) -> int:
    ds, counts = _load_data(args)
    split = _split(ds, counts, args.split_seed)
    bcfg = BackboneConfig(image_size=args.image_size,
                          channels=tuple(int(c) for c in args.channels.split(",")),
                          embed_dim=args.embed_dim)
    log_fh = open(args.log, "w") if args.log else None

    def log(line):
        print(line)
        if log_fh:
            log_fh.write(line + "\n")

    s1 = Stage1Config(epochs=args.epochs1, batch_size=args.batch_size, lr=args.lr1,
                      gc_enabled=not args.no_gc, scale=args.scale,
                      learnable_scale=args.learnable_scale, seed=args.seed)
    ckpt = train_stage1(ds, split, s1, bcfg, log=log)
    if args.stage in ("2", "both"):
        s2 = Stage2Config(epochs=args.epochs2, episodes_per_epoch=args.episodes_per_epoch,
                          n_drop=args.n_drop, k_shot=args.k_shot, q_per_class=args.q_per_class,
                          lr=args.lr2, kd_enabled=not args.no_kd,
                          cmt_enabled=not args.no_cmt, gc_enabled=not args.no_gc,
                          use_gat=not args.no_gat, gat_rounds=args.gat_rounds,
                          freeze_backbone=not args.unfreeze_backbone, seed=args.seed)
        ckpt = train_stage2(ckpt, ds, split, s2, log=log)
    digest = save_checkpoint(ckpt, args.out)
    log(f"checkpoint {args.out} hash={digest}")
    if log_fh:
        log_fh.close()
    return 0


def _eval_config(args) -> EvalConfig:
    return EvalConfig(n_episodes=args.episodes, n_way=args.way, k_shot=args.shots,
                      q_per_class=args.queries, support_domain=args.support,
                      seeds=tuple(range(args.eval_seeds)), use_gat=not args.no_gat)


def cmd_eval(args) -> int:
    ds, counts = _load_data(args)
    split = _split(ds, counts, args.split_seed)
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args)
    metrics = ["novel", "base", "both"] if args.metric == "all" else [args.metric]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in metrics:
        report = METRIC_FNS[m](ckpt, ds, split, cfg)
        text = format_report(report)
        (out / f"report_{m}.txt").write_text(text)
        print(text, end="")
    print(f"reports written to {out}")
    return 0


ABLATION_VARIANTS = ("full", "no-gat", "no-gc", "no-kd", "no-cmt", "photo-support")


def cmd_ablate(args) -> int:
    ds, counts = _load_data(args)
    split = _split(ds, counts, args.split_seed)
    bcfg = BackboneConfig(image_size=args.image_size,
                          channels=tuple(int(c) for c in args.channels.split(",")),
                          embed_dim=args.embed_dim)
    variants = args.variants.split(",")
    unknown = set(variants) - set(ABLATION_VARIANTS)
    if unknown:
        print(f"unknown variants: {sorted(unknown)}", file=sys.stderr)
        return 2
    s1 = Stage1Config(epochs=args.epochs1, lr=args.lr1, scale=args.scale, seed=args.seed)
    s2 = Stage2Config(epochs=args.epochs2, episodes_per_epoch=args.episodes_per_epoch,
                      n_drop=args.n_drop, lr=args.lr2, seed=args.seed)
    base_s1 = train_stage1(ds, split, s1, bcfg)
    full = train_stage2(base_s1, ds, split, s2)
    entries = []
    for v in variants:
        if v == "full":
            entries.append((v, full, {}))
        elif v == "no-gat":
            entries.append((v, full, {"use_gat": False}))
        elif v == "photo-support":
            entries.append((v, full, {"support_domain": "photo"}))
        elif v == "no-gc":
            alt1 = train_stage1(ds, split, replace(s1, gc_enabled=False), bcfg)
            entries.append((v, train_stage2(alt1, ds, split, replace(s2, gc_enabled=False)), {}))
        elif v == "no-kd":
            entries.append((v, train_stage2(base_s1, ds, split, replace(s2, kd_enabled=False)), {}))
        elif v == "no-cmt":
            entries.append((v, train_stage2(base_s1, ds, split, replace(s2, cmt_enabled=False)), {}))
    cfg = _eval_config(args)
    rows = run_matrix(entries, ds, split, cfg,
                      metrics=tuple(args.metrics.split(",")),
                      shots=tuple(int(s) for s in args.shot_list.split(",")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.tsv").write_text(matrix_to_tsv(rows))
    text = matrix_to_text(rows)
    (out / "ablation.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    state = ServiceState.load(args.checkpoint)
    app = create_app(state, frontend_dir=args.frontend)
    host = args.host or os.environ.get("SKETCHSHOT_HOST", "127.0.0.1")
    port = args.port or int(os.environ.get("SKETCHSHOT_PORT", "8077"))
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def _client(server: str):
    import httpx

    return httpx.Client(base_url=server, timeout=60.0)


def cmd_register(args) -> int:
    images = [base64.b64encode(Path(p).read_bytes()).decode("ascii")
              for p in args.image]
    with _client(args.server) as client:
        resp = client.post("/classes", json={"name": args.name, "images": images})
    if resp.status_code != 200:
        print(f"registration failed: {resp.status_code} {resp.text}", file=sys.stderr)
        return 1
    body = resp.json()
    print(json.dumps(body["registered"]))
    print(f"registry now has {len(body['classes'])} classes")
    return 0


def cmd_classify(args) -> int:
    image = base64.b64encode(Path(args.image).read_bytes()).decode("ascii")
    with _client(args.server) as client:
        resp = client.post("/classify", json={"image": image})
    if resp.status_code != 200:
        print(f"classification failed: {resp.status_code} {resp.text}", file=sys.stderr)
        return 1
    for p in resp.json()["predictions"][:args.top]:
        print(f"{p['probability']:.4f}  {p['display_name']}  ({p['origin']})")
    return 0


def _add_train_args(p, train_defaults=True):
    p.add_argument("--channels", default="8,16,32")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--scale", type=float, default=10.0)
    p.add_argument("--epochs1", type=int, default=20)
    p.add_argument("--lr1", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--epochs2", type=int, default=10)
    p.add_argument("--episodes-per-epoch", type=int, default=25)
    p.add_argument("--n-drop", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--q-per-class", type=int, default=5)
    p.add_argument("--lr2", type=float, default=0.02)
    p.add_argument("--gat-rounds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _add_eval_args(p):
    p.add_argument("--episodes", type=int, default=600,
                   help="episodes per seed (desk runs often pass 200)")
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--support", choices=("sketch", "photo", "mixed"), default="sketch")
    p.add_argument("--eval-seeds", type=int, default=5)
    p.add_argument("--no-gat", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sketchshot",
                                 description="teach a photo classifier new classes by sketching")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render a synthetic dataset to a directory tree")
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_data)

    p = sub.add_parser("train", help="run stage-1 (and stage-2) training")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--stage", choices=("1", "2", "both"), default="both")
    p.add_argument("--no-gc", action="store_true")
    p.add_argument("--no-kd", action="store_true")
    p.add_argument("--no-cmt", action="store_true")
    p.add_argument("--no-gat", action="store_true")
    p.add_argument("--learnable-scale", action="store_true")
    p.add_argument("--unfreeze-backbone", action="store_true",
                   help="train the backbone during stage 2 as well")
    p.add_argument("--log", help="metrics log file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run an accuracy suite on a checkpoint")
    _add_data_args(p)
    _add_eval_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=("novel", "base", "both", "all"), default="all")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate ablation variants")
    _add_data_args(p)
    _add_train_args(p)
    _add_eval_args(p)
    p.add_argument("--variants", default="full,no-gat")
    p.add_argument("--metrics", default="novel,base,both")
    p.add_argument("--shot-list", default="5")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("serve", help="run the teaching service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--frontend", help="static frontend directory to serve at /")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("register", help="register a class against a running service")
    p.add_argument("--server", default="http://127.0.0.1:8077")
    p.add_argument("--name", required=True)
    p.add_argument("--image", action="append", required=True,
                   help="sketch image file; repeat for multiple exemplars")
    p.set_defaults(fn=cmd_register)

    p = sub.add_parser("classify", help="classify a photo against a running service")
    p.add_argument("--server", default="http://127.0.0.1:8077")
    p.add_argument("--image", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(fn=cmd_classify)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
