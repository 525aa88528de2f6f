"""Command-line entry point: synth, pretrain, embed, probes, and checks."""

import os

# single-threaded BLAS keeps runs bit-reproducible and fast at these sizes;
# must be set before numpy loads
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import dataclasses
import json
import sys

import numpy as np

from .autodiff import NumericError
from .checks import gradcheck_losses, relation_agreement
from .geoentities import load_dataset, save_dataset
from .model import load_checkpoint
from .probes import (codebook_from_checkpoint, embed_entities, pool_roads,
                     probe_classify, probe_regress, save_embeddings)
from .synthcity import CityParams, generate_city, load_labels, save_labels
from .train import TrainConfig, train

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(doc: dict, sets) -> dict:
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise UsageError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise UsageError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(value)
    return doc


def _train_config(args) -> TrainConfig:
    doc = TrainConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_doc = json.load(fh)
        for key, value in file_doc.items():
            if key not in doc:
                raise UsageError(f"unknown config key {key!r} in {args.config}")
            if isinstance(doc[key], dict) and isinstance(value, dict):
                for sub, sub_value in value.items():
                    if sub not in doc[key]:
                        raise UsageError(f"unknown config key {key}.{sub!r} in {args.config}")
                    doc[key][sub] = sub_value
            else:
                doc[key] = value
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    _apply_overrides(doc, getattr(args, "set", None))
    return TrainConfig.from_dict(doc)


def _write_config_echo(out_dir: str, name: str, doc: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def cmd_synth(args) -> int:
    doc = dataclasses.asdict(CityParams())
    if args.seed is not None:
        doc["seed"] = args.seed
    _apply_overrides(doc, args.set)
    params = CityParams(**doc)
    dataset, labels = generate_city(params)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(os.path.join(args.out, "city.jsonl"), dataset)
    save_labels(os.path.join(args.out, "labels.jsonl"), labels)
    _write_config_echo(args.out, "synth_config.json", {"city": doc})
    print(f"wrote {len(dataset.entities)} entities, "
          f"{len(labels.zones)} zone labels, {len(labels.speeds)} speed labels to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    config = _train_config(args)
    dataset = load_dataset(args.data)
    result = train(dataset, config, out_dir=args.out)
    _write_config_echo(args.out, "train_config.json", config.to_dict())
    last = result.log[-1] if result.log else None
    if last:
        print(f"finished epoch {last['epoch']}: l_total={last['l_total']:.4f}")
    print(f"checkpoint written to {os.path.join(args.out, 'checkpoint.json')}")
    return EXIT_OK


def cmd_embed(args) -> int:
    params, doc = load_checkpoint(args.checkpoint)
    codebook = codebook_from_checkpoint(doc, params.config)
    dataset = load_dataset(args.data)
    if args.ids:
        ids = [int(t) for t in args.ids.split(",")]
    else:
        ids = [e.id for e in dataset.entities]
    window_size = doc.get("config", {}).get("window_size", 500.0)
    embs = embed_entities(params, codebook, dataset, ids, radius=args.radius,
                          mask_target=args.mask_target, window_size=window_size,
                          context=args.context, seed=args.seed or 0)
    save_embeddings(args.out, embs)
    _write_config_echo(os.path.dirname(os.path.abspath(args.out)),
                       os.path.basename(args.out) + ".config.json",
                       {"checkpoint": args.checkpoint, "radius": args.radius,
                        "mask_target": args.mask_target, "context": args.context,
                        "seed": args.seed or 0, "train_config": doc.get("config", {})})
    print(f"wrote {len(embs)} embeddings to {args.out}")
    return EXIT_OK


def _embed_for_probe(args, ids, mask_target=False, context="spatial"):
    params, doc = load_checkpoint(args.checkpoint)
    codebook = codebook_from_checkpoint(doc, params.config)
    dataset = load_dataset(args.data)
    window_size = doc.get("config", {}).get("window_size", 500.0)
    embs = embed_entities(params, codebook, dataset, ids, radius=args.radius,
                          mask_target=mask_target, window_size=window_size,
                          context=context, seed=args.seed or 0)
    return dataset, doc, embs


def cmd_probe_classify(args) -> int:
    labels = load_labels(args.labels)
    ids = sorted(labels.zones)
    if not ids:
        raise UsageError(f"no zone labels in {args.labels}")
    dataset, doc, embs = _embed_for_probe(args, ids, context=args.context)
    features = np.vstack([np.concatenate([e.h_fused, e.h_sem]) for e in embs])
    y = np.array([labels.zones[e.id] for e in embs])
    metrics = probe_classify(features, y, split_seed=args.seed or 0)
    report = {"task": "zone-classification", "n": len(ids), "metrics": metrics,
              "context": args.context, "radius": args.radius,
              "seed": args.seed or 0, "train_config": doc.get("config", {})}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_probe_regress(args) -> int:
    labels = load_labels(args.labels)
    ids = sorted(labels.speeds)
    if not ids:
        raise UsageError(f"no speed labels in {args.labels}")
    dataset, doc, embs = _embed_for_probe(args, ids, context=args.context)
    seg_embs = {e.id: e.h_fused for e in embs}
    road_ids, feats, targets, geoms = pool_roads(dataset, seg_embs, labels.speeds)
    metrics = probe_regress(feats, targets, split_seed=args.seed or 0,
                            road_geoms=geoms, neighbor_mean=args.neighbor_mean)
    report = {"task": "speed-regression", "n_roads": len(road_ids), "metrics": metrics,
              "context": args.context, "radius": args.radius,
              "neighbor_mean": args.neighbor_mean, "seed": args.seed or 0,
              "train_config": doc.get("config", {})}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = gradcheck_losses(seed=args.seed or 0, n_windows=args.windows)
    worst = 0.0
    for key, err in errors.items():
        status = "PASS" if err < GRADCHECK_TOL else "FAIL"
        print(f"{key:>6}: max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAIL


def cmd_relcheck(args) -> int:
    report = relation_agreement(n_pairs=args.pairs, seed=args.seed or 0)
    print(json.dumps({k: v for k, v in report.items() if k != "examples"}))
    for example in report["examples"]:
        print("mismatch:", json.dumps(example))
    ok = report["checked"] >= args.pairs and report["mismatches"] == 0 \
        and report["symmetry_failures"] == 0
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoctx",
                                     description="contextual embeddings for vector geoentities")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    p = sub.add_parser("synth", help="generate a synthetic city dataset")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="run self-supervised pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="export frozen contextual embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ids", default=None, help="comma-separated entity ids (default: all)")
    p.add_argument("--radius", type=float, default=100.0)
    p.add_argument("--mask-target", action="store_true")
    p.add_argument("--context", choices=("spatial", "random"), default="spatial")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_embed)

    for verb, func in (("probe-classify", cmd_probe_classify),
                       ("probe-regress", cmd_probe_regress)):
        p = sub.add_parser(verb, help=f"run the {verb.split('-')[1]} probe")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--radius", type=float, default=100.0)
        p.add_argument("--context", choices=("spatial", "random"), default="spatial")
        p.add_argument("--seed", type=int, default=None)
        if verb == "probe-regress":
            p.add_argument("--neighbor-mean", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--windows", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("relcheck", help="relation classifier vs rasterized oracle")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pairs", type=int, default=1000)
    p.set_defaults(func=cmd_relcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
