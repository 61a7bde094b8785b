"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, unreadable or inconsistent
inputs), 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import alignment as al
from .formats import (
    ManifestError,
    TensorFormatError,
    ensure_dir,
    load_concept_set,
    load_manifest,
    manifest_concepts,
    read_json,
    save_concept_labels,
    save_concept_set,
    save_manifest,
    save_tensor,
    write_json,
)
from .fuzzy import ConjunctiveRule, Literal, format_rule
from .metrics import bundles_to_csv
from .stability import PerturbationConfig, perturb_stability
from .symbolic import SEMANTICS, extract_local_rule
from .synthetic import SyntheticSpec, default_rules, gen_synthetic
from .training import (
    Hyperparams,
    evaluate,
    forward_full,
    load_checkpoint,
    parameter_report,
    save_checkpoint,
    softmax,
    train,
)

logger = logging.getLogger("conceptlogic")

OUTPUT_ENV = "CONCEPTLOGIC_OUT"
EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _unit(value: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not in [0, 1]")
    return v


def _similarity(value: str) -> float:
    v = float(value)
    if not -1.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not a cosine similarity in [-1, 1]")
    return v


def _positive_float(value: str) -> float:
    v = float(value)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{value} must be > 0")
    return v


def _nonneg_float(value: str) -> float:
    v = float(value)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"{value} must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conceptlogic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", default=None, help=f"output directory (default: ${OUTPUT_ENV} or ./conceptlogic-out)")
        return p

    p = add("filter-concepts", "filter a concept set by name length and embedding similarity")
    p.add_argument("--concepts", required=True, help="concept set JSON")
    p.add_argument("--manifest", help="dataset whose feature maps feed the projection filter")
    p.add_argument("--max-length", type=int, default=al.MAX_NAME_LENGTH)
    p.add_argument("--class-similarity", type=_similarity, default=al.CLASS_SIMILARITY_MAX)
    p.add_argument("--pairwise-similarity", type=_similarity, default=al.PAIRWISE_SIMILARITY_MAX)
    p.add_argument("--prune-floor", type=_similarity, default=al.PRUNE_FLOOR)
    p.add_argument("--no-length-filter", action="store_true")
    p.add_argument("--no-class-filter", action="store_true")
    p.add_argument("--no-pairwise-filter", action="store_true")
    p.add_argument("--no-projection-filter", action="store_true")

    p = add("label", "pseudo-label concepts from feature maps and text embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--concepts", help="concept set JSON (default: the manifest's)")
    p.add_argument("--tau", type=_similarity, default=al.LABEL_THRESHOLD)
    p.add_argument("--prune-floor", type=_similarity, default=al.PRUNE_FLOOR)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--heatmaps", action="store_true", help="also export per-concept heatmaps")

    p = add("gen-synth", "generate a planted-rule synthetic dataset")
    p.add_argument("--concepts", type=int, default=4)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--samples-per-class", type=int, default=200)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=_nonneg_float, default=0.05)
    p.add_argument("--map-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    def add_model_io(p, checkpoint=True):
        p.add_argument("--manifest", required=True)
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")

    p = add("train", "train the model")
    add_model_io(p, checkpoint=False)
    p.add_argument("--lambda-concept", type=_nonneg_float, default=0.1)
    p.add_argument("--lambda-neural", type=_nonneg_float, default=0.1)
    p.add_argument("--lr", type=_positive_float, default=5e-5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--semantics", choices=SEMANTICS, default="literal")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--no-concept-loss", action="store_true", help="set the concept-loss weight to 0")
    p.add_argument("--no-neural-loss", action="store_true", help="set the neural-head loss weight to 0")

    p = add("eval", "evaluate a checkpoint")
    add_model_io(p)

    p = add("explain", "per-sample concept scores, local rules and saliency maps")
    add_model_io(p)
    p.add_argument("--limit", type=int, default=None, help="only explain the first N samples")

    p = add("stability", "L-infinity feature perturbation stability")
    add_model_io(p)
    p.add_argument("--epsilon", type=_nonneg_float, default=0.05)
    p.add_argument("--draws", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    p = add("report-weights", "export L1-normalized fusion-head weights per concept and class")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="manifest supplying concept and class names")
    return parser


def _out_dir(args) -> Path:
    return ensure_dir(args.out or os.environ.get(OUTPUT_ENV) or "conceptlogic-out")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _resolved_config(args, out: Path, extra: Optional[dict] = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    cfg["out"] = str(out)
    if extra:
        cfg.update(extra)
    write_json(out / "resolved-config.json", cfg)


def cmd_filter_concepts(args) -> None:
    out = _out_dir(args)
    concepts, class_names, class_emb = load_concept_set(args.concepts)
    scores = None
    if args.manifest and not args.no_projection_filter:
        ds = load_manifest(args.manifest)
        if ds.feature_maps is None:
            raise ManifestError("projection filter needs feature maps in the manifest")
        scores = al.concept_scores(ds.feature_maps, concepts.embeddings)
    cfg = al.FilterConfig(
        max_length=args.max_length,
        class_similarity=args.class_similarity,
        pairwise_similarity=args.pairwise_similarity,
        prune_floor=args.prune_floor,
        use_length=not args.no_length_filter,
        use_class_similarity=not args.no_class_filter,
        use_pairwise=not args.no_pairwise_filter,
        use_projection=not args.no_projection_filter,
    )
    kept = al.filter_concepts(concepts, class_emb, scores, cfg)
    save_concept_set(out / "concepts.json", kept, class_names, class_emb)
    write_json(out / "filter_provenance.json", {
        "input": len(concepts), "retained": len(kept), "empty": len(kept) == 0,
        "provenance": kept.provenance,
    })
    _resolved_config(args, out, {"filters": asdict(cfg)})
    print(f"retained {len(kept)} of {len(concepts)} concepts -> {out / 'concepts.json'}")


def cmd_label(args) -> None:
    out = _out_dir(args)
    ds = load_manifest(args.manifest)
    if args.concepts:
        concepts, class_names, class_emb = load_concept_set(args.concepts)
    else:
        concepts, class_names, class_emb = manifest_concepts(args.manifest)
    if concepts is None:
        raise ManifestError("no concept set: pass --concepts or add one to the manifest")
    if ds.feature_maps is None:
        raise ManifestError("labeling needs feature maps in the manifest")
    scores = al.concept_scores(ds.feature_maps, concepts.embeddings)
    keep = list(range(len(concepts))) if args.no_prune else al.prune_low_similarity(scores, args.prune_floor)
    kept = concepts.subset(keep)
    labels = al.threshold_labels(scores[:, keep], args.tau)
    save_concept_labels(out / "concept_labels.csv", ds.sample_ids, kept.names, labels)
    save_tensor(out / "concept_scores.micn", scores)
    if args.heatmaps:
        hm_dir = ensure_dir(out / "heatmaps")
        for m, sid in enumerate(ds.sample_ids):
            maps = al.compute_heatmaps(ds.feature_maps[m], kept.embeddings)
            for i, name in enumerate(kept.names):
                stem = f"{sid}__{_slug(name)}"
                save_tensor(hm_dir / f"{stem}.micn", maps[:, :, i])
                (hm_dir / f"{stem}.pgm").write_bytes(al.heatmap_to_pgm(maps[:, :, i]))
    labeled = type(ds)(ds.features, ds.labels, labels, kept.names, ds.class_names, ds.sample_ids, ds.feature_maps)
    save_manifest(out / "labeled", labeled, kept, class_emb)
    pruned = [n for n in concepts.names if n not in set(kept.names)]
    _resolved_config(args, out, {"pruned_concepts": pruned})
    print(f"labeled {len(ds)} samples over {len(kept)} concepts ({len(pruned)} pruned)")


def _default_rules_for(num_concepts: int, num_classes: int) -> List[ConjunctiveRule]:
    if num_classes == 2 and num_concepts >= 2:
        return default_rules()
    # binary code of the class index over the first k concepts
    k = max(1, math.ceil(math.log2(num_classes)))
    if k > num_concepts:
        raise UsageError(f"{num_classes} classes need at least {k} concepts")
    return [
        ConjunctiveRule(j, tuple(Literal(i, bool((j >> i) & 1)) for i in range(k)))
        for j in range(num_classes)
    ]


def cmd_gen_synth(args) -> None:
    out = _out_dir(args)
    if args.classes < 2 or args.concepts < 1 or args.samples_per_class < 1 or args.feature_dim < 1:
        raise UsageError("need >= 2 classes, >= 1 concept, >= 1 sample per class and feature dim >= 1")
    if args.classes > 2 and 2 ** args.concepts < args.classes:
        raise UsageError("not enough concepts to plant one rule per class")
    spec = SyntheticSpec(
        num_concepts=args.concepts,
        num_classes=args.classes,
        rules=_default_rules_for(args.concepts, args.classes),
        samples_per_class=args.samples_per_class,
        feature_dim=args.feature_dim,
        noise=args.noise,
        seed=args.seed,
        map_size=args.map_size,
    )
    ds, concepts, rules = gen_synthetic(spec)
    save_manifest(out, ds, concepts)
    write_json(out / "planted_rules.json", {
        "rules": [{"class": r.class_index, "text": format_rule(r, concepts.names),
                   "literals": [{"index": l.index, "positive": l.positive} for l in r.literals]} for r in rules]
    })
    _resolved_config(args, out)
    print(f"wrote {len(ds)} samples to {out / 'manifest.json'}")


def _hyper_from(args) -> Hyperparams:
    return Hyperparams(
        lambda_concept=0.0 if args.no_concept_loss else args.lambda_concept,
        lambda_neural=0.0 if args.no_neural_loss else args.lambda_neural,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        semantics=args.semantics,
        hidden=args.hidden,
        embed_dim=args.embed_dim,
    )


CURVE_COLUMNS = ("epoch", "L_task", "L_c", "L_neural", "total")


def curve_to_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for row in curve:
        w.writerow([row["epoch"], *(repr(row[k]) for k in ("task", "concept", "neural", "total"))])
    return buf.getvalue()


def cmd_train(args) -> None:
    out = _out_dir(args)
    hyper = _hyper_from(args)
    ds = load_manifest(args.manifest)
    if ds.concept_labels is None:
        raise ManifestError("training needs concept labels (run `label` first)")
    model, curve = train(ds, hyper)
    save_checkpoint(out / "checkpoint", model)
    _write_text(out / "loss_curve.csv", curve_to_csv(curve))
    report = parameter_report(model.config)
    write_json(out / "parameters.json", report)
    _resolved_config(args, out, {"hyperparams": asdict(hyper), "parameter_count": report["total"]})
    last = curve[-1] if curve else None
    msg = f"trained {hyper.epochs} epochs"
    if last:
        msg += f", final loss {last['total']:.6f}"
    print(msg)


def _load_pair(args):
    ds = load_manifest(args.manifest)
    model = load_checkpoint(args.checkpoint)
    if ds.features.shape[1] != model.config.feature_dim:
        raise ManifestError(
            f"dims conflict: manifest features have {ds.features.shape[1]} columns, "
            f"checkpoint expects {model.config.feature_dim}"
        )
    return ds, model


def _concept_names(ds, n):
    return ds.concept_names if len(ds.concept_names) == n else [f"c_{i}" for i in range(n)]


def cmd_eval(args) -> None:
    out = _out_dir(args)
    ds, model = _load_pair(args)
    ev = evaluate(ds, model)
    names = _concept_names(ds, model.config.num_concepts)
    doc = ev.to_json(names)
    write_json(out / "metrics.json", {k: v for k, v in doc.items() if k != "ruleset"})
    _write_text(out / "metrics.csv", bundles_to_csv({"fused": ev.fused, "neural": ev.neural}))
    write_json(out / "ruleset.json", doc["ruleset"])
    _resolved_config(args, out)
    print(f"fused accuracy {ev.fused.accuracy:.4f}, neural accuracy {ev.neural.accuracy:.4f}, "
          f"rule error {ev.rules.error_mean:.4f} ± {ev.rules.error_sem:.4f}")


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_") or "concept"


def cmd_explain(args) -> None:
    out = _out_dir(args)
    ds, model = _load_pair(args)
    if args.limit is not None:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    names = _concept_names(ds, model.config.num_concepts)
    fo = forward_full(ds.features, model)
    probs = softmax(fo.logits)
    concepts, _, _ = manifest_concepts(args.manifest)
    saliency = ds.feature_maps is not None and concepts is not None
    if saliency:
        sal_dir = ensure_dir(out / "saliency")
    samples = []
    for m, sid in enumerate(ds.sample_ids):
        j = int(fo.neural[m].argmax())
        rule = extract_local_rule(fo.polarity[m], fo.relevance[m], j)
        entry = {
            "sample_id": sid,
            "label": int(ds.labels[m]),
            "fused_prediction": int(fo.logits[m].argmax()),
            "fused_probabilities": [float(v) for v in probs[m]],
            "neural_prediction": j,
            "neural_truth_degrees": [float(v) for v in fo.neural[m]],
            "concept_scores": {n: float(v) for n, v in zip(names, fo.concept_probs[m])},
            "rule": format_rule(rule, names),
        }
        if saliency:
            maps = al.compute_heatmaps(ds.feature_maps[m], concepts.embeddings)
            files = []
            for i, name in enumerate(concepts.names):
                stem = f"{sid}__{_slug(name)}"
                save_tensor(sal_dir / f"{stem}.micn", maps[:, :, i])
                (sal_dir / f"{stem}.pgm").write_bytes(al.heatmap_to_pgm(maps[:, :, i]))
                files.append(f"saliency/{stem}.pgm")
            entry["saliency"] = files
        samples.append(entry)
    write_json(out / "explanations.json", {"samples": samples})
    _resolved_config(args, out)
    print(f"explained {len(samples)} samples")


def cmd_stability(args) -> None:
    out = _out_dir(args)
    ds, model = _load_pair(args)
    report = perturb_stability(model, ds.features, PerturbationConfig(args.epsilon, args.draws, args.seed))
    write_json(out / "stability.json", report.to_json())
    _resolved_config(args, out)
    print(json.dumps(report.to_json()))


def concept_weight_table(model) -> np.ndarray:
    """Per (concept, class) fusion weight: each concept's embedding-slot weights summed,
    then L1-normalized over concepts within each class column."""
    cfg = model.config
    W = model.params["fuse.W"][cfg.feature_dim:]  # (N*m) x C
    per_concept = W.reshape(cfg.num_concepts, cfg.embed_dim, cfg.num_classes).sum(axis=1)
    norms = np.abs(per_concept).sum(axis=0, keepdims=True)
    return np.divide(per_concept, norms, out=np.zeros_like(per_concept), where=norms > 0)


def cmd_report_weights(args) -> None:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    concept_names = [f"c_{i}" for i in range(cfg.num_concepts)]
    class_names = [f"y_{j}" for j in range(cfg.num_classes)]
    if args.manifest:
        ds = load_manifest(args.manifest)
        concept_names = _concept_names(ds, cfg.num_concepts)
        if len(ds.class_names) == cfg.num_classes:
            class_names = ds.class_names
    table = concept_weight_table(model)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["concept", "class", "weight"])
    for i, cname in enumerate(concept_names):
        for j, yname in enumerate(class_names):
            w.writerow([cname, yname, repr(float(table[i, j]))])
    _write_text(out / "weights.csv", buf.getvalue())
    _resolved_config(args, out)
    print(f"wrote {out / 'weights.csv'}")


COMMANDS = {
    "filter-concepts": cmd_filter_concepts,
    "label": cmd_label,
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "stability": cmd_stability,
    "report-weights": cmd_report_weights,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(COMMANDS)}")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        COMMANDS[args.command](args)
    except (UsageError, ManifestError, TensorFormatError, FileNotFoundError, PermissionError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"conceptlogic: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"conceptlogic: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())
