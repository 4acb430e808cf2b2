"""invarlab command line.

Every subcommand reads the merged config, writes its CSV/JSON results and a
``manifest.json`` into the output directory, and appends one line to the
audit file. ``--from-manifest`` reruns a recorded command.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from invarlab import __version__
from invarlab.audit import audit_log
from invarlab.config import config_hash, from_record, load_config
from invarlab.crops import FixedSizeCenterCrop, eval_augmentation_sweep, sample_and_apply, sweep_values
from invarlab.embedders import EmbeddingProvider, build_provider, embed_all
from invarlab.errors import (
    ConfigError,
    DuplicateId,
    InsufficientSamples,
    InvarlabError,
    ParseError,
    UnknownClass,
)
from invarlab.factors import (
    ClassRanking,
    HelpedSampleList,
    RankEntry,
    category_split,
    helped_samples,
    invariance_change_vs_topk,
    mean_pairwise_iou,
    rank_transforms,
)
from invarlab.image import read_image, resize, write_image
from invarlab.lie import (
    TrainConfig,
    evaluate,
    image_space_bounds,
    params_from_config,
    params_from_dict,
    train,
    warm_start,
)
from invarlab.metrics import (
    EmbeddingCache,
    MetricDistribution,
    Sample,
    equivariance_alignment,
    invariance,
    sample_pairs,
    simchange,
)
from invarlab.report import MANIFEST, RunOutputs, build_manifest, long_form, quantile_rows, read_csv, read_manifest
from invarlab.seeds import derive_rng
from invarlab.synthetic import default_planted_specs, generate, read_dataset, recovery_catalog, write_dataset
from invarlab.taxonomy import demo_tree, load_taxonomy, similarity_vs_rank_correlation
from invarlab.transforms import (
    Transform,
    TransformSpec,
    apply_transform,
    catalog,
    is_geometric_transform,
    parse_transform,
    transform_matrix,
)

logger = logging.getLogger("invarlab")

DATASET_MANIFEST = "manifest.csv"

# Flags that override config keys
_FLAG_KEYS = {
    "seed": "seed",
    "jobs": "jobs",
    "output": "output_dir",
    "dataset": "dataset.path",
    "provider": "provider.variant",
    "budget": "pairs.budget",
    "scope": "rank.scope",
    "key": "rank.key",
    "method": "taxonomy.method",
    "bins": "taxonomy.n_bins",
}

# Flags that never reach the run record
_SESSION_FLAGS = ("command", "config", "verbose", "from_manifest")

# Stream indices under the master seed
_STAGE_INVARIANCE = 1
_STAGE_EQUIVARIANCE = 2
_STAGE_PAIRS = 3

EXIT_INPUT = 3
EXIT_UNEXPECTED = 1


@dataclass
class Run:
    """One command execution: its arguments, config and output directory."""

    command: str
    args: argparse.Namespace
    config: dict[str, Any]
    outputs: RunOutputs
    seeds: dict[str, Any] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def jobs(self) -> int:
        return self.config["jobs"]

    def rng(self, *path: int) -> np.random.Generator:
        self.seeds["seed"] = self.config["seed"]
        return derive_rng(self.config["seed"], *path)

    def arg(self, name: str, default: Any = None) -> Any:
        return getattr(self.args, name, default)


# --- shared loading -------------------------------------------------------


def _provider(run: Run, config: dict[str, Any] | None = None) -> EmbeddingProvider:
    provider = build_provider(config if config is not None else run.config["provider"])
    run.summary["provider"] = provider.metadata()
    return provider


def load_samples(directory: str | Path, input_size: int | None = None) -> list[Sample]:
    """Read ``manifest.csv`` (``sample_id``, ``class``, ``path``) and its images.

    Images are resized to ``input_size`` when it is set and differs. Rows
    with an empty path carry no image.

    Raises:
        ParseError: Missing manifest columns.
        DuplicateId: A sample id repeats.
        InsufficientSamples: The manifest is empty.
    """
    root = Path(directory)
    rows = read_csv(root / DATASET_MANIFEST, required=("sample_id", "class", "path"))
    samples, seen = [], set()
    resized = 0
    for row in rows:
        sample_id = row["sample_id"]
        if sample_id in seen:
            raise DuplicateId(f"Sample id {sample_id!r} repeats in {root / DATASET_MANIFEST}")
        seen.add(sample_id)
        img = None
        if row["path"]:
            img = read_image(root / row["path"])
            if input_size is not None and img.shape[:2] != (input_size, input_size):
                img = resize(img, input_size, input_size)
                resized += 1
        samples.append(Sample(sample_id, row["class"], img))
    if not samples:
        raise InsufficientSamples(f"{root / DATASET_MANIFEST} lists no samples")
    if resized:
        logger.warning(f"Resized {resized} images to {input_size}x{input_size} for the provider")
    logger.info(f"Loaded {len(samples)} samples from {root}")
    return samples


def _samples(run: Run, provider: EmbeddingProvider) -> list[Sample]:
    path = run.config["dataset"]["path"]
    if path is None:
        raise ConfigError(f"{run.command} needs a dataset; set dataset.path or pass --dataset", key="dataset.path")
    return load_samples(path, provider.input_size)


def _labelled(samples: Sequence[Sample], classes: Sequence[str] | None = None) -> tuple[list[str], list[np.ndarray], list[int]]:
    classes = list(classes) if classes is not None else sorted({s.label for s in samples})
    index = {c: i for i, c in enumerate(classes)}
    labels = []
    for s in samples:
        if s.label not in index:
            raise UnknownClass(f"Sample {s.sample_id!r} has class {s.label!r}, unknown to the classifier")
        labels.append(index[s.label])
    if any(s.image is None for s in samples):
        raise InsufficientSamples("Every sample needs image data for classification")
    return classes, [s.image for s in samples], labels


def _catalog(run: Run) -> list[Transform]:
    specs = run.arg("spec")
    if specs:
        return [parse_transform(text) for text in specs]
    section = run.config["catalog"]
    if section["from_dataset"]:
        dataset = read_dataset(run.config["dataset"]["path"])
        return list(recovery_catalog(dataset.specs))
    try:
        return list(catalog(section["levels"], section["signs"], section["kinds"]))
    except ValueError as e:
        raise ConfigError(str(e), key="catalog") from e


def _write_distributions(run: Run, name: str, results: Sequence[MetricDistribution]) -> None:
    run.outputs.csv(f"{name}.csv", [row for dist in results for row in dist.rows()])
    run.outputs.json(f"{name}.json", {
        "metric": name,
        "results": [
            {**dist.summary(), "quantiles": dist.quantiles, "metadata": dist.metadata}
            for dist in results
        ],
    })
    if run.arg("plot_data"):
        run.outputs.csv(f"{name}_values.csv", long_form(results),
                        fieldnames=("metric", "transform", "class", "index", "value"))
        run.outputs.csv(f"{name}_quantiles.csv", quantile_rows(results),
                        fieldnames=("metric", "transform", "quantile", "value"))
    run.summary["n_transforms"] = len(results)


def _read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON in {path}: {e.msg}", offset=e.pos) from e


# --- commands -------------------------------------------------------------


def cmd_transform(run: Run) -> None:
    img = read_image(run.args.input)
    t = parse_transform(run.args.spec)
    out = apply_transform(t, img, fill=run.args.fill)
    write_image(out, run.outputs.path("transformed.ppm"))
    info: dict[str, Any] = {"transform": str(t), "geometric": is_geometric_transform(t),
                            "width": img.shape[1], "height": img.shape[0]}
    matrix = transform_matrix(t)
    if matrix is not None:
        info["matrix"] = matrix
    run.outputs.json("transform.json", info)
    run.summary["transform"] = str(t)


def cmd_invariance(run: Run) -> None:
    provider = _provider(run)
    samples = _samples(run, provider)
    section = run.config["invariance"]
    cache = EmbeddingCache(provider, run.jobs)
    results = [
        invariance(provider, samples, t, run.rng(_STAGE_INVARIANCE, i), budget=section["budget"],
                   per_pair_baseline=section["per_pair_baseline"], cache=cache, jobs=run.jobs)
        for i, t in enumerate(_catalog(run))
    ]
    _write_distributions(run, "invariance", results)


def cmd_equivariance(run: Run) -> None:
    provider = _provider(run)
    samples = _samples(run, provider)
    section = run.config["equivariance"]
    cache = EmbeddingCache(provider, run.jobs)
    results = [
        equivariance_alignment(provider, samples, t, run.rng(_STAGE_EQUIVARIANCE, i), budget=section["budget"],
                               sign=section["sign"], cache=cache, jobs=run.jobs)
        for i, t in enumerate(_catalog(run))
    ]
    _write_distributions(run, "equivariance", results)


def cmd_simsearch(run: Run) -> None:
    provider = _provider(run)
    samples = _samples(run, provider)
    transforms = _catalog(run)
    section = run.config["pairs"]
    pairs = sample_pairs(samples, section["budget"], run.rng(_STAGE_PAIRS), same_class=section["same_class"],
                         seed=run.config["seed"])
    logger.info(f"SimChange over {len(pairs)} pairs and {len(transforms)} transforms")
    cache = EmbeddingCache(provider, run.jobs)
    results = [simchange(provider, samples, pairs, t, cache=cache, jobs=run.jobs) for t in transforms]
    run.outputs.csv("simchange.csv", [row for dist in results for row in dist.rows()])
    run.outputs.csv("simchange_values.csv", long_form(results),
                    fieldnames=("metric", "transform", "class", "index", "value"))
    run.outputs.json("simchange.json", {
        "metric": "simchange",
        "transforms": [str(t) for t in transforms],
        "classes": sorted({s.label for s in samples}),
        "pair_budget": section["budget"],
        "n_pairs": len(pairs),
        "results": [{**dist.summary(), "quantiles": dist.quantiles, "metadata": dist.metadata} for dist in results],
    })
    if run.arg("plot_data"):
        run.outputs.csv("simchange_quantiles.csv", quantile_rows(results),
                        fieldnames=("metric", "transform", "quantile", "value"))
    run.summary.update({"n_transforms": len(transforms), "n_pairs": len(pairs)})


def _invariance_means(path: str | Path) -> dict[str, float]:
    rows = read_csv(path, required=("transform", "class", "mean"))
    return {row["transform"]: float(row["mean"]) for row in rows if row["class"] == "all" and row["mean"]}


def cmd_rank(run: Run) -> None:
    root = Path(run.args.input)
    meta = _read_json(root / "simchange.json")
    parsed: dict[str, Transform] = {}
    cells: dict[tuple[str, Transform], list[float]] = {}
    for row in read_csv(root / "simchange_values.csv", required=("transform", "class", "value")):
        text = row["transform"]
        if text not in parsed:
            parsed[text] = parse_transform(text)
        cells.setdefault((row["class"], parsed[text]), []).append(float(row["value"]))
    section = run.config["rank"]
    rankings = rank_transforms(
        cells, scope=section["scope"], key=section["key"], classes=meta["classes"],
        transforms=[parse_transform(t) for t in meta["transforms"]], pair_budget=meta.get("pair_budget"),
    )
    run.outputs.csv("rankings.csv", [row for r in rankings for row in r.rows()],
                    fieldnames=("class", "rank", "spec", "mean", "prop_boosted", "weighted_boost", "n"))
    run.outputs.json("rankings.json", {
        "key": section["key"],
        "scope": section["scope"],
        "pair_budget": meta.get("pair_budget"),
        "rankings": [
            {
                "class": r.class_id,
                "top": str(r.top(1)[0].transform),
                "top_kind": _kind(r.top(1)[0].transform),
                "entries": r.rows(),
            }
            for r in rankings
        ],
    })
    if section["scope"] == "per-class":
        run.outputs.json("categories.json", category_split(rankings).to_dict())
        before, after = run.arg("inv_before"), run.arg("inv_after")
        if before and after:
            rows = invariance_change_vs_topk(_invariance_means(before), _invariance_means(after), rankings,
                                             k=section["top_k"], threshold=section["change_threshold"])
            run.outputs.csv("contingency.csv", [
                {"bucket": r.bucket, "n_transforms": r.n_transforms, "topk_probability": r.topk_probability,
                 "transforms": ";".join(r.transforms)}
                for r in rows
            ])
    run.summary["n_rankings"] = len(rankings)


def _kind(t: Transform) -> str:
    return t.kind if isinstance(t, TransformSpec) else str(t)


def _load_rankings(path: str | Path) -> list[ClassRanking]:
    data = _read_json(path)
    try:
        return [
            ClassRanking(
                r["class"],
                [RankEntry(parse_transform(e["spec"]), e["mean"], e["prop_boosted"], e["weighted_boost"], e["n"])
                 for e in r["entries"]],
                data["key"],
                data.get("pair_budget"),
            )
            for r in data["rankings"]
        ]
    except (KeyError, TypeError) as e:
        raise ParseError(f"{path} is not a rankings file: missing {e}") from e


def cmd_taxonomy(run: Run) -> None:
    if run.arg("demo"):
        tree = demo_tree()
    elif run.arg("edges"):
        tree = load_taxonomy(run.args.edges, run.arg("classes"))
    else:
        raise ConfigError("taxonomy needs --edges or --demo", key="--edges")
    section = run.config["taxonomy"]
    table = similarity_vs_rank_correlation(tree, _load_rankings(run.args.rankings), section["method"],
                                           section["n_bins"])
    run.outputs.csv("taxonomy_pairs.csv", table.pair_rows(), fieldnames=("class_a", "class_b", "similarity", "rho"))
    run.outputs.csv("taxonomy_bins.csv", table.bin_rows(),
                    fieldnames=("similarity", "low", "high", "n", "mean_rho", "sem"))
    run.outputs.json("taxonomy.json", {"method": table.method, "excluded": table.excluded,
                                       "bins": table.bin_rows(), **table.metadata})
    run.summary["n_pairs"] = len(table.pairs)


def _augerino_params(section: dict[str, Any]):
    try:
        return params_from_config(section)
    except ValueError as e:
        raise ConfigError(f"Invalid augerino settings: {e}", key="augerino") from e


def _restore(run: Run, state_path: str | Path) -> tuple[EmbeddingProvider, dict[str, Any]]:
    state = _read_json(state_path)
    missing = {"provider", "classes", "head"} - set(state)
    if missing:
        raise ParseError(f"{state_path} is missing {sorted(missing)}")
    provider = _provider(run, state["provider"])
    head = provider.attach_head(len(state["classes"]))
    head.load_state(state["head"])
    provider.load_body_state(state.get("body", {}))
    return provider, state


def cmd_augerino_train(run: Run) -> None:
    provider = _provider(run)
    classes, images, labels = _labelled(_samples(run, provider))
    section = run.config["augerino"]
    params = _augerino_params(section)
    warm_start(provider, images, labels, len(classes), epochs=section["warm_start_epochs"])
    result = train(provider, params, images, labels, TrainConfig(**section["train"], seed=run.config["seed"]))
    run.seeds["seed"] = run.config["seed"]
    run.outputs.csv("augerino_log.csv", result.log)
    run.outputs.csv("augerino_events.csv", result.events, fieldnames=("epoch", "step", "generator", "event", "theta"))
    bounds = image_space_bounds(result.params)
    run.outputs.json("augerino_state.json", {
        "provider": run.config["provider"],
        "classes": classes,
        "head": result.head,
        "body": result.body,
        "params": result.params.to_dict(),
        "bounds": bounds,
    })
    run.summary.update({"theta": result.params.to_dict()["theta"], "bounds": bounds})


def cmd_augerino_eval(run: Run) -> None:
    provider, state = _restore(run, run.args.state)
    params = params_from_dict(state["params"])
    _, images, labels = _labelled(_samples(run, provider), state["classes"])
    seeds = run.config["augerino"]["test_seeds"]
    run.seeds["test_seeds"] = list(seeds)
    with_aug = evaluate(provider, params, images, labels, use_augerino=True, test_seeds=seeds)
    plain = evaluate(provider, params, images, labels, use_augerino=False, test_seeds=seeds)
    run.outputs.json("augerino_eval.json", {"augerino": asdict(with_aug), "plain": asdict(plain),
                                            "bounds": image_space_bounds(params)})
    run.summary.update({"augerino_acc": with_aug.mean_acc, "plain_acc": plain.mean_acc})


def cmd_sweep(run: Run) -> None:
    section = run.config["sweep"]
    base = FixedSizeCenterCrop(resize_to=section["resize_to"], out=section["out"])
    if run.arg("state"):
        provider, state = _restore(run, run.args.state)
        _, images, labels = _labelled(_samples(run, provider), state["classes"])
    else:
        provider = _provider(run)
        classes, images, labels = _labelled(_samples(run, provider))
        based = [sample_and_apply(base, img, derive_rng(0))[0] for img in images]
        provider.attach_head(len(classes)).fit(embed_all(provider, based), labels, epochs=section["head_epochs"])
    seeds = section["test_seeds"]
    run.seeds["test_seeds"] = list(seeds)
    rows = eval_augmentation_sweep(
        images, labels, provider, base,
        v_values=sweep_values(section["v_min"], section["v_max"], section["count"]),
        test_seeds=seeds, aspect_ratio_enabled=section["aspect_ratio"],
    )
    run.outputs.csv("sweep.csv", [asdict(r) for r in rows], fieldnames=("v", "s_minus", "mean_acc", "sem", "n_seeds"))
    run.summary["n_values"] = len(rows)


def cmd_synth_gen(run: Run) -> None:
    section = run.config["synthetic"]
    specs = default_planted_specs(section["n_classes"], section["n_samples"], section["noise"])
    run.seeds["seed"] = run.config["seed"]
    dataset = generate(specs, seed=run.config["seed"], size=section["size"], jobs=run.jobs)
    for sample_id, label in zip(dataset.sample_ids, dataset.labels):
        run.outputs.path(f"{label}/{sample_id}.ppm")
    run.outputs.path(DATASET_MANIFEST)
    write_dataset(dataset, run.outputs.directory)
    run.outputs.json("planted.json", {s.class_id: str(s.planted) for s in specs})
    run.summary.update({"n_classes": len(specs), "n_images": len(dataset.images)})


_TRUE = ("1", "true", "yes")
_FALSE = ("0", "false", "no")


def _flag(value: str, path: Path) -> bool:
    text = value.strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ParseError(f"Expected a boolean in {path}, got {value!r}")


def read_helped_list(path: str | Path) -> HelpedSampleList:
    """A helped-sample list from a text file of ids, or from a per-sample correctness CSV.

    The CSV form has ``sample_id``, ``baseline_correct`` and ``method_correct``
    columns; the run id is the file stem.
    """
    path = Path(path)
    if path.suffix == ".csv":
        rows = read_csv(path, required=("sample_id", "baseline_correct", "method_correct"))
        baseline = {r["sample_id"]: _flag(r["baseline_correct"], path) for r in rows}
        method = {r["sample_id"]: _flag(r["method_correct"], path) for r in rows}
        return helped_samples(path.stem, baseline, method)
    ids = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    return HelpedSampleList.of(path.stem, (i for i in ids if i and not i.startswith("#")))


def cmd_iou(run: Run) -> None:
    group_a = [read_helped_list(p) for p in run.args.lists]
    group_b = [read_helped_list(p) for p in run.args.against] if run.arg("against") else None
    mean, sem, n = mean_pairwise_iou(group_a, group_b)
    run.outputs.json("iou.json", {
        "mean_iou": mean,
        "sem": sem,
        "n_pairs": n,
        "lists": [{"run_id": h.run_id, "size": len(h.sample_ids)} for h in group_a],
        "against": [{"run_id": h.run_id, "size": len(h.sample_ids)} for h in group_b or []],
    })
    run.summary.update({"mean_iou": mean, "n_pairs": n})


COMMANDS: dict[str, Callable[[Run], None]] = {
    "transform": cmd_transform,
    "invariance": cmd_invariance,
    "equivariance": cmd_equivariance,
    "simsearch": cmd_simsearch,
    "rank": cmd_rank,
    "taxonomy": cmd_taxonomy,
    "augerino-train": cmd_augerino_train,
    "augerino-eval": cmd_augerino_eval,
    "sweep": cmd_sweep,
    "synth-gen": cmd_synth_gen,
    "iou": cmd_iou,
}


# --- argument parsing -----------------------------------------------------


def _budget(text: str) -> int | str:
    if text == "all":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {text!r}")
    return value


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    """Flags accepted before or after the subcommand."""
    none = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=none, help="JSON config file (default: ./invarlab.json)")
    parser.add_argument("-o", "--output", default=none, help="Output directory (config: output_dir)")
    parser.add_argument("--jobs", type=int, default=none, help="Worker threads (config: jobs)")
    parser.add_argument("--seed", type=int, default=none, help="Master seed (config: seed)")
    parser.add_argument("--plot-data", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="Also write long-form tables for plotting")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="Debug logging")


def _dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="Dataset directory with manifest.csv (config: dataset.path)")
    parser.add_argument("--provider", help="Embedding provider variant (config: provider.variant)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invarlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--from-manifest", metavar="PATH", help="Rerun the command recorded in a run manifest")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p, suppress=True)
        return p

    p = add("transform", "Apply one transform to an image")
    p.add_argument("--input", required=True, help="PPM or PNG image")
    p.add_argument("--spec", required=True, help="kind:level[:sign], a;b or cyclic:dx:dy")
    p.add_argument("--fill", type=float, default=0.0, help="Fill value for exposed pixels")

    for name, text in (("invariance", "Invariance distribution per transform"),
                       ("equivariance", "Equivariance alignment per transform"),
                       ("simsearch", "SimChange per transform over sampled same-class pairs")):
        p = add(name, text)
        _dataset_flags(p)
        p.add_argument("--spec", action="append", help="Transform to measure (repeatable; default: catalog)")
        if name == "simsearch":
            p.add_argument("--budget", type=_budget, help="Pairs per class, or 'all' (config: pairs.budget)")

    p = add("rank", "Rank transforms from a simsearch output directory")
    p.add_argument("--input", required=True, help="simsearch output directory")
    p.add_argument("--scope", choices=("per-class", "global"), help="config: rank.scope")
    p.add_argument("--key", choices=("mean", "weighted_boost"), help="config: rank.key")
    p.add_argument("--inv-before", help="invariance.csv before training, for the contingency table")
    p.add_argument("--inv-after", help="invariance.csv after training")

    p = add("taxonomy", "Correlate class similarity with ranking similarity")
    p.add_argument("--rankings", required=True, help="rankings.json from the rank command")
    p.add_argument("--edges", help="child<TAB>parent edge file")
    p.add_argument("--classes", help="class_id<TAB>leaf file")
    p.add_argument("--demo", action="store_true", help="Use the built-in demo tree")
    p.add_argument("--method", choices=("wu_palmer", "path", "leacock_chodorow"), help="config: taxonomy.method")
    p.add_argument("--bins", type=int, help="Equal-width similarity bins (config: taxonomy.n_bins)")

    p = add("augerino-train", "Learn augmentation bounds jointly with a classifier head")
    _dataset_flags(p)

    p = add("augerino-eval", "Accuracy with and without learned augmentation averaging")
    p.add_argument("--dataset", help="config: dataset.path")
    p.add_argument("--state", required=True, help="augerino_state.json from augerino-train")

    p = add("sweep", "Accuracy under evaluation-time random-size center crops")
    _dataset_flags(p)
    p.add_argument("--state", help="Use the provider and head of an augerino_state.json")

    add("synth-gen", "Generate a dataset with planted class-specific factors")

    p = add("iou", "Mean pairwise IoU of helped-sample lists")
    p.add_argument("--lists", nargs="+", required=True, help="Id lists (.txt) or correctness tables (.csv)")
    p.add_argument("--against", nargs="+", help="Second group; compares across groups")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    out = {}
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = None if value == "all" else value
    return out


def _run_args(args: argparse.Namespace) -> argparse.Namespace:
    kept = {k: v for k, v in vars(args).items() if k not in _FLAG_KEYS and k not in _SESSION_FLAGS}
    return argparse.Namespace(**kept)


def prepare(args: argparse.Namespace) -> tuple[str, argparse.Namespace, dict[str, Any]]:
    """Resolve the command, its arguments and the merged config."""
    if args.from_manifest:
        manifest = read_manifest(args.from_manifest)
        overrides = {key: getattr(args, flag) for flag, key in (("output", "output_dir"), ("jobs", "jobs"))
                     if getattr(args, flag) is not None}
        config = from_record(manifest["config"], overrides)
        return manifest["command"], argparse.Namespace(**manifest["args"]), config
    return args.command, _run_args(args), load_config(args.config, _overrides(args))


def run_command(command: str, args: argparse.Namespace, config: dict[str, Any]) -> dict[str, Any]:
    """Execute one command; returns the manifest written with its outputs."""
    handler = COMMANDS[command]
    with RunOutputs(config["output_dir"]) as outputs:
        run = Run(command, args, config, outputs)
        logger.info(f"Running {command} into {outputs.directory}")
        handler(run)
        names = outputs.names() + [MANIFEST]
        manifest = build_manifest(command, config, vars(args), run.seeds, names, run.summary)
        outputs.json(MANIFEST, manifest)
    return manifest


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    if not args.command and not args.from_manifest:
        parser.print_usage(sys.stderr)
        print("invarlab: error: a command or --from-manifest is required", file=sys.stderr)
        return 2

    entry: dict[str, Any] = {"command": args.command or "from-manifest", "config_hash": None}
    audit_path = None
    try:
        command, run_args, config = prepare(args)
        entry["command"] = command
        audit_path = config["audit_path"]
        entry["config_hash"] = config_hash(config, command)
        run_command(command, run_args, config)
    except InvarlabError as e:
        if isinstance(e, ConfigError):
            logger.error(f"Invalid configuration at {e.key}: {e}")
        else:
            logger.error(f"{entry['command']} failed: {e}")
        print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        entry.update(outcome="error", error_code=e.error_code)
        code = e.exit_code
    except (OSError, UnicodeDecodeError) as e:
        logger.error(f"{entry['command']} could not read its input: {e}")
        print(json.dumps({"status": "error", "error_code": "INPUT_UNREADABLE", "message": str(e)}), file=sys.stderr)
        entry.update(outcome="error", error_code="INPUT_UNREADABLE")
        code = EXIT_INPUT
    except Exception as e:
        logger.exception(f"{entry['command']} failed unexpectedly")
        entry.update(outcome="error", error_code=type(e).__name__)
        code = EXIT_UNEXPECTED
    else:
        entry["outcome"] = "ok"
        code = 0
    audit_log(entry, audit_path)
    return code


if __name__ == "__main__":
    sys.exit(main())
