"""Command-line interface: composable pipeline stages plus a one-shot runner.

Every stage reads and writes the declared file formats (WSFX tensors,
JSON-lines manifests/sidecars, WSDM models), so any pipeline prefix can be
resumed from persisted artifacts.  ``wsad run`` executes the whole flow
(synth data excluded): extract -> bank -> mine -> mix -> train -> score ->
eval, and records the fully resolved configuration in ``run.json`` so the
run can be reproduced bitwise.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import AggregationConfig, extract_patch_set, extract_patch_sets
from .bank import build_bank, knn_score_image, load_bank, save_bank
from .discriminator import TrainConfig, load_model, save_model, save_train_log, train
from .feature_io import (
    DatasetManifest,
    ManifestEntry,
    SynthConfig,
    generate_synthetic,
    read_feature_map,
    write_feature_map,
)
from .inference import ImageResult, load_scores, render_map, save_scores, score_image
from .metrics import EvalReport, aggregate_runs, build_report, report_markdown
from .mining import (
    linear_mix,
    load_augmented,
    load_mined,
    mine,
    save_augmented,
    save_mined,
    take_all_patches,
)

DATASET_ROOT_ENV = "WSAD_DATASET_ROOT"

BANK_FILE = "bank.wsfx"
MINED_FILE = "mined.wsfx"
AUGMENTED_FILE = "augmented.wsfx"
MODEL_FILE = "model.wsdm"
TRAIN_LOG_FILE = "train_log.jsonl"
SCORES_FILE = "scores.jsonl"
REPORT_FILE = "report.json"
REPORT_MD_FILE = "report.md"
RUN_FILE = "run.json"


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage and the fix."""


@dataclass
class RunConfig:
    """Fully resolved configuration of a one-shot pipeline run."""

    dataset_root: str
    out_dir: str
    manifest: str | None = None
    patch_size: int = 5
    layer_indices: tuple[int, ...] = (0,)
    target_height: int | None = None
    target_width: int | None = None
    retention_rate: float = 0.2
    alpha_low: float = 0.1
    alpha_high: float = 1.0
    epochs: int = 40
    batch_size: int = 4096
    learning_rate: float = 1e-4
    seed: int = 0
    repeat: int = 1
    mining: bool = True
    mixing: bool = True
    bank_subsample: float = 1.0
    render: bool = False

    def __post_init__(self):
        self.layer_indices = tuple(self.layer_indices)
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")

    def manifest_path(self) -> Path:
        if self.manifest is not None:
            return Path(self.manifest)
        return Path(self.dataset_root) / "manifest.jsonl"

    def aggregation(self) -> AggregationConfig:
        return AggregationConfig(
            patch_size=self.patch_size,
            layer_indices=self.layer_indices,
            target_height=self.target_height,
            target_width=self.target_width,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=seed,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["layer_indices"] = list(self.layer_indices)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        return cls(**obj)


def _require(path: Path, what: str, producer: str) -> Path:
    if not Path(path).exists():
        raise StageError(f"{what} '{path}' not found; produce it with `wsad {producer}`")
    return Path(path)


def _load_manifest(path: Path) -> DatasetManifest:
    _require(path, "manifest", "synth (or point --manifest at an existing one)")
    return DatasetManifest.load(path)


def _resolve_dataset_root(explicit: str | None) -> str:
    if explicit:
        return explicit
    env = os.environ.get(DATASET_ROOT_ENV)
    if env:
        return env
    return "."


# ---------------------------------------------------------------------------
# single run + orchestrator
# ---------------------------------------------------------------------------


def run_single(config: RunConfig, seed: int, out_dir: Path) -> EvalReport:
    """Execute one full pipeline pass into ``out_dir`` with the given seed."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(config.manifest_path())
    agg = config.aggregation()

    bank = _stage("bank", lambda: build_bank(manifest, agg))
    if config.bank_subsample < 1.0:
        bank = bank.subsample(config.bank_subsample, seed)
    save_bank(bank, out_dir / BANK_FILE)

    anomaly_entries = manifest.train_anomaly()
    if not anomaly_entries:
        warnings.warn(
            "no anomaly training images; falling back to nearest-distance scoring",
            UserWarning,
            stacklevel=2,
        )
        results = []
        maps_dir = out_dir / "maps"
        maps_dir.mkdir(exist_ok=True)
        for entry in manifest.test():
            patches = extract_patch_set(entry, agg, manifest.root)
            amap, score = _stage("score", lambda: knn_score_image(bank, patches))
            write_feature_map(amap.grid[:, :, None], maps_dir / f"{entry.id}.wsfx")
            results.append(ImageResult(image_id=entry.id, score=score, label=entry.label))
        save_scores(results, out_dir / SCORES_FILE)
        report = _stage("eval", lambda: build_report(results))
        report.save(out_dir / REPORT_FILE)
        (out_dir / REPORT_MD_FILE).write_text(report_markdown(report), encoding="utf-8")
        return report

    anomaly_sets = _stage(
        "mine", lambda: extract_patch_sets(manifest, anomaly_entries, agg)
    )
    if config.mining:
        mined = _stage("mine", lambda: mine(bank, anomaly_sets, config.retention_rate))
    else:
        mined = take_all_patches(anomaly_sets)
    save_mined(mined, out_dir / MINED_FILE)

    if config.mixing:
        augmented = _stage(
            "mix",
            lambda: linear_mix(
                mined,
                bank,
                alpha_low=config.alpha_low,
                alpha_high=config.alpha_high,
                seed=seed,
            ),
        )
        save_augmented(augmented, out_dir / AUGMENTED_FILE)
        anomaly_features = augmented.features_f32()
    else:
        anomaly_features = mined.features

    model = _stage(
        "train", lambda: train(bank.features, anomaly_features, config.train_config(seed))
    )
    save_model(model, out_dir / MODEL_FILE)
    save_train_log(model.train_history, out_dir / TRAIN_LOG_FILE)

    results = []
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(exist_ok=True)
    render_dir = out_dir / "renders"
    if config.render:
        render_dir.mkdir(exist_ok=True)
    for entry in manifest.test():
        patches = extract_patch_set(entry, agg, manifest.root)
        amap, result = _stage("score", lambda: score_image(model, patches))
        result.label = entry.label
        write_feature_map(amap.grid[:, :, None], maps_dir / f"{entry.id}.wsfx")
        if config.render:
            render_map(amap, render_dir / f"{entry.id}.pgm")
        results.append(result)
    save_scores(results, out_dir / SCORES_FILE)

    report = _stage("eval", lambda: build_report(results))
    report.save(out_dir / REPORT_FILE)
    (out_dir / REPORT_MD_FILE).write_text(report_markdown(report), encoding="utf-8")
    return report


def run_all(config: RunConfig) -> EvalReport:
    """Run the full pipeline ``repeat`` times (seeds seed..seed+repeat-1).

    Each repetition varies only the seed.  Artifacts land in out_dir (or
    out_dir/run-<i>/ when repeating); the aggregated report and run.json go
    to out_dir.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    reports = []
    for rep in range(config.repeat):
        rep_dir = out_dir if config.repeat == 1 else out_dir / f"run-{rep}"
        reports.append(run_single(config, config.seed + rep, rep_dir))

    final = reports[0] if config.repeat == 1 else aggregate_runs(reports)
    final.save(out_dir / REPORT_FILE)
    (out_dir / REPORT_MD_FILE).write_text(report_markdown(final), encoding="utf-8")

    run_record = {
        "config": config.to_dict(),
        "versions": {
            "wsad": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    with open(out_dir / RUN_FILE, "w", encoding="utf-8") as f:
        f.write(json.dumps(run_record, sort_keys=True, indent=2) + "\n")
    return final


def _stage(name: str, fn):
    try:
        return fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(f"stage '{name}' failed: {exc}") from exc


# ---------------------------------------------------------------------------
# argument parsing helpers
# ---------------------------------------------------------------------------


def _parse_layers(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid layer list {text!r}; expected e.g. 0,1")


def _parse_hw(text: str) -> tuple[int, int]:
    for sep in ("x", ","):
        if sep in text:
            a, b = text.split(sep, 1)
            return int(a), int(b)
    raise argparse.ArgumentTypeError(f"invalid size {text!r}; expected HxW")


def _parse_alpha_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":", 1)
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid alpha range {text!r}; expected low:high")


def _add_aggregation_flags(p: argparse.ArgumentParser):
    p.add_argument("--patch-size", type=int, default=5, help="odd aggregation window size")
    p.add_argument("--layers", type=_parse_layers, default=(0,), metavar="I,J,...",
                   help="layer indices to align and concatenate")
    p.add_argument("--target-hw", type=_parse_hw, default=None, metavar="HxW",
                   help="common resolution for multi-layer alignment")


def _aggregation_from_args(args) -> AggregationConfig:
    th, tw = (args.target_hw if args.target_hw else (None, None))
    return AggregationConfig(
        patch_size=args.patch_size,
        layer_indices=args.layers,
        target_height=th,
        target_width=tw,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = SynthConfig(
        seed=args.seed,
        n_normal_train=args.n_normal_train,
        n_anomaly_train=args.n_anomaly_train,
        n_normal_test=args.n_normal_test,
        n_anomaly_test=args.n_anomaly_test,
        height=args.height,
        width=args.width,
        channels=args.channels,
        blob_height=args.blob_height,
        blob_width=args.blob_width,
        shift_magnitude=args.shift_magnitude,
        noise_sigma=args.noise_sigma,
    )
    manifest = generate_synthetic(config, args.out)
    print(f"wrote {len(manifest.entries)} images under {args.out}")
    return 0


def cmd_aggregate(args) -> int:
    manifest = _load_manifest(Path(args.manifest))
    agg = _aggregation_from_args(args)
    out = Path(args.out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest.entries:
        patches = extract_patch_set(entry, agg, manifest.root)
        rel = f"features/{entry.id}.wsfx"
        write_feature_map(patches.grid(), out / rel)
        mask_rel = None
        if entry.mask_path:
            mask_rel = f"masks/{entry.id}.wsfx"
            (out / "masks").mkdir(exist_ok=True)
            shutil.copyfile(manifest.resolve(entry.mask_path), out / mask_rel)
        entries.append(
            ManifestEntry(
                id=entry.id,
                split=entry.split,
                label=entry.label,
                feature_path=rel,
                mask_path=mask_rel,
            )
        )
    new_manifest = DatasetManifest(entries=entries, root=out)
    new_manifest.save(out / "manifest.jsonl")
    print(
        f"wrote {len(entries)} aggregated maps under {out} "
        "(use --patch-size 1 in later stages to avoid double aggregation)"
    )
    return 0


def cmd_bank(args) -> int:
    manifest = _load_manifest(Path(args.manifest))
    bank = build_bank(manifest, _aggregation_from_args(args))
    if args.subsample < 1.0:
        bank = bank.subsample(args.subsample, args.seed)
    save_bank(bank, args.out)
    print(f"bank: {bank.n_rows} rows x {bank.channel_count} channels -> {args.out}")
    return 0


def cmd_mine(args) -> int:
    manifest = _load_manifest(Path(args.manifest))
    bank = load_bank(_require(Path(args.bank), "bank file", "bank"))
    entries = manifest.train_anomaly()
    anomaly_sets = extract_patch_sets(manifest, entries, _aggregation_from_args(args))
    mined = mine(bank, anomaly_sets, args.r)
    save_mined(mined, args.out)
    print(f"mined {mined.n_rows} of {sum(ps.n_patches for ps in anomaly_sets)} features -> {args.out}")
    return 0


def cmd_mix(args) -> int:
    mined = load_mined(_require(Path(args.mined), "mined set", "mine"))
    bank = load_bank(_require(Path(args.bank), "bank file", "bank"))
    lo, hi = args.alpha
    augmented = linear_mix(
        mined, bank, target_size=args.target_size, alpha_low=lo, alpha_high=hi, seed=args.seed
    )
    save_augmented(augmented, args.out)
    print(f"augmented set: {augmented.n_rows} rows -> {args.out}")
    return 0


def cmd_train(args) -> int:
    bank = load_bank(_require(Path(args.bank), "bank file", "bank"))
    augmented = load_augmented(_require(Path(args.augmented), "augmented set", "mix"))
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
    )
    model = train(bank.features, augmented.features_f32(), config)
    save_model(model, args.out)
    if args.log:
        save_train_log(model.train_history, args.log)
    last = model.train_history[-1] if model.train_history else float("nan")
    print(f"trained {config.epochs} epochs (final loss {last:.6f}) -> {args.out}")
    return 0


def cmd_score(args) -> int:
    manifest = _load_manifest(Path(args.manifest))
    model = load_model(_require(Path(args.model), "model file", "train"))
    agg = _aggregation_from_args(args)
    results = []
    maps_dir = Path(args.maps_dir) if args.maps_dir else None
    if maps_dir:
        maps_dir.mkdir(parents=True, exist_ok=True)
    render_dir = Path(args.render_dir) if args.render_dir else None
    if render_dir:
        render_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.test():
        patches = extract_patch_set(entry, agg, manifest.root)
        amap, result = score_image(model, patches)
        result.label = entry.label
        results.append(result)
        if maps_dir:
            write_feature_map(amap.grid[:, :, None], maps_dir / f"{entry.id}.wsfx")
        if render_dir:
            render_map(amap, render_dir / f"{entry.id}.pgm")
    save_scores(results, args.out)
    print(f"scored {len(results)} test images -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    reports = []
    for scores_path in args.scores:
        results = load_scores(_require(Path(scores_path), "scores file", "score"))
        reports.append(build_report(results))
    report = reports[0] if len(reports) == 1 else aggregate_runs(reports)
    report.save(args.out)
    if args.markdown:
        Path(args.markdown).write_text(report_markdown(report), encoding="utf-8")
    print(report.to_json())
    return 0


def cmd_run(args) -> int:
    file_config = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            obj = json.load(f)
        # run.json stores the config under a "config" key; accept both shapes
        file_config = obj.get("config", obj) if isinstance(obj, dict) else obj

    merged = dict(file_config)
    overrides = {
        "dataset_root": args.dataset_root,
        "manifest": args.manifest,
        "out_dir": args.out,
        "patch_size": args.patch_size,
        "layer_indices": args.layers,
        "retention_rate": args.r,
        "epochs": args.epochs,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "seed": args.seed,
        "repeat": args.repeat,
        "bank_subsample": args.bank_subsample,
    }
    if args.target_hw:
        overrides["target_height"], overrides["target_width"] = args.target_hw
    if args.alpha:
        overrides["alpha_low"], overrides["alpha_high"] = args.alpha
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if args.no_mining:
        merged["mining"] = False
    if args.no_mixing:
        merged["mixing"] = False
    if args.render:
        merged["render"] = True

    merged.setdefault("dataset_root", _resolve_dataset_root(None))
    if "out_dir" not in merged:
        raise StageError("run needs --out (or out_dir in the config file)")
    config = RunConfig.from_dict(merged)
    report = run_all(config)
    print(report.to_json())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsad",
        description="Weakly supervised anomaly detection on CNN patch feature maps.",
    )
    parser.add_argument("--version", action="version", version=f"wsad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature-map dataset")
    p.add_argument("--out", required=True, help="dataset root directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-normal-train", type=int, default=100)
    p.add_argument("--n-anomaly-train", type=int, default=8)
    p.add_argument("--n-normal-test", type=int, default=50)
    p.add_argument("--n-anomaly-test", type=int, default=50)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--blob-height", type=int, default=5)
    p.add_argument("--blob-width", type=int, default=5)
    p.add_argument("--shift-magnitude", type=float, default=3.0)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aggregate", help="persist aligned + aggregated feature maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_aggregation_flags(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("bank", help="build the normal feature bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output WSFX path (origins sidecar beside it)")
    p.add_argument("--subsample", type=float, default=1.0,
                   help="keep this fraction of bank rows (uniform, seeded)")
    p.add_argument("--seed", type=int, default=0)
    _add_aggregation_flags(p)
    p.set_defaults(func=cmd_bank)

    p = sub.add_parser("mine", help="mine anomaly features against the bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--r", type=float, default=0.2, help="retention rate in (0, 1]")
    p.add_argument("--out", required=True)
    _add_aggregation_flags(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("mix", help="augment mined features by linear mixing")
    p.add_argument("--mined", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--alpha", type=_parse_alpha_range, default=(0.1, 1.0), metavar="LOW:HIGH")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-size", type=int, default=None,
                   help="output row count (default: bank size)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train", help="train the discriminator")
    p.add_argument("--bank", required=True)
    p.add_argument("--augmented", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output WSDM model path")
    p.add_argument("--log", default=None, help="optional JSONL training log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score the test split with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output scores JSONL path")
    p.add_argument("--maps-dir", default=None, help="write raw anomaly maps (WSFX) here")
    p.add_argument("--render-dir", default=None, help="write rendered anomaly maps (PGM) here")
    _add_aggregation_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute AUROC/ACC/F1 from score files")
    p.add_argument("--scores", nargs="+", required=True,
                   help="one or more score JSONL files; several aggregate as repeats")
    p.add_argument("--out", required=True, help="output report JSON path")
    p.add_argument("--markdown", default=None, help="optional Markdown table path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run the full pipeline end to end")
    p.add_argument("--config", default=None, help="JSON config file (flags override)")
    p.add_argument("--dataset-root", default=None,
                   help=f"dataset root (or ${DATASET_ROOT_ENV})")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None, help="output directory for artifacts")
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--layers", type=_parse_layers, default=None, metavar="I,J,...")
    p.add_argument("--target-hw", type=_parse_hw, default=None, metavar="HxW")
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--alpha", type=_parse_alpha_range, default=None, metavar="LOW:HIGH")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--repeat", type=int, default=None)
    p.add_argument("--bank-subsample", type=float, default=None)
    p.add_argument("--no-mining", action="store_true", help="ablation: keep all anomaly patches")
    p.add_argument("--no-mixing", action="store_true", help="ablation: train on mined set only")
    p.add_argument("--render", action="store_true", help="also write PGM anomaly map renders")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
