"""Batch command-line front end.

Subcommands: ``pretrain``, ``finetune``, ``baseline``, ``gradcheck`` and
``synth``. Runs are driven by a JSON config with full defaulting; the
resolved config is echoed into a ``manifest.json`` next to the outputs, and
``--manifest`` re-executes a previous run from that file (bit-identical
CSV/metrics/checkpoint outputs on the same machine).

Exit codes: 0 success, 1 gradient check above tolerance, 2 configuration or
file-format error, 3 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .baselines import lsr_baseline_cluster
from .checkpoint import load_checkpoint, save_checkpoint
from .cluster import cluster_coefficients, write_labels_csv
from .data import (
    load_dataset_npz,
    load_idx,
    load_image_dir,
    save_dataset_npz,
    subset_select,
    synth_subspaces,
)
from .errors import ConfigurationError, DivergenceError, FormatError
from .gradcheck import gradcheck, standard_cases
from .model import Architecture
from .train import TrainConfig, finetune, pretrain

GRADCHECK_TOLERANCE = 1e-4

ARCHITECTURE_DEFAULTS = {
    "kernel_sizes": [5, 3, 3, 3, 3, 5],
    "channels": [10, 20, 30, 30, 20, 10],
    "input_channels": 1,
    "stride": 2,
}
DATASET_DEFAULTS = {
    "synth": {
        "kind": "synth",
        "n_subspaces": 5,
        "intrinsic_dim": 4,
        "hw": [8, 8],
        "per_class": 50,
        "noise_sigma": 0.01,
        "seed": 7,
    },
    "npz": {"kind": "npz", "path": None},
    "idx": {
        "kind": "idx",
        "images_path": None,
        "labels_path": None,
        "per_class": None,
        "classes": None,
        "seed": 0,
    },
    "image_dir": {"kind": "image_dir", "root": None, "target_hw": [48, 42]},
}
TRAINING_DEFAULTS = {
    field.name: field.default for field in dataclass_fields(TrainConfig)
}
TRAINING_DEFAULTS.update({"epochs_pretrain": 500, "epochs_finetune": 500})


def _merged_section(path, defaults, given):
    given = dict(given or {})
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        known = ", ".join(sorted(defaults))
        raise ConfigurationError(
            f"unknown config field {path}.{unknown[0]}; known fields: {known}"
        )
    merged = dict(defaults)
    merged.update(given)
    return merged


def resolve_config(raw: dict) -> dict:
    """Fill every omitted field with its default; reject unknown fields."""
    top_defaults = {
        "dataset": None,
        "architecture": None,
        "training": None,
        "n_clusters": None,
        "output_dir": None,
    }
    raw = _merged_section("config", top_defaults, raw)
    dataset_given = raw["dataset"] or {}
    kind = dataset_given.get("kind", "synth")
    if kind not in DATASET_DEFAULTS:
        raise ConfigurationError(
            f"dataset.kind must be one of {sorted(DATASET_DEFAULTS)}; got {kind!r}"
        )
    return {
        "dataset": _merged_section("dataset", DATASET_DEFAULTS[kind], dataset_given),
        "architecture": _merged_section(
            "architecture", ARCHITECTURE_DEFAULTS, raw["architecture"]
        ),
        "training": _merged_section("training", TRAINING_DEFAULTS, raw["training"]),
        "n_clusters": raw["n_clusters"],
        "output_dir": raw["output_dir"],
    }


def _require(section: dict, section_name: str, key: str):
    if section.get(key) is None:
        raise ConfigurationError(f"config field {section_name}.{key} is required")
    return section[key]


def load_dataset(cfg: dict):
    kind = cfg["kind"]
    if kind == "synth":
        return synth_subspaces(
            n_subspaces=cfg["n_subspaces"],
            intrinsic_dim=cfg["intrinsic_dim"],
            image_hw=tuple(cfg["hw"]),
            per_class=cfg["per_class"],
            noise_sigma=cfg["noise_sigma"],
            seed=cfg["seed"],
        )
    if kind == "npz":
        path = Path(_require(cfg, "dataset", "path"))
        if not path.exists():
            raise ConfigurationError(f"dataset file {path} does not exist")
        return load_dataset_npz(path)
    if kind == "idx":
        images = Path(_require(cfg, "dataset", "images_path"))
        labels = Path(_require(cfg, "dataset", "labels_path"))
        for p in (images, labels):
            if not p.exists():
                raise ConfigurationError(f"dataset file {p} does not exist")
        dataset = load_idx(images, labels)
        if cfg["per_class"] is not None:
            dataset = subset_select(
                dataset, per_class=cfg["per_class"], classes=cfg["classes"], seed=cfg["seed"]
            )
        return dataset
    root = Path(_require(cfg, "dataset", "root"))
    if not root.is_dir():
        raise ConfigurationError(f"dataset directory {root} does not exist")
    return load_image_dir(root, tuple(cfg["target_hw"]))


def _architecture(cfg: dict) -> Architecture:
    return Architecture(
        kernel_sizes=tuple(cfg["kernel_sizes"]),
        channels=tuple(cfg["channels"]),
        input_channels=cfg["input_channels"],
        stride=cfg["stride"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["training"])


def _resolve_n_clusters(config: dict, dataset) -> int:
    if config["n_clusters"] is not None:
        return int(config["n_clusters"])
    if dataset.labels is not None:
        return dataset.n_classes
    raise ConfigurationError(
        "config field n_clusters is required for unlabelled datasets"
    )


def _output_dir(config: dict, command: str) -> Path:
    if config["output_dir"] is None:
        config["output_dir"] = f"runs/{command}"
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out, command, config, outputs, started, extras=None):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "started_utc": started,
        "finished_utc": _utc_now(),
        "outputs": sorted(outputs),
    }
    manifest.update(extras or {})
    _write_json(out / "manifest.json", manifest)


# --- commands ------------------------------------------------------------------------


def cmd_pretrain(config: dict) -> int:
    started = _utc_now()
    out = _output_dir(config, "pretrain")
    dataset = load_dataset(config["dataset"])
    arch = _architecture(config["architecture"])
    train_config = _train_config(config)
    params, history = pretrain(dataset.images, arch, train_config)
    save_checkpoint(out / "checkpoint.bin", arch, params, train_config.seed)
    history.to_csv(out / "pretrain_loss.csv")
    _write_manifest(out, "pretrain", config,
                    ["checkpoint.bin", "pretrain_loss.csv", "manifest.json"], started)
    return 0


def cmd_finetune(config: dict, checkpoint_path) -> int:
    started = _utc_now()
    if checkpoint_path is None:
        raise ConfigurationError("finetune requires --checkpoint (or a manifest that names one)")
    checkpoint_path = Path(checkpoint_path)
    if not checkpoint_path.exists():
        raise ConfigurationError(f"checkpoint {checkpoint_path} does not exist")
    out = _output_dir(config, "finetune")
    arch = _architecture(config["architecture"])
    checkpoint_arch, params, _ = load_checkpoint(checkpoint_path)
    if checkpoint_arch != arch:
        raise ConfigurationError(
            f"checkpoint architecture {checkpoint_arch.to_dict()} does not match the "
            f"configured architecture {arch.to_dict()}"
        )
    dataset = load_dataset(config["dataset"])
    train_config = _train_config(config)
    n_clusters = _resolve_n_clusters(config, dataset)

    params, history = finetune(dataset.images, params, arch, train_config,
                               truth=dataset.labels)
    save_checkpoint(out / "model.bin", arch, params, train_config.seed)
    history.to_csv(out / "finetune_loss.csv")
    result = cluster_coefficients(params.coefficients.data, n_clusters,
                                  seed=train_config.seed, truth=dataset.labels)
    write_labels_csv(out / "labels.csv", result.labels, dataset.labels)

    metrics = {
        "err": result.err,
        "nmi": result.nmi,
        "pur": result.pur,
        "n_clusters": n_clusters,
        "epochs_finetune": train_config.epochs_finetune,
        "epochs_to_110pct_of_final_total": history.epochs_to_reach(1.10),
        "final": None,
    }
    if history.records:
        last = history.records[-1]
        metrics["final"] = {
            "reconstruction": last.reconstruction,
            "self_expression": last.self_expression,
            "regularizer": last.regularizer,
            "total": last.total,
        }
    _write_json(out / "metrics.json", metrics)
    _write_manifest(out, "finetune", config,
                    ["model.bin", "finetune_loss.csv", "labels.csv", "metrics.json",
                     "manifest.json"],
                    started, extras={"checkpoint": str(checkpoint_path)})
    return 0


def cmd_baseline(config: dict) -> int:
    started = _utc_now()
    out = _output_dir(config, "baseline")
    dataset = load_dataset(config["dataset"])
    n_clusters = _resolve_n_clusters(config, dataset)
    regularization = config["training"]["regularization"]
    seed = config["training"]["seed"]
    columns = dataset.raw_matrix if dataset.raw_matrix is not None else dataset.flattened_columns()
    result = lsr_baseline_cluster(columns, regularization, n_clusters, seed,
                                  truth=dataset.labels)
    write_labels_csv(out / "labels.csv", result.labels, dataset.labels)
    _write_json(out / "metrics.json", {
        "err": result.err,
        "nmi": result.nmi,
        "pur": result.pur,
        "n_clusters": n_clusters,
        "regularization": regularization,
    })
    _write_manifest(out, "baseline", config,
                    ["labels.csv", "metrics.json", "manifest.json"], started)
    return 0


def cmd_gradcheck(seed: int, max_coords: int) -> int:
    failures = []
    for name, builder, params in standard_cases(seed):
        result = gradcheck(builder, params, max_coords_per_param=max_coords, seed=seed)
        print(
            f"{name}: max_rel_error={result.max_rel_error:.3e} "
            f"checked={result.checked} skipped_kinks={result.skipped_kinks}"
        )
        if not result.max_rel_error < GRADCHECK_TOLERANCE:
            failures.append(name)
    if failures:
        print(f"FAIL (tolerance {GRADCHECK_TOLERANCE:g}): {', '.join(failures)}")
        return 1
    print(f"PASS (all ops under tolerance {GRADCHECK_TOLERANCE:g})")
    return 0


def _parse_hw(text: str):
    parts = text.lower().split("x")
    try:
        height, width = (int(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"--hw expects HEIGHTxWIDTH (for example 8x8); got {text!r}")
    return height, width


def cmd_synth(config: dict) -> int:
    started = _utc_now()
    out = _output_dir(config, "synth")
    dataset = load_dataset(config["dataset"])
    save_dataset_npz(out / "dataset.npz", dataset)
    _write_manifest(out, "synth", config, ["dataset.npz", "manifest.json"], started)
    return 0


# --- argument parsing ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redsc",
        description="Residual encoder-decoder subspace clustering, batch interface.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p, needs_config=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--manifest", help="re-run from a previous run's manifest.json")
        p.add_argument("--output-dir", help="override the output directory")

    add_run_flags(sub.add_parser("pretrain", help="train the reconstruction network"))
    fine = sub.add_parser("finetune", help="train the self-expressive network and cluster")
    add_run_flags(fine)
    fine.add_argument("--checkpoint", help="pretrained checkpoint to start from")
    fine.add_argument("--skip-mode", choices=["full", "none"],
                      help="override training.skip_mode from the config")
    add_run_flags(sub.add_parser("baseline", help="closed-form least-squares baseline"))

    grad = sub.add_parser("gradcheck", help="finite-difference check of every graph op")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--max-coords", type=int, default=8,
                      help="coordinates checked per parameter array")

    synth = sub.add_parser("synth", help="generate a synthetic union-of-subspaces dataset")
    synth.add_argument("--n", type=int, help="number of subspaces")
    synth.add_argument("--d", type=int, help="intrinsic dimension per subspace")
    synth.add_argument("--hw", help="image size as HEIGHTxWIDTH, for example 8x8")
    synth.add_argument("--per-class", type=int, help="samples per subspace")
    synth.add_argument("--sigma", type=float, help="noise standard deviation")
    synth.add_argument("--seed", type=int, help="generator seed")
    synth.add_argument("--manifest", help="re-run from a previous run's manifest.json")
    synth.add_argument("--output-dir", help="output directory")
    return parser


def _load_json(path, what: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"{what} {path} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{what} {path} is not valid JSON: {exc}") from exc


def _config_from_args(args) -> tuple[dict, dict]:
    """Returns (resolved config, manifest extras) honouring --manifest."""
    if args.manifest:
        manifest = _load_json(args.manifest, "manifest")
        config = resolve_config(manifest.get("config", {}))
        extras = {k: manifest[k] for k in ("checkpoint",) if k in manifest}
    elif args.config:
        config = resolve_config(_load_json(args.config, "config"))
        extras = {}
    else:
        raise ConfigurationError(f"{args.command} requires --config or --manifest")
    if args.output_dir:
        config["output_dir"] = args.output_dir
    return config, extras


def _synth_config_from_flags(args) -> dict:
    flags = {"n": args.n, "d": args.d, "hw": args.hw, "per_class": args.per_class,
             "sigma": args.sigma, "seed": args.seed}
    missing = [name for name, value in flags.items() if value is None]
    if missing:
        raise ConfigurationError(
            f"synth requires --{missing[0].replace('_', '-')} (or --manifest)"
        )
    height, width = _parse_hw(args.hw)
    return resolve_config({
        "dataset": {
            "kind": "synth",
            "n_subspaces": args.n,
            "intrinsic_dim": args.d,
            "hw": [height, width],
            "per_class": args.per_class,
            "noise_sigma": args.sigma,
            "seed": args.seed,
        },
        "output_dir": args.output_dir,
    })


def _dispatch(args) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(args.seed, args.max_coords)
    if args.command == "synth":
        if args.manifest:
            config, _ = _config_from_args(args)
        else:
            config = _synth_config_from_flags(args)
        return cmd_synth(config)
    config, extras = _config_from_args(args)
    if args.command == "pretrain":
        return cmd_pretrain(config)
    if args.command == "finetune":
        if args.skip_mode:
            config["training"]["skip_mode"] = args.skip_mode
        checkpoint = args.checkpoint or extras.get("checkpoint")
        return cmd_finetune(config, checkpoint)
    return cmd_baseline(config)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return _dispatch(args)
    except (ConfigurationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
