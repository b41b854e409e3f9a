"""Command-line entry point: ``moescope <gen|train|probe|stability|report> [flags]``.

Each subcommand reads an optional JSON config (``--config``), lets flags
override its values, writes its outputs plus a ``manifest.json`` recording the
resolved configuration and SHA-256 hashes of inputs and artifacts, and exits
with 0 on success, 2 on validation errors and 3 on numeric failures.

Config file schema (every section and key optional)::

    {
      "seed": 0,
      "gen":       {"n": 8000, "size": 32, "dims": 8, "out": "corpus.moec"},
      "model":     {"num_experts": 4, "top_k": 2, "base_width": 64, ...},
      "train":     {"corpus": ..., "out": ..., "epochs": 20, "batch_size": 128, "lr": 3e-4, ...},
      "probe":     {"corpus": ..., "checkpoint": ..., "out": ..., "mei_n": 10, ...},
      "stability": {"corpus": ..., "models": [...], "out": ..., "rsa_images": 500, ...},
      "report":    {"train_dir": ..., "probe_dir": ..., "stability_dir": ..., "out": ...}
    }
"""
import argparse
import glob
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields

from . import __version__
from .errors import (ConfigError, ContractError, ConvergenceError, DegenerateInputError, DimensionError,
                     EmptySupportError, FormatError, MoeScopeError, NonFiniteLossError)

log = logging.getLogger("moescope")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (NonFiniteLossError, ConvergenceError, DegenerateInputError, EmptySupportError, FloatingPointError)
VALIDATION_ERRORS = (ConfigError, FormatError, ContractError, DimensionError, OSError, ValueError)


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(cfg):
    from .report.tables import canonical_dumps

    return hashlib.sha256(canonical_dumps(cfg).encode("utf-8")).hexdigest()


def write_manifest(path, command, cfg, inputs, artifacts, root=None):
    """Write a reproducibility manifest; artifact keys are relative to ``root``."""
    from .report.tables import write_json

    root = root or os.path.dirname(os.path.abspath(path))
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "inputs": {os.path.basename(p): sha256(p) for p in sorted(inputs)},
        "artifacts": {os.path.relpath(p, root): sha256(p) for p in sorted(artifacts)},
    }
    write_json(path, manifest)
    return manifest


def load_config(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON config ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def resolve_seed(flag, file_cfg):
    if flag is not None:
        return flag
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("MOESCOPE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MOESCOPE_SEED must be an integer, got {env!r}") from None
    return 0


def merge(section, args, keys, defaults):
    """Defaults, then the config file section, then flags that were given explicitly."""
    out = dict(defaults)
    for k, v in section.items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r}; expected one of {sorted(out)}")
        out[k] = v
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _require(cfg, key, what):
    if not cfg.get(key):
        raise ConfigError(f"{what} requires --{key.replace('_', '-')} (or '{key}' in the config file)")
    return cfg[key]


# ---------------------------------------------------------------- subcommands

GEN_DEFAULTS = {"n": 8000, "size": 32, "dims": 8, "out": "corpus.moec"}


def cmd_gen(args, file_cfg):
    from .pipeline import save_corpus, synth_corpus

    cfg = merge(file_cfg.get("gen", {}), args, GEN_DEFAULTS, GEN_DEFAULTS)
    cfg["seed"] = resolve_seed(args.seed, file_cfg)
    if cfg["dims"] < 2:
        raise ConfigError(f"--dims must be >= 2 (dimension 0 is the binary domain factor), got {cfg['dims']}")
    corpus = synth_corpus(cfg["n"], cfg["size"], cfg["dims"], seed=cfg["seed"])
    out = cfg["out"]
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    save_corpus(out, corpus)
    digest = sha256(out)
    write_manifest(out + ".manifest.json", "gen", cfg, [], [out])
    domain = corpus.factors[:, 0]
    print(f"corpus {out}: N={len(corpus)} size={corpus.size} dims={corpus.factors.shape[1]} "
          f"classes={len(set(corpus.labels.tolist()))} organic={int((domain == 0).sum())} "
          f"geometric={int((domain == 1).sum())} sha256={digest}")
    return EXIT_OK


def _model_defaults():
    from .moe import MoeConfig

    return MoeConfig().to_dict()


TRAIN_KEYS = ["corpus", "out", "resume", "epochs", "batch_size", "lr", "weight_decay", "min_lr", "clip_norm",
              "keep_top", "val_fraction", "temperature", "w_importance"]


def cmd_train(args, file_cfg):
    from .moe import MoeConfig, MoeModel
    from .pipeline import TrainConfig, load_corpus, train

    tdefaults = {f.name: f.default for f in fields(TrainConfig) if f.name != "seed"}
    tdefaults.update({"corpus": None, "out": "run", "resume": None})
    tcfg = merge(file_cfg.get("train", {}), args, TRAIN_KEYS, tdefaults)
    mcfg = merge(file_cfg.get("model", {}), argparse.Namespace(
        num_experts=args.experts, top_k=args.topk, base_width=args.base_width,
        noise_enabled=False if args.no_noise else None), ["num_experts", "top_k", "base_width", "noise_enabled"],
        _model_defaults())
    seed = resolve_seed(args.seed, file_cfg)
    corpus_path = _require(tcfg, "corpus", "train")
    corpus = load_corpus(corpus_path)
    mcfg["input_size"] = corpus.size if "input_size" not in file_cfg.get("model", {}) else mcfg["input_size"]
    config = MoeConfig.from_dict(mcfg)
    run = {k: tcfg[k] for k in tdefaults if k not in ("corpus", "out", "resume")}
    train_cfg = TrainConfig(seed=seed, **run)
    out = tcfg["out"]
    os.makedirs(out, exist_ok=True)
    model = MoeModel(config, seed=seed)

    def progress(row):
        print(f"epoch {row['epoch']}: train {row['train_total']:.4f} val {row['val_total']:.4f} "
              f"(nt_xent {row['val_nt_xent']:.4f}, importance {row['val_importance']:.4f}) "
              f"min share {row['min_routing_share']:.3f} agreement {row['topk_agreement']:.3f}", flush=True)

    result = train(model, corpus, train_cfg, out_dir=out, resume=tcfg["resume"], progress=progress)
    resolved = {"seed": seed, "model": config.to_dict(),
                "train": {**asdict(train_cfg), "corpus": corpus_path, "out": out}}
    resolved["train"].pop("seed")
    from .report.tables import write_json

    write_json(os.path.join(out, "run_config.json"), resolved)
    artifacts = [os.path.join(out, f) for f in sorted(os.listdir(out))
                 if f.endswith((".ckpt", ".csv")) or f == "run_config.json"]
    inputs = [corpus_path] + ([tcfg["resume"]] if tcfg["resume"] else [])
    write_manifest(os.path.join(out, "manifest.json"), "train", {**resolved, "resume": tcfg["resume"]},
                   inputs, artifacts)
    print(f"kept {', '.join(os.path.basename(p) for p in result.checkpoints)} + last.ckpt in {out}")
    return EXIT_OK


PROBE_DEFAULTS = {"corpus": None, "checkpoint": None, "out": "probe", "mei_n": 10, "folds": 5,
                  "lasso_rows": None, "separability": True, "agreement": True}


def _load_probes(checkpoint, corpus):
    from .moe import load_checkpoint
    from .probe import collect

    model, meta, _ = load_checkpoint(checkpoint)
    if model.config.input_size != corpus.size:
        raise ConfigError(f"{checkpoint}: model input size {model.config.input_size} != corpus image size {corpus.size}")
    norm = meta.get("normalize")
    mean, std = (norm["mean"], norm["std"]) if norm else corpus.channel_stats()
    return model, collect(model, corpus, mean, std), (mean, std)


def cmd_probe(args, file_cfg):
    from .pipeline import AugmentConfig, load_corpus
    from .report import probe_bundle

    cfg = merge(file_cfg.get("probe", {}), args, [k for k in PROBE_DEFAULTS], PROBE_DEFAULTS)
    cfg["seed"] = resolve_seed(args.seed, file_cfg)
    corpus_path = _require(cfg, "corpus", "probe")
    ckpt = _require(cfg, "checkpoint", "probe")
    corpus = load_corpus(corpus_path)
    model, probes, (mean, std) = _load_probes(ckpt, corpus)
    aug = AugmentConfig(size=model.config.input_size).with_stats(mean, std)
    summary = probe_bundle(cfg["out"], probes, corpus, model if cfg["agreement"] else None, seed=cfg["seed"],
                           mei_n=cfg["mei_n"], folds=cfg["folds"], lasso_rows=cfg["lasso_rows"],
                           separability=cfg["separability"], augment_cfg=aug)
    artifacts = [os.path.join(cfg["out"], f) for f in summary["files"]]
    write_manifest(os.path.join(cfg["out"], "manifest.json"), "probe", cfg, [corpus_path, ckpt], artifacts)
    for target, rows in summary["lasso"].items():
        for r in rows:
            top = ", ".join(f"{n} {w:.3f}" for n, w in r["top"])
            print(f"expert {r['expert']} {target}: r2 {r['r2_mean']:.3f} +/- {r['r2_std']:.3f} [{top}]")
    if "topk_agreement" in summary:
        print(f"top-{probes.top_k} agreement {summary['topk_agreement']:.4f} (chance {summary['chance_agreement']:.4f})")
    print(f"wrote {len(artifacts)} files to {cfg['out']}")
    return EXIT_OK


STABILITY_DEFAULTS = {"corpus": None, "models": None, "out": "stability", "rsa_images": 500, "mei_n": 10}


def expand_models(patterns):
    if isinstance(patterns, str):
        patterns = [patterns]
    paths = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        paths.extend(hits if hits else [p])
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise ConfigError(f"model checkpoints not found: {missing}")
    return paths


def cmd_stability(args, file_cfg):
    from .moe.checkpoint import read_checkpoint
    from .pipeline import load_corpus
    from .report import stability_bundle

    cfg = merge(file_cfg.get("stability", {}), args, list(STABILITY_DEFAULTS), STABILITY_DEFAULTS)
    cfg["seed"] = resolve_seed(args.seed, file_cfg)
    corpus_path = _require(cfg, "corpus", "stability")
    paths = expand_models(_require(cfg, "models", "stability"))
    if len(paths) < 2:
        raise ConfigError(f"stability analysis needs at least 2 models, got {len(paths)}")
    configs = [read_checkpoint(p)[0] for p in paths]
    for p, c in zip(paths[1:], configs[1:]):
        if c != configs[0]:
            diff = sorted(k for k in c if c.get(k) != configs[0].get(k))
            raise ConfigError(f"{p} has a config incompatible with {paths[0]} (differs in {diff})")
    corpus = load_corpus(corpus_path)
    probe_sets = [_load_probes(p, corpus)[1] for p in paths]
    names = [p if os.path.relpath(p).startswith("..") else os.path.relpath(p) for p in paths]
    summary, _ = stability_bundle(cfg["out"], probe_sets, corpus, names, rsa_images=cfg["rsa_images"],
                                  seed=cfg["seed"], mei_n=cfg["mei_n"])
    cfg["models"] = names
    artifacts = [os.path.join(cfg["out"], f) for f in summary["files"]]
    write_manifest(os.path.join(cfg["out"], "manifest.json"), "stability", cfg, [corpus_path, *paths], artifacts)
    n = len(summary["items"])
    print(f"{n}x{n} second-order matrix; chosen clusters {summary['chosen_clusters']}; assignments {summary['assignments']}")
    if "purity_per_model" in summary:
        print("domain purity per model: " + ", ".join(f"{p:.2f}" for p in summary["purity_per_model"]))
    return EXIT_OK


REPORT_DEFAULTS = {"train_dir": None, "probe_dir": None, "stability_dir": None, "out": "report"}


def cmd_report(args, file_cfg):
    import csv

    from .report import svg
    from .report.tables import write_json

    cfg = merge(file_cfg.get("report", {}), args, list(REPORT_DEFAULTS), REPORT_DEFAULTS)
    if not any(cfg[k] for k in ("train_dir", "probe_dir", "stability_dir")):
        raise ConfigError("report needs at least one of --train-dir, --probe-dir, --stability-dir")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    combined, inputs, artifacts = {}, [], []
    if cfg["train_dir"]:
        path = os.path.join(cfg["train_dir"], "epochs.csv")
        inputs.append(path)
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise FormatError(f"{path} has no epochs")
        ep = [int(r["epoch"]) for r in rows]
        for key, label in [("val_total", "validation loss"), ("train_total", "training loss"),
                           ("min_routing_share", "minimum routing share"), ("topk_agreement", "top-k agreement")]:
            dst = os.path.join(out, f"{key}.svg")
            with open(dst, "w", encoding="utf-8") as f:
                f.write(svg.line(ep, [float(r[key]) for r in rows], label, "epoch", label))
            artifacts.append(dst)
        combined["train"] = {k: float(rows[-1][k]) for k in rows[-1] if k != "epoch"}
        combined["train"]["epochs"] = len(rows)
    for key in ("probe_dir", "stability_dir"):
        if cfg[key]:
            path = os.path.join(cfg[key], "summary.json")
            inputs.append(path)
            with open(path, encoding="utf-8") as f:
                combined[key[:-4]] = json.load(f)
    dst = os.path.join(out, "report.json")
    write_json(dst, combined)
    artifacts.append(dst)
    write_manifest(os.path.join(out, "manifest.json"), "report", cfg, inputs, artifacts)
    print(f"wrote {len(artifacts)} files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _bool_flag(p, name, help):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_true", default=None, help=help)
    p.add_argument(f"--no-{name}", dest=name.replace("-", "_"), action="store_false", help=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(prog="moescope", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"moescope {__version__}")
    parser.add_argument("--log-level", default="WARNING", help="logging level for diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="global seed (fallback: config, then $MOESCOPE_SEED, then 0)")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("gen", help="generate a synthetic two-domain corpus")
    common(p)
    p.add_argument("--n", type=int, help="number of images (default 8000)")
    p.add_argument("--size", type=int, help="image side in pixels (default 32)")
    p.add_argument("--dims", type=int, help="factor columns, >= 2 (default 8)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a sparse contrastive MoE model")
    common(p)
    p.add_argument("--corpus", help="corpus file written by 'gen'")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--experts", type=int, help="number of experts E (default 4)")
    p.add_argument("--topk", type=int, help="experts per image k (default 2)")
    p.add_argument("--base-width", type=int, help="width divided by sqrt(E) for the expert channels")
    p.add_argument("--no-noise", action="store_true", help="disable gate noise during training")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, help="views per step (two per image)")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--min-lr", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--keep-top", type=int, help="checkpoints kept by validation loss")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--w-importance", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="run the per-model interpretability analyses")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--mei-n", type=int, help="most exciting inputs per expert")
    p.add_argument("--folds", type=int, help="separability cross-validation folds")
    p.add_argument("--lasso-rows", type=int, help="cap on images used for the dimension regression")
    _bool_flag(p, "separability", "pairwise class separability (on by default; --no-separability to skip)")
    _bool_flag(p, "agreement", "top-k view agreement (on by default; --no-agreement to skip)")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("stability", help="pooled second-order RSA and clustering across models")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--models", nargs="+", help="checkpoint paths or glob patterns")
    p.add_argument("--rsa-images", type=int, help="images in each first-order RDM (default 500)")
    p.add_argument("--mei-n", type=int)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("report", help="collect training curves and analysis summaries")
    common(p)
    p.add_argument("--train-dir")
    p.add_argument("--probe-dir")
    p.add_argument("--stability-dir")
    p.set_defaults(func=cmd_report)
    return parser


def diagnostic(exc, code):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(exc, "snapshot_path", None):
        record["snapshot"] = exc.snapshot_path
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = load_config(args.config)
        return args.func(args, file_cfg)
    except NUMERIC_ERRORS as exc:
        diagnostic(exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    except VALIDATION_ERRORS as exc:
        diagnostic(exc, EXIT_VALIDATION)
        return EXIT_VALIDATION
    except MoeScopeError as exc:
        diagnostic(exc, EXIT_VALIDATION)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
