"""Command-line pipeline: gen, mask, train, attack, report.

Every command takes ``--config`` (a JSON object of option values),
``--seed`` and ``--out``. Explicit flags win over the config file, which
wins over built-in defaults. Without ``--out``, the output directory is
``runs/<command>-<hash>`` where the hash covers the effective config, so
an identical invocation lands in (and overwrites) the same directory.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import generate_synthetic, load_dataset, write_tensor
from .errors import ConfigError, LoadError, NumericFailure, RejectedInputError
from .eval import AttackConfig, MethodScores, evaluate_method, fuse_scores, write_report
from .eval.scores import DEFAULT_ALPHA, DEFAULT_BETA
from .freq import MaskKey
from .nn import FaceNet, ParamStore
from .train import RunRecord, TrainConfig, mask_images, train_adaptive, train_baseline, train_fixed

log = logging.getLogger("hybridmask")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_ATTACK_KEYS = {f.name for f in dataclasses.fields(AttackConfig)}

# Options each command understands (beyond the TrainConfig / AttackConfig fields).
_COMMAND_KEYS = {
    "gen": {"classes", "per_class", "size", "seed"},
    "mask": {"data", "key", "key_seed", "seed"},
    "train": {"data", "mode", "k", "key", "key_seed"} | _TRAIN_KEYS,
    "attack": {"run", "baseline", "data", "seed", "attack"},
    "report": {"runs", "baseline", "alpha", "beta", "seed", "attack"},
}

_DEFAULTS = {
    "gen": {"classes": 10, "per_class": 20, "size": 32, "seed": 0},
    "mask": {"key": None, "key_seed": 0, "seed": 0},
    "train": {"mode": "adaptive", "k": 2, "key": None, "key_seed": 0},
    "attack": {"data": None, "seed": 0, "attack": {}},
    "report": {"alpha": DEFAULT_ALPHA, "beta": DEFAULT_BETA, "seed": 0, "attack": {}},
}


class UsageError(ConfigError):
    pass


# --- config plumbing ---------------------------------------------------------


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise LoadError(f"cannot read config: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _effective(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags; reject unknown keys."""
    cfg = dict(_DEFAULTS.get(command, {}))
    file_cfg = _read_config(args.config)
    unknown = set(file_cfg) - _COMMAND_KEYS[command]
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update(file_cfg)
    for name, value in vars(args).items():
        if name in _COMMAND_KEYS[command] and value is not None:
            cfg[name] = value
    return cfg


def _require(cfg: dict, *names) -> None:
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _config_hash(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, **cfg}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _out_dir(command: str, args, cfg: dict) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path("runs") / f"{command}-{_config_hash(command, cfg)}"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise LoadError(f"missing or unreadable artifact: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"corrupt artifact: {exc}", path) from exc


def _relative(path, start) -> str:
    # Paths stored in artifacts are relative to the artifact's directory.
    return os.path.relpath(Path(path).resolve(), Path(start).resolve())


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _key_for(cfg: dict) -> MaskKey:
    if cfg.get("key"):
        return MaskKey.load(cfg["key"])
    return MaskKey.generate(int(cfg["key_seed"]))


def _attack_config(cfg: dict) -> AttackConfig:
    doc = dict(cfg.get("attack") or {})
    unknown = set(doc) - _ATTACK_KEYS
    if unknown:
        raise ConfigError(f"unknown attack config keys: {sorted(unknown)}")
    if "hidden" in doc:
        doc["hidden"] = tuple(int(h) for h in doc["hidden"])
    doc.setdefault("seed", int(cfg.get("seed", 0)))
    return AttackConfig(**doc)


# --- commands ----------------------------------------------------------------


def cmd_gen(args) -> Path:
    if args.out is None:
        raise UsageError("gen needs --out")
    cfg = _effective("gen", args)
    _, manifest = generate_synthetic(
        int(cfg["classes"]), int(cfg["per_class"]), int(cfg["size"]), int(cfg["seed"]), args.out
    )
    print(manifest)
    return manifest


def cmd_mask(args) -> Path:
    cfg = _effective("mask", args)
    _require(cfg, "data")
    data = load_dataset(cfg["data"])
    key = _key_for(cfg)
    out = _out_dir("mask", args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    key.save(out / "key.json")
    write_tensor(out / "masked.fmt", mask_images(data.images, key))
    write_tensor(out / "labels.fmt", data.labels.astype(np.float32))
    _write_json(out / "mask.json", {"data": _relative(cfg["data"], out), "n": len(data)})
    print(out)
    return out


def _train_config(cfg: dict) -> TrainConfig:
    doc = {k: v for k, v in cfg.items() if k in _TRAIN_KEYS}
    try:
        tc = TrainConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    tc.validate()
    return tc


def cmd_train(args) -> Path:
    cfg = _effective("train", args)
    _require(cfg, "data")
    mode = cfg["mode"]
    if mode not in ("baseline", "fixed", "adaptive"):
        raise ConfigError(f"unknown mode {mode!r}")
    tc = _train_config(cfg)
    if mode == "fixed" and int(cfg["k"]) < 2:
        raise ConfigError(f"fixed mode needs k >= 2, got {cfg['k']}")
    data = load_dataset(cfg["data"])
    # Options that do not apply to the mode are dropped so they do not perturb the hash.
    if mode == "baseline":
        cfg = {k: v for k, v in cfg.items() if k not in ("k", "key", "key_seed", "candidate_set")}
    elif mode == "fixed":
        cfg = {k: v for k, v in cfg.items() if k != "candidate_set"}
    out = _out_dir("train", args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    if mode == "baseline":
        result = train_baseline(data, tc, out)
    else:
        key = _key_for(cfg)
        if mode == "fixed":
            result = train_fixed(data, int(cfg["k"]), key, tc, out)
        else:
            result = train_adaptive(data, key, tc, out)
    _write_json(
        out / "run.json",
        {"mode": mode, "data": _relative(cfg["data"], out), "k": cfg.get("k"), "config_hash": _config_hash("train", cfg)},
    )
    log.info("%s accuracy %.4f", mode, result.record.accuracy)
    print(out)
    return out


def _load_run(run_dir: Path):
    run_dir = Path(run_dir)
    meta = _read_json(run_dir / "run.json")
    record = RunRecord.from_dict(_read_json(run_dir / "record.json"))
    tc = TrainConfig.from_dict({k: v for k, v in _read_json(run_dir / "config.json").items() if k != "mode"})
    params = ParamStore.load(run_dir / "checkpoints" / "fr.fmz")
    return meta, record, tc, params


def _method_name(meta: dict, record: RunRecord) -> str:
    if meta["mode"] == "fixed":
        return f"Masking+MixUp(k:{record.candidate_set[0]})"
    if meta["mode"] == "adaptive":
        ks = record.candidate_set
        return f"Masking+AdaMixUp(k:{ks[0]}-{ks[-1]})"
    return "ArcFace"


def _attack_run(run_dir: Path, baseline_dir: Path, cfg: dict) -> dict:
    meta, record, tc, _ = _load_run(run_dir)
    if meta["mode"] == "baseline":
        raise ConfigError(f"{run_dir} is a baseline run; attack a masked run")
    bmeta, brecord, btc, bparams = _load_run(baseline_dir)
    if bmeta["mode"] != "baseline":
        raise ConfigError(f"{baseline_dir} is not a baseline run")
    data = load_dataset(cfg.get("data") or Path(run_dir) / meta["data"])
    key = MaskKey.load(Path(run_dir) / "key.json")
    h, w = data.image_shape
    f1 = FaceNet(h * w, btc.arcface(data.class_count), btc.hidden)
    if meta["mode"] == "fixed":
        k_values, k_probs = record.candidate_set, None
    else:
        k_values = record.candidate_set
        probs = np.asarray(record.k_proportions, dtype=np.float64)
        k_probs = probs / probs.sum() if probs.sum() > 0 else None
    result = evaluate_method(
        _method_name(meta, record), data, key, f1, bparams,
        acc_mask=record.accuracy, acc_bsl=brecord.accuracy,
        k_values=k_values, k_probs=k_probs, max_weight=tc.max_weight, batch_size=tc.batch_size,
        attack_cfg=_attack_config(cfg), seed=int(cfg.get("seed", 0)),
    )
    doc = {
        **dataclasses.asdict(result.scores),
        "attacker_error": result.attacker_error,
        "S2_skipped": result.S2_skipped,
        "S4_skipped": result.S4_skipped,
        "baseline": _relative(baseline_dir, run_dir),
    }
    _write_json(Path(run_dir) / "attack.json", doc)
    return doc


def cmd_attack(args) -> Path:
    cfg = _effective("attack", args)
    _require(cfg, "run", "baseline")
    _attack_run(Path(cfg["run"]), Path(cfg["baseline"]), cfg)
    out = Path(cfg["run"]) / "attack.json"
    print(out)
    return out


def cmd_report(args) -> Path:
    cfg = _effective("report", args)
    _require(cfg, "runs")
    alpha, beta = float(cfg["alpha"]), float(cfg["beta"])
    if alpha < 0 or beta < 0:
        raise ConfigError("alpha and beta must be non-negative")
    methods = []
    for run in cfg["runs"]:
        path = Path(run) / "attack.json"
        if path.exists():
            doc = _read_json(path)
        elif cfg.get("baseline") is not None:
            doc = _attack_run(Path(run), Path(cfg["baseline"]), cfg)
        else:
            raise LoadError("missing attack.json (run `attack` first or pass --baseline)", path)
        try:
            methods.append(MethodScores(**{f.name: doc[f.name] for f in dataclasses.fields(MethodScores)}))
        except KeyError as exc:
            raise LoadError(f"attack.json lacks field {exc}", path) from exc
    cards = fuse_scores(methods, alpha, beta)
    out = _out_dir("report", args, {**cfg, "runs": [str(Path(r).resolve()) for r in cfg["runs"]]})
    csv_path, _ = write_report(cards, out)
    print(csv_path)
    return csv_path


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory (default: content-addressed under runs/)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hybridmask", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate the synthetic face dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("mask", parents=[common], help="mask a dataset with a keyed transform")
    p.add_argument("--data", help="dataset manifest")
    p.add_argument("--key", help="existing key.json (default: generate from --key-seed)")
    p.add_argument("--key-seed", dest="key_seed", type=int)

    p = sub.add_parser("train", parents=[common], help="train a recognition model")
    p.add_argument("--data", help="dataset manifest")
    p.add_argument("--mode", choices=("baseline", "fixed", "adaptive"))
    p.add_argument("--k", type=int, help="mixing count for --mode fixed")
    p.add_argument("--candidates", dest="candidate_set", type=_parse_int_list, help='e.g. "2,3,4"')
    p.add_argument("--key", help="existing key.json (default: generate from --key-seed)")
    p.add_argument("--key-seed", dest="key_seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-weight", dest="max_weight", type=float)
    p.add_argument("--arc-scale", dest="arc_scale", type=float)
    p.add_argument("--arc-margin", dest="arc_margin", type=float)
    p.add_argument("--policy", choices=("learned", "uniform"))
    p.add_argument("--policy-lr", dest="policy_lr", type=float)
    p.add_argument("--policy-warmup", dest="policy_warmup", type=int)

    p = sub.add_parser("attack", parents=[common], help="score a masked run against a reconstruction attacker")
    p.add_argument("--run", help="masked run directory")
    p.add_argument("--baseline", help="baseline run directory (reference model)")
    p.add_argument("--data", help="dataset manifest (default: the one the run used)")

    p = sub.add_parser("report", parents=[common], help="fuse scores of several runs into a table")
    p.add_argument("--runs", nargs="+", help="masked run directories")
    p.add_argument("--baseline", help="baseline run, used to attack runs lacking attack.json")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    return parser


COMMANDS = {"gen": cmd_gen, "mask": cmd_mask, "train": cmd_train, "attack": cmd_attack, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, RejectedInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
