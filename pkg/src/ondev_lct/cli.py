"""``ondev-lct`` command line: inspect, train, fed, partition, eval.

Every command reads an experiment config (JSON file and/or flags) and
writes files to an output directory. Precedence is flags, then the
``LCT_SEED`` environment variable for the seed, then the file, then
defaults. Exit codes: 0 ok, 2 config, 3 io, 4 numeric, 5 refusing to
overwrite, 6 partition.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fedavg
from .data.dataset import Dataset, manifest, normalization
from .data.formats import IDX_IMAGES_MAGIC, load_cifar_binary, load_idx, read_idx
from .data.partition import PartitionSpec, dirichlet_partition, partition_stats, stats_csv
from .data.synth import synth_dataset
from .errors import ConfigError, FormatError, LCTError, NumericError, PartitionError
from .model import checkpoint
from .model.budget import budget
from .model.config import LCTConfig
from .model.lct import LCTModel
from .tensor.rng import Rng
from .training.loop import TrainConfig, evaluate, train_epochs

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CLOBBER, EXIT_PARTITION = 0, 2, 3, 4, 5, 6

TOP_KEYS = {"model", "data", "train", "fed", "output", "seed", "deterministic"}
FED_KEYS = {"partition", "rounds", "local_epochs", "clients_per_round", "halve_batch",
            "aggregate_bn_stats", "seeds"}
PARTITION_KEYS = {f.name for f in dataclasses.fields(PartitionSpec)}

SYNTH_DEFAULTS = {"name": "synthetic", "n": 512, "test_n": 256, "num_classes": 10, "shape": [28, 28, 1],
                  "seed": 0, "task_seed": None, "signal": 1.0, "noise": 1.0}
IDX_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
             "t10k-labels-idx1-ubyte")
CIFAR_FILES = {
    "cifar10": ([f"data_batch_{i}.bin" for i in range(1, 6)], ["test_batch.bin"]),
    "cifar100": (["train.bin"], ["test.bin"]),
}
OUTPUTS = ("metrics.jsonl", "final.ckpt", "config.resolved.json", "rounds.jsonl", "summary.json",
           "partition.json", "stats.json", "partition.csv", "eval.json")

log = logging.getLogger("ondev_lct")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- config resolution ---------------------------------------------------

def _strict(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _parse_shape(text: str) -> list[int]:
    try:
        dims = [int(v) for v in text.lower().split("x")]
    except ValueError:
        raise ConfigError(f"--input must look like 32x32x3, got {text!r}") from None
    if len(dims) != 3:
        raise ConfigError(f"--input must have three extents, got {text!r}")
    return dims


def _parse_data_flag(text: str) -> dict:
    """``synthetic``, ``mnist`` or ``mnist:/path/to/dir``."""
    name, _, path = text.partition(":")
    out = {"name": name}
    if path:
        out["dir"] = path
    return out


def _read_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from None
    _strict(doc, TOP_KEYS, "config")
    return doc


def _model_section(raw) -> dict:
    if raw is None:
        return {}
    if isinstance(raw, str):
        return {"variant": raw}
    _strict(raw, {f.name for f in dataclasses.fields(LCTConfig)} | {"variant"}, "model")
    return dict(raw)


def _data_section(raw: dict | None) -> dict | None:
    if raw is None:
        return None
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError("data section needs a 'name'")
    name = raw["name"]
    if name == "synthetic":
        _strict(raw, set(SYNTH_DEFAULTS), "data")
        out = {**SYNTH_DEFAULTS, **raw}
        out["shape"] = [int(v) for v in out["shape"]]
        return out
    known = manifest()["datasets"]
    if name not in known:
        raise ConfigError(f"unknown dataset {name!r}; expected synthetic or one of {sorted(known)}")
    if name.startswith("cifar"):
        keys = {"name", "dir", "train_files", "test_files", "limit", "test_limit"}
        _strict(raw, keys, "data")
        out = {k: raw.get(k) for k in keys}
        train_f, test_f = CIFAR_FILES[name]
        if out["dir"] is not None:
            out["train_files"] = out["train_files"] or [str(Path(out["dir"]) / f) for f in train_f]
            out["test_files"] = out["test_files"] or [str(Path(out["dir"]) / f) for f in test_f]
        if not out["train_files"]:
            raise ConfigError(f"{name} needs 'dir' or 'train_files'")
        return out
    keys = {"name", "dir", "train_images", "train_labels", "test_images", "test_labels", "limit", "test_limit"}
    _strict(raw, keys, "data")
    out = {k: raw.get(k) for k in keys}
    if out["dir"] is not None:
        for key, fname in zip(("train_images", "train_labels", "test_images", "test_labels"), IDX_FILES):
            if out[key] is None:
                p = Path(out["dir"]) / fname
                if not p.exists() and Path(f"{p}.gz").exists():
                    p = Path(f"{p}.gz")
                out[key] = str(p)
    if out["train_images"] is None or out["train_labels"] is None:
        raise ConfigError(f"{name} needs 'dir' or train_images/train_labels paths")
    return out


def _seed_from(args, doc: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("LCT_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"LCT_SEED must be an integer, got {env!r}") from None
    if "seed" in doc:
        return doc["seed"]
    return (doc.get("train") or {}).get("seed", 0)


def resolve(args) -> dict:
    """Merge defaults, the config file and flags into the fully explicit resolved config."""
    doc = _read_file(args.config) if getattr(args, "config", None) else {}
    seed = _seed_from(args, doc)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    deterministic = doc.get("deterministic", True)
    if not isinstance(deterministic, bool):
        raise ConfigError("deterministic must be true or false")

    model = _model_section(doc.get("model"))
    if getattr(args, "variant", None):
        model["variant"] = args.variant
    if getattr(args, "input", None):
        model["input_shape"] = _parse_shape(args.input)
    if getattr(args, "classes", None) is not None:
        model["num_classes"] = args.classes

    data_raw = doc.get("data")
    if getattr(args, "data", None):
        data_raw = {**(data_raw if isinstance(data_raw, dict) and data_raw.get("name") == args.data.split(":")[0]
                       else {}), **_parse_data_flag(args.data)}
    for flag in ("limit", "test_limit"):
        v = getattr(args, flag, None)
        if v is None:
            continue
        if data_raw is None:
            raise ConfigError(f"--{flag.replace('_', '-')} needs a data section")
        key = flag
        if data_raw.get("name") == "synthetic":
            key = "n" if flag == "limit" else "test_n"
        data_raw = {**data_raw, key: v}
    if isinstance(data_raw, dict) and data_raw.get("name") == "synthetic":
        # synthetic data adopts the model's geometry unless it sets its own
        data_raw = dict(data_raw)
        if "input_shape" in model:
            data_raw.setdefault("shape", model["input_shape"])
        if "num_classes" in model:
            data_raw.setdefault("num_classes", model["num_classes"])
    data = _data_section(data_raw)
    if data is not None:
        shape, classes = data_shape(data)
        model.setdefault("input_shape", shape)
        model.setdefault("num_classes", classes)
    model_cfg = LCTConfig.from_dict(model)
    if data is not None:
        shape, classes = data_shape(data)
        if tuple(shape) != model_cfg.input_shape or classes != model_cfg.num_classes:
            raise ConfigError(f"model expects {model_cfg.input_shape} inputs and {model_cfg.num_classes} classes; "
                              f"data provides {tuple(shape)} and {classes}")

    train = dict(doc.get("train") or {})
    _strict(train, {f.name for f in dataclasses.fields(TrainConfig)}, "train")
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("batch_size", "batch_size"),
                      ("optimizer", "optimizer"), ("max_steps", "max_steps"),
                      ("label_smoothing", "label_smoothing")):
        v = getattr(args, flag, None)
        if v is not None:
            train[key] = v
    train["seed"] = seed
    train["deterministic"] = deterministic
    train.setdefault("dtype", model_cfg.dtype)
    train_cfg = TrainConfig.from_dict(train)

    fed = doc.get("fed")
    fed_flags = {k: getattr(args, k, None) for k in ("beta", "clients", "per_round", "rounds", "local_epochs",
                                                     "seeds")}
    if fed is not None or any(v is not None for v in fed_flags.values()):
        fed = _fed_section(dict(fed or {}), fed_flags, seed)

    output = getattr(args, "out", None) or doc.get("output")
    return {"model": model_cfg.to_dict(), "data": data, "train": train_cfg.to_dict(), "fed": fed,
            "output": output, "seed": seed, "deterministic": deterministic}


def _fed_section(fed: dict, flags: dict, seed: int) -> dict:
    _strict(fed, FED_KEYS, "fed")
    part = dict(fed.get("partition") or {})
    _strict(part, PARTITION_KEYS, "fed.partition")
    if flags["beta"] is not None:
        part["beta"] = flags["beta"]
    if flags["clients"] is not None:
        part["num_clients"] = flags["clients"]
    part.setdefault("num_clients", 10)
    part.setdefault("beta", 0.5)
    part.setdefault("seed", None)
    spec_probe = {k: v for k, v in part.items() if k != "seed" or v is not None}
    try:
        spec = PartitionSpec(**spec_probe)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    part = {**spec.to_dict(), "seed": part["seed"]}
    out = {
        "partition": part,
        "rounds": fed.get("rounds", 10),
        "local_epochs": fed.get("local_epochs", 5),
        "clients_per_round": fed.get("clients_per_round", "all"),
        "halve_batch": fed.get("halve_batch", True),
        "aggregate_bn_stats": fed.get("aggregate_bn_stats", True),
        "seeds": fed.get("seeds", [seed]),
    }
    for key in ("rounds", "local_epochs"):
        if flags[key] is not None:
            out[key] = flags[key]
    if flags["per_round"] is not None:
        pr = flags["per_round"]
        out["clients_per_round"] = ("all" if pr == "all" else f"range:{pr}" if "-" in pr else f"fixed:{pr}")
    if flags["seeds"] is not None:
        try:
            out["seeds"] = [int(s) for s in flags["seeds"].split(",")]
        except ValueError:
            raise ConfigError(f"--seeds must be a comma-separated integer list, got {flags['seeds']!r}") from None
    if not out["seeds"] or not all(isinstance(s, int) for s in out["seeds"]):
        raise ConfigError("fed.seeds must be a non-empty integer list")
    out["clients_per_round"] = fedavg.ClientSampler.parse(out["clients_per_round"]).to_json()
    fedavg.ClientSampler.parse(out["clients_per_round"]).check(part["num_clients"])
    return out


def fed_run_config(resolved: dict, seed: int) -> fedavg.FedRunConfig:
    fed = resolved["fed"]
    part = dict(fed["partition"])
    if part["seed"] is None:
        part["seed"] = seed
    return fedavg.FedRunConfig(
        model=LCTConfig.from_dict(resolved["model"]),
        partition=PartitionSpec(**part),
        rounds=fed["rounds"],
        local_epochs=fed["local_epochs"],
        clients_per_round=fed["clients_per_round"],
        train=TrainConfig.from_dict(resolved["train"]).replace(seed=seed),
        seed=seed,
        halve_batch=fed["halve_batch"],
        aggregate_bn_stats=fed["aggregate_bn_stats"],
    )


# -- data ----------------------------------------------------------------

def data_shape(data: dict) -> tuple[list, int]:
    if data["name"] == "synthetic":
        return list(data["shape"]), data["num_classes"]
    entry = manifest()["datasets"][data["name"]]
    return list(entry["shape"]), entry["num_classes"]


def load_data(data: dict, need_test: bool = True) -> tuple[Dataset, Dataset | None]:
    """Materialize the train (and test) split described by a resolved data section."""
    name = data["name"]
    if name == "synthetic":
        h, w, c = data["shape"]
        task = data["seed"] if data["task_seed"] is None else data["task_seed"]
        kw = dict(num_classes=data["num_classes"], h=h, w=w, c=c, seed=data["seed"], task_seed=task,
                  signal=data["signal"], noise=data["noise"])
        train = synth_dataset(data["n"], split="train", **kw)
        test = synth_dataset(data["test_n"], split="test", **kw) if need_test and data["test_n"] else None
        return train, test
    k = manifest()["datasets"][name]["num_classes"]
    if name.startswith("cifar"):
        train = load_cifar_binary(data["train_files"], k, name)
        test = load_cifar_binary(data["test_files"], k, name) if need_test and data["test_files"] else None
        if data["limit"] is not None:
            train = train.head(data["limit"])
        if test is not None and data["test_limit"] is not None:
            test = test.head(data["test_limit"])
        return train, test
    stats = None
    if manifest()["datasets"][name]["mean"] is None:
        raw = read_idx(data["train_images"], IDX_IMAGES_MAGIC)
        stats = normalization(name, raw[..., None].astype(np.float32) / 255.0)
    train = load_idx(data["train_images"], data["train_labels"], name, k, data["limit"], stats)
    test = None
    if need_test and data["test_images"]:
        test = load_idx(data["test_images"], data["test_labels"], name, k, data["test_limit"], stats)
    return train, test


# -- output handling -----------------------------------------------------

def prepare_output(resolved: dict, force: bool) -> Path:
    out = resolved["output"]
    if not out:
        raise ConfigError("no output directory: pass --out or set 'output'")
    path = Path(out)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CliError(EXIT_CLOBBER, f"{path} already contains results; pass --force to overwrite")
        for name in OUTPUTS:
            (path / name).unlink(missing_ok=True)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class JsonlWriter:
    """Append-only JSON Lines file, flushed after every record."""

    def __init__(self, path: Path):
        self.fh = open(path, "a", encoding="utf-8")

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


# -- commands ------------------------------------------------------------

def cmd_inspect(args) -> int:
    resolved = resolve(args)
    cfg = LCTConfig.from_dict(resolved["model"])
    report = budget(LCTModel(cfg, Rng(resolved["seed"])))
    doc = {"variant": cfg.name, "input_shape": list(cfg.input_shape), "num_classes": cfg.num_classes,
           **report.to_dict()}
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _require_data(resolved: dict) -> dict:
    if resolved["data"] is None:
        raise ConfigError("this command needs a data section (or --data)")
    return resolved["data"]


def cmd_train(args) -> int:
    resolved = resolve(args)
    data = _require_data(resolved)
    out = prepare_output(resolved, args.force)
    _write_json(out / "config.resolved.json", resolved)
    train, test = load_data(data)
    cfg = TrainConfig.from_dict(resolved["train"])
    model = LCTModel(LCTConfig.from_dict(resolved["model"]), Rng(resolved["seed"]))
    writer = JsonlWriter(out / "metrics.jsonl")
    try:
        train_epochs(model, train, cfg, Rng(resolved["seed"]).child("train"), test_set=test, on_epoch=writer)
    finally:
        writer.close()
    checkpoint.save(model, out / "final.ckpt", extra={"command": "train", "seed": resolved["seed"]})
    return EXIT_OK


def cmd_fed(args) -> int:
    resolved = resolve(args)
    data = _require_data(resolved)
    if resolved["fed"] is None:
        raise ConfigError("fed needs a 'fed' section or federation flags")
    out = prepare_output(resolved, args.force)
    _write_json(out / "config.resolved.json", resolved)
    train, test = load_data(data)
    if test is None:
        raise ConfigError("fed needs a test split for round evaluation")
    writer = JsonlWriter(out / "rounds.jsonl")
    curves, initial, final = {}, {}, {}
    try:
        for i, seed in enumerate(resolved["fed"]["seeds"]):
            cfg = fed_run_config(resolved, seed)
            res = fedavg.run(cfg, train, test, on_round=lambda r, s=seed: writer({"seed": s, **r.to_dict()}),
                             deterministic=resolved["deterministic"])
            curves[seed] = res.accuracies
            initial[str(seed)] = res.initial_acc
            final[str(seed)] = res.accuracies[-1]
            name = "final.ckpt" if i == 0 else f"final.seed{seed}.ckpt"
            checkpoint.save(res.model, out / name, extra={"command": "fed", "seed": seed})
    finally:
        writer.close()
    summary = fedavg.summarize(curves)
    summary.update({"initial_acc": initial, "final_acc": final, "rounds": resolved["fed"]["rounds"]})
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_partition(args) -> int:
    resolved = resolve(args)
    data = _require_data(resolved)
    if resolved["fed"] is None:
        raise ConfigError("partition needs fed.partition settings or --beta/--clients")
    out = prepare_output(resolved, args.force)
    _write_json(out / "config.resolved.json", resolved)
    train, _ = load_data(data, need_test=False)
    spec = fed_run_config(resolved, resolved["seed"]).partition
    part = dirichlet_partition(train, spec)
    stats = partition_stats(part, train)
    (out / "partition.json").write_text(part.to_json() + "\n", encoding="utf-8")
    _write_json(out / "stats.json", stats)
    (out / "partition.csv").write_text(stats_csv(stats), encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    resolved = resolve(args)
    data = _require_data(resolved)
    model = checkpoint.load(args.checkpoint)
    train, test = load_data(data)
    target = test if test is not None else train
    if tuple(target.shape) != tuple(model.config.input_shape):
        raise ConfigError(f"checkpoint expects inputs {model.config.input_shape}, data has {target.shape}")
    loss, top1 = evaluate(model, target, resolved["train"]["eval_batch_size"])
    doc = {"checkpoint": str(args.checkpoint), "n": len(target), "loss": loss, "top1": top1}
    print(json.dumps(doc, sort_keys=True))
    if resolved["output"]:
        path = Path(resolved["output"])
        path.mkdir(parents=True, exist_ok=True)
        _write_json(path / "eval.json", doc)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ondev-lct", description="Lightweight convolutional transformers, "
                                "centralized and federated.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="experiment JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--variant", help="OnDev-LCT-<L>/<M>")
        sp.add_argument("--input", help="HxWxC, e.g. 32x32x3")
        sp.add_argument("--classes", type=int)
        if data:
            sp.add_argument("--data", help="synthetic, <name> or <name>:<dir>")
            sp.add_argument("--limit", type=int, help="keep the first N training samples")
            sp.add_argument("--test-limit", type=int, dest="test_limit")
        if out:
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--force", action="store_true", help="overwrite existing results")

    def training(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int, dest="batch_size")
        sp.add_argument("--optimizer", choices=("adam", "adamw"))
        sp.add_argument("--max-steps", type=int, dest="max_steps")
        sp.add_argument("--label-smoothing", type=float, dest="label_smoothing")

    def federation(sp, full=True):
        sp.add_argument("--beta", type=float, help="Dirichlet concentration")
        sp.add_argument("--clients", type=int, help="number of clients")
        if full:
            sp.add_argument("--per-round", dest="per_round", help="all, K, or LO-HI")
            sp.add_argument("--rounds", type=int)
            sp.add_argument("--local-epochs", type=int, dest="local_epochs")
            sp.add_argument("--seeds", help="comma-separated run seeds")

    sp = sub.add_parser("inspect", help="parameter count and MACs of a model")
    common(sp, data=False, out=False)
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("train", help="centralized training")
    common(sp)
    training(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("fed", help="federated averaging simulation")
    common(sp)
    training(sp)
    federation(sp)
    sp.set_defaults(func=cmd_fed)

    sp = sub.add_parser("partition", help="Dirichlet client partition and statistics")
    common(sp)
    federation(sp, full=False)
    sp.set_defaults(func=cmd_partition)

    sp = sub.add_parser("eval", help="accuracy of a checkpoint on a test split")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except PartitionError as exc:
        code, msg = EXIT_PARTITION, f"partition error: {exc}"
    except NumericError as exc:
        code, msg = EXIT_NUMERIC, f"numeric error: {exc}"
    except (FormatError, OSError) as exc:
        code, msg = EXIT_IO, f"io error: {exc}"
    except (LCTError, ValueError) as exc:
        code, msg = EXIT_CONFIG, f"error: {exc}"
    print(f"ondev-lct: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
