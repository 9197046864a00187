"""Command line: ``train``, ``eval``, ``predict`` and ``inspect``.

Every command reads a flat ``key=value`` config (``--config path``) and
accepts the same keys as ``--key value`` flags.  Command-line values beat
file values, which beat the defaults.  The resolved config is echoed to
stderr before any work starts; results go to stdout.

Exit status: 0 on success, 2 for usage errors (bad flag, unknown or
missing key, unparsable value), 1 for anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import MISSING, dataclass, fields
from pathlib import Path

from . import checkpoint as ck
from . import numerics as nx
from .corpus import (DataError, Sentence, build_vocab, format_line, load_embeddings, load_split,
                     prepare)
from .decode import decode_triplets, label_grid, oracle_logits
from .evaluate import bucket_by_triplet_count
from .model import ModelConfig
from .train import TrainConfig, TrainingError, fit, model_from_checkpoint, predict

log = logging.getLogger("astenet")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    # paths
    train: str = ""
    dev: str = ""
    test: str = ""
    data: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    out: str = ""
    resume: str = ""
    log: str = ""
    input: str = ""
    output: str = ""
    report: str = ""
    figures_dir: str = ""
    sentence: str = ""
    # model
    d_w: int = 300
    d_h: int = 200
    layers: int = 3
    heads: int = 8
    dropout: float = 0.5
    max_len: int = 120
    use_tga: bool = True
    use_sfi: bool = True
    # optimisation
    lr: float = 1e-3
    decay_rate: float = 0.05
    decay_step: int = 1000
    batch_size: int = 6
    max_steps: int = 5000
    eval_interval: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # evaluation hook: score one-hot logits built from the gold labels
    oracle_logits: bool = False


MODEL_KEYS = ("d_w", "d_h", "layers", "heads", "dropout", "max_len", "use_tga", "use_sfi")
TRAIN_KEYS = ("lr", "decay_rate", "decay_step", "batch_size", "max_steps", "eval_interval", "seed",
              "beta1", "beta2", "eps")
FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    return raw


def read_config_file(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        if key not in FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def resolve(file_values: dict[str, str], cli_values: dict[str, str]) -> tuple[RunConfig, set[str]]:
    """Merge defaults < file < command line; also return the keys set explicitly."""
    merged = {**file_values, **cli_values}
    cfg = RunConfig(**{k: _convert(k, v) for k, v in merged.items()})
    return cfg, set(merged)


def echo_config(cfg: RunConfig, stream) -> None:
    for f in fields(cfg):
        print(f"config.{f.name}={getattr(cfg, f.name)}", file=stream)


def _require(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        if not getattr(cfg, key):
            raise UsageError(f"missing required key: {key}")


def model_config(cfg: RunConfig) -> ModelConfig:
    try:
        return ModelConfig(**{k: getattr(cfg, k) for k in MODEL_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def train_config(cfg: RunConfig) -> TrainConfig:
    try:
        return TrainConfig(**{k: getattr(cfg, k) for k in TRAIN_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_data(path) -> list[Sentence]:
    sentences, rejected = load_split(path, strict_format=True)
    for _, reason in rejected:
        log.warning("skipping %s", reason)
    return sentences


def _load_checkpoint(cfg: RunConfig, explicit: set[str]) -> ck.Checkpoint:
    ckpt = ck.load(cfg.checkpoint)
    for key in MODEL_KEYS:
        if key in explicit and getattr(cfg, key) != getattr(ckpt.config, key):
            raise ck.CheckpointError(
                f"{key}={getattr(cfg, key)} disagrees with the checkpoint ({getattr(ckpt.config, key)})")
    return ckpt


def _write_lines(path: str, lines: list[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if path and path != "-":
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig, explicit: set[str]) -> int:
    _require(cfg, "train", "dev", "embeddings", "out")
    mcfg, tcfg = model_config(cfg), train_config(cfg)
    train, dev = _load_data(cfg.train), _load_data(cfg.dev)
    if not train or not dev:
        raise DataError("training and dev sets must contain at least one valid sentence")
    test = _load_data(cfg.test) if cfg.test else []
    vocab = build_vocab(train + dev + test)
    emb = load_embeddings(cfg.embeddings, vocab, mcfg.d_w)
    resume = ck.load(cfg.resume) if cfg.resume else None
    if resume is not None and resume.config != mcfg:
        raise ck.CheckpointError("resume checkpoint was trained with a different model config")
    log_path = Path(cfg.log or cfg.out + ".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", encoding="utf-8") as log_file:
        def on_event(event):
            log_file.write(" ".join(f"{k}={v}" for k, v in event.items()) + "\n")
            if event["event"] == "eval":
                log.info("step %s dev f1=%s", event["step"], event["f1"])
        result = fit(train, dev, mcfg, tcfg, emb, vocab, resume=resume, on_event=on_event)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    ck.save(result.best, cfg.out)
    ck.save(result.last, cfg.out + ".last")
    best = model_from_checkpoint(result.best, emb)
    dev_report = bucket_by_triplet_count([p.triplets for p in predict(best, dev, vocab)],
                                         [s.triplets for s in dev])
    lines = [f"best_step={result.best.step}"] + dev_report.key_values("dev.")
    if test:
        test_report = bucket_by_triplet_count([p.triplets for p in predict(best, test, vocab)],
                                              [s.triplets for s in test])
        lines += test_report.key_values("test.")
    print("\n".join(lines))
    if cfg.figures_dir:
        from . import plots
        plots.training_curve(result.log, Path(cfg.figures_dir) / "training_curve.png")
    return 0


def cmd_eval(cfg: RunConfig, explicit: set[str]) -> int:
    _require(cfg, "data")
    sentences = _load_data(cfg.data)
    gold = [s.triplets for s in sentences]
    if cfg.oracle_logits:
        preds = [decode_triplets(*oracle_logits(s.gold_tags, s.gold_table)) for s in sentences]
    else:
        _require(cfg, "checkpoint", "embeddings")
        ckpt = _load_checkpoint(cfg, explicit)
        vocab = build_vocab(sentences)
        model = model_from_checkpoint(ckpt, load_embeddings(cfg.embeddings, vocab, ckpt.config.d_w))
        preds = predict(model, sentences, vocab)
    report = bucket_by_triplet_count([p.triplets for p in preds], gold)
    lines = [f"sentences={len(sentences)}"] + report.key_values()
    print("\n".join(lines))
    print(report.text(), file=sys.stderr)
    if cfg.report:
        _write_lines(cfg.report, lines + ["", report.text()])
    if cfg.figures_dir:
        from . import plots
        plots.bucket_chart(report, Path(cfg.figures_dir) / "bucket_f1.png", title=Path(cfg.data).name)
    return 0


def _model_and_vocab(cfg: RunConfig, explicit: set[str], sentences: list[Sentence]):
    _require(cfg, "checkpoint", "embeddings")
    ckpt = _load_checkpoint(cfg, explicit)
    vocab = build_vocab(sentences)
    return model_from_checkpoint(ckpt, load_embeddings(cfg.embeddings, vocab, ckpt.config.d_w)), vocab


def cmd_predict(cfg: RunConfig, explicit: set[str]) -> int:
    _require(cfg, "input")
    raw = Path(cfg.input).read_text(encoding="utf-8").splitlines()
    good: list[tuple[int, Sentence]] = []
    failures = 0
    for lineno, line in enumerate(raw, 1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            good.append((lineno, prepare(Sentence(tokens, []))))
        except DataError as exc:
            failures += 1
            print(f"{cfg.input}:{lineno}: {exc}", file=sys.stderr)
    out_lines = []
    if good:
        model, vocab = _model_and_vocab(cfg, explicit, [s for _, s in good])
        preds = predict(model, [s for _, s in good], vocab)
        out_lines = [format_line(s.tokens, p.triplets) for (_, s), p in zip(good, preds)]
    _write_lines(cfg.output, out_lines)
    return 1 if failures else 0


def cmd_inspect(cfg: RunConfig, explicit: set[str]) -> int:
    _require(cfg, "sentence")
    sentence = prepare(Sentence(cfg.sentence.split(), []))
    model, vocab = _model_and_vocab(cfg, explicit, [sentence])
    [pred], [(_, table_logits)] = predict(model, [sentence], vocab, keep_logits=True)
    tokens = sentence.tokens
    width = max(max(len(t) for t in tokens), 4)
    print("tags")
    for tok, tag in zip(tokens, pred.tags):
        print(f"  {tok:<{width}} {tag}")
    print("grid")
    print(" " * (width + 2) + " ".join(f"{t[:width]:>{width}}" for t in tokens))
    for tok, row in zip(tokens, label_grid(table_logits)):
        print(f"  {tok:<{width}}" + " ".join(f"{c:>{width}}" for c in row))
    print("triplets")
    print(format_line(tokens, pred.triplets).split("####", 1)[1])
    if cfg.figures_dir:
        from . import plots
        plots.label_grid_figure(tokens, table_logits, Path(cfg.figures_dir) / "label_grid.png")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "inspect": cmd_inspect}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="astenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        for f in fields(RunConfig):
            default = f.default if f.default is not MISSING else None
            p.add_argument(f"--{f.name}", dest=f.name, default=None, metavar="VALUE",
                           help=f"(default: {default!r})")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        file_values = read_config_file(args.config) if args.config else {}
        cli_values = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                      if getattr(args, f.name) is not None}
        cfg, explicit = resolve(file_values, cli_values)
        echo_config(cfg, sys.stderr)
        return COMMANDS[args.command](cfg, explicit)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ck.CheckpointError, TrainingError, nx.DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic, never a traceback dump
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
