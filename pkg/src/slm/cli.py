"""Command-line entry point.

    slm gen-corpus --seed 1 --methods 200 --out corpus.ml
    slm extract --corpus corpus.ml --out data/ [--ratios 0.8,0.1,0.1]
    slm train --train data/train.jsonl --dev data/dev.jsonl --checkpoint model.slm
    slm eval --examples data/test.jsonl --checkpoint model.slm --k 1,5
    slm complete --checkpoint model.slm --source snippet.ml --width 5
    slm gradcheck

Exit status: 0 on success, 2 on usage or configuration errors, 1 on
runtime errors (missing files, unreadable inputs, failed checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

log = logging.getLogger("slm")

PATH_KEYS = ("corpus", "examples", "train", "dev", "checkpoint", "report", "out", "source")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Settings merged from an optional JSON config file and the command line."""

    command: str = ""
    paths: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)
    seed: int | None = None
    preset: str = "desk"
    deterministic: bool = False
    epochs: int = 10
    width: int = 5
    k: list = field(default_factory=lambda: [1, 5])
    jobs: int = 1

    @classmethod
    def from_json(cls, obj) -> "RunConfig":
        if not isinstance(obj, dict):
            raise UsageError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        bad_paths = sorted(set(obj.get("paths", {})) - set(PATH_KEYS))
        if bad_paths:
            raise UsageError(f"unknown config paths: {bad_paths}")
        if obj.get("preset", "desk") not in ("desk", "paper"):
            raise UsageError(f"preset must be desk or paper, got {obj['preset']!r}")
        return cls(**obj)

    def resolved_seed(self) -> int:
        """Explicit seed, else ``SLM_SEED``, else 0."""
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get("SLM_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise UsageError(f"SLM_SEED must be an integer, got {env!r}") from None
        return 0

    def path(self, key: str, required: bool = True) -> Path | None:
        p = self.paths.get(key)
        if p is None and required:
            raise UsageError(f"missing required path --{key}")
        return Path(p) if p is not None else None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be >= 1")
    return ks


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="random seed (falls back to $SLM_SEED, then 0)")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded BLAS and serial execution")
    common.add_argument("--jobs", type=int, help="worker processes for per-example work")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="slm", description="Structural language model for any-code completion.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus")
    g.add_argument("--methods", type=int, default=200)
    g.add_argument("--max-depth", type=int, default=3)
    g.add_argument("--word-pool", type=int, default=400)
    g.add_argument("--out")

    e = sub.add_parser("extract", parents=[common], help="extract completion examples from a corpus")
    e.add_argument("--corpus")
    e.add_argument("--out", help="output directory for train/dev/test JSONL")
    e.add_argument("--ratios", type=_float_list, default=[0.8, 0.1, 0.1])

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--checkpoint", help="output checkpoint (also resumed from with --resume)")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--preset", choices=["desk", "paper"])
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one hyperparameter (JSON value)")

    v = sub.add_parser("eval", parents=[common], help="top-k metrics on an examples file")
    v.add_argument("--examples")
    v.add_argument("--checkpoint")
    v.add_argument("--k", type=_int_list)
    v.add_argument("--width", type=int)
    v.add_argument("--report", help="also write the JSON report here")

    c = sub.add_parser("complete", parents=[common], help="complete a /*HOLE*/ in a source file")
    c.add_argument("--checkpoint")
    c.add_argument("--source")
    c.add_argument("--width", type=int)
    c.add_argument("--top", type=int, help="number of completions to print (default: width)")

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on a micro model")
    gc.add_argument("--tol", type=float, default=1e-6)
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"malformed config {args.config}: {e}") from None
        cfg = RunConfig.from_json(obj)
    cfg.command = args.command
    for key in PATH_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg.paths[key] = val
    for key in ("seed", "deterministic", "epochs", "width", "k", "jobs", "preset"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    for item in getattr(args, "set", []):
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            cfg.hyperparams[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg.hyperparams[key] = raw
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if cfg.width < 1:
        raise UsageError("--width must be >= 1")
    return cfg


def _need_file(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


# --------------------------------------------------------------------------- commands

def cmd_gen_corpus(cfg: RunConfig, args) -> int:
    from .dataset import CorpusSpec, corpus_text, gen_synthetic_corpus

    spec = CorpusSpec(seed=cfg.resolved_seed(), method_count=args.methods, max_depth=args.max_depth,
                      word_pool=args.word_pool)
    text = corpus_text(gen_synthetic_corpus(spec))
    out = cfg.path("out", required=False)
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")
        log.info("wrote %d methods to %s", args.methods, out)
    return 0


def cmd_extract(cfg: RunConfig, args) -> int:
    from .dataset import ExtractStats, copy_signal, extract_examples, read_corpus, split, write_examples

    methods = read_corpus(_need_file(cfg.path("corpus")))
    stats = ExtractStats()
    examples = extract_examples(methods, stats=stats)
    if len(args.ratios) != 3:
        raise UsageError("--ratios needs three values (train,dev,test)")
    parts = split(examples, tuple(args.ratios), cfg.resolved_seed())
    out = cfg.path("out")
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        write_examples(out / f"{name}.jsonl", part)
    report = stats.to_dict()
    report.update(copySignal=copy_signal(examples), train=len(parts[0]), dev=len(parts[1]), test=len(parts[2]))
    print(json.dumps(report, sort_keys=True))
    return 0


def _hyper(cfg: RunConfig):
    from .model.hyper import ConfigError, Hyperparams

    try:
        return Hyperparams.preset(cfg.preset, **cfg.hyperparams)
    except (ConfigError, TypeError) as e:
        raise UsageError(f"bad hyperparameters: {e}") from None


def cmd_train(cfg: RunConfig, args) -> int:
    from .dataset import read_examples
    from .model.checkpoint import load_checkpoint, save_checkpoint
    from .model.training import TrainConfig, train

    examples = read_examples(_need_file(cfg.path("train")))
    dev_path = cfg.path("dev", required=False)
    dev = read_examples(_need_file(dev_path)) if dev_path else None
    ckpt = cfg.path("checkpoint")
    model = adam = None
    if args.resume and ckpt.exists():
        model, adam = load_checkpoint(ckpt)
        log.info("resuming from %s at step %d", ckpt, adam.t if adam else 0)
    hyper = None if model is not None else _hyper(cfg)
    tc = TrainConfig(epochs=cfg.epochs, seed=cfg.resolved_seed(), deterministic=cfg.deterministic,
                     dev_width=cfg.width)
    res = train(examples, hyper, tc, dev=dev, model=model, adam=adam)
    save_checkpoint(ckpt, res.model, res.adam)
    summary = {"steps": res.steps, "skipped": res.skipped, "epochLosses": res.epoch_losses,
               "devAcc1": [a for _, a in res.dev_acc], "checkpoint": str(ckpt)}
    print(json.dumps(summary, sort_keys=True))
    return 0


_WORKER: dict = {}


def _init_worker(ckpt: str, width: int, kmax: int, deterministic: bool) -> None:
    from .decoder.search import inference_model
    from .model.checkpoint import load_checkpoint

    model, _ = load_checkpoint(ckpt)
    _WORKER.update(model=inference_model(model), width=width, kmax=kmax, deterministic=deterministic)


def _decode_one(obj: dict) -> list:
    from .ast_core import to_obj
    from .dataset import Example
    from .decoder.search import beam_search
    from .decoder.state import Context
    from .model.training import deterministic_threads

    ex = Example.from_obj(obj)
    with deterministic_threads(_WORKER["deterministic"]):
        res = beam_search(_WORKER["model"], Context(_WORKER["model"], ex.context), width=_WORKER["width"],
                          k=_WORKER["kmax"])
    return [to_obj(c.tree) for c in res]


def cmd_eval(cfg: RunConfig, args) -> int:
    from .ast_core import from_obj
    from .dataset import read_examples
    from .metrics import EvalRecord, eval_report

    examples = read_examples(_need_file(cfg.path("examples")))
    ckpt = _need_file(cfg.path("checkpoint"))
    ks = sorted(set(cfg.k))
    width = max(cfg.width, max(ks))
    init = (str(ckpt), width, max(ks), cfg.deterministic)
    objs = [ex.to_obj() for ex in examples]
    jobs = 1 if cfg.deterministic else cfg.jobs
    if jobs > 1:
        # results come back in input order, so the report does not depend on scheduling
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=init) as pool:
            outs = list(pool.map(_decode_one, objs, chunksize=8))
    else:
        _init_worker(*init)
        outs = [_decode_one(o) for o in objs]
    records = [EvalRecord(ex.id, [from_obj(t) for t in cands], ex.target) for ex, cands in zip(examples, outs)]
    rep = eval_report(records, ks)
    flat = {f"{metric}@{k}": rep[metric][str(k)] for metric in ("acc", "tree", "oneSubtoken", "oneToken")
            for k in ks}
    flat["n"] = rep["n"]
    text = json.dumps(flat, sort_keys=True)
    print(text)
    report = cfg.path("report", required=False)
    if report is not None:
        report.write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_complete(cfg: RunConfig, args) -> int:
    from .ast_core import to_obj
    from .decoder.search import beam_search, inference_model
    from .decoder.state import Context
    from .minilang import parse
    from .model.checkpoint import load_checkpoint
    from .model.training import deterministic_threads

    text = _need_file(cfg.path("source")).read_text(encoding="utf-8")
    unit = parse(text, allow_hole=True)
    holes = [m for m in unit.methods if any(n.kind == "HOLE" for n in m.walk())]
    if len(holes) != 1 or sum(n.kind == "HOLE" for n in holes[0].walk()) != 1:
        raise ValueError("source must contain exactly one /*HOLE*/ marker")
    model, _ = load_checkpoint(_need_file(cfg.path("checkpoint")))
    model = inference_model(model)
    top = args.top or cfg.width
    if not 1 <= top <= cfg.width:
        raise UsageError("--top must be between 1 and --width")
    with deterministic_threads(cfg.deterministic):
        res = beam_search(model, Context(model, holes[0]), width=cfg.width, k=top)
    for rank, c in enumerate(res, 1):
        print(json.dumps({"rank": rank, "logprob": c.logprob, "code": c.code, "tree": to_obj(c.tree)},
                         sort_keys=True))
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .diagnostics import micro_gradcheck

    err = micro_gradcheck(seed=cfg.resolved_seed())
    ok = err < args.tol
    print(json.dumps({"maxRelError": err, "tol": args.tol, "ok": ok}, sort_keys=True))
    return 0 if ok else 1


COMMANDS = {"gen-corpus": cmd_gen_corpus, "extract": cmd_extract, "train": cmd_train, "eval": cmd_eval,
            "complete": cmd_complete, "gradcheck": cmd_gradcheck}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
    except UsageError as e:
        print(f"slm: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"slm: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"slm: {args.command} failed: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
