"""Command-line interface: ``dplstm {train,parse,eval,gradcheck,sweep}``."""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime as _dt
import itertools
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .gradcheck import BLOCK_ALIASES, check_model, random_instance
from .metrics import DEFAULT_BUCKETS, AlignmentError, evaluate, parse_buckets
from .modelio import atomic_write, load_model, model_to_bytes
from .training import TrainingConfig, evaluate_model, parse_sentences, train
from .treebank import format_conll, read_conll, truncate_tokens

logger = logging.getLogger("dplstm")


class CLIError(Exception):
    pass


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"dropout probability must lie in [0, 1), got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# manifests


def manifest_path(model_path) -> Path:
    return Path(str(model_path) + ".manifest")


def history_path(model_path) -> Path:
    return Path(str(model_path) + ".history.tsv")


def read_manifest(path) -> dict[str, str]:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            values[key] = value
    return values


def format_manifest(values: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in values.items())


# --------------------------------------------------------------------------
# shared flags


def _add_training_flags(p: argparse.ArgumentParser, defaults: TrainingConfig) -> None:
    p.add_argument("--arch", choices=("ff-tanh", "ff-cubic", "lstm"), default=None,
                   help=f"classifier (default {defaults.arch})")
    p.add_argument("--hidden", type=_positive_int, help=f"hidden units (default {defaults.hidden})")
    p.add_argument("--embed-dim", type=_positive_int,
                   help=f"embedding size (default {defaults.embed_dim})")
    p.add_argument("--dropout-eh", type=_probability, help="dropout on the embedding input")
    p.add_argument("--dropout-ho", type=_probability, help="dropout on the hidden output")
    p.add_argument("--l2", type=_nonnegative_float, help="L2 weight lambda")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=_positive_int,
                   help=f"default {defaults.max_epochs}")
    p.add_argument("--patience", type=_positive_int, help=f"default {defaults.patience}")
    p.add_argument("--min-word-freq", type=_positive_int)
    p.add_argument("--update-unit", choices=("sentence", "step"))
    p.add_argument("--peephole", choices=("diagonal", "full"))
    p.add_argument("--pretrained", help="text file of pre-trained word vectors")
    p.add_argument("--pos-column", type=int, choices=(4, 5), default=None,
                   help="CoNLL column holding POS tags (default 5)")


_FLAG_FIELDS = ("arch", "hidden", "embed_dim", "dropout_eh", "dropout_ho", "l2", "seed",
                "max_epochs", "patience", "min_word_freq", "update_unit", "peephole", "pretrained")


def _config_from_args(args, base: Optional[dict] = None) -> TrainingConfig:
    values = dict(base or {})
    for name in _FLAG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    config = TrainingConfig.from_dict(values)
    config.validate()
    return config


def _read_treebank(path, pos_column: int, require_heads: bool = True):
    try:
        return read_conll(path, pos_column=pos_column, require_heads=require_heads)
    except FileNotFoundError:
        raise CLIError(f"no such file: {path}") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise CLIError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    base: dict = {}
    train_file, dev_file, model_out = args.train, args.dev, args.model_out
    pos_column = args.pos_column
    if args.from_manifest:
        m = read_manifest(args.from_manifest)
        base = m
        train_file = train_file or m.get("train")
        dev_file = dev_file or m.get("dev")
        model_out = model_out or m.get("model")
        pos_column = pos_column or int(m.get("pos_column", 5))
    pos_column = pos_column or 5
    if not (train_file and dev_file and model_out):
        raise CLIError("--train, --dev and --model-out are required (or --from-manifest)")
    try:
        config = _config_from_args(args, base)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    train_set = _read_treebank(train_file, pos_column)
    dev_set = _read_treebank(dev_file, pos_column)
    if not train_set:
        raise CLIError(f"{train_file}: no sentences")
    if not dev_set:
        raise CLIError(f"{dev_file}: no sentences")
    model_out = Path(model_out)
    if not model_out.parent.is_dir():
        raise CLIError(f"output directory {model_out.parent} does not exist")

    started = _now()

    def report(rec):
        print(rec.tsv(), file=sys.stderr, flush=True)

    result = train(train_set, dev_set, config, on_epoch=None if args.quiet else report)
    print(f"skipped non-projective training sentences: {result.skipped_nonprojective}")
    print(f"best epoch {result.best_epoch}: dev UAS {100 * result.best_dev_uas:.1f}")

    manifest = {"tool": "dplstm", "version": __version__, "model": str(model_out.resolve()),
                "train": str(Path(train_file).resolve()), "dev": str(Path(dev_file).resolve()),
                "pos_column": pos_column}
    manifest.update({k: (repr(v) if isinstance(v, float) else v)
                     for k, v in config.as_dict().items()})
    manifest.update({
        "actions": result.model.n_actions,
        "labels": result.model.vocab.n_labels,
        "vocab_sha256": result.model.vocab.digest(),
        "skipped_nonprojective": result.skipped_nonprojective,
        "best_epoch": result.best_epoch,
        "best_dev_uas": repr(result.best_dev_uas),
        "epochs_run": len(result.history),
        "started": started,
        "finished": _now(),
    })
    written = []
    try:
        for path, data in ((history_path(model_out), result.history_tsv().encode("utf-8")),
                           (model_out, model_to_bytes(result.model)),
                           (manifest_path(model_out), format_manifest(manifest).encode("utf-8"))):
            atomic_write(path, data)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return 0


# --------------------------------------------------------------------------
# parse


def cmd_parse(args) -> int:
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise CLIError(f"no such model file: {args.model}") from None
    except ValueError as exc:
        raise CLIError(f"{args.model}: {exc}") from None
    mpath = manifest_path(args.model)
    pos_column = args.pos_column
    if mpath.exists():
        manifest = read_manifest(mpath)
        if manifest.get("vocab_sha256") != model.vocab.digest():
            raise CLIError(f"{args.model}: vocabulary hash differs from {mpath}")
        pos_column = pos_column or int(manifest.get("pos_column", 5))
    pos_column = pos_column or 5
    sentences = _read_treebank(args.input, pos_column, require_heads=False)
    text = format_conll(parse_sentences(model, sentences), pos_column=pos_column)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write(args.output, text.encode("utf-8"))
    return 0


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    gold = _read_treebank(args.gold, args.pos_column)
    pred = _read_treebank(args.pred, args.pos_column)
    for k, (g, p) in enumerate(zip(gold, pred), 1):
        if len(g) != len(p):
            raise CLIError(f"sentence {k} differs: {len(g)} gold tokens vs {len(p)} predicted")
    if len(gold) != len(pred):
        raise CLIError(f"sentence {min(len(gold), len(pred)) + 1} differs: "
                       f"{len(gold)} gold vs {len(pred)} predicted sentences")
    try:
        buckets = parse_buckets(args.buckets) if args.buckets else DEFAULT_BUCKETS
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    exclude = [t for t in (args.exclude_pos or "").split(",") if t]
    try:
        report = evaluate(pred, gold, buckets, exclude)
    except AlignmentError as exc:
        raise CLIError(str(exc)) from None
    if args.format in ("table", "both"):
        sys.stdout.write(report.table())
    if args.format == "both":
        sys.stdout.write("\n")
    if args.format in ("kv", "both"):
        sys.stdout.write(report.key_values())
    return 0


# --------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    archs = ("ff-tanh", "ff-cubic", "lstm") if args.arch == "all" else (args.arch,)
    ok = True
    for arch in archs:
        model, feats, acts, masks = random_instance(
            arch, args.embed_dim, args.hidden, args.actions, args.length, args.seed, args.dropout,
            peephole=args.peephole)
        try:
            report = check_model(model, feats, acts, masks, l2=args.l2, step=args.step,
                                 tolerance=args.tolerance, corrupt=args.corrupt)
        except KeyError as exc:
            raise CLIError(str(exc.args[0])) from None
        for name, err in report.max_rel_error.items():
            status = "PASS" if err < args.tolerance else "FAIL"
            print(f"{arch}\t{name}\t{err:.3e}\t{status}")
        if not report.passed:
            ok = False
            print(f"{arch}: FAILED blocks: {', '.join(report.failures())}")
        else:
            print(f"{arch}: all blocks below {args.tolerance:g}")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# sweep

SWEEP_KEYS = {"l2": ("l2",), "dropout-eh": ("dropout_eh",), "dropout-ho": ("dropout_ho",),
              "dropout-both": ("dropout_eh", "dropout_ho"), "hidden": ("hidden",),
              "seed": ("seed",)}

L2_VALUES = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
DROPOUT_VALUES = (0.2, 0.4, 0.6)
HIDDEN_VALUES = (20, 40, 60, 80, 100, 150, 200)


def preset_settings(name: str) -> list[dict[str, str]]:
    """Named experiment grids: regularisation table and hidden-size curve."""
    if name == "regularisation":
        rows = [{"l2": repr(v)} for v in L2_VALUES]
        for key in ("dropout-eh", "dropout-ho", "dropout-both"):
            rows += [{key: repr(p)} for p in DROPOUT_VALUES]
        return rows
    if name == "hidden-size":
        rows = []
        for h in HIDDEN_VALUES:
            rows.append({"hidden": str(h)})
            rows.append({"hidden": str(h), "dropout-both": "0.5"})
        return rows
    raise CLIError(f"unknown preset {name!r}")


def grid_settings(axes_text: Sequence[str]) -> list[dict[str, str]]:
    axes = []
    for axis in axes_text:
        key, _, values = axis.partition("=")
        key = key.strip()
        if key not in SWEEP_KEYS:
            raise CLIError(f"unknown grid key {key!r}; expected one of {sorted(SWEEP_KEYS)}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise CLIError(f"grid key {key!r} has no values")
        axes.append([(key, v) for v in vals])
    if not axes:
        raise CLIError("empty grid: give --grid KEY=V1,V2 or --preset")
    return [dict(combo) for combo in itertools.product(*axes)]


def setting_label(setting: dict[str, str]) -> str:
    return " ".join(f"{k}={v}" for k, v in setting.items()) or "baseline"


def _run_setting(base: dict, setting: dict, train_set, dev_set, test_set):
    values = dict(base)
    for key, v in setting.items():
        for name in SWEEP_KEYS[key]:
            values[name] = v
    config = TrainingConfig.from_dict(values)
    result = train(train_set, dev_set, config)
    test_uas = evaluate_model(result.model, test_set)[0] if test_set else None
    return result.best_dev_uas, test_uas, result.best_epoch


def cmd_sweep(args) -> int:
    if args.preset and args.grid:
        raise CLIError("use either --grid or --preset, not both")
    settings = preset_settings(args.preset) if args.preset else grid_settings(args.grid or [])
    try:
        base_config = _config_from_args(args)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    base = base_config.as_dict()
    pos_column = args.pos_column or 5
    train_set = _read_treebank(args.train, pos_column)
    dev_set = _read_treebank(args.dev, pos_column)
    test_set = _read_treebank(args.test, pos_column) if args.test else None
    if args.train_prefix_tokens is not None:
        total = sum(len(s) for s in train_set)
        if args.train_prefix_tokens >= total:
            logger.warning("--train-prefix-tokens %d exceeds the %d training tokens; "
                           "using the whole training set", args.train_prefix_tokens, total)
        else:
            train_set = truncate_tokens(train_set, args.train_prefix_tokens)

    rows = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) if args.jobs > 1 else \
            _Inline() as pool:
        futures = [pool.submit(_run_setting, base, s, train_set, dev_set, test_set)
                   for s in settings]
        for setting, fut in zip(settings, futures):
            try:
                dev_uas, test_uas, epoch = fut.result()
                rows.append((setting_label(setting), dev_uas, test_uas, epoch, "ok"))
            except Exception as exc:  # one failed grid point must not stop the sweep
                logger.error("setting %s failed: %s", setting_label(setting), exc)
                rows.append((setting_label(setting), None, None, None, f"failed: {exc}"))
            if args.verbose:
                print(rows[-1], file=sys.stderr, flush=True)

    def pct(v):
        return "-" if v is None else f"{100 * v:.1f}"

    width = max(len("setting"), *(len(r[0]) for r in rows))
    lines = [f"{'setting':<{width}}  {'dev UAS':>8}  {'test UAS':>8}  {'epoch':>5}"]
    for label, dev_uas, test_uas, epoch, status in rows:
        line = f"{label:<{width}}  {pct(dev_uas):>8}  {pct(test_uas):>8}  {'-' if epoch is None else epoch:>5}"
        if status != "ok":
            line += f"  {status}"
        lines.append(line)
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        tsv = ["setting\tdev_uas\ttest_uas\tbest_epoch\tstatus"]
        tsv += ["\t".join("" if v is None else (repr(v) if isinstance(v, float) else str(v))
                          for v in row) for row in rows]
        atomic_write(args.out, ("\n".join(tsv) + "\n").encode("utf-8"))
    return 0 if all(r[4] == "ok" for r in rows) else 1


class _Inline:
    """Sequential stand-in for an executor."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def submit(self, fn, *args):
        fut: concurrent.futures.Future = concurrent.futures.Future()
        try:
            fut.set_result(fn(*args))
        except Exception as exc:
            fut.set_exception(exc)
        return fut


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainingConfig()
    parser = argparse.ArgumentParser(prog="dplstm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dplstm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a parser")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--model-out")
    p.add_argument("--from-manifest", help="replay the configuration recorded in a manifest")
    p.add_argument("--quiet", action="store_true", help="do not print per-epoch history")
    _add_training_flags(p, defaults)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse a CoNLL file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="output path (default: standard output)")
    p.add_argument("--pos-column", type=int, choices=(4, 5))
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score predicted against gold trees")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--buckets", help='dependency-length buckets, e.g. "1,2,3-6,7-49"')
    p.add_argument("--exclude-pos", help="comma-separated POS tags not scored (e.g. punctuation)")
    p.add_argument("--pos-column", type=int, choices=(4, 5), default=5)
    p.add_argument("--format", choices=("table", "kv", "both"), default="both")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradients")
    p.add_argument("--arch", choices=("ff-tanh", "ff-cubic", "lstm", "all"), default="all")
    p.add_argument("--embed-dim", type=_positive_int, default=6)
    p.add_argument("--hidden", type=_positive_int, default=5)
    p.add_argument("--actions", type=_positive_int, default=4)
    p.add_argument("--length", type=_positive_int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=_probability, default=0.3,
                   help="rate of the frozen dropout masks")
    p.add_argument("--l2", type=_nonnegative_float, default=1e-3)
    p.add_argument("--step", type=float, default=3e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--peephole", choices=("diagonal", "full"), default="diagonal")
    p.add_argument("--corrupt", metavar="BLOCK",
                   help=f"double one block's analytic gradient (aliases: {', '.join(BLOCK_ALIASES)})")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train over a grid of regularisation/size settings")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2,...",
                   help=f"grid axis; keys: {', '.join(SWEEP_KEYS)}")
    p.add_argument("--preset", choices=("regularisation", "hidden-size"))
    p.add_argument("--train-prefix-tokens", type=_positive_int,
                   help="train on the leading sentences totalling at most N tokens")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", help="also write the table as TSV")
    p.add_argument("--verbose", action="store_true")
    _add_training_flags(p, defaults)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"dplstm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
