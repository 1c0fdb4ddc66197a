"""Command-line entry point: ``translationese <command> [flags]``.

Every command that writes artifacts puts them under ``--out`` together with
``manifest.txt``: package and library versions, the digest of the effective
configuration and sha256 digests of every input and output file. Nothing
time-dependent is recorded, so a rerun with the same inputs and seed
reproduces the manifest byte for byte.

Any flag may also come from ``--config FILE`` (JSON or YAML, keys spelled
like the flags with dashes or underscores); flags given on the command
line win.

Exit status: 0 on success, 1 on an operational failure (one ``error:`` line
on stderr), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__

MANIFEST = "manifest.txt"
MANIFEST_FORMAT = "translationese-manifest 1"

log = logging.getLogger("translationese")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _corpus(path: str | None):
    from .corpus import load_corpus
    from .synthetic import mini_corpus_path

    p = Path(path) if path else mini_corpus_path()
    return load_corpus(p), p


def _vectors(path: str | None):
    from .harness import VectorSource
    from .synthetic import mini_vec_path

    return VectorSource.from_path(path or mini_vec_path())


def write_manifest(out: Path, command: str, args: dict, inputs: dict[str, Path]) -> Path:
    """Key-value manifest of versions, config digest and file digests."""
    import scipy

    config = {k: v for k, v in sorted(args.items()) if k not in ("out", "config", "verbose")}
    canonical = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    lines = [
        f"format: {MANIFEST_FORMAT}",
        f"command: {command}",
        f"package_version: {__version__}",
        f"python_version: {platform.python_version()}",
        f"numpy_version: {np.__version__}",
        f"scipy_version: {scipy.__version__}",
        f"config_sha256: {hashlib.sha256(canonical.encode('utf-8')).hexdigest()}",
        f"config: {canonical}",
    ]
    for name in sorted(inputs):
        lines.append(f"input.{name}: {_sha256_file(Path(inputs[name]))}")
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            lines.append(f"output.{p.relative_to(out).as_posix()}: {_sha256_file(p)}")
    path = out / MANIFEST
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition(": ")
        out[key] = value
    return out


def _parse_assignments(items: Sequence[str] | None) -> dict:
    """``key=value`` pairs; values are read as JSON when possible."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.replace("-", "_")] = json.loads(v)
        except json.JSONDecodeError:
            out[k.replace("-", "_")] = v
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> dict:
    paragraphs, path = _corpus(args.corpus)
    print(f"{len(paragraphs)} paragraphs OK")
    return {"corpus": path}


def cmd_assemble(args) -> dict:
    from .corpus import DatasetSpec, assemble_dataset, write_corpus

    paragraphs, path = _corpus(args.corpus)
    bundle = assemble_dataset(paragraphs, DatasetSpec.parse(args.dataset), args.seed)
    out = _out_dir(args)
    for name, split in bundle.splits().items():
        write_corpus(split, out / f"{name}.jsonl")
    print(f"train {len(bundle.train)} dev {len(bundle.dev)} test {len(bundle.test)}")
    return {"corpus": path}


def _train_split(args):
    from .corpus import DatasetSpec, assemble_dataset, load_corpus

    if args.train:
        return load_corpus(args.train), {"train": Path(args.train)}
    if not args.dataset:
        raise UsageError("give either --train or --dataset")
    paragraphs, path = _corpus(args.corpus)
    return assemble_dataset(paragraphs, DatasetSpec.parse(args.dataset), args.seed).train, {"corpus": path}


def cmd_fit_features(args) -> dict:
    from .features import fit_feature_context, save_context

    train, inputs = _train_split(args)
    ctx = fit_feature_context(train)
    save_context(ctx, _out_dir(args) / "context")
    print(f"feature context fitted on {len(train)} paragraphs")
    return inputs


def cmd_extract(args) -> dict:
    from .corpus import load_corpus
    from .features import extract_matrix, load_context, write_feature_csv

    ctx = load_context(args.context)
    paragraphs = load_corpus(args.input)
    X = extract_matrix(paragraphs, ctx, scale=not args.raw)
    out = _out_dir(args)
    write_feature_csv(X, out / "features.csv")
    print(f"{X.shape[0]} feature vectors of length {X.shape[1]}")
    inputs = {"input": Path(args.input)}
    for f in sorted(Path(args.context).iterdir()):
        inputs[f"context.{f.name}"] = f
    return inputs


def _hyper(args) -> dict:
    hyper = _parse_assignments(args.set)
    if args.epochs is not None:
        hyper["epochs"] = args.epochs
    if args.float64:
        hyper["float64"] = True
    if args.pretrained:
        hyper["pretrained"] = True
    return hyper


def cmd_train(args) -> dict:
    from .harness import Family, RunConfig, run_experiment

    family = Family(args.model)
    paragraphs, path = _corpus(args.corpus)
    inputs = {"corpus": path}
    vectors = None
    if family.needs_vectors or args.pretrained:
        vectors = _vectors(args.vectors)
        inputs["vectors"] = Path(vectors.path)
    out = _out_dir(args)
    seeds = tuple(args.seed + k for k in range(args.runs))
    config = RunConfig(
        family, args.dataset, seeds, _hyper(args), str(out), args.shuffle_labels, workers=args.workers
    )
    report = run_experiment(config, paragraphs, vectors)
    for model, tr, te, n, mean, std in report.aggregates():
        print(f"{model} {tr}: accuracy {mean:.4f} +/- {std:.4f} over {n} seed(s)")
    return inputs


def _test_paragraphs(args):
    from .corpus import DatasetSpec, assemble_dataset, load_corpus

    if args.input:
        return load_corpus(args.input), {"input": Path(args.input)}
    if not args.dataset:
        raise UsageError("give either --input or --dataset")
    paragraphs, path = _corpus(args.corpus)
    return list(assemble_dataset(paragraphs, DatasetSpec.parse(args.dataset), args.seed).test), {"corpus": path}


def _model_inputs(directory: Path) -> dict:
    return {f"model.{p.relative_to(directory).as_posix()}": p for p in sorted(directory.rglob("*")) if p.is_file()}


def cmd_evaluate(args) -> dict:
    from .corpus import labels_of
    from .harness import EvalReport, Pipeline, _score

    model_path = Path(args.model)
    pipe = Pipeline.load(model_path)
    data, inputs = _test_paragraphs(args)
    pred = pipe.predict(data)
    name = args.name or pipe.family.value
    test_name = args.dataset or Path(args.input).stem
    row = _score(name, args.train_set or "?", test_name, args.seed, pred, labels_of(data))
    print(f"accuracy {row.accuracy:.4f} on {row.n_test} paragraphs")
    EvalReport([row]).write(_out_dir(args))
    inputs.update(_model_inputs(model_path))
    return inputs


def cmd_cross_eval(args) -> dict:
    from .corpus import load_corpus
    from .harness import cross_evaluate, trained_models

    runs = Path(args.runs)
    models = trained_models(runs)
    if not models:
        raise ValueError(f"no trained models listed in {runs / 'runs.csv'}")
    tests: dict = {}
    inputs: dict = {"runs": runs / "runs.csv"}
    for item in args.test_set:
        name, _, value = item.partition("=")
        value = value or name
        if value.endswith(".jsonl"):
            tests[name] = load_corpus(value)
            inputs[f"test.{name}"] = Path(value)
        else:
            tests[name] = value
    paragraphs, path = _corpus(args.corpus)
    inputs["corpus"] = path
    report = cross_evaluate(models, tests, paragraphs)
    report.write(_out_dir(args))
    for model, tr, te, n, mean, std in report.aggregates():
        print(f"{model} train {tr} test {te}: {mean:.4f} +/- {std:.4f}")
    for m in models:
        for k, v in _model_inputs(m.directory).items():
            inputs[f"{m.name}.{m.seed}.{k}"] = v
    return inputs


def cmd_analyze(args) -> dict:
    from .analysis import run_analysis
    from .corpus import labels_of
    from .features import extract_matrix
    from .harness import Family, Pipeline

    base_path = Path(args.model)
    base = Pipeline.load(base_path)
    if base.family is not Family.HANDCRAFTED:
        raise ValueError(f"--model must be a handcrafted-svm pipeline, got {base.family.value}")
    data, inputs = _test_paragraphs(args)
    X = extract_matrix(data, base.context, scale=False)
    probabilities = {}
    for item in args.neural or ():
        name, _, directory = item.partition("=")
        if not directory:
            name, directory = Path(item).name, item
        pipe = Pipeline.load(directory)
        if not pipe.family.is_neural:
            raise ValueError(f"{directory} is not a neural pipeline")
        probabilities[name] = pipe.model.predict_proba([p.tokens for p in data])[:, 1]
        inputs.update({f"{name}.{k}": v for k, v in _model_inputs(Path(directory)).items()})
    summary = run_analysis(X, labels_of(data), probabilities, base.model.weights, _out_dir(args))
    for name, n in summary.significant.items():
        f1 = summary.f1_vs_gold.get(name)
        extra = f", F1 vs gold {f1:.3f}" if f1 is not None else ""
        print(f"{name}: {n} significant features{extra}")
    inputs.update(_model_inputs(base_path))
    return inputs


def cmd_report(args) -> dict:
    from .harness import EvalReport

    report = EvalReport()
    inputs = {}
    for i, d in enumerate(args.runs):
        report.extend(EvalReport.read(d).rows)
        inputs[f"runs{i}"] = Path(d) / "runs.csv"
    print(f"{'model':<24} {'train':<22} {'test':<22} {'n':>2}  accuracy")
    for model, tr, te, n, mean, std in report.aggregates():
        print(f"{model:<24} {tr:<22} {te:<22} {n:>2}  {100 * mean:.1f} ± {100 * std:.1f}")
    if args.out:
        report.write(_out_dir(args))
        return inputs
    return None


COMMANDS = {
    "validate": cmd_validate,
    "assemble": cmd_assemble,
    "fit-features": cmd_fit_features,
    "extract": cmd_extract,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "cross-eval": cmd_cross_eval,
    "analyze": cmd_analyze,
    "report": cmd_report,
}

# flags each command cannot run without (checked after merging the config file)
REQUIRED = {
    "validate": [],
    "assemble": ["seed", "dataset", "out"],
    "fit-features": ["seed", "out"],
    "extract": ["context", "input", "out"],
    "train": ["seed", "model", "dataset", "out"],
    "evaluate": ["seed", "model", "out"],
    "cross-eval": ["seed", "runs", "test_set", "out"],
    "analyze": ["seed", "model", "out"],
    "report": ["runs"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="translationese", description="Translationese classification toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p, seed=True, out=True):
        p.add_argument("--config", help="JSON or YAML file supplying default flag values")
        p.add_argument("--verbose", "-v", action="store_true")
        if seed:
            p.add_argument("--seed", type=int, help="controls every random choice (required)")
        if out:
            p.add_argument("--out", help="artifact directory")

    p = sub.add_parser("validate", help="check a corpus file")
    common(p, seed=False, out=False)
    p.add_argument("--corpus", help="JSONL corpus (default: bundled mini corpus)")

    p = sub.add_parser("assemble", help="build balanced train/dev/test splits")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--dataset", help="e.g. trg-src:de:en, trg-all:de:en,es, all-all:de,en,es")

    p = sub.add_parser("fit-features", help="fit language models, quartile tables and scaler")
    common(p)
    p.add_argument("--train", help="training split JSONL")
    p.add_argument("--corpus")
    p.add_argument("--dataset")

    p = sub.add_parser("extract", help="write 108-dimensional feature vectors")
    common(p, seed=False)
    p.add_argument("--context", help="directory written by fit-features (its context/ folder)")
    p.add_argument("--input", help="paragraphs JSONL")
    p.add_argument("--raw", action="store_true", help="skip max-abs scaling")

    p = sub.add_parser("train", help="train and test one model family over seeds")
    common(p)
    p.add_argument("--model", help="handcrafted-svm, embedding-svm, gaussian-svm, pos-trigram-svm, "
                   "char-trigram-svm, fasttext, lstm or transformer")
    p.add_argument("--dataset")
    p.add_argument("--corpus")
    p.add_argument("--vectors", help="word vectors in .vec text format (default: bundled)")
    p.add_argument("--runs", type=int, default=1, help="number of seeds, starting at --seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--float64", action="store_true", help="64-bit arithmetic for neural models")
    p.add_argument("--pretrained", action="store_true", help="initialize fastText from --vectors")
    p.add_argument("--shuffle-labels", action="store_true", help="null control: permute labels within every split")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra hyperparameter")

    p = sub.add_parser("evaluate", help="score a stored model on paragraphs")
    common(p)
    p.add_argument("--model", help="pipeline directory")
    p.add_argument("--input")
    p.add_argument("--corpus")
    p.add_argument("--dataset", help="score on this dataset's test split for --seed")
    p.add_argument("--name")
    p.add_argument("--train-set")

    p = sub.add_parser("cross-eval", help="score every stored model on several test sets")
    common(p)
    p.add_argument("--runs", help="output directory of a train command")
    p.add_argument("--test-set", action="append", metavar="NAME=SPEC|FILE")
    p.add_argument("--corpus")

    p = sub.add_parser("analyze", help="feature importance and per-feature regressions")
    common(p)
    p.add_argument("--model", help="handcrafted-svm pipeline directory")
    p.add_argument("--neural", action="append", metavar="NAME=DIR")
    p.add_argument("--input")
    p.add_argument("--corpus")
    p.add_argument("--dataset")

    p = sub.add_parser("report", help="aggregate runs.csv files into a table")
    common(p, seed=False)
    p.add_argument("--runs", nargs="+")
    return parser


def _load_config(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    sp = _subparser(parser, args.command)
    if args.config:
        try:
            config = _load_config(args.config)
        except (OSError, ValueError, UsageError) as exc:
            sp.error(f"cannot read config: {exc}")
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            sp.error(f"unknown config keys: {', '.join(unknown)}")
        sp.set_defaults(**config)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k, None) in (None, [])]
    if missing:
        sp.error("missing required flags: " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return args


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        inputs = COMMANDS[args.command](args)
        if inputs is not None and getattr(args, "out", None):
            write_manifest(Path(args.out), args.command, vars(args), inputs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # every operational failure becomes one parsable line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
