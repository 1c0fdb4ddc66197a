"""Multi-seed experiments and cross-data evaluation.

A *pipeline* bundles everything a trained classifier needs to label new
paragraphs: its fitted preprocessing (feature context, trigram list, word
vectors, subword vocabulary) and the model itself. Pipelines are written to
disk with a digest of every file and are always reloaded from there for
cross-evaluation; nothing is refitted on test data.

Each seed drives both the dataset assembly (shuffle and split) and the
model's own randomness.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import DatasetBundle, DatasetSpec, Paragraph, assemble_dataset, labels_of
from .embeddings import EmbeddingTable, doc_mean, gaussian_doc, gaussian_kernel, load_vec, GaussianDoc
from .features import (
    TrigramKind,
    extract_matrix,
    fit_feature_context,
    fit_trigram_baseline,
    load_context,
    load_trigram_spec,
    save_context,
    save_trigram_spec,
    trigram_matrix,
)
from .neural import ModelKind, NeuralConfig, load_model, save_model, train_classifier
from .svm import (
    DEFAULT_C_GRID,
    KernelSvmModel,
    LinearSvmModel,
    accuracy as svm_accuracy,
    clip_to_psd,
    train_kernel_svm,
    tune_c,
    tune_linear_c,
)

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DEFAULT_ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
PIPELINE_FILE = "pipeline.json"
RUN_FIELDS = [
    "model", "train_set", "test_set", "seed", "accuracy",
    "n_test", "correct_original", "correct_translated", "status",
]
MATRIX_FIELDS = ["model", "train_set", "test_set", "n_seeds", "mean", "std"]


class Family(str, Enum):
    HANDCRAFTED = "handcrafted-svm"
    EMBEDDING = "embedding-svm"
    GAUSSIAN = "gaussian-svm"
    POS_TRIGRAM = "pos-trigram-svm"
    CHAR_TRIGRAM = "char-trigram-svm"
    FASTTEXT = "fasttext"
    LSTM = "lstm"
    TRANSFORMER = "transformer"

    @property
    def is_neural(self) -> bool:
        return self in (Family.FASTTEXT, Family.LSTM, Family.TRANSFORMER)

    @property
    def needs_vectors(self) -> bool:
        return self in (Family.EMBEDDING, Family.GAUSSIAN)


class PipelineMismatch(ValueError):
    """A stored pipeline cannot be applied to the given data or has been altered."""


# ---------------------------------------------------------------- pipelines


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_tree(directory: Path) -> dict[str, str]:
    return {
        str(p.relative_to(directory)): _sha256(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != PIPELINE_FILE
    }


@dataclass
class Pipeline:
    family: Family
    languages: frozenset
    model: object
    context: object = None
    vectors: EmbeddingTable | None = None
    vectors_path: str | None = None
    vectors_digest: str | None = None
    alpha: float | None = None
    support_docs: list | None = None
    meta: dict = field(default_factory=dict)

    def check(self, paragraphs: Sequence[Paragraph]) -> None:
        foreign = sorted({p.language for p in paragraphs} - set(self.languages))
        if foreign:
            raise PipelineMismatch(
                f"{self.family.value} pipeline was fitted on {sorted(self.languages)} "
                f"and cannot label {foreign} paragraphs"
            )

    def features(self, paragraphs: Sequence[Paragraph]) -> np.ndarray:
        if self.family is Family.HANDCRAFTED:
            return extract_matrix(paragraphs, self.context)
        if self.family in (Family.POS_TRIGRAM, Family.CHAR_TRIGRAM):
            return trigram_matrix(paragraphs, self.context)
        if self.family is Family.EMBEDDING:
            return np.stack([doc_mean(p.tokens, self.vectors) for p in paragraphs])
        raise TypeError(f"{self.family.value} has no feature matrix")

    def predict(self, paragraphs: Sequence[Paragraph]) -> np.ndarray:
        """0 = original, 1 = translated."""
        self.check(paragraphs)
        if self.family.is_neural:
            return self.model.predict([p.tokens for p in paragraphs])
        if self.family is Family.GAUSSIAN:
            docs = [gaussian_doc(p.tokens, self.vectors) for p in paragraphs]
            k = gaussian_kernel(docs, self.support_docs, self.alpha)
            pm = self.model.predict(k)
        else:
            pm = self.model.predict(self.features(paragraphs))
        return (pm > 0).astype(np.int64)

    # persistence
    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        info = {
            "family": self.family.value,
            "languages": sorted(self.languages),
            "meta": self.meta,
        }
        if self.family.is_neural:
            save_model(self.model, d / "model")
        else:
            self.model.save(d / "svm.txt")
        if self.family is Family.HANDCRAFTED:
            save_context(self.context, d / "context")
        elif self.family in (Family.POS_TRIGRAM, Family.CHAR_TRIGRAM):
            save_trigram_spec(self.context, d / "trigrams.json")
        if self.family.needs_vectors:
            info["vectors_path"] = self.vectors_path
            info["vectors_digest"] = self.vectors_digest
            info["oov_seed"] = self.vectors.oov_seed
        if self.family is Family.GAUSSIAN:
            info["alpha"] = self.alpha
            ad.save_params(
                {
                    "support.mean": np.stack([g.mean for g in self.support_docs]),
                    "support.var": np.stack([g.var for g in self.support_docs]),
                },
                d / "support.bin",
            )
        info["files"] = _digest_tree(d)
        (d / PIPELINE_FILE).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path, vectors: EmbeddingTable | None = None) -> "Pipeline":
        d = Path(directory)
        if not (d / PIPELINE_FILE).exists():
            raise PipelineMismatch(f"{d} holds no saved pipeline")
        info = json.loads((d / PIPELINE_FILE).read_text(encoding="utf-8"))
        actual = _digest_tree(d)
        if actual != info["files"]:
            changed = sorted(set(actual.items()) ^ set(info["files"].items()))
            raise PipelineMismatch(f"{d}: stored artifacts changed since training: {[c[0] for c in changed]}")
        family = Family(info["family"])
        pipe = cls(family, frozenset(info["languages"]), None, meta=info.get("meta", {}))
        if family.is_neural:
            pipe.model = load_model(d / "model")
        elif family is Family.GAUSSIAN:
            pipe.model = KernelSvmModel.load(d / "svm.txt")
        else:
            pipe.model = LinearSvmModel.load(d / "svm.txt")
        if family is Family.HANDCRAFTED:
            pipe.context = load_context(d / "context")
        elif family in (Family.POS_TRIGRAM, Family.CHAR_TRIGRAM):
            pipe.context = load_trigram_spec(d / "trigrams.json")
        if family.needs_vectors:
            pipe.vectors_path = info["vectors_path"]
            pipe.vectors_digest = info["vectors_digest"]
            if vectors is None:
                path = Path(pipe.vectors_path)
                if not path.exists():
                    raise PipelineMismatch(f"word vectors {path} used in training are missing")
                if _sha256(path) != pipe.vectors_digest:
                    raise PipelineMismatch(f"word vectors {path} differ from the ones used in training")
                vectors = load_vec(path, oov_seed=info["oov_seed"])
            pipe.vectors = vectors
        if family is Family.GAUSSIAN:
            pipe.alpha = info["alpha"]
            arrays = ad.load_params(d / "support.bin")
            pipe.support_docs = [GaussianDoc(m, v) for m, v in zip(arrays["support.mean"], arrays["support.var"])]
        return pipe


@dataclass
class VectorSource:
    """Word vectors plus the file they came from, so pipelines can verify them later."""

    table: EmbeddingTable
    path: str
    digest: str

    @classmethod
    def from_path(cls, path: str | Path, oov_seed: int = 0) -> "VectorSource":
        path = Path(path).resolve()
        return cls(load_vec(path, oov_seed=oov_seed), str(path), _sha256(path))


def _gaussian_fit(train, dev, y_train, y_dev, vectors: EmbeddingTable, c_grid, alpha_grid):
    tr = [gaussian_doc(p.tokens, vectors) for p in train]
    dv = [gaussian_doc(p.tokens, vectors) for p in dev]
    best = None
    for alpha in sorted(alpha_grid):
        k_train = clip_to_psd(gaussian_kernel(tr, tr, alpha))
        k_dev = gaussian_kernel(dv, tr, alpha)
        c, model, scores = tune_c(
            lambda c: train_kernel_svm(k_train, y_train, c, psd_clip=False),
            lambda m: svm_accuracy(m.predict(k_dev[:, m.support_indices]), y_dev),
            c_grid,
        )
        if best is None or scores[c] > best[0]:
            best = (scores[c], alpha, c, model)
    _, alpha, c, model = best
    support = [tr[i] for i in model.support_indices]
    compact = KernelSvmModel(np.arange(len(support)), model.dual_coefs, model.bias, model.c)
    return compact, alpha, support, c


def fit_pipeline(
    family: Family | str,
    train: Sequence[Paragraph],
    dev: Sequence[Paragraph],
    seed: int,
    hyper: Mapping | None = None,
    vectors: VectorSource | None = None,
    train_labels=None,
    dev_labels=None,
    context_cache: dict | None = None,
) -> Pipeline:
    """Fit preprocessing on ``train``, tune on ``dev`` and return the pipeline."""
    family = Family(family)
    hyper = dict(hyper or {})
    y_train = labels_of(train) if train_labels is None else np.asarray(train_labels)
    y_dev = labels_of(dev) if dev_labels is None else np.asarray(dev_labels)
    languages = frozenset(p.language for p in train)
    c_grid = tuple(hyper.get("c_grid", DEFAULT_C_GRID))
    if family.needs_vectors and vectors is None:
        raise ValueError(f"{family.value} needs word vectors")

    if family.is_neural:
        kind = {Family.FASTTEXT: ModelKind.FASTTEXT, Family.LSTM: ModelKind.LSTM, Family.TRANSFORMER: ModelKind.TRANSFORMER}[family]
        known = set(NeuralConfig.__dataclass_fields__)
        cfg = NeuralConfig.for_kind(kind, seed=seed, **{k: v for k, v in hyper.items() if k in known and k != "seed"})
        bundle = DatasetBundle(tuple(train), tuple(dev), (), None, seed)
        pretrained = vectors.table if (vectors is not None and hyper.get("pretrained")) else None
        model, history = train_classifier(kind, bundle, cfg, pretrained, y_train, y_dev)
        meta = {"config": asdict(cfg), "best_epoch": history.best_epoch, "best_dev_accuracy": history.best_dev_accuracy}
        pipe = Pipeline(family, languages, model, meta=meta)
        pipe.meta["log"] = [list(r) for r in history.rows]
        return pipe

    if family is Family.GAUSSIAN:
        alpha_grid = tuple(hyper.get("alpha_grid", DEFAULT_ALPHA_GRID))
        model, alpha, support, c = _gaussian_fit(train, dev, y_train, y_dev, vectors.table, c_grid, alpha_grid)
        return Pipeline(
            family, languages, model, vectors=vectors.table, vectors_path=vectors.path,
            vectors_digest=vectors.digest, alpha=alpha, support_docs=support, meta={"c": c, "alpha": alpha},
        )

    pipe = Pipeline(family, languages, None)
    if family is Family.HANDCRAFTED:
        key = tuple(p.id for p in train)
        ctx = context_cache.get(key) if context_cache is not None else None
        if ctx is None:
            ctx = fit_feature_context(train)
            if context_cache is not None:
                context_cache[key] = ctx
        pipe.context = ctx
    elif family in (Family.POS_TRIGRAM, Family.CHAR_TRIGRAM):
        kind = TrigramKind.POS if family is Family.POS_TRIGRAM else TrigramKind.CHAR
        pipe.context = fit_trigram_baseline(train, kind, int(hyper.get("trigram_size", 1000)))
    elif family is Family.EMBEDDING:
        pipe.vectors, pipe.vectors_path, pipe.vectors_digest = vectors.table, vectors.path, vectors.digest
    c, model, scores = tune_linear_c(pipe.features(train), y_train, pipe.features(dev), y_dev, c_grid)
    pipe.model = model
    pipe.meta = {"c": c, "dev_scores": {repr(k): v for k, v in scores.items()}}
    return pipe


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class RunRow:
    model: str
    train_set: str
    test_set: str
    seed: int
    accuracy: float
    n_test: int = 0
    correct_original: int = 0
    correct_translated: int = 0
    status: str = "ok"


def _score(model_name, train_set, test_set, seed, pred, y) -> RunRow:
    y = np.asarray(y)
    return RunRow(
        model_name, train_set, test_set, seed, float(np.mean(pred == y)), len(y),
        int(np.sum((pred == y) & (y == 0))), int(np.sum((pred == y) & (y == 1))),
    )


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def aggregates(self) -> list[tuple]:
        """``(model, train_set, test_set, n_seeds, mean, std)`` with the sample std (0 for one seed)."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            if r.status == "ok":
                groups.setdefault((r.model, r.train_set, r.test_set), []).append(r.accuracy)
        out = []
        for key in sorted(groups):
            accs = np.array(groups[key])
            std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            out.append(key + (len(accs), float(np.mean(accs)), std))
        return out

    def accuracy(self, model: str, train_set: str, test_set: str, seed: int) -> float:
        for r in self.rows:
            if (r.model, r.train_set, r.test_set, r.seed) == (model, train_set, test_set, seed):
                return r.accuracy
        raise KeyError((model, train_set, test_set, seed))

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "runs.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUN_FIELDS)
            for r in self.rows:
                acc = "" if r.status != "ok" else repr(r.accuracy)
                w.writerow([r.model, r.train_set, r.test_set, r.seed, acc, r.n_test,
                            r.correct_original, r.correct_translated, r.status])
        with open(d / "matrix.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MATRIX_FIELDS)
            for model, tr, te, n, mean, std in self.aggregates():
                w.writerow([model, tr, te, n, repr(mean), repr(std)])

    @classmethod
    def read(cls, directory: str | Path) -> "EvalReport":
        rows = []
        with open(Path(directory) / "runs.csv", newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.append(RunRow(
                    rec["model"], rec["train_set"], rec["test_set"], int(rec["seed"]),
                    float(rec["accuracy"]) if rec["accuracy"] else math.nan,
                    int(rec["n_test"]), int(rec["correct_original"]),
                    int(rec["correct_translated"]), rec["status"],
                ))
        return cls(rows)


# ---------------------------------------------------------------- experiments


@dataclass
class RunConfig:
    family: Family
    dataset: DatasetSpec
    seeds: tuple = DEFAULT_SEEDS
    hyper: dict = field(default_factory=dict)
    out_dir: str | None = None
    shuffle_labels: bool = False
    name: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.family = Family(self.family)
        if isinstance(self.dataset, str):
            self.dataset = DatasetSpec.parse(self.dataset)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def model_name(self) -> str:
        if self.name:
            return self.name
        return self.family.value + ("+shuffled" if self.shuffle_labels else "")

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "dataset": str(self.dataset),
            "seeds": list(self.seeds),
            "hyper": self.hyper,
            "out_dir": self.out_dir,
            "shuffle_labels": self.shuffle_labels,
            "name": self.name,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        return cls(**dict(d))


def model_dir(out_dir: str | Path, model_name: str, train_set: str, seed: int) -> Path:
    safe = train_set.replace(":", "_").replace(",", "+")
    return Path(out_dir) / "models" / model_name / safe / f"seed-{seed}"


def shuffled_labels(bundle: DatasetBundle, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train, dev and test labels, each permuted within its split under ``seed``.

    Shuffling the test labels too makes this a null task: no classifier can
    beat chance on it. Shuffling only the training side is not enough here,
    because a hyperplane fitted to noise still tends to cut between the two
    real clusters, and its test accuracy then swings well away from 0.5.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    return tuple(rng.permutation(labels_of(part)) for part in (bundle.train, bundle.dev, bundle.test))


def _run_seed(config: RunConfig, paragraphs, vectors, seed: int, context_cache=None) -> RunRow:
    train_set = str(config.dataset)
    bundle = assemble_dataset(paragraphs, config.dataset, seed)
    y_train = y_dev = None
    y_test = labels_of(bundle.test)
    if config.shuffle_labels:
        y_train, y_dev, y_test = shuffled_labels(bundle, seed)
    pipe = fit_pipeline(
        config.family, bundle.train, bundle.dev, seed, config.hyper, vectors,
        y_train, y_dev, context_cache,
    )
    if config.out_dir:
        directory = model_dir(config.out_dir, config.model_name, train_set, seed)
        pipe.meta["test_ids"] = [p.id for p in bundle.test]
        pipe.save(directory)
        # score the stored artifact, the same one cross-evaluation will load
        pipe = Pipeline.load(directory, vectors.table if vectors is not None else None)
    pred = pipe.predict(bundle.test)
    return _score(config.model_name, train_set, train_set, seed, pred, y_test)


def run_experiment(
    config: RunConfig,
    paragraphs: Sequence[Paragraph],
    vectors: VectorSource | None = None,
    context_cache: dict | None = None,
) -> EvalReport:
    """Train and test one family on one dataset for every seed.

    When ``config.out_dir`` is set, pipelines go under ``models/`` and the
    rows are merged into ``runs.csv`` and ``matrix.csv`` there, so several
    experiments can share one directory. A failing seed is
    recorded with a failure status, the partial report is written and the
    error is re-raised.
    """
    report = EvalReport()
    train_set = str(config.dataset)
    try:
        if config.workers > 1 and len(config.seeds) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(_run_seed, config, paragraphs, vectors, s) for s in config.seeds]
                for seed, fut in zip(config.seeds, futures):
                    try:
                        report.rows.append(fut.result())
                    except Exception as exc:
                        report.rows.append(RunRow(config.model_name, train_set, train_set, seed, math.nan, status=f"failed: {exc}"))
                        raise
        else:
            for seed in config.seeds:
                try:
                    report.rows.append(_run_seed(config, paragraphs, vectors, seed, context_cache))
                except Exception as exc:
                    report.rows.append(RunRow(config.model_name, train_set, train_set, seed, math.nan, status=f"failed: {exc}"))
                    raise
                log.info("%s seed %d: %.4f", config.model_name, seed, report.rows[-1].accuracy)
    finally:
        if config.out_dir:
            merge_into(config.out_dir, report.rows)
            path = config_path(config.out_dir, config.model_name, train_set)
            path.parent.mkdir(parents=True, exist_ok=True)
            # the directory itself is left out so reruns elsewhere compare equal
            stored = {k: v for k, v in config.to_dict().items() if k != "out_dir"}
            path.write_text(json.dumps(stored, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return report


def config_path(out_dir: str | Path, model_name: str, train_set: str) -> Path:
    return model_dir(out_dir, model_name, train_set, 0).parent / "config.json"


def merge_into(out_dir: str | Path, rows: Sequence[RunRow]) -> EvalReport:
    """Add ``rows`` to the report stored in ``out_dir``.

    Earlier rows are kept unless a new row has the same model, train set,
    test set and seed, in which case the new row replaces it.
    """
    out = Path(out_dir)
    old = EvalReport.read(out).rows if (out / "runs.csv").exists() else []
    key = lambda r: (r.model, r.train_set, r.test_set, r.seed)  # noqa: E731
    fresh = {key(r) for r in rows}
    merged = EvalReport([r for r in old if key(r) not in fresh] + list(rows))
    merged.write(out)
    return merged


@dataclass(frozen=True)
class TrainedModel:
    name: str
    train_set: str
    seed: int
    directory: Path


def trained_models(out_dir: str | Path) -> list[TrainedModel]:
    """Every successfully trained pipeline listed in ``out_dir/runs.csv``."""
    report = EvalReport.read(out_dir)
    seen = []
    for r in report.rows:
        if r.status == "ok" and r.train_set == r.test_set:
            seen.append(TrainedModel(r.model, r.train_set, r.seed, model_dir(out_dir, r.model, r.train_set, r.seed)))
    return seen


def cross_evaluate(
    models: Sequence[TrainedModel],
    test_sets: Mapping[str, DatasetSpec | str | Sequence[Paragraph]],
    paragraphs: Sequence[Paragraph] | None = None,
    vectors: EmbeddingTable | None = None,
) -> EvalReport:
    """Score every stored model on every test set.

    A test set given as a dataset spec is assembled with the model's own
    seed, so a model meets exactly its original test split on the diagonal.
    A label-shuffled model is scored there against the same shuffled labels.
    A test set given as a list of paragraphs is used as is.
    """
    report = EvalReport()
    for m in models:
        pipe = Pipeline.load(m.directory, vectors)
        for name, test in test_sets.items():
            if isinstance(test, (DatasetSpec, str)):
                if paragraphs is None:
                    raise ValueError(f"test set {name} is a dataset spec but no corpus was given")
                spec = DatasetSpec.parse(test) if isinstance(test, str) else test
                bundle = assemble_dataset(paragraphs, spec, m.seed)
                data = list(bundle.test)
                gold = labels_of(data)
                if m.name.endswith("+shuffled") and str(spec) == m.train_set:
                    gold = shuffled_labels(bundle, m.seed)[2]
            else:
                data = list(test)
                gold = labels_of(data)
            pred = pipe.predict(data)
            report.rows.append(_score(m.name, m.train_set, name, m.seed, pred, gold))
    return report

