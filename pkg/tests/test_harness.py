import json
import math
import shutil
import statistics

import numpy as np
import pytest

from translationese import harness
from translationese.corpus import DatasetSpec, assemble_dataset, labels_of
from translationese.harness import (
    EvalReport,
    Family,
    Pipeline,
    PipelineMismatch,
    RunConfig,
    RunRow,
    VectorSource,
    config_path,
    cross_evaluate,
    fit_pipeline,
    model_dir,
    run_experiment,
    shuffled_labels,
    trained_models,
)
from translationese.synthetic import marker_corpus, mini_vec_path

FAST = {"epochs": 3, "float64": True, "dim": 16}


@pytest.fixture(scope="module")
def markers():
    return marker_corpus(150, "zork", seed=5)


@pytest.fixture(scope="module")
def tri_runs(tmp_path_factory, tri_corpus):
    out = tmp_path_factory.mktemp("tri")
    for ds in ("trg-src:de:en", "trg-src:de:es"):
        run_experiment(RunConfig("fasttext", ds, seeds=(1,), hyper=FAST, out_dir=str(out)), tri_corpus)
    return out


def test_aggregates_match_statistics_oracle():
    rng = np.random.default_rng(0)
    rows = []
    for model in ("a", "b"):
        for seed in range(1, 6):
            rows.append(RunRow(model, "trg-src:de:en", "trg-src:de:en", seed, float(rng.random())))
    rows.append(RunRow("c", "x", "x", 1, 0.75))
    rows.append(RunRow("c", "x", "x", 2, math.nan, status="failed: boom"))
    report = EvalReport(rows)
    aggs = {a[0]: a for a in report.aggregates()}
    for model in ("a", "b"):
        accs = [r.accuracy for r in rows if r.model == model]
        _, _, _, n, mean, std = aggs[model]
        assert n == 5
        assert abs(mean - statistics.mean(accs)) <= 1e-12
        assert abs(std - statistics.stdev(accs)) <= 1e-12
    assert aggs["c"][3:] == (1, 0.75, 0.0)


def test_constant_predictor_on_balanced_test(mini_bundle):
    y = labels_of(mini_bundle.test)
    for constant in (0, 1):
        row = harness._score("const", "t", "t", 1, np.full(len(y), constant), y)
        assert row.accuracy == 0.5
        assert row.correct_original + row.correct_translated == len(y) // 2


def test_report_files_round_trip(tmp_path):
    rows = [RunRow("m", "d", "d", s, 0.1 * s + 1 / 3, 10, 3, 4) for s in (1, 2)]
    rows.append(RunRow("m", "d", "d", 3, math.nan, status="failed: x"))
    EvalReport(rows).write(tmp_path)
    back = EvalReport.read(tmp_path)
    assert back.rows[:2] == rows[:2]
    assert back.rows[2].status == "failed: x" and math.isnan(back.rows[2].accuracy)
    header = (tmp_path / "matrix.csv").read_text().splitlines()[0]
    assert header == "model,train_set,test_set,n_seeds,mean,std"


def test_run_experiment_writes_everything(tmp_path, markers):
    config = RunConfig("fasttext", "trg-src:de:en", seeds=(1, 2, 3, 4, 5), hyper=FAST, out_dir=str(tmp_path))
    report = run_experiment(config, markers)
    assert [r.seed for r in report.rows] == [1, 2, 3, 4, 5]
    assert len(report.aggregates()) == 1
    # 44 test paragraphs: one miss costs more than two points
    assert all(r.accuracy >= 0.9 for r in report.rows)
    for name in ("runs.csv", "matrix.csv"):
        assert (tmp_path / name).exists()
    cfg_file = config_path(tmp_path, "fasttext", "trg-src:de:en")
    stored = json.loads(cfg_file.read_text())
    assert "out_dir" not in stored and stored["seeds"] == [1, 2, 3, 4, 5]
    for seed in range(1, 6):
        assert (model_dir(tmp_path, "fasttext", "trg-src:de:en", seed) / "pipeline.json").exists()
    assert len(trained_models(tmp_path)) == 5

    rerun = tmp_path / "again"
    run_experiment(RunConfig("fasttext", "trg-src:de:en", seeds=(1, 2, 3, 4, 5), hyper=FAST, out_dir=str(rerun)), markers)
    assert (rerun / "runs.csv").read_bytes() == (tmp_path / "runs.csv").read_bytes()
    assert config_path(rerun, "fasttext", "trg-src:de:en").read_bytes() == cfg_file.read_bytes()


def test_shared_directory_keeps_both_experiments(tri_runs):
    back = EvalReport.read(tri_runs)
    assert sorted(r.train_set for r in back.rows) == ["trg-src:de:en", "trg-src:de:es"]
    assert len(back.aggregates()) == 2


def test_rerun_replaces_its_own_rows(tmp_path):
    harness.merge_into(tmp_path, [RunRow("m", "d", "d", 1, 0.5), RunRow("m", "d", "d", 2, 0.6)])
    merged = harness.merge_into(tmp_path, [RunRow("m", "d", "d", 2, 0.9), RunRow("n", "d", "d", 1, 0.7)])
    assert [(r.model, r.seed, r.accuracy) for r in merged.rows] == [("m", 1, 0.5), ("m", 2, 0.9), ("n", 1, 0.7)]
    assert EvalReport.read(tmp_path).rows == merged.rows


def test_workers_match_sequential(markers):
    seq = run_experiment(RunConfig("fasttext", "trg-src:de:en", seeds=(1, 2), hyper=FAST), markers)
    par = run_experiment(RunConfig("fasttext", "trg-src:de:en", seeds=(1, 2), hyper=FAST, workers=2), markers)
    assert seq.rows == par.rows


def test_partial_failure_is_recorded(tmp_path, markers, monkeypatch):
    real = harness.fit_pipeline

    def flaky(family, train, dev, seed, *args, **kwargs):
        if seed == 2:
            raise RuntimeError("disk on fire")
        return real(family, train, dev, seed, *args, **kwargs)

    monkeypatch.setattr(harness, "fit_pipeline", flaky)
    config = RunConfig("fasttext", "trg-src:de:en", seeds=(1, 2, 3), hyper=FAST, out_dir=str(tmp_path))
    with pytest.raises(RuntimeError, match="disk on fire"):
        run_experiment(config, markers)
    back = EvalReport.read(tmp_path)
    assert [(r.seed, r.status) for r in back.rows] == [(1, "ok"), (2, "failed: disk on fire")]
    assert len(back.aggregates()) == 1


def test_shuffled_labels_keep_counts(mini_bundle):
    ytr, ydv, yte = shuffled_labels(mini_bundle, 3)
    assert sorted(ytr) == sorted(labels_of(mini_bundle.train))
    assert not np.array_equal(ytr, labels_of(mini_bundle.train))
    assert np.array_equal(ytr, shuffled_labels(mini_bundle, 3)[0])
    assert sorted(ydv) == sorted(labels_of(mini_bundle.dev))
    assert sorted(yte) == sorted(labels_of(mini_bundle.test))
    assert not np.array_equal(yte, labels_of(mini_bundle.test))


def test_model_name_and_dir():
    c = RunConfig("lstm", "trg-all:de:en,es", shuffle_labels=True)
    assert c.model_name == "lstm+shuffled"
    assert model_dir("out", c.model_name, str(c.dataset), 4).as_posix() == "out/models/lstm+shuffled/trg-all_de_en+es/seed-4"
    assert RunConfig.from_dict(c.to_dict()).to_dict() == c.to_dict()
    with pytest.raises(ValueError):
        RunConfig("lstm", "trg-src:de:en", seeds=())


def test_cross_eval_shape_and_diagonal(tri_runs, tri_corpus):
    models = trained_models(tri_runs)
    assert len(models) == 2
    tests = {
        "trg-src:de:en": "trg-src:de:en",
        "trg-src:de:es": "trg-src:de:es",
        "trg-all:de:en,es": "trg-all:de:en,es",
    }
    matrix = cross_evaluate(models, tests, tri_corpus)
    assert len(matrix.rows) == 6
    stored = EvalReport.read(tri_runs)
    for r in matrix.rows:
        if r.train_set == r.test_set:
            assert abs(r.accuracy - stored.accuracy(r.model, r.train_set, r.test_set, r.seed)) <= 1e-12


def test_shuffled_diagonal_matches_run(tmp_path, tri_corpus):
    config = RunConfig("fasttext", "trg-src:de:en", seeds=(2,), hyper=FAST, out_dir=str(tmp_path), shuffle_labels=True)
    run_experiment(config, tri_corpus)
    models = trained_models(tmp_path)
    assert [m.name for m in models] == ["fasttext+shuffled"]
    matrix = cross_evaluate(models, {"trg-src:de:en": "trg-src:de:en"}, tri_corpus)
    stored = EvalReport.read(tmp_path)
    row = matrix.rows[0]
    assert abs(row.accuracy - stored.accuracy(row.model, row.train_set, row.test_set, row.seed)) <= 1e-12


def test_foreign_language_is_rejected(tri_runs, tri_corpus):
    (m,) = [m for m in trained_models(tri_runs) if m.train_set == "trg-src:de:en"]
    english = assemble_dataset(tri_corpus, DatasetSpec.parse("trg-src:en:de"), 1).test
    with pytest.raises(PipelineMismatch, match="en"):
        cross_evaluate([m], {"en": english})


def test_altered_artifacts_are_rejected(tmp_path, tri_runs):
    (m,) = [m for m in trained_models(tri_runs) if m.train_set == "trg-src:de:en"]
    copy = tmp_path / "copy"
    shutil.copytree(m.directory, copy)
    Pipeline.load(copy)
    params = copy / "model" / "params.bin"
    blob = bytearray(params.read_bytes())
    blob[-1] ^= 1
    params.write_bytes(bytes(blob))
    with pytest.raises(PipelineMismatch, match="changed"):
        Pipeline.load(copy)


def test_changed_vectors_are_rejected(tmp_path, markers):
    vec = tmp_path / "v.vec"
    shutil.copy(mini_vec_path(), vec)
    bundle = assemble_dataset(markers, DatasetSpec.parse("trg-src:de:en"), 1)
    pipe = fit_pipeline("embedding-svm", bundle.train, bundle.dev, 1, vectors=VectorSource.from_path(vec))
    pipe.save(tmp_path / "p")
    np.testing.assert_array_equal(Pipeline.load(tmp_path / "p").predict(bundle.test), pipe.predict(bundle.test))
    with open(vec, "a", encoding="utf-8") as fh:
        fh.write("extra " + " ".join(["0.0"] * 50) + "\n")
    with pytest.raises(PipelineMismatch, match="differ"):
        Pipeline.load(tmp_path / "p")
    vec.unlink()
    with pytest.raises(PipelineMismatch, match="missing"):
        Pipeline.load(tmp_path / "p")


@pytest.mark.parametrize("family", ["handcrafted-svm", "pos-trigram-svm", "char-trigram-svm", "gaussian-svm"])
def test_svm_pipelines_round_trip(family, tmp_path, markers):
    bundle = assemble_dataset(markers, DatasetSpec.parse("trg-src:de:en"), 2)
    vectors = VectorSource.from_path(mini_vec_path()) if Family(family).needs_vectors else None
    hyper = {"alpha_grid": (0.3, 0.7)} if family == "gaussian-svm" else {}
    pipe = fit_pipeline(family, bundle.train, bundle.dev, 2, hyper, vectors)
    pipe.save(tmp_path / "p")
    again = Pipeline.load(tmp_path / "p")
    np.testing.assert_array_equal(again.predict(bundle.test), pipe.predict(bundle.test))


def test_marker_transfer_is_chance(tmp_path, markers):
    out = tmp_path / "run"
    run_experiment(RunConfig("fasttext", "trg-src:de:en", seeds=(1,), hyper=FAST, out_dir=str(out)), markers)
    other = marker_corpus(600, "blip", seed=6, prefix="b")
    matrix = cross_evaluate(trained_models(out), {"marker-b": other})
    (row,) = matrix.rows
    assert abs(row.accuracy - 0.5) <= 0.05
