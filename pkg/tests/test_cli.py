import csv
import json
import os

import pytest

from simsel.cli import RunConfig, load_config, main
from simsel.data import save_dataset
from simsel.errors import ConfigError

REGISTRY = {
    "models": [
        {"family": "linear"},
        {"family": "mlp", "width": 12, "depth": 1},
        {"family": "cnnpool", "channels": 8, "kernel": 3, "pool": 4,
         "width": 16},
    ],
    "grid": {"learning_rates": [0.01], "epochs": [6], "batch_sizes": [8]},
}

ROTATION_COLUMNS = [
    "incoming", "case", "repeat", "condition", "metric", "most_similar",
    "similarity_score", "top3", "chosen_best", "relate", "oracle",
    "random_mean", "worst", "oracle_seconds", "relate_seconds",
    "similarity_seconds", "reduction_percent",
]
SUMMARY_COLUMNS = ["case", "metric", "rotations", "Oracle", "ReLATE",
                   "Random", "Worst"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, small_corpus):
    """A ready-to-run working directory: corpus, registry, config, database."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus_dir = root / "corpus"
    for ds in small_corpus:
        save_dataset(ds, corpus_dir / ds.name)
    (corpus_dir / "manifest.json").write_text(json.dumps(
        {"datasets": [ds.name for ds in small_corpus]}) + "\n")
    (root / "registry.json").write_text(json.dumps(REGISTRY) + "\n")
    config = {
        "seed": 0,
        "attack_families": ["fgsm"],
        "repeats": 1,
        "mc_trials": 50,
        "k_segments": 2,  # the toy validation parts hold only 4 instances
        "corpus_dir": str(corpus_dir),
        "db_path": str(root / "benchdb.jsonl"),
        "registry_path": str(root / "registry.json"),
        "out_dir": str(root / "out"),
    }
    (root / "config.json").write_text(json.dumps(config) + "\n")
    rc = main(["build-db", "--config", str(root / "config.json")])
    assert rc == 0
    return root


def run(pipeline, *argv):
    return main([*argv, "--config", str(pipeline / "config.json")])


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# -------------------------------------------------------------------- config

def test_default_config_needs_no_file():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.resolved_db_path == os.path.join("out", "benchdb.jsonl")


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"seeed": 1}')
    with pytest.raises(ConfigError, match="seeed"):
        load_config(path)


def test_config_rejects_wrong_types(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"repeats": "three"}')
    with pytest.raises(ConfigError, match="repeats"):
        load_config(path)
    path.write_text('{"attack_families": "fgsm"}')
    with pytest.raises(ConfigError, match="attack_families"):
        load_config(path)
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError, match="object"):
        load_config(path)


def test_config_rejects_unknown_family(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"attack_families": ["jsma"]}')
    with pytest.raises(ConfigError):
        load_config(path)


# ---------------------------------------------------------------- exit codes

def test_missing_config_file_exits_2(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "absent.json"),
                 "--corpus-dir", str(tmp_path / "c"),
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_run_case_without_database_exits_3(pipeline, tmp_path):
    rc = run(pipeline, "run-case", "--case", "1",
             "--db-path", str(tmp_path / "no.jsonl"),
             "--out-dir", str(tmp_path / "o"))
    assert rc == 3


def test_invalid_case_is_an_argparse_error(pipeline):
    with pytest.raises(SystemExit) as e:
        run(pipeline, "run-case", "--case", "9")
    assert e.value.code == 2


# ----------------------------------------------------------------------- gen

def test_gen_writes_corpus_and_respects_force(tmp_path):
    corpus = tmp_path / "corpus"
    out = tmp_path / "out"
    argv = ["gen", "--corpus-dir", str(corpus), "--out-dir", str(out)]
    assert main(argv) == 0
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert len(manifest["datasets"]) == 7
    for name in manifest["datasets"]:
        assert (corpus / name / "meta.json").exists()
    assert main(argv) == 2  # refuses to overwrite
    assert main(argv + ["--force"]) == 0


def test_gen_is_byte_deterministic(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["gen", "--corpus-dir", str(d),
                     "--out-dir", str(tmp_path / "out")]) == 0
    names = json.loads((dirs[0] / "manifest.json").read_text())["datasets"]
    for name in names:
        for fname in ("meta.json", "train.csv", "test.csv"):
            assert (dirs[0] / name / fname).read_bytes() == \
                   (dirs[1] / name / fname).read_bytes()


# ------------------------------------------------------------------ build-db

def test_build_db_contents_and_resume(pipeline, capsys):
    db_path = pipeline / "benchdb.jsonl"
    lines = db_path.read_text().splitlines()
    assert len(lines) == 18  # 3 datasets x 3 models x (clean + fgsm)
    before = db_path.read_bytes()
    assert run(pipeline, "build-db") == 0
    assert "18 records (0 new)" in capsys.readouterr().out
    assert db_path.read_bytes() == before


# ------------------------------------------------------------------ run-case

def test_run_case_1_outputs(pipeline, tmp_path, capsys):
    out = tmp_path / "case1"
    assert run(pipeline, "run-case", "--case", "1",
               "--out-dir", str(out)) == 0
    assert "case 1:" in capsys.readouterr().out

    results = sorted(os.listdir(out / "results"))
    assert results == ["case1_alpha_r0.json", "case1_beta_r0.json",
                       "case1_gamma_r0.json"]
    rows = read_csv(out / "rotations.csv")
    assert list(rows[0]) == ROTATION_COLUMNS
    assert len(rows) == 3
    for row in rows:
        assert row["condition"] == "clean"
        assert row["most_similar"] != row["incoming"]
        assert len(row["top3"].split("|")) == 3

    summary = read_csv(out / "summary.csv")
    assert list(summary[0]) == SUMMARY_COLUMNS
    assert len(summary) == 1
    assert summary[0]["rotations"] == "3"
    assert float(summary[0]["Worst"]) <= float(summary[0]["ReLATE"]) \
        <= float(summary[0]["Oracle"])

    ledger = json.loads((out / "ledger.json").read_text())
    assert set(ledger) == {"oracle_seconds", "relate_seconds",
                           "similarity_seconds", "reduction_percent"}


def test_run_case_3_outputs(pipeline, tmp_path):
    out = tmp_path / "case3"
    assert run(pipeline, "run-case", "--case", "3",
               "--out-dir", str(out)) == 0
    rows = read_csv(out / "rotations.csv")
    assert len(rows) == 3  # repeats overridden to 1 in the config
    for row in rows:
        assert set(row["condition"].split(",")) == {"fgsm"}
        assert float(row["oracle"]) <= float(row["relate"]) \
            <= float(row["worst"])


def test_run_case_is_deterministic(pipeline, tmp_path):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert run(pipeline, "run-case", "--case", "1",
                   "--out-dir", str(out)) == 0
    for fname in ("rotations.csv", "summary.csv", "ledger.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    for res in os.listdir(outs[0] / "results"):
        assert (outs[0] / "results" / res).read_bytes() == \
               (outs[1] / "results" / res).read_bytes()


# -------------------------------------------------------------------- report

def test_report_rebuilds_identical_tables(pipeline, tmp_path):
    out = tmp_path / "case1"
    assert run(pipeline, "run-case", "--case", "1",
               "--out-dir", str(out)) == 0
    originals = {f: (out / f).read_bytes()
                 for f in ("rotations.csv", "summary.csv", "ledger.json")}
    for f in originals:
        (out / f).unlink()
    assert run(pipeline, "report", "--out-dir", str(out)) == 0
    for f, data in originals.items():
        assert (out / f).read_bytes() == data


def test_report_without_results_exits_3(pipeline, tmp_path):
    assert run(pipeline, "report", "--out-dir", str(tmp_path / "empty")) == 3
