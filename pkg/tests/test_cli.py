import json

import pytest

from pedp_policy import cli
from pedp_policy.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, UsageError, build_parser, main, \
    resolve_config
from pedp_policy.schema import write_schema_json
from pedp_policy.training import TrainingDivergedError


@pytest.fixture
def schema_file(tmp_path, schema_document):
    path = tmp_path / "schema.json"
    write_schema_json(schema_document, path)
    return path


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"hidden_dim": 8, "action_embed_dim": 4, "decoder_hidden": 4, "k_paths": 2,
                                "batch_size": 16}))
    return path


def test_no_command_is_a_usage_error():
    assert main([]) == EXIT_USAGE


def test_unknown_flag_is_a_usage_error():
    assert main(["train", "--bogus"]) == EXIT_USAGE


def test_missing_corpus_is_a_usage_error(tmp_path):
    assert main(["train", "--corpus", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_corrupt_corpus_is_a_data_error(tmp_path, corpus_file):
    broken = tmp_path / "corpus.jsonl"
    broken.write_text(corpus_file.read_text() + "{not json\n")
    (tmp_path / "corpus.schema.json").write_text(corpus_file.with_name("corpus.schema.json").read_text())
    assert main(["train", "--corpus", str(broken), "--out", str(tmp_path / "out")]) == EXIT_DATA


def test_divergence_exit_code(monkeypatch, tmp_path):
    def diverge(cfg):
        raise TrainingDivergedError("loss is nan")

    monkeypatch.setitem(cli.COMMANDS, "train", diverge)
    assert main(["train", "--out", str(tmp_path)]) == EXIT_DIVERGED


def test_flags_override_config_file(tmp_path, small_config, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    args = build_parser().parse_args(["train", "--config", str(small_config), "--k-paths", "5"])
    cfg = resolve_config(args)
    assert cfg.k_paths == 5
    assert cfg.hidden_dim == 8
    assert cfg.epochs == 30
    assert cfg.seed == [0]


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "42")
    assert resolve_config(build_parser().parse_args(["train"])).seed == [42]
    assert resolve_config(build_parser().parse_args(["train", "--seed", "1", "--seed", "2"])).seed == [1, 2]
    monkeypatch.setenv(cli.SEED_ENV, "x")
    with pytest.raises(UsageError):
        resolve_config(build_parser().parse_args(["train"]))


def test_unknown_config_field(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"hidden": 3}))
    with pytest.raises(UsageError):
        resolve_config(build_parser().parse_args(["train", "--config", str(path)]))


def test_model_kind_follows_flags(monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    parse = build_parser().parse_args
    assert resolve_config(parse(["train"])).model_kind == "pedp"
    assert resolve_config(parse(["train", "--no-planning"])).model_kind == "multidense"
    assert resolve_config(parse(["train", "--baseline", "seq"])).model_kind == "seq"


def test_expert_interactive_run(tmp_path, schema_file):
    out = tmp_path / "expert"
    code = main(["eval-interactive", "--expert", "--schema", str(schema_file), "--episodes", "10", "--seed", "3",
                 "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "interactive_report_expert_seed3.json").read_text())
    assert report["success_rate"] == 1.0
    assert report["match_rate"] == 1.0
    assert (out / "effective_config.json").exists()


@pytest.mark.slow
def test_full_pipeline(tmp_path, schema_file, small_config):
    data = tmp_path / "data"
    common = ["--schema", str(schema_file), "--config", str(small_config)]
    assert main(["gen-data", "--n-dialogs", "10", "--seed", "1", "--out", str(data)] + common) == EXIT_OK
    corpus = data / "corpus.jsonl"
    manifest = json.loads((data / "generation_manifest.json").read_text())
    assert manifest["n_dialogs"] == 10

    assert main(["split-corpus", "--corpus", str(corpus), "--out", str(data)] + common) == EXIT_OK
    assert (data / "train.jsonl").exists() and (data / "test.jsonl").exists()

    runs = tmp_path / "runs"
    assert main(["train", "--corpus", str(corpus), "--epochs", "1", "--seed", "1", "--out", str(runs)]
                + common) == EXIT_OK
    checkpoint = runs / "checkpoint_seed1.zip"
    assert checkpoint.exists() and (runs / "train_log_seed1.jsonl").exists()

    assert main(["eval-standard", "--corpus", str(corpus), "--checkpoint", str(checkpoint), "--out", str(runs)]
                + common) == EXIT_OK
    report = json.loads((runs / "standard_report_checkpoint_seed1.json").read_text())
    assert 0.0 <= report["f1"] <= 1.0 and "threshold_ablation" in report

    assert main(["eval-interactive", "--checkpoint", str(checkpoint), "--episodes", "3", "--max-turns", "5",
                 "--seed", "1", "--out", str(runs)] + common) == EXIT_OK
    assert (runs / "interactive_report_checkpoint_seed1_seed1.json").exists()

    assert main(["eval-interactive", "--expert", "--episodes", "3", "--seed", "1", "--out", str(runs)]
                + common) == EXIT_OK
    assert main(["dump-dialogs", "--checkpoint", str(checkpoint), "--expert", "--n-goals", "2", "--max-turns", "5",
                 "--out", str(runs)] + common) == EXIT_OK
    assert sorted(p.name for p in (runs / "transcripts").glob("*.txt")) == ["dialog_0000.txt", "dialog_0001.txt"]

    assert main(["compare-runs", "--report-a", str(runs / "interactive_report_checkpoint_seed1_seed1.json"),
                 "--report-b", str(runs / "interactive_report_expert_seed1.json"), "--labels", "pedp", "expert",
                 "--out", str(runs)]) == EXIT_OK
    comparison = json.loads((runs / "comparison.json").read_text())
    assert comparison["metrics"]["success_rate"]["mean_b"] == 1.0

    assert main(["eval-standard", "--corpus", str(corpus), "--checkpoint", str(tmp_path / "missing.zip"),
                 "--out", str(runs)] + common) == EXIT_USAGE


def test_generation_output_is_byte_identical(tmp_path, schema_file):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["gen-data", "--schema", str(schema_file), "--n-dialogs", "4", "--seed", "2", "--out", str(out),
                     "--single-action"]) == EXIT_OK
        manifest = json.loads((out / "generation_manifest.json").read_text())
        manifest.pop("run_digest")
        outputs.append(((out / "corpus_single.jsonl").read_bytes(), (out / "corpus_single.schema.json").read_bytes(),
                        manifest))
    assert outputs[0] == outputs[1]
    assert outputs[0][2]["multi_action"] is False


def test_cardinality_split(tmp_path, corpus_file):
    out = tmp_path / "split"
    assert main(["split-corpus", "--corpus", str(corpus_file), "--split", "cardinality",
                 "--max-train-cardinality", "1", "--out", str(out)]) == EXIT_OK
    train = [json.loads(line) for line in (out / "train.jsonl").read_text().splitlines()]
    test = [json.loads(line) for line in (out / "test.jsonl").read_text().splitlines()]
    assert train and all(len(r["macro_action"]) <= 1 for r in train)
    seen = {a for r in train for a in r["macro_action"]}
    assert all(len(r["macro_action"]) == 2 and set(r["macro_action"]) <= seen for r in test)
    assert (out / "test.schema.json").exists()


@pytest.mark.slow
def test_sweep_k(tmp_path, corpus_file, small_config):
    out = tmp_path / "sweep"
    assert main(["sweep-k", "--corpus", str(corpus_file), "--config", str(small_config), "--k-values", "1", "2",
                 "--epochs", "1", "--seed", "1", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "sweep_k.json").read_text())["summary"]
    assert set(summary) == {"1", "2"}
    assert "K=1" in (out / "sweep_k.txt").read_text()
    assert (out / "checkpoint_k2_seed1.zip").exists()


def test_literal_gumbel_sigmoid_flag(tmp_path, schema_file, tiny_model, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    cfg = resolve_config(build_parser().parse_args(["eval-interactive", "--paper-literal-gs"]))
    assert cfg.paper_literal_gs is True
    assert cli.prediction_options(tiny_model, cfg)["literal_gumbel_sigmoid"] is True
    assert cli.prediction_options(tiny_model, resolve_config(build_parser().parse_args(["train"])))[
        "literal_gumbel_sigmoid"] is False
    assert main(["eval-interactive", "--expert", "--episodes", "1", "--paper-literal-gs", "--schema", str(schema_file),
                 "--out", str(tmp_path)]) == EXIT_OK
