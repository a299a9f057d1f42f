"""Command-line interface: config files, subcommands, exit codes."""

import dataclasses
import json

import numpy as np
import pytest

from boxkb.cli import (ConfigError, RunConfig, build_parser, load_run_config,
                       main, parse_config_file, write_config_file)
from boxkb.kb import Vocabulary
from boxkb.model import init_params, load_checkpoint, save_checkpoint
from boxkb.training import STREAM_INIT, stream_rng

TRAIN_LINES = [
    "ada\tknows\tbob",
    "bob\tknows\tcara",
    "cara\tknows\tdan",
    "dan\tknows\tada",
    "ada\tlikes\tcara",
    "bob\tlikes\tdan",
    "cara\tlikes\tada",
    "dan\tlikes\tbob",
]

VALID_LINES = ["ada\tknows\tcara", "bob\tlikes\tada"]


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def data(tmp_path):
    train = write_lines(tmp_path / "train.tsv", TRAIN_LINES)
    valid = write_lines(tmp_path / "valid.tsv", VALID_LINES)
    return {"train": train, "valid": valid, "tmp": tmp_path}


def run_main(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# -- config files --


def test_config_file_round_trip(tmp_path):
    cfg = RunConfig(train="a.tsv", valid="b.tsv", format="tsv-nary", d=17,
                    norm_order=1, bounded=False, rules="r.txt", outdir="out",
                    workers=3, augment_inverses=True, learning_rate=0.25,
                    margin=5.0, negatives=4, adversarial_temperature=0.5,
                    batch_size=32, epochs=9, seed=11, checkpoint_every=2,
                    filter_train_negatives=True)
    path = tmp_path / "run.cfg"
    write_config_file(cfg, path)
    values = parse_config_file(path)
    for f in dataclasses.fields(RunConfig):
        assert values[f.name] == getattr(cfg, f.name)


def test_config_file_comments_quotes_blanks(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# full-line comment\n"
        "\n"
        "train = 'data/train.tsv'  # trailing comment\n"
        'outdir = "runs/demo"\n'
        "bounded = FALSE\n"
        "epochs=3\n",
        encoding="utf-8")
    values = parse_config_file(path)
    assert values == {"train": "data/train.tsv", "outdir": "runs/demo",
                      "bounded": False, "epochs": 3}


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("learning_rte = 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_file(path)


def test_config_file_bad_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("bounded = maybe\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_file(path)
    path.write_text("epochs = soon\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="epochs"):
        parse_config_file(path)
    path.write_text("just a line\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config_file(path)
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config_file(tmp_path / "missing.cfg")


def test_run_config_validation():
    with pytest.raises(ConfigError, match="training data"):
        RunConfig().validate()
    with pytest.raises(ConfigError, match="format"):
        RunConfig(train="x", format="csv").validate()
    with pytest.raises(ConfigError, match="d must"):
        RunConfig(train="x", d=0).validate()
    with pytest.raises(ConfigError, match="norm_order"):
        RunConfig(train="x", norm_order=3).validate()
    with pytest.raises(ConfigError, match="workers"):
        RunConfig(train="x", workers=0).validate()
    # TrainConfig problems surface as ConfigError too
    with pytest.raises(ConfigError):
        RunConfig(train="x", negatives=0).validate()
    RunConfig(train="x").validate()


def test_cli_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train = from_file.tsv\nepochs = 7\nd = 12\n"
                    "bounded = false\n", encoding="utf-8")
    args = build_parser().parse_args(
        ["train", "--config", str(path), "--epochs", "9", "--bounded"])
    cfg = load_run_config(args)
    assert cfg.train == "from_file.tsv"  # from file
    assert cfg.d == 12                   # from file
    assert cfg.epochs == 9               # flag wins
    assert cfg.bounded is True           # flag wins over file


def test_boolean_optional_action():
    args = build_parser().parse_args(["train", "--no-bounded",
                                      "--filter-train-negatives"])
    assert args.bounded is False
    assert args.filter_train_negatives is True
    args = build_parser().parse_args(["train"])
    assert args.bounded is None  # unset: config file / default decides


# -- train subcommand --


def train_argv(data, outdir, extra=()):
    return ["train", "--train", data["train"], "--valid", data["valid"],
            "--outdir", str(outdir), "--d", "6", "--epochs", "4",
            "--checkpoint-every", "2", "--batch-size", "8",
            "--negatives", "2", "--learning-rate", "0.05",
            "--seed", "3", *extra]


def test_train_end_to_end(capsys, data):
    outdir = data["tmp"] / "run"
    code, out, _ = run_main(capsys, train_argv(data, outdir))
    assert code == 0
    summary = json.loads(out)
    assert summary["epochs"] == 4
    assert summary["final"]["epoch"] == 3
    assert summary["final"]["mean_loss"] > 0
    assert summary["best"]["epoch"] is not None
    assert 0.0 <= summary["best"]["mrr"] <= 1.0
    assert summary["best_checkpoint"] == str(outdir / "best.json")
    for name in ("best.json", "checkpoint.json", "config.txt", "metrics.jsonl"):
        assert (outdir / name).exists()
    # config.txt round-trips through the parser and pins the run settings
    saved = parse_config_file(outdir / "config.txt")
    assert saved["d"] == 6 and saved["epochs"] == 4 and saved["seed"] == 3
    lines = (outdir / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 4
    rec = json.loads(lines[0])
    assert rec["epoch"] == 0 and np.isfinite(rec["mean_loss"])
    params = load_checkpoint(outdir / "best.json")
    assert params.vocab.n_relations == 2


def test_train_without_outdir_fails(capsys, data):
    code, _, err = run_main(capsys, ["train", "--train", data["train"]])
    assert code == 1
    assert "error:" in err and "output directory" in err


def test_train_missing_data_file(capsys, data, tmp_path):
    code, _, err = run_main(capsys, [
        "train", "--train", str(tmp_path / "nope.tsv"),
        "--outdir", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in err


def test_train_runs_are_byte_identical(capsys, data):
    paths = []
    for name in ("a", "b"):
        outdir = data["tmp"] / name
        code, _, _ = run_main(capsys, train_argv(data, outdir))
        assert code == 0
        paths.append(outdir / "best.json")
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_train_with_rules_and_nary_format(capsys, tmp_path):
    train = write_lines(tmp_path / "train.tsv", [
        "r\ta\tb", "r\tb\tc", "s\ta\tc", "s\tc\ta", "r\tc\ta"])
    rules = write_lines(tmp_path / "rules.txt",
                        ["symmetry s", "hierarchy s r"])
    outdir = tmp_path / "run"
    code, out, _ = run_main(capsys, [
        "train", "--train", train, "--format", "tsv-nary",
        "--rules", rules, "--outdir", str(outdir),
        "--d", "5", "--epochs", "3", "--batch-size", "8",
        "--negatives", "2"])
    assert code == 0
    summary = json.loads(out)
    # no valid split: best is simply the latest checkpoint
    assert summary["best"]["mrr"] is None
    assert (outdir / "best.json").exists()


def test_train_abort_exits_2_with_diagnostic(capsys, data):
    outdir = data["tmp"] / "boom"
    with pytest.warns(RuntimeWarning):
        code, _, err = run_main(capsys, train_argv(
            data, outdir, extra=["--no-bounded", "--learning-rate", "1e200",
                                 "--batch-size", "4"]))
    assert code == 2
    diag = json.loads(err.splitlines()[-1])
    assert diag["epoch"] == 0
    assert diag["facts"]


# -- eval subcommand --


def test_eval_from_checkpoint(capsys, data):
    outdir = data["tmp"] / "run"
    assert run_main(capsys, train_argv(data, outdir))[0] == 0
    code, out, _ = run_main(capsys, [
        "eval", "--checkpoint", str(outdir / "best.json"),
        "--train", data["train"], "--valid", data["valid"],
        "--split", "valid", "--ks", "1,3"])
    assert code == 0
    report = json.loads(out)
    assert report["split"] == "valid"
    assert report["n_facts"] == len(VALID_LINES)
    assert report["mr"] >= 1.0
    assert set(report["hits"]) == {"1", "3"}
    assert report["raw"]["mr"] >= report["mr"]


def test_eval_missing_checkpoint(capsys, data, tmp_path):
    code, _, err = run_main(capsys, [
        "eval", "--checkpoint", str(tmp_path / "nope.json"),
        "--train", data["train"], "--split", "train"])
    assert code == 1
    assert "checkpoint not found" in err


def test_eval_bad_ks(capsys, data):
    outdir = data["tmp"] / "run"
    assert run_main(capsys, train_argv(data, outdir))[0] == 0
    code, _, err = run_main(capsys, [
        "eval", "--checkpoint", str(outdir / "best.json"),
        "--train", data["train"], "--split", "train", "--ks", "1,zero"])
    assert code == 1
    assert "error:" in err


# -- fit-exact subcommand --


def test_fit_exact_cli(capsys, tmp_path):
    table = write_lines(tmp_path / "table.txt", [
        "entities a b", "relation r 2",
        "r a a 1", "r a b 0", "r b a 1", "r b b 0"])
    out_path = tmp_path / "fitted.json"
    code, out, _ = run_main(
        capsys, ["fit-exact", table, "--out", str(out_path)])
    assert code == 0
    report = json.loads(out)
    assert report == {"table_bits": 4, "flips": 2, "exact": True}
    fitted = load_checkpoint(out_path)
    assert fitted.vocab.n_relations == 1


def test_fit_exact_bad_table(capsys, tmp_path):
    table = write_lines(tmp_path / "table.txt",
                        ["entities a", "relation r 1", "r a 2"])
    code, _, err = run_main(capsys, ["fit-exact", table])
    assert code == 1
    assert "error:" in err
    code, _, err = run_main(
        capsys, ["fit-exact", str(tmp_path / "missing.txt")])
    assert code == 1
    assert "error:" in err


# -- rules subcommands --


def test_rules_closure_cli(capsys, tmp_path):
    rules = write_lines(tmp_path / "rules.txt",
                        ["hierarchy r s", "hierarchy s t"])
    code, out, _ = run_main(capsys, ["rules", "closure", "--rules", rules])
    assert code == 0
    report = json.loads(out)
    assert "hierarchy r t" in report["closure"]
    assert set(report["rules"]) <= set(report["closure"])


def test_rules_inject_check_consistent(capsys, tmp_path):
    rules = write_lines(tmp_path / "rules.txt",
                        ["symmetry r", "hierarchy r s"])
    code, out, _ = run_main(capsys, ["rules", "inject-check", "--rules",
                                     rules, "--d", "4", "--seed", "1"])
    assert code == 0
    report = json.loads(out)
    assert report["consistent"] is True
    assert report["rules"] == 2
    # r head/tail merged by symmetry; s head and tail stay separate
    assert report["sharing_classes"] == 3
    assert report["containment_constraints"] >= 2
    assert report["initial_growth"] >= 0


def test_rules_inject_check_conflict(capsys, tmp_path):
    rules = write_lines(tmp_path / "rules.txt",
                        ["symmetry r", "antisymmetry r"])
    code, out, _ = run_main(capsys, ["rules", "inject-check", "--rules", rules])
    assert code == 1
    report = json.loads(out)
    assert report["consistent"] is False
    assert report["conflict"]["kind"] == "symmetry-vs-antisymmetry"
    assert "r" in report["conflict"]["message"]


def test_rules_verify_cli(capsys, tmp_path):
    vocab = Vocabulary()
    for name in ("r", "s"):
        vocab.relation_id(name, arity=2, create=True)
    for name in ("a", "b"):
        vocab.entity_id(name, create=True)
    params = init_params(vocab, 3, stream_rng(0, STREAM_INIT))
    ckpt = tmp_path / "model.json"
    save_checkpoint(params, ckpt)
    rules = write_lines(tmp_path / "rules.txt",
                        ["symmetry r", "composition r s r"])
    code, out, _ = run_main(capsys, [
        "rules", "verify", "--rules", rules, "--checkpoint", str(ckpt)])
    assert code == 0
    results = json.loads(out)["results"]
    assert results[0]["rule"] == "symmetry r"
    assert results[0]["captured"] is False  # random boxes differ
    assert "dimension" in results[0]["witness"]
    assert "error" in results[1]  # composition has no box-shape test


def test_rules_unknown_relation_name(capsys, data, tmp_path):
    outdir = data["tmp"] / "run"
    assert run_main(capsys, train_argv(data, outdir))[0] == 0
    rules = write_lines(tmp_path / "rules.txt", ["symmetry nosuchrel"])
    code, _, err = run_main(capsys, [
        "rules", "verify", "--rules", rules,
        "--checkpoint", str(outdir / "best.json")])
    assert code == 1
    assert "error:" in err and "rules.txt:1" in err


# -- box-stats subcommand --


def test_box_stats_cli(capsys, tmp_path):
    vocab = Vocabulary()
    vocab.relation_id("r", arity=2, create=True)
    vocab.entity_id("a", create=True)
    params = init_params(vocab, 3, stream_rng(0, STREAM_INIT))
    ckpt = tmp_path / "model.json"
    save_checkpoint(params, ckpt)
    code, out, _ = run_main(capsys, ["box-stats", "--checkpoint", str(ckpt)])
    assert code == 0
    report = json.loads(out)
    assert report["relations"][0]["relation"] == "r"
    assert len(report["relations"][0]["positions"]) == 2
    assert report["pairs"] == []


# -- parser-level behavior --


def test_help_and_unknown_command():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
