import json

import pytest

from accap.cli import main
from accap.data import load_corpus
from accap.metrics import REPORT_FIELDS

TINY = ["--d-h", "8", "--d-e", "8", "--d-emb", "8", "--policy-epochs", "2", "--reward-epochs", "2",
        "--value-epochs", "1", "--joint-epochs", "1", "--seed", "3"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.jsonl"
    assert main(["datagen", "--seed", "42", "--n", "60", "--out", str(corpus)]) == 0
    for run_dir in ("run_a", "run_b"):
        for stage in ("policy", "reward", "value", "joint"):
            assert main(["train", "--stage", stage, "--corpus", str(corpus), "--out", str(root / run_dir)] + TINY) == 0
    return root, corpus


def test_datagen_is_byte_identical_and_refuses_overwrite(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(["datagen", "--n", 30, "--out", a], capsys)[0] == 0
    assert run(["datagen", "--n", 30, "--out", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    code, _, err = run(["datagen", "--n", 30, "--out", a], capsys)
    assert code != 0 and "--force" in err
    assert run(["datagen", "--n", 30, "--out", a, "--force"], capsys)[0] == 0


def test_datagen_errors(tmp_path, capsys):
    code, _, err = run(["datagen", "--out", tmp_path / "missing" / "c.jsonl"], capsys)
    assert code != 0 and str(tmp_path / "missing") in err
    code, _, err = run(["datagen", "--n", 9, "--out", tmp_path / "c.jsonl"], capsys)
    assert code == 2 and "n_scenes" in err


def test_pipeline_writes_checkpoints_and_logs(pipeline):
    root, _ = pipeline
    run_dir = root / "run_a"
    for name in ("policy", "reward", "value", "policy_joint", "value_joint"):
        assert (run_dir / f"{name}.ckpt").exists()
    stages = [dict(kv.split("=", 1) for kv in line.split())["stage"]
              for line in (run_dir / "train.log").read_text().splitlines()]
    assert stages[0] == "policy" and stages[-1] == "joint"


def test_training_is_bit_reproducible(pipeline):
    root, _ = pipeline
    for name in ("policy", "reward", "value", "policy_joint", "value_joint"):
        assert (root / "run_a" / f"{name}.ckpt").read_bytes() == (root / "run_b" / f"{name}.ckpt").read_bytes()


def test_joint_without_value_is_dependency_error(pipeline, tmp_path, capsys):
    root, corpus = pipeline
    run_dir = tmp_path / "partial"
    run_dir.mkdir()
    for name in ("policy", "reward"):
        (run_dir / f"{name}.ckpt").write_bytes((root / "run_a" / f"{name}.ckpt").read_bytes())
    code, _, err = run(["train", "--stage", "joint", "--corpus", corpus, "--out", run_dir] + TINY, capsys)
    assert code == 1 and "value" in err


def test_caption_greedy_equals_unit_beam(pipeline, capsys):
    root, corpus = pipeline
    base = ["caption", "--run", root / "run_a", "--corpus", corpus, "--split", "val"]
    _, greedy, _ = run(base + ["--decoder", "greedy"], capsys)
    _, beam, _ = run(base + ["--decoder", "beam", "--k", 1, "--beta", 1], capsys)
    assert greedy == beam and greedy.strip()
    _, again, _ = run(base + ["--decoder", "greedy"], capsys)
    assert again == greedy
    vocab = set(load_corpus(corpus).vocab.tokens)
    assert all(set(line.split()) <= vocab for line in greedy.splitlines())


def test_caption_single_feature_and_index(pipeline, capsys):
    root, corpus = pipeline
    c = load_corpus(corpus)
    feat = ",".join(repr(float(x)) for x in c.split("test")[1].feature)
    _, by_feature, _ = run(["caption", "--run", root / "run_a", "--feature", feat, "--decoder", "greedy"], capsys)
    _, by_index, _ = run(["caption", "--run", root / "run_a", "--corpus", corpus, "--index", 1,
                          "--decoder", "greedy"], capsys)
    assert by_feature == by_index and len(by_index.splitlines()) == 1
    code, _, err = run(["caption", "--run", root / "run_a", "--feature", "1,2"], capsys)
    assert code == 1 and "12" in err


def test_caption_vocab_mismatch(pipeline, tmp_path, capsys):
    root, _ = pipeline
    other = tmp_path / "other.jsonl"
    text = (root / "corpus.jsonl").read_text().splitlines()
    header = json.loads(text[0])
    header["vocab"] = header["vocab"][:4] + list(reversed(header["vocab"][4:]))
    other.write_text("\n".join([json.dumps(header)] + text[1:]) + "\n")
    code, _, err = run(["caption", "--run", root / "run_a", "--corpus", other], capsys)
    assert code == 1 and "vocabulary" in err


def test_eval_report(pipeline, tmp_path, capsys):
    root, corpus = pipeline
    code, out, _ = run(["eval", "--run", root / "run_a", "--corpus", corpus, "--split", "val"], capsys)
    report = json.loads(out)
    assert code == 0 and set(report) == set(REPORT_FIELDS) and report["n"] == 6
    dest = tmp_path / "r.json"
    run(["eval", "--run", root / "run_a", "--corpus", corpus, "--split", "val", "--out", dest], capsys)
    assert json.loads(dest.read_text()) == report
    _, test_out, _ = run(["eval", "--run", root / "run_a", "--corpus", corpus, "--split", "test",
                          "--policy", "supervised"], capsys)
    assert json.loads(test_out)["n"] == 6


def test_config_file_and_flag_precedence(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    run(["datagen", "--n", 20, "--out", corpus], capsys)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d_h": 6, "d_e": 6, "policy_epochs": 1}))
    run(["train", "--stage", "policy", "--corpus", corpus, "--out", tmp_path / "r", "--config", cfg,
         "--d-h", 5], capsys)
    _, text, _ = run(["inspect", tmp_path / "r" / "policy.ckpt"], capsys)
    assert "D_h: 5" in text and "D_e: 6" in text and "epoch: 1" in text
    code, _, err = run(["train", "--stage", "policy", "--corpus", corpus, "--out", tmp_path / "r", "--margin", 2],
                       capsys)
    assert code == 2 and "margin" in err


def test_gradcheck_command(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 0 and out.count("PASS") == 5
    code, out, _ = run(["gradcheck", "--inject-fault", "value_surrogate"], capsys)
    assert code == 1 and "FAIL" in out


def test_inspect_rejects_garbage(tmp_path, capsys):
    bad = tmp_path / "x.ckpt"
    bad.write_bytes(b"nope")
    code, _, err = run(["inspect", bad], capsys)
    assert code == 1 and "magic" in err
