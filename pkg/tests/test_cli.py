import json

import pytest

from mtda.cli import ConfigFileError, main, parse_config

MINIMAL = """\
[data]
kind = synthetic
n_per_domain = 30
seed = 1

[nets]
d_s = 3
d_p = 3
encoder_hidden = 8
decoder_hidden = 8
domain_hidden = 8

[train]
mode = full
steps = 6
seed = 0
batch_size_per_domain = 4
eval_every = 3

[output]
dir = {out}
"""


def write_config(tmp_path, text=MINIMAL, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text.format(out=tmp_path / "out"))
    return str(path)


def test_train_writes_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", cfg]) == 0
    out = tmp_path / "out"
    assert (out / "checkpoint.json").exists()
    assert "mean target accuracy" in (out / "summary.txt").read_text()
    records = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records[:-1]] == [0, 3, 6]
    assert set(records[1]) >= {"step", "mode", "accuracy", "losses"}
    assert "probe" in records[-1]["summary"]


def test_train_is_byte_identical_on_rerun(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.jsonl", "checkpoint.json", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides_file(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "9"])
    a = (tmp_path / "a" / "metrics.jsonl").read_text()
    b = (tmp_path / "b" / "metrics.jsonl").read_text()
    assert a != b and '"seed": 9' in b


def test_metrics_log_is_append_only(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", cfg])
    first = (tmp_path / "out" / "metrics.jsonl").read_text()
    main(["train", "--config", cfg])
    assert (tmp_path / "out" / "metrics.jsonl").read_text() == first + first


def test_unknown_key_exit_2_names_key_and_line(tmp_path, capsys):
    cfg = write_config(tmp_path, MINIMAL.replace("seed = 1", "seeed = 1"))
    assert main(["train", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "seeed" in err and "line 4" in err


@pytest.mark.parametrize("text,fragment", [
    ("[data]\nkind = synthetic\n", "missing required key"),
    ("kind = synthetic\n", "line 1"),
    ("[weird]\n", "unknown section"),
    ("[data\n", "malformed section"),
    ("[data]\nkind synthetic\n", "expected 'key = value'"),
    ("[train]\nsteps = many\n", "bad value"),
    ("[train]\nsteps = 1\nsteps = 2\n", "duplicate key"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigFileError, match=fragment):
        parse_config(text)


def test_parse_is_order_independent():
    a = parse_config(MINIMAL.format(out="x"))
    sections = MINIMAL.format(out="x").split("\n\n")
    b = parse_config("\n\n".join(reversed(sections)))
    assert a.values == b.values


def test_invalid_values_exit_2_with_line(tmp_path, capsys):
    cfg = write_config(tmp_path, MINIMAL.replace("mode = full", "mode = sideways"))
    assert main(["train", "--config", cfg]) == 2
    assert "line 14" in capsys.readouterr().err
    cfg = write_config(tmp_path, MINIMAL.replace("kind = synthetic", "kind = csv"))
    assert main(["train", "--config", cfg]) == 2
    cfg = write_config(tmp_path, MINIMAL.replace("d_p = 3", "d_p = 5"))
    assert main(["train", "--config", cfg]) == 2
    assert "line 7" in capsys.readouterr().err
    cfg = write_config(tmp_path, MINIMAL.replace("[output]", "[hyper]\nlambda_d = -1\n\n[output]"))
    assert main(["train", "--config", cfg]) == 2
    assert "line 21" in capsys.readouterr().err
    cfg = write_config(tmp_path, MINIMAL.replace("[output]", "[optimizer]\nkind = lbfgs\n\n[output]"))
    assert main(["train", "--config", cfg]) == 2
    assert "line 21" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_3(tmp_path):
    cfg = write_config(tmp_path, MINIMAL.replace("[output]", "[hyper]\neta = 1e300\n\n[output]"))
    assert main(["train", "--config", cfg]) == 3


def test_eval_and_export(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", cfg])
    ck = str(tmp_path / "out" / "checkpoint.json")
    assert main(["eval", "--config", cfg, "--checkpoint", ck]) == 0
    doc = json.loads((tmp_path / "out" / "eval.json").read_text())
    assert doc["step"] == 6 and set(doc["accuracy"]) == {"0", "1", "2"}
    assert main(["export", "--config", cfg, "--checkpoint", ck, "--out", str(tmp_path / "e1")]) == 0
    assert main(["export", "--config", cfg, "--checkpoint", ck, "--out", str(tmp_path / "e2")]) == 0
    first = (tmp_path / "e1" / "features.csv").read_bytes()
    assert first == (tmp_path / "e2" / "features.csv").read_bytes()
    assert first.startswith(b"domain_id,label,kind,f0,f1,f2,pc1,pc2\n")


def test_corrupt_checkpoint_exit_4(tmp_path):
    cfg = write_config(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text("{truncated")
    assert main(["export", "--config", cfg, "--checkpoint", str(bad)]) == 4
    assert main(["eval", "--config", cfg, "--checkpoint", str(bad)]) == 4


def test_checkpoint_for_other_data_exit_4(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", cfg])
    ck = tmp_path / "out" / "checkpoint.json"
    doc = json.loads(ck.read_text())
    doc["params"]["theta_s"]["config"]["layer_widths"][0] = 5
    doc["params"]["theta_s"]["tensors"][0]["shape"] = [5, 8]
    doc["params"]["theta_s"]["tensors"][0]["values"] = [0.0] * 40
    ck.write_text(json.dumps(doc))
    assert main(["export", "--config", cfg, "--checkpoint", str(ck)]) == 4


def test_ablate_table(tmp_path, capsys):
    cfg = write_config(tmp_path, MINIMAL.replace("steps = 6", "steps = 2"))
    assert main(["ablate", "--config", cfg]) == 0
    table = (tmp_path / "out" / "ablation.txt").read_text().strip().splitlines()
    assert len(table) == 10
    records = (tmp_path / "out" / "metrics.jsonl").read_text().splitlines()
    assert len(records) == 9 and all("ablation" in json.loads(r) for r in records)


def test_pairwise_train_writes_one_checkpoint_per_target(tmp_path):
    cfg = write_config(tmp_path, MINIMAL.replace("mode = full", "mode = pairwise"))
    assert main(["train", "--config", cfg]) == 0
    names = sorted(p.name for p in (tmp_path / "out").glob("checkpoint*.json"))
    assert names == ["checkpoint_target1.json", "checkpoint_target2.json"]


def test_idx_data(tmp_path):
    import numpy as np
    from mtda.data import write_idx

    rng = np.random.default_rng(0)
    paths = []
    for i in range(2):
        ib, lb = write_idx(rng.integers(0, 256, size=(20, 4, 4)), rng.integers(0, 3, size=20))
        (tmp_path / f"i{i}").write_bytes(ib)
        (tmp_path / f"l{i}").write_bytes(lb)
        paths.append((str(tmp_path / f"i{i}"), str(tmp_path / f"l{i}")))
    text = MINIMAL.replace("kind = synthetic\nn_per_domain = 30\nseed = 1",
                           f"kind = idx\nclasses = 3\ndownsample = 2\n"
                           f"idx_images = {paths[0][0]}, {paths[1][0]}\n"
                           f"idx_labels = {paths[0][1]}, {paths[1][1]}")
    cfg = write_config(tmp_path, text)
    assert main(["train", "--config", cfg]) == 0
    (tmp_path / "i1").write_bytes(b"\x00\x00\x08\x04")
    assert main(["train", "--config", cfg]) == 4


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    cfg = write_config(tmp_path, MINIMAL.replace("mode = full", "mode = nope"))
    proc = subprocess.run([sys.executable, "-m", "mtda", "train", "--config", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "nope" in proc.stderr
