import os
import re
import subprocess
import sys

import pytest

from mpbn_snn import checkpoint
from mpbn_snn.cli import main

DATA = ["--dataset", "synthetic", "--n-train", "48", "--n-test", "32", "--classes", "3",
        "--image-shape", "1x6x6"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = str(d / "m.ckpt")
    rc = main(["train", *DATA, "--arch", "4,p,4", "--epochs", "2", "--batch-size", "16",
               "--out", out])
    assert rc == 0
    return d, out


def test_train_writes_checkpoint_and_log(trained):
    _, out = trained
    assert checkpoint.load(out).mode == "training"
    log = open(out + ".csv").read()
    assert "# flag.arch=4,p,4" in log and "epoch,train_loss,test_acc,lr,wall_time" in log
    assert len([l for l in log.splitlines() if l and l[0].isdigit()]) == 2


def test_fold_eval_and_inspect(trained, capsys):
    d, out = trained
    folded = str(d / "f.ckpt")
    assert main(["fold", out, folded]) == 0
    report = open(folded + ".report.txt").read()
    assert "# flag.input=" in report and "granularity=channel" in report
    capsys.readouterr()
    assert main(["eval", out, *DATA]) == 0
    text = capsys.readouterr().out
    acc = dict(re.findall(r"(\w+): accuracy=([\d.]+)", text))
    assert acc["training"] == acc["folded"]
    assert re.search(r"folded: .*norm_ops=0 ", text)
    assert main(["inspect", folded]) == 0
    assert "mode=folded" in capsys.readouterr().out


def test_fold_twice_fails(trained, capsys):
    d, out = trained
    folded = str(d / "f2.ckpt")
    assert main(["fold", out, folded]) == 0
    assert main(["fold", folded, str(d / "f3.ckpt")]) == 1
    assert "already folded" in capsys.readouterr().err
    assert not os.path.exists(d / "f3.ckpt")


def test_eval_warns_when_T_exceeds_training(trained, capsys):
    _, out = trained
    assert main(["eval", out, *DATA, "--T", "5"]) == 0
    err = capsys.readouterr().err
    assert err.count("exceeds trained T") == 1


def test_landscape_csv(trained):
    d, out = trained
    csv = str(d / "land.csv")
    assert main(["landscape", out, *DATA, "--n-points", "5", "--radius", "0.5", "--out", csv]) == 0
    lines = open(csv).read().splitlines()
    assert any(l.startswith("# curvature_proxy=") for l in lines)
    rows = lines[lines.index("alpha,loss") + 1:]
    assert len(rows) == 5 and rows[2].startswith("0.0,")


def test_usage_errors_exit_2_without_outputs(tmp_path, capsys):
    out = str(tmp_path / "x.ckpt")
    for argv in (["train", "--dataset", str(tmp_path / "nope"), "--out", out],
                 ["train", *DATA, "--arch", "8,q", "--out", out],
                 ["train", *DATA, "--T", "0", "--out", out]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2
    assert not os.listdir(tmp_path)


def test_corrupt_checkpoint_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!" + bytes(40))
    assert main(["inspect", str(bad)]) == 1
    assert "bad magic" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mpbn_snn", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "train" in res.stdout


def test_one_epoch_train_logs_one_record(tmp_path):
    logs = []
    for mode in ("off", "channel"):
        out = str(tmp_path / f"{mode}.ckpt")
        assert main(["train", *DATA, "--epochs", "1", "--T", "2", "--mpbn", mode, "--out", out]) == 0
        rows = [l for l in open(out + ".csv").read().splitlines() if l and l[0].isdigit()]
        assert len(rows) == 1
        logs.append(open(out + ".csv").read().splitlines())
    # same columns, same seed flag: the two logs line up for a paired comparison
    assert logs[0][-2] == logs[1][-2] and "# flag.seed=0" in logs[0] and "# flag.seed=0" in logs[1]


def test_identity_fold_keeps_baseline_threshold(tmp_path):
    from mpbn_snn.network import build_model
    src = str(tmp_path / "id.ckpt")
    checkpoint.save(build_model((1, 6, 6), "4,p,4", 3, mpbn="channel", seed=0), src)
    assert main(["fold", src, str(tmp_path / "id.folded")]) == 0
    folded = checkpoint.load(str(tmp_path / "id.folded"))
    for rule in folded.rules:
        if rule is not None:
            # eps sits inside the fold, so identity MPBN moves 0.5 by a factor sqrt(1 + eps)
            assert abs(rule.threshold - 0.5).max() < 1e-5


def test_subcommands_do_not_touch_inputs(trained, tmp_path):
    _, out = trained
    before = open(out, "rb").read()
    main(["fold", out, str(tmp_path / "f.ckpt")])
    main(["eval", out, *DATA])
    main(["landscape", out, *DATA, "--n-points", "3", "--out", str(tmp_path / "l.csv")])
    main(["inspect", out])
    assert open(out, "rb").read() == before


def test_eval_after_overfit_is_perfect(tmp_path, capsys):
    data = ["--dataset", "synthetic", "--n-train", "12", "--n-test", "12", "--classes", "3",
            "--image-shape", "1x6x6"]
    out = str(tmp_path / "o.ckpt")
    assert main(["train", *data, "--arch", "6,p,6", "--epochs", "60", "--batch-size", "12",
                 "--lr", "0.05", "--dtype", "f64", "--out", out]) == 0
    capsys.readouterr()
    assert main(["eval", out, *data, "--split", "train"]) == 0
    text = capsys.readouterr().out
    assert "training: accuracy=1.000000" in text and "folded: accuracy=1.000000" in text


def test_landscape_rejects_folded(trained, tmp_path, capsys):
    d, out = trained
    folded = str(tmp_path / "f.ckpt")
    main(["fold", out, folded])
    assert main(["landscape", folded, *DATA, "--out", str(tmp_path / "l.csv")]) == 1
    assert "training-mode" in capsys.readouterr().err


def test_degenerate_scale_fold_exits_1(tmp_path, capsys):
    from mpbn_snn.network import build_model
    m = build_model((1, 6, 6), "4,p,4", 3, mpbn="channel", seed=0)
    m.mpbn[2].lam[3] = 0.0
    src = str(tmp_path / "d.ckpt")
    checkpoint.save(m, src)
    assert main(["fold", src, str(tmp_path / "d.folded")]) == 1
    err = capsys.readouterr().err
    assert "layer 2" in err and "(3,)" in err
    assert not os.path.exists(tmp_path / "d.folded")
