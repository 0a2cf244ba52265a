import json
import os
import re
import subprocess
import sys

import numpy as np
import pytest

from oracles import binomial_sigma
from rdcnet.checkpoint import save_checkpoint
from rdcnet.cli import INIT_STREAM, main, prepare_data
from rdcnet.config import format_config, load_config
from rdcnet.network import build_network
from rdcnet.rng import Rng

TINY = """\
dataset = synthetic
data.n = 40
data.extent = 8
arch.blocks = 1,1,1,1
arch.widths = 8,8,8,8
arch.reduction = 4
mask.strategy = c_k_mask
mask.tau = 0.5
train.epochs = {epochs}
train.batch_size = 16
"""


def write_cfg(tmp_path, epochs=1, extra=""):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY.format(epochs=epochs) + extra)
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    out = tmp / "run"
    code = main(["train", "--config", write_cfg(tmp, epochs=2), "--output", str(out), "--quiet"])
    assert code == 0
    return out


def records(run_dir):
    return [json.loads(ln) for ln in (run_dir / "report.jsonl").read_text().splitlines()]


class TestTrain:
    def test_outputs(self, trained):
        names = sorted(os.listdir(trained))
        assert names == ["checkpoint.bin", "checkpoint.manifest", "report.jsonl", "run.cfg"]
        assert [r["epoch"] for r in records(trained)] == [0, 1]

    def test_single_epoch_record(self, tmp_path, capsys):
        out = tmp_path / "one"
        assert main(["train", "--config", write_cfg(tmp_path), "--output", str(out)]) == 0
        assert len(records(out)) == 1
        text = capsys.readouterr().out
        assert re.search(r"^epoch +0 +lr 0\.10000", text, re.M)

    def test_manifest_echoes_values(self, trained):
        text = (trained / "run.cfg").read_text()
        assert "mask.strategy = c_k_mask\n" in text and "mask.tau = 0.5\n" in text
        assert "train.lr = 0.1\n" in text  # defaults are written too
        assert f"output = {trained}\n" in text
        assert re.search(r"^norm\.mean = [-\d.e]+,[-\d.e]+,[-\d.e]+$", text, re.M)

    def test_seed_override(self, tmp_path):
        out = tmp_path / "seeded"
        assert main(["train", "--config", write_cfg(tmp_path), "--seed", "99", "--output",
                     str(out), "--quiet"]) == 0
        assert "seed = 99\n" in (out / "run.cfg").read_text()

    def test_invalid_strategy(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(TINY.format(epochs=1).replace("c_k_mask", "bogus"))
        cfg = str(cfg)
        assert main(["train", "--config", cfg, "--output", str(tmp_path / "x")]) == 2
        err = capsys.readouterr().err
        assert "line 7: mask.strategy:" in err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "none.cfg")]) == 1
        assert main(["train"]) == 2

    def test_usage_errors_exit_two(self):
        with pytest.raises(SystemExit) as e:
            main(["fly"])
        assert e.value.code == 2
        with pytest.raises(SystemExit) as e:
            main(["train", "--seed", "-3"])
        assert e.value.code == 2


class TestEval:
    def test_reproduces_final_eval_accuracy(self, trained, capsys):
        ck = str(trained / "checkpoint.bin")
        assert main(["eval", "--checkpoint", ck]) == 0
        line = capsys.readouterr().out.strip()
        m = re.fullmatch(r"split eval  n (\d+)  top1 (\S+)  loss (\S+)", line)
        assert m and int(m.group(1)) == 8
        assert float(m.group(2)) == records(trained)[-1]["eval_acc"]

    def test_train_split(self, trained, capsys):
        assert main(["eval", "--checkpoint", str(trained / "checkpoint.bin"),
                     "--split", "train"]) == 0
        assert " n 32 " in capsys.readouterr().out

    def test_requires_checkpoint(self, trained):
        assert main(["eval", "--config", str(trained / "run.cfg")]) == 2

    def test_architecture_mismatch(self, trained, tmp_path, capsys):
        cfg = tmp_path / "other.cfg"
        cfg.write_text((trained / "run.cfg").read_text().replace(
            "arch.widths = 8,8,8,8", "arch.widths = 8,8,8,16"))
        code = main(["eval", "--config", str(cfg), "--checkpoint",
                     str(trained / "checkpoint.bin")])
        assert code == 1
        assert "layer4.0.conv.weight" in capsys.readouterr().err

    def test_balanced_eval_split(self, trained):
        _, eval_, _ = prepare_data(load_config(trained / "run.cfg"))
        majority = np.bincount(eval_.labels).max() / len(eval_)
        assert majority == 0.5

    def test_untrained_is_chance(self, tmp_path, capsys):
        k = 4
        out = tmp_path / "untrained"
        out.mkdir()
        cfg = tmp_path / "four.cfg"
        cfg.write_text(TINY.format(epochs=1).replace("data.n = 40", "data.n = 400")
                       + f"data.classes = {k}\noutput = {out}\n")
        run = load_config(cfg)
        _, eval_, meta = prepare_data(run)
        (out / "run.cfg").write_text(format_config(run.with_norm(meta.mean, meta.std)))
        save_checkpoint(build_network(run.arch, Rng(run.seed, INIT_STREAM)),
                        out / "checkpoint.bin")
        assert main(["eval", "--checkpoint", str(out / "checkpoint.bin")]) == 0
        acc = float(re.search(r"top1 (\S+)", capsys.readouterr().out).group(1))
        assert abs(acc - 1 / k) <= 4 * binomial_sigma(1 / k, len(eval_))


class TestInspect:
    def test_default_config(self, tmp_path, capsys):
        cfg = tmp_path / "default.cfg"
        cfg.write_text("# all defaults\n")
        assert main(["inspect", "--config", str(cfg)]) == 0
        first = capsys.readouterr().out
        assert "  layer4   512x4x4" in first
        assert "CE placements: after stage 4" in first
        total = int(re.search(r"total +(\d+)", first).group(1))
        assert main(["inspect", "--config", str(cfg)]) == 0
        assert int(re.search(r"total +(\d+)", capsys.readouterr().out).group(1)) == total

        cfg.write_text("arch.variant = net2\n")
        assert main(["inspect", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "alpha (learnable): none" in out

    def test_alpha_listing(self, trained, capsys):
        assert main(["inspect", "--checkpoint", str(trained / "checkpoint.bin")]) == 0
        out = capsys.readouterr().out
        assert "alpha (learnable):" in out and "layer1.0.main" in out
        assert "mask c_k_mask tau=0.5" in out


class TestVerify:
    def test_shapes_suite(self, capsys):
        assert main(["verify", "--suite", "shapes"]) == 0
        assert "shapes" in capsys.readouterr().out

    def test_unknown_suite(self, capsys):
        assert main(["verify", "--suite", "nope"]) == 2
        assert "unknown suite" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "rdcnet", "verify", "--suite", "schedule"],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
