import pytest

from rdcnet.config import SCHEMA, format_config, load_config, parse_config
from rdcnet.errors import ConfigError
from rdcnet.masking import STRATEGIES


def test_defaults():
    run = parse_config("")
    assert run.dataset == "synthetic" and run.seed == 0 and run.variant == "rdcnet"
    assert run.arch.widths == (64, 128, 256, 512) and run.arch.ce == (4,)
    assert run.arch.mask.strategy == "c_k_mask" and run.arch.mask.tau == 0.9
    t = run.train
    assert (t.epochs, t.batch_size, t.lr, t.lr_min, t.momentum, t.weight_decay,
            t.label_smoothing) == (200, 128, 0.1, 0.0, 0.9, 5e-4, 0.1)
    assert t.augment.pad == 4 and t.augment.erase_p == 0.5
    assert run.norm_mean is None and run.norm_std is None


def test_comments_and_whitespace():
    run = parse_config("# heading\n\n  mask.tau   =  0.5   # trailing\nseed=7\n")
    assert run.arch.mask.tau == 0.5 and run.seed == 7


@pytest.mark.parametrize("text,field,line", [
    ("seed = 1\nbogus.key = 3\n", "bogus.key", 2),
    ("mask.tau = 0.5\nmask.tau = 0.6\n", "mask.tau", 2),
    ("\n\nmask.strategy = dropout\n", "mask.strategy", 3),
    ("train.epochs = many\n", "train.epochs", 1),
    ("arch.widths = 64,128,256,510\n", "arch.widths", 1),
    ("mask.tau = 1.5\n", "mask.tau", 1),
    ("seed = -1\n", "seed", 1),
    ("aug.hflip = maybe\n", "aug.hflip", 1),
    ("train.lr = -1\n", "train.lr", 1),
])
def test_errors_carry_line_and_field(text, field, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.field == field and e.value.line == line
    assert str(e.value).startswith(f"line {line}: {field}: ")


def test_missing_equals():
    with pytest.raises(ConfigError) as e:
        parse_config("seed 3\n")
    assert e.value.line == 1


def test_real_dataset_needs_directory():
    with pytest.raises(ConfigError) as e:
        parse_config("dataset = cifar10\n")
    assert e.value.field == "data.dir"
    run = parse_config("dataset = cifar100\ndata.dir = /x\n")
    assert run.arch.classes == 100


@pytest.mark.parametrize("value,expected", [("A", ()), ("e", (4,)), ("H", (1, 2, 3, 4)),
                                            ("none", ()), ("2,3", (2, 3))])
def test_ce_values(value, expected):
    assert parse_config(f"arch.ce = {value}\narch.widths = 16,32,64,128\n").arch.ce == expected


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_strategies(strategy):
    assert parse_config(f"mask.strategy = {strategy}").arch.mask.strategy == strategy


def test_frozen_alpha_sweep():
    for i in range(1, 11):
        run = parse_config(f"arch.alpha = {i / 10}\narch.alpha_mode = frozen\n")
        assert run.arch.alpha == i / 10 and not run.arch.alpha_learnable


@pytest.mark.parametrize("variant", ["net1", "net2", "net3", "net4"])
def test_variants(variant):
    arch = parse_config(f"arch.variant = {variant}").arch
    assert {"net1": arch.ce == (), "net2": arch.block == "plain",
            "net3": arch.ce == () and arch.block == "plain",
            "net4": arch.stem == "large_input"}[variant]


def test_overrides_win():
    run = parse_config("seed = 1\noutput = a\n", {"seed": 5, "output": "b"})
    assert run.seed == 5 and run.output == "b" and run.train.seed == 5
    with pytest.raises(ConfigError):
        parse_config("", {"nope": 1})


def test_norm_pairing():
    with pytest.raises(ConfigError):
        parse_config("norm.mean = 0.5,0.5,0.5\n")
    run = parse_config("norm.mean = 0.5,0.4,0.3\nnorm.std = 0.2,0.2,0.2\n")
    assert run.norm_mean == (0.5, 0.4, 0.3)


def test_format_round_trip(tmp_path):
    text = "mask.strategy = c_k_mask\nmask.tau = 0.5\narch.ce = F\narch.alpha = 0.3\n"
    run = parse_config(text)
    out = format_config(run)
    assert "mask.strategy = c_k_mask\n" in out and "mask.tau = 0.5\n" in out
    assert "arch.ce = 3,4\n" in out
    keys = [ln.split(" = ")[0] for ln in out.splitlines() if not ln.startswith("#")]
    assert keys == list(SCHEMA)
    path = tmp_path / "run.cfg"
    path.write_text(out)
    again = load_config(path)
    assert format_config(again) == out
    assert again.arch == run.arch and again.train == run.train


def test_format_with_norm():
    run = parse_config("").with_norm((0.1, 0.2, 0.3), (1.0, 2.0, 3.0))
    again = parse_config(format_config(run))
    assert again.norm_mean == (0.1, 0.2, 0.3) and again.norm_std == (1.0, 2.0, 3.0)
