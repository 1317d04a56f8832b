import numpy as np
import pytest

from specshard.cli import main, read_plan_csv
from specshard.config import parse_config, parse_config_text
from specshard.designs import DesignKind
from specshard.errors import ValidationError
from specshard.plans import Strategy
from specshard.spectra import save_matrix

SMALL_SIM = """\
seed = 3
rounds = 3
clients = 5
participants_per_round = 3
emit = round, train_loss, anme, unbiased_discrepancy

[task]
input_dim = 6
hidden_dims = 8, 8
samples_per_client = 16
"""


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    cfg = parse_config(path)
    h = cfg.simulation.hyper
    assert (h.clip_threshold, h.momentum, h.frobenius_decay, h.local_epochs) == (10.0, 0.9, 1e-4, 2)
    assert cfg.simulation.strategy is Strategy.COLLECTIVE


def test_mixed_groups_parse():
    cfg = parse_config_text("[keep_ratio_groups]\n0.2 = 0.6\n0.4 = 0.4\n")
    assert cfg.simulation.keep_ratio_groups == ((0.2, 0.6), (0.4, 0.4))


def test_full_config_parse():
    text = """\
# comment
seed = 11
strategy = unbiased
design = brewer
tau = 5
cosine = yes

[task]
kind = regression
hidden_dims = 16, 16, 16

[plan]
n = 3
group_size = 4

[verify]
trials = 500
"""
    cfg = parse_config_text(text)
    assert cfg.seed == 11
    assert cfg.simulation.design is DesignKind.BREWER
    assert cfg.simulation.hyper.clip_threshold == 5.0
    assert cfg.simulation.cosine
    assert cfg.simulation.task.hidden_dims == (16, 16, 16)
    assert cfg.plan["group_size"] == 4
    assert cfg.verify["trials"] == 500


@pytest.mark.parametrize("text, needle", [
    ("tau = -1", "tau >= 1"),
    ("seed = 1\nbogus = 2", ":2: [experiment] bogus: unknown key"),
    ("rounds = many", "rounds"),
    ("[keep_ratio_groups]\n0.2 = 0.5\n0.4 = 0.4", "sum to 1"),
    ("[task]\nkind = vision", "kind"),
    ("[mystery]\na = 1", "unknown section"),
    ("emit = round, loss", "unknown record fields"),
    ("clients = 3\nparticipants_per_round = 4", "cannot exceed"),
    ("strategy = random", "unknown strategy"),
])
def test_config_rejections(text, needle):
    with pytest.raises(ValidationError, match=None) as info:
        parse_config_text(text, source="c.ini")
    assert needle in str(info.value)


def test_readme_example_config_parses():
    import pathlib
    import re

    readme = pathlib.Path(__file__).resolve().parents[1] / "README.md"
    block = re.search(r"```ini\n(.*?)```", readme.read_text(), re.S).group(1)
    cfg = parse_config_text(block, source="README")
    assert cfg.simulation.keep_ratio_groups == ((0.2, 0.6), (0.4, 0.4))


def test_diagnostic_line_after_commented_header():
    with pytest.raises(ValidationError, match=r"c.ini:3: \[task\] colour"):
        parse_config_text("seed = 1\n[task]   # model\ncolour = red\n", source="c.ini")


def test_plan_unbiased_csv(capsys):
    code, out, _ = run(["plan", "--lambda", "4,2,1,1", "--n", "2", "--strategy", "unbiased"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# specshard ") and "seed=0" in lines[0]
    assert lines[1] == "index,lambda,pi,omega"
    pi = [float(line.split(",")[2]) for line in lines[2:]]
    assert pi == [1.0, 0.5, 0.25, 0.25]


def test_plan_from_matrix(tmp_path, capsys):
    path = tmp_path / "w.txt"
    save_matrix(path, np.diag([4.0, 2.0, 1.0, 1.0]))
    out_path = tmp_path / "plan.csv"
    assert main(["plan", "--matrix", str(path), "--keep-ratio", "0.5",
                 "--strategy", "collective", "--group-size", "2", "-o", str(out_path)]) == 0
    meta, lam, pi, omega = read_plan_csv(out_path)
    assert meta["C"] == "2" and meta["n"] == "2"
    np.testing.assert_allclose(lam, [4, 2, 1, 1], atol=1e-14)
    np.testing.assert_allclose(pi, [1, 1, 0, 0], atol=1e-12)


def test_verify_collective_instance(tmp_path, capsys):
    plan = tmp_path / "c.csv"
    assert main(["plan", "--lambda", "1,1,1", "--n", "2", "--strategy", "collective",
                 "--group-size", "2", "-o", str(plan)]) == 0
    code, out, _ = run(["verify", "--plan", str(plan), "--trials", "100000", "--seed", "4"], capsys)
    assert code == 0
    assert "closed_form=0.6" in out and out.rstrip().endswith("PASS")


def test_sample_lines(tmp_path, capsys):
    plan = tmp_path / "u.csv"
    main(["plan", "--lambda", "4,2,1,1", "--n", "2", "--strategy", "unbiased", "-o", str(plan)])
    code, out, _ = run(["sample", "--plan", str(plan), "--trials", "20", "--design", "minsupport"],
                       capsys)
    assert code == 0
    rows = [list(map(int, line.split())) for line in out.splitlines()]
    assert len(rows) == 20 and all(len(r) == 2 and r[0] == 0 for r in rows)
    again = run(["sample", "--plan", str(plan), "--trials", "20", "--design", "minsupport"], capsys)
    assert again[1] == out


def test_anme_command(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["plan", "--lambda", "4,2,1,1", "--n", "2", "--strategy", "unbiased", "-o", str(a)])
    main(["plan", "--lambda", "4,2,1,1", "--n", "2", "--strategy", "topn", "-o", str(b)])
    code, out, _ = run(["anme", str(a), str(b)], capsys)
    assert code == 0
    lines = out.splitlines()
    assert float(lines[0].split(": ")[1]) == pytest.approx(0.65561, abs=1e-4)
    assert float(lines[1].split(": ")[1]) == 0.0


def test_simulate_streams_csv(tmp_path, capsys):
    cfg = tmp_path / "sim.ini"
    cfg.write_text(SMALL_SIM)
    code, out, _ = run(["simulate", "--config", str(cfg)], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# specshard") and "seed=3" in lines[0]
    assert lines[1] == "round,train_loss,anme,unbiased_discrepancy_1"
    assert len(lines) == 2 + 3 + 1
    assert lines[-1].startswith("# summary")
    code, other, _ = run(["simulate", "--config", str(cfg), "--seed", "4"], capsys)
    assert "seed=4" in other.splitlines()[0] and other != out


@pytest.mark.parametrize("argv, code", [
    (["plan", "--lambda", "1,2", "--n", "1"], 1),
    (["plan", "--lambda", "3,2", "--n", "5"], 1),
    (["plan", "--n", "1"], 1),
    (["nonsense"], 1),
    (["verify", "--plan", "/nonexistent.csv"], 1),
    (["simulate", "--config", "/nonexistent.ini"], 1),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(SMALL_SIM.replace("seed = 3", "seed = 3\nlr0 = 1e150"))
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "numerical failure" in capsys.readouterr().err
