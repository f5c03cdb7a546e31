import csv
import io
import subprocess
import sys
from pathlib import Path

import pytest

from distmdp.cli import main

MODELS = Path(__file__).resolve().parent.parent / "models"

ONE_STATE = """[mdp]
discount = 9/10
node 1 = s
actions = go
kernel go 0 = 1
reward go 0 = 2
"""


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def kv(text):
    out = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 2 and not line.startswith("#"):
            out[parts[0]] = parts[1]
    return out


def read_csv(text):
    rows = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(rows))))


def test_solve_single_state(tmp_path, capsys):
    p = tmp_path / "one.spec"
    p.write_text(ONE_STATE)
    code, out, _ = run(capsys, "solve", "--spec", str(p))
    assert code == 0
    vals = kv(out)
    assert float(vals["value_iteration"]) == pytest.approx(20.0)
    assert float(vals["policy_iteration"]) == pytest.approx(20.0)
    assert vals["candidate_maps"] == "1"


def test_solve_example4(capsys):
    code, out, _ = run(capsys, "solve", "--spec", str(MODELS / "example4.spec"))
    vals = kv(out)
    assert code == 0
    assert float(vals["value_iteration"]) == pytest.approx(9.249, abs=1e-3)
    assert int(vals["candidate_maps"]) == 2**43


def test_rate_fixed_map_example4(capsys, tmp_path):
    out_file = tmp_path / "rate.txt"
    code, out, _ = run(capsys, "rate", "--spec", str(MODELS / "example4.spec"), "--policy", "highest", "--out", str(out_file))
    assert code == 0 and out == ""
    vals = kv(out_file.read_text())
    assert float(vals["huffman_rate"]) == pytest.approx(3.5175, abs=1e-4)


def test_rate_interactive_and_scalar(capsys):
    code, out, _ = run(capsys, "rate", "--spec", str(MODELS / "argmax2x3.spec"))
    assert code == 0
    scalar = float(kv(out)["expected_bits"])
    assert "speak" in out
    code, out, _ = run(capsys, "rate", "--spec", str(MODELS / "argmax2x3.spec"), "--mode", "interactive")
    assert code == 0
    bound = float(kv(out)["rate_bound"])
    assert 0 <= bound <= scalar + 1e-9


def test_tradeoff_csv(capsys, tmp_path):
    p = tmp_path / "m.spec"
    p.write_text("[argmax]\nnodes = 2\nsupports = 1 2\n")
    code, out, _ = run(capsys, "tradeoff", "--spec", str(p), "--lambda-grid", "0,1,10", "--method", "exhaustive,round_robin")
    assert code == 0
    assert out.startswith("# distmdp-tradeoff v1\n")
    rows = read_csv(out)
    assert {r["method"] for r in rows} == {"exhaustive", "round_robin", "blind"}
    ex = {float(r["lambda"]): r for r in rows if r["method"] == "exhaustive"}
    assert float(ex[0.0]["bits"]) == pytest.approx(1.0)
    assert float(ex[10.0]["bits"]) == 0.0


def test_simulate_is_reproducible(capsys):
    args = ["simulate", "--spec", str(MODELS / "example4.spec"), "--episodes", "20", "--horizon", "200", "--seed", "5"]
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b
    row = read_csv(a)[0]
    assert row["episodes"] == "20" and row["seed"] == "5"


@pytest.mark.parametrize("text,code", [
    ("[wireless]\nusers = x\n", 2),
    ("[mdp]\ndiscount = 1/2\nnode 1 = a\nactions = 1\nkernel 1 0 = 1/2\n", 2),
])
def test_exit_codes_for_bad_specs(tmp_path, capsys, text, code):
    p = tmp_path / "bad.spec"
    p.write_text(text)
    rc, _, err = run(capsys, "solve", "--spec", str(p))
    assert rc == code
    assert "line" in err


def test_missing_file_and_budget(tmp_path, capsys):
    rc, _, _ = run(capsys, "solve", "--spec", str(tmp_path / "nope.spec"))
    assert rc == 1
    rc, out, _ = run(capsys, "tradeoff", "--spec", str(MODELS / "example4.spec"), "--method", "exhaustive", "--budget", "100")
    assert rc == 0 and "# error" in out


def test_bad_arguments_exit_nonzero(capsys):
    with pytest.raises(SystemExit) as info:
        main(["tradeoff", "--spec", "x", "--method", "annealing"])
    assert info.value.code == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "distmdp", "solve", "--spec", str(MODELS / "example5.spec")],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "value_iteration" in out.stdout
