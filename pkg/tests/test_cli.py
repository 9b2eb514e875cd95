import csv
import io
import json
import subprocess
import sys

import pytest

from leadquote.cli import main
from leadquote.dist import stationary_dist
from leadquote.optimize import Problem, QuotationPolicy, solve, truncate
from leadquote.scenario_file import dumps
from leadquote.utility import BASE_SCENARIO

BASE = BASE_SCENARIO


@pytest.fixture
def base_file(tmp_path):
    f = tmp_path / "base.txt"
    f.write_text(dumps(BASE))
    return f


def run(*argv):
    buf = io.StringIO()
    code = main([str(a) for a in argv], out=buf)
    return code, buf.getvalue()


def read_csv(path):
    lines = path.read_text().splitlines()
    meta = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    return meta, rows


# -- solve -------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "problem,text",
    [("provider-dynamic", "n_P=9, P*=94.91"), ("social-single", "n_Sc=8, S*_c=105.80")],
)
def test_solve_prints_summary(base_file, problem, text):
    code, out = run("solve", base_file, "--problem", problem)
    assert code == 0
    assert out.startswith("bounds [6, 10]\n")
    assert text in out


def test_solve_all_problems(base_file):
    code, out = run("solve", base_file)
    assert code == 0
    for text in ("P*=94.91", "P*_c=93.66", "S*=105.86", "S*_c=105.80"):
        assert text in out


def test_solve_infeasible_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text(dumps(BASE.with_(mu=2.0, r=1.0, l=5.0)))
    code, _ = run("solve", f, "--problem", "provider-dynamic")
    assert code == 2
    assert "mu=2.0 <= r(c-l)=3" in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text(dumps(BASE).replace("l = 3.0", "l = x"))
    code, _ = run("solve", f)
    assert code == 1
    assert f"{f}:4: l: expected float" in capsys.readouterr().err


def test_solve_csv(base_file, tmp_path):
    out = tmp_path / "solve.csv"
    assert run("solve", base_file, "--problem", "provider-dynamic", "--csv", out)[0] == 0
    meta, rows = read_csv(out)
    assert meta[0].startswith("# leadquote ") and meta[1] == "# command solve"
    assert len(rows) == 10
    assert rows[0]["quote"] == "inf" and rows[0]["n_star"] == "9"
    assert float(rows[0]["objective"]) == solve(BASE, Problem.PROVIDER_DYNAMIC).objective
    assert sum(float(r["weight"]) for r in rows) == pytest.approx(1.0)


def test_policy_round_trip(base_file, tmp_path):
    pol = tmp_path / "pol.json"
    assert run("solve", base_file, "--problem", "social-dynamic", "--policy-out", pol)[0] == 0
    record = json.loads(pol.read_text())
    assert record["problem"] == "social-dynamic"
    assert QuotationPolicy.from_dict(record["policy"]) == solve(BASE, Problem.SOCIAL_DYNAMIC).policy
    code, out = run("simulate", base_file, "--policy", pol, "--seed", "1", "--replications", "5", "--horizon", "20000")
    assert code == 0 and out.startswith("social-dynamic: threshold 8")


def test_policy_out_needs_one_problem(base_file, tmp_path):
    assert run("solve", base_file, "--policy-out", tmp_path / "p.json")[0] == 1


def test_invalid_policy_file(base_file, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("simulate", base_file, "--policy", bad)[0] == 1
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"policy": {"threshold": 9, "quotes": 0.0, "regime": "single"}}))
    assert run("simulate", base_file, "--policy", wrong)[0] == 1
    assert "error:" in capsys.readouterr().err


# -- sweep ---------------------------------------------------------------------------------


def test_sweep_csv(base_file, tmp_path):
    out = tmp_path / "fees.csv"
    code, text = run("sweep", base_file, "--axis", "p", "--grid", "5:14:1", "--csv", out)
    assert code == 0
    meta, rows = read_csv(out)
    assert meta[1] == "# command sweep p 5:14:1"
    assert len(rows) == 10
    assert list(rows[0])[:6] == ["p", "n_lo", "n_hi", "n_P", "obj_P", "quotes_P"]
    row = rows[5]
    assert (row["p"], row["n_lo"], row["n_hi"], row["n_P"]) == ("10.0", "6", "10", "9")
    assert float(row["obj_Sc"]) == pytest.approx(105.80, abs=0.01)
    assert row["quotes_P"].split(";")[:6] == ["inf"] * 6


def test_sweep_single_value_equals_solve(base_file, tmp_path):
    out = tmp_path / "one.csv"
    assert run("sweep", base_file, "--axis", "p", "--grid", "10", "--csv", out)[0] == 0
    _, rows = read_csv(out)
    assert len(rows) == 1
    for p in Problem:
        res = solve(BASE, p)
        assert float(rows[0][f"obj_{p.label}"]) == res.objective
        assert int(rows[0][f"n_{p.label}"]) == res.threshold


def test_sweep_csv_is_stable(base_file, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("sweep", base_file, "--axis", "l", "--grid", "0,2,4,6,8", "--csv", a)
    run("sweep", base_file, "--axis", "l", "--grid", "0,2,4,6,8", "--csv", b, "--workers", "2")
    assert a.read_bytes() == b.read_bytes()
    _, rows = read_csv(a)
    assert rows[-1]["n_hi"] == "inf"


def test_sweep_with_sim(base_file, tmp_path):
    out = tmp_path / "sim.csv"
    code, _ = run("sweep", base_file, "--axis", "p", "--grid", "10", "--problems", "provider-dynamic",
                  "--with-sim", "--seed", "3", "--csv", out)
    assert code == 0
    _, rows = read_csv(out)
    mean, hw = float(rows[0]["sim_P"]), float(rows[0]["sim_hw_P"])
    assert abs(mean - float(rows[0]["obj_P"])) <= hw


def test_sweep_needs_axis(base_file):
    assert run("sweep", base_file)[0] == 1


def test_sweep_section_in_file(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text(dumps(BASE) + "[sweep]\naxis = l\ngrid = 0,8\nproblems = provider-dynamic\n")
    code, text = run("sweep", f)
    assert code == 0
    assert text.splitlines()[0].split() == ["l", "n_lo", "n_hi", "n_P", "obj_P"]
    assert "95.32" in text


# -- quote table -----------------------------------------------------------------------------


def test_quote_table(tmp_path):
    f = tmp_path / "r13.txt"
    f.write_text(dumps(BASE.with_(r=1.3)))
    out = tmp_path / "q.csv"
    code, text = run("quote-table", f, "--csv", out)
    assert code == 0
    _, rows = read_csv(out)
    col = [r["provider-dynamic"] for r in rows]
    assert col[:3] == ["inf"] * 3 and col[8] == "-"
    assert [truncate(float(x)) for x in col[3:8]] == ["1.20", "0.71", "0.46", "0.26", "0.06"]
    assert rows[7]["provider-single"] == ""
    assert "1.20" in text


# -- simulate ----------------------------------------------------------------------------------


def test_simulate_reports_identical(base_file):
    args = ("simulate", base_file, "--seed", "7", "--replications", "10", "--horizon", "50000")
    a, b = run(*args), run(*args)
    assert a == b and a[0] == 0
    assert "seed 7, 10 x 50000 arrivals" in a[1]


def test_simulate_report_contents(base_file):
    code, text = run("simulate", base_file, "--problem", "provider-dynamic", "--seed", "2")
    assert code == 0
    lines = text.splitlines()
    profit = lines[1].split()
    analytic, mean, hw = float(profit[3]), float(profit[5]), float(profit[7])
    assert analytic == pytest.approx(94.9161, abs=1e-4)
    assert abs(mean - analytic) <= hw
    table = [ln.split() for ln in lines[4:]]
    q = stationary_dist(9, BASE.lam, BASE.mu)
    for n, cells in enumerate(table):
        assert float(cells[1]) == pytest.approx(q[n], abs=1e-5)
        assert abs(float(cells[2]) - q[n]) <= 3 * float(cells[3]) + 1e-5


# -- min capacity ---------------------------------------------------------------------------------


def test_min_capacity(tmp_path):
    f = tmp_path / "nomu.txt"
    f.write_text("".join(ln + "\n" for ln in dumps(BASE).splitlines() if not ln.startswith("mu")))
    out = tmp_path / "cap.csv"
    code, text = run("min-capacity", f, "--d-grid", "0,0.5,inf", "--r", "0,0.1,0.5", "--csv", out)
    assert code == 0
    _, rows = read_csv(out)
    assert list(rows[0]) == ["d", "mu_min_r0", "mu_min_r0.1", "mu_min_r0.5"]
    assert float(rows[2]["mu_min_r0"]) == pytest.approx(1.6)
    for row in rows:
        vals = [float(row[k]) for k in ("mu_min_r0", "mu_min_r0.1", "mu_min_r0.5")]
        assert vals == sorted(vals) and len(set(vals)) == 3


def test_min_capacity_needs_mu_free_file(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text(dumps(BASE.with_(p=15.0)))
    assert run("min-capacity", f, "--d-grid", "0.5")[0] == 1


# -- entry points ----------------------------------------------------------------------------------


def test_module_entry_point(base_file):
    proc = subprocess.run(
        [sys.executable, "-m", "leadquote", "solve", str(base_file), "--problem", "provider-single"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert "n_Pc=8, P*_c=93.66" in proc.stdout


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["solve"])
    assert info.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.startswith("leadquote ")

