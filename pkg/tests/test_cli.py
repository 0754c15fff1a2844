import json
import subprocess
import sys

import numpy as np
import pytest

from relusat.benchgen import gen_instances, write_corpus
from relusat.cli import (
    ABLATION_CONFIGS,
    EXIT_USAGE,
    RunRecord,
    ablation_config,
    main,
    read_manifest,
    run_ablation,
)
from relusat.config import SearchConfig
from relusat.network import infer
from relusat.specio import emit_network, emit_property, parse_network, parse_property

from conftest import EXAMPLE_BOX, simple_property, two_layer_example


def _write(tmp_path, rhs):
    net = tmp_path / "net.json"
    prop = tmp_path / "p.prop"
    net.write_text(emit_network(two_layer_example()))
    prop.write_text(emit_property(simple_property(*EXAMPLE_BOX, [1.0, 0.0], rhs)))
    return str(net), str(prop)


def test_unsat_exit_code(tmp_path, capsys):
    net, prop = _write(tmp_path, 50.0)
    assert main(["verify", "--net", net, "--prop", prop]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "unsat"


def test_sat_prints_replayable_witness(tmp_path, capsys):
    net, prop = _write(tmp_path, -1.0)
    stats = tmp_path / "stats.json"
    assert main(["verify", "--net", net, "--prop", prop, "--stats", str(stats)]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "sat"
    x = np.array([float(l.split("=")[1]) for l in lines[1:]])
    y = infer(parse_network(open(net).read()), x)
    p = parse_property(open(prop).read())
    assert p.contains(x) and not p.holds(y[None, :])[0]
    rec = RunRecord.from_json(stats.read_text())
    assert rec.status == "sat" and rec.counterexample == x.tolist()
    assert set(rec.timings) >= {"bcp", "stabilize", "deduce", "analyze"}


def test_usage_errors(tmp_path, capsys):
    net, prop = _write(tmp_path, 0.0)
    assert main(["verify", "--net", net, "--prop", prop, "--beam", "0"]) == EXIT_USAGE
    assert main(["verify", "--net", str(tmp_path / "missing.json"), "--prop", prop]) == EXIT_USAGE
    assert main(["verify", "--net", net]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    bad = tmp_path / "bad.prop"
    bad.write_text("(assert (< Y_0 1))")
    assert main(["verify", "--net", net, "--prop", str(bad)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "missing.json" in err


def test_bare_flags_mean_verify(tmp_path, capsys):
    net, prop = _write(tmp_path, 50.0)
    assert main(["--net", net, "--prop", prop]) == 0
    assert main(["--version"]) == 0


def test_timeout_exit_code(tmp_path, capsys):
    from relusat.benchgen import random_network

    rng = np.random.default_rng(0)
    netp, propp = tmp_path / "n.json", tmp_path / "p.prop"
    net = random_network(rng, [5, 40, 40, 40, 2])
    netp.write_text(emit_network(net))
    y0 = infer(net, np.zeros(5))
    propp.write_text(emit_property(simple_property(-np.ones(5), np.ones(5), [1.0, -1.0], float(y0[0] - y0[1]) + 1e-3)))
    code = main(["verify", "--net", str(netp), "--prop", str(propp), "--timeout", "0.05", "--stabilize-k", "0"])
    out = capsys.readouterr().out.split()[0]
    assert (out, code) in (("timeout", 2), ("sat", 1))


def test_run_record_round_trip():
    rec = RunRecord("a.json", "b.prop", SearchConfig().to_dict(), "sat", [0.5], [1.0], None, {"nodes": 3, "timings": {"bcp": 0.1}})
    again = RunRecord.from_json(rec.to_json())
    assert again == rec and again.timings == {"bcp": 0.1}


def test_ablation_configs():
    base = SearchConfig(beam_width=64, stabilize_k=8)
    n = ablation_config("N", base)
    assert (n.beam_width, n.stabilize_k, n.restarts) == (1, 0, False)
    psr = ablation_config("P+S+R", base)
    assert (psr.beam_width, psr.stabilize_k, psr.restarts) == (64, 8, True)
    assert ablation_config("S", base).beam_width == 1
    with pytest.raises(ValueError):
        ablation_config("N+S", base)


def test_empty_manifest_gives_empty_table(tmp_path, capsys):
    m = tmp_path / "manifest.txt"
    m.write_text("")
    assert run_ablation(["--manifest", str(m)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 + len(ABLATION_CONFIGS)
    assert all(line.split()[1:3] == ["0", "0"] for line in out[1:])


def test_ablation_table_rows(tmp_path, capsys):
    manifest = write_corpus(gen_instances(1, 3), tmp_path)
    js = tmp_path / "rows.json"
    assert run_ablation(["--manifest", str(manifest), "--configs", "N,P+S", "--timeout", "10", "--json", str(js)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines[1:]] == ["N", "P+S"]
    rows = json.loads(js.read_text())
    assert all(r["total"] == 3 and r["solved"] == 3 for r in rows)
    assert rows[0]["verdicts"] == rows[1]["verdicts"]


def test_manifest_errors(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text("# comment\n\nonly_one_field\n")
    assert run_ablation(["--manifest", str(m)]) == EXIT_USAGE
    m.write_text("a.json, b.prop\n")
    assert read_manifest(m) == [(tmp_path / "a.json", tmp_path / "b.prop")]
    assert run_ablation(["--manifest", str(tmp_path / "nope.txt")]) == EXIT_USAGE


def test_gen_writes_manifest(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--seed", "2", "--count", "2"]) == 0
    assert len(read_manifest(tmp_path / "manifest.txt")) == 2


def test_module_entry_point(tmp_path):
    net, prop = _write(tmp_path, 50.0)
    res = subprocess.run([sys.executable, "-m", "relusat", "verify", "--net", net, "--prop", prop], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "unsat"
