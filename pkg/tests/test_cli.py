import json
import re

import numpy as np
import pytest

from bilipexpand.cli import dumps_metrics, main
from bilipexpand.pixelio import read_pgm, rasterize

QUICK = ["--shape", "disk 0.5 0.5 0.3", "--q", "6", "--gamma", "0.2", "--gamma-prime", "0.6",
         "--eta", "16", "--lipschitz-pairs", "2000"]


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture(scope="module")
def stretched(tmp_path_factory):
    out = tmp_path_factory.mktemp("stretch")
    assert main(["stretch", *QUICK, "--svg", "--out", str(out)]) == 0
    return out


def test_metrics_number_format():
    text = dumps_metrics({"b": 0.1, "a": [1.0 / 3, float("inf")], "n": 3})
    back = json.loads(text)
    assert back["a"] == [1.0 / 3, None] and back["n"] == 3
    assert "0.33333333333333331" in text and "0.10000000000000001" in text
    assert text.index('"a"') < text.index('"b"')


def test_stretch_outputs(stretched):
    metrics = json.loads((stretched / "metrics.json").read_text())
    assert metrics["schema"] == "bilipexpand.metrics" and metrics["version"] == 1
    assert metrics["measures"]["final_raster"] >= metrics["measures"]["target"]
    assert metrics["status"] == "ok" and metrics["c0_within_bound"]
    assert (stretched / "grid.svg").read_text().startswith("<svg")
    warped = read_pgm(stretched / "warped.pgm")
    assert warped.shape == (64, 64)
    for value in re.findall(r"-?\d+\.\d+(?:e-?\d+)?", (stretched / "metrics.json").read_text()):
        digits = value.lstrip("-").split("e")[0].replace(".", "").lstrip("0")
        assert len(digits) <= 17


def test_dry_run(tmp_path):
    from bilipexpand.pixelio import write_pgm

    write_pgm(tmp_path / "A.pgm", rasterize("disk 0.4 0.5 0.3", 6))
    assert main(["stretch", "--input", str(tmp_path / "A.pgm"), "--dry-run", "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert "density_tree" in metrics and not (tmp_path / "map.stack").exists()


def test_uniform_input_is_unchanged(tmp_path):
    assert main(["stretch", "--shape", "all", "--q", "5", "--out", str(tmp_path)]) == 0
    np.testing.assert_array_equal(read_pgm(tmp_path / "warped.pgm"), rasterize("all", 5))
    assert json.loads((tmp_path / "metrics.json").read_text())["steps"] == 0


def test_verify_fresh_and_idempotent(stretched, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify", str(stretched / "map.stack"), "--out", str(a)]) == 0
    assert main(["verify", str(stretched / "map.stack"), "--out", str(b)]) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()


def test_verify_tampered(stretched, tmp_path, capsys):
    data = json.loads((stretched / "map.stack").read_text())
    box = data["stacks"][0]["levels"][0]["boxes"][0]
    box[2] += 0.2
    bad = tmp_path / "bad.stack"
    bad.write_text(json.dumps(data))
    capsys.readouterr()
    code = main(["verify", str(bad), "--out", str(tmp_path / "v")])
    err = capsys.readouterr()
    assert code == 1
    assert "step_predictions" in err.out + err.err
    checks = json.loads((tmp_path / "v" / "metrics.json").read_text())["checks"]
    assert not checks["step_predictions"] and checks["boundary"]


def test_config_file_line_numbers(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("eta: 0.5\ngamma: 0.2\nbogus: 3\n")
    assert main(["stretch", "--shape", "left-half", "--config", str(cfg)]) == 2
    assert f"{cfg}:3" in capsys.readouterr().err
    cfg.write_text("eta: 0.5\ngamma: 1.5\n")
    assert main(["stretch", "--shape", "left-half", "--config", str(cfg)]) == 2
    assert f"{cfg}:2" in capsys.readouterr().err


def test_config_values_and_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("shape: disk 0.5 0.5 0.3\nq: 6\ngamma_prime: 0.6\neta: 16\nlipschitz_pairs: 2000\n")
    assert main(["stretch", "--config", str(cfg), "--dry-run", "--q", "5", "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["density_tree"]["q"] == 5


@pytest.mark.parametrize("argv,code", [
    (["stretch", "--shape", "blob"], 2),
    (["stretch", "--shape", "left-half", "--eta", "-1"], 2),
    (["stretch", "--input", "/nonexistent/file.pgm"], 3),
    (["verify", "/nonexistent/map.stack"], 3),
    (["stretch", "--shape", "left-half", "--gamma", "0.9"], 2),
])
def test_exit_codes(argv, code, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == code


def test_bad_stack_file(tmp_path):
    (tmp_path / "x.stack").write_text('{"format": "something-else"}')
    assert main(["verify", str(tmp_path / "x.stack"), "--out", str(tmp_path)]) == 3


def test_poisson_determinism(tmp_path):
    argv = ["poisson", "--n", "4", "--seeds", "2", "--pairs", "500", "--q", "6"]
    assert main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert main([*argv, "--out", str(tmp_path / "b")]) == 0
    for name in ("poisson.csv", "metrics.json", "reports/seed_000001.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "poisson.csv").read_text().splitlines()[0]
    assert "event_frequency" in header


def test_poisson_precondition(tmp_path, capsys):
    code = main(["poisson", "--n", "4", "--seeds", "1", "--delta", "0.95", "--out", str(tmp_path)])
    assert code == 1
    assert re.search(r"precondition-failed: seed 0: k_X\(n\) = \d+", capsys.readouterr().err)


def test_psi_demo(tmp_path):
    assert main(["psi-demo", "--deltas", "0.3,-0.5", "--lines", "6", "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert len(names) >= 4 and all(n.endswith(".svg") for n in names)


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "8"):
        monkeypatch.setenv("BILIPEXPAND_THREADS", threads)
        d = tmp_path / threads
        assert main(["stretch", *QUICK, "--out", str(d)]) == 0
        outs.append(d)
    for name in ("metrics.json", "map.stack", "warped.pgm"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_left_half_reaches_target(tmp_path):
    code = main(["stretch", "--shape", "left-half", "--gamma", "0.5", "--gamma-prime", "0.3",
                 "--eta", "0.5", "--lipschitz-pairs", "2000", "--out", str(tmp_path)])
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    final = metrics["measures"]["final_raster"]
    assert code == 0 and final >= 0.7, f"status {metrics['status']}, final measure {final}"
