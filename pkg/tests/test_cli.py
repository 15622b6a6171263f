import json
import math
import subprocess
import sys

import pytest

from classical_chsh.cli import main
from classical_chsh.randtests import read_bitfile
from classical_chsh.sampler import SeedSpec, generate_stream
from classical_chsh.wire import formats

S_TSIRELSON = 2.8284271247461900976


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestExact:
    def test_text(self, capsys):
        code, out, _ = run(["exact"], capsys)
        assert code == 0
        assert "S (minus on 22) = 2.8284271" in out
        assert "S_max" in out and "E22 = -0.707106781187" in out
        assert out.startswith("# tool: ")

    def test_json(self, capsys):
        code, out, _ = run(["exact", "--json"], capsys)
        doc = json.loads(out)
        assert code == 0
        assert doc["chsh"]["S"] == pytest.approx(S_TSIRELSON, abs=1e-12)
        assert doc["chsh_max"]["S"] == pytest.approx(S_TSIRELSON, abs=1e-12)
        assert doc["header"]["version"] and doc["header"]["pattern"] == "22"

    def test_degrees_and_file(self, tmp_path, capsys):
        cfg = tmp_path / "angles.txt"
        cfg.write_text("theta1=0\ntheta2=90\ntheta1p=45\ntheta2p=-45\n")
        _, out, _ = run(["exact", "--json", "--angles", str(cfg), "--degrees"], capsys)
        assert json.loads(out)["chsh"]["S"] == pytest.approx(S_TSIRELSON, abs=1e-12)

    def test_flag_override(self, capsys):
        _, out, _ = run(["exact", "--json", "--theta2", "0", "--theta1p", "0", "--theta2p", "0"], capsys)
        assert json.loads(out)["chsh_max"]["S"] == pytest.approx(2.0, abs=1e-12)

    def test_replayable(self, capsys):
        assert run(["exact", "--json"], capsys)[1] == run(["exact", "--json"], capsys)[1]


class TestErrors:
    def test_missing_input(self, tmp_path, capsys):
        code, out, err = run(["estimate", "--in", str(tmp_path / "missing.csv")], capsys)
        assert code == 2 and out == "" and "missing.csv" in err

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["sample", "--seed", "1"])
        assert info.value.code == 1

    def test_bad_pattern(self):
        with pytest.raises(SystemExit) as info:
            main(["exact", "--pattern", "33"])
        assert info.value.code == 1

    def test_bad_angles_file(self, tmp_path, capsys):
        cfg = tmp_path / "a.txt"
        cfg.write_text("theta1=0\n")
        assert run(["exact", "--angles", str(cfg)], capsys)[0] == 2

    def test_corrupt_records(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("1,1,1,7\n")
        assert run(["estimate", "--in", str(path)], capsys)[0] == 2

    def test_empty_block(self, tmp_path, capsys):
        path = tmp_path / "few.csv"
        path.write_text("1,1,1,1\n")
        code, _, err = run(["estimate", "--in", str(path)], capsys)
        assert code == 2 and "(1,2)" in err

    def test_pair_run_role_addresses(self, capsys):
        assert run(["pair-run", "--role", "source", "--n", "1"], capsys)[0] == 1


class TestPipeline:
    @pytest.mark.parametrize("fmt", formats.FORMATS)
    def test_sample_deterministic(self, tmp_path, capsys, fmt):
        a, b = tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"
        for path, workers in ((a, "1"), (b, "4")):
            assert run(["sample", "--n", "1000", "--seed", "42", "--format", fmt, "--out", str(path),
                        "--shard-size", "128", "--workers", workers], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert formats.read_stream(a, fmt) == generate_stream(SeedSpec(42, 128), 1000)

    def test_sample_stdout(self, capsysbinary):
        assert main(["sample", "--n", "5", "--seed", "3", "--format", "bin"]) == 0
        out = capsysbinary.readouterr().out
        assert out == formats.encode_stream(generate_stream(SeedSpec(3), 5), "bin")

    def test_sample_estimate_bits_test(self, tmp_path, capsys):
        rec = tmp_path / "s.jsonl"
        run(["sample", "--n", "20000", "--seed", "9", "--format", "jsonl", "--out", str(rec)], capsys)
        code, out, _ = run(["estimate", "--in", str(rec), "--json"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["n"] == 20000
        assert set(doc) >= {"conditionals", "correlations", "chsh", "verdict"}
        assert doc["verdict"] == "VIOLATES_CLASSICAL"
        bits = tmp_path / "b.bits"
        assert run(["bits", "--in", str(rec), "--policy", "interleaved", "--out", str(bits)], capsys)[0] == 0
        assert read_bitfile(bits).size == 40000
        code, out, _ = run(["test", "--in", str(bits), "--json"], capsys)
        doc = json.loads(out)
        assert code == 0 and [t["name"] for t in doc["tests"]] == ["monobit", "block_frequency", "runs"]

    def test_estimate_text(self, tmp_path, capsys):
        rec = tmp_path / "s.csv"
        run(["sample", "--n", "5000", "--seed", "1", "--out", str(rec)], capsys)
        code, out, _ = run(["estimate", "--in", str(rec), "--pattern", "11", "--threshold", "3"], capsys)
        assert code == 0 and "minus on 11" in out and "verdict: CONSISTENT_WITH_CLASSICAL" in out

    def test_pair_run_matches_sample(self, tmp_path, capsys):
        a, b = tmp_path / "pair.bin", tmp_path / "sample.bin"
        cap = tmp_path / "cap"
        assert run(["pair-run", "--seed", "7", "--n", "3000", "--format", "bin", "--out", str(a),
                    "--capture-dir", str(cap)], capsys)[0] == 0
        run(["sample", "--seed", "7", "--n", "3000", "--format", "bin", "--out", str(b)], capsys)
        assert a.read_bytes() == b.read_bytes()
        assert (cap / "left.bin").stat().st_size == 3000 * 14 + 13


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "classical_chsh", "exact", "--json"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert math.isclose(json.loads(proc.stdout)["chsh"]["S"], S_TSIRELSON, abs_tol=1e-12)


def test_closed_stdout_pipe_is_quiet():
    proc = subprocess.Popen([sys.executable, "-m", "classical_chsh", "sample", "--n", "500000"],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    assert proc.stdout.readline() == b"a,b,i,j\n"
    proc.stdout.close()
    _, err = proc.communicate(timeout=60)
    assert proc.returncode == 2
    assert b"Traceback" not in err
