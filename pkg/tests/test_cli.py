import os
import threading

import pytest

from jmpath.cli import (
    EXIT_CONFIG,
    EXIT_INCOMPLETE,
    EXIT_MAC_MISMATCH,
    EXIT_OK,
    main,
    parse_endpoint,
)


@pytest.fixture
def workdir(tmp_path):
    payload = os.urandom(50000)
    infile = tmp_path / "in.bin"
    infile.write_bytes(payload)
    keyfile = tmp_path / "keys.bin"
    keyfile.write_bytes(os.urandom(96))
    return tmp_path, infile, keyfile, payload


class TestParsing:
    def test_endpoint(self):
        assert parse_endpoint("localhost:99") == ("localhost", 99)

    def test_endpoint_bad(self):
        from jmpath.cli import ConfigError
        with pytest.raises(ConfigError):
            parse_endpoint("nocolon")
        with pytest.raises(ConfigError):
            parse_endpoint("host:abc")


class TestKeygen:
    def test_writes_96_bytes(self, tmp_path):
        out = tmp_path / "k"
        assert main(["keygen", "--out", str(out)]) == EXIT_OK
        assert len(out.read_bytes()) == 96


class TestSimulateCommand:
    def test_roundtrip_exit_zero(self, workdir, capsys):
        tmp, infile, keyfile, payload = workdir
        out = tmp / "out.bin"
        code = main(["simulate", "--in", str(infile), "--out", str(out),
                     "--n", "4", "--m", "3", "--seed", "5",
                     "--key-file", str(keyfile)])
        assert code == EXIT_OK
        assert out.read_bytes() == payload
        assert "payload verified" in capsys.readouterr().out

    def test_forced_corruption_exits_2(self, workdir):
        _, infile, keyfile, _ = workdir
        code = main(["simulate", "--in", str(infile), "--n", "4", "--m", "2",
                     "--corrupt-prob", "1.0", "--key-file", str(keyfile)])
        assert code == EXIT_MAC_MISMATCH

    def test_full_drop_exits_3(self, workdir):
        _, infile, keyfile, _ = workdir
        code = main(["simulate", "--in", str(infile), "--n", "4", "--m", "2",
                     "--drop-prob", "1.0", "--key-file", str(keyfile)])
        assert code == EXIT_INCOMPLETE

    def test_short_key_file_exits_64(self, workdir, capsys):
        tmp, infile, _, _ = workdir
        short = tmp / "short.key"
        short.write_bytes(os.urandom(95))
        code = main(["simulate", "--in", str(infile), "--n", "2", "--m", "2",
                     "--key-file", str(short)])
        assert code == EXIT_CONFIG
        assert "short.key" in capsys.readouterr().err

    def test_bad_params_exit_64(self, workdir):
        _, infile, keyfile, _ = workdir
        code = main(["simulate", "--in", str(infile), "--n", "0", "--m", "2",
                     "--key-file", str(keyfile)])
        assert code == EXIT_CONFIG

    def test_fixed_seed_reports_identical(self, workdir, capsys):
        _, infile, keyfile, _ = workdir
        args = ["simulate", "--in", str(infile), "--n", "5", "--m", "3",
                "--seed", "77", "--drop-prob", "0.1", "--reorder-window", "2",
                "--key-file", str(keyfile)]
        main(args)
        first = capsys.readouterr().out
        main(args)
        assert capsys.readouterr().out == first

    def test_env_var_key_file(self, workdir, monkeypatch):
        _, infile, keyfile, _ = workdir
        monkeypatch.setenv("JMP_KEY_FILE", str(keyfile))
        code = main(["simulate", "--in", str(infile), "--n", "2", "--m", "2"])
        assert code == EXIT_OK


class TestAnalyzeCommand:
    def test_table_output(self, workdir, capsys):
        tmp, infile, keyfile, _ = workdir
        log = tmp / "run.json"
        main(["simulate", "--in", str(infile), "--n", "3", "--m", "3",
              "--seed", "3", "--capture", "0,1,2", "--log", str(log),
              "--key-file", str(keyfile)])
        capsys.readouterr()
        code = main(["analyze", "--log", str(log), "--in", str(infile),
                     "--key-file", str(keyfile)])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        lines = out.strip().splitlines()
        assert lines[0].startswith("routes_captured,knowledge,parts_complete")
        assert len(lines) == 4  # header + three tiers
        keyed_row = lines[3].split(",")
        assert keyed_row[1] == "manifest_and_keys"
        assert keyed_row[4] == "50000"  # full recovery with all routes + keys

    def test_partial_capture_blackout_in_table(self, workdir, capsys):
        tmp, infile, keyfile, _ = workdir
        log = tmp / "run.json"
        main(["simulate", "--in", str(infile), "--n", "3", "--m", "3",
              "--seed", "3", "--capture", "0,1,2", "--log", str(log),
              "--key-file", str(keyfile)])
        capsys.readouterr()
        main(["analyze", "--log", str(log), "--capture", "0,1",
              "--knowledge", "no_keys", "--key-file", str(keyfile)])
        out = capsys.readouterr().out.strip().splitlines()
        assert out[1].split(",")[2] == "0"  # parts_complete


class TestSocketCommands:
    def test_loopback_transfer(self, workdir, capsys):
        tmp, infile, keyfile, payload = workdir
        out = tmp / "recv.bin"
        route_args = []
        for port in (28801, 28802, 28803):
            route_args += ["--route", f"127.0.0.1:{port}"]
        sync_args = ["--sync", "127.0.0.1:28800"]

        recv_code = {}

        def run_recv():
            recv_code["code"] = main(
                ["recv", "--key-file", str(keyfile), "--out", str(out),
                 "--timeout", "15"] + route_args + sync_args)

        t = threading.Thread(target=run_recv)
        t.start()
        import time
        time.sleep(0.4)
        send_code = main(["send", "--key-file", str(keyfile),
                          "--in", str(infile), "--n", "6", "--m", "3",
                          "--timeout", "15", "--packet-size", "16384"]
                         + route_args + sync_args)
        t.join(timeout=30)
        assert send_code == EXIT_OK
        assert recv_code["code"] == EXIT_OK
        assert out.read_bytes() == payload

    def test_send_route_count_mismatch(self, workdir):
        _, infile, keyfile, _ = workdir
        code = main(["send", "--key-file", str(keyfile), "--in", str(infile),
                     "--n", "2", "--m", "3", "--route", "127.0.0.1:1",
                     "--sync", "127.0.0.1:2"])
        assert code == EXIT_CONFIG
