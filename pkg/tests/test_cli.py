import signal
import socket
import subprocess
import sys
import time

import pytest

SCENARIO = """\
mode = sync
selector = all
policy = fedavg
rounds = 5
epochs_per_round = 2
batch_size = 20
data.n_classes = 3
data.samples_per_class = 20
data.spread = 0.25
test.samples_per_class = 30
learning_rate = 0.1
worker.1 = speed=1, transmit=0.05, batches=1
worker.2 = speed=2, transmit=0.05, batches=1
worker.3 = speed=4, transmit=0.05, batches=1
"""

WORKER = """\
role = worker
host = 127.0.0.1
msg_port = {msg_port}
blob_port = {blob_port}
learning_rate = 0.1
seed = 1
data.n_classes = 3
data.samples_per_class = 20
data.spread = 0.25
data.seed = 4
partition.batches = 1,1,1
partition.batch_size = 20
partition.seed = 4
shard_index = 0
"""


def fedloom(*args, **kwargs):
    return subprocess.run([sys.executable, "-m", "fedloom.cli", *args],
                          capture_output=True, text=True, timeout=120, **kwargs)


def free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestSimulate:
    def test_scenario_file_outputs(self, tmp_path):
        scen = tmp_path / "scen.cfg"
        scen.write_text(SCENARIO)
        out = tmp_path / "runs"
        result = fedloom("simulate", "--scenario", str(scen),
                         "--seeds", "1,2,3", "--out", str(out))
        assert result.returncode == 0, result.stderr
        csvs = sorted(p.name for p in out.glob("*.csv"))
        assert csvs == ["scen_seed1.csv", "scen_seed2.csv", "scen_seed3.csv",
                        "scen_summary.csv"]
        summary = (out / "scen_summary.csv").read_text().splitlines()
        assert summary[0] == "scenario,seed,time_to_target,final_accuracy,rounds"
        assert len(summary) == 4

    def test_rerun_byte_identical(self, tmp_path):
        scen = tmp_path / "scen.cfg"
        scen.write_text(SCENARIO)
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            result = fedloom("simulate", "--scenario", str(scen), "--seeds", "7",
                             "--out", str(out))
            assert result.returncode == 0, result.stderr
            outputs.append((out / "scen_seed7.csv").read_bytes()
                           + (out / "scen_summary.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_builtin_sequential_baseline(self, tmp_path):
        result = fedloom("simulate", "--scenario", "table4_1_row1", "--seeds", "1",
                         "--out", str(tmp_path), "--target", "0.5")
        assert result.returncode == 0, result.stderr
        text = (tmp_path / "table4_1_row1_seed1.csv").read_text()
        lines = text.splitlines()
        assert lines[0].startswith("round,")
        # sequential baseline: the single data holder is the whole selected set
        assert all(line.split(",")[4] == "w01" for line in lines[1:])

    def test_invalid_scenario_exits_2(self, tmp_path):
        result = fedloom("simulate", "--scenario", "no_such_scenario", "--seeds", "1")
        assert result.returncode == 2
        bad = tmp_path / "bad.cfg"
        bad.write_text("mode = sync\nworker.1 = speed=oops\n")
        result = fedloom("simulate", "--scenario", str(bad), "--seeds", "1")
        assert result.returncode == 2


class TestReport:
    def test_pairs_and_summary(self, tmp_path):
        scen = tmp_path / "scen.cfg"
        scen.write_text(SCENARIO)
        fedloom("simulate", "--scenario", str(scen), "--seeds", "1", "--out", str(tmp_path))
        result = fedloom("report", "--records", str(tmp_path / "scen_seed1.csv"),
                         "--target", "0.5")
        assert result.returncode == 0
        lines = result.stdout.strip().splitlines()
        assert lines[-1].startswith("time_to_accuracy:")
        pairs = [line.split() for line in lines[:-1]]
        assert len(pairs) == 5
        times = [float(t) for t, _ in pairs]
        assert times == sorted(times)

    def test_unreached(self, tmp_path):
        scen = tmp_path / "scen.cfg"
        scen.write_text(SCENARIO)
        fedloom("simulate", "--scenario", str(scen), "--seeds", "1", "--out", str(tmp_path))
        result = fedloom("report", "--records", str(tmp_path / "scen_seed1.csv"),
                         "--target", "1.01")
        assert result.stdout.strip().endswith("unreached")

    def test_unparseable_exits_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("this is not telemetry\n")
        assert fedloom("report", "--records", str(bad), "--target", "0.5").returncode == 2


class TestServeAndWork:
    def test_malformed_server_config_exits_2(self, tmp_path):
        cfg = tmp_path / "server.cfg"
        cfg.write_text("role = server\nmode = sideways\n")
        result = fedloom("serve", "--config", str(cfg))
        assert result.returncode == 2
        assert "mode" in result.stderr

    def test_malformed_worker_config_exits_2(self, tmp_path):
        cfg = tmp_path / "worker.cfg"
        cfg.write_text("role = worker\nmsg_port = lots\n")
        assert fedloom("work", "--config", str(cfg)).returncode == 2

    def test_worker_port_conflict_exits_4(self, tmp_path):
        with socket.socket() as sock:
            sock.bind(("127.0.0.1", 0))
            port = sock.getsockname()[1]
            cfg = tmp_path / "worker.cfg"
            cfg.write_text(WORKER.format(msg_port=port, blob_port=0))
            result = fedloom("work", "--config", str(cfg))
        assert result.returncode == 4

    def test_worker_sigterm_clean_exit(self, tmp_path):
        cfg = tmp_path / "worker.cfg"
        cfg.write_text(WORKER.format(msg_port=free_port(), blob_port=free_port()))
        proc = subprocess.Popen([sys.executable, "-m", "fedloom.cli", "work",
                                 "--config", str(cfg)],
                                stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        try:
            line = proc.stdout.readline()
            assert "worker listening" in line
            proc.send_signal(signal.SIGTERM)
            assert proc.wait(timeout=10) == 0
        finally:
            if proc.poll() is None:
                proc.kill()
