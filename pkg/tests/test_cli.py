import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from rdaudit import cli, store

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("REMOTE_AUDIT_STORE", raising=False)
    monkeypatch.delenv("REMOTE_AUDIT_USER", raising=False)
    data = tmp_path / "f.bin"
    data.write_bytes(os.urandom(3000))
    return tmp_path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_upload_audit_accepts(env, capsys):
    assert run(capsys, "upload", "f.bin")[0] == 0
    code, out, _ = run(capsys, "audit", "f.bin", "-c", 10, "--seed", 1)
    assert code == 0 and out.strip() == "data not modified"
    assert (env / "audit-store" / "tpa" / "state.json").is_file()


def test_corrupt_then_verify_block(env, capsys):
    run(capsys, "upload", "f.bin")
    assert run(capsys, "verify-block", "f.bin", 0)[1].strip() == "data not modified"
    assert run(capsys, "corrupt", "f.bin", 0, 3)[0] == 0
    code, out, _ = run(capsys, "verify-block", "f.bin", 0)
    assert code == 1 and out.strip() == "data modified"
    code, out, err = run(capsys, "audit", "f.bin", "-c", 1000)
    assert code == 1 and out.strip() == "data modified" and "equation" in err


def test_log_formats(env, capsys):
    run(capsys, "upload", "f.bin")
    run(capsys, "download", "f.bin", "-o", "back.bin")
    assert (env / "back.bin").read_bytes() == (env / "f.bin").read_bytes()
    code, out, _ = run(capsys, "log", "f.bin", "--format", "csv")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "UserName,Action,File Name,Date,Time"
    assert [l.split(",")[1] for l in lines[1:]] == ["upload", "download"]
    code, out, _ = run(capsys, "log")
    assert "Download" in out and out.startswith("UserName")


def test_update_and_download(env, capsys):
    run(capsys, "upload", "f.bin")
    code, out, _ = run(capsys, "update", "f.bin", "insert_after", -1, "--text", "head")
    assert code == 0 and "accepted" in out
    code, _, _ = run(capsys, "update", "f.bin", "delete", 3)
    assert code == 0
    assert run(capsys, "audit", "f.bin", "-c", 50)[0] == 0
    assert run(capsys, "download", "f.bin", "-o", "x")[0] == 0
    assert run(capsys, "update", "f.bin", "delete", 99999)[0] == 2
    assert run(capsys, "update", "f.bin", "modify", 0)[0] == 2


def test_batch_audit(env, capsys):
    run(capsys, "upload", "f.bin", "--user", "a")
    run(capsys, "upload", "f.bin", "--user", "b")
    code, out, _ = run(capsys, "batch-audit", "a:f.bin", "b:f.bin", "--seed", 2)
    assert code == 0 and '"verdict":"all_accept"' in out
    run(capsys, "corrupt", "f.bin", 1, 0, "--user", "b")
    code, out, _ = run(capsys, "batch-audit", "a:f.bin", "b:f.bin", "-c", 1000)
    assert code == 1 and '"culprits":[1]' in out


def test_usage_errors(env, capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "audit", "missing.bin")[0] == 2
    assert run(capsys, "download", "f.bin")[0] == 2  # unknown user
    assert run(capsys, "--help")[0] == 0


def test_io_error(env, capsys):
    assert run(capsys, "upload", "no-such-file")[0] == 3


def test_corrupt_store_exit_3(env, capsys):
    run(capsys, "upload", "f.bin")
    tags = next((env / "audit-store" / "server" / "files").iterdir()) / "tags"
    victim = sorted(tags.iterdir())[0]
    victim.write_text("junk")
    code, _, err = run(capsys, "audit", "f.bin")
    assert code == 3 and victim.stem in err


def test_keygen_and_env_vars(env, capsys, monkeypatch):
    monkeypatch.setenv("REMOTE_AUDIT_STORE", str(env / "elsewhere"))
    monkeypatch.setenv("REMOTE_AUDIT_USER", "carol")
    code, out, _ = run(capsys, "keygen", "--sectors", 4)
    assert code == 0 and "carol" in out and "s=4" in out
    assert (env / "elsewhere" / "client" / "carol" / "state.json").is_file()
    assert run(capsys, "keygen")[0] == 2
    assert run(capsys, "keygen", "--force")[0] == 0
    # --store overrides the environment
    run(capsys, "upload", "f.bin", "--store", env / "flagged")
    assert (env / "flagged" / "client" / "carol").is_dir()


def test_config_file(env, capsys):
    (env / "tuned.conf").write_text("sectors=4\nchallenge_size=3\n")
    run(capsys, "upload", "f.bin", "--config", "tuned.conf")
    h = store.load(env / "audit-store")
    assert h.clients["user"].public_key.s == 4
    run(capsys, "audit", "f.bin", "--config", "tuned.conf")
    assert store.load(env / "audit-store").tpa.records[-1].c == 3
    (env / "bad.conf").write_text("colour=blue\n")
    assert run(capsys, "audit", "f.bin", "--config", "bad.conf")[0] == 2


def test_replay_session(env, capsys):
    script = ROOT / "sessions" / "log_history.txt"
    code, out, _ = run(capsys, "replay", script, "--persist")
    assert code == 0
    csv_lines = [l for l in out.splitlines() if l.startswith("hema,")]
    assert len(csv_lines) == 14
    code, out, _ = run(capsys, "log", "--format", "csv", "--user", "hema")
    assert len(out.splitlines()) == 15
    (env / "bad.txt").write_text("user u\nwhat\n")
    assert run(capsys, "replay", "bad.txt")[0] == 2


def _cli(*args, cwd, env_extra=None):
    e = dict(os.environ, **(env_extra or {}))
    return subprocess.run([sys.executable, "-m", "rdaudit", *map(str, args)], cwd=cwd, env=e,
                          capture_output=True, text=True, timeout=60)


def test_serve_and_remote_audit(env):
    server_store, tpa_store = env / "srv", env / "tpa"
    assert _cli("upload", "f.bin", "--store", server_store, cwd=env).returncode == 0
    proc = subprocess.Popen([sys.executable, "-m", "rdaudit", "serve", "--port", "0", "--store", server_store],
                            cwd=env, stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on ")
        endpoint = line.split()[-1]
        # the auditor's store holds only the registry and client state, copied over
        shutil.copytree(server_store / "client", tpa_store / "client")
        shutil.copytree(server_store / "tpa", tpa_store / "tpa")
        r = _cli("audit", "f.bin", "--remote", endpoint, "--store", tpa_store, "--seed", 3, cwd=env)
        assert r.returncode == 0 and r.stdout.strip() == "data not modified"
        assert not (tpa_store / "server" / "files").exists()
    finally:
        proc.terminate()
        proc.wait(10)


def test_module_entry_point_exit_code(env):
    r = _cli("audit", "nothing", cwd=env)
    assert r.returncode == 2 and "error" in r.stderr
