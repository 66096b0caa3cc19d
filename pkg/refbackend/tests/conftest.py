import json
import subprocess
import sys

import pytest

from aimcot.backend.sim import default_spec


class ServerProc:
    """Drive a spawned reference backend line by line."""

    def __init__(self, spec_path: str):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "refbackend", "--spec", spec_path],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )

    def send_raw(self, line: str) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def send(self, message: dict) -> None:
        self.send_raw(json.dumps(message))

    def read(self) -> dict:
        assert self.proc.stdout is not None
        line = self.proc.stdout.readline()
        assert line, "server closed the stream"
        return json.loads(line)

    def call(self, message: dict) -> dict:
        self.send(message)
        return self.read()

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)


@pytest.fixture
def spec_path(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(default_spec().to_dict()), encoding="utf-8")
    return str(path)


@pytest.fixture
def server(spec_path):
    proc = ServerProc(spec_path)
    yield proc
    proc.close()


@pytest.fixture
def initialized(server):
    reply = server.call({"id": 0, "op": "init", "config": {"protocol": 1}})
    assert reply["ok"]
    return server
