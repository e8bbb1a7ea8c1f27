"""The CLI's --server mode against a real HTTP server."""

import json
import socket
import threading
import time

import httpx
import pytest
import uvicorn
from click.testing import CliRunner

from muonadapt.cli import main
from muonadapt.service import app


@pytest.fixture(scope="module")
def server_url():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{port}"
    for _ in range(100):
        try:
            if httpx.get(url + "/healthz", timeout=1.0).status_code == 200:
                break
        except httpx.HTTPError:
            time.sleep(0.05)
    else:
        pytest.fail("server did not come up")
    yield url
    server.should_exit = True
    thread.join(timeout=5)


def test_compose_over_http(server_url):
    runner = CliRunner()
    result = runner.invoke(main, ["--server", server_url, "compose",
                                  "--ell", "1e-3", "--steps", "3"])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert len(doc["triplets"]) == 3


def test_stable_lr_over_http(server_url):
    runner = CliRunner()
    result = runner.invoke(main, ["--server", server_url, "stable-lr",
                                  "--n-billions", "1", "--d-billions", "1"])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["eta_stable"] == pytest.approx(38.4588e-4)
