from __future__ import annotations

import threading

import pytest
from hypothesis import HealthCheck, settings

from tests.stub_server import StubHandler, make_stub_server

settings.register_profile(
    "capdet",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("capdet")


@pytest.fixture
def stub_server():
    """A live deterministic model-service stub on an ephemeral port."""
    server = make_stub_server()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


@pytest.fixture
def stub_url(stub_server):
    host, port = stub_server.server_address[:2]
    return f"http://127.0.0.1:{port}"


@pytest.fixture(autouse=True)
def _reset_stub_state():
    StubHandler.reset_defaults()
    yield
    StubHandler.reset_defaults()
