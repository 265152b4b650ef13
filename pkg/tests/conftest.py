import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mockssh import MockConfig, MockSSHServer, generate_key  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def host_keys(tmp_path_factory):
    """ed25519, rsa and ecdsa-nistp256 keys generated by ssh-keygen."""
    if shutil.which("ssh-keygen") is None:
        pytest.skip("ssh-keygen not available")
    d = tmp_path_factory.mktemp("hostkeys")
    return {
        "ssh-ed25519": generate_key(d, "ed25519"),
        "ssh-rsa": generate_key(d, "rsa", 2048),
        "ecdsa-sha2-nistp256": generate_key(d, "ecdsa", 256),
    }


@pytest.fixture
def mock_server(host_keys):
    """Factory: ``with mock_server(keys=[...], **config) as server``."""

    def make(listeners: int = 1, keys=("ssh-ed25519",), **kwargs):
        cfg = MockConfig(keys=[host_keys[k] for k in keys], **kwargs)
        return MockSSHServer(cfg, listeners=listeners)

    return make


ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.failed):
        ACCEPTANCE_RESULTS[label] = "PASS" if report.passed else "FAIL"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split(".")[0])):
        terminalreporter.write_line(f"{ACCEPTANCE_RESULTS[label]}  {label}")
