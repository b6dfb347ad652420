import numpy as np
import pytest

from casc.qann import build_network


def random_mlp(rng, q, n_hidden=None, width=32, std_scale=1.0):
    n_in = int(rng.integers(1, width + 1))
    n_hidden = int(rng.integers(2, 5)) if n_hidden is None else n_hidden
    layers = []
    fan_in = n_in
    for _ in range(n_hidden):
        out = int(rng.integers(1, width + 1))
        layers.append({"kind": "linear", "out": out, "std": std_scale / np.sqrt(fan_in)})
        fan_in = out
    layers.append({"kind": "linear", "out": int(rng.integers(1, 11)), "std": 1.0 / np.sqrt(fan_in)})
    return build_network((n_in,), layers, q, seed=int(rng.integers(2**31)))


def random_cnn(rng, q):
    c_in = int(rng.integers(1, 3))
    n_conv = int(rng.integers(1, 4))
    layers = []
    c, h = c_in, 8
    for i in range(n_conv):
        out = int(rng.integers(1, 5))
        k = int(rng.choice([1, 3]))
        pad = int(rng.integers(0, 2)) if k == 3 else 0
        if h + 2 * pad < k:
            k, pad = 1, 0
        stride = 1
        layers.append({"kind": "conv2d", "out": out, "k": k, "padding": pad, "stride": stride,
                       "std": 1.0 / np.sqrt(c * k * k)})
        h = (h + 2 * pad - k) // stride + 1
        c = out
        if h % 2 == 0 and h >= 4 and rng.random() < 0.4:
            layers.append({"kind": "avgpool2d", "k": 2})
            h //= 2
    layers.append({"kind": "linear", "out": int(rng.integers(1, 6)), "std": 1.0 / np.sqrt(c * h * h)})
    return build_network((c_in, 8, 8), layers, q, seed=int(rng.integers(2**31)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting: one line per criterion at the end of the run --------

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "N/A "}[rep.outcome]
        if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
            detail = detail or rep.longrepr[2]
        _CRITERIA.append((marker.args[0], status, marker.args[1], detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, title, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"[{status}] {num}. {title}" + (f" -- {detail}" if detail else ""))
