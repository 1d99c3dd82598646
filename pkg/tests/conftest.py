import pytest

_ACCEPTANCE = {}


class _Checks(list):
    def __call__(self, label, ok, detail=""):
        self.append((label, bool(ok), detail))

    def verify(self):
        failed = [c[0] for c in self if not c[1]]
        assert not failed, f"failed checks: {failed}"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.call_passed = rep.passed


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    checks = _Checks()
    yield checks
    number = request.node.get_closest_marker("criterion").args[0]
    ok = getattr(request.node, "call_passed", False) and all(c[1] for c in checks)
    details = "; ".join(f"{'ok' if c[1] else 'FAILED'} {c[0]}" + (f" ({c[2]})" if c[2] else "")
                        for c in checks)
    if not getattr(request.node, "call_passed", False) and all(c[1] for c in checks):
        details += "; raised before completing"
    _ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} - {details}"
    print(_ACCEPTANCE[number])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.addinivalue_line("markers", "acceptance: acceptance gate")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
