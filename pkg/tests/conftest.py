import sys
from pathlib import Path

# make the oracle module importable from every test file
sys.path.insert(0, str(Path(__file__).parent))

from hypothesis import settings

# fixed example sequence: the suite gives the same verdict on every run
settings.register_profile("nvsim", derandomize=True, deadline=None)
settings.load_profile("nvsim")


def pytest_terminal_summary(terminalreporter):
    # the acceptance lines are printed under capture; repeat them here
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
