"""Shared pytest config: a per-criterion summary for the acceptance gate.

Acceptance tests are named ``test_criterion_<NN>_<slug>``; after the run we
print one PASS/FAIL line per criterion so the gate is readable at a glance.
"""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[int, tuple[str, str]] = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m and getattr(rep, "when", "call") in ("call", "setup"):
                num = int(m.group(1))
                slug = m.group(2).replace("_", " ")
                # A failed setup/teardown must not overwrite a failed call,
                # and FAIL wins over PASS for the same criterion.
                if results.get(num, ("", "PASS"))[1] != "FAIL":
                    results[num] = (slug, label)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(results):
        slug, label = results[num]
        terminalreporter.write_line(f"criterion {num}: {label} — {slug}")
