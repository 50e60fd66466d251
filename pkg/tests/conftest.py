import sys


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, collected by test_acceptance.py
    for name, mod in list(sys.modules.items()):
        if name.rsplit(".", 1)[-1] == "test_acceptance" and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.RESULTS:
                terminalreporter.write_line(line)
