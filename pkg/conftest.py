import pytest

# one human-readable line per gate test, printed after the run
GATE_LABELS = {
    "test_leak_freeness": "leak-freeness: 1000 random trees x 4 modes, 0 violations, <10s",
    "test_conditional_independence": "conditional independence: 500 perturbation triples bit-identical, <60s",
    "test_gradient_correctness": "gradient correctness: full loss, central differences, rel err <1e-4, <5min",
    "test_normalization": "normalization: sum over all captions of exp(score) = 1 +/- 1e-6, <10s",
    "test_scoring_path_equivalence": "scoring paths: level-order == single-pass within 1e-9 on 200 captions, <60s",
    "test_schedule_correctness": "schedule: 1000 trees, levels partition nodes, ancestors strictly earlier",
    "test_desk_scale_learning": "desk-scale learning: trivial-tier accuracy >= 0.95 in 2000 steps, <10min",
    "test_swap_direction": "swap direction: acc(cogt) >= acc(parallel) + 0.10",
    "test_reproducibility": "reproducibility: two seeded CLI runs bit-identical",
    "test_bridge_round_trip": "bridge round-trip: 100 captions parse and re-validate; attributes bind to their nouns",
}

_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.split("::")[-1].split("[")[0]
    if name in GATE_LABELS:
        # keep the worst outcome if a test is parameterized
        prev = _results.get(name)
        if prev != "failed":
            _results[name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance gate")
    for name, label in GATE_LABELS.items():
        if name not in _results:
            continue
        outcome = _results[name]
        tag = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{tag}] {label}")
