"""Shared pytest wiring: a per-criterion verdict line for the acceptance suite.

The acceptance tests are named test_criterion_NN_*; after the run one
PASS/FAIL line per criterion is appended to the terminal summary so the
result of each check is visible without digging through the report.
"""

CRITERIA = {
    "01": "causal forward passes: 100 random perturbation trials, bit-identical prefixes",
    "02": "receptive field measurement matches 1 + 2(k-1)(2^L - 1)",
    "03": "finite-difference gradient check < 1e-4 on TCN, attention, LSTM",
    "04": "cross-entropy oracle: uniform loss = ln 5, softmax gradient identity",
    "05": "learnability on rule-generated ticks: TCN > 0.90, LSTM > 0.85",
    "06": "volatility fit recovery over 5 seeds, likelihood vs brute force < 1e-9",
    "07": "direction-probability bridge: sums, calibrated tail, symmetry",
    "08": "coarsening identities over 1000 random prediction sets",
    "09": "never-predicted classes: absent precision, '-' table cells",
    "10": "repeated runs produce byte-identical metric files",
}


def _criterion_key(nodeid: str):
    if "test_acceptance.py" not in nodeid:
        return None
    for key in CRITERIA:
        if f"test_criterion_{key}" in nodeid:
            return key
    return None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = {}
    for status, outcome in (("passed", True), ("failed", False), ("error", False)):
        for report in terminalreporter.stats.get(status, []):
            key = _criterion_key(getattr(report, "nodeid", ""))
            if key is not None:
                verdicts[key] = verdicts.get(key, True) and outcome
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(verdicts):
        word = "PASS" if verdicts[key] else "FAIL"
        terminalreporter.write_line(f"criterion {int(key):2d} {word}  {CRITERIA[key]}")
