import numpy as np
import pytest


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    """Max absolute deviation relative to the gradient's scale."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance bookkeeping ---------------------------------------------------
# Each acceptance check records (criterion, ok, detail); a criterion passes
# only if every one of its checks did. The summary prints one line each.

ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}
TITLES = {
    1: "gradient correctness",
    2: "loss value oracles",
    3: "metric oracles",
    4: "hungarian correctness",
    5: "synthetic benchmark gains",
    6: "within/between direction",
    7: "ablation direction",
    8: "cluster-count estimation",
    9: "invariant suite",
}


def record(criterion: int, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"criterion {criterion} [{'PASS' if ok else 'FAIL'}] {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[c]
        ok = all(flag for flag, _ in checks)
        failed = [d for flag, d in checks if not flag]
        line = f"criterion {c} ({TITLES.get(c, '')}): {'PASS' if ok else 'FAIL'} ({len(checks)} checks"
        line += ")" if ok else f", {len(failed)} failed; first: {failed[0]})"
        tr.write_line(line)
