"""One test per acceptance criterion; each prints a single PASS/FAIL/SKIP line.

Criteria 14-16 need a wave that passes the spectral gate. When none does they are
reported as SKIP, provided the growth-match fallback (criterion 13) passes.
"""

import pytest

from perwave.acceptance import CHECKS

_results = {}


def _run(waves, k):
    if k not in _results:
        _results[k] = CHECKS[k](waves)
    return _results[k]


@pytest.mark.parametrize("k", sorted(CHECKS))
def test_criterion(waves, k):
    r = _run(waves, k)
    print("\n" + r.line())
    for label, ok, meas in r.supplementary:
        print(f"      supplementary {label}: {'PASS' if ok else 'FAIL'} {meas}")
    if r.passed is None:
        assert r.gated, "only gated checks may be skipped"
        fallback = _run(waves, 13)
        assert fallback.passed is True, "gate skipped but the growth-match fallback failed"
        pytest.skip(r.detail)
    assert r.passed is True, r.line()


def test_summary(waves):
    lines = [_run(waves, k).line() for k in sorted(CHECKS)]
    print("\n" + "\n".join(lines))
    assert len(lines) == len(CHECKS)
