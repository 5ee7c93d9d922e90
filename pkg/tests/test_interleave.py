"""Exhaustive schedule search over the futex fixtures.

The wait-side check and the sleep transition happen inside one guardian
entry, so no interleaving may drop a wakeup. The lockless variant does the
check in user code first and must lose wakeups under some schedule.
"""

from mpsim import harness


def _scenario(futex):
    sc = dict(harness.corpus()["exhaustive_futex"])
    sc["futex"] = futex
    return sc


def test_correct_futex_has_no_lost_wakeup():
    result = harness.explore(_scenario("correct"), depth=6)
    assert len(result.runs) >= 20
    assert result.violations == []
    for out in result.runs:
        assert out.ended == "quiescent"
        assert out.all_exited
        assert out.blocked == []
        assert out.stdout[1] == b"sync\n"


def test_lockless_variant_loses_wakeups():
    result = harness.explore(_scenario("lockless"), depth=6)
    assert result.violations
    for bad in result.violations:
        assert bad.lost_wakeup
        assert bad.blocked
        assert bad.stdout[1] == b""
    # same search still finds plenty of benign orderings
    assert any(out.all_exited for out in result.runs)


def test_schedule_replay_is_deterministic():
    sc = _scenario("correct")
    probe = harness.explore(sc, depth=4, max_runs=8)
    for out in probe.runs:
        again = harness.run_schedule(sc, out.choices, depth=4)
        assert again.fingerprint == out.fingerprint
        assert again.decisions == out.decisions
        assert again.chosen == out.chosen


def test_prefix_steers_first_decision():
    sc = _scenario("correct")
    base = harness.run_schedule(sc, (), depth=6)
    assert base.decisions, "no branch points found"
    pos = next(i for i, n in enumerate(base.decisions) if n > 1)
    alt_prefix = tuple(base.chosen[:pos]) + (base.chosen[pos] + 1,)
    alt = harness.run_schedule(sc, alt_prefix, depth=6)
    assert alt.chosen[pos] != base.chosen[pos]
