"""Tests for the regulator constructions and the software baselines."""

import random

import pytest

import etmreg.fabric as F
import etmreg.regulators as R
from reference_regulators import (
    TokenBucket,
    drive,
    event_cycle,
    kernel_cycle,
    quiet_cycle,
    user_cycle,
)


def spec(design, budget=27, period=6000):
    return R.RegulatorSpec(design, budget_events=budget, period_cycles=period)


# ---------------------------------------------------------------------------
# construction and resource counts
# ---------------------------------------------------------------------------

def test_pr_uses_six_selectors():
    for design in (R.PR, R.PR_STOP):
        cfg = R.build_pr_config(spec(design))
        assert F.validate_config(cfg).selectors_used == 6


def test_tb_uses_thirteen_selectors():
    for design in (R.TB31, R.TB22, R.TB13):
        cfg = R.build_tb_config(spec(design))
        assert F.validate_config(cfg).selectors_used == 13


def test_pr_and_pr_stop_differ_only_in_budget_input():
    a = R.build_pr_config(spec(R.PR))
    b = R.build_pr_config(spec(R.PR_STOP))
    assert a.selectors == b.selectors
    assert a.sequencer == b.sequencer
    assert a.outputs == b.outputs
    assert a.counter(1) == b.counter(1)
    ca, cb = a.counter(0), b.counter(0)
    assert ca.input != cb.input
    assert (ca.reload_value, ca.self_reload, ca.reload_event) == \
           (cb.reload_value, cb.self_reload, cb.reload_event)


def test_tb_never_uses_trigger_reload():
    for design in (R.TB31, R.TB22, R.TB13):
        cfg = R.build_tb_config(spec(design))
        for c in cfg.counters:
            assert c.self_reload and c.reload_event is None


def test_throttle_state_sets():
    assert spec(R.TB31).throttle_states == frozenset({3})
    assert spec(R.TB22).throttle_states == frozenset({2, 3})
    assert spec(R.TB13).throttle_states == frozenset({1, 2, 3})
    assert spec(R.PR).throttle_states == frozenset({3})
    assert spec(R.PR_USER).throttle_states == frozenset({2, 3})
    # outputs are wired to exactly those state levels
    cfg = R.build_tb_config(spec(R.TB13))
    states = sorted(min(cfg.selectors[o.selector].members)
                    for o in cfg.outputs)
    assert states == [1, 2, 3]


def test_budget_and_period_ranges():
    with pytest.raises(R.RangeError, match="exceeds 16-bit counter"):
        R.build_pr_config(spec(R.PR, budget=70000))
    with pytest.raises(R.RangeError, match="exceeds 16-bit counter"):
        R.build_tb_config(spec(R.TB31, period=70000))
    with pytest.raises(R.RangeError):
        R.build_pr_config(spec(R.PR, budget=0))
    # 65535 is the last valid value on both axes
    R.build_pr_config(spec(R.PR, budget=65535, period=65535))


def test_build_config_dispatch():
    assert R.build_config(spec(R.PR)) == R.build_pr_config(spec(R.PR))
    assert R.build_config(spec(R.TB22)) == R.build_tb_config(spec(R.TB22))
    assert R.build_config(spec(R.PR_USER)) == \
        R.build_pr_user_config(spec(R.PR_USER))
    with pytest.raises(R.RangeError):
        R.build_config(spec(R.MEMGUARD))


def test_custom_signal_set():
    cfg = R.build_pr_config(spec(R.PR), signals=(33,))
    assert cfg.inputs[0].monitored == frozenset({33})
    with pytest.raises(R.RangeError):
        R.build_pr_config(spec(R.PR), signals=(1, 2, 3, 4, 5))


# ---------------------------------------------------------------------------
# PR dynamics
# ---------------------------------------------------------------------------

def test_pr_throttles_on_budget_and_releases_on_period():
    cfg = R.build_pr_config(spec(R.PR, budget=5, period=50))
    stream = []
    for c in range(1, 101):
        stream.append(event_cycle() if c % 4 == 0 and c <= 20 else quiet_cycle())
    log = drive(cfg, stream)
    throttled = [i + 1 for i, (st, out, t) in enumerate(log) if t]
    # the 5th event lands on cycle 20; the period fire on cycle 50 releases
    assert throttled == list(range(20, 50))


def test_pr_overuse_carries_into_next_period():
    q, p, overuse = 50, 1000, 7
    cfg = R.build_pr_config(spec(R.PR, budget=q, period=p))
    stream = []
    # period 1: exhaust the budget, then `overuse` more events while throttled
    stream += [event_cycle()] * q
    stream += [event_cycle()] * overuse
    stream += [quiet_cycle()] * (p - len(stream))
    # period 2: an event per cycle until the regulator throttles again
    stream += [event_cycle()] * (p // 2)
    log = drive(cfg, stream)
    onsets = [i + 1 for i in range(1, len(log))
              if log[i][2] and not log[i - 1][2]]
    assert onsets[0] == q
    # the second onset comes `overuse` events early
    admitted_second = onsets[1] - p
    assert admitted_second == q - overuse


def test_pr_stop_does_not_carry_and_admits_more():
    q, p, overuse = 50, 1000, 7
    stream = []
    stream += [event_cycle()] * (q + overuse)
    stream += [quiet_cycle()] * (p - len(stream))
    stream += [event_cycle()] * (p // 2)
    onsets = {}
    for design in (R.PR, R.PR_STOP):
        cfg = R.build_pr_config(spec(design, budget=q, period=p))
        log = drive(cfg, stream)
        onsets[design] = [i + 1 for i in range(1, len(log))
                          if log[i][2] and not log[i - 1][2]]
    assert onsets[R.PR_STOP][1] - p == q          # full budget again
    assert onsets[R.PR][1] - p == q - overuse     # carry bites
    assert onsets[R.PR][1] < onsets[R.PR_STOP][1]


def test_pr_small_budget_wraps_overuse():
    # overuse beyond a whole budget wraps: only (overuse mod budget) carries
    q, p, overuse = 5, 400, 12
    cfg = R.build_pr_config(spec(R.PR, budget=q, period=p))
    stream = []
    stream += [event_cycle()] * (q + overuse)
    stream += [quiet_cycle()] * (p - len(stream))
    stream += [event_cycle()] * 40
    log = drive(cfg, stream)
    onsets = [i + 1 for i in range(1, len(log))
              if log[i][2] and not log[i - 1][2]]
    assert onsets[1] - p == q - (overuse % q)


# ---------------------------------------------------------------------------
# TB dynamics
# ---------------------------------------------------------------------------

def test_tb_matches_token_bucket_oracle():
    rng = random.Random(61)
    for design in (R.TB31, R.TB22, R.TB13):
        for _ in range(12):
            q = rng.randint(2, 30)
            p = rng.randint(3, 120)
            cfg = R.build_tb_config(spec(design, budget=q, period=p))
            ref = TokenBucket(q, p)
            st = F.reset_fabric(cfg)
            density = rng.choice((0.1, 0.4, 0.9))
            thr_len = len(spec(design).throttle_states)
            for _ in range(500):
                ev = rng.random() < density
                st, out = F.step_fabric(
                    cfg, st, event_cycle() if ev else quiet_cycle())
                ref.step(ev)
                got = (st.sequencer_state,) + st.counter_values
                assert got == ref.expected()
                throttled = any(out.output_levels[1:])
                assert throttled == (ref.debt >= 4 - thr_len)


def test_tb_headroom_orders_the_variants():
    # from an idle bucket, a dense burst is admitted until the debt reaches
    # the variant's throttle region: 3, 2, 1 whole budgets
    q, p = 10, 5000
    admitted = {}
    for design in (R.TB31, R.TB22, R.TB13):
        cfg = R.build_tb_config(spec(design, budget=q, period=p))
        log = drive(cfg, [event_cycle()] * 60)
        first = next(i for i, (st, out, t) in enumerate(log) if t)
        admitted[design] = first + 1
    assert admitted == {R.TB31: 3 * q, R.TB22: 2 * q, R.TB13: q}


def test_tb_debt_saturates():
    q, p = 3, 7
    cfg = R.build_tb_config(spec(R.TB31, budget=q, period=p))
    log = drive(cfg, [event_cycle()] * 200)
    # saturated bucket: each grant pays one step back, events refill it
    # within a budget's worth of cycles; debt never leaves the top states
    states = {st.sequencer_state for st, out, t in log[50:]}
    assert states == {2, 3}
    # and a long quiet stretch pays all debt back without undershoot
    log = drive(cfg, [event_cycle()] * 100 + [quiet_cycle()] * 200)
    assert log[-1][0].sequencer_state == 0


# ---------------------------------------------------------------------------
# PR_USER dynamics
# ---------------------------------------------------------------------------

def test_pr_user_ignores_kernel_mode_events():
    cfg = R.build_pr_user_config(spec(R.PR_USER, budget=5, period=500))
    # enter the user state, return to kernel (the state tracks the fetch
    # stream with a one-cycle lag), then feed events from kernel mode only
    stream = ([user_cycle(), kernel_cycle()]
              + [kernel_cycle(event=True)] * 20 + [user_cycle()])
    log = drive(cfg, stream)
    assert not any(t for st, out, t in log)
    assert log[-1][0].counter_values[0] == 5   # budget untouched
    # 5 events in user mode now throttle exactly
    stream += [user_cycle(event=True)] * 5 + [user_cycle()] * 3
    log = drive(cfg, stream)
    throttled_from = next(i for i, (st, out, t) in enumerate(log) if t)
    assert throttled_from == len(stream) - 4   # the 5th user event
    assert log[throttled_from][0].sequencer_state == 2


def test_pr_user_replenish_resets_then_first_fetch_restores():
    q, p = 4, 60
    cfg = R.build_pr_user_config(spec(R.PR_USER, budget=q, period=p))
    stream = [user_cycle()]                    # settle into state 1 first
    stream += [user_cycle(event=True)] * q     # exhaust -> state 2
    stream += [kernel_cycle()] * 2             # over budget, kernel: state 3
    stream += [user_cycle()] * (p - len(stream) + 1)
    log = drive(cfg, stream)
    assert log[q][0].sequencer_state == 2      # the q-th counted event
    assert log[q][2]
    assert log[q + 1][0].sequencer_state == 3
    assert log[q + 1][2]
    assert log[p - 1][0].sequencer_state == 0  # replenish: (2 or 3) -> 0
    assert not log[p - 1][2]                   # throttle drops with the reset
    assert log[p][0].sequencer_state == 1      # next user fetch
    assert not log[p][2]


def test_pr_user_equals_pr_on_all_user_streams():
    q, p, periods = 20, 400, 12
    rng = random.Random(5)
    pr = R.build_pr_config(spec(R.PR, budget=q, period=p))
    pu = R.build_pr_user_config(spec(R.PR_USER, budget=q, period=p))
    # events never land on the cycle right after a replenish boundary, where
    # the user design sits in state 0 for one fetch
    stream = []
    for c in range(1, p * periods + 1):
        ev = rng.random() < 0.12 and c % p != 1
        stream.append(user_cycle(event=ev))
    log_pr = drive(pr, stream)
    log_pu = drive(pu, stream)
    assert [t for _, _, t in log_pr] == [t for _, _, t in log_pu]
    # budget counters stay in lockstep as well
    assert [st.counter_values[0] for st, _, _ in log_pr] == \
           [st.counter_values[0] for st, _, _ in log_pu]


# ---------------------------------------------------------------------------
# MemGuard baseline
# ---------------------------------------------------------------------------

def test_memguard_interrupts_every_period_even_when_quiet():
    cfg = R.MemGuardConfig(budget_events=100, period_cycles=1000)
    st = R.memguard_reset(cfg)
    for cycle in range(1, 10001):
        st, throttled = R.memguard_step(cfg, st, 0, cycle)
        assert not throttled
    assert st.irq_count == 10


def test_memguard_throttles_until_boundary():
    cfg = R.MemGuardConfig(budget_events=5, period_cycles=1000)
    st = R.memguard_reset(cfg)
    history = []
    for cycle in range(1, 2001):
        delta = 1 if cycle in (10, 20, 30, 40, 50) else 0
        st, throttled = R.memguard_step(cfg, st, delta, cycle)
        history.append(throttled)
    assert history[49] and all(history[50:999])
    assert not history[999]            # boundary replenish at cycle 1000
    assert not any(history[1000:])
    # one overflow + two timer interrupts
    assert st.irq_count == 3


def test_memguard_drain_events_not_charged_while_throttled():
    cfg = R.MemGuardConfig(budget_events=3, period_cycles=100)
    st = R.memguard_reset(cfg)
    st, throttled = R.memguard_step(cfg, st, 3, 10)
    assert throttled
    st, throttled = R.memguard_step(cfg, st, 7, 20)   # write-buffer drain
    assert throttled and st.remaining == 0
    st, throttled = R.memguard_step(cfg, st, 0, 100)
    assert not throttled and st.remaining == 3


# ---------------------------------------------------------------------------
# MemPol baseline
# ---------------------------------------------------------------------------

def test_mempol_below_budget_never_halts():
    cfg = R.MemPolConfig(budget_events=800, poll_cycles=625, window_size=8)
    st = R.mempol_reset(cfg)
    pmc = 0
    for cycle in range(1, 50001):
        pmc += 1 if cycle % 10 == 0 else 0     # 100 events per window
        st, halt = R.mempol_step(cfg, st, pmc, cycle)
        assert not halt


def test_mempol_burst_overshoots_at_least_one_poll():
    cfg = R.MemPolConfig(budget_events=100, poll_cycles=625, window_size=8)
    st = R.mempol_reset(cfg)
    pmc = 0
    first_halt = None
    for cycle in range(1, 20001):
        if cycle > 625:                        # burst starts just after poll 1
            pmc += 1                           # one event per cycle
        st, halt = R.mempol_step(cfg, st, pmc, cycle)
        if halt and first_halt is None:
            first_halt = cycle
            break
    assert first_halt is not None
    overshoot = pmc                            # events before the halt landed
    assert overshoot >= 1 * 625                # >= peak_rate x poll interval


def test_mempol_resumes_when_window_drains():
    cfg = R.MemPolConfig(budget_events=50, poll_cycles=100, window_size=8)
    st = R.mempol_reset(cfg)
    pmc = 0
    halted_cycles = []
    for cycle in range(1, 5001):
        if cycle <= 300:
            pmc += 1
        st, halt = R.mempol_step(cfg, st, pmc, cycle)
        if halt:
            halted_cycles.append(cycle)
    assert halted_cycles
    # the window forgets the burst after 8 quiet polls, so the halt lifts
    assert halted_cycles[-1] < 300 + 9 * 100
    assert not halt
