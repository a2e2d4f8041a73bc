"""Cycle-stepped model of cores, memory subsystem, and attached regulators.

One simulated cycle advances in a fixed order:

  1. the shared memory controller grants cacheline slots (bandwidth
     accumulates in 32.32 fixed point; round-robin across requesting cores;
     within a core, ready reads are served before buffered write-backs)
  2. each core retires its grants (a write-back retirement pulses the
     write-back signals), runs its interrupt state machine against the
     previous cycle's throttle level, and issues new work (an issued
     refill pulses the refill signals immediately)
  3. each core's regulator observes the cycle: the trace-unit fabric steps
     on the pulse/fetch inputs, or a software baseline updates
  4. window, period, and aggregate statistics are updated

Cores stall on read_outstanding / write_buffer_depth backpressure.  A
throttle level raises an interrupt after irq_latency_cycles; the handler
charges an entry cost, issues its own kernel-mode memory traffic, polls the
throttle level every handler_poll_cycles, and pays an exit cost once the
level drops.  The workload issues nothing from handler entry to handler
exit, but in-flight transactions keep draining and keep pulsing — the gap
between "throttle asserted" and "traffic actually stops" is the point of
the model.  Timer-replenished regulators additionally run their handler at
every period boundary, throttled or not.

Long pulse-free stretches (throttle stalls, idle phases, compute-bound
spans) are fast-forwarded: a one-cycle probe confirms the attached fabric
is only counting down linearly, and the run then jumps to the next deadline
(counter crossing, in-flight completion, handler phase end, poll, period
boundary, window edge, trace record).  `run_system(cfg, use_hops=False)`
disables the jumps; both paths must produce identical results.
"""

from dataclasses import dataclass
from typing import Optional

from . import fabric as F
from . import regulators as REG


# =========================================================================
# configuration types
# =========================================================================

OP_READ = "read"
OP_PREFETCH = "prefetch"
OP_WRITE = "write"
OP_MODIFY = "modify"
_OPS = (OP_READ, OP_PREFETCH, OP_WRITE, OP_MODIFY)

_BIG = 1 << 62
_FP = 32                        # fixed-point fraction bits for bandwidth
_FP_ONE = 1 << _FP


@dataclass(frozen=True)
class CoreModelConfig:
    """Timing/capacity parameters of one core and its path to memory."""
    core_type: str = "cortex-a53"
    freq_mhz: int = 1200
    irq_latency_cycles: int = 81
    read_outstanding: int = 8
    write_buffer_depth: int = 20
    mem_latency_cycles: int = 40
    handler_entry_cycles: int = 30
    handler_poll_cycles: int = 20
    handler_exit_cycles: int = 20
    handler_kernel_events: int = 2
    cacheline_bytes: int = 64
    refill_signals: frozenset = frozenset({21})
    wb_signals: frozenset = frozenset({22})

    def __post_init__(self):
        object.__setattr__(self, "refill_signals",
                           frozenset(self.refill_signals))
        object.__setattr__(self, "wb_signals", frozenset(self.wb_signals))
        if self.freq_mhz <= 0:
            raise ValueError("freq_mhz must be positive")
        if self.read_outstanding < 1 or self.write_buffer_depth < 1:
            raise ValueError("need at least one read slot and buffer entry")
        if self.handler_poll_cycles < 1:
            raise ValueError("handler_poll_cycles must be >= 1")
        if self.cacheline_bytes < 1:
            raise ValueError("cacheline_bytes must be >= 1")
        for name in ("irq_latency_cycles", "mem_latency_cycles",
                     "handler_entry_cycles", "handler_exit_cycles",
                     "handler_kernel_events"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)


@dataclass(frozen=True)
class Synthetic:
    """Endless stream of one access type over a region."""
    op: str
    region_bytes: int = 1 << 20
    issue_ipc_limit: float = 1.0

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError("unknown op %r" % (self.op,))
        if self.issue_ipc_limit < 0:
            raise ValueError("issue_ipc_limit must be >= 0")
        if self.region_bytes <= 0:
            raise ValueError("region_bytes must be positive")


@dataclass(frozen=True)
class Burst:
    """Repeating pattern of (op, bytes, idle_cycles) phases.

    Idle phases spin in user mode by default (the core keeps fetching and
    the attached fabric keeps counting); with wfi_idle=True they are
    architecturally idle and the fabric freezes for their duration.
    """
    pattern: tuple
    wfi_idle: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pattern",
                           tuple(tuple(p) for p in self.pattern))
        if not self.pattern:
            raise ValueError("burst pattern is empty")
        busy = False
        for op, nbytes, idle in self.pattern:
            if op not in _OPS:
                raise ValueError("unknown op %r" % (op,))
            if nbytes < 0 or idle < 0:
                raise ValueError("negative burst phase")
            busy = busy or nbytes > 0 or idle > 0
        if not busy:
            raise ValueError("burst pattern is all zero")


@dataclass(frozen=True)
class TraceReplay:
    """Scripted pulse stream of (cycle_delta, signal set, exec mode)
    records.  Replay cores drive the attached fabric directly and never
    touch the memory controller."""
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))


class ParseError(ValueError):
    def __init__(self, message, line):
        super().__init__("line %d: %s" % (line, message))
        self.line = line


# symbolic signal names accepted in trace files
TRACE_SIGNALS = {"REFILL": 21, "WB": 22}


def load_trace(path, signal_names=None) -> TraceReplay:
    """Parse `cycle_delta,SIGNAL[|SIGNAL...][,user|kernel]` lines."""
    names = dict(TRACE_SIGNALS if signal_names is None else signal_names)
    records = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (2, 3):
                raise ParseError("expected 2 or 3 fields, got %d"
                                 % len(parts), lineno)
            try:
                delta = int(parts[0])
            except ValueError:
                raise ParseError("bad cycle delta %r" % parts[0], lineno)
            if delta < 0:
                raise ParseError("negative cycle delta", lineno)
            sigs = set()
            if parts[1]:
                for tok in parts[1].split("|"):
                    tok = tok.strip()
                    if tok.isdigit():
                        sigs.add(int(tok))
                    elif tok in names:
                        sigs.add(names[tok])
                    else:
                        raise ParseError("unknown signal %r" % tok, lineno)
            if not sigs:
                raise ParseError("record has no signals", lineno)
            mode = F.USER
            if len(parts) == 3:
                if parts[2] not in (F.USER, F.KERNEL):
                    raise ParseError("bad mode %r" % parts[2], lineno)
                mode = parts[2]
            records.append((delta, frozenset(sigs), mode))
    return TraceReplay(records=tuple(records))


@dataclass(frozen=True)
class CoreSpec:
    """One core of the system: timing model, workload, optional regulator
    (None, an EtmConfig, a MemGuardConfig, or a MemPolConfig)."""
    model: CoreModelConfig
    workload: object
    regulator: Optional[object] = None


@dataclass(frozen=True)
class SystemConfig:
    cores: tuple
    shared_mem_bandwidth: float     # cachelines per cycle at the controller
    duration_cycles: int
    seed: int = 0                   # recorded; current workloads are exact
    window_cycles: int = 0          # 0 -> one millisecond at core 0's clock

    def __post_init__(self):
        object.__setattr__(self, "cores", tuple(self.cores))
        if not self.cores:
            raise ValueError("need at least one core")
        if self.duration_cycles <= 0:
            raise ValueError("duration_cycles must be positive")
        if self.shared_mem_bandwidth <= 0:
            raise ValueError("shared_mem_bandwidth must be positive")


# =========================================================================
# run results
# =========================================================================

@dataclass(frozen=True)
class CoreStats:
    issued_lines: int
    completed_lines: int
    kernel_lines: int           # handler-caused traffic, part of the above
    pmc_events: int             # per-signal event count (PMU adder view)
    tap_events: int             # cycles with >= 1 monitored signal (tap view)
    throttled_cycles: int
    throttle_entries: int
    irq_count: int
    handler_cycles: int
    idle_cycles: int


@dataclass(frozen=True)
class PeriodRecord:
    """One regulator period: events observed and whether it throttled."""
    pmc_events: int
    tap_events: int
    throttled: bool


@dataclass(frozen=True)
class SystemTrace:
    duration_cycles: int
    window_cycles: int
    windows: tuple              # per core: tuple of completed lines/window
    window_events: tuple        # per core: tuple of monitored events/window
    stats: tuple                # per core: CoreStats
    periods: tuple              # per core: tuple of PeriodRecord (fabric only)
    total_granted: int

    def achieved_mbps(self, core_index, freq_mhz, cacheline_bytes=64):
        lines = self.stats[core_index].completed_lines
        seconds = self.duration_cycles / (freq_mhz * 1e6)
        return lines * cacheline_bytes / seconds / 1e6


# =========================================================================
# per-core mutable state
# =========================================================================

# interrupt phases
_IRQ_NONE = 0
_IRQ_PENDING = 1
_IRQ_ENTRY = 2
_IRQ_WAIT = 3       # fabric: polling the level; timer-based: sleeping
_IRQ_EXIT = 4

_USER_FETCH_ADDR = 0x1000
_KERNEL_FETCH_ADDR = 1 << 60


class CoreState:
    """Mutable per-core simulation state: workload cursor, memory queues,
    interrupt machine, regulator runtime, statistics counters."""

    __slots__ = (
        "model", "workload", "regulator",
        # memory queues: FIFOs of ready/enqueue cycles
        "reads", "wb",
        # workload cursor
        "wl_kind", "op", "ipc", "ipc_acc", "phase", "lines_left",
        "idle_until", "trace_recs", "trace_pos", "trace_next",
        # interrupt machine
        "irq_phase", "irq_at", "kernel_pending", "prev_throttle",
        # regulator runtime
        "kind", "cf", "fstate", "out_mask", "throttle_mask",
        "mg_state", "mp_state", "pmc_total",
        # pulse masks
        "refill_mask", "wbk_mask", "tap_mask",
        # stats
        "issued_lines", "completed_lines", "kernel_lines", "pmc_events",
        "tap_events", "throttled_cycles", "throttle_entries", "irq_count",
        "handler_cycles", "idle_cycles",
        # period tracking
        "period_pmc", "period_tap", "period_throttled", "periods",
    )

    def __init__(self, spec: CoreSpec):
        m = spec.model
        self.model = m
        self.workload = spec.workload
        self.regulator = spec.regulator
        self.reads = []
        self.wb = []
        self.refill_mask = F._signal_mask(m.refill_signals)
        self.wbk_mask = F._signal_mask(m.wb_signals)

        w = spec.workload
        self.ipc_acc = 0.0
        self.phase = 0
        self.idle_until = 0
        self.trace_recs = ()
        self.trace_pos = 0
        self.trace_next = _BIG
        if isinstance(w, Synthetic):
            if w.region_bytes % m.cacheline_bytes:
                raise ValueError("region_bytes must be a multiple of the "
                                 "cacheline size")
            self.wl_kind = "synthetic"
            self.op = w.op
            self.ipc = w.issue_ipc_limit
            self.lines_left = _BIG
        elif isinstance(w, Burst):
            for op, nbytes, idle in w.pattern:
                if nbytes % m.cacheline_bytes:
                    raise ValueError("burst bytes must be a multiple of "
                                     "the cacheline size")
            self.wl_kind = "burst"
            self.ipc = 1.0
            op, nbytes, _idle = w.pattern[0]
            self.op = op
            self.lines_left = nbytes // m.cacheline_bytes
        elif isinstance(w, TraceReplay):
            self.wl_kind = "trace"
            self.op = OP_READ
            self.ipc = 0.0
            self.lines_left = 0
            # pre-resolve records to (absolute cycle, mask, kernel),
            # merging same-cycle records
            t = 0
            merged = []
            for delta, sigs, mode in w.records:
                t += delta
                mask = F._signal_mask(sigs)
                kern = mode == F.KERNEL
                if merged and merged[-1][0] == t:
                    prev = merged[-1]
                    merged[-1] = (t, prev[1] | mask, prev[2] or kern)
                else:
                    merged.append((t, mask, kern))
            self.trace_recs = tuple(merged)
            if merged:
                self.trace_next = merged[0][0]
        else:
            raise ValueError("unknown workload %r" % (w,))

        self.irq_phase = _IRQ_NONE
        self.irq_at = _BIG
        self.kernel_pending = 0
        self.prev_throttle = False

        reg = spec.regulator
        self.cf = None
        self.fstate = None
        self.out_mask = 0
        self.throttle_mask = 0
        self.mg_state = None
        self.mp_state = None
        self.pmc_total = 0
        self.tap_mask = self.refill_mask | self.wbk_mask
        if reg is None:
            self.kind = "none"
        elif isinstance(reg, F.EtmConfig):
            self.kind = "etm"
            self.cf = F.compile_fabric(reg)
            self.fstate = self.cf.reset_tuple()
            self.throttle_mask = self.cf.throttle_mask
            sigs = set()
            for tap in reg.inputs:
                sigs |= tap.monitored
            self.tap_mask = F._signal_mask(sigs)
        elif isinstance(reg, REG.MemGuardConfig):
            self.kind = "memguard"
            self.mg_state = REG.memguard_reset(reg)
            # the periodic replenishment timer loads the first budget at
            # t=0 and re-fires at every boundary after that
            self.irq_phase = _IRQ_PENDING
            self.irq_at = m.irq_latency_cycles
        elif isinstance(reg, REG.MemPolConfig):
            self.kind = "mempol"
            self.mp_state = REG.mempol_reset(reg)
        else:
            raise ValueError("unknown regulator %r" % (reg,))

        self.issued_lines = 0
        self.completed_lines = 0
        self.kernel_lines = 0
        self.pmc_events = 0
        self.tap_events = 0
        self.throttled_cycles = 0
        self.throttle_entries = 0
        self.irq_count = 0
        self.handler_cycles = 0
        self.idle_cycles = 0
        self.period_pmc = 0
        self.period_tap = 0
        self.period_throttled = False
        self.periods = []

    # -- memory controller interface --------------------------------------

    def has_request(self, cycle):
        r = self.reads
        if r and r[0] <= cycle:
            return True
        w = self.wb
        return bool(w) and w[0] < cycle

    def serve_one(self, cycle):
        """Retire one granted line; returns the pulse mask it emits now."""
        r = self.reads
        if r and r[0] <= cycle:
            del r[0]
            self.completed_lines += 1
            return 0                    # refills pulsed at issue
        del self.wb[0]
        self.completed_lines += 1
        return self.wbk_mask


# =========================================================================
# one core-cycle (grant retirement, interrupt machinery, issue)
# =========================================================================

def _advance_burst(st: CoreState, cycle):
    """Move to the next burst phase once lines and idle are both spent."""
    w = st.workload
    hops = 0
    while st.lines_left == 0:
        _op, _nbytes, idle = w.pattern[st.phase]
        if idle:
            if st.idle_until == 0:
                st.idle_until = cycle + idle
                return
            if st.idle_until > cycle:
                return
        st.phase = (st.phase + 1) % len(w.pattern)
        op, nbytes, _idle = w.pattern[st.phase]
        st.op = op
        st.lines_left = nbytes // st.model.cacheline_bytes
        st.idle_until = 0
        hops += 1
        if hops > len(w.pattern):
            return


def _core_cycle(st: CoreState, cycle, grants):
    """Retire grants, run the interrupt machine against the previous
    cycle's throttle level, issue new work.

    Returns (pulse_mask, in_handler, wfi_idle).
    """
    m = st.model
    pm = 0
    for _ in range(grants):
        pm |= st.serve_one(cycle)

    # ---- interrupt machine ----
    phase = st.irq_phase
    req = st.prev_throttle
    if phase == _IRQ_NONE:
        if req and (st.kind == "etm" or st.kind == "memguard"):
            st.irq_phase = _IRQ_PENDING
            st.irq_at = cycle + m.irq_latency_cycles
    elif phase == _IRQ_PENDING:
        if cycle >= st.irq_at:
            st.irq_phase = _IRQ_ENTRY
            st.irq_at = cycle + m.handler_entry_cycles
            st.irq_count += 1
            st.kernel_pending += m.handler_kernel_events
    elif phase == _IRQ_ENTRY:
        if cycle >= st.irq_at:
            st.irq_phase = _IRQ_WAIT
            if st.kind == "memguard":
                st.irq_at = _BIG        # sleeps until the level drops
            else:
                st.irq_at = cycle + m.handler_poll_cycles
    elif phase == _IRQ_WAIT:
        if st.kind == "memguard":
            if not req:                 # boundary replenished: wake & exit
                st.irq_phase = _IRQ_EXIT
                st.irq_at = cycle + m.handler_exit_cycles
        elif cycle >= st.irq_at:        # poll instant
            if req:
                st.irq_at = cycle + m.handler_poll_cycles
            else:
                st.irq_phase = _IRQ_EXIT
                st.irq_at = cycle + m.handler_exit_cycles
    else:                               # _IRQ_EXIT
        if cycle >= st.irq_at:
            st.irq_phase = _IRQ_NONE
            st.irq_at = _BIG

    in_handler = st.irq_phase >= _IRQ_ENTRY
    if in_handler:
        st.handler_cycles += 1
        # the handler's own memory traffic: one kernel line per cycle
        if st.kernel_pending and len(st.reads) < m.read_outstanding:
            st.reads.append(cycle + m.mem_latency_cycles)
            st.kernel_pending -= 1
            st.issued_lines += 1
            st.kernel_lines += 1
            pm |= st.refill_mask

    # ---- scripted pulse streams ----
    if st.wl_kind == "trace":
        kernel = in_handler
        recs = st.trace_recs
        while st.trace_pos < len(recs) and cycle == st.trace_next:
            _t, mask, kern = recs[st.trace_pos]
            pm |= mask
            kernel = kernel or kern
            st.trace_pos += 1
            st.trace_next = (recs[st.trace_pos][0]
                             if st.trace_pos < len(recs) else _BIG)
        return pm, kernel, False

    # ---- issue stage ----
    halted = st.kind == "mempol" and req
    wfi = False
    if not in_handler and not halted:
        if st.wl_kind == "burst":
            _advance_burst(st, cycle)
        if st.idle_until > cycle:
            st.idle_cycles += 1
            wfi = st.wl_kind == "burst" and st.workload.wfi_idle
        elif st.lines_left > 0 and st.ipc > 0:
            st.ipc_acc += st.ipc
            # a structural stall must not bank whole issue slots: at most
            # one deferred issue survives, or the resume cycle would burst
            # several refills into a single (collapsed) pulse
            lim = st.ipc if st.ipc > 1.0 else 1.0
            if st.ipc_acc > lim:
                st.ipc_acc = lim
            n = int(st.ipc_acc)
            reads = st.reads
            wbq = st.wb
            while n > 0 and st.lines_left > 0:
                op = st.op
                if op == OP_WRITE:
                    if len(wbq) >= m.write_buffer_depth:
                        break
                    wbq.append(cycle)
                elif op == OP_MODIFY:
                    if (len(reads) >= m.read_outstanding
                            or len(wbq) >= m.write_buffer_depth):
                        break
                    reads.append(cycle + m.mem_latency_cycles)
                    wbq.append(cycle)
                    pm |= st.refill_mask
                else:                   # read / prefetch
                    if len(reads) >= m.read_outstanding:
                        break
                    reads.append(cycle + m.mem_latency_cycles)
                    pm |= st.refill_mask
                st.issued_lines += 1
                st.lines_left -= 1
                st.ipc_acc -= 1.0
                n -= 1

    return pm, in_handler, wfi


# =========================================================================
# regulator coupling
# =========================================================================

def _regulator_cycle(st: CoreState, cycle, pm, kernel, wfi):
    """Feed one cycle to the attached regulator; updates st.prev_throttle
    and the event/period statistics."""
    if pm:
        hits = (pm & st.tap_mask).bit_count()
        if hits:
            st.pmc_events += hits
            st.pmc_total += hits
            st.tap_events += 1
            st.period_pmc += hits
            st.period_tap += 1
    kind = st.kind
    if kind == "none":
        return
    if kind == "etm":
        cf = st.cf
        s = st.fstate
        if wfi:
            out = cf.idle_out(s[2], s[3], s[4])
        else:
            if cf._cmp_table:
                addr = _KERNEL_FETCH_ADDR if kernel else _USER_FETCH_ADDR
                cm = cf.cmp_mask(addr, not kernel)
            else:
                cm = 0
            cur = cf.step(s[0], s[1], s[2], s[3], s[4],
                          pm & st.tap_mask, cm)
            st.fstate = cur[:5]
            out = cur[7]
            if cur[6]:                  # period boundary: close the record
                st.periods.append(PeriodRecord(
                    st.period_pmc, st.period_tap, st.period_throttled))
                st.period_pmc = 0
                st.period_tap = 0
                st.period_throttled = False
        st.out_mask = out
        throttled = bool(out & st.throttle_mask)
        if throttled:
            st.period_throttled = True
    elif kind == "memguard":
        delta = (pm & st.tap_mask).bit_count() if pm else 0
        boundary_was = st.mg_state.next_boundary
        st.mg_state, throttled = REG.memguard_step(
            st.regulator, st.mg_state, delta, cycle)
        if st.mg_state.next_boundary != boundary_was \
                and st.irq_phase == _IRQ_NONE:
            # replenishment timer interrupt: the handler runs every period
            st.irq_phase = _IRQ_PENDING
            st.irq_at = cycle + st.model.irq_latency_cycles
    else:                               # mempol (polled from outside)
        if cycle >= st.mp_state.next_poll:
            st.mp_state, throttled = REG.mempol_step(
                st.regulator, st.mp_state, st.pmc_total, cycle)
        else:
            throttled = st.mp_state.halted
    if throttled:
        st.throttled_cycles += 1
        if not st.prev_throttle:
            st.throttle_entries += 1
    st.prev_throttle = throttled


# =========================================================================
# quiet-stretch detection
# =========================================================================

def _core_can_hop(st: CoreState, cycle):
    """True when this core provably emits no pulses and changes no queue
    until its next deadline."""
    if st.reads or st.wb or st.kernel_pending:
        return False
    if st.irq_phase == _IRQ_NONE and st.prev_throttle \
            and st.kind in ("etm", "memguard"):
        return False                    # interrupt about to be raised
    if st.irq_phase == _IRQ_WAIT and st.kind == "memguard" \
            and not st.prev_throttle:
        return False                    # handler about to wake up
    if st.wl_kind == "trace":
        return True
    if st.irq_phase >= _IRQ_ENTRY:
        return True                     # handler busy: no workload issues
    if st.kind == "mempol" and st.prev_throttle:
        return True
    if st.wl_kind == "burst" and st.idle_until > cycle:
        return True
    if st.ipc == 0 or st.lines_left == 0:
        return True
    return False


def _quiet_deadline(st: CoreState, cycle):
    """First cycle at which something non-linear can happen for this core,
    assuming no pulses arrive before it."""
    d = _BIG
    if st.reads:
        d = st.reads[0]
    if st.wb and st.wb[0] + 1 < d:
        d = st.wb[0] + 1
    if st.irq_phase != _IRQ_NONE and st.irq_at < d:
        d = st.irq_at
    if st.wl_kind == "burst" and cycle < st.idle_until < d:
        d = st.idle_until
    if st.wl_kind == "trace" and st.trace_next < d:
        d = st.trace_next
    if st.kind == "memguard" and st.mg_state.next_boundary < d:
        d = st.mg_state.next_boundary
    if st.kind == "mempol" and st.mp_state.next_poll < d:
        d = st.mp_state.next_poll
    return d


def _probe_fabric(st: CoreState, cycle):
    """Step the fabric one quiet cycle without committing.

    Returns None when the fabric is not advancing linearly; otherwise
    ("frozen",) for an architecturally idle core, or
    ("roll", state5, d0, d1, chained, bound) where bound is the number of
    additional quiet cycles the linear pattern stays valid for.
    """
    cf = st.cf
    s = st.fstate
    kernel = st.irq_phase >= _IRQ_ENTRY
    if (not kernel and st.wl_kind == "burst" and st.workload.wfi_idle
            and st.idle_until > cycle):
        return ("frozen",)              # asleep: the fabric holds still
    if cf._cmp_table:
        addr = _KERNEL_FETCH_ADDR if kernel else _USER_FETCH_ADDR
        cm = cf.cmp_mask(addr, not kernel)
    else:
        cm = 0
    cur = cf.step(s[0], s[1], s[2], s[3], s[4], 0, cm)
    if (cur[2] != s[2] or cur[3] != s[3] or cur[4] != s[4]
            or cur[5] or cur[6] or cur[7] != st.out_mask):
        return None
    chained = any(c.chained for c in cf.config.counters)
    if chained:
        d0 = (s[0] | (s[1] << 16)) - (cur[0] | (cur[1] << 16))
        d1 = 0
    else:
        d0 = s[0] - cur[0]
        d1 = s[1] - cur[1]
    if d0 not in (0, 1) or d1 not in (0, 1):
        return None
    bound = _BIG
    if chained:
        if d0:
            bound = (cur[0] | (cur[1] << 16)) - 1
    else:
        if d0:
            bound = cur[0] - 1
        if d1 and cur[1] - 1 < bound:
            bound = cur[1] - 1
    return ("roll", cur[:5], d0, d1, chained, bound)


# =========================================================================
# the system loop
# =========================================================================

def run_system(sys_cfg: SystemConfig, use_hops: bool = True) -> SystemTrace:
    """Run the whole system for duration_cycles; fully deterministic."""
    cores = [CoreState(cs) for cs in sys_cfg.cores]
    n = len(cores)
    duration = sys_cfg.duration_cycles
    window = sys_cfg.window_cycles
    if window <= 0:
        window = sys_cfg.cores[0].model.freq_mhz * 1000   # one millisecond
    bw_fp = int(round(sys_cfg.shared_mem_bandwidth * _FP_ONE))
    if bw_fp < 1:
        raise ValueError("shared_mem_bandwidth is below resolution")
    cap_fp = _FP_ONE if bw_fp <= _FP_ONE else bw_fp
    acc = 0
    rr = 0
    total_granted = 0
    windows = [[] for _ in range(n)]
    wevents = [[] for _ in range(n)]
    ev_snap = [0] * n
    win_lines = [0] * n
    win_end = window
    grants = [0] * n

    cycle = 0
    while cycle < duration:
        if cycle >= win_end:
            for i in range(n):
                windows[i].append(win_lines[i])
                win_lines[i] = 0
                wevents[i].append(cores[i].pmc_events - ev_snap[i])
                ev_snap[i] = cores[i].pmc_events
            win_end += window

        # ---- 1. controller grants ----
        acc += bw_fp
        avail = acc >> _FP
        if avail:
            served = 0
            again = True
            while avail > 0 and again:
                again = False
                for k in range(n):
                    ci = rr + k
                    if ci >= n:
                        ci -= n
                    if avail > 0 and cores[ci].has_request(cycle):
                        grants[ci] += 1
                        avail -= 1
                        served += 1
                        again = True
            if served:
                rr += 1
                if rr >= n:
                    rr = 0
                acc -= served << _FP
                total_granted += served
        if acc > cap_fp:
            acc = cap_fp

        # ---- 2+3. cores and their regulators ----
        for i in range(n):
            st = cores[i]
            g = grants[i]
            if g:
                grants[i] = 0
                win_lines[i] += g
            pm, kernel, wfi = _core_cycle(st, cycle, g)
            _regulator_cycle(st, cycle, pm, kernel, wfi)

        cycle += 1

        # ---- 4. hop across provably quiet stretches ----
        if not use_hops or cycle >= duration:
            continue
        deadline = win_end if win_end < duration else duration
        ok = True
        for st in cores:
            if not _core_can_hop(st, cycle):
                ok = False
                break
            d = _quiet_deadline(st, cycle)
            if d < deadline:
                deadline = d
        if not ok or deadline - cycle < 2:
            continue
        span = deadline - cycle
        probes = []
        for st in cores:
            if st.kind != "etm":
                probes.append(None)
                continue
            p = _probe_fabric(st, cycle)
            if p is None:
                ok = False
                break
            probes.append(p)
            if p[0] == "roll" and p[5] + 1 < span:
                span = p[5] + 1         # probe cycle + linear stretch
        if not ok or span < 2:
            continue
        extra = span - 1                # linear cycles beyond the probe
        for i in range(n):
            st = cores[i]
            p = probes[i]
            if p is not None and p[0] == "roll":
                _tag, s5, d0, d1, chained, _bound = p
                if chained:
                    v = (s5[0] | (s5[1] << 16)) - d0 * extra
                    st.fstate = (v & 0xFFFF, v >> 16, s5[2], s5[3], s5[4])
                else:
                    st.fstate = (s5[0] - d0 * extra, s5[1] - d1 * extra,
                                 s5[2], s5[3], s5[4])
            if st.prev_throttle:
                st.throttled_cycles += span
            if st.irq_phase >= _IRQ_ENTRY:
                st.handler_cycles += span
            elif not (st.kind == "mempol" and st.prev_throttle) \
                    and st.wl_kind == "burst" and st.idle_until > cycle:
                st.idle_cycles += span
        cycle += span
        acc = acc + span * bw_fp
        if acc > cap_fp:
            acc = cap_fp

    # close the final (full or partial) window
    for i in range(n):
        windows[i].append(win_lines[i])
        wevents[i].append(cores[i].pmc_events - ev_snap[i])

    stats = tuple(
        CoreStats(issued_lines=st.issued_lines,
                  completed_lines=st.completed_lines,
                  kernel_lines=st.kernel_lines,
                  pmc_events=st.pmc_events,
                  tap_events=st.tap_events,
                  throttled_cycles=st.throttled_cycles,
                  throttle_entries=st.throttle_entries,
                  irq_count=st.irq_count,
                  handler_cycles=st.handler_cycles,
                  idle_cycles=st.idle_cycles)
        for st in cores)
    return SystemTrace(duration_cycles=duration,
                       window_cycles=window,
                       windows=tuple(tuple(w) for w in windows),
                       window_events=tuple(tuple(w) for w in wevents),
                       stats=stats,
                       periods=tuple(tuple(st.periods) for st in cores),
                       total_granted=total_granted)


# =========================================================================
# public one-cycle API
# =========================================================================

def step_core(state: CoreState, cfg: CoreModelConfig, grants: int,
              throttle_request: bool, cycle: int):
    """Advance one core by one cycle outside run_system.

    The throttle level is sampled the way run_system samples it: it feeds
    this cycle's interrupt machinery onward.  Returns
    (state, CycleInputs, completed_delta).
    """
    before = state.completed_lines
    state.prev_throttle = throttle_request
    pm, kernel, wfi = _core_cycle(state, cycle, grants)
    sigs = frozenset(s for s in range(pm.bit_length()) if pm >> s & 1)
    ci = F.CycleInputs(
        active_signals=sigs,
        instruction_fetch_addr=None if wfi else (
            _KERNEL_FETCH_ADDR if kernel else _USER_FETCH_ADDR),
        exec_mode=F.KERNEL if kernel else F.USER,
        core_idle=wfi)
    return state, ci, state.completed_lines - before
