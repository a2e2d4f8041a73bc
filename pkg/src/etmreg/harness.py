"""Batch experiment runner: target sweeps, safe-floor calibration, CSV/SVG.

One sweep point = one board preset + one regulator design + one bandwidth
target + one access type, simulated for a fixed stretch of time on a
single regulated core running a saturating synthetic workload.  Points
are independent and merged in sorted configuration order, so repeated
runs of the same config and seed produce byte-identical outputs.
"""

from dataclasses import dataclass

from . import machine as M
from . import regulators as R
from .accounting import model_for
from .regulators import RangeError

__all__ = [
    "BoardPreset", "PRESETS", "ExperimentConfig", "ResultRow",
    "SweepResult", "NoConvergence", "bandwidth_to_budget",
    "regulator_for", "run_point", "run_sweep", "calibrate_safe_floor",
    "write_csv", "load_csv", "render_svg", "emit_outputs",
]

CACHELINE = 64


class NoConvergence(RuntimeError):
    pass


# =========================================================================
# board presets
# =========================================================================

@dataclass(frozen=True)
class BoardPreset:
    """A core model plus the board's shared-memory ceiling."""
    name: str
    model: M.CoreModelConfig
    mem_cap_mbps: float

    @property
    def freq_mhz(self):
        return self.model.freq_mhz

    def cap_lines_per_cycle(self):
        return self.mem_cap_mbps / (CACHELINE * self.freq_mhz)

    def period_cycles(self, period_us):
        return round(period_us * self.freq_mhz)


def _preset(name, cap, **kw):
    return BoardPreset(name, M.CoreModelConfig(**kw), cap)


PRESETS = {p.name: p for p in (
    # loss-free reference: no interrupt latency, single-entry queues
    _preset("ideal", 1000.0, core_type="cortex-a53", freq_mhz=1200,
            irq_latency_cycles=0, read_outstanding=1, write_buffer_depth=1,
            mem_latency_cycles=0, handler_entry_cycles=0,
            handler_poll_cycles=1, handler_exit_cycles=0,
            handler_kernel_events=0),
    _preset("zcu102", 1000.0, core_type="cortex-a53", freq_mhz=1200,
            irq_latency_cycles=81),
    _preset("lx2160a", 2500.0, core_type="cortex-a72", freq_mhz=2000,
            irq_latency_cycles=259,
            refill_signals=frozenset({24}), wb_signals=frozenset({25})),
    _preset("am69x", 2500.0, core_type="cortex-a72", freq_mhz=2000,
            irq_latency_cycles=163,
            refill_signals=frozenset({24}), wb_signals=frozenset({25})),
    _preset("rk3588-a55", 2000.0, core_type="cortex-a55", freq_mhz=1120,
            irq_latency_cycles=272,
            refill_signals=frozenset({33}), wb_signals=frozenset({34})),
    _preset("rk3588-a76", 2000.0, core_type="cortex-a76", freq_mhz=1200,
            irq_latency_cycles=308,
            refill_signals=frozenset({73}), wb_signals=frozenset({74})),
)}


def preset(name) -> BoardPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError("unknown board preset %r; have %s"
                       % (name, ", ".join(sorted(PRESETS)))) from None


# =========================================================================
# budgets
# =========================================================================

def bandwidth_to_budget(target_mbps, period_us, cacheline_bytes=CACHELINE,
                        etm=True) -> int:
    """Events per period allowing `target_mbps`; rounds to the nearest
    whole cacheline, minimum one."""
    if target_mbps <= 0 or period_us <= 0 or cacheline_bytes <= 0:
        raise RangeError("target, period, and cacheline must be positive")
    exact = target_mbps * 1e6 * period_us * 1e-6 / cacheline_bytes
    budget = max(1, int(exact + 0.5))   # half rounds up, never to even
    if etm and budget > 0xFFFF:
        raise RangeError("budget %d events exceeds the 16-bit counter"
                         % budget)
    return budget


def budget_to_bandwidth(budget_events, period_us,
                        cacheline_bytes=CACHELINE) -> float:
    return budget_events * cacheline_bytes / period_us  # B/us == MB/s


def regulator_for(design, board: BoardPreset, target_mbps, period_us):
    """Build the regulator runtime config for one sweep point."""
    pc = board.period_cycles(period_us)
    if design in R.ETM_DESIGNS:
        budget = bandwidth_to_budget(target_mbps, period_us)
        model = model_for(board.model.core_type)
        spec = R.RegulatorSpec(design, budget, pc,
                               core_type=board.model.core_type,
                               model_variant=model.variant)
        return R.build_config(spec, signals=sorted(model.signals))
    if design == R.MEMGUARD:
        budget = bandwidth_to_budget(target_mbps, period_us, etm=False)
        return R.MemGuardConfig(budget_events=budget, period_cycles=pc)
    if design == R.MEMPOL:
        # the polling regulator budgets over a sliding window of polls
        window = R.MemPolConfig(1, 1).window_size
        budget = bandwidth_to_budget(
            target_mbps, period_us * window, etm=False)
        return R.MemPolConfig(budget_events=budget, poll_cycles=pc,
                              window_size=window)
    raise RangeError("unknown regulator design %r" % (design,))


# =========================================================================
# experiment config and result rows
# =========================================================================

@dataclass(frozen=True)
class ExperimentConfig:
    board: str = "zcu102"
    designs: tuple = (R.PR,)
    targets_mbps: tuple = ()
    op_types: tuple = (M.OP_READ,)
    period_us: float = 5.0
    duration_ms: float = 10.0
    seed: int = 0
    csv_path: str = ""
    svg_path: str = ""

    def __post_init__(self):
        object.__setattr__(self, "designs", tuple(self.designs))
        object.__setattr__(self, "targets_mbps",
                           tuple(float(t) for t in self.targets_mbps))
        object.__setattr__(self, "op_types", tuple(self.op_types))
        b = preset(self.board)
        if not self.targets_mbps:
            raise ValueError("no sweep targets")
        if any(t <= 0 for t in self.targets_mbps):
            raise ValueError("targets must be positive")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if any(d in R.ETM_DESIGNS for d in self.designs) \
                and b.period_cycles(self.period_us) > 0xFFFF:
            raise ValueError(
                "period %.1f us is %d cycles at %d MHz, over the 16-bit "
                "counter; max is %.1f us"
                % (self.period_us, b.period_cycles(self.period_us),
                   b.freq_mhz, 10 * 0xFFFF // b.freq_mhz / 10))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(data) - known
        if bad:
            raise ValueError("unknown config keys: %s" % ", ".join(sorted(bad)))
        return cls(**data)


# CSV columns, in order; bool False in the pair marks an int column
_ROW_FIELDS = (
    ("target_mbps", float), ("achieved_mbps", float), ("op_type", str),
    ("regulator", str), ("period_us", float), ("throttle_fraction", float),
    ("irqs_per_ms", float), ("max_window_overshoot_events", int),
    ("accounted_vs_actual_ratio", float),
)


@dataclass(frozen=True)
class ResultRow:
    target_mbps: float
    achieved_mbps: float
    op_type: str
    regulator: str
    period_us: float
    throttle_fraction: float
    irqs_per_ms: float
    max_window_overshoot_events: int
    accounted_vs_actual_ratio: float

    def __post_init__(self):
        if self.achieved_mbps < 0:
            raise ValueError("achieved bandwidth cannot be negative")
        if not 0.0 <= self.throttle_fraction <= 1.0:
            raise ValueError("throttle_fraction out of [0, 1]")

    @property
    def oscillating(self) -> bool:
        """Throttle interrupts arriving faster than one per 10 us."""
        return self.irqs_per_ms > 100

    def key(self):
        return (self.regulator, self.op_type, self.target_mbps)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    failures: tuple     # ("design=.. op=.. target=..: message", ...)


# =========================================================================
# running points
# =========================================================================

def run_point(board: BoardPreset, design, target_mbps, op_type,
              period_us, duration_ms, seed=0) -> ResultRow:
    """Simulate one sweep point and reduce it to a ResultRow."""
    reg = regulator_for(design, board, target_mbps, period_us)
    duration = int(round(duration_ms * board.freq_mhz * 1000))
    sysc = M.SystemConfig(
        cores=(M.CoreSpec(board.model, M.Synthetic(op_type), reg),),
        shared_mem_bandwidth=board.cap_lines_per_cycle(),
        duration_cycles=duration, seed=seed)
    trace = M.run_system(sysc)
    st = trace.stats[0]

    # a modify transaction moves two lines on the bus but advances the
    # program by one; achieved bandwidth is the program's view
    app_lines = st.completed_lines
    if op_type == M.OP_MODIFY:
        app_lines //= 2
    seconds = duration / (board.freq_mhz * 1e6)
    achieved = app_lines * CACHELINE / seconds / 1e6

    overshoot = 0
    if design in R.ETM_DESIGNS:
        budget = bandwidth_to_budget(target_mbps, period_us)
        for p in trace.periods[0]:
            if p.throttled and p.pmc_events - budget > overshoot:
                overshoot = p.pmc_events - budget

    return ResultRow(
        target_mbps=float(target_mbps),
        achieved_mbps=achieved,
        op_type=op_type,
        regulator=design,
        period_us=float(period_us),
        throttle_fraction=st.throttled_cycles / duration,
        irqs_per_ms=st.irq_count / duration_ms,
        max_window_overshoot_events=overshoot,
        accounted_vs_actual_ratio=(st.pmc_events / app_lines
                                   if app_lines else 0.0),
    )


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Run every (design, op_type, target) point; a point whose
    construction fails is recorded in `failures` and the sweep goes on.
    Rows come back sorted by (regulator, op_type, target)."""
    board = preset(cfg.board)
    points = sorted(
        (d, op, t) for d in cfg.designs for op in cfg.op_types
        for t in cfg.targets_mbps)
    rows = []
    failures = []
    for design, op, target in points:
        try:
            rows.append(run_point(board, design, target, op,
                                  cfg.period_us, cfg.duration_ms, cfg.seed))
        except (RangeError, ValueError) as e:
            failures.append("design=%s op=%s target=%g: %s"
                            % (design, op, target, e))
    rows.sort(key=lambda r: r.key())
    return SweepResult(tuple(rows), tuple(failures))


# =========================================================================
# safe-floor calibration
# =========================================================================

def calibrate_safe_floor(board_name, design, period_us, tol=0.05,
                         duration_ms=2.0, seed=0) -> float:
    """Smallest bandwidth target this board/design/period still enforces.

    Searches budgets for the first whose achieved/target ratio stays
    within `tol`; below the floor, in-flight traffic and interrupt
    latency outrun the allowance.  Returns the floor target in MB/s.
    """
    board = preset(board_name)

    def ok(budget):
        target = budget_to_bandwidth(budget, period_us)
        row = run_point(board, design, target, M.OP_READ, period_us,
                        duration_ms, seed)
        return row.achieved_mbps / target <= 1.0 + tol

    cap_budget = bandwidth_to_budget(board.mem_cap_mbps, period_us,
                                     etm=design in R.ETM_DESIGNS)
    lo, hi = 1, cap_budget
    if ok(lo):
        hi = lo
    elif not ok(hi):
        raise NoConvergence(
            "%s on %s misses every target up to the %g MB/s cap"
            % (design, board_name, board.mem_cap_mbps))
    else:
        while hi - lo > 1:      # ok(lo) is False, ok(hi) is True
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
    floor = budget_to_bandwidth(hi, period_us)
    if floor > board.mem_cap_mbps:
        # A "floor" above the memory cap only converged because the bus,
        # not the regulator, was doing the limiting.  No usable target
        # exists below the cap.
        raise NoConvergence(
            "%s on %s: smallest enforceable target %g MB/s exceeds the "
            "%g MB/s cap" % (design, board_name, floor,
                             board.mem_cap_mbps))
    return floor


# =========================================================================
# CSV
# =========================================================================

def _fmt_cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows) -> str:
    lines = [",".join(name for name, _ in _ROW_FIELDS)]
    for r in rows:
        lines.append(",".join(_fmt_cell(getattr(r, name))
                              for name, _ in _ROW_FIELDS))
    return "\n".join(lines) + "\n"


def write_csv(rows, path):
    with open(path, "w") as f:
        f.write(rows_to_csv(rows))


def load_csv(path):
    """Inverse of write_csv: reproduces the ResultRow list exactly."""
    with open(path) as f:
        lines = f.read().splitlines()
    header = lines[0].split(",")
    expect = [name for name, _ in _ROW_FIELDS]
    if header != expect:
        raise ValueError("unexpected CSV columns %s" % (header,))
    types = dict(_ROW_FIELDS)
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        rows.append(ResultRow(**{name: types[name](cell)
                                 for (name, _), cell
                                 in zip(_ROW_FIELDS, cells)}))
    return rows


# =========================================================================
# SVG chart
# =========================================================================

_SVG_W, _SVG_H, _SVG_PAD = 640, 480, 56
_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                  "#8c564b")


def _nice(v):
    return ("%.6g" % v)


def render_svg(rows, title="achieved vs. target bandwidth") -> str:
    """Line chart of achieved vs. target, one series per (regulator,
    op_type), with the identity diagonal for reference."""
    if not rows:
        raise ValueError("no rows to plot")
    xs = [r.target_mbps for r in rows]
    ys = [r.achieved_mbps for r in rows]
    lo = 0.0
    hi = max(xs + ys) * 1.05 or 1.0
    span = hi - lo
    inner_w = _SVG_W - 2 * _SVG_PAD
    inner_h = _SVG_H - 2 * _SVG_PAD

    def px(v):
        return _SVG_PAD + (v - lo) / span * inner_w

    def py(v):
        return _SVG_H - _SVG_PAD - (v - lo) / span * inner_h

    series = {}
    for r in rows:
        series.setdefault((r.regulator, r.op_type), []).append(r)
    out = []
    out.append('<svg xmlns="http://www.w3.org/2000/svg" width="%d" '
               'height="%d" viewBox="0 0 %d %d">'
               % (_SVG_W, _SVG_H, _SVG_W, _SVG_H))
    out.append('<rect width="%d" height="%d" fill="white"/>'
               % (_SVG_W, _SVG_H))
    out.append('<text x="%d" y="24" font-size="15" text-anchor="middle">'
               '%s</text>' % (_SVG_W // 2, title))
    # axes
    out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="black"/>'
               % (px(lo), py(lo), px(hi), py(lo)))
    out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="black"/>'
               % (px(lo), py(lo), px(lo), py(hi)))
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lo + frac * span
        out.append('<text x="%g" y="%g" font-size="11" '
                   'text-anchor="middle">%s</text>'
                   % (px(v), py(lo) + 18, _nice(v)))
        out.append('<text x="%g" y="%g" font-size="11" '
                   'text-anchor="end">%s</text>'
                   % (px(lo) - 6, py(v) + 4, _nice(v)))
    out.append('<text x="%d" y="%d" font-size="12" text-anchor="middle">'
               'target MB/s</text>' % (_SVG_W // 2, _SVG_H - 12))
    out.append('<text x="16" y="%d" font-size="12" text-anchor="middle" '
               'transform="rotate(-90 16 %d)">achieved MB/s</text>'
               % (_SVG_H // 2, _SVG_H // 2))
    # identity diagonal
    out.append('<line x1="%g" y1="%g" x2="%g" y2="%g" stroke="#888" '
               'stroke-dasharray="6,4"/>' % (px(lo), py(lo), px(hi), py(hi)))
    for i, key in enumerate(sorted(series)):
        pts = sorted(series[key], key=lambda r: r.target_mbps)
        color = _SERIES_COLORS[i % len(_SERIES_COLORS)]
        path = " ".join("%g,%g" % (px(r.target_mbps), py(r.achieved_mbps))
                        for r in pts)
        out.append('<polyline points="%s" fill="none" stroke="%s" '
                   'stroke-width="2"/>' % (path, color))
        for r in pts:
            out.append('<circle cx="%g" cy="%g" r="3" fill="%s"/>'
                       % (px(r.target_mbps), py(r.achieved_mbps), color))
        out.append('<text x="%d" y="%d" font-size="12" fill="%s">'
                   '%s/%s</text>'
                   % (_SVG_W - _SVG_PAD - 150, _SVG_PAD + 16 * i + 4,
                      color, key[0], key[1]))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_outputs(rows, csv_path="", svg_path=""):
    """Write the requested artifacts; same rows produce identical bytes."""
    if not rows:
        raise ValueError("no rows to emit")
    written = []
    if csv_path:
        write_csv(rows, csv_path)
        written.append(csv_path)
    if svg_path:
        with open(svg_path, "w") as f:
            f.write(render_svg(rows))
        written.append(svg_path)
    return written
