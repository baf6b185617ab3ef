"""Control-schedule language: parse, validate, serialize, execute.

Line-oriented grammar ('#' starts a comment anywhere):

    version 1
    hold                             # optional: gaps keep the last value
    unit <id> [with_q1]
    resonator n_max=<int> hbar_omega_uev=<float>
    channel <name> unit=<id> kind=flux1|flux2|flux3|gate1|gate2|coupling
    seg <channel> <t0_ps> <t1_ps> const v=<x>
    seg <channel> <t0_ps> <t1_ps> linear v0=<x> v1=<x>
    seg <channel> <t0_ps> <t1_ps> raised_cosine v0=<x> v1=<x>
    sample every=<ps> observables=<comma list>

Flux and gate channels are dimensionless (Phi0 and 2e units); a coupling
channel gives the qubit-resonator exchange strength in ueV and overrides
the geometry-derived constant.  Undeclared channels idle at 1/2 (fluxes
and gates) or at the geometry default (coupling).

Execution is piecewise-constant with the Hamiltonian sampled at step
midpoints; only intervals where some coefficient actually varies are
subdivided, and the whole trajectory is recomputed with halved steps until
the final state moves by less than the requested tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .circuit import DeviceParams, derive_energies, effective_josephson, validate_charge_regime
from .constants import HBAR
from .qcore import Operator, QuantumState
from .resonator import ResonatorGeometry, resonator_mode
from .storage import XY_COUPLER, ZZ_COUPLER
from .waveform import Segment, Waveform, WaveformGapError

CHANNEL_KINDS = ("flux1", "flux2", "flux3", "gate1", "gate2", "coupling")
_IDLE_VALUE = {"flux1": 0.5, "flux2": 0.5, "flux3": 0.5,
               "gate1": 0.5, "gate2": 0.5}


class ProgramSyntaxError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class OverlapSegmentsError(ValueError):
    def __init__(self, channel: str, line_a: int, line_b: int):
        super().__init__(
            f"channel {channel!r}: segments on lines {line_a} and {line_b} overlap")
        self.lines = (line_a, line_b)


class ProgramExecutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class UnitDecl:
    unit_id: str
    with_q1: bool = False


@dataclass(frozen=True)
class ResonatorDecl:
    n_max: int
    hbar_omega_uev: float


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    unit_id: str
    kind: str
    segments: tuple = ()            # (lineno, Segment) pairs, sorted by t0

    def waveform(self) -> Waveform | None:
        if not self.segments:
            return None
        return Waveform(tuple(seg for _, seg in self.segments))


@dataclass(frozen=True)
class SampleSpec:
    every: float
    observables: tuple


@dataclass(frozen=True)
class PulseProgram:
    version: int
    units: tuple
    resonator: ResonatorDecl | None
    channels: dict
    sample: SampleSpec | None
    hold: bool = False

    @property
    def span(self) -> float:
        t = 0.0
        for ch in self.channels.values():
            for _, seg in ch.segments:
                t = max(t, seg.t1)
        return t

    def unit(self, unit_id: str) -> UnitDecl:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(unit_id)

    def channels_for(self, unit_id: str, kind: str) -> list:
        return [c for c in self.channels.values()
                if c.unit_id == unit_id and c.kind == kind]


def _kv_tokens(tokens, lineno, required, converters):
    values = {}
    for tok in tokens:
        if "=" not in tok:
            raise ProgramSyntaxError(lineno, f"expected key=value, got {tok!r}")
        key, _, val = tok.partition("=")
        if key not in converters:
            raise ProgramSyntaxError(lineno, f"unknown key {key!r}")
        try:
            values[key] = converters[key](val)
        except ValueError:
            raise ProgramSyntaxError(lineno, f"bad value for {key}: {val!r}")
    missing = set(required) - set(values)
    if missing:
        raise ProgramSyntaxError(lineno, f"missing keys {sorted(missing)}")
    return values


def parse_program(text: str) -> PulseProgram:
    version = None
    hold = False
    units: list[UnitDecl] = []
    resonator = None
    channels: dict[str, ChannelDecl] = {}
    seg_lists: dict[str, list] = {}
    sample = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kw = tokens[0]

        if version is None and kw != "version":
            raise ProgramSyntaxError(lineno, "program must start with 'version 1'")

        if kw == "version":
            if version is not None:
                raise ProgramSyntaxError(lineno, "duplicate version line")
            if len(tokens) != 2 or tokens[1] != "1":
                raise ProgramSyntaxError(lineno, "only 'version 1' is supported")
            version = 1
        elif kw == "hold":
            if len(tokens) != 1:
                raise ProgramSyntaxError(lineno, "'hold' takes no arguments")
            hold = True
        elif kw == "unit":
            if len(tokens) not in (2, 3):
                raise ProgramSyntaxError(lineno, "usage: unit <id> [with_q1]")
            with_q1 = False
            if len(tokens) == 3:
                if tokens[2] != "with_q1":
                    raise ProgramSyntaxError(lineno, f"unknown unit flag {tokens[2]!r}")
                with_q1 = True
            if any(u.unit_id == tokens[1] for u in units):
                raise ProgramSyntaxError(lineno, f"duplicate unit {tokens[1]!r}")
            units.append(UnitDecl(tokens[1], with_q1))
        elif kw == "resonator":
            if resonator is not None:
                raise ProgramSyntaxError(lineno, "duplicate resonator line")
            vals = _kv_tokens(tokens[1:], lineno,
                              ("n_max", "hbar_omega_uev"),
                              {"n_max": int, "hbar_omega_uev": float})
            if vals["n_max"] < 2:
                raise ProgramSyntaxError(lineno, "n_max must be >= 2")
            resonator = ResonatorDecl(vals["n_max"], vals["hbar_omega_uev"])
        elif kw == "channel":
            if len(tokens) != 4:
                raise ProgramSyntaxError(
                    lineno, "usage: channel <name> unit=<id> kind=<kind>")
            name = tokens[1]
            if name in channels:
                raise ProgramSyntaxError(lineno, f"duplicate channel {name!r}")
            vals = _kv_tokens(tokens[2:], lineno, ("unit", "kind"),
                              {"unit": str, "kind": str})
            if vals["kind"] not in CHANNEL_KINDS:
                raise ProgramSyntaxError(lineno, f"unknown channel kind {vals['kind']!r}")
            if not any(u.unit_id == vals["unit"] for u in units):
                raise ProgramSyntaxError(lineno, f"unknown unit {vals['unit']!r}")
            if any(c.unit_id == vals["unit"] and c.kind == vals["kind"]
                   for c in channels.values()):
                raise ProgramSyntaxError(
                    lineno, f"unit {vals['unit']!r} already has a {vals['kind']} channel")
            channels[name] = ChannelDecl(name, vals["unit"], vals["kind"])
            seg_lists[name] = []
        elif kw == "seg":
            if len(tokens) < 5:
                raise ProgramSyntaxError(
                    lineno, "usage: seg <channel> <t0> <t1> <shape> ...")
            name = tokens[1]
            if name not in channels:
                raise ProgramSyntaxError(lineno, f"unknown channel {name!r}")
            try:
                t0, t1 = float(tokens[2]), float(tokens[3])
            except ValueError:
                raise ProgramSyntaxError(lineno, "t0/t1 must be numbers")
            if t0 < 0:
                raise ProgramSyntaxError(lineno, "t0 must be >= 0")
            if not t1 > t0:
                raise ProgramSyntaxError(lineno, "segment needs t1 > t0")
            shape = tokens[4]
            if shape == "const":
                vals = _kv_tokens(tokens[5:], lineno, ("v",), {"v": float})
                seg = Segment(t0, t1, "const", vals["v"], vals["v"])
            elif shape in ("linear", "raised_cosine"):
                vals = _kv_tokens(tokens[5:], lineno, ("v0", "v1"),
                                  {"v0": float, "v1": float})
                seg = Segment(t0, t1, shape, vals["v0"], vals["v1"])
            else:
                raise ProgramSyntaxError(lineno, f"unknown segment shape {shape!r}")
            for other_line, other in seg_lists[name]:
                if seg.t0 < other.t1 - 1e-12 and other.t0 < seg.t1 - 1e-12:
                    raise OverlapSegmentsError(name, other_line, lineno)
            seg_lists[name].append((lineno, seg))
        elif kw == "sample":
            if sample is not None:
                raise ProgramSyntaxError(lineno, "duplicate sample line")
            vals = _kv_tokens(tokens[1:], lineno, ("every", "observables"),
                              {"every": float, "observables": str})
            if vals["every"] <= 0:
                raise ProgramSyntaxError(lineno, "sample interval must be positive")
            obs = tuple(o for o in vals["observables"].split(",") if o)
            sample = SampleSpec(vals["every"], obs)
        else:
            raise ProgramSyntaxError(lineno, f"unknown directive {kw!r}")

    if version is None:
        raise ProgramSyntaxError(0, "empty program: missing 'version 1'")
    channels = {
        name: ChannelDecl(ch.name, ch.unit_id, ch.kind,
                          tuple(sorted(seg_lists[name], key=lambda p: p[1].t0)))
        for name, ch in channels.items()
    }
    return PulseProgram(version=1, units=tuple(units), resonator=resonator,
                        channels=channels, sample=sample, hold=hold)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def serialize_program(prog: PulseProgram) -> str:
    """Canonical text form: sorted channels, 9-significant-digit floats."""
    lines = ["version 1"]
    if prog.hold:
        lines.append("hold")
    for u in prog.units:
        lines.append(f"unit {u.unit_id} with_q1" if u.with_q1 else f"unit {u.unit_id}")
    if prog.resonator is not None:
        lines.append(f"resonator n_max={prog.resonator.n_max} "
                     f"hbar_omega_uev={_fmt(prog.resonator.hbar_omega_uev)}")
    for name in sorted(prog.channels):
        ch = prog.channels[name]
        lines.append(f"channel {ch.name} unit={ch.unit_id} kind={ch.kind}")
        for _, seg in ch.segments:
            if seg.shape == "const":
                lines.append(f"seg {ch.name} {_fmt(seg.t0)} {_fmt(seg.t1)} "
                             f"const v={_fmt(seg.v0)}")
            else:
                lines.append(f"seg {ch.name} {_fmt(seg.t0)} {_fmt(seg.t1)} "
                             f"{seg.shape} v0={_fmt(seg.v0)} v1={_fmt(seg.v1)}")
    if prog.sample is not None:
        lines.append(f"sample every={_fmt(prog.sample.every)} "
                     f"observables={','.join(prog.sample.observables)}")
    return "\n".join(lines) + "\n"


# --- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class ValidationItem:
    severity: str   # "error" | "warning"
    message: str


@dataclass(frozen=True)
class ValidationReport:
    items: tuple

    @property
    def errors(self):
        return [i for i in self.items if i.severity == "error"]

    @property
    def warnings(self):
        return [i for i in self.items if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.items


def validate_program(prog: PulseProgram, device: DeviceParams,
                     geometry: ResonatorGeometry | None = None) -> ValidationReport:
    """Static physics checks; returns a report, never raises."""
    items = []
    en = derive_energies(device)

    regime = validate_charge_regime(device, en)
    for c in regime.checks:
        if not c.passed:
            items.append(ValidationItem(
                "warning", f"charge regime: {c.name} = {c.value:.3g} "
                           f"vs threshold {c.threshold:.3g}"))

    span = prog.span
    for ch in prog.channels.values():
        if ch.kind in ("flux1", "flux3", "gate1"):
            if not prog.unit(ch.unit_id).with_q1:
                items.append(ValidationItem(
                    "error", f"channel {ch.name}: kind {ch.kind} needs 'unit "
                             f"{ch.unit_id} with_q1'"))
        wf = ch.waveform()
        if wf is None:
            items.append(ValidationItem("warning", f"channel {ch.name} has no segments"))
            continue
        if not prog.hold:
            if wf.t_start > 1e-12:
                items.append(ValidationItem(
                    "error", f"channel {ch.name} undefined on [0, {wf.t_start}]"))
            for ga, gb in wf.gaps():
                items.append(ValidationItem(
                    "error", f"channel {ch.name} has a gap ({ga}, {gb})"))
            if wf.t_end < span - 1e-12:
                items.append(ValidationItem(
                    "error", f"channel {ch.name} undefined on ({wf.t_end}, {span}]"))
        if ch.kind in ("gate1", "gate2"):
            vals = [s.v0 for _, s in ch.segments] + [s.v1 for _, s in ch.segments]
            if any(v < 0 or v > 1 for v in vals):
                items.append(ValidationItem(
                    "warning", f"channel {ch.name}: gate charge leaves [0, 1]"))

    g = None
    if geometry is not None:
        mode = resonator_mode(geometry)
        g = mode.g
        if g >= 0.3:
            items.append(ValidationItem(
                "warning", f"coupling g = {g:.3g} is outside the small-coupling regime"))

    if prog.resonator is not None:
        hw = prog.resonator.hbar_omega_uev
        if prog.resonator.n_max < 6:
            items.append(ValidationItem(
                "warning", f"n_max = {prog.resonator.n_max} risks Fock truncation"))
        for u in prog.units:
            windows = _coupling_windows(prog, u.unit_id, geometry, device)
            for (ta, tb, lam) in windows:
                om2 = _gate_value(prog, u.unit_id, "gate2", 0.5 * (ta + tb))
                omega2 = en.e_c2 * (om2 - 0.5)
                ratio = abs(2.0 * abs(omega2) - hw) / (2.0 * abs(omega2) + hw)
                if lam > 0 and ratio > 0.3:
                    items.append(ValidationItem(
                        "warning",
                        f"unit {u.unit_id}: detuning ratio {ratio:.3g} in "
                        f"coupling window [{ta:g}, {tb:g}] strains the "
                        f"rotating-wave reduction"))
                if lam > 0 and omega2 > 0:
                    items.append(ValidationItem(
                        "warning",
                        f"unit {u.unit_id}: coupled window at positive splitting; "
                        f"the interpreter's ladder convention expects gate2 < 1/2"))
    return ValidationReport(tuple(items))


def _gate_value(prog: PulseProgram, unit_id: str, kind: str, t: float) -> float:
    chans = prog.channels_for(unit_id, kind)
    if not chans:
        return _IDLE_VALUE[kind]
    wf = chans[0].waveform()
    if wf is None:
        return _IDLE_VALUE[kind]
    try:
        return wf.value(t, hold=prog.hold)
    except WaveformGapError:
        return _IDLE_VALUE[kind]


def _coupling_windows(prog, unit_id, geometry, device):
    """Maximal spans where the unit's resonator coupling is nonzero."""
    chans = prog.channels_for(unit_id, "coupling")
    span = prog.span
    if not chans:
        if geometry is None:
            return []
        lam = resonator_mode(geometry).g * device.e_j2
        return [(0.0, span, lam)] if lam > 0 else []
    out = []
    for _, seg in chans[0].segments:
        lam_max = max(abs(seg.v0), abs(seg.v1))
        if lam_max > 0:
            out.append((seg.t0, seg.t1, lam_max))
    return out


# --- execution ----------------------------------------------------------------

@dataclass(frozen=True)
class ExecOptions:
    tol: float = 1e-8
    dt_init: float | None = None
    max_halvings: int = 12
    include_e3: bool = False
    model: str = "rwa"
    keep_states: bool = False
    hbar: float = HBAR


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    observables: dict
    states: tuple | None
    final_state: QuantumState
    step_count: int
    achieved_tol: float
    dims: tuple


@dataclass
class _Register:
    dims: tuple
    q1_slot: dict
    q2_slot: dict
    res_slot: int | None


def register_dims(prog: PulseProgram) -> tuple:
    """Subsystem dimensions of the program's register, declaration order."""
    return _build_register(prog).dims


def _build_register(prog: PulseProgram) -> _Register:
    dims = []
    q1_slot, q2_slot = {}, {}
    for u in prog.units:
        if u.with_q1:
            q1_slot[u.unit_id] = len(dims)
            dims.append(2)
        q2_slot[u.unit_id] = len(dims)
        dims.append(2)
    res_slot = None
    if prog.resonator is not None:
        res_slot = len(dims)
        dims.append(prog.resonator.n_max + 1)
    return _Register(tuple(dims), q1_slot, q2_slot, res_slot)


def _embed(op2: np.ndarray, slot: int, dims) -> np.ndarray:
    out = np.array([[1.0 + 0.0j]])
    for i, d in enumerate(dims):
        out = np.kron(out, op2 if i == slot else np.eye(d, dtype=complex))
    return out


def _embed_pair(op4: np.ndarray, slot_a: int, slot_b: int, dims) -> np.ndarray:
    """Embed a two-qubit operator on adjacent slots (slot_b = slot_a + 1)."""
    assert slot_b == slot_a + 1
    out = np.array([[1.0 + 0.0j]])
    i = 0
    while i < len(dims):
        if i == slot_a:
            out = np.kron(out, op4)
            i += 2
        else:
            out = np.kron(out, np.eye(dims[i], dtype=complex))
            i += 1
    return out


_SX2 = np.array([[0, 1], [1, 0]], dtype=complex)
_SZ2 = np.diag([1.0, -1.0]).astype(complex)
_SP2 = np.array([[0, 0], [1, 0]], dtype=complex)   # charge raiser |1><0|


def _build_terms(prog: PulseProgram, device: DeviceParams,
                 geometry: ResonatorGeometry | None, opts: ExecOptions):
    """Static operator stack plus aligned coefficients.

    Returns (register, terms, coeffs); each coeffs entry is a plain float
    for time-independent contributions or a callable of t.
    """
    en = derive_energies(device)
    reg = _build_register(prog)
    dims = reg.dims
    terms = []
    coeffs = []  # float | callable

    def channel_fn(unit_id, kind, scale_fn):
        chans = prog.channels_for(unit_id, kind)
        if not chans or chans[0].waveform() is None:
            return scale_fn(_IDLE_VALUE[kind])
        wf = chans[0].waveform()
        return lambda t: scale_fn(wf.value(t, hold=prog.hold))

    for u in prog.units:
        q2 = reg.q2_slot[u.unit_id]
        q1 = reg.q1_slot.get(u.unit_id)

        ng1_fn = None
        if q1 is not None:
            ng1_fn = channel_fn(u.unit_id, "gate1", lambda v: v)
        ng2_fn = channel_fn(u.unit_id, "gate2", lambda v: v)

        def make_omega(e_c, e_3, own_fn, other_fn):
            if callable(own_fn) or callable(other_fn):
                own = own_fn if callable(own_fn) else (lambda t, v=own_fn: v)
                other = other_fn if callable(other_fn) else (lambda t, v=other_fn: v)
                return lambda t: e_c * (own(t) - 0.5) + 2.0 * e_3 * (other(t) - 0.5)
            return e_c * (own_fn - 0.5) + 2.0 * e_3 * (other_fn - 0.5)

        other1 = ng1_fn if ng1_fn is not None else 0.5
        terms.append(_embed(_SZ2, q2, dims))
        coeffs.append(make_omega(en.e_c2, en.e_3, ng2_fn, other1))
        terms.append(_embed(_SX2, q2, dims))
        coeffs.append(channel_fn(u.unit_id, "flux2",
                                 lambda v: -effective_josephson(device.e_j2, v)))

        if q1 is not None:
            terms.append(_embed(_SZ2, q1, dims))
            coeffs.append(make_omega(en.e_c1, en.e_3, ng1_fn, ng2_fn))
            terms.append(_embed(_SX2, q1, dims))
            coeffs.append(channel_fn(u.unit_id, "flux1",
                                     lambda v: -effective_josephson(device.e_j1, v)))
            terms.append(_embed_pair(XY_COUPLER.entries, q1, q2, dims))
            coeffs.append(channel_fn(u.unit_id, "flux3",
                                     lambda v: -effective_josephson(device.e_j3, v)))
            if opts.include_e3 and en.e_3 != 0.0:
                terms.append(_embed_pair(ZZ_COUPLER.entries, q1, q2, dims))
                coeffs.append(en.e_3)

        if reg.res_slot is not None:
            lam = _coupling_coeff(prog, u.unit_id, geometry, device)
            if lam is not None:
                terms.append(_coupling_term(reg, q2, dims, opts.model))
                coeffs.append(lam)

    if reg.res_slot is not None:
        from .qcore import destroy as _destroy

        nf = dims[reg.res_slot]
        a = _destroy(nf - 1).entries
        n_ph = a.conj().T @ a
        hw = prog.resonator.hbar_omega_uev
        if opts.model == "rabi":
            n_ph = n_ph + 0.5 * np.eye(nf)
        terms.append(_embed(n_ph, reg.res_slot, dims))
        coeffs.append(hw)

    return reg, np.array(terms), coeffs


def _coupling_coeff(prog, unit_id, geometry, device):
    chans = prog.channels_for(unit_id, "coupling")
    if chans and chans[0].waveform() is not None:
        wf = chans[0].waveform()
        return lambda t: wf.value(t, hold=prog.hold)
    if geometry is not None:
        return resonator_mode(geometry).g * device.e_j2
    raise ProgramExecutionError(
        f"unit {unit_id}: resonator coupling needs a coupling channel or a geometry")


def _coupling_term(reg, q2_slot, dims, model):
    from .qcore import destroy as _destroy

    nf = dims[reg.res_slot]
    a = _destroy(nf - 1).entries
    if model == "rwa":
        op = -(_kron_at(_SP2, q2_slot, a, reg.res_slot, dims)
               + _kron_at(_SP2.conj().T, q2_slot, a.conj().T, reg.res_slot, dims))
    else:
        op = -_kron_at(_SX2, q2_slot, a + a.conj().T, reg.res_slot, dims)
    return op


def _kron_at(op_a, slot_a, op_b, slot_b, dims):
    out = np.array([[1.0 + 0.0j]])
    for i, d in enumerate(dims):
        if i == slot_a:
            out = np.kron(out, op_a)
        elif i == slot_b:
            out = np.kron(out, op_b)
        else:
            out = np.kron(out, np.eye(d, dtype=complex))
    return out


def _interval_grid(prog: PulseProgram, sample_times) -> list[tuple[float, float, bool]]:
    """(a, b, varies) intervals between all breakpoints in [0, span]."""
    span = prog.span
    pts = {0.0, span}
    pts.update(t for t in sample_times if 0.0 < t < span)
    for ch in prog.channels.values():
        for _, seg in ch.segments:
            for t in (seg.t0, seg.t1):
                if 0.0 <= t <= span:
                    pts.add(t)
    edges = sorted(pts)
    out = []
    for a, b in zip(edges, edges[1:]):
        mid = 0.5 * (a + b)
        varies = False
        for ch in prog.channels.values():
            for _, seg in ch.segments:
                if seg.t0 <= mid <= seg.t1 and not seg.is_constant:
                    varies = True
        out.append((a, b, varies))
    return out


def _refined_run(prog, device, geometry, opts, x0, conjugate, sample_times):
    """Shared refinement loop; returns (final, snapshots, steps, achieved)."""
    reg, terms, coeff_spec = _build_terms(prog, device, geometry, opts)
    if x0.shape[0] != int(np.prod(reg.dims)):
        raise ProgramExecutionError(
            f"state dim {x0.shape[0]} != register dim {int(np.prod(reg.dims))}")
    intervals = _interval_grid(prog, sample_times)
    n_sub0 = 8 if opts.dt_init is None else max(
        1, int(np.ceil(max(b - a for a, b, _ in intervals) / opts.dt_init)))
    any_varies = any(v for _, _, v in intervals)

    prev_final = None
    achieved = np.inf
    for level in range(opts.max_halvings + 1):
        n_sub = n_sub0 * (2 ** level)
        edges = [0.0]
        for a, b, varies in intervals:
            n = n_sub if varies else 1
            edges.extend(np.linspace(a, b, n + 1)[1:])
        edges = np.asarray(edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        dts = np.diff(edges)
        coeffs = np.empty((len(mids), len(coeff_spec)))
        for j, c in enumerate(coeff_spec):
            coeffs[:, j] = c if not callable(c) else [c(t) for t in mids]
        snap_idx = np.searchsorted(edges, np.asarray(sample_times[1:]) - 1e-12)
        snap_steps = np.clip(np.asarray(snap_idx, dtype=np.int64) - 1,
                             0, len(mids) - 1)
        x_final, snaps = kernels.propagate(terms, coeffs, dts, opts.hbar, x0,
                                           conjugate=conjugate,
                                           snap_steps=snap_steps)
        if not any_varies:
            return reg, x_final, snaps, len(mids), 0.0
        if prev_final is not None:
            achieved = float(np.linalg.norm(x_final - prev_final))
            if achieved <= opts.tol:
                return reg, x_final, snaps, len(mids), achieved
        prev_final = x_final
    raise ProgramExecutionError(
        f"no convergence to tol={opts.tol} after {opts.max_halvings} halvings "
        f"(last change {achieved:.3e})")


def _sample_times(prog: PulseProgram) -> list[float]:
    span = prog.span
    times = [0.0]
    if prog.sample is not None and span > 0:
        k = 1
        while k * prog.sample.every < span - 1e-12:
            times.append(k * prog.sample.every)
            k += 1
    if span > 0:
        times.append(span)
    return times


def execute_program(prog: PulseProgram, initial: QuantumState,
                    device: DeviceParams,
                    geometry: ResonatorGeometry | None = None,
                    opts: ExecOptions = ExecOptions()) -> Trajectory:
    """Run the schedule on an initial state.

    ``observables['norm']`` always tracks the state norm (trace for mixed
    input); further columns follow the program's sample line (sz1@<unit>,
    sz2@<unit>, nph).
    """
    if initial.kind == "pure":
        x0 = np.ascontiguousarray(initial.data[:, None])
        conjugate = False
    else:
        x0 = initial.data
        conjugate = True

    times = _sample_times(prog)
    if prog.span == 0:
        reg = _build_register(prog)
        states = [x0]
        obs = _compute_observables(prog, reg, states, initial)
        return Trajectory(times=np.array([0.0]), observables=obs,
                          states=tuple(states) if opts.keep_states else None,
                          final_state=initial, step_count=0, achieved_tol=0.0,
                          dims=reg.dims)

    reg, x_final, snaps, steps, achieved = _refined_run(
        prog, device, geometry, opts, x0, conjugate, times)
    states = [x0] + [snaps[i] for i in range(snaps.shape[0])]
    _check_truncation(reg, states, initial)
    obs = _compute_observables(prog, reg, states, initial)
    if initial.kind == "pure":
        final = QuantumState("pure", x_final[:, 0], reg.dims)
    else:
        final = QuantumState("mixed", 0.5 * (x_final + x_final.conj().T), reg.dims)
    return Trajectory(times=np.asarray(times), observables=obs,
                      states=tuple(states) if opts.keep_states else None,
                      final_state=final, step_count=steps,
                      achieved_tol=achieved, dims=reg.dims)


def program_propagator(prog: PulseProgram, device: DeviceParams,
                       geometry: ResonatorGeometry | None = None,
                       opts: ExecOptions = ExecOptions()) -> Operator:
    """Accumulated unitary of the whole schedule."""
    reg = _build_register(prog)
    dim = int(np.prod(reg.dims))
    eye = np.eye(dim, dtype=complex)
    if prog.span == 0:
        return Operator(eye, reg.dims)
    reg, x_final, _, _, _ = _refined_run(
        prog, device, geometry, opts, eye, False, [0.0, prog.span])
    return Operator(x_final, reg.dims)


def _check_truncation(reg, states, initial):
    """Top Fock level must stay empty at every sample."""
    if reg.res_slot is None:
        return
    from .resonator import TruncationOverflowError

    nf = reg.dims[reg.res_slot]
    proj = _embed(np.diag([0.0] * (nf - 1) + [1.0]).astype(complex),
                  reg.res_slot, reg.dims)
    for x in states:
        if initial.kind == "mixed":
            pop = float(np.real(np.trace(proj @ x)))
        else:
            v = x[:, 0]
            pop = float(np.real(v.conj() @ proj @ v))
        if pop > 1e-6:
            raise TruncationOverflowError(
                f"top Fock level population {pop:.2e} exceeds 1e-6; raise n_max")


def _compute_observables(prog, reg, states, initial):
    names = prog.sample.observables if prog.sample is not None else ()
    out = {"norm": []}
    ops = {}
    for name in names:
        if name == "norm":
            continue
        ops[name] = _observable_operator(name, prog, reg)
        out[name] = []
    for x in states:
        if initial.kind == "mixed":
            out["norm"].append(float(np.real(np.trace(x))))
            for name, op in ops.items():
                out[name].append(float(np.real(np.trace(op @ x))))
        else:
            v = x[:, 0]
            out["norm"].append(float(np.linalg.norm(v) ** 2))
            for name, op in ops.items():
                out[name].append(float(np.real(v.conj() @ op @ v)))
    return {k: np.asarray(v) for k, v in out.items()}


def _observable_operator(name: str, prog: PulseProgram, reg: _Register) -> np.ndarray:
    if name == "nph":
        if reg.res_slot is None:
            raise ProgramExecutionError("observable nph needs a resonator")
        nf = reg.dims[reg.res_slot]
        n = np.diag(np.arange(nf)).astype(complex)
        return _embed(n, reg.res_slot, reg.dims)
    if "@" in name:
        which, _, unit_id = name.partition("@")
        if which == "sz1":
            slot = reg.q1_slot.get(unit_id)
        elif which == "sz2":
            slot = reg.q2_slot.get(unit_id)
        else:
            slot = None
        if slot is not None:
            return _embed(_SZ2, slot, reg.dims)
    raise ProgramExecutionError(f"unknown observable {name!r}")
