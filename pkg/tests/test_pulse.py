"""Pulse-program parsing, serialization, validation, and execution."""

import numpy as np
import pytest

from conftest import preset
from squidstore import pulse
from squidstore.qcore import basis_state, mixed_state, pure_state
from squidstore.resonator import ResonatorGeometry, ResonatorMode, TransferPlan, run_transfer
from squidstore.storage import accumulated_phase, charge_frame_swap

MINIMAL = """version 1
unit u0
channel g2 unit=u0 kind=gate2
seg g2 0 1 const v=0.5
"""


def storage_prog():
    with open(preset("storage_swap.pulse"), "r", encoding="utf-8") as fh:
        return pulse.parse_program(fh.read())


class TestParse:
    def test_minimal_roundtrip_byte_identical(self):
        prog = pulse.parse_program(MINIMAL)
        assert pulse.serialize_program(prog) == MINIMAL

    def test_serializer_fixpoint(self, rng):
        # randomized programs reach canonical form after one pass
        for _ in range(10):
            lines = ["version 1", "unit a with_q1", "unit b"]
            lines.append("resonator n_max=6 hbar_omega_uev=%.6f"
                         % rng.uniform(5, 20))
            names = []
            for i, (uid, kind) in enumerate([("a", "flux3"), ("b", "gate2"),
                                             ("a", "gate1"), ("b", "coupling")]):
                name = f"ch{i}"
                names.append(name)
                lines.append(f"channel {name} unit={uid} kind={kind}")
                t = 0.0
                for _ in range(rng.integers(1, 4)):
                    dt = rng.uniform(0.5, 3)
                    shape = rng.choice(["const", "linear", "raised_cosine"])
                    if shape == "const":
                        lines.append(f"seg {name} {t:.6f} {t + dt:.6f} const "
                                     f"v={rng.uniform(0, 1):.6f}")
                    else:
                        lines.append(f"seg {name} {t:.6f} {t + dt:.6f} {shape} "
                                     f"v0={rng.uniform(0, 1):.6f} "
                                     f"v1={rng.uniform(0, 1):.6f}")
                    t += dt
            text = "\n".join(lines) + "\n"
            once = pulse.serialize_program(pulse.parse_program(text))
            twice = pulse.serialize_program(pulse.parse_program(once))
            assert once == twice

    def test_storage_fixture_shape(self):
        prog = storage_prog()
        assert len(prog.units) == 1 and prog.units[0].with_q1
        wf = prog.channels["f3"].waveform()
        assert len(wf.segments) == 3
        assert prog.resonator is None

    def test_overlap_cites_both_lines(self):
        text = MINIMAL + "seg g2 0.5 2 const v=0.1\n"
        with pytest.raises(pulse.OverlapSegmentsError) as err:
            pulse.parse_program(text)
        assert err.value.lines == (4, 5)

    @pytest.mark.parametrize("text,match", [
        ("unit u0\n", "must start with 'version 1'"),
        ("version 2\n", "only 'version 1'"),
        ("version 1\nwobble\n", "unknown directive"),
        ("version 1\nunit u0\nseg nope 0 1 const v=0\n", "unknown channel"),
        ("version 1\nunit u0\nchannel c unit=u0 kind=warp\n", "unknown channel kind"),
        ("version 1\nchannel c unit=u0 kind=gate2\n", "unknown unit"),
        ("version 1\nunit u0\nchannel c unit=u0 kind=gate2\nseg c 1 1 const v=0\n",
         "t1 > t0"),
        ("version 1\nunit u0\nchannel c unit=u0 kind=gate2\nseg c -1 1 const v=0\n",
         "t0 must be"),
        ("version 1\nunit u0\nchannel c unit=u0 kind=gate2\nseg c 0 1 const\n",
         "missing keys"),
        ("version 1\nunit u0\nunit u0\n", "duplicate unit"),
        ("version 1\nunit u0\nchannel c unit=u0 kind=gate2\n"
         "channel d unit=u0 kind=gate2\n", "already has"),
        ("version 1\nresonator n_max=1 hbar_omega_uev=10\n", "n_max"),
    ])
    def test_syntax_errors(self, text, match):
        with pytest.raises((pulse.ProgramSyntaxError, ValueError), match=match):
            pulse.parse_program(text)

    def test_error_carries_line_number(self):
        try:
            pulse.parse_program("version 1\nunit u0\nbad line\n")
        except pulse.ProgramSyntaxError as err:
            assert err.lineno == 3

    def test_comments_and_blank_lines(self):
        text = "# header\nversion 1\n\nunit u0  # the unit\n"
        prog = pulse.parse_program(text)
        assert prog.units[0].unit_id == "u0"


class TestValidate:
    def test_storage_fixture_clean(self, demo_device):
        report = pulse.validate_program(storage_prog(), demo_device)
        assert report.ok

    def test_strong_coupling_warns(self, demo_device):
        geom = ResonatorGeometry(0.02, 5e-7, 2e-10, 1.6e-8, 1e-7)   # g ~ 0.5
        report = pulse.validate_program(storage_prog(), demo_device, geom)
        assert any("small-coupling" in w.message for w in report.warnings)

    def test_detuned_window_warns(self, demo_device):
        text = """version 1
unit a
resonator n_max=8 hbar_omega_uev=10.34
channel c unit=a kind=coupling
seg c 0 100 const v=10
channel g unit=a kind=gate2
seg g 0 100 const v=0.45
"""
        report = pulse.validate_program(pulse.parse_program(text), demo_device)
        assert any("rotating-wave" in w.message for w in report.warnings)

    def test_gate_range_warns(self, demo_device):
        text = MINIMAL.replace("v=0.5", "v=1.4")
        report = pulse.validate_program(pulse.parse_program(text), demo_device)
        assert any("gate charge" in w.message for w in report.warnings)

    def test_gap_is_error(self, demo_device):
        text = """version 1
unit u0 with_q1
channel f3 unit=u0 kind=flux3
seg f3 0 1 const v=0.5
seg f3 2 3 const v=0.5
"""
        report = pulse.validate_program(pulse.parse_program(text), demo_device)
        assert any("gap" in e.message for e in report.errors)
        held = pulse.parse_program(text.replace("version 1", "version 1\nhold"))
        assert pulse.validate_program(held, demo_device).ok

    def test_q1_channels_need_q1(self, demo_device):
        text = """version 1
unit u0
channel f3 unit=u0 kind=flux3
seg f3 0 1 const v=0.5
"""
        report = pulse.validate_program(pulse.parse_program(text), demo_device)
        assert any("with_q1" in e.message for e in report.errors)


class TestExecute:
    def test_storage_fixture_matches_closed_form(self, xy_device):
        prog = storage_prog()
        opts = pulse.ExecOptions(tol=1e-9)
        u = pulse.program_propagator(prog, xy_device, opts=opts)
        wf = prog.channels["f3"].waveform()
        xi = accumulated_phase(wf, prog.span, xy_device.e_j3)
        ref = charge_frame_swap(xi).entries
        assert np.linalg.norm(u.entries - ref, ord=2) <= 1e-8

    def test_zero_duration_program(self, demo_device):
        prog = pulse.parse_program("version 1\nunit u0\n")
        psi = pure_state([0.6, 0.8])
        traj = pulse.execute_program(prog, psi, demo_device)
        assert traj.step_count == 0
        np.testing.assert_allclose(traj.final_state.data, psi.data)

    def test_deterministic(self, xy_device):
        prog = storage_prog()
        psi = basis_state(4, 0, (2, 2))
        t1 = pulse.execute_program(prog, psi, xy_device)
        t2 = pulse.execute_program(prog, psi, xy_device)
        np.testing.assert_array_equal(t1.final_state.data, t2.final_state.data)
        for k in t1.observables:
            np.testing.assert_array_equal(t1.observables[k], t2.observables[k])

    def test_trace_drift_bounded(self, xy_device):
        prog = storage_prog()
        rho = mixed_state(np.diag([0.5, 0.2, 0.2, 0.1]).astype(complex), (2, 2))
        traj = pulse.execute_program(prog, rho, xy_device)
        assert np.abs(traj.observables["norm"] - 1).max() <= 1e-8

    def test_monotone_refinement(self, xy_device):
        # commuting schedule: error vs the closed form falls as the initial
        # step is halved (tol=inf stops each run after one refinement)
        prog = pulse.parse_program(
            open(preset("storage_swap_linear.pulse"), encoding="utf-8").read())
        wf = prog.channels["f3"].waveform()
        xi = accumulated_phase(wf, prog.span, xy_device.e_j3)
        ref = charge_frame_swap(xi).entries
        errs = []
        for dt in (0.5, 0.25, 0.125, 0.0625):
            opts = pulse.ExecOptions(tol=np.inf, dt_init=dt)
            u = pulse.program_propagator(prog, xy_device, opts=opts)
            errs.append(np.linalg.norm(u.entries - ref, ord=2))
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_transfer_fixture_matches_stage_model(self, demo_device):
        with open(preset("transfer_pair.pulse"), encoding="utf-8") as fh:
            prog = pulse.parse_program(fh.read())
        alpha, beta = 0.6 + 0.3j, np.sqrt(1 - abs(0.6 + 0.3j) ** 2)
        vac = np.zeros(9)
        vac[0] = 1
        psi0 = np.kron(np.kron([beta, alpha], [1, 0]), vac)
        traj = pulse.execute_program(prog, pure_state(psi0, (2, 2, 9)),
                                     demo_device)
        from squidstore.qcore import partial_trace
        red_b = partial_trace(traj.final_state, [1])

        mode = ResonatorMode(0.0, 10.34)
        res = run_transfer(alpha, beta, TransferPlan(lam=10.0, n_max=8), mode)
        corr = np.diag([1.0, -np.exp(1j * 10.34 * prog.span / 658.2119569)])
        rho_corr = corr @ red_b.data @ corr.conj().T
        target = np.array([beta, alpha])
        fid = float(np.real(target.conj() @ rho_corr @ target))
        assert abs(fid - res.fidelity_corrected) <= 1e-8

    def test_mixed_initial_matches_pure(self, xy_device):
        prog = storage_prog()
        psi = pure_state([0.6, 0, 0, 0.8j], (2, 2))
        t_pure = pulse.execute_program(prog, psi, xy_device)
        t_mixed = pulse.execute_program(
            prog, mixed_state(psi.density(), (2, 2)), xy_device)
        np.testing.assert_allclose(t_pure.final_state.density(),
                                   t_mixed.final_state.data, atol=1e-9)

    def test_dimension_mismatch(self, xy_device):
        with pytest.raises(pulse.ProgramExecutionError, match="dim"):
            pulse.execute_program(storage_prog(), basis_state(2, 0), xy_device)

    def test_unknown_observable(self, xy_device):
        text = MINIMAL + "sample every=0.5 observables=sy9@u0\n"
        with pytest.raises(pulse.ProgramExecutionError, match="unknown observable"):
            pulse.execute_program(pulse.parse_program(text),
                                  basis_state(2, 0), xy_device)

    def test_coupling_needs_source(self, demo_device):
        text = """version 1
unit a
resonator n_max=4 hbar_omega_uev=10.34
channel g unit=a kind=gate2
seg g 0 10 const v=0.49
"""
        with pytest.raises(pulse.ProgramExecutionError, match="coupling"):
            pulse.execute_program(pulse.parse_program(text),
                                  basis_state(10, 0, (2, 5)), demo_device)

    def test_propagator_unitary(self, xy_device):
        u = pulse.program_propagator(storage_prog(), xy_device).entries
        np.testing.assert_allclose(u @ u.conj().T, np.eye(4), atol=1e-10)

    def test_hold_mode_execution(self, xy_device):
        text = """version 1
hold
unit u0 with_q1
channel f3 unit=u0 kind=flux3
seg f3 0 1 const v=0
seg f3 2 3 const v=0.5
"""
        prog = pulse.parse_program(text)
        u = pulse.program_propagator(prog, xy_device)
        # the gap holds f3 = 0, so two full-coupling picoseconds accumulate
        xi = 2 * xy_device.e_j3 * 2.0 / 658.2119569
        ref = charge_frame_swap(xi).entries
        assert np.linalg.norm(u.entries - ref, ord=2) <= 1e-9

    def test_truncation_overflow(self, demo_device):
        from squidstore.resonator import TruncationOverflowError
        with open(preset("transfer_pair.pulse"), encoding="utf-8") as fh:
            prog = pulse.parse_program(fh.read())
        vac = np.zeros(9)
        vac[0] = 1
        psi0 = np.kron(np.kron([0, 1], [1, 0]), vac)
        with pytest.raises(TruncationOverflowError):
            pulse.execute_program(prog, pure_state(psi0, (2, 2, 9)), demo_device,
                                  opts=pulse.ExecOptions(model="rabi"))
