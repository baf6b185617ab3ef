"""Timing comparison of the stepper backends.

Cases mirror the real workloads: a refined 4-dim storage schedule (many
tiny steps), a qubit+resonator stage (dim 18/36), and two full units on
the line (dim 144).  Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from squidstore import kernels

CASES = [
    ("storage unit, refined ramp", 4, 6, 32768),
    ("qubit + resonator stage", 18, 4, 4096),
    ("unit pair + resonator", 36, 6, 2048),
    ("two full units + resonator", 144, 8, 256),
]


def make_problem(rng, dim, n_terms, n_steps):
    terms = []
    for _ in range(n_terms):
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        terms.append(0.5 * (a + a.conj().T))
    coeffs = rng.normal(size=(n_steps, n_terms))
    # half the schedule is flat, as in real programs
    coeffs[n_steps // 2:] = coeffs[n_steps // 2]
    dts = np.full(n_steps, 0.01)
    psi = rng.normal(size=(dim, 1)) + 1j * rng.normal(size=(dim, 1))
    return np.stack(terms), coeffs, dts, psi / np.linalg.norm(psi)


def time_backend(fn, args, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out, _ = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    rng = np.random.default_rng(42)
    backends = kernels.available_backends()
    print(f"backends available: {', '.join(sorted(backends))}")
    header = f"{'case':<28} {'dim':>4} {'steps':>6} " + "".join(
        f"{name:>12}" for name in sorted(backends)) + f"{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, dim, n_terms, n_steps in CASES:
        terms, coeffs, dts, psi = make_problem(rng, dim, n_terms, n_steps)
        args = (terms, coeffs, dts, 658.2119569, psi, False, None)
        times = {}
        outs = {}
        for bname in sorted(backends):
            times[bname], outs[bname] = time_backend(backends[bname], args)
        if len(outs) == 2:
            delta = np.abs(outs["compiled"] - outs["python"]).max()
            assert delta < 1e-10, f"backend mismatch: {delta}"
        row = f"{name:<28} {dim:>4} {n_steps:>6} " + "".join(
            f"{times[b] * 1e3:>10.1f}ms" for b in sorted(times))
        if len(times) == 2:
            row += f"{times['python'] / times['compiled']:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
