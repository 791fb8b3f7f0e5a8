"""Carleman weights and the frequency function along a solution.

Builds the paired weight family for the observation interval (0.4, 0.6),
checks the Morse-type properties, then follows y(t) and N(t) for a
variable-coefficient problem and runs the four stage checks.  SVG plots of
the weights and the trace are written to ``demos/out``.
"""
from pathlib import Path

from neumann_uc import frequency, mesh, plotting, solver, weights
from neumann_uc import initial_data as idat

OUT = Path(__file__).resolve().parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    g = mesh.build_grid((0, 1), 129)
    c = mesh.coefficients(g, A=lambda x: 1 + 0.5 * x, B=0.5, a=-1.0)
    fam = weights.build_weight_family(g, (0.4, 0.6))
    morse = weights.verify_morse_properties(fam)
    s_star = weights.max_admissible_s(fam, c.lam)
    print(f"weight family: {fam.n_weights} weights, Morse checks passed={morse['passed']}, s*={s_star:.4e}")
    plotting.plot_weights(fam, OUT / "weights.svg")

    tr = solver.solve(idat.named_datum(g, "smooth:2"), c, 1.0, 1e-3)
    ft = frequency.compute_trace(tr, fam, 0.5 * s_star, 0.1)
    print(f"N(t) falls from {ft.N[1]:.1f} to {ft.N[-1]:.2f}; y(T)/y(0) = {ft.y[-1] / ft.y[0]:.3e}")
    print(f"stage 1: max |<A f, f>| / H1 = {frequency.stage1_residual(ft).max():.2e}")
    st2 = frequency.check_stage2(ft)
    print(f"stage 2: passed={st2.passed}, worst ratio to slack {st2.details['max_ratio_first']:.3f}")
    st3 = frequency.check_stage3(ft)
    C0, C = st3.details["C0"], st3.details["C"]
    print(f"stage 3: signs hold, fitted C0={C0:.3f}, C={C:.3e}")
    Ml = frequency.compute_Ml(ft, 2.0, C0)
    st4 = frequency.check_stage4(ft, 2.0, Ml, C0, C)
    print(f"stage 4: M_l={Ml:.3f}, log gap {st4.details['log_gap']:.3f} <= log K {st4.details['log_K_lM']:.3f}")
    plotting.plot_trace(ft, OUT / "frequency.svg", title="y and N")
    print(f"plots in {OUT}")


if __name__ == "__main__":
    main()
