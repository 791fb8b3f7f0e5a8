"""From interpolation to observability on the heat equation.

1. fit (beta, K) in the one-time interpolation inequality on twelve runs;
2. fit the Nash constant on cut-off snapshots;
3. assemble the constant ledger and the geometric time sequence for E;
4. check |u(T)| <= C_obs int_E |u|_{L1(omega)} on fresh random data, for a
   wide and a thin time set.
"""
import numpy as np

from neumann_uc import config
from neumann_uc import observability as ob
from neumann_uc.experiment import _Context, calibrate


def main():
    cfg = config.default_config()
    ctx = _Context(cfg, None)
    fit, nash, cut, ledger, seq = calibrate(ctx)
    print(f"interpolation fit: beta={fit.beta:.2f} K={fit.K:.3f} holdout margin={fit.holdout_margin:.2f}")
    print(f"cut-off: K4={cut.K4:.2f}; Nash: K3={nash.K3:.3f} over {len(nash.ratios)} snapshots")
    print(f"alpha={ledger.alpha:.4f} gamma={ledger.gamma:.4f} kappa={ledger.kappa:.4f}")
    for k, v in ledger.log.items():
        print(f"  log {k:>3s} = {v:10.3f}")

    omega = cfg.box("omega")
    for E in (((0.0, 0.5),), ((0.45, 0.55),)):
        ts = ob.TimeSet(E, cfg.T)
        sq = ob.select_telescoping_sequence(ts, ledger.kappa)
        led = ledger.with_sequence(sq.ell0, sq.ell1)
        res = []
        for s in range(300, 305):
            rep = ob.verify_observability(ctx.traj(f"random:{s}"), sq, omega, led)
            res.append(rep.log_residual)
        print(f"\nE={E}: l0={sq.ell0:.3f} l1={sq.ell1:.4f} log C_obs={led.log_C_obs:.1f}")
        print(f"  worst log(|u(T)| / (C_obs int)) over 5 data: {np.max(res):.1f}")


if __name__ == "__main__":
    main()
