"""Regenerate ``src/liempc/data/otter.yaml`` from the Otter USV formulas.

The numbers follow ``otter.py`` of the Python Vehicle Simulator (Marine
Systems Simulator, T. I. Fossen). Two simplifications are made on purpose:

* the strip-theory cross-flow drag is replaced by an equivalent diagonal
  quadratic sway coefficient ``Y_|v|v = -0.5 rho T Cd L``;
* the payload gravity vector ``g_0`` is dropped so that eta = 0 is an
  equilibrium of the restoring model.

Usage: python3 scripts/make_otter_params.py > src/liempc/data/otter.yaml
"""
import math

import numpy as np


def smtrx(a):
    return np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]], float)


def hmtrx(r):
    H = np.eye(6)
    H[0:3, 3:6] = smtrx(r).T
    return H


def otter():
    g = 9.81
    rho = 1026.0
    L, B = 2.0, 1.08
    m, mp = 55.0, 25.0
    rp = np.array([0.05, 0.0, -0.35])
    rg = np.array([0.2, 0.0, -0.2])
    rg = (m * rg + mp * rp) / (m + mp)
    S_rg, S_rp = smtrx(rg), smtrx(rp)
    H_rg = hmtrx(rg)

    R44, R55, R66 = 0.4 * B, 0.25 * L, 0.25 * L
    T_yaw = 1.0
    Umax = 6 * 0.5144

    B_pont, y_pont, Cw_pont, Cb_pont = 0.25, 0.395, 0.75, 0.4
    nabla = (m + mp) / rho
    T = nabla / (2 * Cb_pont * B_pont * L)
    Ig_CG = m * np.diag([R44**2, R55**2, R66**2])
    Ig = Ig_CG - m * S_rg @ S_rg - mp * S_rp @ S_rp

    k_pos, k_neg = 0.02216 / 2, 0.01289 / 2
    n_max = math.sqrt((0.5 * 24.4 * g) / k_pos)
    n_min = -math.sqrt((0.5 * 13.6 * g) / k_neg)

    MRB_CG = np.zeros((6, 6))
    MRB_CG[0:3, 0:3] = (m + mp) * np.eye(3)
    MRB_CG[3:6, 3:6] = Ig
    MRB = H_rg.T @ MRB_CG @ H_rg

    MA = -np.diag([-0.1 * m, -1.5 * m, -1.0 * m,
                   -0.2 * Ig[0, 0], -0.8 * Ig[1, 1], -1.7 * Ig[2, 2]])
    M = MRB + MA

    Aw_pont = Cw_pont * L * B_pont
    I_T = (2 * (1 / 12) * L * B_pont**3
           * (6 * Cw_pont**3 / ((1 + Cw_pont) * (1 + 2 * Cw_pont)))
           + 2 * Aw_pont * y_pont**2)
    I_L = 0.8 * 2 * (1 / 12) * B_pont * L**3
    KB = (1 / 3) * (5 * T / 2 - 0.5 * nabla / (L * B_pont))
    GM_T = KB + I_T / nabla - (T - rg[2])
    GM_L = KB + I_L / nabla - (T - rg[2])
    G33 = rho * g * (2 * Aw_pont)
    G44 = rho * g * nabla * GM_T
    G55 = rho * g * nabla * GM_L
    G_CF = np.diag([0, 0, G33, G44, G55, 0])
    H = hmtrx(np.array([-0.2, 0.0, 0.0]))
    G = H.T @ G_CF @ H

    w3 = math.sqrt(G33 / M[2, 2])
    w4 = math.sqrt(G44 / M[3, 3])
    w5 = math.sqrt(G55 / M[4, 4])
    Xu = -24.4 * g / Umax
    Yv = 0.0
    Zw = -2 * 0.3 * w3 * M[2, 2]
    Kp = -2 * 0.2 * w4 * M[3, 3]
    Mq = -2 * 0.4 * w5 * M[4, 4]
    Nr = -M[5, 5] / T_yaw

    # Hoerner 2-D cross-flow coefficient at B/(2T), interpolated from the
    # simulator's table.
    cd_x = [0.0109, 0.1766, 0.3530, 0.4519, 0.4728, 0.4929, 0.4933, 0.5585,
            0.6464, 0.8336, 0.9880, 1.3081, 1.6392, 1.8600, 2.3129, 2.6000,
            3.0088, 3.4508, 3.7379, 4.0031]
    cd_y = [1.9568, 1.9502, 1.9027, 1.8006, 1.6790, 1.6017, 1.5026, 1.4136,
            1.3245, 1.2156, 1.1508, 1.0879, 1.0544, 1.0207, 0.9964, 0.9733,
            0.9465, 0.9328, 0.9261, 0.9130]
    Cd = float(np.interp(B_pont / (2 * T), cd_x, cd_y))
    Yvv = -0.5 * rho * T * Cd * L

    return dict(
        mass=m + mp, cog=rg, inertia=MRB[3:6, 3:6], M_RB=MRB, added_mass=MA,
        damping_linear=[Xu, Yv, Zw, Kp, Mq, Nr],
        damping_quadratic=[0.0, Yvv, 0.0, 0.0, 0.0, 10 * Nr],
        restoring=G, lever_arm=y_pont, thrust_coeff_pos=k_pos,
        thrust_coeff_neg=k_neg,
        thrust_limits=[-k_neg * n_min**2, k_pos * n_max**2],
        draft=T, cd=Cd,
    )


def fmt_row(row):
    return "[" + ", ".join(f"{v + 0.0:.10g}" for v in row) + "]"


def main():
    p = otter()
    # M_RB rebuilt from (mass, cog, inertia) must match the simulator's
    # H^T M_CG H construction.
    m, (xg, yg, zg) = p["mass"], p["cog"]
    top_right = np.array([[0, m * zg, -m * yg], [-m * zg, 0, m * xg], [m * yg, -m * xg, 0]])
    assert np.allclose(p["M_RB"][0:3, 3:6], top_right)
    assert np.allclose(p["M_RB"][0:3, 0:3], m * np.eye(3))

    out = []
    out.append("# Otter USV (Maritime Robotics), 2 m catamaran with two thrusters.")
    out.append("# Transcribed from otter.py of the Python Vehicle Simulator (Marine Systems")
    out.append("# Simulator, T. I. Fossen) by scripts/make_otter_params.py.")
    out.append("# Conventions: SI units, angles in rad, Fossen ordering [u v w p q r],")
    out.append("# NED frame, ZYX (roll-pitch-yaw) Euler angles. Damping coefficients use")
    out.append("# the SNAME sign convention (non-positive).")
    out.append("# Deviations from the simulator source:")
    out.append(f"#   * cross-flow drag folded into damping_quadratic[1] = -0.5 rho T Cd L,")
    out.append(f"#     T = {p['draft']:.4f} m, Cd = {p['cd']:.4f} (Hoerner at B/2T).")
    out.append("#   * payload gravity term g_0 omitted; eta = 0 is an equilibrium.")
    out.append("#   * propeller shaft dynamics omitted; inputs are thrust forces.")
    out.append("# coriolis_am_mask lists (row, col) entries of C_AM that the simulator zeroes")
    out.append("# (Munk moment in yaw: couplings between yaw rate and surge/sway velocity).")
    out.append("name: otter")
    out.append(f"mass: {p['mass']:.10g}")
    out.append(f"cog: {fmt_row(p['cog'])}")
    out.append("inertia:")
    for row in p["inertia"]:
        out.append(f"  - {fmt_row(row)}")
    out.append("added_mass:")
    for row in p["added_mass"]:
        out.append(f"  - {fmt_row(row)}")
    out.append(f"damping_linear: {fmt_row(p['damping_linear'])}")
    out.append(f"damping_quadratic: {fmt_row(p['damping_quadratic'])}")
    out.append("restoring:")
    for row in p["restoring"]:
        out.append(f"  - {fmt_row(row)}")
    out.append(f"lever_arm: {p['lever_arm']:.10g}")
    out.append(f"thrust_coeff_pos: {p['thrust_coeff_pos']:.10g}")
    out.append(f"thrust_coeff_neg: {p['thrust_coeff_neg']:.10g}")
    out.append(f"thrust_limits: {fmt_row(p['thrust_limits'])}")
    out.append("coriolis_am_mask: [[5, 0], [5, 1], [0, 5], [1, 5]]")
    print("\n".join(out))


if __name__ == "__main__":
    main()
