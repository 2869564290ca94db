"""Independent reference implementations used as test oracles.

Written from the model equations directly, sharing no code with the package.
"""

import math


def reversals(profile):
    """Turning points of a sequence (endpoints kept, plateaus collapsed)."""
    pts = []
    for x in profile:
        if pts and x == pts[-1]:
            continue
        if len(pts) >= 2 and (pts[-1] - pts[-2]) * (x - pts[-1]) > 0:
            pts[-1] = x  # same direction: extend the current leg
        else:
            pts.append(x)
    return pts


def rainflow_four_point(profile):
    """Brute-force four-point rainflow.

    Repeatedly scans the whole reversal sequence for an interior range not
    larger than either neighbouring range, extracts it as a full cycle and
    restarts; the residue becomes half cycles. Returns (weight, dod, mean)
    tuples.
    """
    pts = reversals(profile)
    out = []
    changed = True
    while changed:
        changed = False
        for i in range(len(pts) - 3):
            a, b, c, d = pts[i:i + 4]
            inner = abs(c - b)
            if inner <= abs(b - a) and inner <= abs(d - c):
                out.append((1.0, inner, (b + c) / 2))
                del pts[i + 1:i + 3]
                changed = True
                break
    for a, b in zip(pts, pts[1:]):
        out.append((0.5, abs(b - a), (a + b) / 2))
    return out


TABLE = {
    "LFP": dict(k_alpha=5.98e6, k_beta=0.69, k_gamma=-6460.0, k_z=0.5,
                k_d1=9.05e-6, k_d2=1.40, k_d3=0.0),
    "NMC": dict(k_alpha=1.14e12, k_beta=4.70, k_gamma=-10800.0, k_z=0.5,
                k_d1=1.47e4, k_d2=-1.65, k_d3=361.0),
}
SHARED = dict(alpha_sei=0.0575, beta_sei=121.0, k_sigma=1.04, sigma_ref=0.5,
              k_T=0.0693, T_ref=298.0, k_t=4.14e-10)


def calendar(chem, sigma, temp, days):
    p = TABLE[chem]
    return p["k_alpha"] * math.exp(p["k_beta"] * sigma) * math.exp(p["k_gamma"] / temp) * days ** p["k_z"]


def dod_stress(chem, dod):
    p = TABLE[chem]
    if chem == "LFP":
        return p["k_d1"] * dod * math.exp(p["k_d2"] * dod)
    return 1.0 / (p["k_d1"] * dod ** p["k_d2"] + p["k_d3"])


def stress(chem, dod, sigma, temp, seconds, weight=1.0):
    s = SHARED
    return (weight * (dod_stress(chem, dod) + s["k_t"] * seconds)
            * math.exp(s["k_sigma"] * (sigma - s["sigma_ref"]))
            * math.exp(s["k_T"] * (temp - s["T_ref"]) * s["T_ref"] / temp))


def fade(F):
    a, b = SHARED["alpha_sei"], SHARED["beta_sei"]
    return 1 - a * math.exp(-b * F) - (1 - a) * math.exp(-F)


def w_dis(phi_pri, phi_net):
    if phi_pri > 1:
        return math.exp((phi_pri + phi_net) / 2 - 1)
    if phi_pri < 1:
        return phi_pri - 2
    return 1.0


def w_ch(phi_pri, phi_net):
    if phi_pri > 1:
        return phi_pri
    if phi_pri < 1:
        return -math.exp(1 - (phi_pri + phi_net) / 2)
    return 1.0


def w_ev(phi_pri, theta=0.916):
    return 1 + 0.5 * math.exp(-theta * phi_pri) if phi_pri <= 1 else 1.0


def fusion_weights_by_hand(preds, errors, alpha_trade):
    """Rank-based layer fusion walked step by step for one time step."""
    L = len(preds)

    def ranks(vals):
        # largest value gets rank L, ties broken by lower layer index first
        order = sorted(range(L), key=lambda i: (-vals[i], i))
        r = [0] * L
        for pos, i in enumerate(order):
            r[i] = L - pos
        return r

    f = [1 / e ** 2 for e in errors]
    F = ranks(f)
    spread = [sum(math.sqrt((preds[i] - preds[j]) ** 2) for j in range(L)) for i in range(L)]
    top = max(spread) or 1.0
    Dd = ranks([round(v / top, 12) for v in spread])
    mid = F.index(math.ceil(L / 2))
    Dp = ranks([abs(f[i] - f[mid]) for i in range(L)])
    D = ranks([Dd[i] + Dp[i] for i in range(L)])
    R = ranks([alpha_trade * F[i] + (1 - alpha_trade) * D[i] for i in range(L)])
    total = sum(R)
    return [r / total for r in R]
