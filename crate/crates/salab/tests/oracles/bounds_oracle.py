"""High-precision re-evaluation of the bound curves used in tests/bounds_oracle.rs.

Every constant is re-derived from the raw inputs with mpmath at 50 digits;
nothing is shared with the Rust implementation.
"""
import mpmath as mp

mp.mp.dps = 50
KS = [0, 1, 10, 100, 1000, 10000]


def mult():
    g, sigma, a, x0, s = mp.mpf("0.5"), mp.mpf("0.75"), mp.mpf("2.02"), mp.mpf(1), mp.mpf(1)
    mu = mp.mpf(1)
    l = u = mp.sqrt(1 + mu)  # identical euclidean norms
    gt = g * u / l
    # 2αD rounded up to the next integer by inflating σ
    n = mp.ceil(2 * a * (sigma + g - 1))
    D = n / (2 * a)
    sig = 1 - g + D
    m = int(n) + 1
    D0 = 2 * (1 - gt)
    D1 = 4 * sig**2 / l**2
    D2 = 2 * (2 + sig) ** 2 * u**2 / mu
    D3 = D0 * D2 / (4 * D1)
    D4 = (1 + s) ** 2 / x0**2
    h = a / min(1, D0, D0 / (4 * D2))
    a0 = a / h
    c1 = 32**m * D1**m * (1 + D4) ** m * u ** (2 * m) / D0**m * (1 + sig**2 * D4 / D**2)
    c2 = D0 / (16 * a0 * D1 * l**2)
    c3 = 8 * a * mp.e * D2 * D4 / (a * D0 - 2)
    c4 = a * D3
    f = lambda k: a / (k + h) * (c2 + c3 + c4 * mp.log((k - 1 + h) / (h - 1))) ** m
    grid = [mp.mpf(0)] + [mp.mpf(2) ** j for j in range(80)]
    j = max(range(len(grid)), key=lambda i: f(grid[i]))
    if j == 0:
        kstar = mp.mpf(0)
    else:
        lo, hi = grid[j - 1], grid[min(j + 1, len(grid) - 1)]
        kstar = mp.findroot(lambda k: mp.diff(f, k), (lo, hi), solver="anderson")
    c5 = max(f(mp.mpf(k)) for k in range(max(0, int(kstar) - 3), int(kstar) + 4))
    c1pp = (64 * D1 * (1 + D4) * u**2) ** (m + 1) / D0 ** (m + 1) * (1 + sig**2 * D4 / D**2) * (1 + c5)
    delta, K = mp.mpf("0.1"), 0
    out = {"h": h, "c1": c1, "c5": c5, "c1pp": c1pp}
    for k in KS:
        L = mp.log(m / delta)
        first = L + c2 + c3 + c4 * mp.log((k - 1 + h) / (h - 1))
        second = L + c2 * (h / (K + h)) ** (a * D0 / 2 - 1) + c3 + c4 * mp.log((k - 1 + h) / (K - 1 + h))
        out[f"dpos_{k}"] = c1 * a * x0**2 / (k + h) * first ** (m - 1) * second
        Lp = mp.log((m + 1) / delta)
        second_p = Lp + c2 * (h / (K + h)) ** (a * D0 / 2 - 1) + c3 + c4 * mp.log((k - 1 + h) / (K - 1 + h))
        out[f"prime_{k}"] = c1pp * a / (k + h) * x0**2 * (Lp**m + 1) * second_p
        out[f"fixed_{k}"] = c1 * a * x0**2 / (k + h) * first**m
    return out


def add(z):
    g, sb, cd, x0, mu = mp.mpf("0.5"), mp.mpf(1), mp.mpf(1), mp.mpf(1), mp.mpf(1)
    l = u = mp.sqrt(1 + mu)
    ustar = 1 / l  # euclidean norm is self-dual; ‖x‖_M ≤ ‖x‖/ℓ_cM
    gt = g * u / l
    B0 = mu / (8 * sb**2)
    B1 = 2 * (1 - gt)
    B2 = 8 * u**2 / mu
    B3 = 2 * sb**2 * ustar**2
    B4 = 2 * cd * sb**2 / mu
    B5 = B1 * B4 / (4 * B3)
    a = mp.mpf("4.4") if z == 1 else mp.mpf(1)
    z = mp.mpf(z)
    cap = min(4 * B0 * B3 / B1, 1 / B1, B1 / (4 * B2))
    h = max((a / cap) ** (1 / z), 1)
    if z < 1:
        h = max(h, (4 * z / (B1 * a)) ** (1 / (1 - z)))
    c1 = 16 * B3 * u**2 * a / B1
    c2 = u**2 / l**2
    c3 = 16 * mp.e * u**2 * B4 * a**2 / (B1 * a / 2 - 1)
    c4 = 32 * u**2 * B3 * a / B1
    c5 = 16 * mp.e * u**2 * B4 * a / B1
    delta, K = mp.mpf("0.05"), 0
    out = {"h": h}
    for k in KS:
        kk = mp.mpf(k)
        logterm = mp.log((kk + 1) / mp.sqrt(max(K, 1)))
        ssum = mp.fsum(a / (i + h) ** z for i in range(K, k))
        lead = 16 * B3 * u**2 * a / (B1 * (kk + h) ** z)
        if z == 1:
            p = B1 * a / 2
            out[f"markov_{k}"] = c1 * mp.log(1 / delta) / (kk + h) + c2 * x0**2 * (h / (kk + h)) ** p + (c3 + c4 * logterm) / (kk + h)
            out[f"fixed_{k}"] = c1 * mp.log(1 / delta) / (kk + h) + c2 * x0**2 * h**p / (kk + h) ** p + (c3 + c4) / (kk + h)
            out[f"ville_{k}"] = (lead * mp.log(1 / delta) + c2 * x0**2 * h**p / ((kk + h) * (K + h) ** (p - 1))
                                 + c3 / (kk + h) + lead * B5 * ssum)
        else:
            dec = mp.exp(-B1 * a / (2 * (1 - z)) * ((kk + h) ** (1 - z) - h ** (1 - z)))
            tz = (kk + h) ** z
            out[f"markov_{k}"] = c1 * mp.log(1 / delta) / tz + c2 * x0**2 * dec + (c5 + c4 * logterm) / tz
            out[f"fixed_{k}"] = c1 * mp.log(1 / delta) / tz + c2 * x0**2 * dec + (c4 + c5) / tz
            init = ((K + h) / (kk + h)) ** z * mp.exp(-B1 * a / (2 * (1 - z)) * ((K + h) ** (1 - z) - h ** (1 - z)))
            out[f"ville_{k}"] = lead * mp.log(1 / delta) + c2 * x0**2 * init + 16 * B4 * u**2 * a / (B1 * tz) + lead * B5 * ssum
    return out


if __name__ == "__main__":
    for name, d in [("MULT", mult()), ("ADD_Z1", add(1)), ("ADD_Z06", add("0.6"))]:
        print(f"// {name}")
        for key, v in d.items():
            print(f'("{key}", {mp.nstr(v, 20)}),')
