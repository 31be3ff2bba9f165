#!/usr/bin/env python3
"""Straight-line evaluation of the probe field double sum for the default scene.

Prints the raw intensities used as frozen expectations in test_scene.cpp.
"""
import cmath
import math

C0 = 299792458.0
FREQ = 1.1e10
K = 2.0 * math.pi / (C0 / FREQ)
N = 20
PITCH = 0.0136
FEED = (0.0, 0.0, 0.5)
PROBES = [(-0.3, 0.0, 1.0), (0.0, 0.0, 1.0), (0.3, 0.0, 1.0)]
AMP = [10.0 ** (-1.7 * s / 140.0) for s in range(8)]


def green(a, b):
    r = math.dist(a, b)
    return cmath.exp(-1j * K * r) / r


def obstacle():
    cx, cy, cz, half = 0.05, 0.0, 0.5, 0.1
    pts = []
    for n in range(12):
        s = n * 0.8 / 12.0
        if s < 0.2:
            p = (cx - half + s, cy - half)
        elif s < 0.4:
            p = (cx + half, cy - half + (s - 0.2))
        elif s < 0.6:
            p = (cx + half - (s - 0.4), cy + half)
        else:
            p = (cx - half, cy + half - (s - 0.6))
        pts.append(((p[0], p[1], cz), 0.05 + 0j))
    return pts


def intensities(states, scatterers):
    cols = [((i - (N + 1) / 2.0) * PITCH, 0.0, 0.0) for i in range(1, N + 1)]
    out = []
    for p in PROBES:
        e = 0j
        for i, r in enumerate(cols):
            s = states[i]
            w = AMP[s] * cmath.exp(1j * math.radians(45.0 * s)) * green(FEED, r)
            e += w * green(r, p)
            for q, c in scatterers:
                e += w * green(r, q) * c * green(q, p)
        out.append(abs(e) ** 2)
    return out


if __name__ == "__main__":
    ramp = [i % 8 for i in range(N)]
    for name, states, obs in [
        ("all0", [0] * N, []),
        ("all0_obstacle", [0] * N, obstacle()),
        ("ramp", ramp, []),
        ("ramp_obstacle", ramp, obstacle()),
    ]:
        print(name, " ".join(repr(v) for v in intensities(states, obs)))
    for q, _ in obstacle():
        print("scatterer", q)
