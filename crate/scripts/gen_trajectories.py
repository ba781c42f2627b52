#!/usr/bin/env python3
"""Generate the bundled head/hand trajectories in EuRoC ground-truth layout.

The files are synthetic: smooth sums of sinusoids with seeded phases, sampled
at 100 Hz for 35 s. Columns: timestamp [ns], position [m], quaternion
(w, x, y, z), linear velocity [m/s].

    python3 scripts/gen_trajectories.py data/
"""

import sys
from pathlib import Path

import numpy as np

RATE_HZ = 100
DURATION_S = 35.0
START_NS = 1403636579758555392  # arbitrary absolute epoch, rebased on load

HEADER = (
    "#timestamp [ns],p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],"
    "q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],"
    "v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1]"
)

# name -> (seed, head position amplitude [m], head yaw amplitude [rad],
#          hand amplitude [m], dominant frequency [Hz], head origin)
SCENES = {
    "desk_slow": (11, 0.05, 0.15, 0.20, 0.15, (0.0, 0.0, 1.25)),
    "desk_reach": (23, 0.08, 0.25, 0.35, 0.30, (0.0, 0.0, 1.25)),
    "room_walk": (37, 0.60, 0.60, 0.30, 0.20, (1.5, -0.5, 1.65)),
}


def smooth(rng, t, amp, freq, n=3):
    out = np.zeros_like(t)
    for k in range(1, n + 1):
        phase = rng.uniform(0, 2 * np.pi)
        f = freq * k * rng.uniform(0.8, 1.2)
        out += amp / k * np.sin(2 * np.pi * f * t + phase)
    return out


def yaw_quat(yaw, pitch):
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    # yaw about z, then pitch about y
    w = cy * cp
    x = -sy * sp
    y = cy * sp
    z = sy * cp
    return np.stack([w, x, y, z], axis=1)


def rotate(q, v):
    w, x, y, z = q.T
    # rotation matrix rows applied to v per sample
    r00 = 1 - 2 * (y * y + z * z)
    r01 = 2 * (x * y - w * z)
    r02 = 2 * (x * z + w * y)
    r10 = 2 * (x * y + w * z)
    r11 = 1 - 2 * (x * x + z * z)
    r12 = 2 * (y * z - w * x)
    r20 = 2 * (x * z - w * y)
    r21 = 2 * (y * z + w * x)
    r22 = 1 - 2 * (x * x + y * y)
    vx, vy, vz = v.T
    return np.stack(
        [r00 * vx + r01 * vy + r02 * vz, r10 * vx + r11 * vy + r12 * vz, r20 * vx + r21 * vy + r22 * vz],
        axis=1,
    )


def write(path, stamps, pos, quat):
    dt = 1.0 / RATE_HZ
    vel = np.gradient(pos, dt, axis=0)
    with open(path, "w") as f:
        f.write(HEADER + "\n")
        for i, ts in enumerate(stamps):
            row = [str(ts)] + [f"{v:.9f}" for v in (*pos[i], *quat[i], *vel[i])]
            f.write(",".join(row) + "\n")


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(DURATION_S * RATE_HZ) + 1
    t = np.arange(n) / RATE_HZ
    stamps = START_NS + np.arange(n, dtype=np.int64) * (1_000_000_000 // RATE_HZ)
    for name, (seed, head_amp, yaw_amp, hand_amp, freq, origin) in SCENES.items():
        rng = np.random.default_rng(seed)
        head = np.stack([origin[i] + smooth(rng, t, head_amp, freq) for i in range(3)], axis=1)
        head[:, 2] = origin[2] + smooth(rng, t, head_amp * 0.3, freq)
        q = yaw_quat(smooth(rng, t, yaw_amp, freq * 0.7), smooth(rng, t, yaw_amp * 0.3, freq))
        local = np.stack(
            [
                0.35 + smooth(rng, t, hand_amp * 0.5, freq * 1.3),
                -0.15 + smooth(rng, t, hand_amp, freq * 1.1),
                -0.25 + smooth(rng, t, hand_amp * 0.6, freq * 0.9),
            ],
            axis=1,
        )
        hand = head + rotate(q, local)
        write(out / f"{name}_head.csv", stamps, head, q)
        write(out / f"{name}_hand.csv", stamps, hand, q)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data")
