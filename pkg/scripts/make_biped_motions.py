"""Author the bundled biped keyframe motions (walk, march, run).

Joint trajectories are smooth periodic curves; the root height puts the
lowest foot point on the ground and the root advances so that the stance
foot does not slide.
"""
import json
import math
from pathlib import Path

import numpy as np

from actlab.rigid2d import contact_positions, load_character

DATA = Path(__file__).resolve().parents[1] / "src" / "actlab" / "data"
FRAMES = 30


def bump(phase, center, width):
    d = (phase - center + 0.5) % 1.0 - 0.5
    return math.exp(-0.5 * (d / width) ** 2)


GAITS = {
    "walk": dict(period=1.0, lean=-0.05, flight=0.0,
                 hip=lambda p: 0.08 + 0.33 * math.cos(2 * math.pi * p),
                 knee=lambda p: -0.1 - 0.15 * bump(p, 0.15, 0.08) - 1.0 * bump(p, 0.72, 0.1),
                 ankle=lambda p: 0.05 - 0.35 * bump(p, 0.6, 0.07) + 0.1 * bump(p, 0.8, 0.1)),
    "march": dict(period=1.2, lean=-0.02, flight=0.0,
                  hip=lambda p: 0.3 + 0.45 * math.cos(2 * math.pi * p),
                  knee=lambda p: -0.1 - 1.5 * bump(p, 0.8, 0.12),
                  ankle=lambda p: 0.0 - 0.25 * bump(p, 0.6, 0.08) - 0.2 * bump(p, 0.85, 0.1)),
    "run": dict(period=0.7, lean=-0.12, flight=0.04,
                hip=lambda p: 0.15 + 0.5 * math.cos(2 * math.pi * p),
                knee=lambda p: -0.35 - 0.2 * bump(p, 0.15, 0.07) - 1.5 * bump(p, 0.68, 0.1),
                ankle=lambda p: 0.05 - 0.45 * bump(p, 0.4, 0.07) + 0.1 * bump(p, 0.8, 0.1)),
}


def joint_angles(gait, phase):
    g = GAITS[gait]
    out = []
    for offset in (0.0, 0.5):  # right, left
        p = (phase + offset) % 1.0
        out += [g["hip"](p), g["knee"](p), g["ankle"](p)]
    return out


def build(model, gait):
    g = GAITS[gait]
    foot = np.isin(model.kin.contact_link, [model.link_index("r_foot"), model.link_index("l_foot")])
    poses, rel = [], []
    for k in range(FRAMES + 1):
        phase = k / FRAMES
        q = np.array([0.0, 0.0, g["lean"]] + joint_angles(gait, phase))
        pts = contact_positions(model, q)[foot]
        q[1] = -pts[:, 1].min() + g["flight"] * max(0.0, math.sin(4 * math.pi * (phase - 0.05)))
        poses.append(q)
        rel.append(pts)
    x = 0.0
    for k in range(FRAMES):
        stance = int(np.argmin(rel[k][:, 1] + rel[k + 1][:, 1]))
        x -= rel[k + 1][stance, 0] - rel[k][stance, 0]
        poses[k + 1][0] = x
    period = g["period"]
    return {
        "name": f"biped_{gait}", "cyclic": True, "cycle_duration": period,
        "root_cycle_displacement": poses[FRAMES][0],
        "frames": [{"t": round(period * k / FRAMES, 10), "q": [round(v, 6) for v in poses[k]]}
                   for k in range(FRAMES)],
    }


def main():
    model = load_character("biped7.json")
    for gait in GAITS:
        doc = build(model, gait)
        (DATA / f"biped_{gait}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print(gait, "stride", round(doc["root_cycle_displacement"], 3), "m per cycle")


if __name__ == "__main__":
    main()
