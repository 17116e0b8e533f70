"""Write the bundled biped actuation files (hand-tuned defaults)."""
import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "actlab" / "data"
JOINTS = ["r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle"]
KP = {"hip": 600.0, "knee": 600.0, "ankle": 400.0}
KD = {"hip": 60.0, "knee": 60.0, "ankle": 40.0}

# name: (F0, l_opt, l_se_rest, pennation, [(joint, r0, q_max, q_rest), ...])
MUSCLES = {
    "HFL": (1200.0, 0.11, 0.10, 0.0, [("hip", 0.08, 0.0, 0.0)]),
    "GLU": (900.0, 0.11, 0.13, 0.0, [("hip", -0.08, 0.0, 0.0)]),
    "HAM": (1800.0, 0.10, 0.31, 0.0, [("hip", -0.08, 0.0, 0.0), ("knee", -0.05, 0.0, -0.2)]),
    "RF": (720.0, 0.08, 0.35, 0.0, [("hip", 0.08, 0.0, 0.0), ("knee", 0.06, -0.3, -0.2)]),
    "VAS": (3600.0, 0.08, 0.23, 0.1, [("knee", 0.06, -0.3, -0.2)]),
    "GAS": (900.0, 0.05, 0.40, 0.3, [("knee", -0.05, 0.0, -0.2), ("ankle", -0.05, 0.0, 0.0)]),
    "SOL": (2400.0, 0.04, 0.26, 0.4, [("ankle", -0.05, 0.0, 0.0)]),
    "TA": (480.0, 0.06, 0.24, 0.1, [("ankle", 0.04, 0.0, 0.0)]),
}


def per_joint(table):
    return {j: table[j.split("_")[1]] for j in JOINTS}


def main():
    write("biped7_tor.json", {"kind": "tor"})
    write("biped7_pd.json", {"kind": "pd", "kp": per_joint(KP), "kd": per_joint(KD)})
    write("biped7_vel.json", {"kind": "vel", "kd": per_joint(KD),
                              "velocity_bound": {j: 10.0 for j in JOINTS}})
    units = []
    for side in ("r", "l"):
        for name, (f0, l_opt, l_ser, penn, spans) in MUSCLES.items():
            units.append({
                "name": f"{side}_{name}", "f_max": f0, "l_opt": l_opt, "l_se_rest": l_ser,
                "pennation": penn,
                "spans": [{"joint": f"{side}_{j}", "moment_arm": r0, "q_max": qm, "q_rest": qr}
                          for j, r0, qm, qr in spans],
            })
    write("biped7_mtu.json", {"kind": "mtu", "units": units})


def write(name, doc):
    (DATA / name).write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
