"""Flight log: fixed-schema 100 Hz CSV rows plus a summary sidecar.

Floats are written with 17 significant digits so a reloaded log reproduces
the run bit-for-bit; rendering is left to external tools.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FLOAT_COLUMNS = (
    ["t",
     "px", "py", "pz", "vx", "vy", "vz",
     "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
     "wx", "wy", "wz"]
    + [f"m{i}" for i in range(8)]
    + ["batt_v", "batt_i", "batt_wh",
       "est_px", "est_py", "est_pz", "est_vx", "est_vy", "est_vz", "cov_trace",
       "ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz",
       "ref_ax", "ref_ay", "ref_az", "ref_jx", "ref_jy", "ref_jz",
       "ref_heading", "ref_heading_rate",
       "cmd_thrust", "cmd_wx", "cmd_wy", "cmd_wz"]
)
STRING_COLUMNS = ["active_source", "controller", "phase", "events"]
COLUMNS = FLOAT_COLUMNS + STRING_COLUMNS

N_FLOAT = len(FLOAT_COLUMNS)
_COL_INDEX = {name: i for i, name in enumerate(FLOAT_COLUMNS)}


@dataclass
class FlightLog:
    """Per-tick rows at 100 Hz plus run metadata."""

    meta: dict = field(default_factory=dict)
    values: list = field(default_factory=list)  # one (N_FLOAT,) array per row
    labels: list = field(default_factory=list)  # one (source, controller, phase, events) per row

    def append(self, floats: np.ndarray, labels: tuple[str, str, str, str]) -> None:
        self.values.append(floats)
        self.labels.append(labels)

    def __len__(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, _COL_INDEX[name]]

    def columns(self, *names: str) -> np.ndarray:
        arr = self.array()
        return arr[:, [_COL_INDEX[n] for n in names]]

    def label_column(self, name: str) -> list[str]:
        idx = STRING_COLUMNS.index(name)
        return [row[idx] for row in self.labels]

    def rotations(self) -> np.ndarray:
        return self.columns(*[f"r{i}{j}" for i in range(3) for j in range(3)]).reshape(-1, 3, 3)


def summarize(log: FlightLog) -> dict:
    """Run summary: tracking RMSE, peak speed, energy, constraint violations."""
    arr = log.array()
    truth_p = arr[:, [_COL_INDEX[c] for c in ("px", "py", "pz")]]
    ref_p = arr[:, [_COL_INDEX[c] for c in ("ref_px", "ref_py", "ref_pz")]]
    vel = arr[:, [_COL_INDEX[c] for c in ("vx", "vy", "vz")]]
    err = np.linalg.norm(truth_p - ref_p, axis=1)
    speed = np.linalg.norm(vel, axis=1)
    energy = arr[:, _COL_INDEX["batt_wh"]]

    violations = 0
    limits = log.meta.get("constraints", {})
    if limits:
        ref_v = arr[:, [_COL_INDEX[c] for c in ("ref_vx", "ref_vy", "ref_vz")]]
        ref_a = arr[:, [_COL_INDEX[c] for c in ("ref_ax", "ref_ay", "ref_az")]]
        rate = np.abs(arr[:, _COL_INDEX["ref_heading_rate"]])
        tol = 1e-6
        violations += int(np.sum(np.linalg.norm(ref_v, axis=1) > limits["v_max"] + tol))
        violations += int(np.sum(np.linalg.norm(ref_a, axis=1) > limits["a_max"] + tol))
        violations += int(np.sum(rate > limits["heading_rate_max"] + tol))

    return {
        "scenario": log.meta.get("scenario", ""),
        "platform": log.meta.get("platform", ""),
        "seed": log.meta.get("seed"),
        "rows": len(log),
        "duration_s": float(arr[-1, 0] - arr[0, 0]) if len(log) else 0.0,
        "rmse_position_m": float(math.sqrt(np.mean(err ** 2))),
        "max_position_error_m": float(np.max(err)),
        "peak_speed_ms": float(np.max(speed)),
        "energy_used_wh": float(energy[0] - energy[-1]),
        "constraint_violations": violations,
        "final_phase": log.labels[-1][2] if log.labels else "",
    }


def emit_log(log: FlightLog, path) -> None:
    """Write the CSV plus a `<path>.summary.json` sidecar."""
    if not len(log):
        raise ValueError("refusing to write an empty log")
    path = Path(path)
    lines = [",".join(COLUMNS)]
    for floats, labels in zip(log.values, log.labels):
        parts = [f"{v:.17g}" for v in floats]
        parts.extend(labels)
        lines.append(",".join(parts))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    sidecar = path.with_suffix(path.suffix + ".summary.json")
    summary = summarize(log)
    summary["meta"] = log.meta
    sidecar.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")


def load_log(path) -> FlightLog:
    """Parse a CSV produced by emit_log (lossless for the float columns)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    header = lines[0].split(",")
    if header != COLUMNS:
        raise ValueError("unrecognized flight log header")
    log = FlightLog()
    for ln in lines[1:]:
        parts = ln.split(",")
        floats = np.array([float(x) for x in parts[:N_FLOAT]])
        log.append(floats, tuple(parts[N_FLOAT:]))
    return log
