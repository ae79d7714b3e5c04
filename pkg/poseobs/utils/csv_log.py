"""
CSV emission for trajectory logs and per-figure plot data
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence

from simulation.simulator import LOG_METRICS, TrajectoryLog

logger = logging.getLogger(__name__)

POSE_FIELDS = ("r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "px", "py", "pz")
BIAS_FIELDS = ("bhat_omega_x", "bhat_omega_y", "bhat_omega_z", "bhat_v_x", "bhat_v_y", "bhat_v_z")

TRAJECTORY_HEADER = (
    ["t", *LOG_METRICS]
    + [f"true_{name}" for name in POSE_FIELDS]
    + [f"est_{name}" for name in POSE_FIELDS]
    + list(BIAS_FIELDS)
)

FIG1_HEADER = ["t", "angle_true", "angle_est", "x", "x_est", "y", "y_est", "z", "z_est"]
FIG2_HEADER = ["t", "bias_omega_err", "bias_v_err"]


def format_number(x: float) -> str:
    """17 significant digits, '.' decimal point, no grouping."""
    return format(float(x), ".17g")


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(x) for x in row])
    return path


def trajectory_rows(log: TrajectoryLog) -> Iterable[List[float]]:
    for i in range(len(log)):
        yield [
            log.t[i],
            *(log.metrics[name][i] for name in LOG_METRICS),
            *log.true_poses[i],
            *log.estimated_poses[i],
            *log.bias_estimates[i],
        ]


def write_trajectory_csv(log: TrajectoryLog, path) -> Path:
    """Write one row per sample with the TRAJECTORY_HEADER columns."""
    path = _write_rows(Path(path), TRAJECTORY_HEADER, trajectory_rows(log))
    logger.info(f"Wrote {len(log)} rows to {path}")
    return path


def write_plot_data(log: TrajectoryLog, directory) -> List[Path]:
    """
    Write the attitude/position figure data and the bias-error figure data

    Args:
        log: Completed trajectory log
        directory: Output directory

    Returns:
        Paths of <name>_fig1.csv and <name>_fig2.csv
    """
    directory = Path(directory)
    angle_true, angle_est = log.attitude_angles()
    p_true = log.true_poses[:, 9:]
    p_est = log.estimated_poses[:, 9:]

    fig1_rows = (
        [
            log.t[i],
            angle_true[i],
            angle_est[i],
            p_true[i, 0],
            p_est[i, 0],
            p_true[i, 1],
            p_est[i, 1],
            p_true[i, 2],
            p_est[i, 2],
        ]
        for i in range(len(log))
    )
    fig2_rows = (
        [log.t[i], log.metrics["bias_omega_err"][i], log.metrics["bias_v_err"][i]]
        for i in range(len(log))
    )

    paths = [
        _write_rows(directory / f"{log.scenario_name}_fig1.csv", FIG1_HEADER, fig1_rows),
        _write_rows(directory / f"{log.scenario_name}_fig2.csv", FIG2_HEADER, fig2_rows),
    ]
    logger.info(f"Wrote plot data for '{log.scenario_name}' to {directory}")
    return paths


def read_csv_columns(path) -> dict:
    """Read a CSV written by this module back into {column: list of floats}."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        columns = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                columns[name].append(float(value))
    return columns
