"""File formats: trajectory CSV + sidecar, measure CSV, estimator JSON, results CSV."""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, ShapeMismatchError
from .hypothesis import Estimator, HypothesisSpace
from .kernels import TabulatedKernel
from .measure import PairwiseMeasure
from .system import SystemSpec, TrajectoryBatch

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"
TRAJECTORY_COLUMNS = ["m", "l", "t", "agent", "comp", "x"]
RESULT_COLUMNS = ["experiment", "M", "trial", "metric", "window", "value"]
MEASURE_COLUMNS = ["k", "kp", "bin_lo", "bin_hi", "mass", "count"]


def write_json(data: Any, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def read_json(path: PathLike) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_trajectories(batch: TrajectoryBatch, spec: SystemSpec, path: PathLike) -> Path:
    """One row per (trajectory, time, agent, coordinate); sidecar JSON next to the CSV."""
    M, L, N, d = batch.states.shape
    m, l, agent, comp = (a.ravel() for a in np.meshgrid(
        np.arange(M), np.arange(L), np.arange(N), np.arange(d), indexing="ij"
    ))
    frame = pd.DataFrame(
        {
            "m": m,
            "l": l,
            "t": batch.times[l],
            "agent": agent,
            "comp": comp,
            "x": batch.states.ravel(),
        }
    )
    if batch.has_velocities:
        frame["v"] = batch.velocities.ravel()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    write_json(
        {
            "system": spec.to_config(),
            "seed": batch.seed,
            "times": batch.times.tolist(),
            "metadata": batch.metadata,
        },
        sidecar_path(path),
    )
    return path


def read_trajectories(path: PathLike) -> Tuple[TrajectoryBatch, SystemSpec]:
    """Inverse of :func:`write_trajectories`.

    Raises:
        ShapeMismatchError: rows do not form a complete (M, L, N, d) grid
    """
    meta = read_json(sidecar_path(path))
    spec = SystemSpec.from_config(meta["system"])
    frame = pd.read_csv(path).sort_values(["m", "l", "agent", "comp"], kind="stable")
    missing = [column for column in TRAJECTORY_COLUMNS if column not in frame.columns]
    if missing:
        raise ConfigError(f"trajectory file {path} lacks columns {missing}")
    times = np.asarray(meta["times"], dtype=float)
    M = int(frame["m"].max()) + 1 if len(frame) else 0
    shape = (M, times.size, spec.N, spec.d)
    if len(frame) != int(np.prod(shape)):
        raise ShapeMismatchError(f"{len(frame)} rows do not fill a grid of shape {shape}")
    velocities = frame["v"].to_numpy(float).reshape(shape) if "v" in frame.columns else None
    batch = TrajectoryBatch(
        times=times,
        states=frame["x"].to_numpy(float).reshape(shape),
        velocities=velocities,
        seed=meta.get("seed"),
        metadata=meta.get("metadata", {}),
    )
    return batch, spec


def write_measure(measure: PairwiseMeasure, path: PathLike) -> Path:
    """Rows ``k,kp,bin_lo,bin_hi,mass,count`` for every defined pair."""
    masses = measure.masses
    frames = []
    for k in range(measure.K):
        for kp in range(measure.K):
            if not measure.defined[k, kp]:
                continue
            frames.append(
                pd.DataFrame(
                    {
                        "k": k,
                        "kp": kp,
                        "bin_lo": measure.edges[:-1],
                        "bin_hi": measure.edges[1:],
                        "mass": masses[k, kp],
                        "count": measure.counts[k, kp],
                    }
                )
            )
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=MEASURE_COLUMNS)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def estimator_to_dict(est: Estimator) -> Dict[str, Any]:
    space = est.space
    data: Dict[str, Any] = {
        "space": space.to_dict(),
        "breakpoints": [
            [space.breakpoints(k, kp).tolist() for kp in range(space.K)] for k in range(space.K)
        ],
        "coeffs": est.coeffs.tolist(),
        "diagnostics": est.diagnostics,
        "smoothed": None,
    }
    if est.smoothed is not None:
        data["smoothed"] = [[kernel.params() for kernel in row] for row in est.smoothed]
    return data


def estimator_from_dict(data: Mapping[str, Any]) -> Estimator:
    space = HypothesisSpace.from_dict(data["space"])
    smoothed = None
    if data.get("smoothed"):
        smoothed = [[TabulatedKernel(**entry) for entry in row] for row in data["smoothed"]]
    return Estimator(
        space=space,
        coeffs=np.asarray(data["coeffs"], dtype=float),
        smoothed=smoothed,
        diagnostics=dict(data.get("diagnostics", {})),
    )


def write_estimator(est: Estimator, path: PathLike) -> Path:
    write_json(estimator_to_dict(est), path)
    return Path(path)


def read_estimator(path: PathLike) -> Estimator:
    return estimator_from_dict(read_json(path))


def results_frame(rows: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    frame = pd.DataFrame(list(rows), columns=RESULT_COLUMNS)
    frame["window"] = frame["window"].fillna("")
    return frame


def write_results(rows: Iterable[Mapping[str, Any]], path: PathLike) -> Path:
    """``experiment,M,trial,metric,window,value`` with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_results(path: PathLike) -> pd.DataFrame:
    frame = pd.read_csv(path, keep_default_na=False, na_values={"value": ["", "nan", "NaN"]})
    missing = [column for column in RESULT_COLUMNS if column not in frame.columns]
    if missing:
        raise ConfigError(f"results file {path} lacks columns {missing}")
    return frame


def curve_points(
    frame: pd.DataFrame, metric: str, window: str = "", experiment: Optional[str] = None
) -> List[Tuple[float, float]]:
    """Mean value of ``metric`` per M, skipping NaN and nonpositive cells."""
    selected = frame[(frame["metric"] == metric) & (frame["window"].astype(str) == window)]
    if experiment is not None:
        selected = selected[selected["experiment"] == experiment]
    selected = selected[np.isfinite(selected["value"].astype(float))]
    means = selected.groupby("M")["value"].mean().sort_index()
    return [(float(M), float(value)) for M, value in means.items() if value > 0]


def figure_data(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean, std and cell count of every metric per (experiment, metric, window, M)."""
    finite = frame[np.isfinite(frame["value"].astype(float))]
    grouped = finite.groupby(["experiment", "metric", "window", "M"])["value"]
    summary = grouped.agg(["mean", "std", "count"]).reset_index()
    summary["std"] = summary["std"].fillna(0.0)
    return summary


def write_figure_data(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure_data(frame).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path
