"""Writers for run artifacts: CSV tables with a JSON metadata header line, JSON
sidecars, 16-bit PGM density rasters and gnuplot scripts."""
import csv
import io
import json
import math
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import logfire
import numpy as np
from PIL import Image

from analysis.struct import ConvergenceReport, HistogramGrid, LyapunovEstimate, SweepResult
from dynamics.struct import ModelParams

PGM_MAX = 65535

LYAP_COLUMNS = ["alpha", "beta", "a", "b", "sigma", "tau", "T", "seed", "method", "lambda_hat", "std_error"]


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value


def dumps(meta: Mapping[str, Any]) -> str:
    return json.dumps(_jsonable(dict(meta)), sort_keys=True, separators=(",", ":"))


def _ensure_dir(path: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)


def write_json(path: str, meta: Mapping[str, Any]) -> str:
    _ensure_dir(path)
    with open(path, "w") as f:
        f.write(json.dumps(_jsonable(dict(meta)), sort_keys=True, indent=2))
        f.write("\n")
    logfire.info(f"EXPORT -- wrote {path}")
    return path


def write_table(path: str, columns: Sequence[str], data: np.ndarray, meta: Mapping[str, Any], fmt: str = "%.17g") -> str:
    """CSV with `# {json meta}` as its first line and the column names as its second."""
    _ensure_dir(path)
    header = f"{dumps(meta)}\n" + ",".join(columns)
    np.savetxt(path, np.asarray(data, dtype=float).reshape(-1, len(columns)), fmt=fmt, delimiter=",",
               header=header, comments="# ")
    logfire.info(f"EXPORT -- wrote {path}")
    return path


def read_table_meta(path: str) -> Dict[str, Any]:
    with open(path) as f:
        first = f.readline()
    if not first.startswith("# "):
        raise ValueError(f"{path} has no metadata header")
    return json.loads(first[2:])


def write_points(path: str, points: np.ndarray, meta: Mapping[str, Any]) -> str:
    return write_table(path, ["x", "y"], points, meta)


def pgm_levels(grid: HistogramGrid) -> np.ndarray:
    """16-bit image of the log density; rows run from y_max down to y_min.

    log10((count + 0.5) / total) is mapped linearly from log10(0.5 / total) to
    log10((max count + 0.5) / total) onto 0..65535.
    """
    logd = grid.log_density()
    lo = math.log10(0.5 / max(grid.total, 1))
    hi = float(logd.max())
    if hi > lo:
        scaled = np.rint((logd - lo) / (hi - lo) * PGM_MAX)
    else:
        scaled = np.zeros_like(logd)
    return np.clip(scaled, 0, PGM_MAX).astype(np.int32).T[::-1]


def write_pgm(path: str, levels: np.ndarray) -> str:
    """Binary P5 with maxval 65535."""
    _ensure_dir(path)
    Image.fromarray(np.ascontiguousarray(levels, dtype=np.int32), mode="I").save(path, format="PPM")
    logfire.info(f"EXPORT -- wrote {path}")
    return path


def write_histogram(stem: str, grid: HistogramGrid, meta: Mapping[str, Any]) -> Tuple[str, str]:
    """PGM raster plus its JSON sidecar {params, seed, tau, time, bounds, nx, ny, total}."""
    pgm = write_pgm(f"{stem}.pgm", pgm_levels(grid))
    side = write_json(f"{stem}.json", {**meta, **grid.meta()})
    return pgm, side


def lyap_rows(params: ModelParams, T: float, seed: int, estimates: Iterable[LyapunovEstimate]) -> List[Dict[str, Any]]:
    return [
        {**params.model_dump(), "tau": e.tau, "T": T, "seed": seed,
         "method": e.method.value, "lambda_hat": e.lambda_hat, "std_error": e.std_error}
        for e in estimates
    ]


def format_rows(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], meta: Optional[Mapping[str, Any]] = None) -> str:
    out = io.StringIO()
    if meta is not None:
        out.write(f"# {dumps(meta)}\n")
    writer = csv.DictWriter(out, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return out.getvalue()


def write_rows(path: str, rows: Sequence[Mapping[str, Any]], columns: Sequence[str], meta: Mapping[str, Any]) -> str:
    _ensure_dir(path)
    with open(path, "w") as f:
        f.write(format_rows(rows, columns, meta))
    logfire.info(f"EXPORT -- wrote {path}")
    return path


def write_sweep(stem: str, result: SweepResult, meta: Mapping[str, Any], heatmap: bool = False) -> List[str]:
    """lambda matrix (rows alpha, columns b), its standard errors and a JSON sidecar."""
    columns = ["alpha"] + [f"b={b:g}" for b in result.b_grid]
    alphas = np.array(result.alpha_grid).reshape(-1, 1)
    info = {**meta, "alpha_grid": result.alpha_grid, "b_grid": result.b_grid, "tau": result.tau,
            "T": result.T, "seed": result.seed}
    paths = [
        write_table(f"{stem}_lambda.csv", columns, np.hstack([alphas, result.lambda_matrix]), info),
        write_table(f"{stem}_stderr.csv", columns, np.hstack([alphas, result.std_errors]), info),
        write_json(f"{stem}.json", {**info, "border": result.border,
                                    "failed": [{"i": i, "j": j, "error": e} for i, j, e in result.failed]}),
    ]
    if heatmap:
        lam = result.lambda_matrix
        finite = lam[np.isfinite(lam)]
        lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
        scaled = np.zeros_like(lam) if hi <= lo else np.rint((np.nan_to_num(lam, nan=lo) - lo) / (hi - lo) * PGM_MAX)
        paths.append(write_pgm(f"{stem}_lambda.pgm", scaled.astype(np.int32)[::-1]))
    return paths


def write_convergence(stem: str, report: ConvergenceReport, meta: Mapping[str, Any]) -> List[str]:
    data = np.column_stack([report.tau_list, report.rms_errors_state, report.rms_errors_direction])
    info = {**meta, "seeds": report.seeds, "tau_reference": report.tau_reference}
    return [
        write_table(f"{stem}.csv", ["tau", "err_state", "err_dir"], data, info),
        write_json(f"{stem}.json", {**info, "fitted_order_state": report.fitted_order_state,
                                    "fitted_order_direction": report.fitted_order_direction}),
    ]


_GNUPLOT = {
    "attractor": """set terminal pngcairo size 800,800
set output '{stem}.png'
set datafile separator ','
set size square
unset key
plot '{data}' every ::1 using 1:2 with dots lc rgb 'black'
""",
    "sync": """set terminal pngcairo size 800,500
set output '{stem}.png'
set datafile separator ','
set logscale y
set xlabel 't'
set ylabel 'diameter'
unset key
plot '{data}' every ::1 using 1:2 with lines
""",
    "scan": """set terminal pngcairo size 800,600
set output '{stem}.png'
set datafile separator ','
set xlabel 'b'
set ylabel 'alpha'
set view map
set cbrange [*:*]
set contour base
set cntrparam levels discrete 0
plot '{data}' matrix rowheaders columnheaders with image
""",
    "converge": """set terminal pngcairo size 800,600
set output '{stem}.png'
set datafile separator ','
set logscale xy
set xlabel 'tau'
set ylabel 'RMS error'
plot '{data}' every ::1 using 1:2 with linespoints title 'state', \\
     '{data}' every ::1 using 1:3 with linespoints title 'direction'
""",
}


def gnuplot_script(kind: str, data: str, stem: str) -> str:
    if kind not in _GNUPLOT:
        raise ValueError(f"no plot script for {kind!r}, choose from {sorted(_GNUPLOT)}")
    return _GNUPLOT[kind].format(data=os.path.basename(data), stem=os.path.basename(stem))


def write_gnuplot(kind: str, data: str, stem: str) -> str:
    path = f"{stem}.gp"
    _ensure_dir(path)
    with open(path, "w") as f:
        f.write(gnuplot_script(kind, data, stem))
    logfire.info(f"EXPORT -- wrote {path}")
    return path
