"""Stability diagrams, transfer metrics, misalignment/dot-size sweeps, validation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .capsolve import AssemblyError, SolveOptions, SolverError, solve
from .charging import (
    ChargingError,
    ModelCaps,
    compensate,
    delta_q,
    reduce_caps,
)
from .constants import AF, MV, Q_E
from .geometry import DeviceError, mesh_device, transform_dots

WINDOW_CAP_V = 20.0
MIN_LINES = 3


class AnalysisError(ValueError):
    pass


@dataclass
class BoundaryLine:
    """Fitted degeneracy line separating stable configurations x and x+1."""

    x: int
    p0: tuple[float, float]
    p1: tuple[float, float]
    residual: float
    n_points: int
    sl_intercept: float | None
    sr_intercept: float | None

    def to_json(self):
        return {
            "x": self.x, "x_next": self.x + 1,
            "p0_mV": [self.p0[0] / MV, self.p0[1] / MV],
            "p1_mV": [self.p1[0] / MV, self.p1[1] / MV],
            "residual_mV": self.residual / MV,
            "n_points": self.n_points,
        }


@dataclass
class StabilityDiagram:
    v_sl: np.ndarray          # grid axis, volts
    v_sr: np.ndarray
    grid: np.ndarray          # stable x, shape (n_sl, n_sr)
    boundaries: list[BoundaryLine]
    dv_sl: float | None       # median degeneracy-line spacing along V_SL, volts
    dv_sr: float | None
    theta_deg: float | None


def _compensation_map(caps: ModelCaps) -> np.ndarray:
    """Linear map (V_SL, V_SR) -> full bias vector under approximate compensation."""
    t = np.zeros((4, 2))
    t[0, 0] = 1.0
    t[1, 1] = 1.0
    t[2:, 0] = compensate(1.0, 0.0, caps)
    t[2:, 1] = compensate(0.0, 1.0, caps)
    return t


def _grid_terms(caps: ModelCaps):
    """Coefficients of E_x over the compensated (V_SL, V_SR) plane.

    E_x(V) = const(V) + q_e * x * g(V) + 1/2 * q_e^2 * x^2 * kappa with
    g linear in V; only g and kappa matter for the stable x and boundaries.
    """
    c = caps.energy_matrix(island=False)
    w = np.linalg.inv(c)
    s = np.array([1.0, -1.0])
    kappa = float(s @ w @ s)
    gmap = s @ w @ caps.gate_block(island=False) @ _compensation_map(caps)  # (2,)
    return gmap, kappa


def _stable_from_continuous(xhat):
    """Integer minimizer of the x-quadratic; half-integer ties round toward zero."""
    lo = np.floor(xhat)
    frac = xhat - lo
    up = frac > 0.5
    tie = frac == 0.5
    x = lo + up
    return np.where(tie, np.where(lo >= 0, lo, lo + 1), x).astype(int)


def _axis_spacing(intercepts):
    vals = [v for v in intercepts if v is not None and math.isfinite(v)]
    if len(vals) < 2:
        return None
    d = np.abs(np.diff(vals))
    return float(np.median(d))


def _fit_line(points):
    mu = points.mean(axis=0)
    rel = points - mu
    _, sv, vt = np.linalg.svd(rel, full_matrices=False)
    direction = vt[0]
    res = sv[-1] / math.sqrt(len(points)) if len(points) > 1 else 0.0
    t = rel @ direction
    p0 = mu + t.min() * direction
    p1 = mu + t.max() * direction
    return mu, direction, res, p0, p1


def stability_diagram(caps: ModelCaps, v_ranges=None, n: int = 201) -> StabilityDiagram:
    """Grid of stable configurations over (V_SL, V_SR) with fitted degeneracy lines.

    Without explicit ranges the window starts near the estimated line spacing
    and doubles until it holds at least three degeneracy lines (cap 20 V).
    """
    if n < 2:
        raise AnalysisError("diagram grid needs n >= 2")
    gmap, kappa = _grid_terms(caps)

    if v_ranges is not None:
        windows = [(np.linspace(*v_ranges[0], n), np.linspace(*v_ranges[1], n))]
    else:
        grad = np.abs(gmap)
        if grad.max() <= 0:
            w = WINDOW_CAP_V
        else:
            spacing = Q_E * kappa / np.maximum(grad, grad.max() * 1e-12)
            w = min(1.8 * float(spacing.max()), WINDOW_CAP_V)
        windows = []
        while True:
            windows.append((np.linspace(-w, w, n), np.linspace(-w, w, n)))
            if w >= WINDOW_CAP_V:
                break
            w = min(2.0 * w, WINDOW_CAP_V)

    for axis_sl, axis_sr in windows:
        diag = _diagram_on_grid(caps, axis_sl, axis_sr, gmap, kappa)
        if v_ranges is not None or len(diag.boundaries) >= MIN_LINES:
            return diag
    return diag


def _theta_deg(dv_sl, dv_sr):
    """Transfer angle; branch keeps theta(a,b) + theta(b,a) = 90 exactly."""
    if dv_sr == dv_sl:
        return 45.0
    if dv_sr < dv_sl:
        return math.degrees(math.atan(dv_sr / dv_sl))
    return 90.0 - math.degrees(math.atan(dv_sl / dv_sr))


def _diagram_on_grid(caps, axis_sl, axis_sr, gmap, kappa) -> StabilityDiagram:
    vsl, vsr = np.meshgrid(axis_sl, axis_sr, indexing="ij")
    g = gmap[0] * vsl + gmap[1] * vsr
    xhat = -g / (Q_E * kappa)
    grid = _stable_from_continuous(xhat)

    # degeneracy x <-> x+1 sits where g = -q_e * kappa * (x + 1/2); g is linear
    # over bias space, so each grid-edge crossing has the exact affine root
    points: dict[int, list] = {}

    def collect(ga, gb, va, vb):
        la, lb = grid_labels(ga), grid_labels(gb)
        ka, kb = np.minimum(la, lb), np.maximum(la, lb)
        for idx in zip(*np.nonzero(kb > ka)):
            for k in range(int(ka[idx]), int(kb[idx])):
                f0 = ga[idx] + Q_E * kappa * (k + 0.5)
                f1 = gb[idx] + Q_E * kappa * (k + 0.5)
                if f0 == f1:
                    continue
                t = f0 / (f0 - f1)
                if 0.0 <= t <= 1.0:
                    points.setdefault(k, []).append((1 - t) * va[idx] + t * vb[idx])

    def grid_labels(gv):
        return _stable_from_continuous(-gv / (Q_E * kappa))

    v = np.stack([vsl, vsr], axis=-1)
    collect(g[:-1, :], g[1:, :], v[:-1, :], v[1:, :])
    collect(g[:, :-1], g[:, 1:], v[:, :-1], v[:, 1:])

    boundaries = []
    for k in sorted(points):
        pts = np.asarray(points[k])
        if len(pts) < 2:
            continue
        _, direction, res, p0, p1 = _fit_line(pts)
        mu = pts.mean(axis=0)
        sl_int = mu[0] - mu[1] * direction[0] / direction[1] if direction[1] != 0 else None
        sr_int = mu[1] - mu[0] * direction[1] / direction[0] if direction[0] != 0 else None
        boundaries.append(BoundaryLine(k, tuple(p0), tuple(p1), res, len(pts), sl_int, sr_int))

    dv_sl = _axis_spacing([b.sl_intercept for b in boundaries])
    dv_sr = _axis_spacing([b.sr_intercept for b in boundaries])
    theta = _theta_deg(dv_sl, dv_sr) if dv_sl and dv_sr else None
    return StabilityDiagram(axis_sl, axis_sr, grid, boundaries, dv_sl, dv_sr, theta)


def transfer_metrics(dv_sl: float, dv_sr: float, v_sl_min: float):
    """Charge-transfer angle (degrees) and periodicity in dB re the map minimum."""
    if dv_sl <= 0 or dv_sr <= 0 or v_sl_min <= 0:
        raise AnalysisError("transfer metrics need positive periodicities")
    return _theta_deg(dv_sl, dv_sr), 20.0 * math.log10(dv_sl / v_sl_min)


def coulomb_period(c_g: float) -> float:
    """Coulomb-blockade oscillation period e / C_g, volts."""
    if c_g <= 0:
        raise AnalysisError("gate capacitance must be positive")
    return Q_E / c_g


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepMap:
    kind: str                 # "misalign" | "dotsize"
    rows: list[dict] = field(default_factory=list)

    def ok_rows(self):
        return [r for r in self.rows if r["status"] == "ok"]


def _axis_values(lo, hi, step):
    n = int(round((hi - lo) / step)) + 1
    return [lo + i * step for i in range(n)]


def _cell_metrics(spec, dx, dy, r_nm, opts, h_max_nm, diagram_n):
    moved = transform_dots(spec, dx, dy, r_nm)
    mesh = mesh_device(moved, h_max_nm)
    maxwell = solve(mesh, opts, roles=moved.roles)
    caps = reduce_caps(maxwell, moved.roles)
    diag = stability_diagram(caps, n=diagram_n)
    row = {
        "C_SLd1_aF": caps.gate("d1", "SL") / AF,
        "C_SRd2_aF": caps.gate("d2", "SR") / AF,
        "dV_SL_mV": diag.dv_sl / MV if diag.dv_sl else None,
        "dV_SR_mV": diag.dv_sr / MV if diag.dv_sr else None,
        "theta_deg": diag.theta_deg,
    }
    if caps.has("i1"):
        row["C_d1i1_aF"] = caps.mutual("d1", "i1") / AF
        row["delta_q_e"] = delta_q(caps)
    else:
        row["C_d1i1_aF"] = None
        row["delta_q_e"] = None
    return row


_CELL_ERRORS = (DeviceError, ChargingError, SolverError, AssemblyError, AnalysisError)


def _run_cells(kind, cells, worker, jobs):
    def safe(cell):
        try:
            row = worker(cell)
            row["status"] = "ok"
        except _CELL_ERRORS as e:
            row = {"status": "failed", "error": f"{type(e).__name__}: {e}"}
        return row

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(safe, cells))
    else:
        rows = [safe(c) for c in cells]
    sweep = SweepMap(kind)
    for cell, row in zip(cells, rows):
        sweep.rows.append({**cell, **row})
    _fill_db(sweep)
    return sweep


def _fill_db(sweep: SweepMap):
    ok = [r["dV_SL_mV"] for r in sweep.ok_rows() if r.get("dV_SL_mV")]
    ref = min(ok) if ok else None
    for r in sweep.rows:
        v = r.get("dV_SL_mV")
        r["dV_SL_dB"] = 20.0 * math.log10(v / ref) if (ref and v) else None


def misalign_sweep(spec, dx_range=(-90.0, 90.0), dy_range=(-50.0, 50.0), step=10.0,
                   opts=None, h_max_nm=10.0, jobs=1, diagram_n=201,
                   r_nm=None, dy_step=None) -> SweepMap:
    """Solve the device over a (dx, dy) misalignment grid and record transfer metrics.

    Failed cells are reported with status "failed" and never interpolated.
    """
    opts = opts or SolveOptions(epsilon_r=spec.epsilon_r)
    if r_nm is None:
        r_nm = spec.boxes[[b.role for b in spec.boxes].index("d1")].dims_nm[0]
    cells = [
        {"dx_nm": dx, "dy_nm": dy}
        for dx in _axis_values(*dx_range, step)
        for dy in _axis_values(*dy_range, dy_step if dy_step is not None else step)
    ]
    if not cells:
        raise AnalysisError("empty misalignment ranges")

    def worker(cell):
        return _cell_metrics(spec, cell["dx_nm"], cell["dy_nm"], r_nm, opts, h_max_nm, diagram_n)

    return _run_cells("misalign", cells, worker, jobs)


def dotsize_sweep(spec, r_list=(10.0, 20.0, 30.0, 40.0, 50.0), opts=None,
                  h_max_nm=10.0, jobs=1, diagram_n=201) -> SweepMap:
    """Solve the aligned device for each dot size R and record coupling and delta q."""
    opts = opts or SolveOptions(epsilon_r=spec.epsilon_r)
    if not r_list or any(r <= 0 for r in r_list):
        raise AnalysisError("dot sizes must be positive")
    cells = [{"R_nm": float(r)} for r in r_list]

    def worker(cell):
        return _cell_metrics(spec, 0.0, 0.0, cell["R_nm"], opts, h_max_nm, diagram_n)

    return _run_cells("dotsize", cells, worker, jobs)


def estimate_misalignment(theta_obs_deg, dv_sl_obs, sweep: SweepMap,
                          theta_tol_deg=2.0, dv_rel_tol=0.2):
    """Cells of a misalignment map consistent with observed (theta, dV_SL).

    dv_sl_obs is in volts; matching cells satisfy |theta - obs| <= 2 degrees
    and dV_SL within +-20% by default.  The set may be empty.
    """
    out = set()
    for r in sweep.ok_rows():
        if r.get("theta_deg") is None or not r.get("dV_SL_mV"):
            continue
        dv = r["dV_SL_mV"] * MV
        if abs(r["theta_deg"] - theta_obs_deg) <= theta_tol_deg \
                and abs(dv - dv_sl_obs) <= dv_rel_tol * dv_sl_obs:
            out.add((r["dx_nm"], r["dy_nm"]))
    return out


# ---------------------------------------------------------------------------
# measured-value comparison (Coulomb-blockade periods)
# ---------------------------------------------------------------------------

def compare_report(maxwell, measured: dict) -> dict:
    """Calculated vs measured capacitances, with Coulomb-blockade periods.

    measured: {"pairs": [{"a": <name-or-role>, "b": ..., "measured_aF": x,
    "sd_aF": s}, ...]}.  This is a report, not a gate: absolute values carry
    the uniform-permittivity approximation.
    """
    roles = maxwell.roles or {}
    by_role = {r: g for g, r in roles.items()}

    def resolve(key):
        if key in maxwell.conductor_names:
            return key
        if key in by_role:
            return by_role[key]
        raise AnalysisError(f"unknown conductor or role {key!r}")

    rows = []
    for pair in measured.get("pairs", []):
        a, b = resolve(pair["a"]), resolve(pair["b"])
        calc = -maxwell.entry(a, b) / AF
        row = {
            "a": pair["a"], "b": pair["b"],
            "calculated_aF": calc,
            "period_mV": coulomb_period(calc * AF) / MV if calc > 0 else None,
        }
        if "measured_aF" in pair:
            meas = float(pair["measured_aF"])
            sd = float(pair.get("sd_aF", 0.0))
            row["measured_aF"] = meas
            row["sd_aF"] = sd
            row["ratio"] = calc / meas if meas else None
            row["deviation_sd"] = (calc - meas) / sd if sd else None
        rows.append(row)
    return {"pairs": rows}
