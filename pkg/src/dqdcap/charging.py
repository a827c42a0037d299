"""Constant-interaction circuit model for the double dot and SET islands.

Conventions, used everywhere:
  - a dot configuration x means the charge vector [-x, +x] (x electrons
    transferred d1 -> d2); an island configuration y is the excess electron
    count on the SET1 island
  - total charge Q = Qtilde - q_e * [excess vector], energy E = 1/2 Q^T C^-1 Q
  - compensation gates g1/g2 zero the gate-induced charge on their SET
    islands (rows i1/i2), not on the dots; a device with no island rows has
    nothing to compensate and gets (0, 0)
  - all quantities in SI (farads, volts, joules)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import AF, Q_E

GATES = ("SL", "SR", "g1", "g2")
TARGETS = ("d1", "d2", "i1", "i2")

X_RANGE_GUARD = 2 ** 20
BISECT_TOL_V = 1e-6


class ChargingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Bias:
    v_sl: float = 0.0
    v_sr: float = 0.0
    v_g1: float = 0.0
    v_g2: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.vector):
            raise ChargingError("bias voltages must be finite")

    @property
    def vector(self):
        return (self.v_sl, self.v_sr, self.v_g1, self.v_g2)


class ModelCaps:
    """Reduced circuit capacitances.

    cmat is the full coupling matrix over the present targets (subset of
    d1, d2, i1, i2): diagonal entries are the Csum self capacitances,
    off-diagonals are -C_ab.  gates is the (targets x SL,SR,g1,g2) coupling
    block of the gate-induced-charge relation Qtilde = C V.
    """

    def __init__(self, targets, cmat, gates):
        self.targets = tuple(targets)
        self.cmat = np.array(cmat, dtype=float)
        self.gates = np.array(gates, dtype=float)
        t = len(self.targets)
        if self.targets[:2] != ("d1", "d2") or any(x not in TARGETS for x in self.targets):
            raise ChargingError("targets must start with d1, d2")
        if self.cmat.shape != (t, t) or self.gates.shape != (t, len(GATES)):
            raise ChargingError("inconsistent ModelCaps array shapes")
        self.cmat.flags.writeable = False
        self.gates.flags.writeable = False
        self._validate()

    def _validate(self):
        d = np.diag(self.cmat)
        if np.any(d <= 0):
            raise ChargingError("all Csum must be positive")
        off = self.cmat - np.diag(d)
        if np.any(off > 0):
            raise ChargingError("mutual couplings must be non-negative")
        if np.any(self.gates < 0):
            raise ChargingError("gate couplings must be non-negative")
        if self.mutual("d1", "d2") >= min(self.csum("d1"), self.csum("d2")):
            raise ChargingError("C_d1d2 must be smaller than both dot Csum")
        for k in (2, 3):
            if len(self.targets) >= k:
                try:
                    np.linalg.cholesky(self.cmat[:k, :k])
                except np.linalg.LinAlgError:
                    raise ChargingError(
                        f"{k}x{k} capacitance matrix is not positive definite") from None

    def _ti(self, t):
        try:
            return self.targets.index(t)
        except ValueError:
            raise ChargingError(f"no target {t!r} in ModelCaps") from None

    def has(self, t) -> bool:
        return t in self.targets

    def csum(self, t) -> float:
        i = self._ti(t)
        return float(self.cmat[i, i])

    def mutual(self, a, b) -> float:
        return float(-self.cmat[self._ti(a), self._ti(b)])

    def gate(self, t, g) -> float:
        return float(self.gates[self._ti(t), GATES.index(g)])

    def energy_matrix(self, island: bool):
        k = 3 if island else 2
        if island and not self.has("i1"):
            raise ChargingError("ModelCaps has no SET1 island row")
        return self.cmat[:k, :k]

    def gate_block(self, island: bool):
        return self.gates[: (3 if island else 2), :]

    def to_json(self) -> dict:
        out = {}
        for i, t in enumerate(self.targets):
            out[f"Csum_{t}"] = self.cmat[i, i] / AF
            for j in range(i + 1, len(self.targets)):
                out[f"C_{t}{self.targets[j]}"] = -self.cmat[i, j] / AF
            for g in GATES:
                out[f"C_{g}{t}"] = self.gate(t, g) / AF
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelCaps":
        targets = [t for t in TARGETS if f"Csum_{t}" in obj]
        t = len(targets)
        cmat = np.zeros((t, t))
        gates = np.zeros((t, len(GATES)))
        for i, a in enumerate(targets):
            cmat[i, i] = float(obj[f"Csum_{a}"]) * AF
            for j, b in enumerate(targets):
                if j > i:
                    c = float(obj.get(f"C_{a}{b}", obj.get(f"C_{b}{a}", 0.0))) * AF
                    cmat[i, j] = cmat[j, i] = -c
            for k, g in enumerate(GATES):
                gates[i, k] = float(obj.get(f"C_{g}{a}", 0.0)) * AF
        return cls(targets, cmat, gates)


def reduce_caps(maxwell, roles=None) -> ModelCaps:
    """Map a Maxwell matrix onto the circuit-model capacitances.

    Csum_t = M[t][t]; couplings are the negated off-diagonals.  Small
    positive off-diagonals (numerical noise within 1e-3 of the diagonal
    scale) clip to zero coupling; larger ones are an error.
    """
    roles = roles if roles is not None else maxwell.roles
    if not roles:
        raise ChargingError("conductor roles are required to reduce a Maxwell matrix")
    by_role = {}
    for group, role in roles.items():
        if role in TARGETS + GATES:
            if role in by_role:
                raise ChargingError(f"role {role!r} assigned to more than one conductor")
            by_role[role] = group
    if "d1" not in by_role or "d2" not in by_role:
        raise ChargingError("roles must assign d1 and d2")

    m = maxwell.entries
    names = list(maxwell.conductor_names)
    tol = 1e-3 * float(np.abs(np.diag(m)).max())

    def idx(role):
        return names.index(by_role[role])

    def coupling(a_role, b_role):
        raw = -m[idx(a_role), idx(b_role)]
        if raw < 0:
            if -raw <= tol:
                return 0.0
            raise ChargingError(
                f"coupling {a_role}-{b_role} is negative ({raw / AF:.3g} aF) beyond tolerance")
        return float(raw)

    targets = [t for t in TARGETS if t in by_role]
    t = len(targets)
    cmat = np.zeros((t, t))
    gates = np.zeros((t, len(GATES)))
    for i, a in enumerate(targets):
        cmat[i, i] = m[idx(a), idx(a)]
        for j in range(i + 1, t):
            c = coupling(a, targets[j])
            cmat[i, j] = cmat[j, i] = -c
        for k, g in enumerate(GATES):
            gates[i, k] = coupling(a, g) if g in by_role else 0.0
    return ModelCaps(targets, cmat, gates)


def compensate(v_sl, v_sr, caps: ModelCaps, mode: str = "approximate"):
    """Compensation-gate voltages holding the island induced charge constant.

    Approximate mode neglects the cross couplings of each compensation gate
    to the opposite island; exact mode solves the 2x2 system including them.
    """
    if mode not in ("approximate", "exact"):
        raise ChargingError(f"unknown compensation mode {mode!r}")
    has1, has2 = caps.has("i1"), caps.has("i2")
    if not has1 and not has2:
        return (0.0, 0.0)
    drive = {}
    for isl in ("i1", "i2"):
        if caps.has(isl):
            drive[isl] = caps.gate(isl, "SL") * v_sl + caps.gate(isl, "SR") * v_sr
    own = {"i1": "g1", "i2": "g2"}
    for isl, g in own.items():
        if caps.has(isl) and caps.gate(isl, g) <= 0:
            raise ChargingError(f"compensation requires C_{g}{isl} > 0")

    if mode == "approximate" or has1 != has2:
        v_g1 = -drive["i1"] / caps.gate("i1", "g1") if has1 else 0.0
        v_g2 = -drive["i2"] / caps.gate("i2", "g2") if has2 else 0.0
        return (v_g1, v_g2)

    a = np.array([
        [caps.gate("i1", "g1"), caps.gate("i1", "g2")],
        [caps.gate("i2", "g1"), caps.gate("i2", "g2")],
    ])
    b = -np.array([drive["i1"], drive["i2"]])
    if abs(np.linalg.det(a)) <= 1e-12 * max(float(np.abs(a).max()) ** 2, 1e-300):
        raise ChargingError("singular compensation system in exact mode")
    v = np.linalg.solve(a, b)
    return (float(v[0]), float(v[1]))


def excess_vector(x: int, y=None):
    """Charge configuration [-x, +x] (plus island excess y when present)."""
    if y is None:
        return np.array([-float(x), float(x)])
    return np.array([-float(x), float(x), float(y)])


def config_energy(caps: ModelCaps, bias: Bias, x: int, y=None) -> float:
    """Electrostatic energy of one charge configuration, in joules."""
    island = y is not None
    c = caps.energy_matrix(island)
    qt = caps.gate_block(island) @ np.asarray(bias.vector)
    q = qt - Q_E * excess_vector(x, y)
    try:
        return 0.5 * float(q @ np.linalg.solve(c, q))
    except np.linalg.LinAlgError:
        raise ChargingError("capacitance matrix is singular") from None


def _energy_terms(caps: ModelCaps, bias: Bias, island: bool):
    """(qt, C) for vectorized energy evaluation over many configurations."""
    c = caps.energy_matrix(island)
    qt = caps.gate_block(island) @ np.asarray(bias.vector)
    return qt, c


def _best_x(caps, bias, half):
    xs = np.arange(-half, half + 1)
    qt, c = _energy_terms(caps, bias, island=False)
    q = qt[None, :] - Q_E * np.stack([-xs, xs], axis=1).astype(float)
    e = 0.5 * np.einsum("ij,ij->i", q, np.linalg.solve(c, q.T).T)
    emin = e.min()
    ties = xs[e == emin]
    best = ties[np.lexsort((ties, np.abs(ties)))][0]
    return int(best), emin


def stable_config(caps: ModelCaps, v_sl: float, v_sr: float) -> int:
    """Minimum-energy transfer count x at the given S-gate bias.

    SETs are taken as compensated; ties resolve to the smallest |x|, then
    the smallest x.  The search range doubles while the minimizer sits on
    its boundary.
    """
    v_g1, v_g2 = compensate(v_sl, v_sr, caps)
    bias = Bias(v_sl, v_sr, v_g1, v_g2)
    half = 3
    while True:
        best, _ = _best_x(caps, bias, half)
        if abs(best) < half:
            return best
        half *= 2
        if half > X_RANGE_GUARD:
            raise ChargingError("stable configuration search diverged (|x| > 2^20)")


def _bisect_affine(f, t_lo, t_hi, tol_t):
    """Bisection followed by one secant step (exact for affine residuals)."""
    f_lo, f_hi = f(t_lo), f(t_hi)
    if f_lo == 0.0:
        return t_lo
    if f_hi == 0.0:
        return t_hi
    if (f_lo > 0) == (f_hi > 0):
        raise ChargingError("no sign change on the bias segment")
    while t_hi - t_lo > tol_t:
        mid = 0.5 * (t_lo + t_hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (f_lo > 0):
            t_lo, f_lo = mid, fm
        else:
            t_hi, f_hi = mid, fm
    return t_lo - f_lo * (t_hi - t_lo) / (f_hi - f_lo)


def degeneracy_bias(caps: ModelCaps, ray, x: int) -> float:
    """Root t* of E_x = E_{x+1} along the segment bias0 + t * direction, t in [0, 1].

    Bisection to 1e-6 V with a final secant polish; the energy difference is
    affine along any bias segment, so the polished root is exact to rounding.
    """
    bias0, direction = ray
    d = np.asarray(direction.vector if isinstance(direction, Bias) else direction, dtype=float)
    b0 = np.asarray(bias0.vector)
    scale = np.abs(d).max()
    if scale == 0:
        raise ChargingError("degeneracy ray has zero direction")

    def f(t):
        b = Bias(*(b0 + t * d))
        return config_energy(caps, b, x) - config_energy(caps, b, x + 1)

    return _bisect_affine(f, 0.0, 1.0, BISECT_TOL_V / scale)


def polarization(x: int) -> int:
    """Double-dot polarization P = 2x."""
    return 2 * x


def _best_y(caps, bias, x):
    """Minimum-energy island configuration at fixed dot configuration."""
    half = 3
    qt, c = _energy_terms(caps, bias, island=True)
    while True:
        ys = np.arange(-half, half + 1)
        q = qt[None, :] - Q_E * np.stack(
            [np.full_like(ys, -x), np.full_like(ys, x), ys], axis=1).astype(float)
        e = 0.5 * np.einsum("ij,ij->i", q, np.linalg.solve(c, q.T).T)
        best = ys[np.lexsort((ys, np.abs(ys), e))][0]
        if abs(best) < half:
            return int(best)
        half *= 2
        if half > X_RANGE_GUARD:
            raise ChargingError("island configuration search diverged")


def _transfer_points(caps, base: Bias, gate: str, x: int, v_range) -> list[float]:
    """Sweep-gate values where the stable island charge y steps by one."""
    lo, hi = float(v_range[0]), float(v_range[1])
    if not hi > lo:
        raise ChargingError("empty sweep range")
    gi = GATES.index(gate)
    b0 = np.asarray(base.vector)

    def bias_at(v):
        b = b0.copy()
        b[gi] = v
        return Bias(*b)

    y_lo = _best_y(caps, bias_at(lo), x)
    y_hi = _best_y(caps, bias_at(hi), x)
    if y_lo == y_hi:
        return []
    step = 1 if y_hi > y_lo else -1
    points = []
    for k in range(y_lo, y_hi, step):
        y_a, y_b = (k, k + 1) if step > 0 else (k - 1, k)

        def f(v):
            b = bias_at(v)
            return config_energy(caps, b, x, y_a) - config_energy(caps, b, x, y_b)

        points.append(_bisect_affine(f, lo, hi, BISECT_TOL_V))
    return sorted(points)


def set_transfer_points(caps: ModelCaps, v_sl, v_sr, v_g2, x: int, vg1_range) -> list[float]:
    """V_g1 values where the stable SET1 island charge changes by one electron.

    The dot configuration [-x, x] is held fixed and SET2 is assumed
    compensated (its bias enters through v_g2).
    """
    if not caps.has("i1"):
        raise ChargingError("set_transfer_points requires an i1 island row")
    return _transfer_points(caps, Bias(v_sl, v_sr, 0.0, v_g2), "g1", x, vg1_range)


def _island_lever(caps: ModelCaps, gate: str):
    """d yhat / d V_gate: how fast the continuous island minimizer moves."""
    c = caps.energy_matrix(island=True)
    e3 = np.zeros(3)
    e3[2] = 1.0
    w = np.linalg.solve(c, e3)
    denom = Q_E * w[2]
    g_col = caps.gate_block(island=True)[:, GATES.index(gate)]
    return float(w @ g_col) / denom


def delta_q_oracle(caps: ModelCaps) -> float:
    """Electrostatic route: island induced-charge difference at fixed island potential.

    One electron moves d1 -> d2; the dots float, the SET1 island is held at
    0 V, and the gate contributions cancel in the difference.
    """
    if not caps.has("i1"):
        raise ChargingError("delta_q requires an i1 island row")
    c = caps.energy_matrix(island=True)
    dq_dots = -Q_E * (excess_vector(1) - excess_vector(0))  # physical dot charge change
    dv = np.linalg.solve(c[:2, :2], dq_dots)
    dq_island = c[2, :2] @ dv
    frac = abs(dq_island) / Q_E % 1.0
    return min(frac, 1.0 - frac)


def delta_q(caps: ModelCaps, sweep_gate: str = "g1") -> float:
    """Fractional SET1 induced-charge shift caused by one d1 -> d2 transfer.

    Measured as the shift of the island transfer-point pattern between dot
    configurations [0, 0] and [-1, 1], in units of the pattern period, folded
    into [0, 0.5].  Cross-checked against the electrostatic network oracle.
    """
    if not caps.has("i1"):
        raise ChargingError("delta_q requires an i1 island row")
    lever = _island_lever(caps, sweep_gate)
    if abs(lever) <= 1e-30:
        raise ChargingError(f"degenerate transfer period: zero {sweep_gate} island coupling")
    half = 1.3 / abs(lever)  # window holding 2-3 transfer points

    pts0 = _transfer_points(caps, Bias(), sweep_gate, 0, (-half, half))
    pts1 = _transfer_points(caps, Bias(), sweep_gate, 1, (-half, half))
    if len(pts0) < 2 or not pts1:
        raise ChargingError("transfer-point window too narrow to measure a period")
    period = float(np.median(np.diff(pts0)))
    shift = (pts1[0] - pts0[0]) / period % 1.0
    frac = min(shift, 1.0 - shift)

    oracle = delta_q_oracle(caps)
    if abs(frac - oracle) > 1e-6:
        raise ChargingError(
            f"pattern-shift delta_q {frac:.9f} disagrees with electrostatic oracle {oracle:.9f}")
    return frac
