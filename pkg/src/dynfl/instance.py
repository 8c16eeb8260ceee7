"""Dynamic facility location instances: container, metric validation, generation, JSON I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

METRIC_TOL = 1e-9


class InstanceFormatError(ValueError):
    """Raised when an instance file cannot be parsed into an :class:`Instance`."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """A dynamic facility location instance.

    ``open_cost`` has shape ``(n_facilities, T)`` and holds the per-step
    opening cost of each facility. ``dist`` has shape
    ``(T, n_facilities, n_clients)``. Arrays are made read-only on
    construction so instances can be shared between workers.
    """

    facility_ids: tuple[str, ...]
    client_ids: tuple[str, ...]
    T: int
    g: float
    open_cost: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "facility_ids", tuple(str(f) for f in self.facility_ids))
        object.__setattr__(self, "client_ids", tuple(str(c) for c in self.client_ids))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "g", float(self.g))
        oc = np.asarray(self.open_cost, dtype=float)
        if oc.ndim == 1:
            oc = np.repeat(oc[:, None], self.T, axis=1)
        object.__setattr__(self, "open_cost", _frozen(oc))
        object.__setattr__(self, "dist", _frozen(self.dist))
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.facility_ids or not self.client_ids:
            raise ValueError("need at least one facility and one client")
        if self.open_cost.shape != (self.n_facilities, self.T):
            raise ValueError(f"open_cost has shape {self.open_cost.shape}, "
                             f"expected {(self.n_facilities, self.T)}")
        if self.dist.shape != (self.T, self.n_facilities, self.n_clients):
            raise ValueError(f"dist has shape {self.dist.shape}, "
                             f"expected {(self.T, self.n_facilities, self.n_clients)}")

    @property
    def n_facilities(self) -> int:
        return len(self.facility_ids)

    @property
    def n_clients(self) -> int:
        return len(self.client_ids)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.facility_ids == other.facility_ids
                and self.client_ids == other.client_ids
                and self.T == other.T and self.g == other.g
                and np.array_equal(self.open_cost, other.open_cost)
                and np.array_equal(self.dist, other.dist))

    __hash__ = None

    def scaled(self, c: float) -> "Instance":
        """Copy with every cost (distances, opening costs, g) multiplied by ``c``."""
        return Instance(self.facility_ids, self.client_ids, self.T, self.g * c,
                        self.open_cost * c, self.dist * c)

    def to_dict(self) -> dict[str, Any]:
        facilities = []
        for i, fid in enumerate(self.facility_ids):
            row = self.open_cost[i]
            cost = float(row[0]) if np.all(row == row[0]) else [float(v) for v in row]
            facilities.append({"id": fid, "open_cost": cost})
        return {
            "facilities": facilities,
            "clients": list(self.client_ids),
            "T": self.T,
            "g": self.g,
            "dist": self.dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Any) -> "Instance":
        if not isinstance(data, dict):
            raise InstanceFormatError("instance must be a JSON object")
        for key in ("facilities", "clients", "T", "g", "dist"):
            if key not in data:
                raise InstanceFormatError(f"missing required field '{key}'", key)
        T = data["T"]
        if isinstance(T, bool) or not isinstance(T, int) or T < 1:
            raise InstanceFormatError("must be a positive integer", "T")
        g = data["g"]
        if isinstance(g, bool) or not isinstance(g, (int, float)):
            raise InstanceFormatError("must be a number", "g")

        fac = data["facilities"]
        if not isinstance(fac, list) or not fac:
            raise InstanceFormatError("must be a nonempty array", "facilities")
        ids, costs = [], []
        for k, entry in enumerate(fac):
            loc = f"facilities[{k}]"
            if not isinstance(entry, dict) or "id" not in entry or "open_cost" not in entry:
                raise InstanceFormatError("needs 'id' and 'open_cost'", loc)
            oc = entry["open_cost"]
            if isinstance(oc, list):
                if len(oc) != T:
                    raise InstanceFormatError(f"open_cost has {len(oc)} entries, expected T={T}",
                                              loc + ".open_cost")
                costs.append([float(v) for v in oc])
            elif isinstance(oc, (int, float)) and not isinstance(oc, bool):
                costs.append([float(oc)] * T)
            else:
                raise InstanceFormatError("must be a number or an array of T numbers",
                                          loc + ".open_cost")
            ids.append(str(entry["id"]))
        clients = data["clients"]
        if not isinstance(clients, list) or not clients:
            raise InstanceFormatError("must be a nonempty array", "clients")

        try:
            dist = np.array(data["dist"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InstanceFormatError(f"not a numeric array ({exc})", "dist") from None
        expected = (T, len(ids), len(clients))
        if dist.shape != expected:
            raise InstanceFormatError(f"shape {dist.shape} != (T, |F|, |C|) = {expected}", "dist")
        return cls(tuple(ids), tuple(str(c) for c in clients), T, float(g),
                   np.array(costs), dist)


def read_instance(path) -> Instance:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return Instance.from_dict(data)


def write_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=1), encoding="utf-8")


@dataclass
class Violation:
    kind: str
    witness: tuple
    magnitude: float

    def __str__(self):
        return f"{self.kind} at {self.witness} (by {self.magnitude:.3g})"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(instance: Instance, tol: float = METRIC_TOL, max_witnesses: int = 20) -> ValidationReport:
    """Check signs, finiteness and the bipartite triangle inequality of every d_t.

    The bipartite check is d(i,j) <= d(i,j') + d(i',j') + d(i',j) for all
    i, i', j, j'. Only the worst witness per time step is reported for the
    triangle check, plus one entry per offending scalar for sign errors.
    """
    report = ValidationReport()
    for name, arr in (("open_cost", instance.open_cost), ("dist", instance.dist)):
        bad = np.argwhere(~np.isfinite(arr))
        for idx in bad[:max_witnesses]:
            report.violations.append(Violation(f"non-finite {name}", tuple(int(v) for v in idx),
                                               float("inf")))
        neg = np.argwhere(arr < 0)
        for idx in neg[:max_witnesses]:
            report.violations.append(Violation(f"negative {name}", tuple(int(v) for v in idx),
                                               float(-arr[tuple(idx)])))
    if not np.isfinite(instance.g) or instance.g < 0:
        report.violations.append(Violation("invalid g", (), float(abs(instance.g))))
    if report.violations:
        return report

    for t in range(instance.T):
        d = instance.dist[t]
        via = _min_detour(d)
        excess = d - via
        k = np.unravel_index(np.argmax(excess), excess.shape)
        if excess[k] > tol:
            i, j = int(k[0]), int(k[1])
            jp, ip = _detour_witness(d, i, j)
            report.violations.append(Violation("triangle", (t, i, ip, j, jp), float(excess[k])))
    return report


def _min_detour(d: np.ndarray) -> np.ndarray:
    """min over (i', j') of d[i,j'] + d[i',j'] + d[i',j], shape (n_f, n_c)."""
    # h[i, i'] = min_j' d[i,j'] + d[i',j']
    h = np.min(d[:, None, :] + d[None, :, :], axis=2)
    return np.min(h[:, :, None] + d[None, :, :], axis=1)


def _detour_witness(d: np.ndarray, i: int, j: int) -> tuple[int, int]:
    total = d[i][None, :] + d + d[:, j][:, None]      # [i', j']
    ip, jp = np.unravel_index(np.argmin(total), total.shape)
    return int(jp), int(ip)


def generate_drifting(n_f: int, n_c: int, T: int, drift: float, g: float, seed: int,
                      open_cost_range: tuple[float, float] = (0.5, 2.0)) -> Instance:
    """Random planar instance whose clients wander by at most ``drift`` per step.

    Facilities and initial client positions are uniform in the unit square,
    opening costs uniform in ``open_cost_range`` (constant over time). At each
    step every client moves by a uniformly random vector of length <= drift.
    """
    for name, v in (("n_f", n_f), ("n_c", n_c), ("T", T)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    if drift < 0:
        raise ValueError("drift must be nonnegative")
    rng = np.random.default_rng(seed)
    fac = rng.random((n_f, 2))
    cli = rng.random((n_c, 2))
    lo, hi = open_cost_range
    f = rng.uniform(lo, hi, size=n_f)
    dist = np.empty((T, n_f, n_c))
    for t in range(T):
        if t > 0:
            ang = rng.uniform(0, 2 * np.pi, size=n_c)
            r = drift * np.sqrt(rng.random(n_c))
            cli = cli + np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        dist[t] = np.linalg.norm(fac[:, None, :] - cli[None, :, :], axis=2)
    return Instance(tuple(f"f{i}" for i in range(n_f)), tuple(f"c{j}" for j in range(n_c)),
                    T, g, f, dist)


def generate_two_level(n_f: int, n_c: int, T: int, g: float, seed: int, stay: float = 0.6,
                       open_cost_range: tuple[float, float] = (1.0, 2.0),
                       near: float = 1.0, far: float = 3.0) -> Instance:
    """Instance with every distance ``near`` or ``far``, ``far <= 3 near``.

    Each client is near a random pair of facilities and keeps the pair into
    the next step with probability ``stay``. Such instances often have
    half-integral LP optima, which Euclidean ones rarely do.
    """
    if n_f < 2:
        raise ValueError("need at least two facilities")
    if not 0 < near <= far <= 3 * near:
        raise ValueError("need 0 < near <= far <= 3 near for the metric check")
    rng = np.random.default_rng(seed)
    dist = np.full((T, n_f, n_c), float(far))
    for j in range(n_c):
        pair = rng.choice(n_f, 2, replace=False)
        for t in range(T):
            if t > 0 and rng.random() >= stay:
                pair = rng.choice(n_f, 2, replace=False)
            dist[t, pair, j] = near
    f = rng.uniform(*open_cost_range, size=n_f)
    return Instance(tuple(f"f{i}" for i in range(n_f)), tuple(f"c{j}" for j in range(n_c)),
                    T, g, f, dist)


def make_instance(dist: Sequence, open_cost: Sequence, g: float = 0.0) -> Instance:
    """Convenience constructor with auto-generated ids; ``dist`` is (T, F, C)."""
    dist = np.asarray(dist, dtype=float)
    T, n_f, n_c = dist.shape
    return Instance(tuple(f"f{i}" for i in range(n_f)), tuple(f"c{j}" for j in range(n_c)),
                    T, g, np.asarray(open_cost, dtype=float), dist)
