"""Nested designs, analytic test problems, and file persistence.

Nested designs are built by Latin-hypercube sampling the largest level
and then extracting greedy maximin subsets, so every level is a
bit-exact subset of the one below it.  Persistence writes one design
CSV and one response CSV per level plus a JSON sidecar holding the
fitted parameters; floats are stored with 17 significant digits so a
round trip reproduces them exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .cokriging import (
    LevelConfig,
    LevelParameters,
    MultiFidelityData,
    MultiFidelityModel,
)
from .exceptions import ParseError
from .kernels import BasisSpec, KernelSpec


def _as_bounds(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must have shape (d, 2)")
    if not np.all(b[:, 0] < b[:, 1]):
        raise ValueError("each lower bound must be below its upper bound")
    return b


# ---------------------------------------------------------------------------
# nested designs


def nested_lhs(sizes, bounds, seed=0) -> list[np.ndarray]:
    """Nested designs: LHS of size n_1, then greedy maximin subsets.

    Parameters
    ----------
    sizes : sequence of int
        Points per level, cheapest first; must be nonincreasing with
        n_1 >= 2 so the subsets stay true subsets.
    bounds : array_like, shape (d, 2)
        Box domain, one (low, high) row per dimension.
    seed : int
        Seeds all randomness; output is deterministic given it.

    Returns
    -------
    list of ndarray
        One (n_t, d) array per level; each level's rows are bit-exact
        rows of the previous level's array.
    """
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("need at least one level size")
    if sizes[0] < 2 or sizes[-1] < 1:
        raise ValueError("need n_1 >= 2 and every size >= 1")
    if any(a < b for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sizes must be nonincreasing, got {sizes}")
    b = _as_bounds(bounds)
    d = b.shape[0]
    rng = np.random.default_rng(seed)

    # Latin hypercube: one point per equal-width stratum in every dimension.
    n = sizes[0]
    base = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n) + rng.uniform(size=n)
        base[:, j] = b[j, 0] + strata * (b[j, 1] - b[j, 0]) / n

    designs = [base]
    for m in sizes[1:]:
        idx = _maximin_subset(designs[-1], m)
        designs.append(designs[-1][idx].copy())
    return designs


def _maximin_subset(points, m) -> np.ndarray:
    """Indices of a greedy maximin m-subset of points (sorted).

    Starts from the point whose nearest neighbor is farthest, then
    repeatedly adds the point farthest from the chosen set.  Ties break
    toward the smallest index, so the result is deterministic.
    """
    n = len(points)
    if m >= n:
        return np.arange(n)
    dist = cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    chosen = [int(np.argmax(dist.min(axis=1)))]
    mind = dist[chosen[0]].copy()
    mind[chosen[0]] = -np.inf
    while len(chosen) < m:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, dist[nxt])
        mind[nxt] = -np.inf
    return np.sort(chosen)


def validate_nesting(designs):
    """Check exact point-identity nesting of a design sequence.

    Returns None when every level's points appear bit-for-bit in the
    level below; otherwise the first violation as (level, point index)
    with 1-based level and 0-based index.
    """
    arrays = [np.ascontiguousarray(a, dtype=float) for a in designs]
    for t in range(1, len(arrays)):
        parent = {row.tobytes() for row in arrays[t - 1]}
        for i, row in enumerate(arrays[t]):
            if row.tobytes() not in parent:
                return (t + 1, i)
    return None


# ---------------------------------------------------------------------------
# analytic test problems


@dataclass
class TestProblem:
    """Analytic multi-fidelity problem: level functions cheap to expensive.

    Each level function takes an (n, d) array and returns (n,) values;
    costs are the per-evaluation reference costs, strictly increasing.
    """

    __test__ = False  # not a test case despite the Test* name

    name: str
    bounds: np.ndarray
    levels: list = field(repr=False)
    costs: list = field(repr=False)

    def __post_init__(self):
        self.bounds = _as_bounds(self.bounds)
        if len(self.levels) < 2:
            raise ValueError("a test problem needs at least two levels")
        if len(self.costs) != len(self.levels):
            raise ValueError("need one cost per level")
        self.costs = [float(c) for c in self.costs]
        if any(a >= b for a, b in zip(self.costs, self.costs[1:])):
            raise ValueError("costs must be strictly increasing")

    @property
    def dimension(self) -> int:
        return self.bounds.shape[0]

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def evaluate(self, level: int, x) -> np.ndarray:
        """Evaluate one level (1-based, cheapest first) at points x."""
        if not 1 <= level <= len(self.levels):
            raise ValueError(f"level must be in 1..{len(self.levels)}")
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.dimension)
        return np.asarray(self.levels[level - 1](pts), dtype=float)


def _forrester_high(x):
    t = 6.0 * x[:, 0] - 2.0
    return t ** 2 * np.sin(12.0 * x[:, 0] - 4.0)


def _forrester_low(x):
    return 0.5 * _forrester_high(x) + 10.0 * (x[:, 0] - 0.5) - 5.0


def _ripple_high(x):
    return (np.sin(2.0 * np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
            + 0.5 * (x[:, 0] + x[:, 1]))


def _ripple_low(x):
    return 0.8 * _ripple_high(x) + 0.3 * (x[:, 0] - x[:, 1]) - 0.2


def _chain_top(x):
    t = 5.0 * x[:, 0] - 1.0
    return 0.25 * t ** 2 * np.sin(10.0 * x[:, 0] - 2.0)


def _chain_mid(x):
    return 0.7 * _chain_top(x) + 2.0 * (x[:, 0] - 0.4)


def _chain_low(x):
    return 0.6 * _chain_mid(x) + x[:, 0] - 1.0


def builtin_problems() -> list[TestProblem]:
    """The built-in analytic problems, cheapest level first in each."""
    unit1 = [[0.0, 1.0]]
    unit2 = [[0.0, 1.0], [0.0, 1.0]]
    return [
        TestProblem("forrester", unit1, [_forrester_low, _forrester_high],
                    [1.0, 5.0]),
        TestProblem("ripple2d", unit2, [_ripple_low, _ripple_high],
                    [1.0, 6.0]),
        TestProblem("chain3", unit1, [_chain_low, _chain_mid, _chain_top],
                    [1.0, 4.0, 16.0]),
    ]


def get_problem(name: str) -> TestProblem:
    """Look up a built-in problem by name."""
    for problem in builtin_problems():
        if problem.name == name:
            return problem
    known = ", ".join(p.name for p in builtin_problems())
    raise ValueError(f"unknown problem {name!r}; known problems: {known}")


# ---------------------------------------------------------------------------
# persistence


def _fmt(v: float) -> str:
    # 17 significant digits round-trip any float64 exactly.
    return format(float(v), ".17g")


def _design_path(directory, t):
    return os.path.join(directory, f"design_{t}.csv")


def _response_path(directory, t):
    return os.path.join(directory, f"level_{t}.csv")


_MODEL_SIDECAR = "model.json"


def _read_table(path, n_columns=None):
    """Read a CSV of floats, returning (header, rows).

    Raises ParseError naming the file and 1-based line of any malformed
    content; the header is validated by the caller.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}:1: empty file, expected a header row")
    header = [c.strip() for c in lines[0].split(",")]
    width = len(header) if n_columns is None else n_columns
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(
                f"{path}:{lineno}: expected {width} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return header, rows


def _write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def load_points(path) -> np.ndarray:
    """Read one design CSV (dim_0.. header); returns (n, d), n may be 0."""
    header, rows = _read_table(path)
    expected = [f"dim_{j}" for j in range(len(header))]
    if header != expected:
        raise ParseError(
            f"{path}:1: expected header {','.join(expected)!r}, "
            f"got {','.join(header)!r}")
    d = len(header)
    if not rows:
        return np.empty((0, d))
    return np.asarray(rows, dtype=float)


def save_data(data: MultiFidelityData, directory) -> None:
    """Write per-level design and response CSVs under directory."""
    os.makedirs(directory, exist_ok=True)
    d = data.dimension
    header = [f"dim_{j}" for j in range(d)]
    for t in range(1, data.levels + 1):
        _write_table(_design_path(directory, t), header,
                     data.designs[t - 1])
        _write_table(_response_path(directory, t), ["value"],
                     [[v] for v in data.observations[t - 1]])


def load_data(directory) -> MultiFidelityData:
    """Read the per-level CSVs written by save_data.

    Levels are discovered by consecutive file names starting at 1.
    Malformed files raise ParseError with the offending line; nesting
    or row-count problems surface as the data object's ValueError.
    """
    designs = []
    observations = []
    t = 1
    while os.path.exists(_design_path(directory, t)):
        design = load_points(_design_path(directory, t))
        rpath = _response_path(directory, t)
        if not os.path.exists(rpath):
            raise ParseError(f"{rpath}: missing response file for level {t}")
        rheader, rrows = _read_table(rpath)
        if rheader != ["value"]:
            raise ParseError(
                f"{rpath}:1: expected header 'value', got {','.join(rheader)!r}")
        designs.append(design)
        observations.append(np.asarray([r[0] for r in rrows], dtype=float))
        t += 1
    if not designs:
        raise ParseError(f"{_design_path(directory, 1)}: no design files found")
    return MultiFidelityData(designs, observations)


def save_model(model: MultiFidelityModel, directory) -> None:
    """Write the model's data CSVs plus a JSON parameter sidecar."""
    save_data(model.data, directory)
    levels = []
    for level in model.levels:
        entry = {
            "kernel_family": level.kernel.family,
            "lengthscales": [float(v) for v in level.kernel.lengthscales],
            "sigma2": float(level.sigma2),
            "beta": [float(v) for v in level.beta],
            "trend": level.trend.kind,
            "rho_beta": (None if level.rho_beta is None
                         else [float(v) for v in level.rho_beta]),
            "scaling": None if level.scaling is None else level.scaling.kind,
        }
        levels.append(entry)
    sidecar = {"dimension": model.dimension, "levels": levels}
    path = os.path.join(directory, _MODEL_SIDECAR)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory) -> MultiFidelityModel:
    """Rebuild a model from save_model output.

    The stored parameters are taken as-is (no re-estimation); the
    correlation factorizations are recomputed from them, which is exact
    because the CSVs round-trip every float bit-for-bit.
    """
    data = load_data(directory)
    path = os.path.join(directory, _MODEL_SIDECAR)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    entries = sidecar.get("levels")
    if not isinstance(entries, list) or len(entries) != data.levels:
        raise ParseError(
            f"{path}: sidecar must list {data.levels} levels to match the data")
    d = data.dimension
    configs = []
    params = []
    for t, entry in enumerate(entries, start=1):
        try:
            kernel = KernelSpec(entry["kernel_family"])
            trend = BasisSpec(entry["trend"], d)
            scaling = (None if entry["scaling"] is None
                       else BasisSpec(entry["scaling"], d))
            par = LevelParameters(
                lengthscales=np.asarray(entry["lengthscales"], dtype=float),
                sigma2=float(entry["sigma2"]),
                beta=np.asarray(entry["beta"], dtype=float),
                rho_beta=(None if entry["rho_beta"] is None
                          else np.asarray(entry["rho_beta"], dtype=float)),
            )
        except KeyError as exc:
            raise ParseError(f"{path}: level {t} is missing field {exc}") from exc
        configs.append(LevelConfig(trend=trend, kernel=kernel, scaling=scaling))
        params.append(par)
    return MultiFidelityModel.from_parameters(data, configs, params)
