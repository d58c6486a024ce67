"""Sequential design: where to run next, how deep, and for how long.

One iteration of the loop finds the point of maximum predictive
variance, compares the hypothetical post-run variance there against the
current integrated mean squared error (IMSE), picks the deepest code
level worth running, and appends the observed values to the design.
Running level l means running levels 1..l at the same point so the
designs stay nested; cost is charged accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cokriging import MultiFidelityModel, fit_multifidelity
from .exceptions import ParseError

IMSE_THRESHOLD = "imse-threshold"
COST_WEIGHTED = "cost-weighted"
LEVEL_RULES = (IMSE_THRESHOLD, COST_WEIGHTED)

REFIT_NEVER = "never"
REFIT_ALWAYS = "always"


# ---------------------------------------------------------------------------
# domain and costs


@dataclass
class WeightedSample:
    """Discrete input measure: support points with nonnegative weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("need one weight per support point")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


@dataclass
class Domain:
    """Hyper-rectangle with an input measure (uniform unless sampled).

    ``measure`` is None for the uniform measure on the box, or a
    WeightedSample whose support must lie inside the box.
    """

    bounds: np.ndarray
    measure: WeightedSample | None = None

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2:
            raise ValueError("bounds must have shape (d, 2)")
        if not np.all(b[:, 0] < b[:, 1]):
            raise ValueError("each lower bound must be below its upper bound")
        self.bounds = b
        if self.measure is not None:
            pts = self.measure.points
            if pts.shape[1] != b.shape[0]:
                raise ValueError("measure support dimension differs from box")
            if np.any(pts < b[:, 0]) or np.any(pts > b[:, 1]):
                raise ValueError("measure support must lie inside the box")

    @property
    def dimension(self) -> int:
        return self.bounds.shape[0]

    def uniform_points(self, n, rng) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + rng.uniform(size=(n, self.dimension)) * (hi - lo)


@dataclass
class CostModel:
    """Per-level run costs, strictly increasing with fidelity."""

    costs: list

    def __post_init__(self):
        self.costs = [float(c) for c in self.costs]
        if not self.costs or self.costs[0] <= 0:
            raise ValueError("costs must be positive")
        if any(a >= b for a, b in zip(self.costs, self.costs[1:])):
            raise ValueError("costs must be strictly increasing with level")

    @property
    def levels(self) -> int:
        return len(self.costs)

    def cost_through(self, level: int) -> float:
        """Cost of one run of levels 1..level at a point."""
        if not 1 <= level <= len(self.costs):
            raise ValueError(f"level must be in 1..{len(self.costs)}")
        return float(sum(self.costs[:level]))


# ---------------------------------------------------------------------------
# search and quadrature strategies


@dataclass(frozen=True)
class GridSearch:
    """Scan a full product grid, endpoints included, n nodes per dimension."""

    n: int


@dataclass(frozen=True)
class RandomSearch:
    """Scan n uniform points; optionally polish the best with a local solver."""

    n: int
    seed: int = 0
    polish: bool = False


@dataclass(frozen=True)
class MultistartSearch:
    """Run k bounded local maximizations from uniform random starts."""

    k: int
    seed: int = 0


@dataclass(frozen=True)
class GridQuadrature:
    """Average over the product grid of per-dimension cell midpoints."""

    n: int


@dataclass(frozen=True)
class MonteCarloQuadrature:
    """Average over n uniform draws, deterministic given the seed."""

    n: int
    seed: int = 0


def default_search(dimension: int) -> GridSearch | RandomSearch:
    """Grid scan in low dimension, random scan plus polish above."""
    if dimension == 1:
        return GridSearch(1025)
    if dimension == 2:
        return GridSearch(101)
    return RandomSearch(4096, seed=0, polish=True)


def default_quadrature(dimension: int) -> GridQuadrature | MonteCarloQuadrature:
    if dimension == 1:
        return GridQuadrature(1024)
    if dimension == 2:
        return GridQuadrature(48)
    return MonteCarloQuadrature(4096, seed=0)


def product_grid(bounds, n, midpoints=False) -> np.ndarray:
    """Product grid over the box, in lexicographic row order."""
    if n < 1:
        raise ValueError("grid needs at least one node per dimension")
    axes = []
    for lo, hi in bounds:
        if midpoints:
            axes.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
        elif n == 1:
            axes.append(np.array([(lo + hi) / 2.0]))
        else:
            axes.append(np.linspace(lo, hi, n))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _top_variance(model, X) -> np.ndarray:
    return model.predict(X).variances[-1]


def _lexicographic_best(candidates, variances):
    """Candidate with the largest variance; exact ties break toward the
    lexicographically smallest coordinates (scan order is canonical, so
    permuting the input changes nothing)."""
    order = np.lexsort(candidates.T[::-1])
    variances = variances[order]
    return candidates[order][int(np.argmax(variances))]


def _polish(model, domain, starts) -> np.ndarray:
    """Bounded local maximization of the top-level variance."""
    box = [(lo, hi) for lo, hi in domain.bounds]
    out = []
    for start in np.atleast_2d(starts):
        res = minimize(lambda p: -float(_top_variance(model, p[None, :])[0]),
                       start, method="L-BFGS-B", bounds=box)
        out.append(np.clip(res.x, domain.bounds[:, 0], domain.bounds[:, 1]))
    return np.asarray(out)


def argmax_variance(model, domain: Domain, search=None, exclude=None):
    """Point of maximum top-level predictive variance over the box.

    search is GridSearch, RandomSearch, or MultistartSearch (default per
    dimension). ``exclude`` drops candidates bitwise equal to given
    points (the loop uses it to keep enrichment's no-duplicate rule
    satisfiable); returns None when nothing survives the exclusion.
    Otherwise returns the chosen point, shape (d,).
    """
    if search is None:
        search = default_search(domain.dimension)
    if isinstance(search, GridSearch):
        candidates = product_grid(domain.bounds, search.n)
    elif isinstance(search, RandomSearch):
        if search.n < 1:
            raise ValueError("random search needs at least one candidate")
        rng = np.random.default_rng(search.seed)
        candidates = domain.uniform_points(search.n, rng)
        if search.polish:
            v = _top_variance(model, candidates)
            best = _lexicographic_best(candidates, v)
            candidates = np.vstack([candidates, _polish(model, domain, best)])
    elif isinstance(search, MultistartSearch):
        if search.k < 1:
            raise ValueError("multistart search needs at least one start")
        rng = np.random.default_rng(search.seed)
        starts = domain.uniform_points(search.k, rng)
        candidates = np.vstack([starts, _polish(model, domain, starts)])
    else:
        raise TypeError(f"unknown search strategy {search!r}")
    if exclude is not None:
        taken = {np.ascontiguousarray(row, dtype=float).tobytes()
                 for row in np.atleast_2d(exclude)}
        keep = [i for i, row in enumerate(candidates)
                if np.ascontiguousarray(row).tobytes() not in taken]
        if not keep:
            return None
        candidates = candidates[keep]
    return _lexicographic_best(candidates, _top_variance(model, candidates))


def compute_imse(model, domain: Domain, quadrature=None) -> float:
    """Integrated top-level variance under the domain's input measure.

    A weighted-sample measure is its own quadrature; the uniform
    measure is integrated by midpoint grid or Monte Carlo average.
    """
    if domain.measure is not None:
        v = _top_variance(model, domain.measure.points)
        return float(v @ domain.measure.weights)
    if quadrature is None:
        quadrature = default_quadrature(domain.dimension)
    if isinstance(quadrature, GridQuadrature):
        nodes = product_grid(domain.bounds, quadrature.n, midpoints=True)
    elif isinstance(quadrature, MonteCarloQuadrature):
        if quadrature.n < 1:
            raise ValueError("need at least one quadrature node")
        rng = np.random.default_rng(quadrature.seed)
        nodes = domain.uniform_points(quadrature.n, rng)
    else:
        raise TypeError(f"unknown quadrature {quadrature!r}")
    return float(np.mean(_top_variance(model, nodes)))


# ---------------------------------------------------------------------------
# level choice


def choose_level(model, x, imse, cost: CostModel | None = None,
                 rule=IMSE_THRESHOLD) -> int:
    """Deepest level worth running at x (levels 1..choice are then run).

    imse-threshold: the smallest level whose hypothetical top-level
    variance at x (after running it) drops below the current IMSE; the
    top level if none does. With two levels this is exactly the rule
    "skip the expensive code when the cheap run already pushes the
    local error below the average error".

    cost-weighted: the level maximizing variance reduction at x per
    unit of cumulative run cost; ties go to the cheaper level.
    """
    x = np.asarray(x, dtype=float)
    s = model.level_count
    if rule == IMSE_THRESHOLD:
        for level in range(1, s):
            if model.hypothetical_variance_after(x, level)[-1] < imse:
                return level
        return s
    if rule == COST_WEIGHTED:
        if cost is None:
            raise ValueError("cost-weighted rule needs a cost model")
        if cost.levels != s:
            raise ValueError("cost model and model disagree on level count")
        total = model.predict(x).variances[-1]
        best, best_ratio = 1, -np.inf
        for level in range(1, s + 1):
            h = model.hypothetical_variance_after(x, level)[-1]
            ratio = (total - h) / cost.cost_through(level)
            if ratio > best_ratio:
                best, best_ratio = level, ratio
        return best
    raise ValueError(f"unknown rule {rule!r}; expected one of {LEVEL_RULES}")


# ---------------------------------------------------------------------------
# enrichment


def enrich(model, x, level: int, values=None, simulators=None,
           reestimate=False, seed=0) -> MultiFidelityModel:
    """New model with x observed at levels 1..level; the old one is kept.

    Provide either ``values`` (one response per level 1..level) or
    ``simulators`` (one callable per model level; the first ``level``
    are evaluated at x). Hyperparameters are frozen unless
    ``reestimate`` is set, in which case every level is refitted from
    scratch on the grown data.
    """
    if not 1 <= level <= model.level_count:
        raise ValueError(f"level must be in 1..{model.level_count}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if (values is None) == (simulators is None):
        raise ValueError("provide exactly one of values or simulators")
    if simulators is not None:
        if len(simulators) < level:
            raise ValueError("need one simulator per level to run")
        point = x[None, :]
        values = [float(np.asarray(simulators[t](point)).reshape(-1)[0])
                  for t in range(level)]
    values = [float(v) for v in values]
    if len(values) != level:
        raise ValueError(
            f"running through level {level} needs {level} values, "
            f"got {len(values)}")
    data = model.data.with_point(x, values)
    if reestimate:
        return fit_multifidelity(data, model.configs, seed=seed)
    return model.refit(data)


# ---------------------------------------------------------------------------
# trace bookkeeping


@dataclass
class TraceEntry:
    """One enrichment iteration: where, how deep, what was seen."""

    iteration: int
    x: np.ndarray
    level: int
    values: list
    imse_before: float
    imse_after: float
    cumulative_cost: float


@dataclass
class EnrichmentTrace:
    """Loop history plus the schema facts needed to serialize it."""

    dimension: int
    levels: int
    entries: list = field(default_factory=list)
    complete: bool = True

    def __len__(self):
        return len(self.entries)

    def header(self) -> list[str]:
        return (["iter"]
                + [f"x_{j}" for j in range(self.dimension)]
                + ["level"]
                + [f"value_{t}" for t in range(1, self.levels + 1)]
                + ["imse_before", "imse_after", "cum_cost"])


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


_INCOMPLETE_MARK = "# incomplete"


def write_trace(trace: EnrichmentTrace, path) -> None:
    """Write the trace CSV: one row per iteration, fixed column schema.

    Value cells above an iteration's level stay empty. An aborted run
    gets a trailing comment line so the flag survives the round trip.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(trace.header()) + "\n")
        for e in trace.entries:
            cells = [str(e.iteration)]
            cells += [_fmt(v) for v in e.x]
            cells.append(str(e.level))
            cells += [_fmt(v) for v in e.values]
            cells += [""] * (trace.levels - len(e.values))
            cells += [_fmt(e.imse_before), _fmt(e.imse_after),
                      _fmt(e.cumulative_cost)]
            fh.write(",".join(cells) + "\n")
        if not trace.complete:
            fh.write(_INCOMPLETE_MARK + "\n")


def read_trace(path) -> EnrichmentTrace:
    """Parse a trace CSV back; malformed content names file and line."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}:1: empty file, expected a header row")
    header = [c.strip() for c in lines[0].split(",")]
    dimension = sum(1 for c in header if c.startswith("x_"))
    levels = sum(1 for c in header if c.startswith("value_"))
    trace = EnrichmentTrace(dimension=dimension, levels=levels)
    if dimension < 1 or levels < 1 or header != trace.header():
        raise ParseError(f"{path}:1: unrecognized trace header")
    width = len(header)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.strip() == _INCOMPLETE_MARK:
                trace.complete = False
                continue
            raise ParseError(f"{path}:{lineno}: unrecognized comment line")
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(
                f"{path}:{lineno}: expected {width} columns, got {len(cells)}")
        try:
            iteration = int(cells[0])
            x = np.array([float(c) for c in cells[1:1 + dimension]])
            level = int(cells[1 + dimension])
            raw = cells[2 + dimension:2 + dimension + levels]
            values = [float(c) for c in raw if c != ""]
            tail = [float(c) for c in cells[-3:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if len(values) != level:
            raise ParseError(
                f"{path}:{lineno}: level {level} row carries {len(values)} values")
        trace.entries.append(TraceEntry(iteration, x, level, values,
                                        tail[0], tail[1], tail[2]))
    return trace


# ---------------------------------------------------------------------------
# the loop


def run_loop(model, domain: Domain, cost: CostModel, budget,
             simulators, rule=IMSE_THRESHOLD, search=None, quadrature=None,
             refit=REFIT_NEVER, refit_seed=0):
    """Enrich until the next run would not fit in the budget.

    Returns (final model, EnrichmentTrace). Each iteration finds the
    maximum-variance point (design points of D_1 excluded so the
    duplicate rule cannot trip), chooses how deep to run, evaluates the
    simulators, and enriches. ``refit`` is "never" (frozen
    hyperparameters), "always", or "every-k" for an integer k (refit on
    iterations k, 2k, ...). A simulator failure stops the loop and
    returns the partial trace flagged incomplete.
    """
    if cost.levels != model.level_count:
        raise ValueError("cost model and model disagree on level count")
    if len(simulators) != model.level_count:
        raise ValueError("need one simulator per level")
    budget = float(budget)
    if refit == REFIT_NEVER:
        period = 0
    elif refit == REFIT_ALWAYS:
        period = 1
    elif isinstance(refit, str) and refit.startswith("every-"):
        period = int(refit.split("-", 1)[1])
        if period < 1:
            raise ValueError("refit period must be a positive integer")
    else:
        raise ValueError(f"unknown refit mode {refit!r}")

    trace = EnrichmentTrace(dimension=domain.dimension,
                            levels=model.level_count)
    cum = 0.0
    iteration = 0
    imse = compute_imse(model, domain, quadrature)
    while True:
        x = argmax_variance(model, domain, search,
                            exclude=model.data.designs[0])
        if x is None:
            break  # every candidate already observed; nothing left to add
        level = choose_level(model, x, imse, cost, rule)
        step = cost.cost_through(level)
        if cum + step > budget:
            break
        iteration += 1
        try:
            values = [float(np.asarray(simulators[t](x[None, :])).reshape(-1)[0])
                      for t in range(level)]
        except Exception:
            trace.complete = False
            break
        reestimate = period > 0 and iteration % period == 0
        model = enrich(model, x, level, values=values,
                       reestimate=reestimate, seed=refit_seed)
        cum += step
        imse_after = compute_imse(model, domain, quadrature)
        trace.entries.append(TraceEntry(iteration, x, level, values,
                                        imse, imse_after, cum))
        imse = imse_after
    return model, trace
