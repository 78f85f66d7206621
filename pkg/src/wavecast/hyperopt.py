"""Hyperparameter search: evolutionary grid search (EGS), Nelder-Mead, and a
uniform random-search baseline.

Search runs in an *encoded* space: each parameter has a domain that maps
values to a float axis (log2 for power-of-two style grids and log-scaled
ranges, identity otherwise).  Grid domains decode by snapping to the nearest
grid value along that axis, so integer parameters mutate in log space and
round back onto the grid.

EGS stages (default pairing plan):

1. exhaustive grid over learning rate x batch size;
2. adaptive (1+1)-EA over the conv filter counts and recurrent widths;
3. adaptive (1+1)-EA over the dropout rates, attention width and L2 strength.

The EA mutates each searched coordinate with probability 2/N_s by a
Normal(mu_i, sigma_i^2) draw; on improvement the mean moves to the accepted
solution and the shared step size tightens as sigma = sigma0 * exp(-lambda*t)
with lambda growing by r_d per acceptance and t counting acceptances (the
step-size rule fires only on update events, so that is what its index
counts; indexing by raw iterations freezes the search long before the budget
runs out).  The source pseudocode initialises lambda at -0.04 and *subtracts*
r_d, which makes the step size grow without bound;
``decay_orientation="as_printed"`` reproduces that literal behaviour, the
default ``"corrected"`` shrinks.  Objectives are maximised; every evaluation
lands in the trace with a monotone best-so-far.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class NumericalError(RuntimeError):
    """An optimizer hit a non-finite objective value it cannot recover from."""


class BudgetError(ValueError):
    """The evaluation budget cannot cover a mandatory stage."""


# ---------------------------------------------------------------------------
# domains and search spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridDomain:
    """A finite value set searched on a (possibly log2) encoded axis."""

    values: tuple
    log: bool = True

    def __post_init__(self):
        vals = tuple(sorted(self.values))
        if len(vals) < 2:
            raise ValueError("grid domain needs at least 2 values")
        if self.log and any(v <= 0 for v in vals):
            raise ValueError("log grid domain needs positive values")
        object.__setattr__(self, "values", vals)

    def encode(self, v):
        return math.log2(v) if self.log else float(v)

    def decode(self, f):
        return min(self.values, key=lambda v: (abs(self.encode(v) - f), v))

    def bounds(self):
        return self.encode(self.values[0]), self.encode(self.values[-1])

    def sample(self, rng):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass(frozen=True)
class ContinuousDomain:
    """A closed interval, optionally searched on a log axis."""

    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValueError("log interval needs lo > 0")

    def encode(self, v):
        return math.log2(v) if self.log else float(v)

    def decode(self, f):
        lo_e, hi_e = self.bounds()
        f = min(max(f, lo_e), hi_e)
        return 2.0**f if self.log else f

    def bounds(self):
        return self.encode(self.lo), self.encode(self.hi)

    def sample(self, rng):
        lo_e, hi_e = self.bounds()
        return self.decode(rng.uniform(lo_e, hi_e))


LR_GRID = (1e-5, 1e-4, 1e-3, 1e-2)
BS_GRID = (32, 64, 128, 256, 512, 1024)


def default_search_space():
    """The twelve-parameter space used for model tuning."""
    pow2 = (4, 8, 16, 32)
    return {
        "cnf1": GridDomain(pow2), "cnf2": GridDomain(pow2),
        "cnf3": GridDomain(pow2), "cnf4": GridDomain(pow2),
        "nhu1": GridDomain(pow2), "nhu2": GridDomain(pow2),
        "pdo1": ContinuousDomain(0.0, 0.3), "pdo2": ContinuousDomain(0.0, 0.3),
        "batch_size": GridDomain(BS_GRID),
        "learning_rate": GridDomain(LR_GRID),
        "attention_dim": GridDomain(pow2),
        "l2_reg": ContinuousDomain(1e-6, 1e-3, log=True),
    }


def space_midpoint(space):
    """Decoded centre of every domain — the fallback starting configuration."""
    out = {}
    for name, dom in space.items():
        lo, hi = dom.bounds()
        out[name] = dom.decode(0.5 * (lo + hi))
    return out


DEFAULT_PAIRING_PLAN = (
    ("grid", ("learning_rate", "batch_size")),
    ("ea", ("cnf1", "cnf2", "cnf3", "cnf4", "nhu1", "nhu2")),
    ("ea", ("pdo1", "pdo2", "attention_dim", "l2_reg")),
)


# ---------------------------------------------------------------------------
# bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class Budget:
    max_evaluations: int
    used: int = 0

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise BudgetError(f"budget must be >= 1, got {self.max_evaluations}")

    def exhausted(self):
        return self.used >= self.max_evaluations

    def remaining(self):
        return self.max_evaluations - self.used

    def spend(self):
        if self.exhausted():
            raise BudgetError("evaluation budget exhausted")
        self.used += 1


@dataclass
class TraceRecord:
    eval_id: int
    stage: str
    params: dict
    score: float
    best_so_far: float
    sigma: dict | None = None


@dataclass
class SearchResult:
    params: dict
    score: float
    trace: list[TraceRecord]
    evaluations: int
    truncated: bool = False


class _Recorder:
    """Shared trace across stages; maintains the global best."""

    def __init__(self, objective, budget):
        self.objective = objective
        self.budget = budget
        self.trace = []
        self.best_params = None
        self.best_score = -math.inf

    def evaluate(self, stage, params, sigma=None):
        self.budget.spend()
        score = float(self.objective(dict(params)))
        if math.isnan(score):
            score = -math.inf
        if score > self.best_score:
            self.best_score = score
            self.best_params = dict(params)
        self.trace.append(TraceRecord(eval_id=len(self.trace) + 1, stage=stage,
                                      params=dict(params), score=score,
                                      best_so_far=self.best_score,
                                      sigma=dict(sigma) if sigma else None))
        return score


def write_trace_csv(path, trace, param_names):
    """Persist a search trace; one row per evaluation, full float precision."""
    param_names = list(param_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eval_id", "stage"] + param_names + ["score", "best_so_far"]
                   + [f"sigma_{n}" for n in param_names])
        for rec in trace:
            row = [rec.eval_id, rec.stage]
            row += [_fmt(rec.params.get(n)) for n in param_names]
            row += [_fmt(rec.score), _fmt(rec.best_so_far)]
            sig = rec.sigma or {}
            row += [_fmt(sig.get(n)) for n in param_names]
            w.writerow(row)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# random search
# ---------------------------------------------------------------------------

def random_search(objective, space, budget, seed=0):
    """Uniform sampling in encoded space; the baseline every optimizer must beat."""
    budget = budget if isinstance(budget, Budget) else Budget(budget)
    rec = _Recorder(objective, budget)
    rng = np.random.default_rng(seed)
    while not budget.exhausted():
        params = {name: dom.sample(rng) for name, dom in space.items()}
        rec.evaluate("random", params)
    return SearchResult(params=rec.best_params, score=rec.best_score, trace=rec.trace,
                        evaluations=budget.used, truncated=False)


# ---------------------------------------------------------------------------
# grid stage
# ---------------------------------------------------------------------------

def grid_search(objective, space, names, base, budget_or_recorder, stage="grid"):
    """Exhaustive scan of the cross product of the named grid domains.

    Every other parameter stays at its ``base`` value.  Raises BudgetError up
    front if the remaining budget cannot cover the full grid.
    """
    rec = (budget_or_recorder if isinstance(budget_or_recorder, _Recorder)
           else _Recorder(objective, budget_or_recorder
                          if isinstance(budget_or_recorder, Budget)
                          else Budget(budget_or_recorder)))
    for name in names:
        if not isinstance(space[name], GridDomain):
            raise ValueError(f"grid stage needs a grid domain for {name!r}")
    sizes = [len(space[n].values) for n in names]
    cells = int(np.prod(sizes))
    if rec.budget.remaining() < cells:
        raise BudgetError(
            f"grid stage over {names} needs {cells} evaluations, "
            f"only {rec.budget.remaining()} left in the budget")
    combos = [()]
    for n in names:
        combos = [c + (v,) for c in combos for v in space[n].values]
    best_inner = None
    best_inner_score = -math.inf
    for combo in combos:
        params = dict(base)
        params.update(zip(names, combo))
        score = rec.evaluate(stage, params)
        if score > best_inner_score:
            best_inner_score = score
            best_inner = params
    return best_inner, best_inner_score, rec


# ---------------------------------------------------------------------------
# adaptive (1+1)-EA
# ---------------------------------------------------------------------------

@dataclass
class EaState:
    mu: dict            # encoded means, one per searched name
    sigma: dict         # current per-coordinate step sizes (encoded space)
    sigma0: dict        # initial step sizes
    lam: float          # decay-rate accumulator
    r_d: float          # decay increment per acceptance
    t: int              # iterations run
    accepted: int       # improvements taken
    best_score: float


def one_plus_one_ea(objective, space, names, start, budget, seed=0, sigma0=None,
                    r_d=0.01, lam0=0.04, decay_orientation="corrected",
                    recorder=None, stage="ea", evaluate_start=True,
                    incumbent_score=None):
    """Elitist (1+1)-EA with an exponentially tightening mutation step.

    names:  the searched subset of ``space``; everything else in ``start``
            rides along unchanged.
    start:  full parameter dict (the incumbent, also the EA mean).
    sigma0: initial step per coordinate (encoded); default quarter-range.

    Each iteration mutates every searched coordinate independently with
    probability 2/len(names) (at least one coordinate is always mutated so
    no evaluation is spent on an exact copy of the incumbent).  A strictly
    better candidate replaces the incumbent, bumps lambda by r_d, and the
    step tightens: sigma_i = sigma0_i * exp(-lambda * t).  With
    ``decay_orientation="as_printed"`` lambda starts at -lam0 and shrinks by
    r_d per acceptance, so the step *widens* instead (kept for comparison).
    """
    if decay_orientation not in ("corrected", "as_printed"):
        raise ValueError(f"unknown decay orientation {decay_orientation!r}")
    if not names:
        raise ValueError("EA needs at least one searched parameter")
    rec = recorder or _Recorder(objective, budget if isinstance(budget, Budget)
                                else Budget(budget))
    rng = np.random.default_rng(seed)
    sign = 1.0 if decay_orientation == "corrected" else -1.0
    lam = sign * lam0

    s0 = {}
    for n in names:
        lo, hi = space[n].bounds()
        s0[n] = (sigma0[n] if isinstance(sigma0, dict) else sigma0) if sigma0 else \
            0.25 * (hi - lo)
    state = EaState(mu={n: space[n].encode(start[n]) for n in names},
                    sigma=dict(s0), sigma0=s0, lam=lam, r_d=r_d, t=0, accepted=0,
                    best_score=-math.inf)

    incumbent = dict(start)
    if incumbent_score is not None:
        state.best_score = float(incumbent_score)
    if evaluate_start and not rec.budget.exhausted():
        state.best_score = rec.evaluate(stage, incumbent, sigma=state.sigma)

    p_mut = 2.0 / len(names)
    while not rec.budget.exhausted():
        state.t += 1
        cand = dict(incumbent)
        hit = [n for n in names if rng.random() <= p_mut]
        if not hit:
            hit = [names[int(rng.integers(len(names)))]]
        for n in hit:
            cand[n] = space[n].decode(rng.normal(state.mu[n], state.sigma[n]))
        score = rec.evaluate(stage, cand, sigma=state.sigma)
        if score > state.best_score:
            state.best_score = score
            state.accepted += 1
            incumbent = cand
            state.mu = {n: space[n].encode(cand[n]) for n in names}
            state.lam += sign * r_d
            # the exponent indexes update events: lambda and sigma only change
            # when an improvement is accepted, so t here is the acceptance
            # count (indexing by raw iterations collapses the step to ~0
            # within a hundred evaluations and freezes the search)
            decay = math.exp(-state.lam * state.accepted)
            state.sigma = {n: s * decay for n, s in state.sigma0.items()}
    # exhausting the budget is the (only) stopping rule, so every run ends
    # truncated; the flag records that explicitly for callers with wall-clock
    # or composite budgets.
    return SearchResult(params=incumbent, score=state.best_score, trace=rec.trace,
                        evaluations=rec.budget.used, truncated=True), state


# ---------------------------------------------------------------------------
# evolutionary grid search
# ---------------------------------------------------------------------------

@dataclass
class EgsResult:
    params: dict
    score: float
    trace: list[TraceRecord]
    evaluations: int
    stages: list[str]
    truncated: bool


def egs_optimize(objective, space, budget, seed=0, pairing_plan=None, base=None,
                 r_d=0.01, decay_orientation="corrected"):
    """Run the staged grid + EA pipeline over ``space``.

    pairing_plan: sequence of ("grid"|"ea", (param names...)); defaults to
    the learning-rate/batch-size grid followed by two EA groups.  Stage
    budgets: the grid takes exactly its cell count, the rest of the budget is
    split evenly across the EA stages (remainder to the last).  Parameters
    not named in any stage keep their ``base`` value throughout.
    """
    plan = tuple(pairing_plan) if pairing_plan is not None else DEFAULT_PAIRING_PLAN
    plan = [(kind, tuple(names)) for kind, names in plan]
    for kind, names in plan:
        if kind not in ("grid", "ea"):
            raise ValueError(f"unknown stage kind {kind!r}")
        unknown = [n for n in names if n not in space]
        if unknown:
            raise ValueError(f"stage names not in space: {unknown}")
    budget = budget if isinstance(budget, Budget) else Budget(budget)
    rec = _Recorder(objective, budget)
    current = dict(base) if base is not None else space_midpoint(space)
    missing = set().union(*(names for _, names in plan)) - set(current)
    if missing:
        raise ValueError(f"base configuration missing parameters: {sorted(missing)}")

    grid_cost = 0
    for kind, names in plan:
        if kind == "grid":
            grid_cost += int(np.prod([len(space[n].values) for n in names]))
    n_ea = sum(1 for kind, _ in plan if kind == "ea")
    ea_budget_total = budget.max_evaluations - grid_cost
    if ea_budget_total < n_ea:
        raise BudgetError(
            f"budget {budget.max_evaluations} cannot cover the grid stage(s) "
            f"({grid_cost} evaluations) plus at least one evaluation per EA stage")
    ea_share = ea_budget_total // n_ea if n_ea else 0

    stages = []
    ea_seen = 0
    rng = np.random.default_rng(seed)
    for si, (kind, names) in enumerate(plan):
        label = f"{kind}-{si + 1}"
        if kind == "grid":
            grid_search(objective, space, names, current, rec, stage=label)
            if rec.best_params is not None:
                current = dict(rec.best_params)
        else:
            ea_seen += 1
            share = ea_share if ea_seen < n_ea else \
                budget.max_evaluations - budget.used  # last stage takes the remainder
            cap = budget.used + max(share, 1)  # stage spend limit on the shared budget
            inner_rec = _StageCap(rec, cap)
            one_plus_one_ea(objective, space, names, current, budget,
                            seed=int(rng.integers(2**32)), r_d=r_d,
                            decay_orientation=decay_orientation,
                            recorder=inner_rec, stage=label,
                            evaluate_start=False, incumbent_score=rec.best_score)
            # elitism across stages: continue from the best full configuration
            if rec.best_params is not None:
                current = dict(rec.best_params)
        stages.append(label)
    best = rec.best_params if rec.best_params is not None else current
    return EgsResult(params=dict(best), score=rec.best_score, trace=rec.trace,
                     evaluations=budget.used, stages=stages,
                     truncated=budget.exhausted())


class _StageCap:
    """Recorder view that exposes a per-stage evaluation cap."""

    def __init__(self, rec, cap):
        self._rec = rec
        self._cap = cap
        self.budget = self

    # Budget protocol against the cap, spending the real budget underneath.
    def exhausted(self):
        return self._rec.budget.used >= self._cap or self._rec.budget.exhausted()

    def remaining(self):
        return min(self._cap - self._rec.budget.used, self._rec.budget.remaining())

    @property
    def used(self):
        return self._rec.budget.used

    def evaluate(self, stage, params, sigma=None):
        if self.exhausted():
            raise BudgetError("stage budget exhausted")
        return self._rec.evaluate(stage, params, sigma=sigma)

    @property
    def trace(self):
        return self._rec.trace

    @property
    def best_params(self):
        return self._rec.best_params

    @property
    def best_score(self):
        return self._rec.best_score


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


def initial_simplex(x0, a=1.0):
    """Regular simplex around x0 with edge length a.

    Vertex i (i >= 1) displaces x0 by p along axis i-1 and q along every
    other axis, with p = a/(n sqrt 2) (sqrt(n+1) + n - 1) and
    q = a/(n sqrt 2) (sqrt(n+1) - 1).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.size
    if n < 1:
        raise ValueError("need at least one dimension")
    p = a / (n * math.sqrt(2.0)) * (math.sqrt(n + 1.0) + n - 1.0)
    q = a / (n * math.sqrt(2.0)) * (math.sqrt(n + 1.0) - 1.0)
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(1, n + 1):
        simplex[i] += q
        simplex[i, i - 1] += p - q
    return simplex


@dataclass
class NmResult:
    x: np.ndarray
    fx: float
    iterations: int
    converged: bool
    evaluations: int


def nelder_mead(objective, x0, a=1.0, eps=1e-8, max_iter=500):
    """Downhill simplex minimisation of ``objective`` from ``x0``.

    Moves: reflection 1.0, expansion 2.0, contraction 0.5, shrink 0.5.
    Stops when sqrt(sum_i (f_i - f_mean)^2 / n) < eps over the n+1 vertex
    values, or after max_iter iterations.  A non-finite objective value
    raises NumericalError naming the vertex.
    """
    def f(x):
        v = float(objective(np.asarray(x, dtype=np.float64)))
        if not math.isfinite(v):
            raise NumericalError(f"objective returned {v} at vertex {np.asarray(x).tolist()}")
        return v

    simplex = initial_simplex(x0, a)
    n = simplex.shape[1]
    evals = 0
    values = np.empty(n + 1)
    for i in range(n + 1):
        values[i] = f(simplex[i])
        evals += 1

    converged = False
    it = 0
    while it < max_iter:
        it += 1
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        spread = math.sqrt(float(((values - values.mean()) ** 2).sum()) / n)
        if spread < eps:
            converged = True
            break

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + REFLECT * (centroid - worst)
        fr = f(xr)
        evals += 1
        if fr < values[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = f(xe)
            evals += 1
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        else:
            if fr < values[-1]:  # outside contraction
                xc = centroid + CONTRACT * (xr - centroid)
            else:                # inside contraction
                xc = centroid - CONTRACT * (centroid - worst)
            fc = f(xc)
            evals += 1
            if fc < min(fr, values[-1]):
                simplex[-1], values[-1] = xc, fc
            else:  # shrink everything toward the best vertex
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + SHRINK * (simplex[i] - simplex[0])
                    values[i] = f(simplex[i])
                    evals += 1

    best = int(np.argmin(values))
    return NmResult(x=simplex[best].copy(), fx=float(values[best]), iterations=it,
                    converged=converged, evaluations=evals)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def synthetic_quadratic(space, target=None, weights=None):
    """A separable quadratic benchmark on any search space.

    score(x) = 1 - sum_i w_i (enc_i(x_i) - enc_i(target_i))^2 with
    w_i = 1/(n * span_i^2); the maximum is exactly 1.0 at the target (the
    domain midpoints by default).  Returns (objective, target_dict).
    """
    names = list(space)
    target = dict(target) if target is not None else space_midpoint(space)
    w = {}
    for n in names:
        lo, hi = space[n].bounds()
        w[n] = (weights or {}).get(n, 1.0 / (len(names) * (hi - lo) ** 2))

    def objective(params):
        acc = 0.0
        for n in names:
            d = space[n].encode(params[n]) - space[n].encode(target[n])
            acc += w[n] * d * d
        return 1.0 - acc

    return objective, target


def cv_objective(model_name, x, y, k=3, epochs=8, seed=0, patience=3):
    """Mean validation R^2 over k folds as a tuning objective.

    Configurations that cannot train (batch too large, non-finite loss)
    score -inf rather than aborting the search.
    """
    from .training import HyperParams, TrainingAborted, run_cv

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)

    def objective(params):
        try:
            hp = HyperParams.from_dict(params)
            out = run_cv(model_name, x, y, hp=hp, k=k, seed=seed, epochs=epochs,
                         patience=patience)
        except (TrainingAborted, ValueError):
            return -math.inf
        r2s = [f.report.r2 for f in out.folds]
        if any(r is None for r in r2s):
            return -math.inf
        return float(np.mean(r2s))

    return objective
