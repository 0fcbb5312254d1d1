"""Exact per-slot solver: linearised mixed-integer program plus branch-and-bound.

The squared coherent amplitude in the rate constraint is expanded into
singleton and pairwise element terms. Products of two binaries are replaced by
a binary ``z`` with the usual three inequalities; products of a power and a
binary are replaced by a continuous ``w`` with three big-M inequalities
(``M = p_max``). Rate rows are stored in SNR units, i.e. divided by the noise
power, so that the absolute residual tolerance is meaningful.

Variable names (users labelled 1 and 2, elements 0-based)::

    eps{i}_{n}           element n reflects towards user i
    epsp{i}_{x}_{y}      eps{i}_{x} * eps{i}_{y}, ordered pairs x != y
    p{j}                 transmit power of user j
    pt{j}_{i}_{n}        p{j} * eps{i}_{n}        (j is the partner of i)
    ptt{j}_{i}_{x}_{y}   p{j} * epsp{i}_{x}_{y}

With every binary fixed, each rate row involves a single power variable and
the objective increases in every power, so a leaf is solved in closed form.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .physics import (
    ENERGY_TOL,
    BatteryState,
    ElementAssignment,
    PowerAllocation,
    affordable_elements,
    capacity_ok,
    minimal_power,
    objective_value,
    other,
    ris_consumption,
    snr_target,
)
from .scenario import ChannelRealization, ScenarioConfig

TOL = 1e-9
SENSES = ("<=", ">=", "==")


@dataclass(frozen=True)
class Constraint:
    coeffs: dict[str, float]
    sense: str
    rhs: float
    name: str = ""
    kind: str = ""

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"bad sense {self.sense!r}")

    def lhs(self, values: dict[str, float]) -> float:
        return math.fsum(c * values[v] for v, c in self.coeffs.items())

    def violation(self, values: dict[str, float]) -> float:
        """Amount by which the row is violated (0 when satisfied)."""
        lhs = self.lhs(values)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)

    def satisfied(self, values: dict[str, float], tol: float = TOL) -> bool:
        return self.violation(values) <= tol


@dataclass
class LinearizedProgram:
    """A minimisation MILP together with the bookkeeping that ties it to the slot."""

    binaries: list[str]
    continuous: dict[str, tuple[float, float]]
    constraints: list[Constraint]
    objective: dict[str, float]
    branch_groups: list[tuple[str, ...]]
    binary_products: dict[str, tuple[str, str]]
    continuous_products: dict[str, tuple[str, str]]
    element_of: dict[str, tuple[int, int]]
    power_vars: tuple[str, str]
    n_elements: int

    def rows(self, kind: str) -> list[Constraint]:
        return [c for c in self.constraints if c.kind == kind]

    def point(self, assignment: ElementAssignment, power: PowerAllocation) -> dict[str, float]:
        """Lift a physical decision to program variables, products filled in consistently."""
        values = {}
        for name, (n, i) in self.element_of.items():
            values[name] = int(assignment.eps[n, i])
        for z, (x, y) in self.binary_products.items():
            values[z] = values[x] * values[y]
        for p, v in zip(self.power_vars, power.p):
            values[p] = v
        for w, (p, b) in self.continuous_products.items():
            values[w] = values[p] * values[b]
        return values

    def objective_of(self, values: dict[str, float]) -> float:
        return math.fsum(c * values[v] for v, c in self.objective.items())

    def violations(self, values: dict[str, float], tol: float = TOL) -> list[str]:
        out = []
        for name in self.binaries:
            if values[name] not in (0, 1):
                out.append(f"{name} not binary")
        for name, (lo, hi) in self.continuous.items():
            if not lo - tol <= values[name] <= hi + tol:
                out.append(f"{name}={values[name]!r} outside [{lo}, {hi}]")
        for row in self.constraints:
            v = row.violation(values)
            if v > tol:
                out.append(f"{row.name} violated by {v:.3g}")
        return out

    def to_lp(self) -> str:
        """CPLEX-LP style text dump for cross-checking with external solvers."""

        def expr(coeffs):
            terms = [f"{c:+.17g} {v}" for v, c in coeffs.items() if c != 0]
            return " ".join(terms) if terms else "0"

        lines = ["\\ two-way RIS slot program; users labelled 1/2, elements 0-based",
                 "Minimize", f" obj: {expr(self.objective)}", "Subject To"]
        for row in self.constraints:
            if row.coeffs:
                sense = "=" if row.sense == "==" else row.sense
                lines.append(f" {row.name}: {expr(row.coeffs)} {sense} {row.rhs!r}")
            else:
                lines.append(f"\\ {row.name}: 0 {row.sense} {row.rhs!r} (constant row)")
        lines.append("Bounds")
        for name, (lo, hi) in self.continuous.items():
            lines.append(f" {lo!r} <= {name} <= {hi!r}")
        lines.append("Binaries")
        for k in range(0, len(self.binaries), 8):
            lines.append(" " + " ".join(self.binaries[k:k + 8]))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class SolveReport:
    status: str
    assignment: ElementAssignment | None
    power: PowerAllocation | None
    objective: float
    nodes_explored: int
    wall_time: float
    leaves_evaluated: int = 0
    values: dict[str, float] | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# -- variable names ---------------------------------------------------------

def eps_name(i: int, n: int) -> str:
    return f"eps{i + 1}_{n}"


def pair_name(i: int, x: int, y: int) -> str:
    return f"epsp{i + 1}_{x}_{y}"


def power_name(j: int) -> str:
    return f"p{j + 1}"


def ptilde_name(i: int, n: int) -> str:
    return f"pt{other(i) + 1}_{i + 1}_{n}"


def ptt_name(i: int, x: int, y: int) -> str:
    return f"ptt{other(i) + 1}_{i + 1}_{x}_{y}"


# -- linearisation devices --------------------------------------------------

def linearize_binary_product(x: str, y: str, z: str) -> list[Constraint]:
    """Rows forcing binary ``z`` to equal ``x * y``."""
    return [
        Constraint({z: 1.0, x: -1.0}, "<=", 0.0, f"{z}_le_{x}", "bprod"),
        Constraint({z: 1.0, y: -1.0}, "<=", 0.0, f"{z}_le_{y}", "bprod"),
        Constraint({z: 1.0, x: -1.0, y: -1.0}, ">=", -1.0, f"{z}_ge", "bprod"),
    ]


def linearize_continuous_binary(p: str, xi: str, w: str, big_m: float) -> list[Constraint]:
    """Big-M rows forcing ``w`` (bounded below by 0) to equal ``p * xi`` for p in [0, big_m]."""
    return [
        Constraint({w: 1.0, p: -1.0}, "<=", 0.0, f"{w}_le_p", "cprod"),
        Constraint({w: 1.0, xi: -big_m, p: -1.0}, ">=", -big_m, f"{w}_ge_bigm", "cprod"),
        Constraint({w: 1.0, xi: -big_m}, "<=", 0.0, f"{w}_le_bigm", "cprod"),
    ]


def build_linearized_rate_constraint(i: int, channels: ChannelRealization,
                                     config: ScenarioConfig) -> Constraint:
    """Linear rate row towards user ``i`` in SNR units (both sides divided by sigma2)."""
    h = channels.h_direct
    a = config.alpha
    H = channels.cascade[i]
    s2 = config.sigma2
    coeffs = {power_name(other(i)): h * h / s2}
    for n in range(channels.n_elements):
        coeffs[ptilde_name(i, n)] = (2.0 * a * h * H[n] + a * a * H[n] * H[n]) / s2
    for x, y in itertools.permutations(range(channels.n_elements), 2):
        coeffs[ptt_name(i, x, y)] = a * a * H[x] * H[y] / s2
    return Constraint(coeffs, ">=", snr_target(config), f"rate{i + 1}", "rate")


def branch_order(channels: ChannelRealization) -> list[int]:
    """Elements by descending cascade magnitude, ties broken by index."""
    return [int(n) for n in np.argsort(-channels.cascade.max(axis=0), kind="stable")]


def build_program(channels: ChannelRealization, battery_before: BatteryState, theta: float,
                  config: ScenarioConfig) -> LinearizedProgram:
    n_el = channels.n_elements
    big_m = config.p_max
    binaries, constraints = [], []
    continuous = {}
    objective = {}
    binary_products, continuous_products, element_of = {}, {}, {}

    for j in (0, 1):
        continuous[power_name(j)] = (config.p_min, config.p_max)
        objective[power_name(j)] = (1.0 - config.zeta) * config.t_s
    for n in range(n_el):
        for i in (0, 1):
            e = eps_name(i, n)
            binaries.append(e)
            element_of[e] = (n, i)
            objective[e] = config.zeta * config.t_s * config.p_e
        constraints.append(Constraint({eps_name(0, n): 1.0, eps_name(1, n): 1.0}, "<=", 1.0,
                                      f"excl_{n}", "exclusivity"))
    for i in (0, 1):
        for x, y in itertools.permutations(range(n_el), 2):
            z = pair_name(i, x, y)
            binaries.append(z)
            binary_products[z] = (eps_name(i, x), eps_name(i, y))
            constraints.extend(linearize_binary_product(eps_name(i, x), eps_name(i, y), z))

    for i in (0, 1):
        p = power_name(other(i))
        for n in range(n_el):
            w = ptilde_name(i, n)
            continuous[w] = (0.0, big_m)
            continuous_products[w] = (p, eps_name(i, n))
            constraints.extend(linearize_continuous_binary(p, eps_name(i, n), w, big_m))
        for x, y in itertools.permutations(range(n_el), 2):
            w = ptt_name(i, x, y)
            continuous[w] = (0.0, big_m)
            continuous_products[w] = (p, pair_name(i, x, y))
            constraints.extend(linearize_continuous_binary(p, pair_name(i, x, y), w, big_m))
        constraints.append(build_linearized_rate_constraint(i, channels, config))

    unit = config.t_s * config.p_e
    constraints.append(Constraint({eps_name(i, n): unit for n in range(n_el) for i in (0, 1)},
                                  "<=", battery_before.stored, "causality", "causality"))
    room = config.battery_capacity - battery_before.stored - config.t_s * config.eta * theta
    constraints.append(Constraint({}, "<=", room, "capacity", "capacity"))

    groups = [(eps_name(0, n), eps_name(1, n)) for n in branch_order(channels)]
    return LinearizedProgram(
        binaries=binaries,
        continuous=continuous,
        constraints=constraints,
        objective=objective,
        branch_groups=groups,
        binary_products=binary_products,
        continuous_products=continuous_products,
        element_of=element_of,
        power_vars=(power_name(0), power_name(1)),
        n_elements=n_el,
    )


# -- branch-and-bound -------------------------------------------------------

class _Compiled:
    """Dense arrays over the branching binaries, extracted from the program rows.

    Each covering row reads ``a(eps) * P >= rhs`` once the product variables are
    substituted, with ``a(eps) = c0 + single @ eps + eps @ pair_upper @ eps``.
    """

    def __init__(self, prog: LinearizedProgram):
        order = [b for g in prog.branch_groups for b in g]
        self.order = order
        self.index = {b: k for k, b in enumerate(order)}
        nb = len(order)
        self.group_slices = []
        pos = 0
        for g in prog.branch_groups:
            self.group_slices.append(list(range(pos, pos + len(g))))
            pos += len(g)

        for name, coef in prog.objective.items():
            if coef != 0 and name not in self.index and name not in prog.power_vars:
                raise NotImplementedError(f"objective term on derived variable {name}")
        self.obj = np.array([prog.objective.get(b, 0.0) for b in order])
        self.power_obj = [prog.objective.get(p, 0.0) for p in prog.power_vars]
        if min(self.power_obj) < 0:
            raise NotImplementedError("power objective coefficients must be >= 0")
        self.power_bounds = [prog.continuous[p] for p in prog.power_vars]

        self.constants = []
        self.knapsacks = []  # (coef vector, rhs) rows over branching binaries, sense <=
        self.covers = []  # (power index, c0, single, pairsym, rhs)
        for row in prog.constraints:
            if row.kind in ("bprod", "cprod"):
                continue
            if not row.coeffs:
                self.constants.append(row)
            elif all(v in self.index for v in row.coeffs):
                vec = np.zeros(nb)
                for v, c in row.coeffs.items():
                    vec[self.index[v]] = c
                if row.sense == ">=":
                    self.knapsacks.append((-vec, -row.rhs))
                elif row.sense == "<=":
                    self.knapsacks.append((vec, row.rhs))
                else:
                    self.knapsacks.append((vec, row.rhs))
                    self.knapsacks.append((-vec, -row.rhs))
            else:
                self.covers.append(self._compile_cover(prog, row, nb))
        self._classify_knapsacks()

    def _compile_cover(self, prog, row, nb):
        if row.sense != ">=":
            raise NotImplementedError(f"row {row.name}: only >= covering rows supported")
        single = np.zeros(nb)
        pairsym = np.zeros((nb, nb))
        base, c0 = None, 0.0
        for v, c in row.coeffs.items():
            if c < 0:
                raise NotImplementedError(f"row {row.name}: negative coefficient on {v}")
            if v in prog.power_vars:
                p, bin_ = v, None
            elif v in prog.continuous_products:
                p, bin_ = prog.continuous_products[v]
            else:
                raise NotImplementedError(f"row {row.name}: unsupported variable {v}")
            if base is None:
                base = p
            elif base != p:
                raise NotImplementedError(f"row {row.name} mixes power variables")
            if bin_ is None:
                c0 += c
            elif bin_ in self.index:
                single[self.index[bin_]] += c
            else:
                x, y = prog.binary_products[bin_]
                ix, iy = self.index[x], self.index[y]
                pairsym[ix, iy] += c
                pairsym[iy, ix] += c
        return prog.power_vars.index(base), c0, single, pairsym, row.rhs

    def _classify_knapsacks(self):
        """Split <= rows into rows local to one group and rows shared across groups."""
        owner = {k: g for g, pos in enumerate(self.group_slices) for k in pos}
        self.shared_rows = []
        self.local_sig = [[] for _ in self.group_slices]
        for vec, rhs in self.knapsacks:
            groups = {owner[k] for k in np.flatnonzero(vec)}
            if len(groups) == 1:
                g = groups.pop()
                self.local_sig[g].append((tuple(vec[self.group_slices[g]]), rhs))
            else:
                self.shared_rows.append(vec)
        self.local_sig = [sorted(sig) for sig in self.local_sig]

    def interchangeable(self, g: int, h: int) -> bool:
        a, b = self.group_slices[g], self.group_slices[h]
        if len(a) != len(b) or self.local_sig[g] != self.local_sig[h]:
            return False
        perm = np.arange(len(self.order))
        perm[a], perm[b] = b, a
        vecs = [self.obj] + self.shared_rows + [c[2] for c in self.covers]
        if any(not np.array_equal(v, v[perm]) for v in vecs):
            return False
        return all(np.array_equal(c[3], c[3][np.ix_(perm, perm)]) for c in self.covers)


@dataclass
class _Node:
    fixed_obj: float
    a: list
    w: list
    loads: list
    chosen: list


def _runs(comp: _Compiled) -> list[list[int]]:
    runs = []
    for g in range(len(comp.group_slices)):
        if runs and comp.interchangeable(runs[-1][-1], g):
            runs[-1].append(g)
        else:
            runs.append([g])
    return runs


def _compositions(m: int, k: int):
    """Non-negative count vectors of length k with sum <= m."""
    if k == 0:
        yield ()
        return
    for first in range(m + 1):
        for rest in _compositions(m - first, k - 1):
            yield (first,) + rest


def solve_exact(program: LinearizedProgram) -> SolveReport:
    """Global optimum of the program by depth-first branch-and-bound.

    Branching follows ``program.branch_groups`` (one group per element, at most
    one member set). Consecutive groups whose columns are identical in every
    row are branched jointly by counts, which removes symmetric duplicates.
    The node bound sets every unfixed binary to 1 in each covering row
    separately (ignoring exclusivity and budget), which under-estimates the
    powers needed, plus the objective of the binaries already fixed.
    """
    start = time.perf_counter()
    comp = _Compiled(program)
    nodes, leaves = 1, 0

    def infeasible(nodes):
        return SolveReport("infeasible", None, None, math.inf, nodes, time.perf_counter() - start,
                           leaves)

    for row in comp.constants:
        if row.violation({}) > TOL:
            return infeasible(nodes)

    runs = _runs(comp)
    nb = len(comp.order)
    # Position (in branching order) of the first binary left free after run r.
    free_from = [comp.group_slices[run[-1]][-1] + 1 for run in runs]
    suffix = []
    for _, _, single, pairsym, _ in comp.covers:
        s_single = np.concatenate([np.cumsum(single[::-1])[::-1], [0.0]])
        upper = np.triu(pairsym, 1)
        row_tail = np.concatenate([np.cumsum(upper[:, ::-1], axis=1)[:, ::-1], np.zeros((nb, 1))], axis=1)
        per_start = np.array([row_tail[s, s + 1] if s + 1 <= nb else 0.0 for s in range(nb)])
        s_pair = np.concatenate([np.cumsum(per_start[::-1])[::-1], [0.0]])
        suffix.append((s_single, s_pair))

    monotone_rows = [bool(np.all(vec >= 0)) for vec, _ in comp.knapsacks]
    neg_obj_suffix = np.concatenate([np.cumsum(np.minimum(comp.obj, 0)[::-1])[::-1], [0.0]])
    best = {"obj": math.inf, "node": None, "powers": None}

    def powers_for(a_values):
        need = [lo for lo, _ in comp.power_bounds]
        for (pidx, _, _, _, rhs), a in zip(comp.covers, a_values):
            if rhs <= 0:
                continue
            if a <= 0:
                return None
            p = rhs / a
            while a * p < rhs:
                p = math.nextafter(p, math.inf)
            need[pidx] = max(need[pidx], p)
        for p, (_, hi) in zip(need, comp.power_bounds):
            if p > hi:
                return None
        return need

    def evaluate(node: _Node, free: int):
        """Bound of a node whose binaries before position ``free`` are fixed."""
        opt = []
        for (_, _, _, _, _), (s_single, s_pair), a, w in zip(comp.covers, suffix, node.a, node.w):
            opt.append(a + s_single[free] + float(w[free:].sum()) + s_pair[free])
        powers = powers_for(opt)
        if powers is None:
            return None, None
        bound = node.fixed_obj + neg_obj_suffix[free]
        bound += math.fsum(c * p for c, p in zip(comp.power_obj, powers))
        return bound, powers

    def apply(node: _Node, picks: list[int]) -> _Node | None:
        loads = []
        for (vec, rhs), monotone, load in zip(comp.knapsacks, monotone_rows, node.loads):
            new = load + float(vec[picks].sum()) if picks else load
            if monotone and new > rhs + TOL:
                return None
            loads.append(new)
        if not picks:
            return _Node(node.fixed_obj, node.a, node.w, loads, node.chosen)
        a_new, w_new = [], []
        idx = np.array(picks)
        for (_, _, single, pairsym, _), a, w in zip(comp.covers, node.a, node.w):
            sub = pairsym[np.ix_(idx, idx)]
            a_new.append(a + float(single[idx].sum()) + float(w[idx].sum()) + float(sub.sum()) / 2.0)
            w_new.append(w + pairsym[idx].sum(axis=0))
        return _Node(node.fixed_obj + float(comp.obj[idx].sum()), a_new, w_new, loads,
                     node.chosen + picks)

    def leaf_ok(node: _Node) -> bool:
        return all(load <= rhs + TOL for (_, rhs), load in zip(comp.knapsacks, node.loads))

    root = _Node(0.0, [c[1] for c in comp.covers], [np.zeros(nb) for _ in comp.covers],
                 [0.0 for _ in comp.knapsacks], [])
    root_bound, _ = evaluate(root, 0)
    if root_bound is None:
        return infeasible(nodes)

    def prunable(bound):
        return bound >= best["obj"] - 1e-12 * abs(best["obj"])

    def dfs(r: int, node: _Node):
        nonlocal nodes, leaves
        run = runs[r]
        width = len(comp.group_slices[run[0]])
        free = free_from[r]
        last = r + 1 == len(runs)
        children = []
        for combo in _compositions(len(run), width):
            picks, g = [], 0
            for opt, count in enumerate(combo):
                for _ in range(count):
                    picks.append(comp.group_slices[run[g]][opt])
                    g += 1
            child = apply(node, picks)
            nodes += 1
            if child is None:
                continue
            bound, powers = evaluate(child, free)
            if bound is None:
                continue
            if last:
                leaves += 1
                if leaf_ok(child) and bound < best["obj"]:
                    best.update(obj=bound, node=child, powers=powers)
                continue
            children.append((bound, len(children), child))
        children.sort(key=lambda t: (t[0], t[1]))
        for bound, _, child in children:
            if prunable(bound):
                break
            dfs(r + 1, child)

    if runs:
        dfs(0, root)
    else:
        _, powers = evaluate(root, 0)
        if powers is not None and leaf_ok(root):
            best.update(obj=root_bound, node=root, powers=powers)

    if best["node"] is None:
        return infeasible(nodes)
    values = _complete_point(program, comp, best["node"].chosen, best["powers"])
    bad = program.violations(values)
    if bad:
        raise RuntimeError(f"branch-and-bound produced an infeasible point: {bad[:3]}")
    eps = np.zeros((program.n_elements, 2), dtype=np.int8)
    for k in best["node"].chosen:
        n, i = program.element_of[comp.order[k]]
        eps[n, i] = 1
    power = PowerAllocation(tuple(values[p] for p in program.power_vars))
    return SolveReport("optimal", ElementAssignment(eps), power, program.objective_of(values),
                       nodes, time.perf_counter() - start, leaves, values)


def _complete_point(program, comp, chosen, powers) -> dict[str, float]:
    values = {b: 0 for b in program.binaries}
    for k in chosen:
        values[comp.order[k]] = 1
    for z, (x, y) in program.binary_products.items():
        values[z] = values[x] * values[y]
    for p, v in zip(program.power_vars, powers):
        values[p] = v
    for w, (p, b) in program.continuous_products.items():
        values[w] = values[p] * values[b]
    return values


def exhaustive_oracle(channels: ChannelRealization, battery_before: BatteryState, theta: float,
                      config: ScenarioConfig, limit: int = 10**6) -> SolveReport:
    """Brute force over all 3**N assignments using the closed-form minimal powers."""
    start = time.perf_counter()
    n = channels.n_elements
    if 3**n > limit:
        raise ValueError(f"3**{n} assignments exceed the enumeration limit {limit}")
    if not capacity_ok(battery_before, theta, config):
        return SolveReport("infeasible", None, None, math.inf, 0, time.perf_counter() - start)
    budget = affordable_elements(battery_before.stored, config)
    best, best_obj, count = None, math.inf, 0
    for choices in itertools.product((-1, 0, 1), repeat=n):
        count += 1
        assignment = ElementAssignment.from_choices(choices)
        if assignment.active > budget:
            continue
        if ris_consumption(assignment, config) > battery_before.stored + ENERGY_TOL:
            continue
        powers = []
        for j in (0, 1):
            p = minimal_power(other(j), assignment, channels, config)
            if p is None:
                break
            powers.append(p)
        else:
            power = PowerAllocation(tuple(powers))
            obj = objective_value(assignment, power, config)
            if obj < best_obj:
                best, best_obj = (assignment, power), obj
    elapsed = time.perf_counter() - start
    if best is None:
        return SolveReport("infeasible", None, None, math.inf, count, elapsed, count)
    return SolveReport("optimal", best[0], best[1], best_obj, count, elapsed, count)
