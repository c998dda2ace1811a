"""Stage 1: least-deviation speed/heading maneuvers that separate every pair.

Exact branch-and-bound with two layers:

* heading layer: each aircraft picks one angle from the heading set. Pairwise
  heading compatibility (does any speed pair in the box separate the pair?)
  is precomputed and used for forward checking and a matching lower bound.
* pair layer: once both headings of a pair are fixed, a still-conflicting
  pair is a disjunction of two convex wedges in ``(q_i, q_j)`` space. Whenever
  the current speed QP point violates such a pair we branch on the wedge
  before fixing further headings, so speed bounds prune heading subtrees.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .instances import Aircraft, Instance
from .kinematics import Velocity2, tangent_halfplanes
from .qp import BoxQP, solve_convex_qp

PRUNE_TOL = 1e-9
ROW_TOL = 1e-9
DEFAULT_TIME_LIMIT = 300.0

SEPARATED, CONDITIONAL, INCOMPATIBLE = 0, 1, 2


class InfeasibleError(RuntimeError):
    """No maneuver combination separates every pair."""


@dataclass(frozen=True)
class Maneuver:
    heading_index: int
    theta: float
    q: float


@dataclass
class AvoidanceSolution:
    maneuvers: List[Maneuver]
    deviation_costs: List[float]
    objective: float
    optimal: bool
    stats: Dict[str, float] = field(default_factory=dict)

    def velocities(self, instance: Instance) -> List[Velocity2]:
        return [heading_velocity(a, m) for a, m in zip(instance.aircraft, self.maneuvers)]

    def to_dict(self, instance: Instance) -> dict:
        return {
            "aircraft": [
                {"id": a.id, "q": m.q, "theta_deg": math.degrees(m.theta), "a_star": c}
                for a, m, c in zip(instance.aircraft, self.maneuvers, self.deviation_costs)
            ],
            "objective": self.objective,
            "optimal": self.optimal,
            "nodes": int(self.stats.get("nodes_explored", 0)),
            "runtime_s": self.stats.get("runtime", 0.0),
        }

    @classmethod
    def from_dict(cls, data: dict, instance: Instance) -> "AvoidanceSolution":
        hs = instance.config.heading_set
        mans = []
        for rec in data["aircraft"]:
            theta = math.radians(rec["theta_deg"])
            k = min(range(len(hs)), key=lambda idx: abs(hs[idx] - theta))
            mans.append(Maneuver(k, hs[k], float(rec["q"])))
        w = instance.config.w
        costs = [deviation_cost(m.q, m.theta, w) for m in mans]
        return cls(mans, costs, sum(costs), bool(data.get("optimal", False)),
                   {"nodes_explored": data.get("nodes", 0), "runtime": data.get("runtime_s", 0.0)})


def heading_velocity(aircraft: Aircraft, maneuver: Maneuver) -> Velocity2:
    hdg = aircraft.initial_heading + maneuver.theta
    s = maneuver.q * aircraft.nominal_speed
    return Velocity2(s * math.cos(hdg), s * math.sin(hdg))


def deviation_cost(q: float, theta: float, w: float) -> float:
    return w * (1.0 - q) ** 2 + (1.0 - w) * theta ** 2


def _unit_velocity(aircraft: Aircraft, theta: float) -> np.ndarray:
    hdg = aircraft.initial_heading + theta
    return aircraft.nominal_speed * np.array([math.cos(hdg), math.sin(hdg)])


def pair_branch_constraints(instance: Instance, i: int, j: int, theta_i: float, theta_j: float,
                            branch: str) -> List[Tuple[float, float]]:
    """Rows ``(c_i, c_j)`` meaning ``c_i*q_i + c_j*q_j <= 0`` for one wedge."""
    ai, aj = instance.aircraft[i], instance.aircraft[j]
    disj = tangent_halfplanes(ai.origin - aj.origin, instance.config.d)
    ui, uj = _unit_velocity(ai, theta_i), _unit_velocity(aj, theta_j)
    return [(-float(np.dot(a, ui)), float(np.dot(a, uj))) for a in map(np.asarray, disj.branch_rows(branch))]


def _max_min_over_box(f1, f2, lo: float, hi: float) -> float:
    """max over the square [lo, hi]^2 of min(f1 . q, f2 . q)."""
    cands = [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]
    dx, dy = f1[0] - f2[0], f1[1] - f2[1]
    # points on the box edges where the two linear pieces cross
    if abs(dy) > 1e-15:
        for x in (lo, hi):
            y = -dx * x / dy
            if lo <= y <= hi:
                cands.append((x, y))
    if abs(dx) > 1e-15:
        for y in (lo, hi):
            x = -dy * y / dx
            if lo <= x <= hi:
                cands.append((x, y))
    return max(min(f1[0] * x + f1[1] * y, f2[0] * x + f2[1] * y) for x, y in cands)


class _PairTable:
    """Heading-pair classification and q-space wedge rows for one aircraft pair."""

    def __init__(self, instance: Instance, i: int, j: int, units: np.ndarray):
        cfg = instance.config
        ai, aj = instance.aircraft[i], instance.aircraft[j]
        disj = tangent_halfplanes(ai.origin - aj.origin, cfg.d)
        K = len(cfg.heading_set)
        lo, hi = cfg.q_min, cfg.q_max
        scale = max(ai.nominal_speed, aj.nominal_speed)
        # rows[b] : 2 x 2 array of v-space normals (>= 0) for branch b
        vrows = [np.array(disj.branch_rows(br)) for br in ("lower", "upper")]
        nu = np.array(disj.upper)
        nl = -np.array(disj.lower)
        self.status = np.zeros((K, K), dtype=np.int8)
        self.branches: Dict[Tuple[int, int], List[np.ndarray]] = {}
        self.conflict_margin = np.zeros((K, K))
        for k in range(K):
            ui = units[i, k]
            for l in range(K):
                uj = units[j, l]
                # linear functions of (q_i, q_j): a . (q_i ui - q_j uj)
                g_u = (nu @ ui, -(nu @ uj))
                g_l = (nl @ ui, -(nl @ uj))
                margin = _max_min_over_box((-g_u[0], -g_u[1]), (-g_l[0], -g_l[1]), lo, hi)
                self.conflict_margin[k, l] = margin
                if margin <= 1e-9 * scale:
                    self.status[k, l] = SEPARATED
                    continue
                feas = []
                for rows in vrows:
                    f = [(r @ ui, -(r @ uj)) for r in rows]
                    if _max_min_over_box(f[0], f[1], lo, hi) >= -1e-12 * scale:
                        # stored as <= rows: -f . q <= 0
                        feas.append(-np.array(f))
                if feas:
                    self.status[k, l] = CONDITIONAL
                    self.branches[(k, l)] = feas
                else:
                    self.status[k, l] = INCOMPATIBLE


class AvoidanceSolver:
    def __init__(self, instance: Instance, time_limit: float = DEFAULT_TIME_LIMIT):
        self.instance = instance
        self.time_limit = time_limit
        cfg = instance.config
        self.n = len(instance)
        self.headings = np.asarray(cfg.heading_set, dtype=float)
        self.K = len(self.headings)
        self.w = cfg.w
        self.hcost = (1.0 - cfg.w) * self.headings ** 2
        # try smaller deviations first; positive before negative on ties
        self.heading_order = sorted(range(self.K), key=lambda k: (abs(self.headings[k]), -self.headings[k]))
        self.units = np.array([[_unit_velocity(a, th) for th in self.headings] for a in instance.aircraft])
        self.pairs = list(itertools.combinations(range(self.n), 2))
        self.tables = {p: _PairTable(instance, p[0], p[1], self.units) for p in self.pairs}
        self.pair_I = np.array([p[0] for p in self.pairs], dtype=int)
        self.pair_J = np.array([p[1] for p in self.pairs], dtype=int)
        if self.pairs:
            self.compat = np.array([self.tables[p].status != INCOMPATIBLE for p in self.pairs])
        else:
            self.compat = np.zeros((0, self.K, self.K), dtype=bool)
        self.pair_cost = self.hcost[:, None] + self.hcost[None, :]
        self.zero_k = int(np.argmin(np.abs(self.headings)))
        degree = np.zeros(self.n, dtype=int)
        for (i, j), tab in self.tables.items():
            if tab.status[self.zero_k, self.zero_k] != SEPARATED:
                degree[i] += 1
                degree[j] += 1
        self.order = sorted(range(self.n), key=lambda i: (-degree[i], i))
        self.nodes = 0
        self.qp_solves = 0
        self.best_obj = math.inf
        self.best_key = None
        self.best: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self.timed_out = False
        self._deadline = math.inf
        self._memo: Dict[tuple, Tuple[float, Optional[np.ndarray]]] = {}
        self._feasible: Dict[tuple, bool] = {}

    # ------------------------------------------------------------ heading layer

    def _lower_bound(self, assigned: np.ndarray, domains: np.ndarray) -> float:
        un = assigned < 0
        masked = np.where(domains, self.hcost[None, :], np.inf)
        mins = masked.min(axis=1)
        lb = float(np.sum(mins[un]))
        if not np.isfinite(lb):
            return math.inf
        sel = un[self.pair_I] & un[self.pair_J]
        if not np.any(sel):
            return lb
        I, J = self.pair_I[sel], self.pair_J[sel]
        M = domains[I][:, :, None] & domains[J][:, None, :] & self.compat[sel]
        pc = np.where(M, self.pair_cost[None], np.inf).min(axis=(1, 2))
        if not np.all(np.isfinite(pc)):
            return math.inf
        excess = pc - mins[I] - mins[J]
        pos = np.nonzero(excess > 1e-15)[0]
        if len(pos):
            used = np.zeros(self.n, dtype=bool)
            for e in pos[np.argsort(-excess[pos], kind="stable")]:
                a, b = I[e], J[e]
                if not used[a] and not used[b]:
                    used[a] = used[b] = True
                    lb += float(excess[e])
        return lb

    def _search(self, depth: int, assigned: np.ndarray, domains: np.ndarray, hsum: float) -> None:
        if time.perf_counter() > self._deadline:
            self.timed_out = True
            return
        self.nodes += 1
        if depth == self.n:
            self._solve_leaf(assigned, hsum)
            return
        if self._lower_bound(assigned, domains) >= self.best_obj - PRUNE_TOL:
            return
        i = self.order[depth]
        others = self.order[depth + 1:]
        for k in self.heading_order:
            if not domains[i, k]:
                continue
            if hsum + self.hcost[k] >= self.best_obj - PRUNE_TOL:
                continue
            nd = domains.copy()
            ok = True
            for j in others:
                tab = self.tables[(i, j)] if i < j else self.tables[(j, i)]
                col = tab.status[k, :] if i < j else tab.status[:, k]
                nd[j] &= col != INCOMPATIBLE
                if not nd[j].any():
                    ok = False
                    break
            if not ok:
                continue
            assigned[i] = k
            if not self._partial_feasible(i, assigned):
                assigned[i] = -1
                if self.timed_out:
                    return
                continue
            nd[i] = False
            nd[i, k] = True
            self._search(depth + 1, assigned, nd, hsum + self.hcost[k])
            assigned[i] = -1
            if self.timed_out:
                return

    # ------------------------------------------------------------ speed layer

    def _solve_leaf(self, assigned: np.ndarray, hsum: float) -> None:
        cond = []
        for p in self.pairs:
            st = self.tables[p].status[assigned[p[0]], assigned[p[1]]]
            if st == INCOMPATIBLE:
                return
            if st == CONDITIONAL:
                cond.append(p)
        q = np.ones(self.n)
        total = 0.0
        comps = list(_components(self.n, cond))
        lookups = [self._lookup(vars_, pairs, assigned) for vars_, pairs in comps]
        known = sum(hit[0] for hit, _, _ in lookups if hit is not None)
        if hsum + known >= self.best_obj - PRUNE_TOL:
            return
        for idx, ((vars_, pairs), (hit, order, key)) in enumerate(zip(comps, lookups)):
            rest_lb = sum(h[0] for h, _, _ in lookups[idx + 1:] if h is not None)
            budget = self.best_obj - hsum - total - rest_lb
            if hit is not None and hit[1] is not None:
                obj, qc = hit
            elif hit is not None and hit[0] >= budget - PRUNE_TOL:
                return
            else:
                res = self._solve_component(order, pairs, assigned, budget)
                if self.timed_out:
                    return
                if res is None:
                    # the component optimum is at least the budget
                    prev = hit[0] if hit is not None else 0.0
                    self._memo[key] = (max(prev, budget - PRUNE_TOL), None)
                    return
                self._memo[key] = res
                obj, qc = res
            total += obj
            q[order] = qc
        self._accept(assigned, hsum, q, total)

    def _component_rows(self, order: List[int], pairs, assigned):
        local = {v: idx for idx, v in enumerate(order)}
        out = []
        for i, j in pairs:
            brs = self.tables[(i, j)].branches[(assigned[i], assigned[j])]
            a, b = local[i], local[j]
            if a > b:
                a, b = b, a
                brs = [br[:, ::-1] for br in brs]
            out.append((a, b, brs))
        return out

    def _memo_key(self, rows) -> tuple:
        return (len(rows),) + tuple(sorted(
            (a, b, tuple(sorted(tuple(np.round(br, 6).ravel().tolist()) for br in brs)))
            for a, b, brs in rows))

    def _lookup(self, vars_: List[int], pairs, assigned):
        """Memo hit for a component, trying rotations/reflections of its order.

        Rigid rotations and reflections of a configuration leave the q-space
        rows unchanged, so symmetric components share one cached optimum.
        Returns ``(hit, order, key)`` where ``order`` maps cache slots to
        aircraft indices; cached speeds are re-checked against the real rows.
        """
        base = list(vars_)
        base_key = self._memo_key(self._component_rows(base, pairs, assigned))
        hit = self._memo.get(base_key)
        if hit is not None:
            return hit, base, base_key
        m = len(base)
        for rev in (False, True):
            seq = base[::-1] if rev else base
            for shift in range(m):
                order = seq[shift:] + seq[:shift]
                if order == base:
                    continue
                rows = self._component_rows(order, pairs, assigned)
                key = self._memo_key(rows)
                hit = self._memo.get(key)
                if hit is None:
                    continue
                if hit[1] is not None and not _satisfies(rows, hit[1]):
                    continue
                return hit, order, key
        return None, base, base_key

    def _solve_component(self, order: List[int], pairs: List[Tuple[int, int]], assigned, budget):
        """Exact speed optimum of one component, or None if it cannot beat ``budget``.

        Every wedge row ``c_a q_a + c_b q_b <= 0`` is a bound on the ratio
        ``q_a / q_b``, i.e. a difference constraint on ``log q``. Branches are
        pruned by shortest-path consistency (unit propagation over the
        disjunctions) before the speed QP is consulted for bounds.
        """
        cfg = self.instance.config
        m = len(order)
        ws = _WedgeSet(self._disjunctions(order, pairs, assigned))
        best = [budget, None]

        def relax(rows, warm):
            self.qp_solves += 1
            return solve_convex_qp(BoxQP(m, self.w, cfg.q_min, cfg.q_max, list(rows)), certify=False, warm=warm)

        # rows only ever grow along a branch, so any ancestor's QP state is a valid warm start
        def dfs(D, rows, live, open_mask, warm=None):
            if time.perf_counter() > self._deadline:
                self.timed_out = True
                return
            state = ws.propagate(D, live, open_mask)
            if state is None:
                return
            D, live, open_mask, forced = state
            for k in forced:
                rows = rows + ws.rows[k]
            open_pairs = np.nonzero(open_mask)[0]
            if best[1] is None and not math.isfinite(best[0]) and len(open_pairs):
                # no incumbent yet: dive on consistency alone
                p = open_pairs[0]
                for k in ws.options(p, live):
                    D2 = D.copy()
                    if _add_edges(D2, ws.edges[k]):
                        dfs(D2, rows + ws.rows[k], live, _without(open_mask, p), warm)
                    if self.timed_out:
                        return
                return
            sol = relax(rows, warm)
            if not sol.optimal or sol.objective >= best[0] - PRUNE_TOL:
                return
            viol = ws.option_violation(sol.q)
            pick, worst = -1, ROW_TOL
            if len(open_pairs):
                pair_viol = ws.pair_min(np.where(live, viol, np.inf))
                p = int(open_pairs[np.argmax(pair_viol[open_pairs])])
                if pair_viol[p] > worst:
                    pick = p
            if pick < 0:
                best[0], best[1] = sol.objective, sol.q
                return
            ks = ws.options(pick, live)
            for k in sorted(ks, key=lambda k: viol[k]):
                D2 = D.copy()
                if _add_edges(D2, ws.edges[k]):
                    dfs(D2, rows + ws.rows[k], live, _without(open_mask, pick), sol.state)
                if self.timed_out:
                    return

        dfs(_box_matrix(m, cfg.q_min, cfg.q_max), [], ws.all_live(), ws.all_open())
        if best[1] is None:
            return None
        return best[0], best[1]

    def _disjunctions(self, order: List[int], pairs, assigned):
        """Per pair ``(a, b, [(edges, rows), ...])`` in local indices, one entry per wedge."""
        local = {v: idx for idx, v in enumerate(order)}
        m = len(order)
        out = []
        for (i, j) in pairs:
            a, b = local[i], local[j]
            opts = []
            for br in self.tables[(i, j)].branches[(assigned[i], assigned[j])]:
                edges = _ratio_edges(a, b, br)
                if edges is not None:
                    opts.append((edges, [(_row_vec(m, a, b, r), 0.0) for r in br]))
            out.append((a, b, opts))
        return out

    def _partial_feasible(self, i: int, assigned: np.ndarray) -> bool:
        """Can the assigned aircraft connected to ``i`` still be separated by speed alone?

        Only conditional pairs among already-assigned aircraft are considered;
        a negative answer holds for every completion of the heading assignment.
        """
        comp, pairs, stack = {i}, set(), [i]
        while stack:
            u = stack.pop()
            for v in range(self.n):
                if v == u or assigned[v] < 0:
                    continue
                p = (u, v) if u < v else (v, u)
                if self.tables[p].status[assigned[p[0]], assigned[p[1]]] != CONDITIONAL:
                    continue
                pairs.add(p)
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        pairs = sorted(pairs)
        if len(pairs) < 2:
            return True
        order = sorted(comp)
        key = self._memo_key(self._component_rows(order, pairs, assigned))
        hit = self._feasible.get(key)
        if hit is None:
            cfg = self.instance.config
            ws = _WedgeSet(self._disjunctions(order, pairs, assigned))
            hit = _dtp_feasible(ws, _box_matrix(len(order), cfg.q_min, cfg.q_max), ws.all_live(), ws.all_open(),
                                self._deadline)
            if hit is None:
                self.timed_out = True
                return False
            self._feasible[key] = hit
        return hit

    def _accept(self, assigned: np.ndarray, hsum: float, q: np.ndarray, qobj: float) -> None:
        obj = hsum + qobj
        theta_abs = tuple(abs(self.headings[assigned[i]]) for i in range(self.n))
        key = (theta_abs, tuple(abs(1.0 - x) for x in q))
        if obj < self.best_obj - PRUNE_TOL or (
                abs(obj - self.best_obj) <= PRUNE_TOL and self.best_key is not None and key < self.best_key):
            self.best_obj = obj
            self.best_key = key
            self.best = (assigned.copy(), q.copy())

    # ------------------------------------------------------------ driver

    def solve(self) -> AvoidanceSolution:
        start = time.perf_counter()
        self._deadline = start + self.time_limit
        assigned = -np.ones(self.n, dtype=int)
        domains = np.ones((self.n, self.K), dtype=bool)
        if self.n:
            self._search(0, assigned, domains, 0.0)
        else:
            self.best_obj, self.best = 0.0, (assigned, np.ones(0))
        runtime = time.perf_counter() - start
        if self.best is None:
            if self.timed_out:
                raise InfeasibleError(f"no feasible maneuver found within {self.time_limit:g} s")
            raise InfeasibleError("no heading/speed combination separates all pairs")
        hidx, q = self.best
        mans = [Maneuver(int(k), float(self.headings[k]), float(np.clip(qq, self.instance.config.q_min,
                                                                          self.instance.config.q_max)))
                for k, qq in zip(hidx, q)]
        costs = [deviation_cost(m.q, m.theta, self.w) for m in mans]
        return AvoidanceSolution(
            mans, costs, float(sum(costs)), not self.timed_out,
            {"nodes_explored": self.nodes, "qp_solves": self.qp_solves, "runtime": runtime},
        )


RATIO_TOL = 1e-12
CYCLE_TOL = 1e-12


def _row_vec(m: int, a: int, b: int, r) -> np.ndarray:
    vec = np.zeros(m)
    vec[a] += r[0]
    vec[b] += r[1]
    return vec


def _ratio_edges(a: int, b: int, rows) -> Optional[List[Tuple[int, int, float]]]:
    """Difference-constraint edges for a wedge, or None if no positive q fits.

    Edge ``(u, v, w)`` means ``log q_v - log q_u <= w``; node 0 is the
    reference and variable ``k`` is node ``k + 1``.
    """
    edges = []
    for ca, cb in rows:
        scale = max(abs(ca), abs(cb), 1.0)
        ca_pos, cb_pos = ca > RATIO_TOL * scale, cb > RATIO_TOL * scale
        ca_neg, cb_neg = ca < -RATIO_TOL * scale, cb < -RATIO_TOL * scale
        if ca_pos and cb_neg:
            edges.append((b + 1, a + 1, math.log(-cb / ca)))
        elif cb_pos and ca_neg:
            edges.append((a + 1, b + 1, math.log(-ca / cb)))
        elif ca_pos or cb_pos:
            return None
    return edges


def _consistent(D: np.ndarray, edges) -> bool:
    return all(w + D[v, u] >= -CYCLE_TOL for u, v, w in edges)


def _entailed(D: np.ndarray, edges) -> bool:
    return all(D[u, v] <= w for u, v, w in edges)


def _add_edges(D: np.ndarray, edges) -> bool:
    """Tighten the shortest-path matrix in place; False on a negative cycle."""
    for u, v, w in edges:
        if w + D[v, u] < -CYCLE_TOL:
            return False
        if D[u, v] <= w:
            continue
        np.minimum(D, D[:, u:u + 1] + w + D[v:v + 1, :], out=D)
    return True


def _box_matrix(m: int, q_min: float, q_max: float) -> np.ndarray:
    """Shortest-path matrix of the speed box alone (node 0 is the reference)."""
    lo, hi = math.log(q_min), math.log(q_max)
    D = np.full((m + 1, m + 1), hi - lo)
    D[0, :] = hi
    D[:, 0] = -lo
    np.fill_diagonal(D, 0.0)
    return D


class _WedgeSet:
    """Flattened wedge disjunctions of one component.

    Option ``k`` is one wedge of pair ``pair[k]`` with difference edges
    ``edges[k]`` and QP rows ``rows[k]``. Search state is a boolean mask of
    still-consistent options plus a mask of pairs not yet decided.
    """

    def __init__(self, disjunctions):
        self.n_pairs = len(disjunctions)
        self.edges, self.rows, pair = [], [], []
        U, V, W, opt_of = [], [], [], []
        RA, RB, IA, IB, row_of = [], [], [], [], []
        for p, (a, b, opts) in enumerate(disjunctions):
            for edges, rows in opts:
                k = len(self.edges)
                for u, v, w in edges:
                    U.append(u)
                    V.append(v)
                    W.append(w)
                    opt_of.append(k)
                for vec, _ in rows:
                    RA.append(vec[a])
                    RB.append(vec[b])
                    IA.append(a)
                    IB.append(b)
                    row_of.append(k)
                self.edges.append(edges)
                self.rows.append(list(rows))
                pair.append(p)
        self.pair = np.array(pair, dtype=int)
        self.U, self.V = np.array(U, dtype=int), np.array(V, dtype=int)
        self.W, self.opt_of = np.array(W, dtype=float), np.array(opt_of, dtype=int)
        self.RA, self.RB = np.array(RA, dtype=float), np.array(RB, dtype=float)
        self.IA, self.IB = np.array(IA, dtype=int), np.array(IB, dtype=int)
        self.row_of = np.array(row_of, dtype=int)
        self.K = len(self.edges)

    def all_live(self) -> np.ndarray:
        return np.ones(self.K, dtype=bool)

    def all_open(self) -> np.ndarray:
        return np.ones(self.n_pairs, dtype=bool)

    def options(self, p: int, live: np.ndarray) -> List[int]:
        return [int(k) for k in np.nonzero(live & (self.pair == p))[0]]

    def pair_min(self, per_option: np.ndarray) -> np.ndarray:
        out = np.full(self.n_pairs, np.inf)
        np.minimum.at(out, self.pair, per_option)
        return out

    def option_violation(self, q: np.ndarray) -> np.ndarray:
        """Largest row value of each option at ``q`` (<= 0 means satisfied)."""
        vals = self.RA * q[self.IA] + self.RB * q[self.IB]
        out = np.full(self.K, -np.inf)
        np.maximum.at(out, self.row_of, vals)
        return out

    def propagate(self, D: np.ndarray, live: np.ndarray, open_mask: np.ndarray):
        """Unit propagation to a fixpoint.

        Returns ``(D, live, open_mask, forced)`` with copies of the inputs and
        the options forced along the way, or None if some open pair has no
        consistent wedge left.
        """
        D, live, open_mask = D.copy(), live.copy(), open_mask.copy()
        forced: List[int] = []
        if not open_mask.any():
            return D, live, open_mask, forced
        K, P = self.K, self.n_pairs
        while True:
            broken = np.bincount(self.opt_of, weights=self.W + D[self.V, self.U] < -CYCLE_TOL, minlength=K) > 0
            loose = np.bincount(self.opt_of, weights=D[self.U, self.V] > self.W, minlength=K) > 0
            live &= ~broken
            n_live = np.bincount(self.pair, weights=live, minlength=P)
            if np.any(open_mask & (n_live == 0)):
                return None
            # a pair is settled once one of its wedges is implied
            open_mask &= np.bincount(self.pair, weights=live & ~loose, minlength=P) == 0
            unit = np.nonzero(open_mask & (n_live == 1))[0]
            if len(unit) == 0:
                return D, live, open_mask, forced
            for p in unit:
                k = self.options(p, live)[0]
                if not _add_edges(D, self.edges[k]):
                    return None
                forced.append(k)
                open_mask[p] = False


def _without(mask: np.ndarray, p: int) -> np.ndarray:
    out = mask.copy()
    out[p] = False
    return out


def _dtp_feasible(ws: _WedgeSet, D: np.ndarray, live: np.ndarray, open_mask: np.ndarray,
                  deadline: float) -> Optional[bool]:
    """Does some wedge choice per pair admit speeds in the box? None on timeout."""
    if time.perf_counter() > deadline:
        return None
    state = ws.propagate(D, live, open_mask)
    if state is None:
        return False
    D, live, open_mask, _ = state
    open_pairs = np.nonzero(open_mask)[0]
    if not len(open_pairs):
        return True
    p = int(open_pairs[0])
    for k in ws.options(p, live):
        D2 = D.copy()
        if _add_edges(D2, ws.edges[k]):
            res = _dtp_feasible(ws, D2, live, _without(open_mask, p), deadline)
            if res is None or res:
                return res
    return False


def _satisfies(rows, q: np.ndarray, tol: float = 1e-7) -> bool:
    for a, b, brs in rows:
        qa = np.array([q[a], q[b]])
        if min(float(np.max(br @ qa)) for br in brs) > tol:
            return False
    return True


def _components(n: int, pairs: Sequence[Tuple[int, int]]):
    """Connected components ``(vertices, pairs)`` of the conflict graph, edges only."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in pairs:
        parent[find(i)] = find(j)
    groups: Dict[int, Tuple[List[int], List[Tuple[int, int]]]] = {}
    for p in pairs:
        groups.setdefault(find(p[0]), ([], []))[1].append(p)
    for v in range(n):
        g = groups.get(find(v))
        if g is not None:
            g[0].append(v)
    for root in sorted(groups, key=lambda r: groups[r][0][0]):
        yield groups[root]


def solve_avoidance(instance: Instance, time_limit: float = DEFAULT_TIME_LIMIT) -> AvoidanceSolution:
    return AvoidanceSolver(instance, time_limit).solve()
