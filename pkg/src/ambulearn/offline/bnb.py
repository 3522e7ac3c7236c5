"""Branch-and-bound core of the offline solver.

The search mirrors the event engine exactly but defers redeployments. After a
completion with an empty queue, the ambulance becomes *floating*: its waiting
location only matters through its arrival at the next emergency it serves, so
the location is branched on at that dispatch, one child per distinct arrival
time (smallest index among equal arrivals). Picking the closest station is
not enough: an earlier completion can hand the ambulance a queued request
under forced first-come-first-served service and change everything after.
An ambulance never used again takes the smallest admissible index.
Children are searched in increasing order of their bound.

Decision keys follow the engine's epoch order. Redeployment slots stay at 0
until they are resolved, which makes a partial key a lexicographic lower
bound on every completion and lets ties be pruned by key.
"""
from __future__ import annotations

import math

import numpy as np

from ..core import travel_time
from ..kernels import max_weight_assignment

TOL = 1e-6
INF = math.inf
BIG = 1e9


class Budget(Exception):
    pass


class _Node:
    __slots__ = ("clock", "cursor", "queue", "ambs", "total", "served", "key", "dead")

    def __init__(self, clock, cursor, queue, ambs, total, served, key, dead=False):
        self.clock = clock
        self.cursor = cursor
        self.queue = queue
        self.ambs = ambs
        self.total = total
        self.served = served
        self.key = key
        self.dead = dead


# ambulance tuple layout
BUSY, FREE, POS, VERT, FLOAT = range(5)


class BranchAndBound:
    def __init__(self, sim, root, gamma=None, node_limit=None):
        self.sim = sim
        self.gamma = gamma
        self.soft = gamma is not None
        self.node_limit = node_limit
        self.nodes = 0
        self.best = INF
        self.best_key = None
        self.upper = INF
        sc = sim.scenario
        self.fleet = sc.fleet_size
        self.arc = sim.arc_filter
        reqs = sim.requests
        self.reqs = reqs
        self.n = len(reqs)
        self.index = {r.id: i for i, r in enumerate(reqs)}

        pts, where = [], {}

        def pid(loc):
            if loc not in where:
                where[loc] = len(pts)
                pts.append(loc)
            return where[loc]

        self.W = [pid(w) for w in sc.waiting_locations]
        self.org = [pid(r.origin) for r in reqs]
        self.drop = [pid(r.dropoff) for r in reqs]
        self.e = [r.entry_time for r in reqs]
        self.s = [r.service_time for r in reqs]
        self.starts = {pid(a.position) for a in root.ambulances}
        speed = sc.speed_kmh
        self.T = [[travel_time(p, q, speed) for q in pts] for p in pts]
        self.pid = pid
        self._ks_cache = {}
        self._static_bounds()
        self.Tn = np.array(self.T, dtype=float).reshape(len(pts), len(pts))
        self.Wn = np.array(self.W, dtype=np.intp)
        self.en = np.array(self.e, dtype=float)
        self.on = np.array(self.org, dtype=np.intp)
        self.dn = np.array(self.drop, dtype=np.intp)
        self.sn = np.array(self.s, dtype=float)
        self.vian = np.array(self.via, dtype=float).reshape(self.n, self.n)
        self.vian[~np.isfinite(self.vian)] = BIG
        self.root = self._from_state(root)

    # -- precomputation ---------------------------------------------------
    def _static_bounds(self):
        T, W, n = self.T, self.W, self.n
        sources = set(W) | self.starts
        self.floor = []
        for j in range(n):
            o = self.org[j]
            self.floor.append(min(T[x][o] for x in sources | {self.drop[i] for i in range(j)}))
        # via[i][j]: cheapest response to j for an ambulance that served i first
        self.via = [[INF] * n for _ in range(n)]
        for i in range(n):
            c = self.e[i] + self.floor[i] + self.s[i]
            d = self.drop[i]
            for j in range(i + 1, n):
                self.via[i][j] = self._after(c, d, j, forced=False)
        # rmin[c][j] = min over c <= i < j of via[i][j]
        self.rmin = [[INF] * (n + 1) for _ in range(n + 1)]
        for j in range(n):
            run = INF
            for c in range(j - 1, -1, -1):
                run = min(run, self.via[c][j])
                self.rmin[c][j] = run

    def _after(self, f, d, j, forced):
        """Least response to ``j`` by an ambulance freed at time ``f`` at ``d``."""
        T, e, o = self.T, self.e[j], self.org[j]
        best = max(f, e) + T[d][o]
        if not forced:
            for k in self.W:
                v = max(f + T[d][k], e) + T[k][o]
                if v < best:
                    best = v
        return best - e

    def _ks(self, parent):
        ks = self._ks_cache.get(parent)
        if ks is None:
            ok = self.arc
            ks = [k for k in range(len(self.W))
                  if ok is None or ok(("e", parent), ("w", parent, k))]
            self._ks_cache[parent] = ks
        return ks

    def _from_state(self, st):
        ambs = []
        key = []
        for a in st.ambulances:
            fl = None
            if st.batch and not st.is_dispatch_epoch and st.decider == a.id:
                fl = (st.clock, self.pid(a.position), a.vertex[1], 0)
                key.append(0)
            ambs.append((a.busy, a.free_at, self.pid(a.position), a.vertex, fl))
        queue = tuple(self.index[r.id] for r in st.queue)
        node = _Node(st.clock, st.cursor, queue, tuple(ambs), st.total_response, st.served,
                     tuple(key))
        if st.batch and st.is_dispatch_epoch:
            node.cursor = self.index[st.batch[0].id]
            return self._advance(node)
        if st.batch and not self._ks(ambs[st.decider][VERT][1]):
            node.dead = True
            return node
        return self._advance(node)

    # -- transition -------------------------------------------------------
    def _advance(self, nd):
        """Run events up to the next arrival that needs a decision."""
        ambs = list(nd.ambs)
        queue, cursor, total, served, key = nd.queue, nd.cursor, nd.total, nd.served, nd.key
        n, T = self.n, self.T
        while True:
            te = self.e[cursor] if cursor < n else INF
            tf, m = INF, -1
            for a_id, a in enumerate(ambs):
                if a[BUSY] and a[FREE] < tf:
                    tf, m = a[FREE], a_id
            if te == INF and tf == INF:
                return _Node(nd.clock, cursor, queue, tuple(ambs), total, served, key)
            if te <= tf:
                if self.soft or any(not a[BUSY] for a in ambs):
                    return _Node(te, cursor, queue, tuple(ambs), total, served, key)
                queue = queue + (cursor,)
                cursor += 1
                continue
            a = ambs[m]
            if queue:
                j, queue = queue[0], queue[1:]
                r = self.reqs[j]
                if self.arc is not None and not self.arc(a[VERT], ("e", r.id)):
                    return _Node(tf, cursor, queue, tuple(ambs), total, served, key, dead=True)
                arrival = max(a[FREE], self.e[j]) + T[a[POS]][self.org[j]]
                total += arrival - self.e[j]
                served += 1
                ambs[m] = (True, arrival + self.s[j], self.drop[j], ("e", r.id), None)
                continue
            parent = a[VERT][1]
            if not self._ks(parent):
                return _Node(tf, cursor, queue, tuple(ambs), total, served, key, dead=True)
            ambs[m] = (False, tf, a[POS], a[VERT], (tf, a[POS], parent, len(key)))
            key = key + (0,)

    def _stations(self, fl, j):
        """Admissible waiting locations for a floating ambulance sent to
        ``j`` as ``(arrival, k)`` pairs, one per distinct arrival time
        (smallest index kept), sorted by index."""
        tf, d, parent, _ = fl
        r_id = self.reqs[j].id
        ok = self.arc
        T, W, e, o = self.T, self.W, self.e[j], self.org[j]
        opts = []
        for k in self._ks(parent):
            if ok is not None and not ok(("w", parent, k), ("e", r_id)):
                continue
            v = max(tf + T[d][W[k]], e) + T[W[k]][o]
            if all(abs(v - u) > TOL for u, _ in opts):
                opts.append((v, k))
        return opts

    def children(self, nd):
        """(canonical rank, child) pairs at an arrival epoch."""
        j = nd.cursor
        r = self.reqs[j]
        out = []
        if self.soft:
            out.append(((-1, 0), _Node(nd.clock, j + 1, nd.queue, nd.ambs, nd.total, nd.served,
                                  nd.key + (-1,))))
        idle = False
        for a_id, a in enumerate(nd.ambs):
            if a[BUSY]:
                continue
            idle = True
            if a[FLOAT] is None:
                if self.arc is not None and not self.arc(a[VERT], ("e", r.id)):
                    continue
                arrival = max(a[FREE], self.e[j]) + self.T[a[POS]][self.org[j]]
                opts = [(arrival, None)]
            else:
                opts = self._stations(a[FLOAT], j)
            for arrival, k in opts:
                key = nd.key
                if k is not None:
                    slot = a[FLOAT][3]
                    key = key[:slot] + (k,) + key[slot + 1:]
                ambs = list(nd.ambs)
                ambs[a_id] = (True, arrival + self.s[j], self.drop[j], ("e", r.id), None)
                out.append(((a_id, k or 0), _Node(nd.clock, j + 1, nd.queue, tuple(ambs),
                                                  nd.total + (arrival - self.e[j]),
                                                  nd.served + 1, key + (a_id,))))
        if self.soft and not idle:
            out.append(((self.fleet, 0), _Node(nd.clock, j + 1, nd.queue + (j,), nd.ambs, nd.total,
                                          nd.served, nd.key + (self.fleet,))))
        return [(rank, self._advance(c)) for rank, c in out]

    def finish(self, nd):
        """Resolve unused redeployments to their smallest admissible index."""
        key = list(nd.key)
        for a in nd.ambs:
            if a[FLOAT] is not None:
                key[a[FLOAT][3]] = self._ks(a[FLOAT][2])[0]
        return tuple(key)

    # -- bounding ---------------------------------------------------------
    def cost(self, nd):
        if self.soft:
            return nd.total - self.gamma * nd.served
        return nd.total

    def _term(self, lb):
        if self.soft:
            return min(0.0, lb - self.gamma)
        return lb

    def bound(self, nd):
        b = self.cost(nd)
        n = self.n
        if nd.cursor >= n and not nd.queue:
            return b
        T, W = self.T, self.W
        pend = list(nd.queue) + list(range(nd.cursor, n))
        early = list(nd.queue)
        if nd.cursor < n:
            early.append(nd.cursor)
        for j in pend:
            floor = self.floor[j]
            e, o = self.e[j], self.org[j]
            lb = self.rmin[nd.cursor][j] if j > nd.cursor else INF
            for i in early:
                if i != j and self.e[i] <= e and self.via[i][j] < lb:
                    lb = self.via[i][j]
            if lb > floor:
                for a in nd.ambs:
                    if a[BUSY]:
                        v = self._after(a[FREE], a[POS], j, forced=False)
                    elif a[FLOAT] is None:
                        v = max(a[FREE], e) + T[a[POS]][o] - e
                    else:
                        tf, d = a[FLOAT][0], a[FLOAT][1]
                        v = INF
                        for k in W:
                            x = max(tf + T[d][k], e) + T[k][o]
                            if x < v:
                                v = x
                        v -= e
                    if v < lb:
                        lb = v
                        if lb <= floor:
                            break
            b += self._term(max(lb, floor))
        return b

    def strong_bound(self, nd):
        """Assignment relaxation: every pending emergency takes a distinct
        predecessor, either an ambulance in its current state or another
        pending emergency that arrived earlier."""
        n = self.n
        pend = np.array(list(nd.queue) + list(range(nd.cursor, n)), dtype=np.intp)
        P = len(pend)
        if P == 0:
            return self.cost(nd)
        M = len(nd.ambs)
        T, W = self.Tn, self.Wn
        e = self.en[pend]
        o = self.on[pend]
        C = np.empty((P, M + P))
        TWo = T[np.ix_(W, o)]  # (L, P)
        for a_id, a in enumerate(nd.ambs):
            if a[BUSY]:
                f, d = a[FREE], a[POS]
                col = np.maximum(f, e) + T[d, o]
                red = (np.maximum(f + T[d, W][:, None], e[None, :]) + TWo).min(axis=0)
                col = np.minimum(col, red)
            elif a[FLOAT] is None:
                col = np.maximum(a[FREE], e) + T[a[POS], o]
            else:
                tf, d = a[FLOAT][0], a[FLOAT][1]
                col = (np.maximum(tf + T[d, W][:, None], e[None, :]) + TWo).min(axis=0)
            C[:, a_id] = col - e
        # predecessor block with completion times from each row's own bound
        lb = C[:, :M].min(axis=1)
        dp = self.dn[pend]
        TdW = T[np.ix_(dp, W)]  # (P, L)
        Tdo = T[np.ix_(dp, o)]  # (P, P)
        sp = self.sn[pend]
        V = np.full((P, P), BIG)
        order = np.argsort(pend, kind="stable")
        for idx in order:
            c = e[idx] + lb[idx] + sp[idx]
            later = pend > pend[idx]
            if not later.any():
                continue
            el = e[later]
            direct = np.maximum(c, el) + Tdo[idx, later]
            red = (np.maximum(c + TdW[idx][:, None], el[None, :]) + TWo[:, later]).min(axis=0)
            v = np.minimum(direct, red) - el
            V[idx, later] = v
            lb[later] = np.minimum(lb[later], v)
        C[:, M:] = V.T
        if self.soft:
            C = np.minimum(0.0, C - self.gamma)
            C = np.hstack([C, np.zeros((P, P))])
        size = C.shape[1]
        w = np.zeros((size, size))
        w[:P] = -C
        cols = max_weight_assignment(w)
        return self.cost(nd) + float(C[np.arange(P), cols[:P]].sum())

    # -- search -----------------------------------------------------------
    def _better(self, cost, key):
        if cost < self.best - TOL:
            return True
        return cost <= self.best + TOL and key < self.best_key

    def run(self):
        if not self.root.dead:
            self._dfs(self.root)

    def _dfs(self, nd):
        self.nodes += 1
        if self.node_limit is not None and self.nodes > self.node_limit:
            raise Budget
        if nd.dead:
            return
        if nd.cursor >= self.n and not nd.queue and not any(a[BUSY] for a in nd.ambs):
            key = self.finish(nd)
            c = self.cost(nd)
            if c <= self.upper + TOL and self._better(c, key):
                self.best, self.best_key = c, key
            return
        kids = []
        for rank, ch in self.children(nd):
            if ch.dead:
                continue
            kids.append((self.bound(ch), rank, ch))
        kids.sort(key=lambda t: (t[0], t[1]))
        for b, _, ch in kids:
            if b > self.best + TOL or b > self.upper + TOL:
                break
            if b >= self.best - TOL and ch.key > self.best_key[:len(ch.key)]:
                continue
            b = max(b, self.strong_bound(ch))
            if b > self.best + TOL or b > self.upper + TOL:
                continue
            if b >= self.best - TOL and ch.key > self.best_key[:len(ch.key)]:
                continue
            self._dfs(ch)
