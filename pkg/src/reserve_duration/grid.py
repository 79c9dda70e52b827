"""Radial distribution network and its lossless linear DistFlow constraints.

Conventions: power variables are in kW/kvar, line impedances in per-unit on
``Network.base_kva``, voltages as squared per-unit magnitudes. Injections are
positive into a bus, line flows positive in the direction away from the
root, and the point-of-common-coupling (PCC) power is positive for export.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .milp import EQ, LE, ModelBuilder

# facet normals of a regular octagon inscribed in the circle with vertices on
# the P and Q axes, so rated power is reachable at unity power factor
OCTAGON_ANGLES = np.pi / 8 + np.arange(8) * np.pi / 4
OCTAGON_SCALE = math.cos(math.pi / 8)


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    v_min_sq: float = 0.95 ** 2
    v_max_sq: float = 1.05 ** 2

    def __post_init__(self):
        if not 0 < self.v_min_sq < self.v_max_sq:
            raise NetworkError(f"bus {self.id}: need 0 < v_min_sq < v_max_sq")


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r: float
    x: float
    s_max: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} is a self loop")
        if self.r < 0 or self.x < 0 or self.s_max <= 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus}: need r, x >= 0 and s_max > 0")


@dataclass(frozen=True)
class RadialCheck:
    ok: bool
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    root: str
    base_kva: float = 100.0
    _topology: dict = field(default=None, init=False, repr=False, compare=False)

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    @property
    def bus_index(self) -> dict[str, int]:
        return self.topology["bus_index"]

    @property
    def topology(self) -> dict:
        """Root-oriented tree data: parent line of every bus, children, BFS order."""
        if self._topology is None:
            check = validate_radial(self)
            if not check:
                raise NetworkError(check.message)
            object.__setattr__(self, "_topology", _orient(self))
        return self._topology


def validate_radial(network: Network) -> RadialCheck:
    """Check that the network is a tree rooted at ``network.root``.

    Never raises; the diagnostic names the first cycle found or the buses
    not connected to the root.
    """
    ids = [b.id for b in network.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        return RadialCheck(False, f"duplicate bus ids: {dup}")
    known = set(ids)
    if network.root not in known:
        return RadialCheck(False, f"root bus {network.root!r} does not exist")
    parent = {i: i for i in ids}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    forest: dict[str, list[str]] = {i: [] for i in ids}
    for line in network.lines:
        u, v = line.from_bus, line.to_bus
        for end in (u, v):
            if end not in known:
                return RadialCheck(False, f"line {u}-{v} references unknown bus {end!r}")
        ru, rv = find(u), find(v)
        if ru == rv:
            path = _forest_path(forest, u, v)
            return RadialCheck(False, "cycle: " + " -> ".join(path + [u]))
        parent[ru] = rv
        forest[u].append(v)
        forest[v].append(u)
    root = find(network.root)
    unreached = [i for i in ids if find(i) != root]
    if unreached:
        return RadialCheck(False, f"disconnected component not reachable from root: {unreached}")
    if len(network.lines) != len(ids) - 1:
        return RadialCheck(False, f"{len(network.lines)} lines for {len(ids)} buses; "
                                  f"a radial network needs {len(ids) - 1}")
    return RadialCheck(True, "radial")


def _forest_path(forest: dict[str, list[str]], src: str, dst: str) -> list[str]:
    prev = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if u == dst:
            break
        for w in forest[u]:
            if w not in prev:
                prev[w] = u
                queue.append(w)
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def _orient(network: Network) -> dict:
    bus_index = {b.id: k for k, b in enumerate(network.buses)}
    adj: dict[str, list[tuple[str, int]]] = {b.id: [] for b in network.buses}
    for k, line in enumerate(network.lines):
        adj[line.from_bus].append((line.to_bus, k))
        adj[line.to_bus].append((line.from_bus, k))
    parent_line: dict[str, int] = {}
    parent_bus: dict[str, str] = {}
    order = [network.root]
    children: dict[str, list[str]] = {b.id: [] for b in network.buses}
    seen = {network.root}
    queue = deque([network.root])
    while queue:
        u = queue.popleft()
        for v, k in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            parent_line[v] = k
            parent_bus[v] = u
            children[u].append(v)
            order.append(v)
            queue.append(v)
    depth = {network.root: 0}
    for b in order[1:]:
        depth[b] = depth[parent_bus[b]] + 1
    return {"bus_index": bus_index, "parent_line": parent_line, "parent_bus": parent_bus,
            "children": children, "order": order, "depth": depth}


@dataclass
class DistFlowBlock:
    """Variable indices of one network state, each shaped ``(n_buses or n_lines, horizon)``.

    Line arrays are indexed by the downstream bus of the line (row of the
    bus in ``network.buses``); the root row is unused and holds ``-1``.
    Steps outside ``steps`` carry no network variables (all ``-1``); there
    the PCC power is tied straight to the device injections.
    """

    state: str
    p_inj: np.ndarray
    q_inj: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    pcc: np.ndarray
    steps: tuple[int, ...] = ()


@dataclass(frozen=True)
class LimitScreen:
    """Which flow and voltage limits may bind, per ``(bus index, step)``.

    ``flow[j, t]`` refers to the line feeding bus ``j``.
    """

    flow: np.ndarray
    volt: np.ndarray

    @property
    def steps(self) -> tuple[int, ...]:
        need = self.flow.any(axis=0) | self.volt.any(axis=0)
        return tuple(int(t) for t in np.flatnonzero(need))


def _box_in_octagon(p_lo, p_hi, q_abs, radius):
    # a box lies inside a convex polygon iff its corners do
    rhs = radius * OCTAGON_SCALE * (1 - 1e-9)
    ok = np.ones(np.shape(p_lo), dtype=bool)
    for ang in OCTAGON_ANGLES:
        c, s = math.cos(ang), math.sin(ang)
        worst = np.maximum(c * p_lo, c * p_hi) + abs(s) * q_abs
        ok &= worst <= rhs
    return ok


def screen_limits(network: Network, p_lo: np.ndarray, p_hi: np.ndarray, q_lo: np.ndarray,
                  q_hi: np.ndarray, flow_limits: bool = True, voltage_limits: bool = True) -> LimitScreen:
    """Interval bound tightening on the lossless flow equations.

    Arguments are per-bus net injection ranges shaped ``(n_buses, horizon)``.
    A limit is marked non-binding when it holds for every injection pattern
    inside the ranges, so dropping it leaves the feasible set unchanged.
    """
    topo = network.topology
    bi = topo["bus_index"]
    nb, horizon = p_lo.shape
    base = network.base_kva
    # subtree sums, leaves first
    sub = {k: np.array(a, dtype=float) for k, a in (("plo", p_lo), ("phi", p_hi), ("qlo", q_lo), ("qhi", q_hi))}
    for bus_id in reversed(topo["order"]):
        if bus_id == network.root:
            continue
        j, i = bi[bus_id], bi[topo["parent_bus"][bus_id]]
        if i != bi[network.root]:
            for arr in sub.values():
                arr[i] += arr[j]
    # flows into j: P = -(subtree injection)
    P_lo, P_hi = -sub["phi"], -sub["plo"]
    Q_lo, Q_hi = -sub["qhi"], -sub["qlo"]
    flow = np.zeros((nb, horizon), dtype=bool)
    volt = np.zeros((nb, horizon), dtype=bool)
    v_lo = np.ones((nb, horizon))
    v_hi = np.ones((nb, horizon))
    for bus_id in topo["order"]:
        if bus_id == network.root:
            continue
        j, i = bi[bus_id], bi[topo["parent_bus"][bus_id]]
        line = network.lines[topo["parent_line"][bus_id]]
        if flow_limits:
            q_abs = np.maximum(np.abs(Q_lo[j]), np.abs(Q_hi[j]))
            flow[j] = ~_box_in_octagon(P_lo[j], P_hi[j], q_abs, line.s_max * base)
        v_lo[j] = v_lo[i] - 2.0 * (line.r * P_hi[j] + line.x * Q_hi[j]) / base
        v_hi[j] = v_hi[i] - 2.0 * (line.r * P_lo[j] + line.x * Q_lo[j]) / base
        if voltage_limits:
            bus = network.buses[j]
            volt[j] = (v_lo[j] < bus.v_min_sq) | (v_hi[j] > bus.v_max_sq)
    return LimitScreen(flow, volt)


def build_distflow_block(mb: ModelBuilder, network: Network, state: str, horizon: int,
                         flow_limits: bool = True, voltage_limits: bool = True,
                         screen: LimitScreen | None = None) -> DistFlowBlock:
    """Emit LinDistFlow rows for one state over ``horizon`` steps.

    Bus injections ``p_inj``/``q_inj`` are left free; the caller ties them to
    devices and loads (see :func:`bind_injections`). With a ``screen``, only
    limits that may bind are emitted and steps where none may bind get no
    network variables at all.
    """
    topo = network.topology
    nb = len(network.buses)
    base = network.base_kva
    if screen is None:
        ones = np.ones((nb, horizon), dtype=bool)
        screen = LimitScreen(ones & flow_limits, ones & voltage_limits)
        steps = tuple(range(horizon))
    else:
        steps = screen.steps
    ns = len(steps)
    p_inj = np.full((nb, horizon), -1, dtype=int)
    q_inj = np.full((nb, horizon), -1, dtype=int)
    v = np.full((nb, horizon), -1, dtype=int)
    P = np.full((nb, horizon), -1, dtype=int)
    Q = np.full((nb, horizon), -1, dtype=int)
    pcc = mb.add_vars(f"{state}.pcc", horizon, -np.inf, np.inf)
    if not ns:
        return DistFlowBlock(state, p_inj, q_inj, P, Q, v, pcc, steps)
    cols = list(steps)

    def at_steps(prefix, lo=-np.inf, hi=np.inf):
        lo = np.broadcast_to(lo, (ns,))
        hi = np.broadcast_to(hi, (ns,))
        return [mb.add_var(f"{prefix}[{t}]", lo[n], hi[n]) for n, t in enumerate(steps)]

    for k, bus in enumerate(network.buses):
        p_inj[k, cols] = at_steps(f"{state}.p_inj.{bus.id}")
        q_inj[k, cols] = at_steps(f"{state}.q_inj.{bus.id}")
        if bus.id == network.root:
            v[k, cols] = at_steps(f"{state}.v.{bus.id}", 1.0, 1.0)
        else:
            need = screen.volt[k, cols]
            v[k, cols] = at_steps(f"{state}.v.{bus.id}", np.where(need, bus.v_min_sq, -np.inf),
                                  np.where(need, bus.v_max_sq, np.inf))
            P[k, cols] = at_steps(f"{state}.P.{bus.id}")
            Q[k, cols] = at_steps(f"{state}.Q.{bus.id}")

    bi = topo["bus_index"]
    root = bi[network.root]
    for bus in network.buses:
        j = bi[bus.id]
        if bus.id == network.root:
            continue
        line = network.lines[topo["parent_line"][bus.id]]
        i = bi[topo["parent_bus"][bus.id]]
        kids = [bi[c] for c in topo["children"][bus.id]]
        for t in steps:
            for flow, inj in ((P, p_inj), (Q, q_inj)):
                expr = {flow[j, t]: 1.0, inj[j, t]: 1.0}
                for c in kids:
                    expr[flow[c, t]] = -1.0
                mb.add_constraint(expr, EQ, 0.0, f"{state}.bal.{bus.id}.{t}")
            mb.add_constraint({v[j, t]: 1.0, v[i, t]: -1.0, P[j, t]: 2.0 * line.r / base,
                               Q[j, t]: 2.0 * line.x / base}, EQ, 0.0, f"{state}.volt.{bus.id}.{t}")
            if screen.flow[j, t]:
                add_octagon(mb, P[j, t], Q[j, t], line.s_max * base, f"{state}.smax.{bus.id}.{t}")
    root_kids = [bi[c] for c in topo["children"][network.root]]
    for t in steps:
        expr = {pcc[t]: 1.0, p_inj[root, t]: -1.0}
        for c in root_kids:
            expr[P[c, t]] = 1.0
        mb.add_constraint(expr, EQ, 0.0, f"{state}.pcc.{t}")
        # reactive balance at the root is free: the upstream grid absorbs it
    return DistFlowBlock(state, p_inj, q_inj, P, Q, v, pcc, steps)


def add_octagon(mb: ModelBuilder, p, q: int, radius: float, name: str) -> None:
    """Inner 8-facet linearisation of ``p**2 + q**2 <= radius**2``.

    ``p`` is a variable index or a ``{index: coef}`` expression.
    """
    p_expr = {int(p): 1.0} if np.isscalar(p) else dict(p)
    rhs = radius * OCTAGON_SCALE
    for k, ang in enumerate(OCTAGON_ANGLES):
        c, s = round(math.cos(ang), 15), round(math.sin(ang), 15)
        expr = {}
        if abs(c) > 1e-12:
            for i, a in p_expr.items():
                expr[i] = expr.get(i, 0.0) + a * c
        if abs(s) > 1e-12:
            expr[q] = expr.get(q, 0.0) + s
        mb.add_constraint(expr, LE, rhs, f"{name}.{k}")


def bind_injections(mb: ModelBuilder, network: Network, block: DistFlowBlock,
                    p_terms: dict[str, list[tuple[np.ndarray, float]]],
                    q_terms: dict[str, list[tuple[np.ndarray, float]]],
                    p_load: dict[str, np.ndarray], q_load: dict[str, np.ndarray]) -> None:
    """Tie bus injections to device power variables minus fixed load.

    ``p_terms[bus]`` is a list of ``(indices over time, coefficient)``; an index
    of ``-1`` means the device has no variable at that step. At steps without
    network variables the PCC power equals the summed injections directly.
    """
    horizon = block.pcc.size
    full = set(block.steps)
    for bus in network.buses:
        k = network.bus_index[bus.id]
        for inj, terms, load in ((block.p_inj, p_terms, p_load), (block.q_inj, q_terms, q_load)):
            ld = load.get(bus.id)
            for t in block.steps:
                expr = {int(inj[k, t]): 1.0}
                for idx, coef in terms.get(bus.id, ()):
                    if idx[t] >= 0:
                        expr[int(idx[t])] = expr.get(int(idx[t]), 0.0) - coef
                rhs = -float(ld[t]) if ld is not None else 0.0
                mb.add_constraint(expr, EQ, rhs, f"{block.state}.inj.{bus.id}.{t}")
    for t in range(horizon):
        if t in full:
            continue
        expr = {int(block.pcc[t]): 1.0}
        rhs = 0.0
        for bus_id, terms in p_terms.items():
            for idx, coef in terms:
                if idx[t] >= 0:
                    expr[int(idx[t])] = expr.get(int(idx[t]), 0.0) - coef
        for ld in p_load.values():
            rhs -= float(ld[t])
        mb.add_constraint(expr, EQ, rhs, f"{block.state}.pcc.{t}")


def network_to_dict(network: Network) -> dict:
    return {
        "root": network.root,
        "base_kva": network.base_kva,
        "buses": [{"id": b.id, "v_min_sq": b.v_min_sq, "v_max_sq": b.v_max_sq} for b in network.buses],
        "lines": [{"from": l.from_bus, "to": l.to_bus, "r": l.r, "x": l.x, "s_max": l.s_max}
                  for l in network.lines],
    }


def network_from_dict(data: dict) -> Network:
    try:
        buses = tuple(Bus(str(b["id"]), float(b.get("v_min_sq", 0.95 ** 2)),
                          float(b.get("v_max_sq", 1.05 ** 2))) for b in data["buses"])
        lines = tuple(Line(str(l["from"]), str(l["to"]), float(l["r"]), float(l["x"]), float(l["s_max"]))
                      for l in data["lines"])
        network = Network(buses, lines, str(data["root"]), float(data.get("base_kva", 100.0)))
    except KeyError as exc:
        raise NetworkError(f"network file is missing field {exc.args[0]!r}") from None
    check = validate_radial(network)
    if not check:
        raise NetworkError(check.message)
    return network


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))


def save_network(network: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(network), indent=2) + "\n")


def chain_feeder(n_buses: int, r: float = 0.01, x: float = 0.005, s_max: float = 5.0,
                 base_kva: float = 100.0) -> Network:
    """Single feeder ``b0 - b1 - ... - b{n-1}`` rooted at ``b0``."""
    buses = tuple(Bus(f"b{k}") for k in range(n_buses))
    lines = tuple(Line(f"b{k}", f"b{k + 1}", r, x, s_max) for k in range(n_buses - 1))
    return Network(buses, lines, "b0", base_kva)


def star_feeder(n_buses: int, r: float = 0.01, x: float = 0.005, s_max: float = 5.0,
                base_kva: float = 100.0) -> Network:
    """Every non-root bus hangs directly off the root ``b0``."""
    buses = tuple(Bus(f"b{k}") for k in range(n_buses))
    lines = tuple(Line("b0", f"b{k}", r, x, s_max) for k in range(1, n_buses))
    return Network(buses, lines, "b0", base_kva)


def branched_feeder(n_buses: int = 97, n_feeders: int = 8, seed: int = 0, base_kva: float = 250.0) -> Network:
    """Synthetic LV network: ``n_feeders`` cables leave the transformer (root)
    and branch as they go.

    Impedances are those of 0.4 kV 240 mm2 aluminium cable (0.125 + j0.07
    ohm/km, about 290 kVA) over spans of 20 to 40 m; each new bus hangs off
    the previous bus of its feeder or, every so often, off the one before
    that, which creates side branches.
    """
    if n_buses < 2:
        raise NetworkError("need at least two buses")
    rng = np.random.default_rng(seed)
    z_base = 0.4 ** 2 * 1000.0 / base_kva  # ohm
    n_feeders = max(1, min(n_feeders, n_buses - 1))
    buses = [Bus(f"b{k}") for k in range(n_buses)]
    tails: list[list[str]] = [["b0"] for _ in range(n_feeders)]
    lines = []
    for k in range(1, n_buses):
        path = tails[(k - 1) % n_feeders]
        parent = path[-2] if len(path) > 2 and rng.random() < 0.25 else path[-1]
        span = rng.uniform(0.02, 0.04)
        lines.append(Line(parent, f"b{k}", 0.125 * span / z_base, 0.07 * span / z_base, 290.0 / base_kva))
        path.append(f"b{k}")
    return Network(tuple(buses), tuple(lines), "b0", base_kva)
