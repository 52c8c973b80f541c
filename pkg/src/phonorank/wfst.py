"""Weighted finite-state transducers over the tropical semiring.

Costs are non-negative floats combined with ``+`` along a path and ``min``
across paths. Label 0 is epsilon in every symbol table.

Only the operations the alternative-sentence pipeline needs are provided:
composition (with an epsilon-sequencing filter), inversion, trimming and
n-best extraction of distinct output strings.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

EPSILON = 0
EPSILON_SYMBOL = "<eps>"
INF = math.inf


class FstError(ValueError):
    """Raised on malformed machines or incompatible symbol tables."""


class SymbolTable:
    """Bidirectional map between non-negative ids and surface strings.

    Id 0 is always epsilon. Tables are append-only; two tables compare equal
    when they hold the same symbols under the same ids.
    """

    def __init__(self, symbols: Iterable[str] = ()):
        self._syms: List[str] = [EPSILON_SYMBOL]
        self._ids: Dict[str, int] = {EPSILON_SYMBOL: EPSILON}
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        if symbol in self._ids:
            return self._ids[symbol]
        self._ids[symbol] = len(self._syms)
        self._syms.append(symbol)
        return self._ids[symbol]

    def id(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise KeyError(f"symbol not in table: {symbol!r}") from None

    def get(self, symbol: str, default: Optional[int] = None) -> Optional[int]:
        return self._ids.get(symbol, default)

    def symbol(self, i: int) -> str:
        return self._syms[i]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    def __len__(self) -> int:
        return len(self._syms)

    def __iter__(self) -> Iterator[Tuple[int, str]]:
        return iter(enumerate(self._syms))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SymbolTable):
            return NotImplemented
        return self._syms == other._syms

    def __hash__(self) -> int:
        return hash(tuple(self._syms))

    def __repr__(self) -> str:
        return f"SymbolTable({len(self._syms) - 1} symbols)"

    def copy(self) -> "SymbolTable":
        return SymbolTable(self._syms[1:])


@dataclass(frozen=True)
class Arc:
    ilabel: int
    olabel: int
    weight: float
    nextstate: int


@dataclass(frozen=True)
class Path:
    """An accepting path: output labels with epsilons removed, total cost."""

    output: Tuple[int, ...]
    weight: float
    input: Tuple[int, ...] = ()


class WFST:
    """An immutable weighted transducer.

    Build one with :class:`WFSTBuilder` (or the helper constructors below);
    every operation returns a new machine.
    """

    __slots__ = ("start", "finals", "arcs", "isyms", "osyms", "_by_ilabel")

    def __init__(
        self,
        start: int,
        finals: Dict[int, float],
        arcs: Sequence[Sequence[Arc]],
        isyms: SymbolTable,
        osyms: SymbolTable,
    ):
        n = len(arcs)
        if n == 0:
            raise FstError("machine has no states")
        if not 0 <= start < n:
            raise FstError(f"start state {start} out of range")
        for q, w in finals.items():
            if not 0 <= q < n:
                raise FstError(f"final state {q} out of range")
            if not (w >= 0.0) or math.isinf(w):
                raise FstError(f"final weight must be finite and >= 0, got {w}")
        for q, out in enumerate(arcs):
            for a in out:
                if not 0 <= a.nextstate < n:
                    raise FstError(f"arc {q}->{a.nextstate} leaves the machine")
                if not (a.weight >= 0.0) or math.isinf(a.weight):
                    raise FstError(f"arc weight must be finite and >= 0, got {a.weight}")
        self.start = start
        self.finals = dict(finals)
        self.arcs: Tuple[Tuple[Arc, ...], ...] = tuple(tuple(out) for out in arcs)
        self.isyms = isyms
        self.osyms = osyms
        self._by_ilabel: Optional[List[Dict[int, List[Arc]]]] = None

    @property
    def num_states(self) -> int:
        return len(self.arcs)

    @property
    def num_arcs(self) -> int:
        return sum(len(out) for out in self.arcs)

    def final_weight(self, q: int) -> float:
        return self.finals.get(q, INF)

    def arcs_by_ilabel(self, q: int) -> Dict[int, List[Arc]]:
        if self._by_ilabel is None:
            index = []
            for out in self.arcs:
                d: Dict[int, List[Arc]] = {}
                for a in out:
                    d.setdefault(a.ilabel, []).append(a)
                index.append(d)
            self._by_ilabel = index
        return self._by_ilabel[q]

    def same_as(self, other: "WFST") -> bool:
        """Arc-for-arc equality, including symbol tables."""
        return (
            self.start == other.start
            and self.finals == other.finals
            and self.arcs == other.arcs
            and self.isyms == other.isyms
            and self.osyms == other.osyms
        )

    def to_att(self) -> str:
        """Dump in AT&T text format using surface symbols."""
        lines = []
        order = [self.start] + [q for q in range(self.num_states) if q != self.start]
        for q in order:
            for a in self.arcs[q]:
                lines.append(
                    f"{q}\t{a.nextstate}\t{self.isyms.symbol(a.ilabel)}\t"
                    f"{self.osyms.symbol(a.olabel)}\t{_fmt(a.weight)}"
                )
        for q in sorted(self.finals):
            lines.append(f"{q}\t{_fmt(self.finals[q])}")
        return "\n".join(lines) + "\n"

    def __repr__(self) -> str:
        return f"WFST(states={self.num_states}, arcs={self.num_arcs}, finals={len(self.finals)})"


def _fmt(w: float) -> str:
    return repr(float(w))


class WFSTBuilder:
    """Mutable scratchpad for assembling a :class:`WFST`."""

    def __init__(self, isyms: SymbolTable, osyms: Optional[SymbolTable] = None):
        self.isyms = isyms
        self.osyms = isyms if osyms is None else osyms
        self._arcs: List[List[Arc]] = []
        self._finals: Dict[int, float] = {}
        self.start = 0

    def add_state(self) -> int:
        self._arcs.append([])
        return len(self._arcs) - 1

    def add_arc(self, src: int, ilabel: int, olabel: int, weight: float, dst: int) -> None:
        self._arcs[src].append(Arc(ilabel, olabel, float(weight), dst))

    def set_final(self, q: int, weight: float = 0.0) -> None:
        self._finals[q] = float(weight)

    def build(self) -> WFST:
        return WFST(self.start, self._finals, self._arcs, self.isyms, self.osyms)


def linear_acceptor(labels: Sequence[int], syms: SymbolTable) -> WFST:
    """Single-path acceptor for ``labels`` with zero cost."""
    b = WFSTBuilder(syms)
    q = b.add_state()
    for lab in labels:
        r = b.add_state()
        b.add_arc(q, lab, lab, 0.0, r)
        q = r
    b.set_final(q)
    return b.build()


def from_att(text: str, isyms: SymbolTable, osyms: Optional[SymbolTable] = None) -> WFST:
    """Parse the AT&T text format; first arc line's source is the start state."""
    osyms = isyms if osyms is None else osyms
    arcs: Dict[int, List[Arc]] = {}
    finals: Dict[int, float] = {}
    start = None
    n = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) in (4, 5):
            src, dst = int(parts[0]), int(parts[1])
            w = float(parts[4]) if len(parts) == 5 else 0.0
            arcs.setdefault(src, []).append(Arc(isyms.add(parts[2]), osyms.add(parts[3]), w, dst))
            n = max(n, src + 1, dst + 1)
            if start is None:
                start = src
        elif len(parts) in (1, 2):
            q = int(parts[0])
            finals[q] = float(parts[1]) if len(parts) == 2 else 0.0
            n = max(n, q + 1)
            if start is None:
                start = q
        else:
            raise FstError(f"line {lineno}: cannot parse {line!r}")
    if start is None:
        raise FstError("empty AT&T description")
    return WFST(start, finals, [arcs.get(q, []) for q in range(n)], isyms, osyms)


# -- operations ---------------------------------------------------------------


def invert(a: WFST) -> WFST:
    """Swap input and output labels (and tables); weights are untouched."""
    arcs = [[Arc(x.olabel, x.ilabel, x.weight, x.nextstate) for x in out] for out in a.arcs]
    return WFST(a.start, a.finals, arcs, a.osyms, a.isyms)


def compose(a: WFST, b: WFST) -> WFST:
    """Tropical composition ``a ∘ b``; only accessible states are built.

    Epsilons use a sequencing filter: within each gap between matched
    symbols, output-epsilon moves of ``a`` come before input-epsilon moves of
    ``b``. Every compatible pair of paths therefore yields exactly one
    composed path.
    """
    if a.osyms != b.isyms:
        raise FstError("compose: output table of the first machine differs from input table of the second")
    # filter 0: a may still take output-epsilon moves; 1: b has moved alone.
    start = (a.start, b.start, 0)
    index = {start: 0}
    queue = [start]
    arcs: List[List[Arc]] = [[]]
    finals: Dict[int, float] = {}

    def state_id(key: Tuple[int, int, int]) -> int:
        s = index.get(key)
        if s is None:
            s = len(arcs)
            index[key] = s
            arcs.append([])
            queue.append(key)
        return s

    head = 0
    while head < len(queue):
        qa, qb, f = key = queue[head]
        head += 1
        s = index[key]
        out = arcs[s]
        fa, fb = a.final_weight(qa), b.final_weight(qb)
        if fa < INF and fb < INF:
            finals[s] = fa + fb
        b_index = b.arcs_by_ilabel(qb)
        for x in a.arcs[qa]:
            if x.olabel == EPSILON:
                if f == 0:
                    out.append(Arc(x.ilabel, EPSILON, x.weight, state_id((x.nextstate, qb, 0))))
                continue
            for y in b_index.get(x.olabel, ()):
                out.append(Arc(x.ilabel, y.olabel, x.weight + y.weight, state_id((x.nextstate, y.nextstate, 0))))
        for y in b_index.get(EPSILON, ()):
            out.append(Arc(EPSILON, y.olabel, y.weight, state_id((qa, y.nextstate, 1))))
    return WFST(0, finals, arcs, a.isyms, b.osyms)


def _coaccessible(a: WFST) -> List[bool]:
    rev: List[List[int]] = [[] for _ in range(a.num_states)]
    for q, out in enumerate(a.arcs):
        for x in out:
            rev[x.nextstate].append(q)
    seen = [False] * a.num_states
    stack = list(a.finals)
    for q in stack:
        seen[q] = True
    while stack:
        q = stack.pop()
        for p in rev[q]:
            if not seen[p]:
                seen[p] = True
                stack.append(p)
    return seen


def _accessible(a: WFST) -> List[bool]:
    seen = [False] * a.num_states
    seen[a.start] = True
    stack = [a.start]
    while stack:
        q = stack.pop()
        for x in a.arcs[q]:
            if not seen[x.nextstate]:
                seen[x.nextstate] = True
                stack.append(x.nextstate)
    return seen


def trim(a: WFST) -> WFST:
    """Drop states that are not on some start-to-final path.

    State order is preserved. A machine with no accepting path becomes a
    single non-final start state.
    """
    acc, coacc = _accessible(a), _coaccessible(a)
    keep = [acc[q] and coacc[q] for q in range(a.num_states)]
    if all(keep):
        return a
    if not keep[a.start]:
        return WFST(0, {}, [[]], a.isyms, a.osyms)
    remap: Dict[int, int] = {}
    for q in range(a.num_states):
        if keep[q]:
            remap[q] = len(remap)
    arcs = [
        [Arc(x.ilabel, x.olabel, x.weight, remap[x.nextstate]) for x in a.arcs[q] if keep[x.nextstate]]
        for q in range(a.num_states)
        if keep[q]
    ]
    finals = {remap[q]: w for q, w in a.finals.items() if keep[q]}
    return WFST(remap[a.start], finals, arcs, a.isyms, a.osyms)


def distance_to_final(a: WFST) -> List[float]:
    """Cost of the cheapest path from every state to a final state (Dijkstra on the reversed machine)."""
    rev: List[List[Tuple[int, float]]] = [[] for _ in range(a.num_states)]
    for q, out in enumerate(a.arcs):
        for x in out:
            rev[x.nextstate].append((q, x.weight))
    dist = [INF] * a.num_states
    heap = []
    for q, w in a.finals.items():
        if w < dist[q]:
            dist[q] = w
    heap = [(d, q) for q, d in enumerate(dist) if d < INF]
    heapq.heapify(heap)
    done = [False] * a.num_states
    while heap:
        d, q = heapq.heappop(heap)
        if done[q]:
            continue
        done[q] = True
        for p, w in rev[q]:
            nd = d + w
            if nd < dist[p]:
                dist[p] = nd
                heapq.heappush(heap, (nd, p))
    return dist


def shortest_path(a: WFST) -> Optional[Path]:
    paths = nbest(a, 1)
    return paths[0] if paths else None


def nbest(a: WFST, n: int, max_expansions: int = 1_000_000, keep_input: bool = False) -> List[Path]:
    """The ``n`` cheapest distinct output strings of ``a``, cheapest first.

    Each output string is reported once, with the cost of its cheapest path.
    Equal costs are ordered lexicographically by output label ids.

    The search is A* over (state, output-so-far) with the exact distance to
    a final state as heuristic, so the first time a (state, prefix) pair is
    popped it carries its minimal cost and later arrivals can be dropped.
    This also makes epsilon-output cycles harmless. ``max_expansions`` caps
    the number of popped items as a safety valve.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    h = distance_to_final(a)
    if h[a.start] == INF:
        return []
    adj = [
        [(x.olabel, x.ilabel, x.weight, x.nextstate, h[x.nextstate]) for x in out if h[x.nextstate] < INF]
        for out in a.arcs
    ]
    finals = a.finals
    push, pop = heapq.heappush, heapq.heappop
    # heap items: (f, output, tiebreak, g, state, input); state -1 marks a complete path
    counter = 0
    heap: list = [(h[a.start], (), 0, 0.0, a.start, ())]
    seen = set()
    emitted = set()
    results: List[Path] = []
    expansions = 0
    while heap and len(results) < n and expansions < max_expansions:
        f, out, _, g, q, inp = pop(heap)
        expansions += 1
        if q < 0:
            if out not in emitted:
                emitted.add(out)
                results.append(Path(out, g, inp))
            continue
        key = (q, out)
        if key in seen:
            continue
        seen.add(key)
        fw = finals.get(q)
        if fw is not None and out not in emitted:
            counter += 1
            push(heap, (g + fw, out, counter, g + fw, -1, inp))
        for olabel, ilabel, w, r, hr in adj[q]:
            nout = out + (olabel,) if olabel else out
            if (r, nout) in seen:
                continue
            ninp = inp + (ilabel,) if keep_input and ilabel else inp
            ng = g + w
            counter += 1
            push(heap, (ng + hr, nout, counter, ng, r, ninp))
    return results


def enumerate_paths(a: WFST, max_arcs: int) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...], float]]:
    """Yield ``(input, output, cost)`` for every accepting path of at most ``max_arcs`` arcs.

    Exhaustive depth-first walk; meant for small machines and test oracles.
    """

    def walk(q: int, depth: int, inp: tuple, out: tuple, cost: float):
        fw = a.finals.get(q)
        if fw is not None:
            yield inp, out, cost + fw
        if depth == max_arcs:
            return
        for x in a.arcs[q]:
            yield from walk(
                x.nextstate,
                depth + 1,
                inp + (x.ilabel,) if x.ilabel else inp,
                out + (x.olabel,) if x.olabel else out,
                cost + x.weight,
            )

    yield from walk(a.start, 0, (), (), 0.0)


def is_acyclic(a: WFST) -> bool:
    color = [0] * a.num_states
    for root in range(a.num_states):
        if color[root]:
            continue
        stack = [(root, iter(a.arcs[root]))]
        color[root] = 1
        while stack:
            q, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[q] = 2
                stack.pop()
                continue
            r = nxt.nextstate
            if color[r] == 1:
                return False
            if color[r] == 0:
                color[r] = 1
                stack.append((r, iter(a.arcs[r])))
    return True
