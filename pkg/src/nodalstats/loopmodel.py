"""Random loop model on 4-regular combinatorial maps.

A 4-regular map abstracts the traced nodal graph: vertices are avoided
crossings (saddles), each with four half-edge slots in cyclic order, and the
pairing involution records how zero-curve arcs connect them.  Choosing one of
the two planar avoided crossings at every vertex resolves the map into a
collection of disjoint loops; this module counts those loops, extracts the
face structure of the underlying planar embedding, marks short face cycles
whose presence is controlled by a bounded number of vertex states, and runs
Monte Carlo / exact variance experiments over random state assignments.

Half-edge conventions match the traced-graph export: vertex ``v`` owns
half-edges ``4v..4v+3``; the rotation row of ``v`` lists them in cyclic
order; state 0 pairs rotation-adjacent slots ``(0,1),(2,3)``, state 1 pairs
``(1,2),(3,0)``.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import kernels

__all__ = [
    "LoopModelError", "NonPlanarError", "FourRegularMap", "StateAssignment",
    "LoopEnsembleParams", "MarkedCycleSet", "count_loops",
    "naive_count_loops", "faces", "mark_cycles", "variance_experiment",
    "random_planar_map", "random_projective_double", "map_to_text",
    "map_from_text", "VARIANCE_CSV_HEADER", "variance_csv_row",
]

STATE_LETTERS = "AB"

# slot reflection realizing an orientation-reversing vertex identification
# that preserves the state index (the traced-graph convention for antipodal
# saddle pairs)
ANTIPODAL_REFLECTION = (1, 0, 3, 2)

# exact enumeration limits: hard overflow bound and the comfortable default
EXACT_MAX_GENERATORS = 25
EXACT_AUTO_GENERATORS = 12

MIN_MC_TRIALS = 1000


class LoopModelError(RuntimeError):
    """A loop-model operation could not complete."""


class NonPlanarError(LoopModelError):
    """The rotation system does not embed in the sphere."""

    def __init__(self, message, genus):
        super().__init__(message)
        self.genus = genus


def _as_involution(arr, n, name):
    a = np.asarray(arr, dtype=np.int64)
    if a.shape != (n,):
        raise LoopModelError("%s must have shape (%d,)" % (name, n))
    if a.min(initial=0) < 0 or a.max(initial=-1) >= n:
        raise LoopModelError("%s entries out of range" % name)
    if np.any(a == np.arange(n)):
        raise LoopModelError("%s has a fixed point" % name)
    if not np.array_equal(a[a], np.arange(n)):
        raise LoopModelError("%s is not an involution" % name)
    return a


@dataclass(frozen=True)
class FourRegularMap:
    """4-regular combinatorial map with optional antipodal symmetry.

    ``rotation[v]`` lists the four half-edges of vertex ``v`` (ids
    ``4v..4v+3``) in cyclic order; ``pairing`` is the fixed-point-free
    involution matching half-edges into edges (multiple and circular edges
    are allowed); ``free_loops`` counts closed curves that touch no vertex;
    ``antipodal``, when given, is a half-edge involution identifying each
    vertex with a distinct partner, reversing the rotation order and
    commuting with the pairing (projective mode).
    """

    rotation: np.ndarray
    pairing: np.ndarray
    free_loops: int = 0
    antipodal: np.ndarray = None

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.int64).reshape(-1, 4)
        object.__setattr__(self, "rotation", rot)
        n_v = rot.shape[0]
        for v in range(n_v):
            if sorted(rot[v].tolist()) != [4 * v + k for k in range(4)]:
                raise LoopModelError(
                    "rotation row %d must order that vertex's half-edges" % v)
        object.__setattr__(
            self, "pairing",
            _as_involution(self.pairing, 4 * n_v, "pairing"))
        if self.free_loops < 0:
            raise LoopModelError("free_loops must be nonnegative")
        pos = np.empty(4 * n_v, dtype=np.int64)
        for v in range(n_v):
            pos[rot[v]] = np.arange(4)
        object.__setattr__(self, "_pos", pos)
        if self.antipodal is not None:
            object.__setattr__(
                self, "antipodal",
                _as_involution(self.antipodal, 4 * n_v, "antipodal"))
            self._check_antipodal()

    def _check_antipodal(self):
        ap = self.antipodal
        n_v = self.n_vertices
        owner = ap >> 2
        for v in range(n_v):
            w = owner[4 * v]
            if w == v:
                raise LoopModelError("antipodal involution fixes vertex %d" % v)
            if np.any(owner[4 * v: 4 * v + 4] != w):
                raise LoopModelError(
                    "antipodal image of vertex %d is not a single vertex" % v)
        if not np.array_equal(ap[self.pairing], self.pairing[ap]):
            raise LoopModelError(
                "antipodal involution does not commute with the pairing")
        # orientation reversal: next-in-rotation maps to previous-in-rotation
        nxt = self.rotation_next()
        if not np.array_equal(nxt[ap[nxt]], ap):
            raise LoopModelError(
                "antipodal involution does not reverse rotation order")
        # the traced-graph labeling convention: the state index is preserved
        # (slot pairs {0,1},{2,3} map to slot pairs of the same state)
        for v in range(n_v):
            a = self._pos[ap[self.rotation[v][0]]]
            b = self._pos[ap[self.rotation[v][1]]]
            if {int(a), int(b)} not in ({0, 1}, {2, 3}):
                raise LoopModelError(
                    "antipodal involution at vertex %d swaps the two vertex "
                    "states; relabel the partner's slots (the traced-graph "
                    "convention keeps state indices equal)" % v)

    @property
    def n_vertices(self):
        return int(self.rotation.shape[0])

    @property
    def n_half_edges(self):
        return 4 * self.n_vertices

    @property
    def n_edges(self):
        return 2 * self.n_vertices

    @property
    def edges(self):
        return tuple((int(h), int(self.pairing[h]))
                     for h in range(self.n_half_edges)
                     if h < self.pairing[h])

    def slot_position(self, h):
        """Position of half-edge ``h`` in its vertex's rotation row."""
        return int(self._pos[h])

    def rotation_next(self):
        """Permutation sending each half-edge to the next in rotation."""
        nxt = np.empty(self.n_half_edges, dtype=np.int64)
        for v in range(self.n_vertices):
            nxt[self.rotation[v]] = np.roll(self.rotation[v], -1)
        return nxt

    def canonical_pairing(self):
        """Pairing relabeled so rotation rows read ``4v, 4v+1, 4v+2, 4v+3``.

        The loop kernels assume that labeling; maps built by this module
        already use it, in which case this is the pairing itself.
        """
        canon = (np.arange(self.n_half_edges) & ~np.int64(3)) | self._pos
        if np.array_equal(canon, np.arange(self.n_half_edges)):
            return self.pairing
        inv = np.empty_like(canon)
        inv[canon] = np.arange(self.n_half_edges)
        return canon[self.pairing[inv]]

    def state_partner(self, h, state):
        """The slot paired with ``h`` by the given vertex state."""
        v = h >> 2
        i = self._pos[h]
        j = (i ^ 1) if state == 0 else (3 - i)
        return int(self.rotation[v][j])

    def vertex_pairs(self):
        """Antipodal vertex pairs ``(v, partner)`` with ``v < partner``."""
        if self.antipodal is None:
            return ()
        owner = self.antipodal >> 2
        return tuple((v, int(owner[4 * v])) for v in range(self.n_vertices)
                     if v < owner[4 * v])

    @classmethod
    def from_pairing(cls, pairing, free_loops=0, antipodal=None):
        """Map with the canonical rotation rows implied by half-edge ids."""
        pairing = np.asarray(pairing, dtype=np.int64)
        n_v = pairing.shape[0] // 4
        rotation = np.arange(4 * n_v, dtype=np.int64).reshape(n_v, 4)
        return cls(rotation=rotation, pairing=pairing,
                   free_loops=free_loops, antipodal=antipodal)


@dataclass(frozen=True)
class StateAssignment:
    """Per-vertex choice of one of the two planar avoided crossings.

    State 0 ("A") pairs rotation-adjacent slot positions ``(0,1),(2,3)``;
    state 1 ("B") pairs ``(1,2),(3,0)``.  Diagonal (crossing) pairings are
    not representable.
    """

    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.uint8).reshape(-1)
        if s.size and s.max(initial=0) > 1:
            raise LoopModelError("states must be 0 (A) or 1 (B)")
        object.__setattr__(self, "states", s)

    @property
    def n_vertices(self):
        return int(self.states.shape[0])

    @property
    def letters(self):
        return "".join(STATE_LETTERS[s] for s in self.states)

    @classmethod
    def from_letters(cls, letters):
        try:
            return cls(np.array([STATE_LETTERS.index(c) for c in letters],
                                dtype=np.uint8))
        except ValueError:
            raise LoopModelError("state letters must be 'A' or 'B'")


@dataclass(frozen=True)
class LoopEnsembleParams:
    """Independent per-vertex state distribution with a window threshold.

    ``p[v]`` is the probability of state 0 ("A") at vertex ``v``; the window
    ``V(p0)`` collects the vertices whose state is genuinely random at
    threshold ``p0``.
    """

    p: np.ndarray
    p0: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        object.__setattr__(self, "p", p)
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise LoopModelError("state probabilities must lie in [0, 1]")
        if not 0.0 < self.p0 <= 0.5:
            raise LoopModelError("p0 must lie in (0, 1/2]")

    @property
    def n_vertices(self):
        return int(self.p.shape[0])

    def window(self):
        """Indices of the vertices with ``p0 <= p(v) <= 1 - p0``."""
        return np.nonzero((self.p >= self.p0) & (self.p <= 1.0 - self.p0))[0]

    @classmethod
    def uniform(cls, n_vertices, p=0.5, p0=0.25):
        return cls(np.full(n_vertices, float(p)), p0)


# --------------------------------------------------------------------------
# loop counting
# --------------------------------------------------------------------------

def _check_states(m, states):
    if not isinstance(states, StateAssignment):
        states = StateAssignment(np.asarray(states))
    if states.n_vertices != m.n_vertices:
        raise LoopModelError("state assignment covers %d vertices, map has %d"
                             % (states.n_vertices, m.n_vertices))
    return states


def count_loops(m, states):
    """Loop count of the resolved map: cycles of pairing composed with the
    per-vertex state pairing, plus the map's free loops."""
    states = _check_states(m, states)
    if m.n_vertices == 0:
        return m.free_loops
    return int(kernels.count_loops_states(
        m.canonical_pairing(), states.states.astype(np.int64))) + m.free_loops


def naive_count_loops(m, states):
    """Independent reference count: connected components of half-edges under
    the edge pairing and the state pairing together."""
    states = _check_states(m, states)
    n = m.n_half_edges
    seen = np.zeros(n, dtype=bool)
    loops = 0
    for h0 in range(n):
        if seen[h0]:
            continue
        loops += 1
        stack = [h0]
        while stack:
            h = stack.pop()
            if seen[h]:
                continue
            seen[h] = True
            stack.append(int(m.pairing[h]))
            stack.append(m.state_partner(h, states.states[h >> 2]))
    return loops + m.free_loops


# --------------------------------------------------------------------------
# faces
# --------------------------------------------------------------------------

def _face_orbits(m):
    """Faces as orbits of (next-in-rotation after crossing each edge)."""
    nxt = m.rotation_next()
    step = nxt[m.pairing]
    out = []
    seen = np.zeros(m.n_half_edges, dtype=bool)
    for h0 in range(m.n_half_edges):
        if seen[h0]:
            continue
        face = []
        h = h0
        while not seen[h]:
            seen[h] = True
            face.append(int(h))
            h = int(step[h])
        out.append(tuple(face))
    return tuple(out)


def _components(m):
    """Connected components of the vertex set under the edge pairing."""
    parent = list(range(m.n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for h in range(m.n_half_edges):
        a, b = find(h >> 2), find(int(m.pairing[h]) >> 2)
        if a != b:
            parent[a] = b
    return np.array([find(v) for v in range(m.n_vertices)])


def faces(m, diagnostics=None):
    """Face list of the planar embedding, from turning walks.

    Verifies the rotation system has genus zero on every connected
    component via the Euler formula and (consequently) that the face count
    is ``|V| + 2 * components``; a nonzero genus raises
    :class:`NonPlanarError` reporting it.
    """
    if m.n_vertices == 0:
        if diagnostics is not None:
            diagnostics.update({"n_faces": 0, "n_components": 0, "genus": 0})
        return ()
    out = _face_orbits(m)
    comp = _components(m)
    labels = np.unique(comp)
    genus_total = 0
    for c in labels:
        n_v = int(np.count_nonzero(comp == c))
        n_f = sum(1 for f in out if comp[f[0] >> 2] == c)
        chi = n_v - 2 * n_v + n_f
        genus2 = 2 - chi
        if genus2 % 2:
            raise LoopModelError("half-integer genus; corrupt map")
        genus_total += genus2 // 2
    if genus_total != 0:
        raise NonPlanarError(
            "rotation system has genus %d, not a planar embedding"
            % genus_total, genus_total)
    n_comp = len(labels)
    if len(out) != m.n_vertices + 2 * n_comp:
        raise LoopModelError("face count violates the Euler identity")
    if diagnostics is not None:
        diagnostics.update({"n_faces": len(out), "n_components": n_comp,
                            "genus": 0})
    return out


# --------------------------------------------------------------------------
# marked cycles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkedCycleSet:
    """Short-face machinery: small faces, a separated family, marked cycles.

    ``small_faces`` lists the indices of faces with at most four distinct
    boundary vertices; ``separated`` is a maximal greedy subfamily sharing
    no boundary vertex; ``marks[f]`` holds, for each separated face, the
    marked vertex, the cycle of half-edges leaving it and returning along a
    rotation-adjacent slot, the closing state of the marked vertex, and the
    interior routing states that realize the cycle as a standalone loop.
    ``bad_projective`` lists separated-family candidates rejected because
    their cycle meets its antipodal image.
    """

    carrier: FourRegularMap
    faces: tuple
    small_faces: tuple
    separated: tuple
    marks: dict
    bad_projective: tuple = ()

    def good_flags(self, states):
        """Per separated face: do the given states route its marked cycle?

        A face is good when every interior vertex of its marked cycle
        carries the routing state, so the loop's presence is decided by the
        marked vertex's state alone.
        """
        states = _check_states(self.carrier, states)
        flags = {}
        for f in self.separated:
            mk = self.marks[f]
            flags[f] = all(states.states[v] == s
                           for v, s in mk["routing"].items())
        return flags


def _face_vertices(face):
    return {h >> 2 for h in face}


def _mark_face(m, face):
    """Marked vertex and cycle of one small face.

    Walks the face boundary from each corner until the first vertex
    repetition; accepts the start whose returning half-edge is
    rotation-adjacent to the cycle's exit half-edge, so that exactly one
    state of the marked vertex closes the cycle into a loop of its own.
    """
    d = len(face)
    if d > 4 * len(_face_vertices(face)):
        raise LoopModelError("face walk longer than its corner budget; "
                             "corrupt map")
    for start in range(d):
        first_seen = {}
        for step in range(d + 1):
            h = face[(start + step) % d]
            v = h >> 2
            if v in first_seen:
                i = first_seen[v]
                cycle = tuple(face[(start + t) % d] for t in range(i, step))
                exit_h = cycle[0]
                ret_h = int(m.pairing[cycle[-1]])
                di = (m.slot_position(ret_h) - m.slot_position(exit_h)) % 4
                if (ret_h >> 2) == v and di in (1, 3):
                    closing = 0 if {m.slot_position(exit_h),
                                    m.slot_position(ret_h)} in ({0, 1}, {2, 3}) \
                        else 1
                    routing = {}
                    ok = True
                    for t in range(len(cycle) - 1):
                        w = cycle[t + 1] >> 2
                        arr = int(m.pairing[cycle[t]])
                        dj = (m.slot_position(cycle[t + 1])
                              - m.slot_position(arr)) % 4
                        if dj not in (1, 3):
                            ok = False
                            break
                        s = 0 if {m.slot_position(arr),
                                  m.slot_position(cycle[t + 1])} in \
                            ({0, 1}, {2, 3}) else 1
                        if w in routing and routing[w] != s:
                            ok = False
                            break
                        routing[w] = s
                    if ok:
                        return {"vertex": v, "cycle": cycle,
                                "exit": exit_h, "return": ret_h,
                                "closing_state": closing, "routing": routing}
                break
            first_seen[v] = step
    return None


def mark_cycles(m, projective=None):
    """Marked-cycle structure of the planar map.

    Collects the faces with at most four distinct boundary vertices
    (guaranteed to be more than a fifth of all faces), greedily extracts a
    maximal separated family (pairwise disjoint boundary vertices, at least
    a thirteenth of the small faces), and marks one closable cycle on each.
    In projective mode (default: when the map carries an antipodal
    involution), cycles meeting their antipodal image are rejected; at most
    eight rejections are tolerated.
    """
    fs = faces(m)
    if projective is None:
        projective = m.antipodal is not None
    if projective and m.antipodal is None:
        raise LoopModelError("projective mode needs an antipodal involution")
    small = tuple(i for i, f in enumerate(fs)
                  if len(_face_vertices(f)) <= 4)
    if m.n_vertices and not len(small) * 5 > len(fs):
        raise LoopModelError("small faces do not dominate; corrupt map")

    order = sorted(small, key=lambda i: (len(_face_vertices(fs[i])), i))
    used = set()
    separated = []
    marks = {}
    bad = []
    for i in order:
        verts = _face_vertices(fs[i])
        if verts & used:
            continue
        mk = _mark_face(m, fs[i])
        if mk is None:
            continue
        if projective:
            cyc_verts = {h >> 2 for h in mk["cycle"]}
            anti = {int(m.antipodal[4 * v]) >> 2 for v in cyc_verts}
            if cyc_verts & anti:
                bad.append(i)
                continue
        separated.append(i)
        marks[i] = mk
        used |= verts
    if projective and len(bad) > 8:
        raise LoopModelError(
            "%d marked cycles meet their antipodal images (at most 8 "
            "expected)" % len(bad))
    if m.n_vertices and not projective \
            and 13 * len(separated) < len(small):
        raise LoopModelError("separated family too small; corrupt map")
    return MarkedCycleSet(carrier=m, faces=fs, small_faces=small,
                          separated=tuple(separated), marks=marks,
                          bad_projective=tuple(bad))


# --------------------------------------------------------------------------
# variance experiments
# --------------------------------------------------------------------------

def _tied_partner(m):
    tied = np.full(m.n_vertices, -1, dtype=np.int64)
    if m.antipodal is not None:
        owner = m.antipodal >> 2
        for v in range(m.n_vertices):
            tied[v] = owner[4 * v]
    return tied


def variance_experiment(m, params, trials=10000, seed=0, want_exact=None):
    """Mean and variance of the loop count over random state assignments.

    States are independent across vertices (antipodal pairs share one state
    in projective mode); ``params.p`` gives the per-vertex probability of
    state 0.  Runs ``trials`` Monte Carlo draws (at least 1000, or zero to
    skip when exact enumeration is requested) and, when the number of free
    state generators is small enough, an exact enumeration over all
    assignments; ``want_exact`` forces it on or off.
    """
    if not isinstance(params, LoopEnsembleParams):
        raise LoopModelError("params must be a LoopEnsembleParams")
    if params.n_vertices != m.n_vertices:
        raise LoopModelError("params cover %d vertices, map has %d"
                             % (params.n_vertices, m.n_vertices))
    tied = _tied_partner(m)
    pairs = [(v, int(tied[v])) for v in range(m.n_vertices)
             if 0 <= tied[v] != v and v < tied[v]]
    for v, w in pairs:
        if params.p[v] != params.p[w]:
            raise LoopModelError(
                "tied vertices %d and %d have different probabilities"
                % (v, w))
    generators = [v for v in range(m.n_vertices)
                  if tied[v] == -1 or tied[v] >= v]
    n_gen = len(generators)

    run_exact = want_exact if want_exact is not None \
        else n_gen <= EXACT_AUTO_GENERATORS
    if run_exact and n_gen > EXACT_MAX_GENERATORS:
        raise LoopModelError(
            "exact enumeration over %d free states overflows the %d-state "
            "budget" % (n_gen, EXACT_MAX_GENERATORS))
    if trials == 0 and not run_exact:
        raise LoopModelError("need Monte Carlo trials or exact enumeration")
    if trials != 0 and trials < MIN_MC_TRIALS:
        raise LoopModelError("Monte Carlo needs at least %d trials"
                             % MIN_MC_TRIALS)

    result = {"n_vertices": m.n_vertices,
              "n_window": int(params.window().shape[0]),
              "mean": None, "variance": None, "exact": None}

    if m.n_vertices == 0:
        base = float(m.free_loops)
        result.update(mean=base, variance=0.0)
        if run_exact:
            result["exact"] = {"mean": base, "variance": 0.0}
        return result

    canon = m.canonical_pairing()
    if run_exact:
        p1 = 1.0 - params.p
        mean_e, var_e = kernels.exact_loop_stats(canon, p1, tied)
        result["exact"] = {"mean": float(mean_e) + m.free_loops,
                           "variance": float(var_e)}

    if trials:
        rng = np.random.default_rng(seed)
        draws = rng.random((trials, m.n_vertices))
        states = (draws >= params.p[None, :]).astype(np.int64)
        for v, w in pairs:
            states[:, w] = states[:, v]
        counts = np.empty(trials, dtype=np.int64)
        kernels.loop_mc_counts(canon, states, counts)
        counts = counts + m.free_loops
        result["mean"] = float(np.mean(counts))
        result["variance"] = float(np.var(counts, ddof=1)) if trials > 1 \
            else 0.0
        result["se_mean"] = float(np.std(counts, ddof=1) / np.sqrt(trials)) \
            if trials > 1 else 0.0
    return result


VARIANCE_CSV_HEADER = ("map_id,n_vertices,n_window,mean,variance,"
                       "exact_mean,exact_variance")


def variance_csv_row(map_id, result):
    ex = result.get("exact")
    return "%s,%d,%d,%.10g,%.10g,%s,%s" % (
        map_id, result["n_vertices"], result["n_window"],
        result["mean"] if result["mean"] is not None else float("nan"),
        result["variance"] if result["variance"] is not None else float("nan"),
        "%.10g" % ex["mean"] if ex else "",
        "%.10g" % ex["variance"] if ex else "")


# --------------------------------------------------------------------------
# map generator
# --------------------------------------------------------------------------

def _seed_map(free_loops=0):
    """One vertex with two nested circular edges."""
    return FourRegularMap.from_pairing(np.array([1, 0, 3, 2]),
                                       free_loops=free_loops)


def _insert_vertex(m, h1, h2, variant):
    """Split edges at half-edges ``h1 != h2`` through a new 4-valent vertex.

    The four loose strand ends (h1, its old partner, h2, its old partner)
    are attached to the new vertex's slots in an order set by ``variant``;
    only some orders keep the embedding planar, which the caller validates.
    """
    n_v = m.n_vertices
    s = [4 * n_v + k for k in range(4)]
    a1 = int(m.pairing[h1])
    a2 = int(m.pairing[h2])
    order = ((a1, h2, a2), (a2, h2, a1), (h2, a1, a2),
             (h2, a2, a1), (a1, a2, h2), (a2, a1, h2))[variant]
    ends = (h1,) + order
    pairing = np.concatenate([m.pairing, np.zeros(4, dtype=np.int64)])
    for k, e in enumerate(ends):
        pairing[e] = s[k]
        pairing[s[k]] = e
    rotation = np.arange(4 * (n_v + 1), dtype=np.int64).reshape(-1, 4)
    return FourRegularMap(rotation=rotation, pairing=pairing,
                          free_loops=m.free_loops)


def random_planar_map(n_vertices, seed=0, free_loops=0):
    """Random planar 4-regular map grown by face-local edge splits.

    Starting from a single vertex with two circular edges, each step picks a
    face, two half-edges on its walk, and a random strand attachment that
    the planarity check accepts; every intermediate map satisfies the Euler
    identity, so the result is planar by construction.
    """
    if n_vertices < 1:
        raise LoopModelError("need at least one vertex")
    rng = np.random.default_rng(seed)
    m = _seed_map(free_loops=free_loops)
    while m.n_vertices < n_vertices:
        fs = faces(m)
        weights = np.array([len(f) for f in fs], dtype=float)
        f = fs[rng.choice(len(fs), p=weights / weights.sum())]
        if len(f) < 2:
            continue
        i, j = rng.choice(len(f), size=2, replace=False)
        h1, h2 = int(f[i]), int(f[j])
        if h2 == int(m.pairing[h1]):
            continue
        variants = rng.permutation(6)
        for variant in variants:
            cand = _insert_vertex(m, h1, h2, int(variant))
            try:
                faces(cand)
            except NonPlanarError:
                continue
            m = cand
            break
    return m


def random_projective_double(n_pairs, seed=0):
    """Antipodally symmetric double of a random planar map.

    The double carries two mirrored copies of a planar map; vertex ``v`` of
    the base is identified with vertex ``v + n`` of the mirror through the
    orientation-reversing slot reflection, the convention under which tied
    state indices agree.
    """
    base = random_planar_map(n_pairs, seed=seed)
    n = base.n_vertices
    refl = np.array(ANTIPODAL_REFLECTION, dtype=np.int64)

    def mirror(h):
        return 4 * ((h >> 2) + n) + refl[h & 3]

    pairing = np.empty(8 * n, dtype=np.int64)
    pairing[: 4 * n] = base.pairing
    for h in range(4 * n):
        pairing[mirror(h)] = mirror(int(base.pairing[h]))
    antipodal = np.empty(8 * n, dtype=np.int64)
    for h in range(4 * n):
        antipodal[h] = mirror(h)
        antipodal[mirror(h)] = h
    rotation = np.arange(8 * n, dtype=np.int64).reshape(-1, 4)
    return FourRegularMap(rotation=rotation, pairing=pairing,
                          free_loops=2 * base.free_loops,
                          antipodal=antipodal)


# --------------------------------------------------------------------------
# plain-text map format (shared with the traced-graph export)
# --------------------------------------------------------------------------

def map_to_text(m):
    """Header ``V E``, one rotation line per vertex, one line per edge."""
    lines = ["%d %d" % (m.n_vertices, m.n_edges)]
    for v in range(m.n_vertices):
        lines.append(" ".join(str(int(h)) for h in m.rotation[v]))
    for h, h2 in m.edges:
        lines.append("%d %d" % (h, h2))
    return "\n".join(lines) + "\n"


def map_from_text(text, free_loops=0, antipodal=None):
    rows = [line.split() for line in text.strip().splitlines()
            if line.strip()]
    n_v, n_e = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + n_v + n_e:
        raise LoopModelError("map text has %d lines, expected %d"
                             % (len(rows), 1 + n_v + n_e))
    rotation = np.array([[int(x) for x in rows[1 + v]] for v in range(n_v)],
                        dtype=np.int64).reshape(n_v, 4)
    pairing = np.full(4 * n_v, -1, dtype=np.int64)
    for r in rows[1 + n_v:]:
        h, h2 = int(r[0]), int(r[1])
        pairing[h] = h2
        pairing[h2] = h
    return FourRegularMap(rotation=rotation, pairing=pairing,
                          free_loops=free_loops, antipodal=antipodal)
