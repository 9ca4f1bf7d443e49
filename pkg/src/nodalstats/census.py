"""Counting nodal domains and nodal loops on triangulated spheres.

The sphere is discretized by geodesic subdivision of the icosahedron (the
icosahedron is centrally symmetric, so every vertex, edge, and triangle has an
exact antipodal partner at every subdivision level; this is what makes the
projective mode possible). Field signs live on grid vertices. Two independent
counts are made per census:

* domains: connected components of the graph on same-sign grid edges;
* loops: connected components of the cut-edge graph (edges whose endpoints
  have opposite signs, two cut edges adjacent when they share a triangle).

Every mixed triangle has exactly two cut edges, so the cut graph is a
disjoint union of cycles: the marching approximation of the nodal curves. On
the sphere the two counts satisfy loops = domains - 1 exactly (discrete
Jordan separation); the census asserts this identity instead of deriving one
count from the other.

Projective mode counts orbits of domains and curves under the antipodal
involution; it requires a sample whose active degrees share one parity, since
only then does the nodal picture descend to the quotient.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .field import FieldSample

ICOSA_EDGE_ARC = math.acos(1.0 / math.sqrt(5.0))
DEFAULT_MAX_LEVEL = 9
SIGN_TOL_FACTOR = 1e-9


class ResourceError(RuntimeError):
    """Grid construction would exceed the memory budget."""

    def __init__(self, message, required_level):
        super().__init__(message)
        self.required_level = required_level


class CensusInternalError(RuntimeError):
    """An exact structural identity failed; indicates a bug, not noise."""


# --------------------------------------------------------------------------
# geodesic icosahedral grids
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereGrid:
    """Immutable triangulated sphere (unit directions; radius applied later).

    Triangles are oriented counterclockwise seen from outside. ``h`` is the
    maximum cell diameter in radians. The antipodal index maps are present
    only in projective mode.
    """

    level: int
    mode: str
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    h: float
    antipodal_vertex: np.ndarray = None
    antipodal_edge: np.ndarray = None
    antipodal_triangle: np.ndarray = None

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def centroids(self, tri_indices=None):
        tri = self.triangles if tri_indices is None else self.triangles[tri_indices]
        c = self.vertices[tri].mean(axis=1)
        return c / np.linalg.norm(c, axis=1, keepdims=True)


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ], dtype=np.int64)
    # orient every face counterclockwise seen from outside
    for i, (a, b, c) in enumerate(faces):
        if np.linalg.det(verts[[a, b, c]]) < 0:
            faces[i] = (a, c, b)
    return verts, faces


def _subdivide(verts, faces):
    t = faces.shape[0]
    raw = np.concatenate([faces[:, (0, 1)], faces[:, (1, 2)], faces[:, (2, 0)]])
    uniq, inv = np.unique(np.sort(raw, axis=1), axis=0, return_inverse=True)
    mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    new_verts = np.vstack([verts, mids])
    mid_ids = (verts.shape[0] + inv).reshape(3, t)
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    ab, bc, ca = mid_ids
    children = np.empty((4 * t, 3), dtype=np.int64)
    children[0::4] = np.stack([a, ab, ca], axis=1)
    children[1::4] = np.stack([ab, b, bc], axis=1)
    children[2::4] = np.stack([ca, bc, c], axis=1)
    children[3::4] = np.stack([ab, bc, ca], axis=1)
    return new_verts, children


_LEVEL_CACHE = {}


def _level_arrays(level):
    if level not in _LEVEL_CACHE:
        if level == 0:
            arrays = _icosahedron()
        else:
            v, f = _level_arrays(level - 1)
            arrays = _subdivide(v, f)
        _LEVEL_CACHE[level] = arrays
    return _LEVEL_CACHE[level]


def _edge_tables(faces):
    """Edge list plus per-triangle edge ids and per-edge triangle pairs."""
    t = faces.shape[0]
    raw = np.concatenate([faces[:, (0, 1)], faces[:, (1, 2)], faces[:, (2, 0)]])
    edges, inv = np.unique(np.sort(raw, axis=1), axis=0, return_inverse=True)
    tri_edges = inv.reshape(3, t).T.copy()
    if inv.size != 2 * edges.shape[0]:
        raise CensusInternalError("closed surface needs every edge in two triangles")
    order = np.argsort(inv, kind="stable")
    if not np.array_equal(inv[order], np.repeat(np.arange(edges.shape[0]), 2)):
        raise CensusInternalError("edge shared by a triangle count other than two")
    edge_tris = (order % t).reshape(-1, 2)
    return edges, tri_edges, edge_tris


def _max_diameter(verts, faces):
    tri = verts[faces]
    h = 0.0
    for (i, j) in ((0, 1), (1, 2), (0, 2)):
        d = np.einsum("ij,ij->i", tri[:, i], tri[:, j])
        h = max(h, float(np.arccos(np.clip(d, -1, 1)).max()))
    return h


def _antipodal_index(verts):
    def key(v):
        # adding 0.0 collapses -0.0 and 0.0 to the same bytes
        return (np.round(v, 9) + 0.0).tobytes()

    lookup = {key(v): i for i, v in enumerate(verts)}
    out = np.empty(verts.shape[0], dtype=np.int64)
    for i, v in enumerate(verts):
        j = lookup.get(key(-v))
        if j is None:
            raise CensusInternalError("grid is not centrally symmetric")
        out[i] = j
    return out


def build_level(level, mode="sphere"):
    """Grid at an explicit subdivision level."""
    verts, faces = _level_arrays(level)
    edges, tri_edges, edge_tris = _edge_tables(faces)
    h = _max_diameter(verts, faces)
    av = ae = at = None
    if mode == "projective":
        av = _antipodal_index(verts)
        ekey = {tuple(sorted(e)): i for i, e in enumerate(edges)}
        ae = np.array([ekey[tuple(sorted((av[i], av[j])))] for i, j in edges],
                      dtype=np.int64)
        tkey = {tuple(sorted(t)): i for i, t in enumerate(faces)}
        at = np.array([tkey[tuple(sorted(av[list(t)]))] for t in faces],
                      dtype=np.int64)
    elif mode != "sphere":
        raise ValueError("mode must be 'sphere' or 'projective'")
    return SphereGrid(level=level, mode=mode, vertices=verts, triangles=faces,
                      edges=edges, tri_edges=tri_edges, edge_tris=edge_tris,
                      h=h, antipodal_vertex=av, antipodal_edge=ae,
                      antipodal_triangle=at)


def wavelength_for_degree(degree):
    return 2.0 * np.pi / np.sqrt(degree * (degree + 1.0))


GRID_SAFETY = 2.0


def build_grid(degree, oversample, mode="sphere", max_level=DEFAULT_MAX_LEVEL):
    """Smallest grid with max cell diameter <= wavelength / oversample.

    An extra halving (GRID_SAFETY) is applied beyond the stated bound: the
    minimal grid satisfies the bound but still misses occasional sub-cell
    nodal domains, and the cross-resolution agreement check selected this
    margin as the default.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if oversample < 2:
        raise ValueError("oversample must be >= 2")
    target = wavelength_for_degree(degree) / (oversample * GRID_SAFETY)
    required = max(0, math.ceil(math.log2(ICOSA_EDGE_ARC / target)))
    if required > max_level:
        raise ResourceError(
            "resolution needs subdivision level %d (max allowed %d)"
            % (required, max_level), required_level=required)
    grid = build_level(required, mode=mode)
    while grid.h > target:
        if grid.level + 1 > max_level:
            raise ResourceError(
                "resolution needs subdivision level %d (max allowed %d)"
                % (grid.level + 1, max_level), required_level=grid.level + 1)
        grid = build_level(grid.level + 1, mode=mode)
    return grid


def grid_for_sample(sample, oversample=6.0, mode="sphere",
                    max_level=DEFAULT_MAX_LEVEL):
    n = max(1, round(sample.spec.mean_degree))
    return build_grid(n, oversample, mode=mode, max_level=max_level)


# --------------------------------------------------------------------------
# census
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NodalCensus:
    """Counts plus component labelings for one sample on one grid."""

    mode: str
    n_domains: int
    n_loops: int
    sign_balance: tuple
    vertex_labels: np.ndarray
    cell_labels: np.ndarray
    flagged_cells: tuple
    n_domains_range: tuple = None
    diagnostics: dict = field(default_factory=dict)


def _vertex_signs(sample, grid):
    """Signs at grid vertices with the zero-ambiguity diagnostic.

    A vertex is zero-ambiguous when |f| < 1e-9 * gradient scale * cell arc
    (local gradient norm floored by its grid RMS, so flat spots cannot set a
    zero tolerance); the sign of an ambiguous vertex is taken at the centroid
    of its first incident cell.
    """
    vals = sample.values(grid.vertices)
    grads = sample.gradients(grid.vertices)
    gnorm = np.linalg.norm(grads, axis=1)
    grms = float(np.sqrt(np.mean(gnorm ** 2)))
    if grms <= 0.0:
        grms = 1.0
    gscale = np.maximum(gnorm, grms)
    harc = grid.h * sample.radius_L
    tol = SIGN_TOL_FACTOR * gscale * harc
    ambiguous = (np.abs(vals) < tol) | (vals == 0.0)
    signs = np.where(vals >= 0.0, 1, -1).astype(np.int8)
    if np.any(ambiguous):
        first_tri = np.full(grid.n_vertices, -1, dtype=np.int64)
        for t in range(grid.n_triangles - 1, -1, -1):
            for v in grid.triangles[t]:
                first_tri[v] = t
        amb_idx = np.nonzero(ambiguous)[0]
        cent = grid.centroids(first_tri[amb_idx])
        cvals = sample.values(cent)
        signs[amb_idx] = np.where(cvals >= 0.0, 1, -1)
    return vals, signs, ambiguous, grms


def _census_from_signs(grid, signs, ambiguous, mode):
    eu = grid.edges[:, 0]
    ev = grid.edges[:, 1]
    same = signs[eu] == signs[ev]
    vertex_labels, n_dom = kernels.uf_components(grid.n_vertices, eu, ev, same)
    cut = ~same
    curve_labels, n_curves = kernels.cut_edge_components(
        grid.edges.shape[0], grid.tri_edges, cut)

    tri_signs = signs[grid.triangles]
    n_cut_per_tri = np.sum(tri_signs != tri_signs[:, [1, 2, 0]], axis=1)
    if not np.all((n_cut_per_tri == 0) | (n_cut_per_tri == 2)):
        raise CensusInternalError("triangle with a cut-edge count other than 0 or 2")

    flagged = np.nonzero(np.all(ambiguous[grid.triangles], axis=1))[0]

    if mode == "sphere" and flagged.size == 0 and n_curves != n_dom - 1:
        raise CensusInternalError(
            "loop/domain identity violated: %d curves vs %d domains"
            % (n_curves, n_dom))

    # cell labels: pure cells inherit their vertices' domain; mixed cells take
    # the domain of the majority-sign corner pair
    pure = n_cut_per_tri == 0
    cell_labels = np.empty(grid.n_triangles, dtype=np.int64)
    cell_labels[pure] = vertex_labels[grid.triangles[pure, 0]]
    mixed_idx = np.nonzero(~pure)[0]
    if mixed_idx.size:
        ts = tri_signs[mixed_idx]
        maj = np.where(ts.sum(axis=1) > 0, 1, -1)
        pick = np.argmax(ts == maj[:, None], axis=1)
        cell_labels[mixed_idx] = vertex_labels[
            grid.triangles[mixed_idx, pick]]

    label_sign = np.zeros(n_dom, dtype=np.int8)
    label_sign[vertex_labels] = signs
    balance = (int(np.sum(label_sign > 0)), int(np.sum(label_sign < 0)))

    diagnostics = {"n_curves_marching": int(n_curves),
                   "n_ambiguous_vertices": int(np.count_nonzero(ambiguous))}

    if mode == "sphere":
        return NodalCensus(mode=mode, n_domains=int(n_dom), n_loops=int(n_curves),
                           sign_balance=balance, vertex_labels=vertex_labels,
                           cell_labels=cell_labels, flagged_cells=tuple(flagged),
                           diagnostics=diagnostics)

    # projective: orbit counts under the antipodal involution
    av = grid.antipodal_vertex
    dom_partner = np.full(n_dom, -1, dtype=np.int64)
    for v in range(grid.n_vertices):
        d = vertex_labels[v]
        if dom_partner[d] < 0:
            dom_partner[d] = vertex_labels[av[v]]
    if not np.array_equal(dom_partner[dom_partner], np.arange(n_dom)):
        raise CensusInternalError("antipodal domain pairing is not an involution")
    n_dom_proj = int((n_dom + np.sum(dom_partner == np.arange(n_dom))) // 2)

    ae = grid.antipodal_edge
    cut_idx = np.nonzero(cut)[0]
    curve_partner = np.full(n_curves, -1, dtype=np.int64)
    for e in cut_idx:
        c = curve_labels[e]
        if curve_partner[c] < 0:
            curve_partner[c] = curve_labels[ae[e]]
    if n_curves and not np.array_equal(
            curve_partner[curve_partner], np.arange(n_curves)):
        raise CensusInternalError("antipodal curve pairing is not an involution")
    n_loops_proj = int((n_curves + np.sum(curve_partner == np.arange(n_curves))) // 2)

    diagnostics["n_domains_sphere"] = int(n_dom)
    diagnostics["n_loops_sphere"] = int(n_curves)
    return NodalCensus(mode=mode, n_domains=n_dom_proj, n_loops=n_loops_proj,
                       sign_balance=balance, vertex_labels=vertex_labels,
                       cell_labels=cell_labels, flagged_cells=tuple(flagged),
                       diagnostics=diagnostics)


def count_domains(sample, grid):
    """Census of the sample's nodal pattern on the grid."""
    if grid.mode == "projective":
        parities = {l % 2 for l, w in zip(range(sample.spec.lmax + 1),
                                          sample.spec.weight_vector()) if w > 0}
        if len(parities) != 1:
            raise ValueError("projective mode needs a single-parity ensemble")
    vals, signs, ambiguous, _ = _vertex_signs(sample, grid)
    return _census_from_signs(grid, signs, ambiguous, grid.mode)


@dataclass(frozen=True)
class NodalCurves:
    """Geometry of the piecewise-linear nodal curves on a sign grid.

    One zero crossing per cut edge, the marching-curve label of each
    crossing, and the two neighboring crossings (sharing a mixed triangle),
    so each curve can be walked as a closed chain.
    """

    signs: np.ndarray       # tie-broken vertex signs actually used
    edge_ids: np.ndarray    # (n_cut,) grid edge index of each crossing
    points: np.ndarray      # (n_cut, 3) unit vectors on the PL zero set
    labels: np.ndarray      # (n_cut,) curve id in 0..n_curves-1
    neighbors: np.ndarray   # (n_cut, 2) indices into the arrays above
    n_curves: int


def nodal_curves(sample, grid):
    """Crossing points, labels, and walk structure of the nodal curves.

    Uses the same tie-broken vertex signs as :func:`count_domains`, so the
    curve count here equals that census's loop count on the sphere.
    """
    vals, signs, ambiguous, _ = _vertex_signs(sample, grid)
    eu = grid.edges[:, 0]
    ev = grid.edges[:, 1]
    cut = signs[eu] != signs[ev]
    curve_labels, n_curves = kernels.cut_edge_components(
        grid.edges.shape[0], grid.tri_edges, cut)
    cut_idx = np.nonzero(cut)[0]
    n_cut = cut_idx.size

    # crossing position by linear interpolation of the vertex values; fall
    # back to the midpoint when a tie-broken sign disagrees with the value
    a = vals[eu[cut_idx]]
    b = vals[ev[cut_idx]]
    denom = a - b
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom != 0.0, a / np.where(denom == 0.0, 1.0, denom), 0.5)
    t[~np.isfinite(t) | (t <= 0.0) | (t >= 1.0)] = 0.5
    pts = ((1.0 - t)[:, None] * grid.vertices[eu[cut_idx]]
           + t[:, None] * grid.vertices[ev[cut_idx]])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)

    # compress labels to the cut subset and collect the two triangle-sharing
    # neighbors of every crossing
    pos = np.full(grid.edges.shape[0], -1, dtype=np.int64)
    pos[cut_idx] = np.arange(n_cut)
    tri_cut = cut[grid.tri_edges]
    mixed = tri_cut.sum(axis=1) == 2
    pair_edges = grid.tri_edges[mixed][tri_cut[mixed]].reshape(-1, 2)
    neighbors = np.full((n_cut, 2), -1, dtype=np.int64)
    slot = np.zeros(n_cut, dtype=np.int64)
    for ea, eb in pair_edges:
        pa, pb = pos[ea], pos[eb]
        neighbors[pa, slot[pa]] = pb
        neighbors[pb, slot[pb]] = pa
        slot[pa] += 1
        slot[pb] += 1
    if n_cut and (np.any(slot != 2) or np.any(neighbors < 0)):
        raise CensusInternalError("cut edge without exactly two curve neighbors")
    return NodalCurves(signs=signs, edge_ids=cut_idx, points=pts,
                       labels=curve_labels[cut_idx], neighbors=neighbors,
                       n_curves=int(n_curves))


# --------------------------------------------------------------------------
# local refinement of flagged cells
# --------------------------------------------------------------------------

def refinement_probe_points(grid, tri_index, level):
    """Deterministic probe directions for one cell at one dyadic level.

    Barycentric lattice points of the triangle at spacing 2^-level plus three
    probes stepping a fraction 2^-level of the way toward each neighbor cell
    centroid.
    """
    a, b, c = grid.vertices[grid.triangles[tri_index]]
    n = 1 << level
    pts = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            k = n - i - j
            if (i, j, k) in ((n, 0, 0), (0, n, 0), (0, 0, n)):
                continue
            pts.append((i * a + j * b + k * c) / n)
    own = grid.centroids(np.array([tri_index]))[0]
    frac = 0.5 ** level
    for e in grid.tri_edges[tri_index]:
        t0, t1 = grid.edge_tris[e]
        other = t1 if t0 == tri_index else t0
        nb = grid.centroids(np.array([other]))[0]
        pts.append(own + frac * (nb - own))
    pts = np.array(pts)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def refine_ambiguous(sample, grid, census, max_extra_levels=3):
    """Probe flagged cells at up to 3 dyadic levels and recount.

    Ambiguous vertices of a flagged cell take the sign of the nearest
    unambiguous probe; probe ambiguity reuses the grid-wide gradient floor,
    since inside a degenerate patch local values and gradients are all
    rounding noise. If every probe of every level is ambiguous the flag
    persists and the census carries an n_domains uncertainty range
    [merged, split]: all persistent vertices forced to one sign, versus the
    tie-break count plus one potential extra domain per persistent vertex.
    """
    if not census.flagged_cells:
        return census
    vals, signs, ambiguous, grms = _vertex_signs(sample, grid)
    harc = grid.h * sample.radius_L
    persistent = []
    for t in census.flagged_cells:
        resolved = False
        for level in range(1, max_extra_levels + 1):
            probes = refinement_probe_points(grid, t, level)
            pv = sample.values(probes)
            pg = np.linalg.norm(sample.gradients(probes), axis=1)
            ptol = SIGN_TOL_FACTOR * np.maximum(pg, grms) * harc
            ok = (np.abs(pv) >= ptol) & (pv != 0.0)
            if not np.any(ok):
                continue
            for v in grid.triangles[t]:
                if not ambiguous[v]:
                    continue
                d = probes[ok] @ grid.vertices[v]
                best = np.argmax(d)
                signs[v] = 1 if pv[ok][best] >= 0 else -1
                ambiguous[v] = False
            resolved = True
            break
        if not resolved:
            persistent.append(t)

    out = _census_from_signs(grid, signs, ambiguous, grid.mode)
    if len(out.flagged_cells) > len(census.flagged_cells):
        raise CensusInternalError("refinement increased the flagged-cell count")
    if persistent:
        pv = sorted({int(v) for t in persistent for v in grid.triangles[t]})
        forced = signs.copy()
        lo = out.n_domains
        for s in (1, -1):
            forced[pv] = s
            alt = _census_from_signs(grid, forced, np.zeros_like(ambiguous),
                                     grid.mode)
            lo = min(lo, alt.n_domains)
        rng = (int(lo), int(out.n_domains + len(pv)))
        out = NodalCensus(mode=out.mode, n_domains=out.n_domains,
                          n_loops=out.n_loops, sign_balance=out.sign_balance,
                          vertex_labels=out.vertex_labels,
                          cell_labels=out.cell_labels,
                          flagged_cells=out.flagged_cells,
                          n_domains_range=rng, diagnostics=out.diagnostics)
    return out


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------

CSV_HEADER = "seed,degree,n_domains,n_loops,flagged_cells,wall_time_ms"


def census_csv_row(seed, degree, census, wall_time_ms):
    return "%s,%s,%d,%d,%d,%.3f" % (seed, degree, census.n_domains,
                                    census.n_loops, len(census.flagged_cells),
                                    wall_time_ms)
