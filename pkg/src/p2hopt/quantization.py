"""Optimal quantizers of the 2D standard Gaussian and their cubature use.

A quantizer is L points with the probability masses of their Voronoi cells;
expectations over the Gaussian innovation are then probability-weighted
sums over the points pushed through the state transition.  Cells are built
by clipping a bounding box against perpendicular bisectors, fan-triangulated
from their sites, and integrated with a conical-product Gauss rule on the
reference triangle (exact through total degree 11); long triangle edges are
subdivided so the Gaussian is resolved everywhere.

File format (bundled under ``data/``): first line ``L d``, then L lines
``x y p`` whitespace-separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.spatial import cKDTree

BOX_HALF_WIDTH = 8.0  # clip box for unbounded cells; Gaussian mass outside < 1e-14


class QuantizerFormatError(ValueError):
    """Malformed or inconsistent quantizer file."""


@dataclass(frozen=True)
class Quantizer:
    points: np.ndarray      # (L, 2)
    probs: np.ndarray       # (L,)
    distortion: float       # E |X - q(X)|^2
    source: str             # "loaded" | "lloyd-generated" | "transformed"
    transform: tuple | None = None   # (A, b) provenance if affine-mapped

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be (L, 2)")
        if len(self.probs) != len(self.points):
            raise ValueError("points/probs length mismatch")
        if np.any(self.probs < -1e-12):
            raise ValueError("negative cell probability")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @property
    def L(self):
        return len(self.points)


@dataclass(frozen=True)
class VoronoiCell:
    site_index: int
    site: np.ndarray        # (2,) generator point, inside the cell
    vertices: np.ndarray    # (m, 2) counterclockwise loop, clipped to the box

    def area(self):
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def load_quantizer(path) -> Quantizer:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return _parse_quantizer(lines, name=str(path))


def parse_quantizer_text(text: str, name: str = "<text>") -> Quantizer:
    return _parse_quantizer(text.splitlines(), name=name)


def _parse_quantizer(lines, name):
    body = [ln for ln in lines if ln.strip()]
    if not body:
        raise QuantizerFormatError(f"{name}: empty file")
    head = body[0].split()
    try:
        L, d = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise QuantizerFormatError(f"{name}:1: expected header 'L d', got {body[0]!r}")
    if d != 2:
        raise QuantizerFormatError(f"{name}: only dimension 2 is supported, got {d}")
    if len(body) - 1 != L:
        raise QuantizerFormatError(f"{name}: header promises {L} points, found {len(body) - 1}")
    points = np.empty((L, 2))
    probs = np.empty(L)
    for i, ln in enumerate(body[1:], start=2):
        parts = ln.split()
        try:
            points[i - 2] = (float(parts[0]), float(parts[1]))
            probs[i - 2] = float(parts[2])
        except (ValueError, IndexError):
            raise QuantizerFormatError(f"{name}:{i}: malformed point line {ln!r}")
    total = probs.sum()
    if abs(total - 1.0) >= 1e-6:
        raise QuantizerFormatError(
            f"{name}: probabilities sum to {total:.8f}; off by >= 1e-6")
    probs = probs / total
    distortion = _sample_distortion_estimate(points, probs)
    return Quantizer(points=points, probs=probs, distortion=distortion, source="loaded")


def save_quantizer(path, q: Quantizer):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{q.L} 2\n")
        for (x, y), p in zip(q.points, q.probs):
            fh.write(f"{float(x)!r} {float(y)!r} {float(p)!r}\n")


def bundled_quantizer(L: int) -> Quantizer:
    """One of the shipped standard-Gaussian quantizers (L in 50/100/200/400)."""
    ref = resources.files("p2hopt").joinpath(f"data/quantizer_L{L}.txt")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled quantizer for L={L}")
    return parse_quantizer_text(ref.read_text(encoding="utf-8"), name=ref.name)


def _sample_distortion_estimate(points, probs, n=200_000, seed=0):
    """Gaussian distortion of the loaded point set (fixed-seed MC estimate)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    _, idx = cKDTree(points).query(x)
    return float(np.mean(np.sum((x - points[idx]) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# Lloyd generation
# ---------------------------------------------------------------------------


def lloyd_generate(L: int, sample_count: int, seed: int, max_iter: int = 500,
                   rel_tol: float = 1e-6) -> Quantizer:
    """Randomized Lloyd iteration on Gaussian samples; deterministic per seed."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if sample_count < 100 * L:
        raise ValueError("need at least 100 samples per point")
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((sample_count, 2))
    points = samples[rng.choice(sample_count, size=L, replace=False)].copy()
    last = np.inf
    for _ in range(max_iter):
        dists, idx = cKDTree(points).query(samples)
        distortion = float(np.mean(dists ** 2))
        counts = np.bincount(idx, minlength=L)
        sums_x = np.bincount(idx, weights=samples[:, 0], minlength=L)
        sums_y = np.bincount(idx, weights=samples[:, 1], minlength=L)
        empty = counts == 0
        nonzero = np.maximum(counts, 1)
        points = np.column_stack([sums_x / nonzero, sums_y / nonzero])
        if np.any(empty):
            # reseed dead points at the worst-quantized samples
            worst = np.argsort(dists)[-int(empty.sum()):]
            points[empty] = samples[worst]
        if last - distortion < rel_tol * max(distortion, 1e-300) and not np.any(empty):
            break
        last = distortion
    dists, idx = cKDTree(points).query(samples)
    probs = np.bincount(idx, minlength=L).astype(float) / sample_count
    return Quantizer(points=points, probs=probs / probs.sum(),
                     distortion=float(np.mean(dists ** 2)), source="lloyd-generated")


# ---------------------------------------------------------------------------
# Voronoi cells by half-plane clipping
# ---------------------------------------------------------------------------


def _clip_halfplane(poly, normal, offset):
    """Keep the part of the polygon with normal . x <= offset."""
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        dp = normal[0] * p[0] + normal[1] * p[1] - offset
        dq = normal[0] * q[0] + normal[1] * q[1] - offset
        if dp <= 0:
            out.append(p)
            if dq > 0:
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif dq <= 0:
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def voronoi_cells(points, bounding_half_width: float = BOX_HALF_WIDTH):
    """Voronoi cells of the point set, clipped to the centered square box."""
    points = np.asarray(points, dtype=float)
    L = len(points)
    tree = cKDTree(points)
    pairs = tree.query_pairs(r=1e-12)
    if pairs:
        raise ValueError(f"duplicate quantizer points: {sorted(pairs)[:3]}")
    h = bounding_half_width
    if np.any(np.abs(points) > h):
        raise ValueError("bounding box does not contain all points")
    box = [(-h, -h), (h, -h), (h, h), (-h, h)]
    cells = []
    for i in range(L):
        poly = box
        p_i = points[i]
        for j in range(L):
            if j == i or not poly:
                continue
            p_j = points[j]
            normal = p_j - p_i
            offset = 0.5 * (np.dot(p_j, p_j) - np.dot(p_i, p_i))
            poly = _clip_halfplane(poly, normal, offset)
        cells.append(VoronoiCell(site_index=i, site=p_i.copy(),
                                 vertices=np.asarray(poly)))
    return cells


# ---------------------------------------------------------------------------
# Triangle quadrature (conical product rule, exact to total degree 11)
# ---------------------------------------------------------------------------


def _reference_triangle_rule(n: int = 6):
    """Gauss-Legendre x Gauss-Jacobi(1,0) product rule on the unit triangle."""
    from scipy.special import roots_jacobi, roots_legendre

    x_leg, w_leg = roots_legendre(n)
    x_jac, w_jac = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (x_jac + 1.0)           # with weight (1-u) absorbed in w_jac
    v = 0.5 * (x_leg + 1.0)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    nodes_x = uu.ravel()
    nodes_y = ((1.0 - uu) * vv).ravel()
    weights = (np.outer(w_jac, w_leg) / 8.0).ravel()
    return np.column_stack([nodes_x, nodes_y]), weights


_TRI_NODES, _TRI_WEIGHTS = _reference_triangle_rule(6)


def _subdivide(tri, max_edge):
    """4-way subdivision until edges resolve the Gaussian scale.

    Far from the origin the density is negligible, so the edge budget
    relaxes with the triangle's closest approach to the origin.
    """
    stack = [np.asarray(tri, dtype=float)]
    out = []
    while stack:
        t = stack.pop()
        e = max(np.linalg.norm(t[0] - t[1]), np.linalg.norm(t[1] - t[2]),
                np.linalg.norm(t[2] - t[0]))
        near = min(np.linalg.norm(t[0]), np.linalg.norm(t[1]), np.linalg.norm(t[2]))
        budget = max_edge * min(8.0, max(1.0, near / 2.5))
        if e <= budget:
            out.append(t)
            continue
        m01 = 0.5 * (t[0] + t[1])
        m12 = 0.5 * (t[1] + t[2])
        m20 = 0.5 * (t[2] + t[0])
        stack.extend([np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                      np.array([m20, m12, t[2]]), np.array([m01, m12, m20])])
    return out


def integrate_over_cell(cell: VoronoiCell, integrand, max_edge: float = 0.25):
    """Integral of ``integrand(points) -> values`` over the cell.

    Fan triangulation from the cell's site; each triangle is mapped to the
    reference triangle, the constant Jacobian being twice its area.
    Degenerate slivers (zero area) drop out through the Jacobian.
    """
    verts = cell.vertices
    if len(verts) < 3:
        return 0.0
    m = len(verts)
    tris = []
    for i in range(m):
        tris.extend(_subdivide((cell.site, verts[i], verts[(i + 1) % m]), max_edge))
    corners = np.asarray(tris)                    # (T, 3, 2)
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    jac = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                 - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))  # 2 * area
    u = _TRI_NODES[:, 0][None, :, None]
    v = _TRI_NODES[:, 1][None, :, None]
    pts = (1 - u - v) * a[:, None, :] + u * b[:, None, :] + v * c[:, None, :]
    vals = integrand(pts.reshape(-1, 2)).reshape(len(tris), -1)
    total = float(np.sum(jac * (vals @ _TRI_WEIGHTS)))
    return total


def standard_gaussian_pdf(points):
    points = np.asarray(points, dtype=float)
    return np.exp(-0.5 * np.sum(points**2, axis=-1)) / (2.0 * math.pi)


def cell_probability(cell: VoronoiCell, density=standard_gaussian_pdf,
                     max_edge: float = 0.25) -> float:
    return integrate_over_cell(cell, density, max_edge=max_edge)


def cell_probabilities(points, density=standard_gaussian_pdf,
                       bounding_half_width: float = BOX_HALF_WIDTH,
                       max_edge: float = 0.25):
    cells = voronoi_cells(points, bounding_half_width)
    return np.array([cell_probability(c, density, max_edge) for c in cells])


def quantizer_distortion(q: Quantizer, density=standard_gaussian_pdf,
                         bounding_half_width: float = BOX_HALF_WIDTH) -> float:
    """E |X - q(X)|^2 by cell-wise quadrature (deterministic)."""
    cells = voronoi_cells(q.points, bounding_half_width)
    total = 0.0
    for cell in cells:
        site = q.points[cell.site_index]

        def integrand(pts, site=site):
            return density(pts) * np.sum((pts - site) ** 2, axis=-1)

        total += integrate_over_cell(cell, integrand)
    return total


def refine_with_exact_probabilities(q: Quantizer, polish_iters: int = 0) -> Quantizer:
    """Replace sampled masses by quadrature cell masses; optionally run
    exact Lloyd steps (cell barycenters under the Gaussian) first."""
    points = q.points.copy()
    for _ in range(polish_iters):
        cells = voronoi_cells(points)
        new_points = points.copy()
        for cell in cells:
            mass = integrate_over_cell(cell, standard_gaussian_pdf)
            if mass <= 0:
                continue
            mx = integrate_over_cell(
                cell, lambda p: standard_gaussian_pdf(p) * p[:, 0])
            my = integrate_over_cell(
                cell, lambda p: standard_gaussian_pdf(p) * p[:, 1])
            new_points[cell.site_index] = (mx / mass, my / mass)
        points = new_points
    probs = cell_probabilities(points)
    probs = np.maximum(probs, 0.0)
    probs /= probs.sum()
    out = Quantizer(points=points, probs=probs, distortion=q.distortion,
                    source=q.source)
    return Quantizer(points=points, probs=probs,
                     distortion=quantizer_distortion(out), source=q.source)


# ---------------------------------------------------------------------------
# Affine transform and cubature
# ---------------------------------------------------------------------------


def transform_quantizer(q: Quantizer, A, b) -> Quantizer:
    """Affine image A x + b of the quantizer; optimality is preserved by
    linear maps, probabilities are unchanged."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape != (2, 2) or abs(np.linalg.det(A)) < 1e-300:
        raise ValueError("A must be an invertible 2x2 matrix")
    # mean squared singular value: exact distortion scale for similarity
    # transforms, first-order estimate otherwise
    scale = 0.5 * float(np.sum(A * A))
    return Quantizer(points=q.points @ A.T + b, probs=q.probs.copy(),
                     distortion=q.distortion * scale, source="transformed",
                     transform=(A.copy(), b.copy()))


def cubature_expectation(f, q: Quantizer, transition, state_transform=None):
    """Probability-weighted sum of f over the transition images of the atoms.

    ``transition`` is a GaussianTransition in (log W, S) coordinates; each
    standard-normal atom eps maps to (exp(mu + A eps)_W, (mu + A eps)_S).
    ``state_transform`` may override that default push-forward.
    """
    z = q.points @ transition.chol.T + transition.mean
    if state_transform is None:
        w = np.exp(z[:, 0])
        s = z[:, 1]
    else:
        w, s = state_transform(z)
    vals = np.asarray(f(w, s), dtype=float)
    return float(np.dot(q.probs, vals))
