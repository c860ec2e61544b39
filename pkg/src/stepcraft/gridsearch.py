"""Exact argmax of the goal objective over the 8-D target-offset lattice.

The objective is V(obs with p written into its offset segment) plus a
weighted directional term that is linear in p. A dense sweep of the
default 5^8 = 390,625 lattice through the value network costs ~1.7 s in
float64 on one core, far over the selection budget, so the engine prunes:

1. Branch on the four heading-active axes (the directional term depends
   on those alone, so it is exact per branch). For each of the R^4
   branches, evaluate one lattice point exactly and bound the value
   network's variation over the four free axes with a spectral-norm
   Lipschitz bound. Branches whose upper bound falls below the best
   evaluated point cannot contain the maximum.
2. Sweep the surviving branches in float32 with precomputed first-layer
   tables, keeping every point whose screened score is within a rigorous
   float32 round-off bound of the screened maximum.
3. Re-evaluate those candidates in float64 and take the argmax, breaking
   ties toward the lowest lattice index.

Every stage only discards points that provably cannot be the maximum, so
the result equals a dense enumeration whenever the top two scores are
separated by more than accumulated float64 round-off (~1e-12), and exact
ties resolve identically by index.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from .tg import PAIR_FIRST, PAIR_SECOND

EPS32 = float(np.finfo(np.float32).eps) / 2.0   # unit round-off, 2^-24
DELTA_SAFETY = 4.0


def axis_values(half_width: float, points_per_axis: int) -> np.ndarray:
    return np.linspace(-half_width, half_width, points_per_axis)


def heading_weights(yaw: float, alpha: float, active_feet) -> np.ndarray:
    """Gradient of the directional term: per-coordinate weights (8,)."""
    heading = np.array([math.cos(alpha), math.sin(alpha)])
    rz = np.array([[math.cos(yaw), -math.sin(yaw)],
                   [math.sin(yaw), math.cos(yaw)]])
    g2 = heading @ rz
    w = np.zeros(8)
    for foot in active_feet:
        w[2 * foot] = g2[0]
        w[2 * foot + 1] = g2[1]
    return w


def decode_lattice_point(flat: int, vals: np.ndarray) -> np.ndarray:
    """Lattice coordinates of a flat index (axis 0 slowest, C order)."""
    r = len(vals)
    p = np.empty(8)
    for axis in range(8):
        p[axis] = vals[(flat // r ** (7 - axis)) % r]
    return p


def _spectral_norm(w: np.ndarray) -> float:
    if w.shape[0] == 1 or w.shape[1] == 1:
        return float(np.linalg.norm(w))
    return float(np.linalg.svd(w, compute_uv=False)[0])


def _gamma(n: int) -> float:
    # standard rounding-accumulation factor n*u / (1 - n*u)
    nu = n * EPS32
    return nu / (1.0 - nu)


class PrunedLatticeSearch:
    """Reusable search engine bound to one value network and one lattice.

    Tables that depend only on (network, lattice geometry, active pair)
    are built once; each query then costs one exact pass over the R^4
    branch points plus a float32 sweep of the unpruned branches.
    """

    def __init__(self, net: nn.MlpNetwork, half_width: float,
                 points_per_axis: int, p_slice: slice):
        if len(net.weights) < 2:
            raise ValueError("pruned search needs at least one hidden layer")
        self.net = net
        self.p_slice = p_slice
        self.r = points_per_axis
        self.vals = axis_values(half_width, points_per_axis)
        w1 = net.weights[0]
        if p_slice.stop - p_slice.start != 8:
            raise ValueError("the offset segment must have 8 entries")
        w1p = w1[:, p_slice]
        # per-axis first-layer contributions, (8, R, h1)
        self.axis_vecs = np.array([np.outer(self.vals, w1p[:, a]) for a in range(8)])

        self.mid = [(w.astype(np.float32), b.astype(np.float32))
                    for w, b in zip(net.weights[1:], net.biases[1:])]
        self.mid64 = list(zip(net.weights[1:], net.biases[1:]))

        # rounding-bound ingredients: max abs row sums and biases per layer
        self.row_sums = [float(np.max(np.sum(np.abs(w), axis=1)))
                         for w in net.weights[1:]]
        self.bias_max = [float(np.max(np.abs(b))) if b.size else 0.0
                         for b in net.biases[1:]]
        self.mid_norm = math.prod(_spectral_norm(w) for w in net.weights[1:-1]) \
            * _spectral_norm(net.weights[-1])

        self._pair_tables = {
            tuple(sorted(pair)): self._build_pair(pair)
            for pair in (PAIR_FIRST, PAIR_SECOND)
        }

    # -- construction --------------------------------------------------------

    def _build_pair(self, pair) -> dict:
        r = self.r
        active_axes = sorted(a for foot in pair for a in (2 * foot, 2 * foot + 1))
        free_axes = [a for a in range(8) if a not in active_axes]
        idx = np.indices((r,) * 4).reshape(4, -1)

        def table(axes):
            t = self.axis_vecs[axes[0]][:, None, None, None, :] \
                + self.axis_vecs[axes[1]][None, :, None, None, :] \
                + self.axis_vecs[axes[2]][None, None, :, None, :] \
                + self.axis_vecs[axes[3]][None, None, None, :, :]
            return t.reshape(r ** 4, -1)

        def flat(axes):
            mult = np.array([r ** (7 - a) for a in axes], dtype=np.int64)
            return (idx * mult[:, None]).sum(axis=0)

        branch = table(active_axes)
        free = table(free_axes)
        # Lipschitz constant of V over the free axes only
        w1_free_cols = [self.p_slice.start + a for a in free_axes]
        lip = _spectral_norm(self.net.weights[0][:, w1_free_cols]) * self.mid_norm
        # anchor each branch at the lattice point whose free values are
        # closest to zero; the bound radius covers the rest of the box
        k0 = int(np.argmin(np.abs(self.vals)))
        anchor_free_vec = free[int(sum(k0 * r ** (3 - i) for i in range(4)))]
        radius = math.sqrt(4.0) * float(np.max(np.abs(self.vals - self.vals[k0])))
        coords = self.vals[idx.T]   # (R^4, 4) active-axis values
        return {
            "active_axes": active_axes,
            "branch64": branch,
            "branch_flat": flat(active_axes),
            "coords": coords,
            "free64": free,
            "free32": free.astype(np.float32),
            "free_flat": flat(free_axes),
            "anchor_free": anchor_free_vec,
            "lipschitz": lip * (1.0 + 1e-9),
            "radius": radius * (1.0 + 1e-9),
        }

    # -- evaluation helpers ---------------------------------------------------

    def _tail64(self, z1: np.ndarray) -> np.ndarray:
        h = np.tanh(z1)
        for k, (w, b) in enumerate(self.mid64):
            h = h @ w.T + b
            if k < len(self.mid64) - 1:
                h = np.tanh(h)
        return h[:, 0]

    def _tail32(self, z1: np.ndarray) -> np.ndarray:
        h = np.tanh(z1)
        for k, (w, b) in enumerate(self.mid):
            h = h @ w.T + b
            if k < len(self.mid) - 1:
                np.tanh(h, out=h)
        return h[:, 0]

    def _float32_bound(self, max_abs_z1: float) -> float:
        """Sound bound on |float32 score - float64 score| for any lattice
        point, from the layer magnitudes (tanh outputs are within +-1)."""
        err = 3.0 * EPS32 * max_abs_z1   # two casts plus one add on z1
        for k, (rs, bm) in enumerate(zip(self.row_sums, self.bias_max)):
            err += 8.0 * EPS32           # float32 tanh evaluation error
            err = rs * err + _gamma(self.mid64[k][0].shape[1] + 4) * (rs + bm)
        return err * DELTA_SAFETY

    # -- the search -----------------------------------------------------------

    def search(self, base_obs: np.ndarray, yaw: float, active_feet,
               kappa_hd: float, alpha: float):
        """Exact lattice argmax; returns (p, flat_index).

        base_obs is the full observation; its offset segment is ignored
        (treated as overwritten by each lattice point)."""
        tables = self._pair_tables.get(tuple(sorted(active_feet)))
        if tables is None:
            raise ValueError(f"unsupported active pair {active_feet}")
        net = self.net
        base = np.array(base_obs, dtype=np.float64)
        base[self.p_slice] = 0.0
        a0 = net.weights[0] @ base + net.biases[0]

        g8 = heading_weights(yaw, alpha, active_feet)
        g_active = g8[tables["active_axes"]]
        h_branch = tables["coords"] @ g_active          # directional term per branch
        dir_branch = kappa_hd * h_branch

        ab = a0[None, :] + tables["branch64"]           # (R^4, h1)
        v_anchor = self._tail64(ab + tables["anchor_free"][None, :])
        anchor_scores = v_anchor + dir_branch
        best_lower = float(np.max(anchor_scores))

        slack = tables["lipschitz"] * tables["radius"]
        cushion = 1e-9 * max(1.0, abs(best_lower))
        survivors = np.flatnonzero(anchor_scores + slack + cushion >= best_lower)

        # float32 sweep of the surviving branches
        free32 = tables["free32"]
        n_free = free32.shape[0]
        ab32 = ab.astype(np.float32)
        max_abs_z1 = float(np.max(np.abs(ab[survivors]))) + float(np.max(np.abs(tables["free64"])))
        delta = self._float32_bound(max_abs_z1)

        scores = np.empty((len(survivors), n_free))
        rows_per_chunk = max(1, 65536 // n_free)
        for c0 in range(0, len(survivors), rows_per_chunk):
            chunk = survivors[c0:c0 + rows_per_chunk]
            z1 = (ab32[chunk][:, None, :] + free32[None, :, :]).reshape(
                len(chunk) * n_free, -1)
            v32 = self._tail32(z1).astype(np.float64).reshape(len(chunk), n_free)
            scores[c0:c0 + len(chunk)] = v32 + dir_branch[chunk][:, None]

        threshold = float(np.max(scores)) - 2.0 * delta - 1e-12
        cand_b, cand_f = np.nonzero(scores >= threshold)
        cand_branches = survivors[cand_b]

        # exact confirmation of the candidates
        exact = np.empty(len(cand_b))
        for c0 in range(0, len(cand_b), 65536):
            sel = slice(c0, c0 + 65536)
            z1 = ab[cand_branches[sel]] + tables["free64"][cand_f[sel]]
            exact[sel] = self._tail64(z1) + dir_branch[cand_branches[sel]]
        flats = tables["branch_flat"][cand_branches] + tables["free_flat"][cand_f]
        best = float(np.max(exact))
        flat = int(np.min(flats[exact == best]))
        return decode_lattice_point(flat, self.vals), flat


def dense_lattice_argmax(base_obs: np.ndarray, yaw: float, active_feet,
                         net: nn.MlpNetwork, half_width: float,
                         points_per_axis: int, p_slice: slice,
                         kappa_hd: float, alpha: float, chunk: int = 16384):
    """Reference search: evaluate every lattice point in float64.

    Same contract as PrunedLatticeSearch.search; first maximum wins."""
    vals = axis_values(half_width, points_per_axis)
    r = points_per_axis
    total = r ** 8
    divisors = np.array([r ** (7 - a) for a in range(8)], dtype=np.int64)
    g8 = heading_weights(yaw, alpha, active_feet)
    tile = np.tile(np.asarray(base_obs, float), (chunk, 1))
    best_score = -math.inf
    best_flat = -1
    for start in range(0, total, chunk):
        n = min(chunk, total - start)
        flat = np.arange(start, start + n, dtype=np.int64)
        p = vals[(flat[:, None] // divisors) % r]
        tile[:n, p_slice] = p
        scores = nn.forward(net, tile[:n])[:, 0] + kappa_hd * (p @ g8)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score = float(scores[k])
            best_flat = start + k
    return decode_lattice_point(best_flat, vals), best_flat
