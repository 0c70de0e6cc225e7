"""Exact finite-probability engine: serial event trees.

Each step hosts exactly one elementary outcome — diffusion up, diffusion down,
one of m jump marks, or default (pre-default nodes only; after default its
probability mass returns to up/down).  This serial structure makes the
one-step martingale-increment basis {compensated diffusion proxy, compensated
mark indicators, compensated default indicator} span the full mean-zero space
over the outcomes, so every terminal payoff admits an exact node-by-node
representation — the tree is the desk-scale embodiment of the weak
representation property, and doubles as an exact oracle for discrete BSDEs and
brute-force dynamic programming.

Float trees solve representations in closed form (residuals are pure rounding,
<= 1e-10 guaranteed at desk scale); ``exact=True`` builds Fraction-valued
trees (depth <= 6) whose residuals are exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "EventTree",
    "NodeRepresentation",
    "TreeBsdeResult",
    "DpResult",
    "build_tree",
    "tree_probs_from_model",
    "merton_matched_delta",
    "tree_conditional_expectation",
    "tree_representation",
    "tree_bsde",
    "tree_dp_optimize",
    "spanning_dimensions",
]

_NODE_CAP = 10**7

# branch labels
_UP, _DOWN = 0, 1


@dataclass
class _Level:
    j: np.ndarray          # up-minus-down tally per node
    tally: np.ndarray      # (size, m) mark counts
    defaulted: np.ndarray  # bool per node
    parent: np.ndarray     # index into the previous level (-1 at the root)
    label: np.ndarray      # branch taken from the parent (-1 at the root)
    prob: np.ndarray       # branch probability from the parent (1 at the root)
    child_start: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.j.shape[0]


@dataclass
class EventTree:
    """Serial event tree of depth n with m marks; label order per node is
    [up, down, mark_1..mark_m (active only), default (pre-default, q>0)]."""

    n: int
    m: int
    dt: float
    delta: float
    phi: np.ndarray         # (n,) drift folded into B-hat inside wealth/payoff
    mark_probs: np.ndarray  # (n, m)
    q: np.ndarray           # (n,) default branch probability per step
    levels: list
    exact: bool

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * float(self.dt)

    @property
    def n_leaves(self) -> int:
        return self.levels[self.n].size

    def n_nodes(self) -> int:
        return sum(lev.size for lev in self.levels)

    def active_marks(self, k: int) -> np.ndarray:
        return np.nonzero(np.asarray(self.mark_probs[k], dtype=float) > 0.0)[0]

    def branch_labels(self, k: int, defaulted: bool) -> list:
        labels = [_UP, _DOWN] + [2 + int(i) for i in self.active_marks(k)]
        if not defaulted and float(self.q[k]) > 0.0:
            labels.append(2 + self.m)
        return labels

    def branch_probs(self, k: int, defaulted: bool) -> list:
        """Probabilities in the order of branch_labels; up/down split the rest."""
        one = Fraction(1) if self.exact else 1.0
        marks = [self.mark_probs[k][i] for i in self.active_marks(k)]
        q = self.q[k] if (not defaulted and float(self.q[k]) > 0.0) else 0 * one
        p_ud = (one - sum(marks, 0 * one) - q) / 2
        probs = [p_ud, p_ud] + marks
        if not defaulted and float(self.q[k]) > 0.0:
            probs.append(q)
        return probs


def _as_array(value, shape, exact):
    if exact:
        arr = np.empty(shape, dtype=object)
        flat = np.broadcast_to(np.asarray(value, dtype=object), shape)
        for idx in np.ndindex(shape):
            arr[idx] = Fraction(flat[idx])
        return arr
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def build_tree(
    n: int,
    m: int,
    dt: float,
    delta: float,
    mark_probs=None,
    default_probs=None,
    phi=0.0,
    exact: bool = False,
) -> EventTree:
    """Build the full non-recombining serial tree.

    mark_probs: (m,) or (n, m) per-step mark probabilities; default_probs:
    scalar or (n,) per-step default probability (use 1 - exp(-int lambda) to
    mirror a hazard model); phi: scalar or (n,) drift of B-hat per step.
    Zero-probability branches are dropped at build time.
    """
    if n < 1 or m < 0:
        raise ValueError("need depth n >= 1 and mark count m >= 0")
    if exact and n > 6:
        raise ValueError("exact (rational) trees support depth n <= 6")
    mark_probs = np.zeros(m) if mark_probs is None else mark_probs
    default_probs = 0.0 if default_probs is None else default_probs
    pi = _as_array(mark_probs, (n, m), exact)
    q = _as_array(default_probs, (n,), exact)
    phi_steps = np.broadcast_to(np.asarray(phi, dtype=float), (n,)).copy()
    if float(delta) <= 0.0:
        raise ValueError("diffusion step delta must be positive")

    for k in range(n):
        total = sum((pi[k][i] for i in range(m)), q[k] * 0) + q[k]
        if any(float(pi[k][i]) < 0.0 for i in range(m)) or float(q[k]) < 0.0:
            raise ValueError("probability budget violation: negative branch probability")
        if float(total) >= 1.0:
            raise ValueError(
                "probability budget violation: mark/default mass leaves no room for up/down"
            )

    tree = EventTree(
        n=n, m=m, dt=float(dt), delta=delta if exact else float(delta),
        phi=phi_steps, mark_probs=pi, q=q, levels=[], exact=exact,
    )
    prob_dtype = object if exact else float
    root = _Level(
        j=np.zeros(1, dtype=np.int64),
        tally=np.zeros((1, m), dtype=np.int64),
        defaulted=np.zeros(1, dtype=bool),
        parent=np.full(1, -1, dtype=np.int64),
        label=np.full(1, -1, dtype=np.int64),
        prob=_as_array(1.0 if not exact else Fraction(1), (1,), exact),
    )
    tree.levels.append(root)

    total_nodes = 1
    for k in range(n):
        cur = tree.levels[k]
        labels_pre = tree.branch_labels(k, defaulted=False)
        labels_post = tree.branch_labels(k, defaulted=True)
        probs_pre = tree.branch_probs(k, defaulted=False)
        probs_post = tree.branch_probs(k, defaulted=True)

        counts = np.where(cur.defaulted, len(labels_post), len(labels_pre))
        child_start = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        cur.child_start = child_start
        size = int(counts.sum())
        total_nodes += size
        if total_nodes > _NODE_CAP:
            raise ValueError(f"tree exceeds the node cap {_NODE_CAP:g}")

        j = np.empty(size, dtype=np.int64)
        tally = np.empty((size, m), dtype=np.int64)
        defaulted = np.empty(size, dtype=bool)
        parent = np.empty(size, dtype=np.int64)
        label = np.empty(size, dtype=np.int64)
        prob = np.empty(size, dtype=prob_dtype)

        pos = 0
        for i in range(cur.size):
            labels = labels_post if cur.defaulted[i] else labels_pre
            probs = probs_post if cur.defaulted[i] else probs_pre
            for lab, p in zip(labels, probs):
                j[pos] = cur.j[i] + (1 if lab == _UP else -1 if lab == _DOWN else 0)
                tally[pos] = cur.tally[i]
                if 2 <= lab < 2 + m:
                    tally[pos, lab - 2] += 1
                defaulted[pos] = cur.defaulted[i] or lab == 2 + m
                parent[pos] = i
                label[pos] = lab
                prob[pos] = p
                pos += 1
        tree.levels.append(
            _Level(j=j, tally=tally, defaulted=defaulted, parent=parent,
                   label=label, prob=prob)
        )
    return tree


def tree_probs_from_model(levy, intensity, grid) -> tuple[np.ndarray, np.ndarray]:
    """Per-step (mark_probs, default_probs) mirroring a continuous model:
    pi_i,k = int_step zeta_i w_i dt and q_k = 1 - exp(-int_step lambda)."""
    n = grid.n_steps
    pi = np.zeros((n, levy.m))
    for i in range(levy.m):
        for k in range(n):
            pi[k, i] = levy.rate_integral(i, grid.nodes[k], grid.nodes[k + 1])
    q = np.array([
        1.0 - math.exp(-intensity.integral(grid.nodes[k], grid.nodes[k + 1]))
        for k in range(n)
    ])
    return pi, q


def merton_matched_delta(phi: float, alpha: float, dt: float) -> float:
    """Diffusion step delta* such that the one-step optimal-growth log-value of
    the symmetric two-point tree equals -phi^2 dt / 2 exactly.

    For the plain delta = sqrt(dt) the one-step optimum is
    -phi^2 dt/2 - (phi dt/delta)^4/12 - ..., an O(dt^2) mismatch against the
    discrete backward recursion; matching delta removes it, which is what lets
    dynamic programming and the discrete backward solver agree to rounding on
    flat-claim trees.  alpha only rescales the optimizer, not the optimum.
    """
    del alpha  # the one-step optimum is alpha-free
    y_target = abs(phi) * dt
    if y_target == 0.0:
        return math.sqrt(dt)
    goal = 0.5 * phi * phi * dt

    def psi(y):
        return y * math.atanh(y) + 0.5 * math.log1p(-y * y)

    from scipy.optimize import brentq

    y = brentq(lambda u: psi(u) - goal, 1e-12, 1.0 - 1e-12, xtol=1e-16, rtol=8.9e-16)
    return y_target / y


# ------------------------------------------------------------------- sweeps
def _scatter(level_size, children, values, mask):
    out = np.zeros(level_size, dtype=values.dtype)
    out[children.parent[mask]] = values[mask]
    return out


def _level_expectation(tree: EventTree, k: int, child_values: np.ndarray) -> np.ndarray:
    cur, ch = tree.levels[k], tree.levels[k + 1]
    if tree.exact:
        out = np.empty(cur.size, dtype=object)
        for i in range(cur.size):
            lo = cur.child_start[i]
            hi = lo + len(tree.branch_labels(k, bool(cur.defaulted[i])))
            out[i] = sum(ch.prob[c] * child_values[c] for c in range(lo, hi))
        return out
    return np.add.reduceat(ch.prob * child_values, cur.child_start)


def tree_conditional_expectation(tree: EventTree, leaf_values, k: int) -> np.ndarray:
    """Exact backward averaging of per-leaf values down to level k."""
    if not 0 <= k <= tree.n:
        raise ValueError("level out of range")
    values = np.asarray(leaf_values, dtype=object if tree.exact else float)
    if values.shape != (tree.n_leaves,):
        raise ValueError("need one value per leaf")
    for lvl in range(tree.n - 1, k - 1, -1):
        values = _level_expectation(tree, lvl, values)
    return values


@dataclass
class NodeRepresentation:
    """Per-node integrands of the one-step martingale increments, level-wise.

    K[k], W[k] (shape (size, m)), W_def[k], residual[k] are aligned with
    tree.levels[k] for k = 0..n-1; entries for absent branches are zero.
    residual is the max reconstruction error over a node's children.
    """

    K: list
    W: list
    W_def: list
    residual: list

    @property
    def max_residual(self) -> float:
        worst = 0.0
        for arr in self.residual:
            if arr.size:
                worst = max(worst, float(max(arr)) if arr.dtype == object else float(arr.max()))
        return worst


def _represent_level(tree: EventTree, k: int, child_values, values_k):
    """Closed-form one-step representation at level k given level-(k+1) values."""
    cur, ch = tree.levels[k], tree.levels[k + 1]
    m = tree.m
    exact = tree.exact
    zero = Fraction(0) if exact else 0.0
    dtype = object if exact else float
    size = cur.size

    V = {}  # per-label child values aligned to parents
    for lab in range(2 + m + 1):
        sel = ch.label == lab
        if np.any(sel):
            arr = np.full(size, zero, dtype=dtype)
            arr[ch.parent[sel]] = child_values[sel]
            has = np.zeros(size, dtype=bool)
            has[ch.parent[sel]] = True
            V[lab] = (arr, has)

    E = values_k
    two = Fraction(2) if exact else 2.0
    K = (V[_UP][0] - V[_DOWN][0]) / (two * tree.delta)
    c0 = (V[_UP][0] + V[_DOWN][0]) / two - E
    W = np.full((size, m), zero, dtype=dtype)
    for i in range(m):
        if 2 + i in V:
            arr, has = V[2 + i]
            W[:, i] = np.where(has, arr - E - c0, zero)
    W_def = np.full(size, zero, dtype=dtype)
    if 2 + m in V:
        arr, has = V[2 + m]
        W_def = np.where(has, arr - E - c0, zero)

    # residual against the true basis reconstruction (no c0 shortcut):
    # pred(child) = K*dbeta + sum_i W_i (1{mark_i} - pi_i) + W_def (1{def} - q)
    pi_k = tree.mark_probs[k]
    q_k = tree.q[k]
    shift = W @ np.asarray(pi_k, dtype=dtype) if m else np.full(size, zero, dtype=dtype)
    q_eff = np.where(cur.defaulted, zero, q_k if exact else float(q_k))
    shift = shift + W_def * q_eff
    dbeta = np.where(ch.label == _UP, 1, np.where(ch.label == _DOWN, -1, 0))
    pred = K[ch.parent] * (dbeta * tree.delta)
    is_mark = (ch.label >= 2) & (ch.label < 2 + m)
    if np.any(is_mark):
        pred = pred + np.where(
            is_mark, W[(ch.parent, np.clip(ch.label - 2, 0, max(m - 1, 0)))], zero
        )
    pred = pred + np.where(ch.label == 2 + m, W_def[ch.parent], zero)
    pred = pred - shift[ch.parent]
    err = pred - (child_values - E[ch.parent])
    abs_err = np.array([abs(e) for e in err], dtype=dtype) if exact else np.abs(err)
    if exact:
        residual = np.empty(size, dtype=object)
        for i in range(size):
            lo = cur.child_start[i]
            hi = lo + len(tree.branch_labels(k, bool(cur.defaulted[i])))
            residual[i] = max(abs_err[lo:hi])
    else:
        residual = np.maximum.reduceat(abs_err, cur.child_start)
    return K, W, W_def, residual


def tree_representation(tree: EventTree, terminal_values) -> NodeRepresentation:
    """Exact integrands (K, W_i, W_def) of the martingale closed by the given
    terminal values, at every non-terminal node."""
    values = np.asarray(terminal_values, dtype=object if tree.exact else float)
    if values.shape != (tree.n_leaves,):
        raise ValueError("need one terminal value per leaf")
    K, W, W_def, residual = [None] * tree.n, [None] * tree.n, [None] * tree.n, [None] * tree.n
    for k in range(tree.n - 1, -1, -1):
        values_k = _level_expectation(tree, k, values)
        K[k], W[k], W_def[k], residual[k] = _represent_level(tree, k, values, values_k)
        values = values_k
    return NodeRepresentation(K=K, W=W, W_def=W_def, residual=residual)


def spanning_dimensions(tree: EventTree) -> list:
    """Per level: list of (outcome count, representation-basis rank) for each
    node type present (pre/post default); serial construction gives rank =
    outcomes - 1 at every node."""
    out = []
    for k in range(tree.n):
        level_info = []
        for defaulted in (False, True):
            if not np.any(tree.levels[k].defaulted == defaulted):
                continue
            labels = tree.branch_labels(k, defaulted)
            probs = np.array([float(p) for p in tree.branch_probs(k, defaulted)])
            rows = [
                np.where(np.array(labels) == _UP, float(tree.delta),
                         np.where(np.array(labels) == _DOWN, -float(tree.delta), 0.0))
            ]
            for i in tree.active_marks(k):
                rows.append((np.array(labels) == 2 + int(i)).astype(float) - probs[list(labels).index(2 + int(i))])
            if 2 + tree.m in labels:
                rows.append((np.array(labels) == 2 + tree.m).astype(float) - probs[-1])
            rank = np.linalg.matrix_rank(np.array(rows), tol=1e-12)
            level_info.append((len(labels), int(rank)))
        out.append(level_info)
    return out


@dataclass
class TreeBsdeResult:
    """Backward-solved discrete BSDE on the tree: y[k] aligned with level k,
    plus the integrands extracted from each one-step representation."""

    y: list
    rep: NodeRepresentation

    @property
    def y0(self) -> float:
        return float(self.y[0][0])


def tree_bsde(tree: EventTree, claim_values, generator, alpha: float) -> TreeBsdeResult:
    """Y_n = xi at the leaves; backward Y_k = E[Y_{k+1}|node] + f(...) dt.

    ``generator(t, z, w_marks, w_def, pre_default)`` must broadcast over nodes;
    z/w come from the exact representation of the level-(k+1) values.
    """
    if tree.exact:
        raise ValueError("the discrete backward solver runs on float trees")
    values = np.asarray(claim_values, dtype=float)
    if values.shape != (tree.n_leaves,):
        raise ValueError("need one claim value per leaf")
    y = [None] * (tree.n + 1)
    y[tree.n] = values.copy()
    K, W, W_def, residual = [None] * tree.n, [None] * tree.n, [None] * tree.n, [None] * tree.n
    for k in range(tree.n - 1, -1, -1):
        cur = tree.levels[k]
        e_k = _level_expectation(tree, k, y[k + 1])
        K[k], W[k], W_def[k], residual[k] = _represent_level(tree, k, y[k + 1], e_k)
        w_all = np.concatenate([W[k], W_def[k][:, None]], axis=1)
        if np.any(np.abs(alpha * w_all) > 700.0):
            bad = int(np.argmax(np.max(np.abs(alpha * w_all), axis=1)))
            raise ValueError(f"generator overflow (|alpha*w| > 700) at level {k} node {bad}")
        f_k = generator(
            float(tree.times[k]), K[k], W[k], W_def[k], ~cur.defaulted
        )
        y[k] = e_k + np.asarray(f_k, dtype=float) * tree.dt
    return TreeBsdeResult(y=y, rep=NodeRepresentation(K=K, W=W, W_def=W_def, residual=residual))


@dataclass
class DpResult:
    """Brute-force optimal exponential-utility trading on the tree."""

    value: float
    y0: float
    theta: list  # per level, optimal strategy per node
    x: float
    alpha: float


def _children_matrix(tree: EventTree, k: int, mask: np.ndarray, width: int, child_arr):
    """(sum(mask), width) matrix of each masked node's children values."""
    starts = tree.levels[k].child_start[mask]
    idx = starts[:, None] + np.arange(width)[None, :]
    return child_arr[idx]


def tree_dp_optimize(tree: EventTree, claim_values, alpha: float, x: float) -> DpResult:
    """Backward dynamic programming over V(w, node) = -exp(-alpha w) G(node).

    Per node the reduced problem min_theta sum_c p_c exp(-alpha theta dBhat_c) G_c
    is smooth and strictly convex; solved by bisection plus Newton polish to
    |step| <= 1e-12.  Returns the optimal value -exp(-alpha(x - y0)) with
    y0 = log(G_0)/alpha, and the optimal theta at every node.
    """
    if tree.exact:
        raise ValueError("dynamic programming runs on float trees")
    G = np.exp(alpha * np.asarray(claim_values, dtype=float))
    theta_levels: list = [None] * tree.n
    for k in range(tree.n - 1, -1, -1):
        cur, ch = tree.levels[k], tree.levels[k + 1]
        theta_k = np.empty(cur.size)
        g_k = np.empty(cur.size)
        for defaulted in (False, True):
            mask = cur.defaulted == defaulted
            if not np.any(mask):
                continue
            labels = np.array(tree.branch_labels(k, defaulted))
            probs = np.array([float(p) for p in tree.branch_probs(k, defaulted)])
            dbeta = np.where(labels == _UP, float(tree.delta),
                             np.where(labels == _DOWN, -float(tree.delta), 0.0))
            dbhat = dbeta + tree.phi[k] * tree.dt
            Gc = _children_matrix(tree, k, mask, len(labels), G)  # (nodes, width)
            pg = probs[None, :] * Gc

            def g_and_derivs(theta):
                expo = np.clip(-alpha * theta[:, None] * dbhat[None, :], -700.0, 700.0)
                e = np.exp(expo)
                g = np.sum(pg * e, axis=1)
                g1 = np.sum(pg * e * (-alpha * dbhat[None, :]), axis=1)
                g2 = np.sum(pg * e * (alpha * dbhat[None, :]) ** 2, axis=1)
                return g, g1, g2

            scale = 1.0 / (alpha * (float(tree.delta) + abs(tree.phi[k]) * tree.dt))
            lo = np.full(mask.sum(), -64.0 * scale)
            hi = np.full(mask.sum(), 64.0 * scale)
            for _ in range(40):
                _, d_lo, _ = g_and_derivs(lo)
                _, d_hi, _ = g_and_derivs(hi)
                bad_lo, bad_hi = d_lo > 0.0, d_hi < 0.0
                if not (np.any(bad_lo) or np.any(bad_hi)):
                    break
                lo = np.where(bad_lo, lo * 4.0, lo)
                hi = np.where(bad_hi, hi * 4.0, hi)
            else:
                raise RuntimeError(f"scalar solver failed to bracket at level {k}")
            for _ in range(60):  # bisection: monotone derivative
                mid = 0.5 * (lo + hi)
                _, d_mid, _ = g_and_derivs(mid)
                hi = np.where(d_mid > 0.0, mid, hi)
                lo = np.where(d_mid > 0.0, lo, mid)
            theta = 0.5 * (lo + hi)
            for _ in range(4):  # Newton polish
                _, g1, g2 = g_and_derivs(theta)
                theta = theta - g1 / g2
            g_val, g1, g2 = g_and_derivs(theta)
            if np.any(np.abs(g1 / g2) > 1e-12 * np.maximum(1.0, np.abs(theta))):
                worst = int(np.argmax(np.abs(g1 / g2)))
                raise RuntimeError(f"scalar solver did not converge at level {k} node {worst}")
            theta_k[mask] = theta
            g_k[mask] = g_val
        theta_levels[k] = theta_k
        G = g_k
    y0 = math.log(float(G[0])) / alpha
    return DpResult(
        value=-math.exp(-alpha * (x - y0)), y0=y0, theta=theta_levels, x=x, alpha=alpha
    )
