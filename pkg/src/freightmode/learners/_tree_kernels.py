"""Compiled inner loops for tree growing.

A node's rows are the segment ``order[:, lo:hi]``: row ``f`` of ``order`` lists
the node's samples sorted by feature ``f``. Splitting a node stably partitions
every row of the segment, so children stay sorted without re-sorting.

Reported gains are normalized by node weight (Gini decrease in [0, 1], and the
squared-error reduction per unit weight); a candidate replaces the incumbent
only if it beats it by more than ``tol`` on that normalized scale (compared
unnormalized to save a division per candidate). Features are scanned in the order
given and thresholds in ascending order, so ties keep the lowest feature and
the smallest threshold.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def node_class_totals(order, lo, hi, y, w, n_classes):
    totals = np.zeros(n_classes)
    for i in range(lo, hi):
        j = order[0, i]
        totals[y[j]] += w[j]
    return totals


@njit(cache=True)
def _midpoint(a, b):
    t = 0.5 * (a + b)
    # adjacent floats: keep ``b`` on the right-hand side
    if t >= b:
        t = a
    return t


@njit(cache=True)
def best_gini_split(X, order, lo, hi, features, y, w, n_classes, tol):
    """Return (feature, threshold, decrease, node_weight); feature == -1 if no split beats ``tol``."""
    totals = node_class_totals(order, lo, hi, y, w, n_classes)
    W = totals.sum()
    parent = 0.0
    for k in range(n_classes):
        parent += totals[k] * totals[k]
    parent /= W
    best_f = -1
    best_t = 0.0
    eps = tol * W
    best_raw = 0.0
    # a candidate must beat ``bar``: tol above the first, best + tol after;
    # ``cut`` restates that without a division for the prefilter
    bar = eps
    cut = bar + parent
    left = np.empty(n_classes)
    for f in features:
        left[:] = 0.0
        wl = 0.0
        for i in range(lo, hi - 1):
            j = order[f, i]
            left[y[j]] += w[j]
            wl += w[j]
            v = X[j, f]
            vn = X[order[f, i + 1], f]
            if vn <= v:
                continue
            wr = W - wl
            sl = 0.0
            sr = 0.0
            for k in range(n_classes):
                sl += left[k] * left[k]
                r = totals[k] - left[k]
                sr += r * r
            num = sl * wr + sr * wl
            den = wl * wr
            if num > cut * den:
                raw = num / den - parent
                if raw > bar:
                    best_raw = raw
                    bar = raw + eps
                    cut = bar + parent
                    best_f = f
                    best_t = _midpoint(v, vn)
    gain = best_raw / W if best_f >= 0 else 0.0
    return best_f, best_t, gain, W


@njit(cache=True)
def best_mse_split(X, order, lo, hi, features, r, w, tol):
    """Weighted squared-error split for regression targets ``r``; same return convention as the Gini kernel."""
    W = 0.0
    S = 0.0
    for i in range(lo, hi):
        j = order[0, i]
        W += w[j]
        S += w[j] * r[j]
    parent = S * S / W
    best_f = -1
    best_t = 0.0
    eps = tol * W
    best_raw = 0.0
    # a candidate must beat ``bar``: tol above the first, best + tol after;
    # ``cut`` restates that without a division for the prefilter
    bar = eps
    cut = bar + parent
    for f in features:
        wl = 0.0
        sl = 0.0
        for i in range(lo, hi - 1):
            j = order[f, i]
            wl += w[j]
            sl += w[j] * r[j]
            v = X[j, f]
            vn = X[order[f, i + 1], f]
            if vn <= v:
                continue
            wr = W - wl
            sr = S - sl
            num = sl * sl * wr + sr * sr * wl
            den = wl * wr
            if num > cut * den:
                raw = num / den - parent
                if raw > bar:
                    best_raw = raw
                    bar = raw + eps
                    cut = bar + parent
                    best_f = f
                    best_t = _midpoint(v, vn)
    gain = best_raw / W if best_f >= 0 else 0.0
    return best_f, best_t, gain, W


@njit(cache=True)
def partition(X, order, lo, hi, feature, threshold, goes_left, buf):
    """Stable in-place partition of every feature row of the segment; returns the split position."""
    for i in range(lo, hi):
        j = order[0, i]
        goes_left[j] = X[j, feature] <= threshold
    mid = lo
    for f in range(order.shape[0]):
        nl = 0
        nr = 0
        for i in range(lo, hi):
            j = order[f, i]
            if goes_left[j]:
                order[f, lo + nl] = j
                nl += 1
            else:
                buf[nr] = j
                nr += 1
        for t in range(nr):
            order[f, lo + nl + t] = buf[t]
        mid = lo + nl
    return mid


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while left[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def nonconstant(X, order, lo, hi, features):
    """Features (in the given order) that take more than one value in the segment."""
    out = np.empty(features.shape[0], dtype=np.int64)
    m = 0
    for f in features:
        if X[order[f, lo], f] < X[order[f, hi - 1], f]:
            out[m] = f
            m += 1
    return out[:m]


@njit(cache=True)
def sorted_values(X, order):
    D, n = order.shape
    out = np.empty((D, n))
    for f in range(D):
        for i in range(n):
            out[f, i] = X[order[f, i], f]
    return out


@njit(cache=True)
def grow_mse_levelwise(X, Xs, order, r, w, max_depth, min_samples_split, tol, hist_slot, codes, bin_offset,
                       bin_values):
    """Grow a squared-error regression tree breadth first over the full presort.

    Produces the same splits as splitting segments depth first, but never moves
    the presorted index matrix. Features with ``hist_slot[f] >= 0`` are scored
    from per-node histograms over their distinct values (``codes[:, h]`` holds
    each row's value rank, bins ``bin_offset[h]:bin_offset[h + 1]`` of
    ``bin_values`` the values); the rest are scanned in sorted order. Sums are
    accumulated in sorted-row order either way, up to regrouping within a value.
    ``max_depth < 0`` means unlimited. Returns node arrays in breadth-first order
    plus each sample's final (leaf) node.
    """
    D, n = order.shape
    n_hist = codes.shape[1]
    n_bins = bin_offset[n_hist]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    weight = np.zeros(cap)
    total = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    decrease = np.zeros(cap)
    node_of = np.zeros(n, dtype=np.int64)
    wr = np.empty(n)
    for j in range(n):
        wr[j] = w[j] * r[j]
    for i in range(n):
        j = order[0, i]
        weight[0] += w[j]
        total[0] += wr[j]
    count[0] = n
    n_nodes = 1
    first, last = 0, 1
    depth = 0
    slot_of = np.full(cap, -1, dtype=np.int64)
    while first < last and (max_depth < 0 or depth < max_depth):
        n_active = 0
        for nd in range(first, last):
            if count[nd] >= min_samples_split:
                slot_of[nd] = n_active
                n_active += 1
        if n_active == 0:
            break
        best_f = np.full(n_active, -1, dtype=np.int64)
        best_t = np.zeros(n_active)
        best_g = np.empty(n_active)
        eps = np.empty(n_active)
        parent = np.empty(n_active)
        node_w = np.empty(n_active)
        node_s = np.empty(n_active)
        for nd in range(first, last):
            s = slot_of[nd]
            if s >= 0:
                node_w[s] = weight[nd]
                node_s[s] = total[nd]
                parent[s] = total[nd] * total[nd] / weight[nd]
                eps[s] = tol * weight[nd]
                best_g[s] = eps[s]
        slot_j = np.empty(n, dtype=np.int64)
        for j in range(n):
            slot_j[j] = slot_of[node_of[j]]
        # a candidate must beat ``bar``: tol above the first, best + tol after
        bar = eps.copy()
        # cheap multiply-only prefilter: num / den - parent > bar  <=>  num > (bar + parent) * den
        cut = bar + parent
        hist = np.zeros((n_active, n_bins, 2))
        if n_hist > 0:
            for j in range(n):
                s = slot_j[j]
                if s < 0:
                    continue
                for h in range(n_hist):
                    b = bin_offset[h] + codes[j, h]
                    hist[s, b, 0] += w[j]
                    hist[s, b, 1] += wr[j]
        wl = np.zeros(n_active)
        sl = np.zeros(n_active)
        prev = np.zeros(n_active)
        seen = np.zeros(n_active, dtype=np.bool_)
        for f in range(D):
            wl[:] = 0.0
            sl[:] = 0.0
            seen[:] = False
            h = hist_slot[f]
            if h >= 0:
                for s in range(n_active):
                    for b in range(bin_offset[h], bin_offset[h + 1]):
                        cw = hist[s, b, 0]
                        if cw == 0.0:
                            continue
                        v = bin_values[b]
                        if seen[s]:
                            W = node_w[s]
                            a = wl[s]
                            bb = sl[s]
                            c = node_s[s] - bb
                            num = bb * bb * (W - a) + c * c * a
                            den = a * (W - a)
                            if num > cut[s] * den:
                                raw = num / den - parent[s]
                                if raw > bar[s]:
                                    best_g[s] = raw
                                    bar[s] = raw + eps[s]
                                    cut[s] = bar[s] + parent[s]
                                    best_f[s] = f
                                    best_t[s] = _midpoint(prev[s], v)
                        wl[s] += cw
                        sl[s] += hist[s, b, 1]
                        prev[s] = v
                        seen[s] = True
                continue
            # continuous feature: walk the presort, scoring each slot's value boundaries
            for i in range(n):
                j = order[f, i]
                s = slot_j[j]
                if s < 0:
                    continue
                v = Xs[f, i]
                if v > prev[s] and seen[s]:
                    a = wl[s]
                    bb = sl[s]
                    W = node_w[s]
                    c = node_s[s] - bb
                    num = bb * bb * (W - a) + c * c * a
                    den = a * (W - a)
                    if num > cut[s] * den:
                        raw = num / den - parent[s]
                        if raw > bar[s]:
                            best_g[s] = raw
                            bar[s] = raw + eps[s]
                            cut[s] = bar[s] + parent[s]
                            best_f[s] = f
                            best_t[s] = _midpoint(prev[s], v)
                wl[s] += w[j]
                sl[s] += wr[j]
                prev[s] = v
                seen[s] = True
        child_of_slot = np.full(n_active, -1, dtype=np.int64)
        for nd in range(first, last):
            s = slot_of[nd]
            if s >= 0 and best_f[s] >= 0:
                feature[nd] = best_f[s]
                threshold[nd] = best_t[s]
                decrease[nd] = best_g[s] / node_w[s]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                child_of_slot[s] = n_nodes
                n_nodes += 2
        new_first = last
        for j in range(n):
            s = slot_of[node_of[j]]
            if s >= 0 and child_of_slot[s] >= 0:
                nd = node_of[j]
                node_of[j] = left[nd] if X[j, feature[nd]] <= threshold[nd] else right[nd]
        for nd in range(first, last):
            slot_of[nd] = -1
        for i in range(n):
            j = order[0, i]
            nd = node_of[j]
            if nd >= new_first:
                weight[nd] += w[j]
                total[nd] += wr[j]
                count[nd] += 1
        first, last = new_first, n_nodes
        depth += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], weight[:n_nodes],
            decrease[:n_nodes], node_of)


@njit(cache=True)
def grow_depth_first(X, order, y, r, w, n_classes, classify, max_depth, min_samples_split, tol, mtry, u):
    """Grow one tree over the samples listed in ``order`` (modified in place).

    Gini splits on labels ``y`` when ``classify``, squared-error splits on ``r``
    otherwise. Nodes come out in preorder (left subtree first). With
    ``0 < mtry < D`` node ``i`` ranks the features by ``u[i]``, scores the first
    ``mtry`` non-constant ones and, only if none of them splits, the remaining
    non-constant ones. ``max_depth < 0`` means unlimited.

    Returns node arrays, per-node class totals (classification) and each
    sample's leaf (-1 for samples not in ``order``).
    """
    D, m = order.shape
    cap = 2 * m + 1
    feature = np.zeros(cap, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    weight = np.zeros(cap)
    decrease = np.zeros(cap)
    value = np.zeros((cap, n_classes))
    leaf_of = np.full(X.shape[0], -1, dtype=np.int64)
    goes_left = np.zeros(X.shape[0], dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)
    all_features = np.arange(D)
    restricted = 0 < mtry < D
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_parent = np.empty(cap, dtype=np.int64)
    st_right = np.empty(cap, dtype=np.bool_)
    top = 0
    st_lo[0], st_hi[0], st_depth[0], st_parent[0], st_right[0] = 0, m, 0, -1, False
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        lo, hi, depth, parent = st_lo[top], st_hi[top], st_depth[top], st_parent[top]
        i = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_right[top]:
                right[parent] = i
            else:
                left[parent] = i
        f = -1
        t = 0.0
        gain = 0.0
        W = 0.0
        if classify:
            totals = node_class_totals(order, lo, hi, y, w, n_classes)
            for k in range(n_classes):
                value[i, k] = totals[k]
                W += totals[k]
            nonzero = 0
            for k in range(n_classes):
                if totals[k] > 0:
                    nonzero += 1
            splittable = nonzero > 1
        else:
            for q in range(lo, hi):
                W += w[order[0, q]]
            splittable = True
        weight[i] = W
        if splittable and hi - lo >= min_samples_split and (max_depth < 0 or depth < max_depth):
            if restricted:
                cand = nonconstant(X, order, lo, hi, np.argsort(u[i]))
                n_first = min(mtry, cand.shape[0])
                for batch in range(2):
                    feats = np.sort(cand[:n_first]) if batch == 0 else np.sort(cand[n_first:])
                    if feats.shape[0] == 0:
                        continue
                    if classify:
                        f, t, gain, W = best_gini_split(X, order, lo, hi, feats, y, w, n_classes, tol)
                    else:
                        f, t, gain, W = best_mse_split(X, order, lo, hi, feats, r, w, tol)
                    if f >= 0:
                        break
            elif classify:
                f, t, gain, W = best_gini_split(X, order, lo, hi, all_features, y, w, n_classes, tol)
            else:
                f, t, gain, W = best_mse_split(X, order, lo, hi, all_features, r, w, tol)
        if f >= 0:
            feature[i] = f
            threshold[i] = t
            decrease[i] = gain
            mid = partition(X, order, lo, hi, f, t, goes_left, buf)
            st_lo[top], st_hi[top], st_depth[top], st_parent[top], st_right[top] = mid, hi, depth + 1, i, True
            top += 1
            st_lo[top], st_hi[top], st_depth[top], st_parent[top], st_right[top] = lo, mid, depth + 1, i, False
            top += 1
        else:
            for q in range(lo, hi):
                leaf_of[order[0, q]] = i
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], weight[:n_nodes],
            decrease[:n_nodes], value[:n_nodes], leaf_of)
