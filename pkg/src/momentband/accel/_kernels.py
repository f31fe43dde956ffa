"""Hot numeric kernels: tree growth, routing, weight reductions, k-NN selection.

Every function here is written in the numba-compatible subset of numpy so the
same source runs both as plain Python (numpy fallback) and under ``@njit``.
The backends are selected in ``momentband.accel``; no function below draws
random numbers, so both backends are bit-identical.

Forest layout (flat, concatenated over trees):
  node_feat[i]  split axis at node i, -1 for leaves
  node_thr[i]   split threshold; route left iff x[axis] <= thr
  node_left[i], node_right[i]  child node ids, local to the owning tree
  node_eoff[i], node_ecnt[i]   leaf slice into est_ids (absolute offsets)
  tree_ptr[t]   base node id of tree t (length r+1)
  est_ids[j]    estimation-unit ids, grouped by leaf
"""

import numpy as np


def _sup_dist(a, b):
    m = 0.0
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        if d < 0.0:
            d = -d
        if d > m:
            m = d
    return m


def _route(node_feat, node_thr, node_left, node_right, base, x):
    node = 0
    while node_feat[base + node] >= 0:
        if x[node_feat[base + node]] <= node_thr[base + node]:
            node = node_left[base + node]
        else:
            node = node_right[base + node]
    return node


def _knn_select(xunits, sub_ids, lo, hi, x, k, best_d, best_i):
    """Fill best_d/best_i with the k nearest subsample members to x.

    Sup-norm distance, ties broken by lower unit id. Returns the number of
    selected neighbors, min(k, hi - lo).
    """
    cnt = hi - lo
    m = k if k < cnt else cnt
    if m == cnt:
        # whole subsample selected; skip the ordered insertion
        worst = 0.0
        for j in range(m):
            u = sub_ids[lo + j]
            best_i[j] = u
            d = _sup_dist(xunits[u], x)
            best_d[j] = d
            if d > worst:
                worst = d
        best_d[m - 1] = worst   # shrinkage reads the max at position m-1
        return m
    filled = 0
    for j in range(lo, hi):
        u = sub_ids[j]
        d = _sup_dist(xunits[u], x)
        if filled < m:
            pos = filled
            while pos > 0 and (best_d[pos - 1] > d or
                               (best_d[pos - 1] == d and best_i[pos - 1] > u)):
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = u
            filled += 1
        else:
            last = m - 1
            if d > best_d[last] or (d == best_d[last] and u > best_i[last]):
                continue
            pos = last
            while pos > 0 and (best_d[pos - 1] > d or
                               (best_d[pos - 1] == d and best_i[pos - 1] > u)):
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = u
    return m


def grow_tree(xs, ps, xe, min_leaf, max_depth, mtry, axis_rands):
    """CART growth on the structure half with honest leaf constraints.

    xs: (ns, q) structure coordinates; ps: (ns,) pseudo-outcomes read only on
    the structure half; xe: (ne, q) estimation coordinates. A split is valid
    when both children keep >= min_leaf structure units and >= 1 estimation
    unit. Candidate thresholds are midpoints between consecutive distinct
    structure values on mtry uniformly sampled axes (axis_rands supplies the
    per-node uniforms). Returns flat node arrays plus the estimation-unit
    permutation grouped by leaf.
    """
    ns = xs.shape[0]
    q = xs.shape[1]
    ne = xe.shape[0]
    cap = 2 * ns + 2

    node_feat = np.full(cap, -1, np.int32)
    node_thr = np.zeros(cap, np.float64)
    node_left = np.full(cap, -1, np.int32)
    node_right = np.full(cap, -1, np.int32)
    node_eoff = np.full(cap, -1, np.int64)
    node_ecnt = np.zeros(cap, np.int64)

    idx_s = np.arange(ns)
    idx_e = np.arange(ne)
    tmp = np.empty(ns if ns > ne else ne, np.int64)
    svals = np.empty(ns, np.float64)
    evals = np.empty(ne, np.float64)
    axes = np.empty(q, np.int64)

    stack = np.empty((cap, 6), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = ns
    stack[0, 3] = 0
    stack[0, 4] = ne
    stack[0, 5] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        slo = stack[top, 1]
        shi = stack[top, 2]
        elo = stack[top, 3]
        ehi = stack[top, 4]
        depth = stack[top, 5]
        nsn = shi - slo
        nen = ehi - elo

        best_axis = -1
        best_thr = 0.0
        if (nsn >= 2 * min_leaf and nen >= 2 and
                (max_depth <= 0 or depth < max_depth)):
            tot = 0.0
            tot2 = 0.0
            for i in range(slo, shi):
                v = ps[idx_s[i]]
                tot += v
                tot2 += v * v
            base_score = tot * tot / nsn
            # floor absorbing summation roundoff so constant outcomes never split
            best_gain = 1e-12 * (tot2 + 1.0)

            m = mtry if mtry < q else q
            for a in range(q):
                axes[a] = a
            for j in range(m):
                u = axis_rands[node, j]
                pick = j + int(u * (q - j))
                if pick >= q:
                    pick = q - 1
                t_ax = axes[j]
                axes[j] = axes[pick]
                axes[pick] = t_ax

            for j in range(m):
                ax = axes[j]
                for i in range(nsn):
                    svals[i] = xs[idx_s[slo + i], ax]
                order = np.argsort(svals[:nsn], kind='mergesort')
                for i in range(nen):
                    evals[i] = xe[idx_e[elo + i], ax]
                esorted = np.sort(evals[:nen])

                csum = 0.0
                for i in range(nsn - 1):
                    v = svals[order[i]]
                    csum += ps[idx_s[slo + order[i]]]
                    nl = i + 1
                    nr = nsn - nl
                    if nr < min_leaf:
                        break
                    if nl < min_leaf:
                        continue
                    v_next = svals[order[i + 1]]
                    if v_next <= v:
                        continue
                    mid = 0.5 * (v + v_next)
                    if mid >= v_next:
                        mid = v
                    # est-unit count on the left via upper bound in esorted
                    lo_b = 0
                    hi_b = nen
                    while lo_b < hi_b:
                        m_b = (lo_b + hi_b) >> 1
                        if esorted[m_b] <= mid:
                            lo_b = m_b + 1
                        else:
                            hi_b = m_b
                    el = lo_b
                    if el < 1 or nen - el < 1:
                        continue
                    rsum = tot - csum
                    gain = csum * csum / nl + rsum * rsum / nr - base_score
                    if gain > best_gain:
                        best_gain = gain
                        best_axis = ax
                        best_thr = mid

        if best_axis < 0:
            node_eoff[node] = elo
            node_ecnt[node] = nen
            continue

        # stable partition of structure and estimation index slices
        nl_s = 0
        for i in range(slo, shi):
            if xs[idx_s[i], best_axis] <= best_thr:
                tmp[nl_s] = idx_s[i]
                nl_s += 1
        nr_s = nl_s
        for i in range(slo, shi):
            if xs[idx_s[i], best_axis] > best_thr:
                tmp[nr_s] = idx_s[i]
                nr_s += 1
        for i in range(nsn):
            idx_s[slo + i] = tmp[i]

        nl_e = 0
        for i in range(elo, ehi):
            if xe[idx_e[i], best_axis] <= best_thr:
                tmp[nl_e] = idx_e[i]
                nl_e += 1
        nr_e = nl_e
        for i in range(elo, ehi):
            if xe[idx_e[i], best_axis] > best_thr:
                tmp[nr_e] = idx_e[i]
                nr_e += 1
        for i in range(nen):
            idx_e[elo + i] = tmp[i]

        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        node_feat[node] = best_axis
        node_thr[node] = best_thr
        node_left[node] = lnode
        node_right[node] = rnode

        stack[top, 0] = rnode
        stack[top, 1] = slo + nl_s
        stack[top, 2] = shi
        stack[top, 3] = elo + nl_e
        stack[top, 4] = ehi
        stack[top, 5] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = slo
        stack[top, 2] = slo + nl_s
        stack[top, 3] = elo
        stack[top, 4] = elo + nl_e
        stack[top, 5] = depth + 1
        top += 1

    return (node_feat, node_thr, node_left, node_right, node_eoff,
            node_ecnt, idx_e, n_nodes)


def route_points(node_feat, node_thr, node_left, node_right, base, xq):
    """Leaf node id (local to the tree at `base`) for each query row."""
    d = xq.shape[0]
    out = np.empty(d, np.int64)
    for i in range(d):
        out[i] = _route(node_feat, node_thr, node_left, node_right, base, xq[i])
    return out


def tree_forest_solve(node_feat, node_thr, node_left, node_right, node_eoff,
                      node_ecnt, tree_ptr, est_ids, tree_sel, xq, m1, m2,
                      n_units):
    """Per-query kernel-weighted sums of m1/m2 plus support sizes.

    Sums are accumulated in the per-tree-mean form (each tree's leaf weights
    sum to one), so S1/S2/SW equal sum(K*m1), sum(K*m2), sum(K).
    """
    d = xq.shape[0]
    s1 = np.zeros(d, np.float64)
    s2 = np.zeros(d, np.float64)
    sw = np.zeros(d, np.float64)
    support = np.zeros(d, np.int64)
    w = np.empty(n_units, np.float64)
    for qd in range(d):
        for u in range(n_units):
            w[u] = 0.0
        for ti in range(tree_sel.shape[0]):
            t = tree_sel[ti]
            base = tree_ptr[t]
            leaf = _route(node_feat, node_thr, node_left, node_right, base, xq[qd])
            off = node_eoff[base + leaf]
            cnt = node_ecnt[base + leaf]
            if cnt <= 0:
                continue
            inv = 1.0 / cnt
            a1 = 0.0
            a2 = 0.0
            for j in range(off, off + cnt):
                u = est_ids[j]
                a1 += m1[u]
                a2 += m2[u]
                w[u] += inv
            s1[qd] += a1 * inv
            s2[qd] += a2 * inv
            sw[qd] += 1.0
        c = 0
        for u in range(n_units):
            if w[u] > 0.0:
                c += 1
        support[qd] = c
    return s1, s2, sw, support


def tree_forest_predict(node_feat, node_thr, node_left, node_right, node_eoff,
                        node_ecnt, tree_ptr, est_ids, tree_sel, xq, vals):
    """Per-query sums of per-tree leaf means of vals, plus contributing-tree counts."""
    d = xq.shape[0]
    sv = np.zeros(d, np.float64)
    sw = np.zeros(d, np.float64)
    for qd in range(d):
        for ti in range(tree_sel.shape[0]):
            t = tree_sel[ti]
            base = tree_ptr[t]
            leaf = _route(node_feat, node_thr, node_left, node_right, base, xq[qd])
            off = node_eoff[base + leaf]
            cnt = node_ecnt[base + leaf]
            if cnt <= 0:
                continue
            a = 0.0
            for j in range(off, off + cnt):
                a += vals[est_ids[j]]
            sv[qd] += a / cnt
            sw[qd] += 1.0
    return sv, sw


def tree_forest_weights_at(node_feat, node_thr, node_left, node_right,
                           node_eoff, node_ecnt, tree_ptr, est_ids, tree_sel,
                           x, n_units):
    """Raw aggregated kernel weights K(x, X_i) = sum_q kappa_q (no 1/r)."""
    w = np.zeros(n_units, np.float64)
    for ti in range(tree_sel.shape[0]):
        t = tree_sel[ti]
        base = tree_ptr[t]
        leaf = _route(node_feat, node_thr, node_left, node_right, base, x)
        off = node_eoff[base + leaf]
        cnt = node_ecnt[base + leaf]
        if cnt <= 0:
            continue
        inv = 1.0 / cnt
        for j in range(off, off + cnt):
            w[est_ids[j]] += inv
    return w


def tree_forest_shrinkage(node_feat, node_thr, node_left, node_right,
                          node_eoff, node_ecnt, tree_ptr, est_ids, tree_sel,
                          xq, xunits):
    """Per query: mean over trees of the max sup-distance of positive-weight units."""
    d = xq.shape[0]
    out = np.zeros(d, np.float64)
    for qd in range(d):
        acc = 0.0
        m = 0
        for ti in range(tree_sel.shape[0]):
            t = tree_sel[ti]
            base = tree_ptr[t]
            leaf = _route(node_feat, node_thr, node_left, node_right, base, xq[qd])
            off = node_eoff[base + leaf]
            cnt = node_ecnt[base + leaf]
            if cnt <= 0:
                continue
            mx = 0.0
            for j in range(off, off + cnt):
                dd = _sup_dist(xunits[est_ids[j]], xq[qd])
                if dd > mx:
                    mx = dd
            acc += mx
            m += 1
        out[qd] = acc / m if m > 0 else np.nan
    return out


def knn_forest_solve(sub_ids, tree_ptr, k, xunits, tree_sel, xq, m1, m2,
                     n_units):
    d = xq.shape[0]
    s1 = np.zeros(d, np.float64)
    s2 = np.zeros(d, np.float64)
    sw = np.zeros(d, np.float64)
    support = np.zeros(d, np.int64)
    w = np.empty(n_units, np.float64)
    best_d = np.empty(k, np.float64)
    best_i = np.empty(k, np.int64)
    for qd in range(d):
        for u in range(n_units):
            w[u] = 0.0
        for ti in range(tree_sel.shape[0]):
            t = tree_sel[ti]
            lo = tree_ptr[t]
            hi = tree_ptr[t + 1]
            m = _knn_select(xunits, sub_ids, lo, hi, xq[qd], k, best_d, best_i)
            if m <= 0:
                continue
            inv = 1.0 / m
            a1 = 0.0
            a2 = 0.0
            for j in range(m):
                u = best_i[j]
                a1 += m1[u]
                a2 += m2[u]
                w[u] += inv
            s1[qd] += a1 * inv
            s2[qd] += a2 * inv
            sw[qd] += 1.0
        c = 0
        for u in range(n_units):
            if w[u] > 0.0:
                c += 1
        support[qd] = c
    return s1, s2, sw, support


def knn_forest_predict(sub_ids, tree_ptr, k, xunits, tree_sel, xq, vals):
    d = xq.shape[0]
    sv = np.zeros(d, np.float64)
    sw = np.zeros(d, np.float64)
    best_d = np.empty(k, np.float64)
    best_i = np.empty(k, np.int64)
    for qd in range(d):
        for ti in range(tree_sel.shape[0]):
            t = tree_sel[ti]
            lo = tree_ptr[t]
            hi = tree_ptr[t + 1]
            m = _knn_select(xunits, sub_ids, lo, hi, xq[qd], k, best_d, best_i)
            if m <= 0:
                continue
            a = 0.0
            for j in range(m):
                a += vals[best_i[j]]
            sv[qd] += a / m
            sw[qd] += 1.0
    return sv, sw


def knn_forest_weights_at(sub_ids, tree_ptr, k, xunits, tree_sel, x, n_units):
    w = np.zeros(n_units, np.float64)
    best_d = np.empty(k, np.float64)
    best_i = np.empty(k, np.int64)
    for ti in range(tree_sel.shape[0]):
        t = tree_sel[ti]
        lo = tree_ptr[t]
        hi = tree_ptr[t + 1]
        m = _knn_select(xunits, sub_ids, lo, hi, x, k, best_d, best_i)
        if m <= 0:
            continue
        inv = 1.0 / m
        for j in range(m):
            w[best_i[j]] += inv
    return w


def knn_forest_shrinkage(sub_ids, tree_ptr, k, xunits, tree_sel, xq):
    d = xq.shape[0]
    out = np.zeros(d, np.float64)
    best_d = np.empty(k, np.float64)
    best_i = np.empty(k, np.int64)
    for qd in range(d):
        acc = 0.0
        m_trees = 0
        for ti in range(tree_sel.shape[0]):
            t = tree_sel[ti]
            lo = tree_ptr[t]
            hi = tree_ptr[t + 1]
            m = _knn_select(xunits, sub_ids, lo, hi, xq[qd], k, best_d, best_i)
            if m <= 0:
                continue
            acc += best_d[m - 1]
            m_trees += 1
        out[qd] = acc / m_trees if m_trees > 0 else np.nan
    return out
