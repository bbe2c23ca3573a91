"""Hot loops shared by both problem variants.

Every kernel works on the generic resource form of an instance:

* ``dist[i, j]``   -- arc length (objective),
* ``travel[i, j]`` -- resource increase when moving i -> j (travel time for
  TSPTW, demand of j for TSPDL),
* ``lo[j], hi[j]`` -- resource window of node j (time window, or [0, draft]).

Arriving at j gives ``a = r + travel[cur, j]``; the move violates iff
``a > hi[j]``; the resource afterwards is ``max(a, lo[j])`` (waiting).
"""
import numpy as np

from ._accel import njit

NUM_FEATURES = 7

MODE_LOCAL = 0
MODE_PI1 = 1
MODE_PI2 = 2
MODE_EXACT = 3
MODE_PREDICTED = 4

RULE_NEAREST = 0
RULE_CONSTRAINT = 1


@njit
def local_mask(cur, r, visited, travel, hi, out):
    for j in range(visited.shape[0]):
        out[j] = (not visited[j]) and (r + travel[cur, j] <= hi[j])


@njit
def pi_mask(cur, r, visited, travel, lo, hi, k, out):
    """Local mask plus a lookahead of ``k`` (0, 1 or 2) steps."""
    local_mask(cur, r, visited, travel, hi, out)
    if k == 0:
        return
    N = visited.shape[0]
    start = np.empty(N)
    for c in range(N):
        if not out[c]:
            continue
        rc = max(r + travel[cur, c], lo[c])
        doomed = False
        for j in range(N):
            if visited[j] or j == c:
                continue
            a = rc + travel[c, j]
            if a > hi[j]:
                doomed = True
                break
            start[j] = max(a, lo[j])
        if not doomed and k >= 2:
            # a pair {j, m} that cannot be served in either order dooms c
            for j in range(N):
                if visited[j] or j == c:
                    continue
                for m in range(j + 1, N):
                    if visited[m] or m == c:
                        continue
                    if start[j] + travel[j, m] <= hi[m]:
                        continue
                    if start[m] + travel[m, j] <= hi[j]:
                        continue
                    doomed = True
                    break
                if doomed:
                    break
        out[c] = not doomed


@njit
def latest_start_table(nodes, travel, lo, hi):
    """``table[S, j]``: latest service start at ``nodes[j]`` from which every node
    of subset S (bitmask over ``nodes``, j not in S) can still be served and the
    depot reached by ``hi[0]``; ``-inf`` when impossible."""
    m = nodes.shape[0]
    size = 1 << m
    table = np.full((size, m), -np.inf)
    for j in range(m):
        table[0, j] = hi[0] - travel[nodes[j], 0]
    for S in range(1, size):
        for j in range(m):
            if (S >> j) & 1:
                continue
            best = -np.inf
            nj = nodes[j]
            for k in range(m):
                if not (S >> k) & 1:
                    continue
                nk = nodes[k]
                lk = table[S ^ (1 << k), k]
                if lk < lo[nk]:
                    continue
                v = min(hi[nk], lk) - travel[nj, nk]
                if v > best:
                    best = v
            table[S, j] = best
    return table


@njit
def exact_mask_dp(cur, r, visited, travel, lo, hi, out):
    """Selectable iff a violation-free completion exists (subset DP, O(2^m m^2))."""
    N = visited.shape[0]
    m = 0
    for j in range(N):
        out[j] = False
        if not visited[j]:
            m += 1
    if m == 0:
        return
    nodes = np.empty(m, dtype=np.int64)
    p = 0
    for j in range(N):
        if not visited[j]:
            nodes[p] = j
            p += 1
    table = latest_start_table(nodes, travel, lo, hi)
    full = (1 << m) - 1
    for jc in range(m):
        c = nodes[jc]
        a = r + travel[cur, c]
        if a <= hi[c] and max(a, lo[c]) <= table[full ^ (1 << jc), jc]:
            out[c] = True


@njit
def depot_return_ok(cur, r, travel, hi):
    return r + travel[cur, 0] <= hi[0]


@njit
def exact_mask_hall(cur, r, visited, travel, hi, out):
    """Exact TSPDL mask for unit demands: after taking c the remaining drafts,
    sorted ascending, must satisfy d_(rank) >= load + rank."""
    N = visited.shape[0]
    m = 0
    for j in range(N):
        if not visited[j]:
            m += 1
    rem = np.empty(m, dtype=np.int64)
    p = 0
    for j in range(N):
        if not visited[j]:
            rem[p] = j
            p += 1
    order = rem[np.argsort(hi[rem], kind="mergesort")]
    for c in range(N):
        out[c] = False
        if visited[c]:
            continue
        a = r + travel[cur, c]
        if a > hi[c]:
            continue
        load = a
        ok = True
        for q in range(m):
            j = order[q]
            if j == c:
                continue
            load += travel[c, j]
            if load > hi[j]:
                ok = False
                break
        if ok and load + travel[c, 0] <= hi[0]:
            out[c] = True


@njit
def features(dist, travel, lo, hi, variant, fscale, cur, r, c, frac, out):
    a = r + travel[cur, c]
    out[0] = dist[cur, c]
    if variant == 0:
        out[1] = hi[c] - a
        out[2] = max(lo[c] - a, 0.0)
        out[3] = hi[c] - r
    else:
        out[1] = (hi[c] - a) / fscale
        out[2] = hi[c] / fscale
        out[3] = travel[cur, c] / fscale
    out[4] = frac
    out[5] = 1.0 if a <= hi[c] else 0.0
    out[6] = 1.0


@njit
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit
def rollout_kernel(dist, travel, lo, hi, variant, fscale, w, temperature, mode, early_stop,
                   greedy, uniforms, pred_v, pred_threshold, collect,
                   tour, logp, score, feat_buf, label_buf, step_buf, label_offset, step_offset):
    """Build one complete tour with the softmax policy under the requested mask.

    Empty masks fall back to the local mask, then to every unvisited node.
    With ``collect`` the locally feasible candidates of each step are written
    to the label buffers (label 1 = masked by the one-step lookahead).
    Returns (length, violation, violated_nodes, labels_written).
    """
    N = dist.shape[0]
    n = N - 1
    F = NUM_FEATURES
    visited = np.zeros(N, dtype=np.bool_)
    visited[0] = True
    cur = 0
    r = 0.0
    length = 0.0
    viol = 0.0
    nviol = 0
    nlab = 0
    lmask = np.empty(N, dtype=np.bool_)
    pmask = np.empty(N, dtype=np.bool_)
    mask = np.empty(N, dtype=np.bool_)
    feats = np.zeros((N, F))
    z = np.zeros(N)
    prob = np.zeros(N)
    tour[0] = 0
    for t in range(n):
        frac = (n - t) / n
        for j in range(N):
            if not visited[j]:
                features(dist, travel, lo, hi, variant, fscale, cur, r, j, frac, feats[j])
        use = mode
        if early_stop >= 0 and t >= early_stop:
            use = MODE_LOCAL
        local_mask(cur, r, visited, travel, hi, lmask)
        have_pi1 = False
        if collect or use == MODE_PI1:
            pi_mask(cur, r, visited, travel, lo, hi, 1, pmask)
            have_pi1 = True
        if collect:
            for j in range(N):
                if lmask[j]:
                    for f in range(F):
                        feat_buf[label_offset + nlab, f] = feats[j, f]
                    label_buf[label_offset + nlab] = not pmask[j]
                    step_buf[label_offset + nlab] = step_offset + t
                    nlab += 1
        if use == MODE_LOCAL:
            mask[:] = lmask
        elif use == MODE_PI1 and have_pi1:
            mask[:] = pmask
        elif use == MODE_PI2:
            pi_mask(cur, r, visited, travel, lo, hi, 2, mask)
        elif use == MODE_EXACT:
            if variant == 1:
                exact_mask_hall(cur, r, visited, travel, hi, mask)
            else:
                exact_mask_dp(cur, r, visited, travel, lo, hi, mask)
        else:
            for j in range(N):
                mask[j] = lmask[j]
                if lmask[j]:
                    s = 0.0
                    for f in range(F):
                        s += pred_v[f] * feats[j, f]
                    if _sigmoid(s) > pred_threshold:
                        mask[j] = False
        count = 0
        for j in range(N):
            if mask[j]:
                count += 1
        if count == 0:
            for j in range(N):
                mask[j] = lmask[j]
                if lmask[j]:
                    count += 1
        if count == 0:
            for j in range(N):
                mask[j] = not visited[j]
        zmax = -np.inf
        best = -1
        for j in range(N):
            if mask[j]:
                s = 0.0
                for f in range(F):
                    s += w[f] * feats[j, f]
                z[j] = s / temperature
                if z[j] > zmax:
                    zmax = z[j]
                    best = j
        total = 0.0
        for j in range(N):
            if mask[j]:
                prob[j] = np.exp(z[j] - zmax)
                total += prob[j]
            else:
                prob[j] = 0.0
        if greedy:
            c = best
        else:
            target = uniforms[t] * total
            acc = 0.0
            c = -1
            for j in range(N):
                if mask[j]:
                    acc += prob[j]
                    c = j
                    if acc > target:
                        break
        logp[t] = (z[c] - zmax) - np.log(total)
        for f in range(F):
            mean = 0.0
            for j in range(N):
                if mask[j]:
                    mean += prob[j] * feats[j, f]
            score[t, f] = (feats[c, f] - mean / total) / temperature
        a = r + travel[cur, c]
        if a > hi[c]:
            viol += a - hi[c]
            nviol += 1
        r = max(a, lo[c])
        length += dist[cur, c]
        visited[c] = True
        cur = c
        tour[t + 1] = c
    a = r + travel[cur, 0]
    if a > hi[0]:
        viol += a - hi[0]
        nviol += 1
    length += dist[cur, 0]
    return length, viol, nviol, nlab


@njit
def rollout_batch_kernel(dist, travel, lo, hi, variant, fscale, w, temperature, mode, early_stop,
                         greedy, uniforms, pred_v, pred_threshold, collect,
                         tours, logps, scores, lengths, viols, nviols, feat_buf, label_buf, step_buf):
    """``uniforms.shape[0]`` independent rollouts on one instance; returns labels written."""
    K = uniforms.shape[0]
    n = dist.shape[0] - 1
    off = 0
    for k in range(K):
        L, v, nv, nl = rollout_kernel(dist, travel, lo, hi, variant, fscale, w, temperature, mode,
                                      early_stop, greedy, uniforms[k], pred_v, pred_threshold, collect,
                                      tours[k], logps[k], scores[k], feat_buf, label_buf, step_buf,
                                      off, k * n)
        lengths[k] = L
        viols[k] = v
        nviols[k] = nv
        off += nl
    return off


@njit
def greedy_kernel(dist, hi, rule, tour):
    """Constraint-blind constructive heuristics.

    rule 0: nearest unvisited node (ties: lowest index).
    rule 1: smallest ``hi`` (deadline / draft), ties: lowest index.
    """
    N = dist.shape[0]
    visited = np.zeros(N, dtype=np.bool_)
    visited[0] = True
    cur = 0
    tour[0] = 0
    for t in range(1, N):
        best = -1
        for j in range(1, N):
            if visited[j]:
                continue
            if best < 0:
                best = j
            elif rule == RULE_NEAREST:
                if dist[cur, j] < dist[cur, best]:
                    best = j
            else:
                if hi[j] < hi[best]:
                    best = j
        visited[best] = True
        tour[t] = best
        cur = best


@njit
def replay_kernel(tour, dist, travel, lo, hi):
    """(length, violation, violated_nodes) of a complete tour, depot return included."""
    r = 0.0
    length = 0.0
    viol = 0.0
    nviol = 0
    cur = tour[0]
    for t in range(1, tour.shape[0]):
        c = tour[t]
        a = r + travel[cur, c]
        if a > hi[c]:
            viol += a - hi[c]
            nviol += 1
        r = max(a, lo[c])
        length += dist[cur, c]
        cur = c
    a = r + travel[cur, 0]
    if a > hi[0]:
        viol += a - hi[0]
        nviol += 1
    length += dist[cur, 0]
    return length, viol, nviol


@njit
def _completion_bound(dist, remaining, cur):
    N = dist.shape[0]
    lb = 0.0
    back = np.inf
    any_left = False
    for j in range(1, N):
        if not remaining[j]:
            continue
        any_left = True
        best = dist[cur, j]
        for i in range(1, N):
            if remaining[i] and i != j and dist[i, j] < best:
                best = dist[i, j]
        lb += best
        if dist[j, 0] < back:
            back = dist[j, 0]
    if not any_left:
        return dist[cur, 0]
    return lb + back


@njit
def exact_solve_kernel(dist, travel, lo, hi, best_tour):
    """Branch and bound over permutations, lexicographic child order.

    Only prefixes with a feasible completion are expanded (latest-start table),
    so the first complete tour is feasible. Returns the best length or inf.
    """
    N = dist.shape[0]
    n = N - 1
    if n == 0:
        best_tour[0] = 0
        return dist[0, 0] if hi[0] >= travel[0, 0] else np.inf
    nodes = np.arange(1, N)
    table = latest_start_table(nodes, travel, lo, hi)
    full = (1 << n) - 1
    path = np.zeros(N, dtype=np.int64)
    start = np.zeros(N)
    plen = np.zeros(N)
    nxt = np.ones(N, dtype=np.int64)
    remaining = np.ones(N, dtype=np.bool_)
    remaining[0] = False
    rem_bits = full
    best = np.inf
    depth = 0
    while depth >= 0:
        if depth == n:
            cur = path[n]
            total = plen[n] + dist[cur, 0]
            if total < best:
                best = total
                best_tour[:] = path
            depth -= 1
            c = path[depth + 1]
            remaining[c] = True
            rem_bits |= 1 << (c - 1)
            continue
        cur = path[depth]
        c = nxt[depth]
        pushed = False
        while c <= n:
            if remaining[c]:
                a = start[depth] + travel[cur, c]
                bit = 1 << (c - 1)
                if a <= hi[c]:
                    s = max(a, lo[c])
                    if s <= table[rem_bits ^ bit, c - 1]:
                        newlen = plen[depth] + dist[cur, c]
                        remaining[c] = False
                        lb = newlen + _completion_bound(dist, remaining, c)
                        if lb < best:
                            nxt[depth] = c + 1
                            depth += 1
                            path[depth] = c
                            start[depth] = s
                            plen[depth] = newlen
                            nxt[depth] = 1
                            rem_bits ^= bit
                            pushed = True
                            break
                        remaining[c] = True
            c += 1
        if not pushed:
            depth -= 1
            if depth >= 0:
                back = path[depth + 1]
                remaining[back] = True
                rem_bits |= 1 << (back - 1)
    return best


@njit
def audit_kernel(travel, lo, hi, variant, uniforms, counts):
    """Walk one random trajectory (uniform over locally feasible nodes, soft
    semantics) and compare masks at every visited state.

    counts: [states, nest_violations, unsound_pi1, unsound_pi2,
             pi1_strictly_looser_than_exact, pi2_strictly_tighter_than_pi1]
    """
    N = travel.shape[0]
    n = N - 1
    visited = np.zeros(N, dtype=np.bool_)
    visited[0] = True
    cur = 0
    r = 0.0
    m0 = np.empty(N, dtype=np.bool_)
    m1 = np.empty(N, dtype=np.bool_)
    m2 = np.empty(N, dtype=np.bool_)
    mx = np.empty(N, dtype=np.bool_)
    for t in range(n):
        pi_mask(cur, r, visited, travel, lo, hi, 0, m0)
        pi_mask(cur, r, visited, travel, lo, hi, 1, m1)
        pi_mask(cur, r, visited, travel, lo, hi, 2, m2)
        if variant == 1:
            exact_mask_hall(cur, r, visited, travel, hi, mx)
        else:
            exact_mask_dp(cur, r, visited, travel, lo, hi, mx)
        counts[0] += 1
        nested = True
        strict1 = False
        strict2 = False
        for j in range(N):
            if (m1[j] and not m0[j]) or (m2[j] and not m1[j]) or (mx[j] and not m2[j]):
                nested = False
            if mx[j] and not m1[j]:
                counts[2] += 1
            if mx[j] and not m2[j]:
                counts[3] += 1
            if m1[j] and not mx[j]:
                strict1 = True
            if m1[j] and not m2[j]:
                strict2 = True
        if not nested:
            counts[1] += 1
        if strict1:
            counts[4] += 1
        if strict2:
            counts[5] += 1
        cnt = 0
        for j in range(N):
            if m0[j]:
                cnt += 1
        pick = m0
        if cnt == 0:
            for j in range(N):
                m1[j] = not visited[j]
                if m1[j]:
                    cnt += 1
            pick = m1
        target = int(uniforms[t] * cnt)
        c = -1
        for j in range(N):
            if pick[j]:
                if target == 0:
                    c = j
                    break
                target -= 1
        a = r + travel[cur, c]
        r = max(a, lo[c])
        visited[c] = True
        cur = c
