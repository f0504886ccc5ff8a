"""Numba loops behind the GBP engine.

All per-region tables live in flat arrays indexed through ``conf_off``
(region -> first configuration slot).  Messages are flat too, indexed through
``msg_off`` (edge -> first entry, one entry per child configuration).
Projection tables map a region configuration index to the configuration
index of a contained region; ``proj_off`` locates each table in
``proj_flat``.  Unsupported configurations are tracked by ``mask`` and never
enter a sum.
"""
import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def initial_mask(conf_off, sid, bits_flat, bits_off, nvars, var_off, var_idx, allowed):
    """Mask out configurations assigning a value whose unary table is zero."""
    n_regions = len(sid)
    mask = np.ones(conf_off[-1], dtype=np.uint8)
    for r in range(n_regions):
        s = sid[r]
        nv = nvars[s]
        v0 = var_off[r]
        for c in range(conf_off[r + 1] - conf_off[r]):
            b0 = bits_off[s] + c * nv
            for j in range(nv):
                if not allowed[var_idx[v0 + j], bits_flat[b0 + j]]:
                    mask[conf_off[r] + c] = 0
                    break
    return mask


@njit(cache=True)
def arc_consistency(edge_parent, edge_child, edge_proj, proj_flat, proj_off, conf_off, mask):
    """Prune configurations without support across every edge, to a fixed point."""
    n_edges = len(edge_parent)
    max_child = 0
    for e in range(n_edges):
        n = conf_off[edge_child[e] + 1] - conf_off[edge_child[e]]
        if n > max_child:
            max_child = n
    seen = np.zeros(max_child, dtype=np.uint8)
    passes = 0
    changed = True
    while changed:
        changed = False
        passes += 1
        for e in range(n_edges):
            P = edge_parent[e]
            C = edge_child[e]
            p0 = conf_off[P]
            c0 = conf_off[C]
            nP = conf_off[P + 1] - p0
            nC = conf_off[C + 1] - c0
            po = proj_off[edge_proj[e]]
            for c in range(nC):
                seen[c] = 0
            for p in range(nP):
                if mask[p0 + p]:
                    c = proj_flat[po + p]
                    if c < 0 or not mask[c0 + c]:
                        mask[p0 + p] = 0
                        changed = True
                    else:
                        seen[c] = 1
            for c in range(nC):
                if mask[c0 + c] and not seen[c]:
                    mask[c0 + c] = 0
                    changed = True
    return passes


@njit(cache=True)
def count_slots(ch_off, ch_list, pe_off, pe_list, edge_parent, n_regions):
    """Number of messages entering each region's descendant closure from outside."""
    stamp = np.full(n_regions, -1, dtype=np.int64)
    stack = np.empty(n_regions, dtype=np.int64)
    desc = np.empty(n_regions, dtype=np.int64)
    counts = np.zeros(n_regions, dtype=np.int64)
    for r in range(n_regions):
        nd = _descendants(r, ch_off, ch_list, stamp, stack, desc)
        k = 0
        for i in range(nd):
            C = desc[i]
            for j in range(pe_off[C], pe_off[C + 1]):
                if stamp[edge_parent[pe_list[j]]] != r:
                    k += 1
        counts[r] = k
    return counts


@njit(cache=True)
def fill_slots(ch_off, ch_list, pe_off, pe_list, edge_parent, n_regions, slot_off,
               sid, origins, n_shapes, ostride, n_off, slot_edge, slot_code):
    stamp = np.full(n_regions, -1, dtype=np.int64)
    stack = np.empty(n_regions, dtype=np.int64)
    desc = np.empty(n_regions, dtype=np.int64)
    ndim = origins.shape[1]
    for r in range(n_regions):
        nd = _descendants(r, ch_off, ch_list, stamp, stack, desc)
        k = slot_off[r]
        for i in range(nd):
            C = desc[i]
            off = 0
            for a in range(ndim):
                off += (origins[C, a] - origins[r, a]) * ostride[a]
            code = (sid[r] * n_shapes + sid[C]) * n_off + off
            for j in range(pe_off[C], pe_off[C + 1]):
                e = pe_list[j]
                if stamp[edge_parent[e]] != r:
                    slot_edge[k] = e
                    slot_code[k] = code
                    k += 1


@njit(cache=True)
def _descendants(r, ch_off, ch_list, stamp, stack, desc):
    stamp[r] = r
    top = 0
    stack[0] = r
    top = 1
    nd = 0
    while top > 0:
        top -= 1
        x = stack[top]
        desc[nd] = x
        nd += 1
        for j in range(ch_off[x], ch_off[x + 1]):
            y = ch_list[j]
            if stamp[y] != r:
                stamp[y] = r
                stack[top] = y
                top += 1
    return nd


@njit(cache=True)
def log_factors(conf_off, sid, bits_flat, bits_off, nvars, var_off, var_idx, log_unary):
    """Per-configuration log of the unary-factor product of each region."""
    out = np.zeros(conf_off[-1])
    for r in range(len(sid)):
        s = sid[r]
        nv = nvars[s]
        v0 = var_off[r]
        for c in range(conf_off[r + 1] - conf_off[r]):
            b0 = bits_off[s] + c * nv
            acc = 0.0
            for j in range(nv):
                acc += log_unary[var_idx[v0 + j], bits_flat[b0 + j]]
            out[conf_off[r] + c] = acc
    return out


@njit(cache=True)
def beliefs(logf, logm, conf_off, slot_off, slot_edge, slot_proj, msg_off,
            proj_flat, proj_off, mask, out):
    """Normalised log beliefs; returns -1, or the id of a region with no support."""
    for r in range(len(conf_off) - 1):
        b0 = conf_off[r]
        n = conf_off[r + 1] - b0
        for c in range(n):
            out[b0 + c] = logf[b0 + c]
        for s in range(slot_off[r], slot_off[r + 1]):
            mo = msg_off[slot_edge[s]]
            po = proj_off[slot_proj[s]]
            for c in range(n):
                out[b0 + c] += logm[mo + proj_flat[po + c]]
        mx = NEG_INF
        for c in range(n):
            if mask[b0 + c] and out[b0 + c] > mx:
                mx = out[b0 + c]
        if mx == NEG_INF:
            return r
        acc = 0.0
        for c in range(n):
            if mask[b0 + c]:
                acc += math.exp(out[b0 + c] - mx)
        lse = mx + math.log(acc)
        for c in range(n):
            if mask[b0 + c]:
                out[b0 + c] -= lse
            else:
                out[b0 + c] = NEG_INF
    return -1


@njit(cache=True)
def update_messages(edges, logb, logm_old, logm_new, edge_parent, edge_child, edge_proj,
                    conf_off, msg_off, proj_flat, proj_off, mask, step):
    """Parent-to-child update ``m <- m * marg_C(b_P) / b_C`` on the listed edges.

    The log message moves a fraction ``step[e]`` of the way to the undamped
    update.  Reads ``logm_old`` and writes ``logm_new`` (which may alias it).
    Returns the largest absolute change of a supported log-message entry.
    """
    max_child = 0
    for e in edges:
        n = msg_off[e + 1] - msg_off[e]
        if n > max_child:
            max_child = n
    marg = np.empty(max_child)
    fresh = np.empty(max_child)
    residual = 0.0
    for e in edges:
        P = edge_parent[e]
        C = edge_child[e]
        p0 = conf_off[P]
        c0 = conf_off[C]
        nP = conf_off[P + 1] - p0
        nC = conf_off[C + 1] - c0
        mo = msg_off[e]
        po = proj_off[edge_proj[e]]
        for c in range(nC):
            marg[c] = NEG_INF
        for p in range(nP):
            if mask[p0 + p]:
                c = proj_flat[po + p]
                v = logb[p0 + p]
                a = marg[c]
                if a == NEG_INF:
                    marg[c] = v
                elif v > a:
                    marg[c] = v + math.log1p(math.exp(a - v))
                else:
                    marg[c] = a + math.log1p(math.exp(v - a))
        mx = NEG_INF
        for c in range(nC):
            if mask[c0 + c]:
                if marg[c] == NEG_INF or logb[c0 + c] == NEG_INF:
                    # division by zero resolves to "unsupported"
                    mask[c0 + c] = 0
                    continue
                v = logm_old[mo + c] + marg[c] - logb[c0 + c]
                fresh[c] = v
                if v > mx:
                    mx = v
        acc = 0.0
        for c in range(nC):
            if mask[c0 + c]:
                acc += math.exp(fresh[c] - mx)
        lse = mx + math.log(acc)
        mx = NEG_INF
        for c in range(nC):
            if mask[c0 + c]:
                v = logm_old[mo + c] + step[e] * (fresh[c] - lse - logm_old[mo + c])
                fresh[c] = v
                if v > mx:
                    mx = v
        acc = 0.0
        for c in range(nC):
            if mask[c0 + c]:
                acc += math.exp(fresh[c] - mx)
        lse = mx + math.log(acc)
        for c in range(nC):
            if mask[c0 + c]:
                v = fresh[c] - lse
                d = abs(v - logm_old[mo + c])
                if d > residual:
                    residual = d
                logm_new[mo + c] = v
            else:
                logm_new[mo + c] = 0.0
    return residual


@njit(cache=True)
def consistency(logb, edge_parent, edge_child, edge_proj, conf_off, proj_flat, proj_off, mask):
    """Largest |sum_{x_P -> x_C} b_P - b_C| over all edges, in probability units."""
    worst = 0.0
    max_child = 1
    for e in range(len(edge_parent)):
        n = conf_off[edge_child[e] + 1] - conf_off[edge_child[e]]
        if n > max_child:
            max_child = n
    marg = np.empty(max_child)
    for e in range(len(edge_parent)):
        P = edge_parent[e]
        C = edge_child[e]
        p0 = conf_off[P]
        c0 = conf_off[C]
        po = proj_off[edge_proj[e]]
        nC = conf_off[C + 1] - c0
        for c in range(nC):
            marg[c] = 0.0
        for p in range(conf_off[P + 1] - p0):
            if mask[p0 + p]:
                marg[proj_flat[po + p]] += math.exp(logb[p0 + p])
        for c in range(nC):
            b = math.exp(logb[c0 + c]) if mask[c0 + c] else 0.0
            d = abs(marg[c] - b)
            if d > worst:
                worst = d
    return worst


@njit(cache=True)
def region_terms(logb, logf, conf_off, mask):
    """Per-region average energy ``-sum b ln f`` and entropy ``-sum b ln b``."""
    n_regions = len(conf_off) - 1
    energy = np.zeros(n_regions)
    entropy = np.zeros(n_regions)
    for r in range(n_regions):
        e = 0.0
        h = 0.0
        for i in range(conf_off[r], conf_off[r + 1]):
            if mask[i]:
                b = math.exp(logb[i])
                if b > 0.0:
                    h -= b * logb[i]
                    e -= b * logf[i]
        energy[r] = e
        entropy[r] = h
    return energy, entropy


# -- outer/inner block updates ------------------------------------------------------

@njit(cache=True)
def _normalise_row(row):
    mx = NEG_INF
    for x in range(len(row)):
        if row[x] > mx:
            mx = row[x]
    acc = 0.0
    for x in range(len(row)):
        if row[x] != NEG_INF:
            acc += math.exp(row[x] - mx)
    return mx + math.log(acc)


@njit(cache=True)
def block_sweep(order, S, lam, q, qref, blk_off, pair_alpha, pair_proj, lam_off, q_off,
                proj_flat, proj_off, qmask, chat, lin, lnf, damping):
    """One pass of exact block updates over the inner regions listed in ``order``.

    ``S[a]`` holds the log potential of outer region ``a`` (its log factors
    minus the multipliers ``lam`` of every inner region it contains).  For an
    inner region ``b`` whose containing outer regions have cavity marginals
    ``l_i``, the update sets

        ln q_b = (chat_b ln f_b + sum_i l_i - lin_b (ln qref_b - ln f_b)) / (chat_b + n_b)

    and ``lam_i = l_i - ln q_b`` so that every outer marginal equals ``q_b``.
    ``lin_b`` is the part of the counting number handled by linearisation
    around ``qref``.  Returns the largest change of ``ln q`` or of the
    undamped multiplier step (the damped change divided by ``1 - damping``)
    over supported entries, so the stopping rule does not depend on damping.
    """
    n_a = S.shape[1]
    max_b = 1
    for b in order:
        n = q_off[b + 1] - q_off[b]
        if n > max_b:
            max_b = n
    max_n = 1
    for b in order:
        n = blk_off[b + 1] - blk_off[b]
        if n > max_n:
            max_n = n
    ell = np.empty((max_n, max_b))
    lq = np.empty(max_b)
    lin_acc = np.empty(max_b)
    residual = 0.0
    for b in order:
        q0 = q_off[b]
        nb = q_off[b + 1] - q0
        i0 = blk_off[b]
        n = blk_off[b + 1] - i0
        if n == 0:
            continue
        for k in range(n):
            i = i0 + k
            a = pair_alpha[i]
            po = proj_off[pair_proj[i]]
            # marginal of the outer belief in the linear domain, then one log per entry
            mx = NEG_INF
            for x in range(n_a):
                if S[a, x] > mx:
                    mx = S[a, x]
            for c in range(nb):
                lin_acc[c] = 0.0
            total = 0.0
            for x in range(n_a):
                v = S[a, x]
                if v != NEG_INF:
                    e = math.exp(v - mx)
                    lin_acc[proj_flat[po + x]] += e
                    total += e
            lo = lam_off[i]
            for c in range(nb):
                if qmask[q0 + c] and lin_acc[c] > 0.0:
                    ell[k, c] = math.log(lin_acc[c] / total) + lam[lo + c]
                else:
                    ell[k, c] = NEG_INF
        denom = chat[b] + n
        mx = NEG_INF
        for c in range(nb):
            if qmask[q0 + c]:
                s = chat[b] * lnf[q0 + c] - lin[b] * (qref[q0 + c] - lnf[q0 + c])
                for k in range(n):
                    s += ell[k, c]
                s /= denom
                lq[c] = s
                if s > mx:
                    mx = s
        acc = 0.0
        for c in range(nb):
            if qmask[q0 + c]:
                acc += math.exp(lq[c] - mx)
        lse = mx + math.log(acc)
        for c in range(nb):
            if qmask[q0 + c]:
                lq[c] -= lse
                d = abs(lq[c] - q[q0 + c])
                if d > residual:
                    residual = d
                q[q0 + c] = lq[c]
        for k in range(n):
            i = i0 + k
            a = pair_alpha[i]
            po = proj_off[pair_proj[i]]
            lo = lam_off[i]
            # keep multipliers anchored: subtract the largest target entry
            top = NEG_INF
            for c in range(nb):
                if qmask[q0 + c]:
                    t = ell[k, c] - lq[c]
                    if t > top:
                        top = t
            for c in range(nb):
                if qmask[q0 + c]:
                    new = (1.0 - damping) * (ell[k, c] - lq[c] - top) + damping * lam[lo + c]
                    lq_delta = new - lam[lo + c]
                    d = abs(lq_delta) / (1.0 - damping)
                    if d > residual:
                        residual = d
                    lam[lo + c] = new
                    ell[k, c] = lq_delta
                else:
                    ell[k, c] = 0.0
            for x in range(n_a):
                if S[a, x] != NEG_INF:
                    S[a, x] -= ell[k, proj_flat[po + x]]
    return residual


@njit(cache=True)
def lse(row):
    return _normalise_row(row)


@njit(cache=True)
def apply_multipliers(S, lam, pair_alpha, pair_proj, lam_off, proj_flat, proj_off):
    """Subtract every stored multiplier from the log potential of its outer region."""
    n_a = S.shape[1]
    for i in range(len(pair_alpha)):
        a = pair_alpha[i]
        po = proj_off[pair_proj[i]]
        lo = lam_off[i]
        for x in range(n_a):
            if S[a, x] != NEG_INF:
                S[a, x] -= lam[lo + proj_flat[po + x]]


@njit(cache=True)
def marginals_from(logb, targets, sources, lut, sid, origins, n_shapes, ostride, n_off,
                   conf_off, proj_flat, proj_off, mask):
    """Overwrite the beliefs of ``targets`` with marginals of the matching ``sources``."""
    ndim = origins.shape[1]
    for t in range(len(targets)):
        r = targets[t]
        a = sources[t]
        off = 0
        for ax in range(ndim):
            off += (origins[r, ax] - origins[a, ax]) * ostride[ax]
        pid = lut[(sid[a] * n_shapes + sid[r]) * n_off + off]
        po = proj_off[pid]
        r0 = conf_off[r]
        for c in range(conf_off[r + 1] - r0):
            logb[r0 + c] = NEG_INF
        a0 = conf_off[a]
        for x in range(conf_off[a + 1] - a0):
            if mask[a0 + x]:
                v = logb[a0 + x]
                if v == NEG_INF:
                    continue
                j = r0 + proj_flat[po + x]
                w = logb[j]
                if w == NEG_INF:
                    logb[j] = v
                elif v > w:
                    logb[j] = v + math.log1p(math.exp(w - v))
                else:
                    logb[j] = w + math.log1p(math.exp(v - w))
