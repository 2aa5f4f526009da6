"""Compiled event loops (direct-method Gillespie with rate buckets).

Lattice sites are flat indices into a dense array; ``nbr[s, k]`` is the k-th
neighbour of site s or -1 outside a finite box.  A site in state ``i < N``
with ``n`` full neighbours sits in birth bucket ``i*(2d+1) + n`` whose
per-site rate is ``i*phi + lam*n``; empty sites with no full neighbour are
kept out of every bucket.  Occupied sites also sit in the death set.

The uniform used to pick a bucket member is reused (its fractional part) to
decide internal versus external birth and the source neighbour, so event
logging never changes the random stream.
"""

import numpy as np
from numba import njit

STATUS_EXTINCT = 0
STATUS_CENSORED = 1
STATUS_GROW = 2
STATUS_CAP = 3

KIND_INTERNAL = 0
KIND_EXTERNAL = 1
KIND_DISASTER = 2


@njit(cache=True)
def seed_engine(seed):
    np.random.seed(seed)


@njit(cache=True)
def _grow_i64(a, n):
    out = np.empty(max(2 * a.shape[0], n), dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _grow_2d(a):
    out = np.empty((a.shape[0], 2 * a.shape[1]), dtype=a.dtype)
    out[:, : a.shape[1]] = a
    return out


@njit(cache=True)
def _bucket_of(s, state, nbr, N, width, contact):
    i = state[s]
    if i >= N:
        return -1
    n = 0
    for k in range(nbr.shape[1]):
        y = nbr[s, k]
        if y >= 0 and state[y] == N:
            n += 1
    if i == 0 and n == 0:
        return -1
    return i * width + n


@njit(cache=True)
def run_lattice(state, nbr, edge, N, phi, lam, contact, t, t_max, record, snap_times, snap_idx, snap_out):
    """Advance ``state`` in place from time ``t``.

    Returns ``(status, t, snap_idx, n_events, ev_time, ev_site, ev_kind,
    ev_new, ev_src, ev_rate)``; ``ev_rate`` is the total rate the event was
    drawn from.  ``STATUS_GROW`` means a site on the box edge became
    occupied; the caller must embed the state in a larger box and call again.
    """
    n_sites = state.shape[0]
    two_d = nbr.shape[1]
    width = two_d + 1
    n_buckets = N * width
    rate = np.empty(n_buckets)
    for i in range(N):
        for n in range(width):
            rate[i * width + n] = i * phi + lam * n

    cap = 64
    members = np.empty((n_buckets, cap), dtype=np.int64)
    count = np.zeros(n_buckets, dtype=np.int64)
    where = np.full(n_sites, -1, dtype=np.int64)
    slot = np.zeros(n_sites, dtype=np.int64)
    occ = np.empty(n_sites, dtype=np.int64)
    occ_slot = np.full(n_sites, -1, dtype=np.int64)
    n_occ = 0

    for s in range(n_sites):
        if state[s] > 0:
            occ[n_occ] = s
            occ_slot[s] = n_occ
            n_occ += 1
        b = _bucket_of(s, state, nbr, N, width, contact)
        if b >= 0:
            if count[b] == cap:
                members = _grow_2d(members)
                cap = members.shape[1]
            members[b, count[b]] = s
            slot[s] = count[b]
            where[s] = b
            count[b] += 1

    ev_cap = 256 if record else 1
    ev_time = np.empty(ev_cap)
    ev_site = np.empty(ev_cap, dtype=np.int64)
    ev_kind = np.empty(ev_cap, dtype=np.int64)
    ev_new = np.empty(ev_cap, dtype=np.int64)
    ev_src = np.empty(ev_cap, dtype=np.int64)
    ev_rate = np.empty(ev_cap)
    n_ev = 0
    n_snap = snap_times.shape[0]
    status = STATUS_CENSORED

    while True:
        total = float(n_occ)
        for b in range(n_buckets):
            total += count[b] * rate[b]
        if n_occ == 0:
            while snap_idx < n_snap:
                snap_out[snap_idx] = 0
                snap_idx += 1
            status = STATUS_EXTINCT
            break

        t_next = t - np.log(1.0 - np.random.random()) / total
        while snap_idx < n_snap and snap_times[snap_idx] < t_next:
            snap_out[snap_idx] = n_occ
            snap_idx += 1
        if t_next > t_max:
            t = t_max
            status = STATUS_CENSORED
            break
        t = t_next

        target = np.random.random() * total
        src = -1
        if target < n_occ:
            x = occ[min(int(target), n_occ - 1)]
            kind = KIND_DISASTER
            new = 0
        else:
            acc = float(n_occ)
            chosen = -1
            last_b = -1
            last_acc = acc
            for b in range(n_buckets):
                w = count[b] * rate[b]
                if w > 0.0:
                    if target < acc + w:
                        chosen = b
                        break
                    last_b = b
                    last_acc = acc
                    acc += w
            if chosen < 0:
                # rounding pushed target past the last bucket
                chosen = last_b
                acc = last_acc
            b = chosen
            u = (target - acc) / rate[b]
            k = min(int(u), count[b] - 1)
            frac = (u - k) * rate[b]
            x = members[b, k]
            i = state[x]
            if frac < i * phi or lam == 0.0:
                kind = KIND_INTERNAL
            else:
                kind = KIND_EXTERNAL
                j = min(int((frac - i * phi) / lam), b - i * width - 1)
                for kk in range(two_d):
                    y = nbr[x, kk]
                    if y >= 0 and state[y] == N:
                        if j == 0:
                            src = y
                            break
                        j -= 1
            new = N if contact else i + 1

        old = state[x]
        state[x] = new
        if old == 0 and new > 0:
            occ[n_occ] = x
            occ_slot[x] = n_occ
            n_occ += 1
        elif old > 0 and new == 0:
            p = occ_slot[x]
            last = occ[n_occ - 1]
            occ[p] = last
            occ_slot[last] = p
            occ_slot[x] = -1
            n_occ -= 1

        for kk in range(two_d + 1):
            s = x if kk == two_d else nbr[x, kk]
            if s < 0:
                continue
            nb = _bucket_of(s, state, nbr, N, width, contact)
            ob = where[s]
            if nb == ob:
                continue
            if ob >= 0:
                p = slot[s]
                last = members[ob, count[ob] - 1]
                members[ob, p] = last
                slot[last] = p
                count[ob] -= 1
            if nb >= 0:
                if count[nb] == cap:
                    members = _grow_2d(members)
                    cap = members.shape[1]
                members[nb, count[nb]] = s
                slot[s] = count[nb]
                count[nb] += 1
            where[s] = nb

        if record:
            if n_ev == ev_time.shape[0]:
                ev_time = np.concatenate((ev_time, np.empty(ev_time.shape[0])))
                ev_site = _grow_i64(ev_site, 0)
                ev_kind = _grow_i64(ev_kind, 0)
                ev_new = _grow_i64(ev_new, 0)
                ev_src = _grow_i64(ev_src, 0)
                ev_rate = np.concatenate((ev_rate, np.empty(ev_rate.shape[0])))
            ev_time[n_ev] = t
            ev_rate[n_ev] = total
            ev_site[n_ev] = x
            ev_kind[n_ev] = kind
            ev_new[n_ev] = new
            ev_src[n_ev] = src
        n_ev += 1

        if new > 0 and edge[x]:
            status = STATUS_GROW
            break

    m = n_ev if record else 0
    return status, t, snap_idx, n_ev, ev_time[:m], ev_site[:m], ev_kind[:m], ev_new[:m], ev_src[:m], ev_rate[:m]


@njit(cache=True)
def run_flocks(fsite, fsize, n_flocks, directions, N, phi, lam, torus_L, t, t_max, flock_cap, record):
    """Event loop for the multi-flock process.

    ``fsite[f]`` holds the coordinates of flock f and ``fsize[f]`` its size;
    the first ``n_flocks`` rows are live.  Any size-N flock seeds a new
    size-1 flock on each neighbour at rate ``lam``; a flock of size ``i < N``
    grows at rate ``i*phi + 2d*lam``; every flock dies at rate 1.

    Returns ``(status, t, fsite, fsize, n_flocks, n_events, ev_time,
    ev_site, ev_kind, ev_new, ev_src)`` with live flocks compacted to the
    first ``n_flocks`` rows.
    """
    d = fsite.shape[1]
    two_d = directions.shape[0]
    c = two_d * lam
    cap = max(fsite.shape[0], 16)
    sites = np.empty((cap, d), dtype=np.int64)
    sizes = np.empty(cap, dtype=np.int64)
    # bucket by size; slot within bucket and within the live list
    by_size = np.empty((N + 1, cap), dtype=np.int64)
    size_count = np.zeros(N + 1, dtype=np.int64)
    size_slot = np.empty(cap, dtype=np.int64)
    live = np.empty(cap, dtype=np.int64)
    live_slot = np.empty(cap, dtype=np.int64)
    free = np.empty(cap, dtype=np.int64)
    n_free = 0
    for f in range(cap - 1, n_flocks - 1, -1):
        free[n_free] = f
        n_free += 1
    n_live = 0
    for f in range(n_flocks):
        sites[f] = fsite[f]
        sizes[f] = fsize[f]
        live[n_live] = f
        live_slot[f] = n_live
        n_live += 1
        s = fsize[f]
        by_size[s, size_count[s]] = f
        size_slot[f] = size_count[s]
        size_count[s] += 1

    grow_rate = np.empty(N + 1)
    for i in range(N + 1):
        grow_rate[i] = i * phi + c

    ev_cap = 256 if record else 1
    ev_time = np.empty(ev_cap)
    ev_site = np.empty((ev_cap, d), dtype=np.int64)
    ev_kind = np.empty(ev_cap, dtype=np.int64)
    ev_new = np.empty(ev_cap, dtype=np.int64)
    ev_src = np.empty((ev_cap, d), dtype=np.int64)
    n_ev = 0
    status = STATUS_CENSORED

    while True:
        if n_live == 0:
            status = STATUS_EXTINCT
            break
        if n_live > flock_cap:
            status = STATUS_CAP
            break
        total = float(n_live) + size_count[N] * c
        for i in range(1, N):
            total += size_count[i] * grow_rate[i]
        t_next = t - np.log(1.0 - np.random.random()) / total
        if t_next > t_max:
            t = t_max
            status = STATUS_CENSORED
            break
        t = t_next

        target = np.random.random() * total
        if target < n_live:
            f = live[min(int(target), n_live - 1)]
            kind = KIND_DISASTER
            new = 0
            at = sites[f].copy()
            src = at
            # remove f
            p = live_slot[f]
            last = live[n_live - 1]
            live[p] = last
            live_slot[last] = p
            n_live -= 1
            s = sizes[f]
            p = size_slot[f]
            last = by_size[s, size_count[s] - 1]
            by_size[s, p] = last
            size_slot[last] = p
            size_count[s] -= 1
            free[n_free] = f
            n_free += 1
        else:
            acc = float(n_live)
            w = size_count[N] * c
            if target < acc + w or N == 1:
                u = (target - acc) / c
                k = min(int(u), size_count[N] - 1)
                parent = by_size[N, k]
                dirn = min(int((u - k) * two_d), two_d - 1)
                at = sites[parent] + directions[dirn]
                if torus_L > 0:
                    at = at % torus_L
                src = sites[parent].copy()
                kind = KIND_EXTERNAL
                new = 1
                if n_free == 0:
                    ncap = 2 * cap
                    sites2 = np.empty((ncap, d), dtype=np.int64)
                    sites2[:cap] = sites
                    sites = sites2
                    sizes = _grow_i64(sizes, ncap)
                    size_slot = _grow_i64(size_slot, ncap)
                    live = _grow_i64(live, ncap)
                    live_slot = _grow_i64(live_slot, ncap)
                    free = _grow_i64(free, ncap)
                    by_size2 = np.empty((N + 1, ncap), dtype=np.int64)
                    by_size2[:, :cap] = by_size
                    by_size = by_size2
                    for g in range(ncap - 1, cap - 1, -1):
                        free[n_free] = g
                        n_free += 1
                    cap = ncap
                n_free -= 1
                f = free[n_free]
                sites[f] = at
                sizes[f] = 1
                live[n_live] = f
                live_slot[f] = n_live
                n_live += 1
                by_size[1, size_count[1]] = f
                size_slot[f] = size_count[1]
                size_count[1] += 1
            else:
                acc += w
                chosen = -1
                last_i = -1
                last_acc = acc
                for i in range(1, N):
                    w = size_count[i] * grow_rate[i]
                    if w > 0.0:
                        if target < acc + w:
                            chosen = i
                            break
                        last_i = i
                        last_acc = acc
                        acc += w
                if chosen < 0:
                    chosen = last_i
                    acc = last_acc
                i = chosen
                k = min(int((target - acc) / grow_rate[i]), size_count[i] - 1)
                f = by_size[i, k]
                at = sites[f].copy()
                src = at
                kind = KIND_INTERNAL
                new = i + 1
                p = size_slot[f]
                last = by_size[i, size_count[i] - 1]
                by_size[i, p] = last
                size_slot[last] = p
                size_count[i] -= 1
                sizes[f] = new
                by_size[new, size_count[new]] = f
                size_slot[f] = size_count[new]
                size_count[new] += 1

        if record:
            if n_ev == ev_time.shape[0]:
                m = 2 * n_ev
                et = np.empty(m)
                et[:n_ev] = ev_time
                ev_time = et
                es = np.empty((m, d), dtype=np.int64)
                es[:n_ev] = ev_site
                ev_site = es
                ec = np.empty((m, d), dtype=np.int64)
                ec[:n_ev] = ev_src
                ev_src = ec
                ev_kind = _grow_i64(ev_kind, m)
                ev_new = _grow_i64(ev_new, m)
            ev_time[n_ev] = t
            ev_site[n_ev] = at
            ev_kind[n_ev] = kind
            ev_new[n_ev] = new
            ev_src[n_ev] = src
        n_ev += 1

    out_sites = np.empty((n_live, d), dtype=np.int64)
    out_sizes = np.empty(n_live, dtype=np.int64)
    for j in range(n_live):
        out_sites[j] = sites[live[j]]
        out_sizes[j] = sizes[live[j]]
    m = min(n_ev, ev_time.shape[0]) if record else 0
    return status, t, out_sites, out_sizes, n_live, n_ev, ev_time[:m], ev_site[:m], ev_kind[:m], ev_new[:m], ev_src[:m]
