# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled emit loop. Semantics mirror _pykernel.emit_slice exactly."""

cdef enum:
    REASON_BUDGET = 0
    REASON_FULL = 1
    REASON_MAX = 2


def emit_slice(long long budget_ns, long long start_ns, long long app_ns, long long capture_ns,
               long long phase_ns, const long long[:] sizes, Py_ssize_t size_idx,
               long long max_events, bint count_mode, long long used, long long cap,
               long long max_cap, long long rel_a, long long rel_e, long long rel_total,
               long long credited, bint stop_on_full, long long[:] out_sizes):
    cdef Py_ssize_t n_sizes = sizes.shape[0]
    cdef bint record_out = n_sizes > 1
    cdef long long t = 0, need, size, units, now, target
    cdef long long emitted = 0, stored = 0, dropped = 0, stored_bytes = 0
    cdef long long first_drop = -1
    cdef long long span = rel_e - rel_a
    cdef int reason = REASON_BUDGET
    while True:
        need = app_ns - phase_ns
        if need > 0:
            if t + need > budget_ns:
                phase_ns += budget_ns - t
                t = budget_ns
                reason = REASON_BUDGET
                break
            t += need
            phase_ns = app_ns
        if max_events >= 0 and emitted >= max_events:
            reason = REASON_MAX
            break
        if t + capture_ns > budget_ns:
            reason = REASON_BUDGET
            break
        size = sizes[size_idx]
        units = 1 if count_mode else size
        if rel_total > credited:
            now = start_ns + t
            if now >= rel_e or span <= 0:
                target = rel_total
            elif now <= rel_a:
                target = credited
            else:
                target = rel_total * (now - rel_a) // span
            if target > credited:
                used -= target - credited
                credited = target
        while used + units > cap and cap < max_cap:
            cap = cap * 2 if cap * 2 < max_cap else max_cap
        if used + units > cap:
            if stop_on_full:
                reason = REASON_FULL
                break
            dropped += 1
            if first_drop < 0:
                first_drop = t
        else:
            used += units
            if record_out:
                out_sizes[stored] = size
            stored += 1
            stored_bytes += size
        emitted += 1
        t += capture_ns
        phase_ns = 0
        size_idx += 1
        if size_idx == n_sizes:
            size_idx = 0
    return (t, phase_ns, size_idx, emitted, stored, dropped, stored_bytes,
            used, cap, credited, reason, first_drop)
