"""Pure-Python emit loop. Must stay line-for-line equivalent to _ckernel.pyx."""

REASON_BUDGET = 0
REASON_FULL = 1
REASON_MAX = 2


def emit_slice(budget_ns, start_ns, app_ns, capture_ns, phase_ns,
               sizes, size_idx, max_events,
               count_mode, used, cap, max_cap,
               rel_a, rel_e, rel_total, credited,
               stop_on_full, out_sizes):
    """Run one producer thread for up to `budget_ns` of CPU.

    The thread alternates app work (`app_ns`) with a captured event costing
    `capture_ns`; `phase_ns == app_ns` means it sits at a capture point.
    Returns (t_ns, phase_ns, size_idx, emitted, stored, dropped, stored_bytes,
    used, cap, credited, reason, first_drop_ns).
    """
    n_sizes = len(sizes)
    record_out = n_sizes > 1
    t = 0
    emitted = stored = dropped = stored_bytes = 0
    first_drop = -1
    reason = REASON_BUDGET
    span = rel_e - rel_a
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
        if 0 <= max_events <= emitted:
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
            cap = min(cap * 2, max_cap)
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
