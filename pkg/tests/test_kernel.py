import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audit_arena import kernel
from audit_arena._pykernel import REASON_BUDGET, REASON_FULL, REASON_MAX
from audit_arena._pykernel import emit_slice as py_emit

needs_c = pytest.mark.skipif(kernel.c_emit_slice is None, reason="compiled kernel not built")


def call(fn, args, sizes, n_out):
    out = np.zeros(n_out, dtype=np.int64)
    arr = np.asarray(sizes, dtype=np.int64)
    r = fn(*args[:5], arr, *args[5:], out)
    return tuple(int(x) for x in r), out


@st.composite
def slices(draw):
    sizes = draw(st.lists(st.integers(1, 300), min_size=1, max_size=6))
    app = draw(st.integers(0, 5000))
    cap_ns = draw(st.integers(0 if app else 1, 3000))
    budget = draw(st.integers(0, 200_000))
    start = draw(st.integers(0, 10**9))
    phase = draw(st.integers(0, app))
    idx = draw(st.integers(0, len(sizes) - 1))
    max_ev = draw(st.integers(-1, 500))
    count_mode = draw(st.booleans())
    cap = draw(st.integers(1, 20_000))
    max_cap = cap * draw(st.sampled_from([1, 2, 8]))
    used = draw(st.integers(0, cap))
    rel_total = draw(st.integers(0, used))
    credited = draw(st.integers(0, rel_total))
    rel_a = start + draw(st.integers(-5000, 50_000))
    rel_e = rel_a + draw(st.integers(0, 100_000))
    stop = draw(st.booleans())
    args = (budget, start, app, cap_ns, phase, idx, max_ev, count_mode, used, cap, max_cap,
            rel_a, rel_e, rel_total, credited, stop)
    return args, sizes


@needs_c
@settings(max_examples=3000, deadline=None)
@given(slices())
def test_compiled_matches_python(case):
    args, sizes = case
    n_out = 200_001
    rp, outp = call(py_emit, args, sizes, n_out)
    rc, outc = call(kernel.c_emit_slice, args, sizes, n_out)
    assert rp == rc
    assert np.array_equal(outp[:rp[4]], outc[:rc[4]])


@settings(max_examples=500, deadline=None)
@given(slices())
def test_slice_accounting(case):
    args, sizes = case
    (t, phase, idx, emitted, stored, dropped, sbytes, used, cap, credited, reason, first_drop), _ = \
        call(py_emit, args, sizes, 200_001)
    budget, capture_ns, max_ev, stop = args[0], args[3], args[6], args[15]
    assert 0 <= t <= budget
    assert emitted == stored + dropped
    assert used <= cap <= args[10]
    if stop:
        assert dropped == 0
    if reason == REASON_MAX:
        assert emitted == max_ev
    if reason == REASON_FULL:
        assert stop
    assert (first_drop >= 0) == (dropped > 0)


def test_flat_out_capture_count():
    # 1 ms of CPU, 9 us of app work + 1 us capture per event
    r, _ = call(py_emit, (1_000_000, 0, 9000, 1000, 9000, 0, -1, False, 0, 10**9, 10**9, 0, 0, 0, 0, False),
                [126], 1)
    assert r[3] == 100
    assert r[10] == REASON_BUDGET


def test_full_buffer_stops_blocking_producer():
    r, _ = call(py_emit, (10**9, 0, 0, 1000, 0, 0, -1, False, 0, 126 * 3, 126 * 3, 0, 0, 0, 0, True),
                [126], 1)
    assert r[3] == 3 and r[10] == REASON_FULL


def test_variable_sizes_written_out():
    r, out = call(py_emit, (10_000, 0, 0, 1000, 0, 0, 4, False, 0, 10**6, 10**6, 0, 0, 0, 0, False),
                  [10, 20, 30], 10)
    assert list(out[:r[4]]) == [10, 20, 30, 10]
    assert r[2] == 1


def test_kernel_selection_flag():
    assert kernel.COMPILED == (kernel.c_emit_slice is not None)
    assert kernel.emit_slice is (kernel.c_emit_slice if kernel.COMPILED else kernel.py_emit_slice)


def test_pure_fallback_selected_by_env():
    import os
    import subprocess
    import sys
    env = dict(os.environ, AUDIT_ARENA_PURE="1")
    code = "from audit_arena import kernel; print(kernel.COMPILED, kernel.emit_slice.__module__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "audit_arena._pykernel"]


def test_benchmark_script_runs():
    import subprocess
    import sys
    from pathlib import Path
    script = Path(__file__).parents[1] / "benchmarks" / "bench_kernel.py"
    out = subprocess.run([sys.executable, str(script), "--repeat", "1", "--skip-run"],
                         check=True, capture_output=True, text=True).stdout
    assert "uniform" in out and "python" in out
