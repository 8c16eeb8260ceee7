import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynfl.instance import (Instance, InstanceFormatError, generate_drifting, generate_two_level,
                            make_instance, read_instance, validate, write_instance)


def brute_triangle_ok(d, tol=1e-9):
    n_f, n_c = d.shape
    for i in range(n_f):
        for ip in range(n_f):
            for j in range(n_c):
                for jp in range(n_c):
                    if d[i, j] > d[i, jp] + d[ip, jp] + d[ip, j] + tol:
                        return False
    return True


def test_zero_metric_passes():
    assert validate(make_instance(np.zeros((1, 1, 1)), [0.0])).ok


def test_bipartite_triangle_violation_reported():
    # d(f0,c0)=10 but f0-c1-f1-c0 costs 3
    d = np.array([[[10.0, 1.0], [1.0, 1.0]]])
    rep = validate(make_instance(d, [1.0, 1.0]))
    assert not rep.ok
    v = rep.violations[0]
    assert v.kind == "triangle"
    t, i, ip, j, jp = v.witness
    assert (t, i, j) == (0, 0, 0)
    assert v.magnitude == pytest.approx(7.0)


def test_negative_and_nonfinite_rejected():
    d = np.array([[[1.0, -1.0]]])
    assert "negative dist" in str(validate(make_instance(d, [1.0])).violations[0])
    d = np.array([[[1.0, np.inf]]])
    assert not validate(make_instance(d, [1.0])).ok
    assert not validate(make_instance(np.ones((1, 1, 1)), [-2.0])).ok


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6),
       st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_validate_matches_quadruple_loop(n_f, n_c, seed, lo, span):
    rng = np.random.default_rng(seed)
    d = rng.uniform(lo, lo + span, size=(2, n_f, n_c))
    rep = validate(make_instance(d, np.ones(n_f)))
    assert rep.ok == all(brute_triangle_ok(d[t]) for t in range(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 5), st.floats(0, 0.5),
       st.integers(0, 2**31))
def test_generated_instances_are_metric(n_f, n_c, T, drift, seed):
    inst = generate_drifting(n_f, n_c, T, drift, 1.0, seed)
    assert validate(inst).ok
    assert inst == generate_drifting(n_f, n_c, T, drift, 1.0, seed)


def test_drift_bounds_client_motion():
    # with a single facility at fixed position, |d_t - d_{t+1}| <= drift
    inst = generate_drifting(1, 30, 6, 0.05, 0.0, 3)
    assert np.all(np.abs(np.diff(inst.dist[:, 0, :], axis=0)) <= 0.05 + 1e-12)


def test_two_level_generator():
    inst = generate_two_level(4, 6, 3, 1.0, 0)
    assert validate(inst).ok
    assert set(np.unique(inst.dist)) <= {1.0, 3.0}
    # every client is near exactly two facilities at each step
    assert np.all((inst.dist == 1.0).sum(axis=1) == 2)
    with pytest.raises(ValueError):
        generate_two_level(3, 2, 2, 1.0, 0, near=1.0, far=4.0)


def test_round_trip(tmp_path):
    inst = generate_drifting(3, 4, 2, 0.1, 2.5, 7)
    p = tmp_path / "inst.json"
    write_instance(inst, p)
    assert read_instance(p) == inst
    data = json.loads(p.read_text())
    assert set(data) >= {"facilities", "clients", "T", "g", "dist"}
    assert data["facilities"][0]["id"] == "f0"


def test_per_time_open_cost_round_trip(tmp_path):
    d = np.ones((2, 2, 1))
    inst = make_instance(d, np.array([[1.0, 2.0], [3.0, 4.0]]), g=0.5)
    p = tmp_path / "i.json"
    write_instance(inst, p)
    back = read_instance(p)
    assert np.array_equal(back.open_cost, [[1.0, 2.0], [3.0, 4.0]])


def test_malformed_json_names_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"T": 1,\n  "g": }')
    with pytest.raises(InstanceFormatError) as exc:
        read_instance(p)
    assert exc.value.location == f"{p}:2:8"


def test_missing_key_and_bad_shape():
    good = make_instance(np.ones((1, 2, 2)), [1.0, 1.0]).to_dict()
    bad = dict(good)
    del bad["T"]
    with pytest.raises(InstanceFormatError, match="T"):
        Instance.from_dict(bad)
    bad = dict(good, dist=[[[1.0, 1.0]]])
    with pytest.raises(InstanceFormatError, match="dist"):
        Instance.from_dict(bad)


def test_instances_are_read_only():
    inst = make_instance(np.ones((1, 1, 1)), [1.0])
    with pytest.raises(ValueError):
        inst.dist[0, 0, 0] = 2.0
