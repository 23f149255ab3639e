"""Smoke test for the qtraj_py extension module.

Build and stage the module first:

    cargo build --release -p qtraj-py
    cp target/release/libqtraj_py.so python/qtraj_py.so

then run `python3 python/smoke_test.py`.
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import qtraj_py as qt


def check_commutativity():
    split = qt.check_self_commutative([[1, 0], [0, 0]], [[0, 0], [0, 1]])
    assert split["commutative"], split
    assert qt.cross_validate([[1, 0], [0, 0]], [[0, 0], [0, 1]], trials=4)

    shared = qt.check_self_commutative([[0, 0], [1, 0]], [[1, 0], [0, 0]])
    assert not shared["commutative"], shared
    assert shared["violations"]["G_Fstar"] > 0.9
    assert qt.cross_validate([[0, 0], [1, 0]], [[1, 0], [0, 0]], trials=4)

    try:
        qt.check_self_commutative([[1, 0]], [[0, 0], [0, 0]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-square selection must be rejected")


def check_composition():
    dim, r, theta = 4, math.sqrt(0.5), 0.3
    zero = [[0j] * dim for _ in range(dim)]
    coupling = [
        [0.8 * math.sqrt(j) if j == i + 1 else 0j for j in range(dim)]
        for i in range(dim)
    ]
    system = qt.Slh([[1.0 + 0j]], [coupling], zero)
    explicit = qt.series(
        qt.concatenate(system, qt.Slh.passive(1, dim)),
        qt.Slh.beam_splitter(r, theta, dim),
    )
    closed = qt.beam_splitter_composite(coupling, zero, r, theta)
    assert explicit.channels() == closed.channels() == 2
    for got_l, want_l in zip(explicit.l, closed.l):
        worst = max(
            abs(a - b) for ga, wa in zip(got_l, want_l) for a, b in zip(ga, wa)
        )
        assert worst < 1e-12, worst


def check_ensemble():
    config = {
        "n0": 5,
        "gamma": 1.0,
        "r2": 0.5,
        "dt": 1e-3,
        "t_final": 1.0,
        "n_traj": 100,
        "seed": 71142014,
    }
    summary = qt.run_ensemble(config, threads=1)
    final_mean = summary["mean_N"][-1]
    final_se = summary["stderr_N"][-1]
    analytic = qt.analytic_mean_number(5, 1.0, 1.0)
    assert abs(summary["analytic_N"][-1] - analytic) < 1e-12
    assert abs(final_mean - analytic) < 4 * final_se, (final_mean, analytic, final_se)
    assert summary["leakage_max"] < 1e-9

    p = qt.analytic_number_distribution(5, 1.0, 1.0)
    assert abs(sum(p) - 1.0) < 1e-12
    assert qt.total_variation(p, p) == 0.0

    bad = dict(config, dim=6)
    try:
        qt.run_ensemble(bad)
    except ValueError as err:
        assert "truncation margin" in str(err)
    else:
        raise AssertionError("missing truncation margin must be rejected")


def check_comparison():
    config = {
        "n0": 5,
        "gamma": 1.0,
        "r2": 0.5,
        "dt": 1e-3,
        "t_final": 1.0,
        "n_traj": 400,
        "seed": 71142014,
    }
    report = qt.compare_filters(config, threads=1)
    z_corr = report["z_corrected"][-1]
    z_kur = report["z_kuramochi"][-1]
    assert abs(z_corr) < 3.5, z_corr
    assert z_kur < -3.0, z_kur
    assert report["mean_kuramochi"][-1] < report["analytic_N"][-1]


if __name__ == "__main__":
    check_commutativity()
    check_composition()
    check_ensemble()
    check_comparison()
    print("ok")
