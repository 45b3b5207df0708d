"""Quick end-to-end check of the efrrom extension module.

Build it first with `pip install --no-build-isolation -e crates/python`,
then run `python python/smoke_test.py`.
"""

import math
import tempfile

import efrrom


def check_grids():
    counts = [len(efrrom.smolyak_grid(d, l)) for d, l in [(1, 3), (1, 6), (5, 1), (5, 4)]]
    assert counts == [9, 65, 11, 801], counts
    g = efrrom.smolyak_grid(2, 3)
    assert abs(sum(g.weights) - 1.0) < 1e-12
    second = g.expectation([p[0] ** 2 for p in g.points])
    assert abs(second - 1.0 / 3.0) < 1e-12, second
    nodes, weights = efrrom.cc_rule(1)
    assert nodes == [-1.0, 0.0, 1.0] and abs(sum(weights) - 1.0) < 1e-15


def check_filters_and_viscosity():
    assert efrrom.filter_transfer("none", 0.1, 50.0) == 1.0
    assert abs(efrrom.filter_transfer("df", 0.1, 100.0) - 0.5) < 1e-15
    assert abs(efrrom.filter_transfer("hodf1", 0.1, 100.0, m=2) - 0.25) < 1e-15
    assert abs(efrrom.viscosity(0.3, [0.0]) - 8e-4) < 1e-18
    try:
        efrrom.filter_transfer("df", -1.0, 1.0)
    except efrrom.ValidationError:
        pass
    else:
        raise AssertionError("negative delta accepted")


def check_pipeline():
    fom = efrrom.fom_run([0.5], n_nodes=33, dt=2e-3, t_final=0.1, stride=10)
    assert len(fom["times"]) == len(fom["snapshots"]) and len(fom["x"]) == 33
    with tempfile.TemporaryDirectory() as out:
        cfg = efrrom.Config(
            overrides=[
                ("fom.n_nodes", "33"),
                ("fom.dt", "2e-3"),
                ("fom.stride", "10"),
                ("uq.train_level", "2"),
                ("uq.online_level", "3"),
                ("rom.deltas", "0.05"),
                ("out.node_files", "none"),
                ("out.dir", out),
            ],
            use_env=False,
        )
        summary = cfg.offline()
        assert summary["r"] == 4 and summary["training_nodes"] == 5
        report = cfg.online()
        assert report["nodes"] == 9 and "none" in report["errors"]
        for label, (window, extended) in report["errors"].items():
            assert math.isfinite(window) and math.isfinite(extended), label
        rom = efrrom.ReducedModel.load(out)
        a0 = rom.project(fom["snapshots"][-1])
        times, energy, coeffs = rom.run(a0, [0.5], 0.1, 0.2, 2e-3, kind="df", delta=0.05)
        assert len(times) == len(energy) == len(coeffs) == 51
    checks = efrrom.Config(use_env=False).verify()
    failed = [c for c in checks if not c[1]]
    assert not failed, failed


if __name__ == "__main__":
    check_grids()
    check_filters_and_viscosity()
    check_pipeline()
    print("python smoke test passed")
