"""Smoke test for the Python bindings.

Build and install first:
    pip install maturin
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import math

import bonereg


def main():
    c_raw, u_raw, t_gt = bonereg.synth("half-pipe", c_count=3000, u_count=1000, seed=3)
    assert len(c_raw) == 3000 and len(u_raw) == 1000

    # Ground truth maps the partial cloud onto the complete one.
    back = t_gt.apply(u_raw)
    est, rms = bonereg.icp(u_raw, c_raw, init=t_gt)
    rre, rte = bonereg.errors(est, t_gt)
    assert rre < 0.1 and rte < 0.1, (rre, rte, rms)
    assert len(back) == len(u_raw)

    ident = bonereg.RigidTransform()
    assert bonereg.errors(ident, ident) == (0.0, 0.0)
    q = t_gt.quaternion
    assert abs(math.sqrt(sum(x * x for x in q)) - 1.0) < 1e-12
    comp = t_gt.compose(t_gt.inverse())
    assert bonereg.errors(comp, ident)[0] < 1e-6

    c, scale, _ = c_raw.normalized(0.002)
    assert scale > 1.0
    grid = bonereg.GridVolume.build(c, resolution=32)
    assert grid.resolution == 32
    vals = grid.query(c.points()[:10])
    assert all(v < 0.05 for v in vals), vals

    config = '{"hidden": [16, 16], "max_steps": 300, "target_mae": 1.0, "target_near_surface_mae": 1.0}'
    udf = bonereg.NeuralUdf.train(c, config=config)
    mae, near = udf.accuracy(c, queries=500)
    assert mae < 1.0 and near < 1.0
    assert all(v >= 0.0 for v in udf.query([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]))

    moved, applied = bonereg.perturb(c, 11)
    t, score = bonereg.register(moved, grid, heads=8, iterations=20, batch_size=16, depth=1)
    assert math.isfinite(score)
    print("smoke test passed")


if __name__ == "__main__":
    main()
