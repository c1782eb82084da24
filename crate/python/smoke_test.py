"""Smoke test for the framestat_py extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install --force-reinstall --no-deps target/wheels/framestat-*.whl
"""

import math

import framestat_py as fs


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    assert "sphere(r)" in fs.manifolds()

    # Flat fiber distance is the Mahalanobis norm.
    d = fs.dist_sym("euclidean(2)", [0.0, 0.0], [[1.0, 0.0], [0.0, 0.25]], [1.0, 2.0])
    assert close(d, math.sqrt(2.0), 1e-6), d

    # Isotropic fiber distance on the sphere equals the great-circle distance.
    d = fs.dist_sym("sphere", [math.pi / 2, 0.0], [[1.0, 0.0], [0.0, 1.0]], [math.pi / 2, 0.8])
    assert close(d, 0.8, 1e-6), d

    # Anisotropic most probable path on the plane is the chord.
    path = fs.mpp("euclidean(2)", [0.0, 0.0], [1.0, 1.0], frame_rows=[[2.0, 0.0], [0.5, 1.0]], nodes=11)
    assert len(path) == 11
    for k, p in enumerate(path):
        assert close(p[0], k / 10, 1e-8) and close(p[1], k / 10, 1e-8), p

    onsager = fs.mpp("sphere", [1.2, 0.1], [1.8, 1.0], method="onsager", nodes=41)
    assert len(onsager) == 41
    assert fs.onsager_machlup("sphere", onsager) < 0.0

    ends = fs.simulate("euclidean(2)", [0.0, 0.0], frame_rows=[[2.0, 0.0], [0.0, 1.0]],
                       horizon=1.0, steps=2, n_paths=4000, seed=3)
    xs = [e[0] for e in ends if e is not None]
    var = sum(v * v for v in xs) / len(xs)
    assert close(var, 4.0, 0.6), var

    r = fs.estimate("euclidean(2)", [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    assert r["converged"]
    assert max(abs(v) for v in r["x_hat"]) < 1e-6
    assert close(r["covariance_hat"][0][0], 1.0, 1e-3) and close(r["covariance_hat"][1][1], 4.0, 1e-3), r

    assert fs.hormander_rank("sphere", [1.0, 0.4]) == 3
    assert fs.hormander_rank("euclidean(2)", [0.0, 0.0]) == 2

    try:
        fs.dist_sym("klein_bottle", [0.0], [[1.0]], [0.0])
    except ValueError as e:
        assert "sphere" in str(e)
    else:
        raise AssertionError("unknown manifold accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
