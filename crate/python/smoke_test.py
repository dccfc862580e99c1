"""Smoke test for the svph Python bindings.

Build and install the extension first, for example:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml
"""

import math

import svph


def main():
    e0 = svph.Map.e0()
    x, t = e0.apply(0.3, 0.7)
    assert abs(x - 0.6) < 1e-15 and abs(t - 0.7) < 1e-15

    e1 = svph.Map.e1(0.05)
    assert e1.degree == 3 and e1.epsilon == 0.05
    x, t = e1.apply(0.0, 0.0)
    assert abs(x) < 1e-15 and abs(t - 0.015) < 1e-15
    jac = e1.jacobian(0.0, 0.0)
    assert abs(jac[0][0] - (3 + 0.2 * math.pi)) < 1e-12
    assert svph.Map.from_json(e1.to_json()).to_json() == e1.to_json()

    report = svph.check(e1, r=5, grid=128)
    assert report["structural_pass"]
    names = [c["name"] for c in report["conditions"]]
    assert "(6)" in names

    pre = svph.preimages(e1, 0.2, 0.4, 2)
    assert len(pre) == 9
    for px, pt in pre:
        qx, qt = e1.apply(*e1.apply(px, pt))
        assert min(abs(qx - 0.2), 1 - abs(qx - 0.2)) < 1e-10

    counts = svph.transversality_counts(e0, 3, grid=4)
    assert abs(counts["N"] - 1.0) < 1e-9 and abs(counts["Ntilde"] - 1.0) < 1e-9

    verdict = svph.x_constant_test(svph.Map.e2(), period=6)
    assert verdict["consistent"]

    h = svph.srb_density(e1, n=32)
    mass = sum(sum(row) for row in h) / (32 * 32)
    assert abs(mass - 1.0) < 1e-9

    field = svph.averaged_field(e1, n_theta=256)
    assert any(z["stable"] for z in field["zeros"])

    try:
        svph.Map.from_json('{"degree": 1, "f_pert": {}, "omega": {}, "epsilon": 0.1}')
    except ValueError:
        pass
    else:
        raise AssertionError("degree 1 must be rejected")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
