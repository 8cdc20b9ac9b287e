"""Smoke test for the etd_py extension.

Build and install it first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import etd_py


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    p = etd_py.Problem("che", 5, length=5.0, v=0.0)
    assert p.dim == 5 and p.spacing == 1.0
    assert p.stable_stepsize() == 0.125
    # fourth difference plus the q-term of the -3 profile around an impulse
    lu = p.linear_apply([0, 0, 1, 0, 0])
    assert len(lu) == 5
    assert p.nonlinear_eval([0, 0, 2, 0, 0]) == [0.0, 8.0, -16.0, 8.0, 0.0]
    print(p)

    # scalar decay: Q = e^{-τ}, M1 = 1 - e^{-τ}
    tau = 0.1
    coef = etd_py.build_coefficients_for_matrix([[-1.0]], tau, 1e-5)
    assert coef.names() == ["Q", "Q_half", "M1", "M1_half", "M2", "M3"], coef.names()
    close(coef.matrix("Q")[0][0], math.exp(-tau), 1e-10)
    close(coef.matrix("M1")[0][0], 1 - math.exp(-tau), 1e-10)

    che = etd_py.Problem("che", 40)
    c = etd_py.build_coefficients(che, 0.01)
    res = dict(c.residuals(che))
    assert res["m1"] < 1e-10 and res["semigroup"] < 1e-10, res
    u0 = che.initial_condition()
    u, t = etd_py.integrate(che, c, u0, 100, scheme="ETD4RK")
    close(t, 1.0, 1e-12)
    ref, _ = etd_py.pc_integrate(che, u0, 1.0, 0.01 * che.spacing ** 4)
    err = max(abs(a - b) for a, b in zip(u, ref))
    assert err < 1e-4, err
    print(f"CHE N=40 ETD4RK τ=0.01 to t=1: max error {err:.2e}")

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "coef.bin"
        c.save(path)
        back = etd_py.Coefficients.load(path)
        assert back.matrix("Q") == c.matrix("Q")

    s = etd_py.sparsify(c.matrix("Q"), 1e-14)
    assert s.shape == (40, 40) and s.nnz <= 1600
    dense_q = c.matrix("Q")
    dense = [sum(r[j] * u0[j] for j in range(40)) for r in dense_q]
    close(max(abs(a - b) for a, b in zip(s.matvec(u0), dense)), 0.0, 1e-12)
    print(f"sparsified Q: nnz {s.nnz}, fill {s.fill_ratio():.3f}")

    try:
        etd_py.pc_integrate(etd_py.Problem("mce", 50), etd_py.Problem("mce", 50).initial_condition(), 5.0, 0.2 ** 6 / 8)
    except etd_py.BlowUpError as e:
        print(f"blow-up raised as expected: {e}")
    else:
        raise AssertionError("expected a blow-up above the stability limit")

    try:
        etd_py.Problem("kdv", 10)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown problem accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
