"""Smoke test for the qnn_py extension module.

Build and install first:  pip install ./crates/py  (or `maturin develop -m crates/py/Cargo.toml`)
"""

import math

import qnn_py as q


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    x = [-1.0, 0.2, 0.5, 1.7, 3.0]
    assert all(close(a, b) for a, b in zip(q.pact_forward(x, 1.5), [0.0, 0.2, 0.5, 1.5, 1.5]))
    yq = q.pact_quantize(x, 1.5, 2)
    assert all(close(v, 0.5 * round(v / 0.5)) for v in yq), yq
    gx, ga = q.pact_backward(x, 1.5, [1.0] * 5)
    assert gx == [0.0, 1.0, 1.0, 0.0, 0.0] and ga == 2.0

    levels = q.bin_levels(4, 1.0)
    assert all(close(a, b) for a, b in zip(levels, [-1.0, -1 / 3, 1 / 3, 1.0]))

    w = q.sample_distribution("gaussian", 20000, 3)
    quant = q.SawbQuantizer(4)
    wq, alpha = quant.quantize(w)
    alpha_star, mse_star = q.optimal_alpha_search(w, 4)
    mse_hat = sum((a - b) ** 2 for a, b in zip(w, wq)) / len(w)
    excess = mse_hat / mse_star - 1.0
    print(f"n_bin=4 alpha_hat={alpha:.4f} alpha*={alpha_star:.4f} excess={100 * excess:.2f}%")
    assert excess < 0.07

    traj = q.lemma31_simulate(1.0, 2.0, 1.0, 3.0, 0.1, 3)
    assert close(traj[1][2] - traj[0][2], 0.2, 1e-5) and traj[1][1] == 2.0

    curves = q.error_curves([abs(v) for v in w[:5000]], [0.5, 1.0, 2.0, 4.0], 2)
    clip = [c[1] for c in curves]
    assert all(a >= b for a, b in zip(clip, clip[1:]))

    act = q.PactActivation(2, alpha=2.0, reg_lambda=0.0)
    act.forward([3.0, 0.5])
    act.backward([-1.0, 1.0])
    assert act.alpha_grad == -1.0
    act.step(0.1)
    assert math.isclose(act.alpha, 2.1, rel_tol=1e-6)

    assert q.run_command(["no-such-command"]) == 1

    try:
        q.bin_levels(5, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("n_bin 5 accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
