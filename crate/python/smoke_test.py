"""Smoke test for the wdrank extension module.

Build and install first:  maturin develop -m crates/py/Cargo.toml
"""

import math
import os
import tempfile

import wdrank


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    # linear algebra
    assert close(wdrank.stable_rank([[2.0, 0.0], [0.0, 1.0]]), 1.25)
    sv = wdrank.singular_values([[3.0, 0.0], [0.0, 4.0], [0.0, 0.0]])
    assert close(sv[0], 4.0) and close(sv[1], 3.0)
    assert close(wdrank.spectral_norm([[3.0, 0.0], [0.0, 4.0]]), 4.0, 1e-8)
    g = wdrank.gaussian_matrix(8192, 8, variance=0.01, seed=1)
    assert abs(wdrank.frobenius_norm(g) - 25.6) < 0.05 * 25.6

    # network
    net = wdrank.Network([1.0], [[1.0]], [0.0])
    assert net.forward([2.0]) == 2.0
    assert net.grad([2.0], 2.0)["dv"] == [[4.0]]
    assert net.activation_pattern([-1.0]) == [False]

    # data + training
    data, teacher = wdrank.Dataset.teacher(6, 300, 2, noise_std=0.05, seed=2)
    assert len(data) == 300 and teacher.width == 32
    train, test = data.split(240, 60, 4)
    init = wdrank.Network.kaiming(32, 6, 1)
    net, log = wdrank.train(init, train, test, batch_size=8, epochs=80, lr0=1e-2, mu_v=0.5, seed=11)
    assert len(log) == 80
    assert log[-1]["train_mse"] < wdrank.mse(init, train)
    assert close(wdrank.mse(net, train), log[-1]["train_mse"])

    gap = wdrank.generalization_gap(net, train, test)
    assert close(gap["gap"], gap["test_mse"] - gap["train_mse"])

    census = wdrank.census(net, train, 8, mu_v=0.5, family="epoch", seed=11, epoch=79)
    assert len(census["norms"]) == 30 and census["epsilon"] == max(census["norms"])

    cert = wdrank.certify(net, train, 8, mu_v=0.5)
    assert cert["holds_proof"] and cert["rank_bound"] == 1
    assert wdrank.singular_values(cert["v_tilde"])[1] < 1e-12 * wdrank.singular_values(cert["v_tilde"])[0]
    cert2 = wdrank.certify(net, train, 8, g=(1.0, 1.0))
    assert cert2["holds_proof"] and cert2["rank_bound"] == 2

    b = wdrank.bound_value(8192, 8, 1800.0)
    assert b["lowrank_bound"] < b["full_bound"]
    assert close(b["full_complexity"] / b["lowrank_complexity"], math.sqrt(8192 * 8 / 8200))

    # checkpoints
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "net.txt")
        net.save(path)
        again = wdrank.Network.load(path)
        assert again.v == net.v and again.u == net.u and again.b == net.b

    try:
        wdrank.stable_rank([[0.0]])
    except wdrank.WdrankError as e:
        assert "zero_matrix" in str(e)
    else:
        raise AssertionError("zero matrix accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
