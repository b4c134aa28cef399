"""Smoke test for the pynfrlab extension module."""

import json
import math
import os
import tempfile

import pynfrlab as nl


def main():
    net = nl.Network.random_mlp([16, 24, 24, 3], dist="gaussian", seed=1)
    x = nl.Tensor([math.sin(i + 1.0) for i in range(16)])
    assert net.depth == 3 and net.class_count == 3 and net.input_shape == [16]

    k = net.predict(x)
    z = nl.attribute(net, x, nl.Rule("lrp_z"), k)
    gi = nl.attribute(net, x, nl.Rule("grad_input"), k)
    assert max(abs(a - b) for a, b in zip(z.data, gi.data)) <= 1e-8 * max(abs(b) for b in gi.data)

    for rule in (nl.Rule("gbp"), nl.Rule("rectgrad", tau=0.0)):
        assert all(rec["holds"] for rec in nl.nfr_check(net, x, rule, k)), rule

    gbp = nl.Rule("gbp")
    curve = [nl.alignment(nl.cascade(net, x, n, gbp, k), x) for n in range(net.depth + 1)]
    assert nl.alignment(nl.cascade(net, x, net.depth, None, k), x) > 0.999
    print("gbp cascade alignment by depth:", [round(a, 3) for a in curve])

    restored = nl.Network.from_bytes(net.to_bytes())
    assert restored.logits(x) == net.logits(x)
    assert nl.Tensor.from_bytes(x.to_bytes()).data == x.data

    assert nl.kis(net, x, x, k) == 1.0
    trained = nl.Network.random_mlp([64, 32, 32, 2], seed=3).train_on_bars(epochs=10)
    correct, incorrect = nl.kis_on_bars(trained, gbp)
    print("mean KIS correct/incorrect:", correct, incorrect)

    mean, _ = nl.theorem1(16, 2000, gbp, trials=5)
    assert 0.0 < mean <= 1.0
    assert nl.theorem2(12, 6, trials=10) == 1.0
    assert len(nl.geometry(net)) == net.depth

    with tempfile.TemporaryDirectory() as out:
        cfg = {"d": 8, "n": 4, "trials": 5}
        files = nl.run("theorem2", json.dumps(cfg), out, seed=7)
        assert "theorem2.csv" in files and os.path.exists(os.path.join(out, "manifest.json"))

    try:
        nl.Rule("nonsense")
    except ValueError as e:
        print("bad rule rejected:", e)
    else:
        raise AssertionError("unknown rule accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
