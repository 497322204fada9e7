"""Smoke test for the pyrwre extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/pyrwre-*.whl
"""

import json

import pyrwre


def main():
    env = pyrwre.Env(pyrwre.Law.homogeneous_1d(0.75), seed=1)
    p = pyrwre.exit_right_probability(env, -2, 2, 0)
    assert abs(p - 0.9) < 1e-10, p

    law = pyrwre.Law.one_dim([(0.3, 0.5), (0.9, 0.5)])
    assert pyrwre.classify_1d(law)["class"] == "transient_right"

    kappa = pyrwre.kks_kappa(pyrwre.Law.one_dim([(1 / 3, 0.5), (0.8, 0.5)]))
    assert 0.68 <= kappa <= 0.71, kappa

    v = pyrwre.velocity_1d(pyrwre.Law.two_point(0.8, 0.4), "direct", n=20_000, replicas=50, seed=3)
    print("direct velocity", v["estimate"]["estimate"], "oracle", 1 / 15)

    held = pyrwre.Env(pyrwre.Law.homogeneous_1d(0.6), seed=1).with_holding()
    print("rate at 0.2:", pyrwre.rate(held, [0.2], 1000), "legendre:", pyrwre.legendre([0.36, 0.24, 0.4], [0.2]))

    cfg = "experiment = kks\nlaw = one_dim\natoms = 0.3333333333333333:0.5, 0.8:0.5\n"
    csv_a, json_a = pyrwre.run_experiment(cfg)
    csv_b, json_b = pyrwre.run_experiment(cfg)
    assert (csv_a, json_a) == (csv_b, json_b)
    print("kks:", json.loads(json_a)["estimates"]["kks_kappa"])

    try:
        pyrwre.run_experiment(cfg + "velcoity = 2\n")
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("typo accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
