"""Smoke test for the Python bindings.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml --release`.
"""

import math
import os
import tempfile

import cadre


def main() -> None:
    x, y, labels = cadre.gen_synthetic(n_per_group=100, seed=0)
    assert len(x) == len(y) == len(labels) == 300

    model = cadre.train(x, y, cadres=3, gamma=4.0, epochs=2000, patience=2000,
                        restarts=8, seed=0, feature_names=["connectivity", "polarizability"])
    print(model)

    pred = model.predict(x)
    err = cadre.mse(pred, y)
    var = sum((v - sum(y) / len(y)) ** 2 for v in y) / len(y)
    print(f"train mse {err:.4f} (target variance {var:.4f})")
    assert err < 0.1 * var

    g = model.membership(x)
    assert all(abs(sum(row) - 1.0) < 1e-9 for row in g)

    acc = cadre.matched_accuracy(model.assign(x), labels, 3)
    print(f"cadre accuracy {acc:.3f}")
    assert acc >= 0.9

    d = model.d
    assert abs(d[0]) > abs(d[1])
    assert 0.0 <= model.density_rate() <= 1.0
    assert model.tau() >= 0.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        again = cadre.Model.load(path)
        assert again.predict(x) == pred

    per_cadre, overall = cadre.bootstrap_quality(x, y, b=3, cadres=3, gamma=4.0, epochs=300)
    assert 0.0 <= overall <= 1.0
    assert all(v is None or 0.0 <= v <= 1.0 for v in per_cadre)
    assert math.isclose(cadre.match_score([1, 2, 3], [2, 3, 4]), 2 / 3)
    print("ok")


if __name__ == "__main__":
    main()
