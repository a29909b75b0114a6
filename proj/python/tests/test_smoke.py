"""Smoke tests for the python bindings.

Runnable directly (python3 test_smoke.py) or under pytest; only needs the
built package on PYTHONPATH.
"""

import math
import os
import sys
import tempfile

import lsopt


def test_weighting():
    w = lsopt.rank_weights([5.0, 2.0, 9.0], 1.0)
    assert abs(sum(w) - 1.0) < 1e-12
    assert w[2] > w[0] > w[1]  # higher score, higher weight
    assert abs(lsopt.total_weight_closed_form(1.0) - math.log(2.0)) < 1e-15
    frac = lsopt.quantile_weight_fraction(1e-3, 0.0, 0.01)
    assert 0.0 < frac < 1.0
    uniform = lsopt.rank_weights([1.0, 2.0, 3.0], float("inf"))
    assert max(abs(x - 1.0 / 3.0) for x in uniform) < 1e-15


def test_shapes_roundtrip():
    images, areas = lsopt.generate_dataset(count=50, seed=7)
    assert len(images) == 50 and len(areas) == 50
    assert all(lsopt.area(im) == a for im, a in zip(images, areas))
    assert all(1 <= a <= 400 for a in areas)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "tiny.shp1")
        lsopt.write_shp1(path, images, areas)
        images2, areas2 = lsopt.read_shp1(path)
        assert images2 == images and areas2 == areas


def test_vae_and_gp():
    images, areas = lsopt.generate_dataset(count=24, seed=3)
    params = lsopt.init_vae(hidden=[32, 16], seed=1)
    trained = lsopt.train_vae(params, images, areas, epochs=0.5, batch_size=8)
    assert trained.parameter_count == params.parameter_count
    (m0, m1), (lv0, lv1) = lsopt.encode(trained, images[0])
    assert all(math.isfinite(v) for v in (m0, m1, lv0, lv1))
    decoded = lsopt.decode(trained, (m0, m1))
    assert len(decoded) == 512
    prior_areas = lsopt.sample_prior_areas(trained, 16, seed=5)
    assert len(prior_areas) == 16

    latents = [lsopt.encode(trained, im)[0] for im in images]
    model = lsopt.fit_gp(latents, areas)
    assert model.size == 24 and math.isfinite(model.log_marginal)
    mean, var = lsopt.gp_posterior(model, latents[0])
    assert math.isfinite(mean) and var >= 0.0
    assert lsopt.expected_improvement(1.0, 0.0, 2.0) == 0.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "tiny.vaep")
        trained.save(path)
        reloaded = lsopt.load_vae(path)
        assert reloaded.parameter_count == trained.parameter_count
        assert lsopt.decode(reloaded, (0.0, 0.0)) == lsopt.decode(trained, (0.0, 0.0))


def test_run_lso_tiny():
    images, areas = lsopt.generate_dataset(count=20, seed=11)
    params = lsopt.init_vae(hidden=[24, 8], seed=2)
    out = lsopt.run_lso(images, areas, params, budget=2, retrain_every=None,
                        rank_k=1e-3, finetune_epochs=0.2, seed=0)
    assert out["complete"] is True
    assert len(out["queries"]) == 2
    assert out["retrain_events"] == []  # infinite retrain period logs no events
    rerun = lsopt.run_lso(images, areas, params, budget=2, retrain_every=None,
                          rank_k=1e-3, finetune_epochs=0.2, seed=0)
    assert [q["score"] for q in rerun["queries"]] == [
        q["score"] for q in out["queries"]
    ]


def main():
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"{name}: ok")
    print("python smoke tests passed")


if __name__ == "__main__":
    sys.exit(main())
