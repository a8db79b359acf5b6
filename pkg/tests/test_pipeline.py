import json

import numpy as np
import pytest

from flowrecon.dataset import DatasetConfig, build_dataset, load_samples
from flowrecon.metrics import DEFAULT_TAU
from flowrecon.numeric import CheckpointError, ParamStore, save_checkpoint
from flowrecon.pipeline import (AblationConfig, EvalRunSpec, PipelineError, ablation_tables, bench_speed, evaluate,
                                infer, infer_batch, load_generator, oracle_baseline, score_clouds)


@pytest.fixture(scope="module")
def test_samples(toy_data):
    return load_samples(toy_data / "manifest.json", split="test")


@pytest.fixture(scope="module")
def image(test_samples):
    return test_samples[0].image


# -- infer -------------------------------------------------------------------------
@pytest.mark.parametrize("n", [1, 1024, 2500, 4096])
def test_infer_any_resolution(toy_run, image, n):
    cloud = infer(toy_run / "final.fgck", image, n, np.random.default_rng(0))
    assert cloud.shape == (n, 3) and np.isfinite(cloud).all()


def test_infer_mean_mode_is_deterministic(toy_run, image):
    gen = load_generator(toy_run / "final.fgck")
    a = infer(gen, image, 300, np.random.default_rng(5))
    b = infer(gen, image, 300, np.random.default_rng(5))
    c = infer(gen, image, 300, np.random.default_rng(6))
    assert a.tobytes() == b.tobytes() and not np.array_equal(a, c)


def test_sample_mode_differs_from_mean_mode(toy_run, image):
    gen = load_generator(toy_run / "final.fgck")
    a = infer(gen, image, 50, np.random.default_rng(1), latent_mode="mean")
    b = infer(gen, image, 50, np.random.default_rng(1), latent_mode="sample")
    assert not np.array_equal(a, b)
    with pytest.raises(PipelineError):
        infer(gen, image, 50, np.random.default_rng(1), latent_mode="mode")


def test_untrained_checkpoint_emits_base_normal_draws(toy_run, image):
    cloud = infer(toy_run / "untrained.fgck", image, 20000, np.random.default_rng(3))
    expected = np.random.default_rng(3).standard_normal((20000, 3)).astype(np.float32)
    np.testing.assert_array_equal(cloud, expected)
    assert np.all(np.abs(cloud.mean(axis=0)) < 0.03) and np.all(np.abs(cloud.var(axis=0) - 1) < 0.05)


def test_normalize_option_refits_the_box(toy_run, image):
    cloud = infer(toy_run / "final.fgck", image, 500, np.random.default_rng(0), normalize=True)
    assert abs(np.abs(cloud).max() - 1.0) < 1e-9


def test_batched_inference_matches_single_images(toy_run, test_samples):
    gen = load_generator(toy_run / "final.fgck")
    images = np.stack([s.image for s in test_samples[:3]])
    batch = infer_batch(gen, images, 100, [np.random.default_rng(k) for k in range(3)])
    for k in range(3):
        single = infer(gen, images[k], 100, np.random.default_rng(k))
        np.testing.assert_allclose(batch[k], single, rtol=1e-5, atol=1e-6)


def test_infer_input_errors(toy_run, image):
    gen = load_generator(toy_run / "final.fgck")
    with pytest.raises(PipelineError):
        infer(gen, image, 0, np.random.default_rng(0))
    with pytest.raises(PipelineError):
        infer(gen, np.repeat(image, 3, axis=-1), 10, np.random.default_rng(0))


def test_generator_only_checkpoint_serves_identically(toy_run, image):
    full = infer(toy_run / "final.fgck", image, 256, np.random.default_rng(2))
    for name in ("stripped.fgck", "generator_only.fgck"):
        assert infer(toy_run / name, image, 256, np.random.default_rng(2)).tobytes() == full.tobytes()


def test_missing_generator_weights_raise(tmp_path, image):
    store = ParamStore(np.float32)
    store.add("w", np.zeros(3))
    save_checkpoint(tmp_path / "d.fgck", {"disc": store}, meta={"config": {}})
    with pytest.raises(CheckpointError, match="psi"):
        load_generator(tmp_path / "d.fgck")


# -- evaluate -----------------------------------------------------------------------
def _spec(toy_run, toy_data, **kw):
    args = dict(n=256, repetitions=1, with_emd=True)
    args.update(kw)
    return EvalRunSpec(str(toy_run / "final.fgck"), str(toy_data / "manifest.json"), **args)


def test_single_repetition_reports_zero_std(toy_run, toy_data):
    res = evaluate(_spec(toy_run, toy_data))
    assert set(res.labels()) == {"ellipsoid", "box", "cross", "overall"}
    assert res.runs[0]["overall"].count == 6
    for m, s in res.stats().values():
        assert s == 0.0 and np.isfinite(m)


def test_repetitions_use_distinct_sub_seeds(toy_run, toy_data):
    res = evaluate(_spec(toy_run, toy_data, repetitions=3, with_emd=False))
    cds = [run["overall"].cd for run in res.runs]
    assert len(set(cds)) == 3
    mean, std = res.stats()["cd"]
    assert mean == pytest.approx(np.mean(cds)) and std == pytest.approx(np.std(cds, ddof=1))
    js = res.to_json()
    assert js["repetitions"] == 3 and "overall" in js["summary"]


def test_evaluate_is_bit_reproducible(toy_run, toy_data):
    a = evaluate(_spec(toy_run, toy_data, repetitions=2)).to_json()
    b = evaluate(_spec(toy_run, toy_data, repetitions=2)).to_json()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_ground_truth_predictions_score_perfectly(test_samples):
    table = score_clouds(test_samples, [s.cloud for s in test_samples])
    r = table["overall"]
    assert r.cd < 1e-12 and r.emd < 1e-6 and r.f1 == 1.0


def test_eval_spec_validation():
    with pytest.raises(PipelineError):
        EvalRunSpec("c", "m", n=0)
    with pytest.raises(PipelineError):
        EvalRunSpec("c", "m", repetitions=0)
    with pytest.raises(PipelineError):
        EvalRunSpec("c", "m", tau=0.0)


# -- oracle -------------------------------------------------------------------------
def test_oracle_with_reused_seed_is_exact(toy_data):
    table = oracle_baseline(toy_data / "manifest.json", reuse_seed=True)
    assert table["overall"].cd == 0.0 and table["overall"].emd == 0.0 and table["overall"].f1 == 1.0


def test_oracle_beats_a_one_epoch_model(toy_run, toy_data):
    oracle = oracle_baseline(toy_data / "manifest.json", n=512, with_emd=False)
    model = evaluate(_spec(toy_run, toy_data, n=512, with_emd=False)).runs[0]
    for fam in ("ellipsoid", "box", "cross"):
        assert oracle[fam].cd < model[fam].cd


@pytest.fixture(scope="module")
def dense_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("dense")
    build_dataset(DatasetConfig(shapes_per_category=10, points_per_cloud=2500, resolution=16, seed=4), out)
    return out


@pytest.mark.xfail(strict=True, reason="squared-distance threshold 1e-3 is too tight for two independent "
                                       "2500-point samples of a [-1,1] shape; measured F1 is about 0.6")
def test_oracle_f1_above_ninety_percent(dense_data):
    table = oracle_baseline(dense_data / "manifest.json", n=2500, tau=DEFAULT_TAU, with_emd=False)
    assert table["overall"].f1 > 0.9


def test_oracle_f1_measured_value(dense_data):
    # frozen measurement of the same quantity; see the xfail above
    table = oracle_baseline(dense_data / "manifest.json", n=2500, tau=DEFAULT_TAU, with_emd=False)
    assert 0.5 < table["overall"].f1 < 0.75


# -- throughput ---------------------------------------------------------------------
def test_bench_speed_reports_throughput(toy_run, toy_data):
    rep = bench_speed(toy_run / "final.fgck", toy_data / "manifest.json", n=256, batch=4, duration=0.2, warmup=1)
    assert rep.samples_per_second > 0 and rep.batches >= 1 and rep.n == 256
    assert {"machine", "cpu_count", "numpy"} <= set(rep.hardware)


def test_bench_speed_cost_grows_with_n(toy_run, toy_data):
    small = bench_speed(toy_run / "final.fgck", toy_data / "manifest.json", n=256, batch=4, duration=0.5)
    large = bench_speed(toy_run / "final.fgck", toy_data / "manifest.json", n=4096, batch=4, duration=0.5)
    assert large.samples_per_second < small.samples_per_second


def test_bench_speed_is_stable(toy_run, toy_data):
    runs = [bench_speed(toy_run / "final.fgck", toy_data / "manifest.json", n=1024, batch=4, duration=1.0)
            for _ in range(2)]
    a, b = (r.samples_per_second for r in runs)
    assert abs(a - b) / max(a, b) < 0.10


def test_bench_speed_from_generator_only_checkpoint(toy_run, toy_data):
    rep = bench_speed(toy_run / "generator_only.fgck", toy_data / "manifest.json", n=256, batch=4, duration=0.2)
    assert rep.samples_per_second > 0


# -- ablation tables ----------------------------------------------------------------
def test_ablation_tables_layout(toy_run, toy_data):
    cfg = AblationConfig(str(toy_data / "manifest.json"),
                         variants={"w/o D": str(toy_run / "untrained.fgck"), "w/ D": str(toy_run / "final.fgck")},
                         checkpoint=str(toy_run / "final.fgck"), resolution_ns=(64, 128, 256), eval_n=128,
                         repetitions=2, with_emd=False)
    text, data = ablation_tables(cfg)
    assert set(data) == {"variants", "resolution", "stability"}
    assert list(data["variants"]) == ["w/o D", "w/ D"]
    assert list(data["resolution"]) == ["64", "128", "256"]
    assert data["stability"]["repetitions"] == 2
    assert "±" in text and "N=256" in text


def test_ablation_lists_missing_checkpoints(toy_data, tmp_path):
    cfg = AblationConfig(str(toy_data / "manifest.json"), variants={"a": str(tmp_path / "nope.fgck")},
                         checkpoint=str(tmp_path / "gone.fgck"))
    with pytest.raises(PipelineError, match="nope.fgck.*gone.fgck"):
        ablation_tables(cfg)
    with pytest.raises(PipelineError):
        AblationConfig.from_dict({"manifest": "m", "tables": 3})
