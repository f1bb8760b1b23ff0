import json
import math

import numpy as np
import pytest

from gazedqn import data
from gazedqn.errors import ConfigError, ValidationError


def small_config(**overrides):
    base = dict(height=48, width=48, lesion_axis_min=4.0, lesion_axis_max=8.0,
                n_gaze=12, step_max=6, lesion_visits=2)
    base.update(overrides)
    return data.SynthConfig(**base)


class TestSynthConfig:
    def test_defaults_valid(self):
        data.SynthConfig().validate()

    def test_rejections(self):
        with pytest.raises(ConfigError):
            data.SynthConfig(height=0).validate()
        with pytest.raises(ConfigError):
            data.SynthConfig(lesion_axis_min=10, lesion_axis_max=5).validate()
        with pytest.raises(ConfigError):
            # lesion larger than the image
            data.SynthConfig(height=32, width=32, lesion_axis_max=20).validate()
        with pytest.raises(ConfigError):
            data.SynthConfig(n_gaze=1).validate()
        with pytest.raises(ConfigError):
            data.SynthConfig(step_min=0).validate()
        with pytest.raises(ConfigError):
            data.SynthConfig(lesion_visits=0).validate()
        with pytest.raises(ConfigError):
            data.SynthConfig(background_min=0.7, background_max=0.5).validate()


class TestGenerateCase:
    def test_deterministic_for_seed(self):
        cfg = small_config()
        a = data.generate_case(cfg, np.random.default_rng(5))
        b = data.generate_case(cfg, np.random.default_rng(5))
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.lesion_mask, b.lesion_mask)
        assert np.array_equal(a.gaze_plot, b.gaze_plot)

    @pytest.mark.parametrize("seed", range(25))
    def test_invariants_across_seeds(self, seed):
        cfg = small_config()
        case = data.generate_case(cfg, np.random.default_rng(seed))
        assert case.image.shape == (48, 48)
        assert case.image.min() >= 0.0 and case.image.max() <= 1.0
        # exactly 8-bit quantized
        assert np.array_equal(case.image, np.round(case.image * 255.0) / 255.0)
        assert case.lesion_mask.any()
        assert len(case.gaze_plot) == cfg.n_gaze
        assert case.gaze_plot[:, 0].min() >= 0 and case.gaze_plot[:, 0].max() < 48
        assert case.gaze_plot[:, 1].min() >= 0 and case.gaze_plot[:, 1].max() < 48
        # the walk visits the lesion
        xs, ys = case.gaze_plot[:, 0], case.gaze_plot[:, 1]
        assert case.lesion_mask[ys, xs].any()

    def test_step_lengths_bounded(self):
        cfg = small_config()
        case = data.generate_case(cfg, np.random.default_rng(3))
        d = np.diff(case.gaze_plot.astype(float), axis=0)
        # rounding and border clipping can stretch a step slightly
        assert np.all(np.hypot(d[:, 0], d[:, 1]) <= cfg.step_max + math.sqrt(0.5))

    def test_lesion_area_within_ellipse_bounds(self):
        cfg = small_config()
        lo = math.pi * cfg.lesion_axis_min ** 2
        hi = math.pi * cfg.lesion_axis_max ** 2
        for seed in range(10):
            area = data.generate_case(cfg, np.random.default_rng(seed)).lesion_mask.sum()
            assert 0.7 * lo <= area <= 1.3 * hi  # discretization slack

    def test_fixation_sits_near_the_end_of_the_walk(self):
        cfg = small_config()
        for seed in range(15):
            case = data.generate_case(cfg, np.random.default_rng(seed))
            xs, ys = case.gaze_plot[:, 0], case.gaze_plot[:, 1]
            in_mask = case.lesion_mask[ys, xs]
            last_in = int(np.max(np.nonzero(in_mask)[0])) + 1  # 1-based
            assert last_in >= cfg.n_gaze - cfg.tail_max - 1

    def test_distractors_brighten_pixels_outside_the_mask(self):
        cfg = small_config(noise_sigma=0.0, n_distractors=3)
        plain = small_config(noise_sigma=0.0, n_distractors=0)
        case = data.generate_case(cfg, np.random.default_rng(2))
        case0 = data.generate_case(plain, np.random.default_rng(2))
        threshold = cfg.background_max + cfg.lesion_intensity / 2
        outside = (case.image > threshold) & ~case.lesion_mask
        outside0 = (case0.image > threshold) & ~case0.lesion_mask
        assert outside.sum() > 0
        assert outside0.sum() == 0

    def test_distractor_config_rejections(self):
        with pytest.raises(ConfigError):
            data.SynthConfig(n_distractors=-1).validate()
        with pytest.raises(ConfigError):
            data.SynthConfig(n_gaze=8, lesion_visits=5, tail_max=5).validate()

    def test_lesion_brighter_than_surroundings(self):
        cfg = small_config(noise_sigma=0.0)
        case = data.generate_case(cfg, np.random.default_rng(1))
        inside = case.image[case.lesion_mask].mean()
        outside = case.image[~case.lesion_mask].mean()
        assert inside > outside + 0.15


class TestRoundTrip:
    def test_save_load_exact(self, tmp_path):
        case = data.generate_case(small_config(), np.random.default_rng(7), "case007")
        data.save_case(case, tmp_path)
        loaded = data.load_case(tmp_path / "case007_image.png",
                                tmp_path / "case007_mask.png",
                                tmp_path / "case007_gaze.csv")
        assert loaded.case_id == "case007"
        assert np.array_equal(loaded.image, case.image)
        assert np.array_equal(loaded.lesion_mask, case.lesion_mask)
        assert np.array_equal(loaded.gaze_plot, case.gaze_plot)

    def test_strict_load_rejects_offplot_lesion(self, tmp_path):
        case = data.generate_case(small_config(), np.random.default_rng(7), "c")
        entry = data.save_case(case, tmp_path)
        # rewrite the gaze so it never touches the lesion
        ys, xs = np.nonzero(~case.lesion_mask)
        with open(tmp_path / entry["gaze"], "w") as fh:
            fh.write(f"{xs[0]},{ys[0]}\n{xs[1]},{ys[1]}\n")
        with pytest.raises(ValidationError):
            data.load_case(tmp_path / entry["image"], tmp_path / entry["mask"],
                           tmp_path / entry["gaze"])
        data.load_case(tmp_path / entry["image"], tmp_path / entry["mask"],
                       tmp_path / entry["gaze"], strict=False)

    def test_dataset_manifest_and_reload(self, tmp_path):
        cases = data.generate_dataset(4, small_config(), seed=11, out_dir=tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 11
        assert len(manifest["cases"]) == 4
        loaded = data.load_dataset(tmp_path)
        assert [c.case_id for c in loaded] == [c.case_id for c in cases]
        for a, b in zip(loaded, cases):
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.gaze_plot, b.gaze_plot)

    def test_load_without_manifest_fails(self, tmp_path):
        with pytest.raises(ValidationError):
            data.load_dataset(tmp_path)

    def test_generate_rejects_nonpositive_n(self, tmp_path):
        with pytest.raises(ConfigError):
            data.generate_dataset(0, small_config(), 0, tmp_path)


class TestSplit:
    def test_sizes_and_disjointness(self):
        cases = [data.generate_case(small_config(), np.random.default_rng(s), f"c{s}")
                 for s in range(10)]
        split = data.split_dataset(cases, train_n=7, test_n=3, seed=0)
        assert len(split.train) == 7 and len(split.test) == 3
        train_ids = {c.case_id for c in split.train}
        test_ids = {c.case_id for c in split.test}
        assert not train_ids & test_ids
        assert train_ids | test_ids == {f"c{s}" for s in range(10)}

    def test_deterministic_and_seed_sensitive(self):
        cases = [data.generate_case(small_config(), np.random.default_rng(s), f"c{s}")
                 for s in range(10)]
        a = data.split_dataset(cases, 7, 3, seed=4)
        b = data.split_dataset(cases, 7, 3, seed=4)
        c = data.split_dataset(cases, 7, 3, seed=5)
        assert [x.case_id for x in a.train] == [x.case_id for x in b.train]
        assert [x.case_id for x in a.train] != [x.case_id for x in c.train]

    def test_too_few_cases(self):
        cases = [data.generate_case(small_config(), np.random.default_rng(0), "c0")]
        with pytest.raises(ValidationError):
            data.split_dataset(cases, train_n=7, test_n=3)
