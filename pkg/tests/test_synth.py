import json
import math
from collections import Counter

import numpy as np
import pytest

from sirstlab import synth as S
from sirstlab.errors import ConfigError, GenerationError, InputError
from sirstlab.imageops import blur
from sirstlab.pngio import read_gray, read_mask, write_gray8


def scr_direct(img, target, ring):
    """Independent SCR: plain sums over the two regions."""
    t = img[target]
    b = img[ring]
    mu_b = b.sum() / b.size
    sd_b = math.sqrt(((b - mu_b) ** 2).sum() / b.size)
    return abs(t.sum() / t.size - mu_b) / sd_b


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_defaults(self):
        cfg = S.SynthConfig()
        assert cfg.scr_values == (3.0, 4.0, 5.0, 6.0)

    @pytest.mark.parametrize("kw", [
        dict(scr_values=(0.0,)),
        dict(count_probs={1: 0.5, 2: 0.4}),
        dict(size_table={"sky": [("spot", "ellipse", 3, 5, 0.9)]}, scenes=("sky",)),
        dict(size_table={"sky": [("spot", "ship", 3, 5, 1.0)]}, scenes=("sky",)),
        dict(scenes=("desert",)),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            S.SynthConfig(**kw)

    def test_dict_round_trip(self):
        cfg = S.toy_config(3)
        assert S.SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestTemplates:
    def test_single_pixel(self):
        t = S.make_point_target(1, 0.7)
        assert t.patch.shape == (1, 1) and t.patch[0, 0] == 1.0 and t.area == 1

    def test_flat_limit(self):
        assert np.allclose(S.make_point_target(5, 1e9).patch, 1.0)
        assert S.make_point_target(5, math.inf).patch.min() == 1.0

    def test_sigma_one(self):
        p = S.make_point_target(5, 1.0).patch
        assert p[2, 2] == 1.0 and p[0, 0] == pytest.approx(math.exp(-4), abs=1e-15)

    def test_support_threshold(self):
        t = S.make_point_target(7, 1.2)
        assert np.array_equal(t.support, t.patch > 0.05)

    @pytest.mark.parametrize("size", [4, 0, -3])
    def test_bad_size(self, size):
        with pytest.raises(ConfigError):
            S.make_point_target(size, 1.0)

    @pytest.mark.parametrize("shape", ["plane", "ship", "uav"])
    def test_extended_nonempty(self, shape):
        for size in (7, 11, 17):
            t = S.make_extended_target(shape, size, 0.3)
            assert t.area > 0 and t.patch.max() <= 1.0 and (t.patch[~t.support] == 0).all()


class TestSelection:
    def test_degenerate_table(self):
        cfg = S.SynthConfig(size_table={"sky": [("spot", "ellipse", 3, 5, 1.0)]}, scenes=("sky",))
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert {t.kind for t, _ in S.select_targets("sky", cfg, rng)} == {"spot"}

    def test_kind_frequencies(self):
        cfg = S.SynthConfig()
        rng = np.random.default_rng(1)
        counts = Counter(t.shape for _ in range(10_000) for t, _ in S.select_targets("sea", cfg, rng, count=1))
        for kind, shape, _, _, p in cfg.size_table["sea"]:
            assert abs(counts[shape] / 10_000 - p) < 0.02

    def test_no_ship_in_sky(self):
        rng = np.random.default_rng(2)
        cfg = S.SynthConfig()
        shapes = {t.shape for _ in range(2000) for t, _ in S.select_targets("sky", cfg, rng)}
        assert "ship" not in shapes

    def test_placements_disjoint_with_ring(self):
        cfg = S.SynthConfig()
        rng = np.random.default_rng(3)
        for _ in range(200):
            chosen = S.select_targets("cloud", cfg, rng, count=4)
            boxes = [p.box() for _, p in chosen]
            for k, (_, p) in enumerate(chosen):
                r0, c0, r1, c1 = p.box(cfg.ring_width)
                assert r0 >= 0 and c0 >= 0 and r1 <= cfg.image_size and c1 <= cfg.image_size
                for j, b in enumerate(boxes):
                    if j != k:
                        assert not S._overlaps(p.box(cfg.ring_width), b)

    def test_unknown_scene(self):
        with pytest.raises(ConfigError):
            S.select_targets("desert", S.SynthConfig(), np.random.default_rng(0))

    def test_placement_failure(self):
        cfg = S.SynthConfig(image_size=32, max_retries=5)
        with pytest.raises(GenerationError):
            S.select_targets("cloud", cfg, np.random.default_rng(0), count=4)

    def test_count_distribution(self):
        cfg = S.SynthConfig()
        rng = np.random.default_rng(4)
        counts = Counter(S.draw_count(cfg, rng) for _ in range(20_000))
        assert abs(sum(v for k, v in counts.items() if k >= 2) / 20_000 - 0.37) < 0.02


class TestIntensity:
    def test_worked_example(self):
        bg = np.array([80.0, 120.0] * 50) / 255.0          # mean 100/255, std 20/255
        tpl = S.make_point_target(5, 1.0)
        adj = S.adjust_intensity(tpl, bg, 5.0)
        assert adj.mu_b == pytest.approx(100 / 255, abs=1e-15)
        assert adj.sigma_b == pytest.approx(20 / 255, abs=1e-15)
        assert adj.values[tpl.support].mean() == pytest.approx(200 / 255, abs=1e-12)

    def test_zero_contrast(self):
        bg = np.random.default_rng(0).random(200)
        tpl = S.make_spot_target(7, 0.8, 0.4)
        adj = S.adjust_intensity(tpl, bg, 0.0)
        assert adj.values[tpl.support].mean() == pytest.approx(bg.mean(), abs=1e-12)

    def test_flat_background_floor(self):
        adj = S.adjust_intensity(S.make_point_target(3, 1.0), np.full(50, 0.3), 4.0)
        assert adj.floored and adj.sigma_b == 1 / 255

    def test_composite_scr_oracle(self):
        rng = np.random.default_rng(5)
        img = 0.3 + 0.02 * rng.standard_normal((40, 40))
        tpl = S.make_spot_target(7, 0.7, 1.0)
        p = S.Placement(15, 15, 7, 7)
        ring = S.ring_mask(img.shape, p, 10)
        adj = S.adjust_intensity(tpl, img[ring], 4.0)
        img[15:22, 15:22][tpl.support] = adj.values[tpl.support]
        sup = np.zeros_like(ring)
        sup[15:22, 15:22] = tpl.support
        assert scr_direct(img, sup, ring) == pytest.approx(4.0, rel=1e-9)
        assert S.scr_of(img, sup, ring) == pytest.approx(4.0, rel=1e-9)


class TestScrOf:
    def test_hand_case(self):
        img = np.array([[2.0, 6.0, 2.0], [6.0, 10.0, 6.0], [2.0, 6.0, 2.0]])
        target = np.zeros((3, 3), bool)
        target[1, 1] = True
        assert S.scr_of(img, target, ~target) == 3.0

    def test_equal_means(self):
        img = np.array([[1.0, 3.0], [2.0, 2.0]])
        t = np.array([[False, False], [True, True]])
        assert S.scr_of(img, t, ~t) == 0.0

    def test_empty_region(self):
        with pytest.raises(InputError):
            S.scr_of(np.zeros((2, 2)), np.zeros((2, 2), bool), np.ones((2, 2), bool))


class TestBlur:
    def test_constant(self):
        assert np.allclose(blur(np.full((8, 8), 0.4), 0.7), 0.4, atol=1e-15)

    def test_sum_preserved_interior(self):
        img = np.zeros((20, 20))
        img[8:11, 9:12] = np.random.default_rng(6).random((3, 3))
        assert blur(img, 1.0).sum() == pytest.approx(img.sum(), abs=1e-9)

    def test_peak_monotone(self):
        img = np.zeros((11, 11))
        img[5, 5] = 1.0
        assert blur(img, 1.0)[5, 5] < blur(img, 0.5)[5, 5] < blur(img, 0.2)[5, 5]


@pytest.fixture(scope="module")
def records():
    cfg = S.SynthConfig(seed=11)
    return [S.generate_sample(i, cfg) for i in range(40)]


class TestSamples:
    def test_mask_target_consistency(self, records):
        for rec in records:
            union = np.zeros_like(rec.mask)
            for sup, t in zip(rec.supports, rec.meta["targets"]):
                assert sup.sum() >= 1 and sup.sum() == t["area"]
                union |= sup
            assert np.array_equal(union, rec.mask)

    def test_scr_contract(self, records):
        for rec in records:
            for sup, ring, t in zip(rec.supports, rec.rings, rec.meta["targets"]):
                if not t["clipped"] and not t["sigma_floored"]:
                    assert abs(scr_direct(rec.composite, sup, ring) - t["C"]) <= 0.05 * t["C"]

    def test_blur_only_changes_target_neighbourhoods(self, records):
        for rec in records:
            changed = rec.image != rec.composite
            near = np.zeros_like(changed)
            for t in rec.meta["targets"]:
                r0, c0, r1, c1 = t["bbox"]
                near[max(r0 - 2, 0):r1 + 2, max(c0 - 2, 0):c1 + 2] = True
            assert not (changed & ~near).any()

    def test_values_in_range(self, records):
        for rec in records:
            assert rec.image.min() >= 0 and rec.image.max() <= 1

    def test_deterministic(self):
        cfg = S.SynthConfig(seed=4)
        a, b = S.generate_sample(7, cfg), S.generate_sample(7, cfg)
        assert np.array_equal(a.image, b.image) and a.meta == b.meta


class TestDataset:
    def test_empty(self, tmp_path):
        manifest = S.synth_dataset(0, tmp_path / "d", S.toy_config())
        assert manifest["splits"] == {"train": [], "test": []}
        stats = json.loads((tmp_path / "d" / "stats.json").read_text())
        assert stats["images"] == 0

    def test_layout_and_determinism(self, tmp_path):
        cfg = S.toy_config(seed=2)
        S.synth_dataset(6, tmp_path / "a", cfg, n_test=2)
        S.synth_dataset(6, tmp_path / "b", cfg, n_test=2)
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a == b
        assert {k.split("/")[0] for k in a} == {"images", "masks", "meta", "manifest.json", "stats.json"}
        mask = read_mask(tmp_path / "a" / "masks" / "00000.png")
        raw = np.unique(np.round(read_gray(tmp_path / "a" / "masks" / "00000.png") * 255))
        assert set(raw) <= {0.0, 255.0} and mask.any()
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["splits"]["test"] == ["00004", "00005"]

    def test_load_split(self, tmp_path):
        S.synth_dataset(5, tmp_path, S.toy_config(seed=1), n_test=1)
        imgs, masks, names = S.load_split(tmp_path, "train")
        assert len(imgs) == 4 and names[0] == "00000" and masks[0].dtype == bool
        with pytest.raises(ConfigError):
            S.load_split(tmp_path, "val")

    def test_single_scr_value(self, tmp_path):
        S.synth_dataset(10, tmp_path, S.toy_config(seed=3, scr_values=(3.0,)))
        stats = json.loads((tmp_path / "stats.json").read_text())
        assert set(k for k, v in stats["scr_hist"].items() if v) == {"3.0"}

    def test_imported_background(self, tmp_path):
        img = 0.3 + 0.03 * np.random.default_rng(0).standard_normal((80, 90))
        write_gray8(tmp_path / "bg.png", img)
        bg = S.import_background(tmp_path / "bg.png", "field")
        rec = S.generate_sample(0, S.toy_config(), [bg])
        assert rec.meta["scene"] == "field" and rec.mask.any()

    def test_empty_backgrounds(self, tmp_path):
        with pytest.raises(ConfigError):
            S.synth_dataset(1, tmp_path, S.toy_config(), backgrounds=[])
