"""Gallery handling, pair generation, and their counting identities."""

import numpy as np
import pytest

from coffar import images, pairs
from coffar.errors import GalleryError, GenerationError, ManifestError, ShapeError
from coffar.pairs import Gallery, PairLabel, PairStream


def make_gallery(counts: dict[str, int], seed: int = 0) -> Gallery:
    rng = np.random.default_rng(seed)
    identities = {
        name: [rng.uniform(0, 1, (20, 20)) for _ in range(n)]
        for name, n in counts.items()
    }
    return Gallery(identities=identities)


def enumerate_same(gallery: Gallery) -> list[tuple]:
    """Brute-force oracle: every ordered within-identity pair of
    distinct images."""
    out = []
    for identity, imgs in gallery.identities.items():
        for i in range(len(imgs)):
            for j in range(len(imgs)):
                if i != j:
                    out.append((identity, i, identity, j))
    return out


class TestSeeds:
    def test_derive_seed_is_deterministic(self):
        a = pairs.derive_seed(7, "generation")
        b = pairs.derive_seed(7, "generation")
        assert a == b

    def test_consumers_get_distinct_streams(self):
        seeds = {pairs.derive_seed(7, c) for c in
                 ("model-init", "generation", "train-order", "synthesis", "split")}
        assert len(seeds) == 5

    def test_root_seed_matters(self):
        assert pairs.derive_seed(1, "split") != pairs.derive_seed(2, "split")

    def test_unknown_consumer_rejected(self):
        with pytest.raises(KeyError):
            pairs.derive_seed(0, "typo")


class TestCapacities:
    def test_hand_values(self):
        # x=3 images, n=4 identities:
        #   same  = 3*2*4 = 24
        #   cross from one identity = 9*3 = 27
        #   cross total = 27*4 = 108
        assert pairs.pair_capacities(3, 4) == (24, 27, 108)

    def test_single_image_identities_have_no_same_pairs(self):
        same, one, total = pairs.pair_capacities(1, 5)
        assert same == 0
        assert one == 4
        assert total == 20

    def test_cross_total_is_per_identity_times_n(self):
        for x in range(1, 7):
            for n in range(1, 7):
                same, one, total = pairs.pair_capacities(x, n)
                assert total == one * n

    def test_matches_enumeration(self):
        gallery = make_gallery({"a": 3, "b": 3, "c": 3, "d": 3})
        same, _, total = pairs.pair_capacities(3, 4)
        assert same == len(enumerate_same(gallery))
        cross = [
            (ia, i, ib, j)
            for ia, ca in gallery.counts().items()
            for ib, cb in gallery.counts().items()
            if ia != ib
            for i in range(ca)
            for j in range(cb)
        ]
        assert total == len(cross)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            pairs.pair_capacities(0, 3)


class TestConcat:
    def test_left_right_placement(self):
        a = np.zeros((20, 20))
        b = np.ones((20, 20))
        joined = pairs.concat_pair(a, b)
        assert joined.shape == (20, 40)
        assert np.array_equal(joined[:, :20], a)
        assert np.array_equal(joined[:, 20:], b)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ShapeError):
            pairs.concat_pair(np.zeros((20, 20)), np.zeros((20, 21)))


class TestGenerateSymmetric:
    def test_balanced_counts(self):
        gallery = make_gallery({"a": 3, "b": 2, "c": 4})
        dataset, stats = pairs.generate_symmetric(gallery, seed=11)
        expect_same = 3 * 2 + 2 * 1 + 4 * 3
        n_same = sum(1 for p in dataset if p.label is PairLabel.SAME)
        n_diff = sum(1 for p in dataset if p.label is PairLabel.DIFFERENT)
        assert n_same == expect_same
        assert n_diff == expect_same
        assert stats.n_same == expect_same
        assert stats.n_different == expect_same
        assert len(dataset) == 2 * expect_same

    def test_same_pairs_match_enumeration_oracle(self):
        """The SAME subset must be exactly the enumerated ordered
        pairs, as a multiset."""
        gallery = make_gallery({"a": 4, "b": 3, "c": 2})
        dataset, _ = pairs.generate_symmetric(gallery, seed=12)
        got = sorted(p.provenance for p in dataset if p.label is PairLabel.SAME)
        assert got == sorted(enumerate_same(gallery))

    def test_pair_structure_invariants(self):
        gallery = make_gallery({"a": 3, "b": 3, "c": 3})
        dataset, _ = pairs.generate_symmetric(gallery, seed=13)
        for p in dataset:
            assert p.image.shape == (20, 40)
            if p.label is PairLabel.SAME:
                assert p.id_a == p.id_b
                assert p.idx_a != p.idx_b
            else:
                assert p.id_a != p.id_b
            left = gallery.image(p.id_a, p.idx_a)
            right = gallery.image(p.id_b, p.idx_b)
            assert np.array_equal(p.image, pairs.concat_pair(left, right))

    def test_deterministic_for_seed(self):
        gallery = make_gallery({"a": 3, "b": 3})
        d1, _ = pairs.generate_symmetric(gallery, seed=14)
        d2, _ = pairs.generate_symmetric(gallery, seed=14)
        assert [(p.provenance, p.label) for p in d1] == \
               [(p.provenance, p.label) for p in d2]

    def test_seed_changes_output(self):
        gallery = make_gallery({"a": 4, "b": 4})
        d1, _ = pairs.generate_symmetric(gallery, seed=1)
        d2, _ = pairs.generate_symmetric(gallery, seed=2)
        assert [(p.provenance, p.label) for p in d1] != \
               [(p.provenance, p.label) for p in d2]

    def test_single_image_identities_give_empty_dataset(self):
        gallery = make_gallery({"a": 1, "b": 1, "c": 1})
        dataset, stats = pairs.generate_symmetric(gallery, seed=15)
        assert dataset == []
        assert stats.n_same == 0
        assert stats.n_different == 0
        assert stats.capacity_same == 0

    def test_fewer_than_two_identities_rejected(self):
        gallery = make_gallery({"a": 5})
        with pytest.raises(GenerationError):
            pairs.generate_symmetric(gallery, seed=16)

    def test_dedupe_yields_distinct_different_pairs(self):
        gallery = make_gallery({"a": 3, "b": 3, "c": 3})
        dataset, _ = pairs.generate_symmetric(gallery, seed=17,
                                              dedupe_different=True)
        provs = [p.provenance for p in dataset if p.label is PairLabel.DIFFERENT]
        assert len(provs) == len(set(provs))

    def test_dedupe_capacity_exceeded_rejected(self):
        # 5*4 = 20 same pairs but only 6*6 - 26 = 10 distinct cross pairs.
        gallery = make_gallery({"a": 5, "b": 1})
        with pytest.raises(GenerationError):
            pairs.generate_symmetric(gallery, seed=18, dedupe_different=True)

    def test_stats_capacities_for_uniform_gallery(self):
        gallery = make_gallery({"a": 3, "b": 3, "c": 3, "d": 3})
        _, stats = pairs.generate_symmetric(gallery, seed=19)
        assert stats.images_per_identity == 3
        assert (stats.capacity_same, stats.capacity_cross_one,
                stats.capacity_cross_all) == pairs.pair_capacities(3, 4)

    def test_stats_for_ragged_gallery(self):
        gallery = make_gallery({"a": 2, "b": 3})
        _, stats = pairs.generate_symmetric(gallery, seed=20)
        assert stats.images_per_identity is None
        assert stats.capacity_same == 2 * 1 + 3 * 2
        assert stats.capacity_cross_one is None
        assert stats.capacity_cross_all is None


class TestPairStream:
    def test_alternates_same_then_different(self):
        stream = PairStream(make_gallery({"a": 3, "b": 3}), seed=30)
        for t in range(50):
            sample = next(stream)
            if t % 2 == 0:
                assert sample.label is PairLabel.SAME
                assert sample.id_a == sample.id_b
                assert sample.idx_a != sample.idx_b
            else:
                assert sample.label is PairLabel.DIFFERENT
                assert sample.id_a != sample.id_b

    def test_skips_single_image_identities_for_same(self):
        stream = PairStream(make_gallery({"a": 1, "b": 3}), seed=31)
        for t in range(40):
            sample = next(stream)
            if t % 2 == 0:
                assert sample.id_a == "b"

    def test_deterministic_for_seed(self):
        gallery = make_gallery({"a": 3, "b": 3, "c": 2})
        s1 = PairStream(gallery, seed=32)
        s2 = PairStream(gallery, seed=32)
        for _ in range(30):
            assert next(s1).provenance == next(s2).provenance

    def test_state_round_trip_resumes_bit_exactly(self):
        gallery = make_gallery({"a": 3, "b": 3, "c": 2})
        stream = PairStream(gallery, seed=33)
        for _ in range(17):
            next(stream)
        state = stream.state()
        tail = [(next(stream).provenance, ) for _ in range(25)]
        resumed = PairStream.from_state(gallery, state)
        assert resumed.draws == 17
        assert [(next(resumed).provenance, ) for _ in range(25)] == tail

    def test_single_identity_rejected(self):
        with pytest.raises(GenerationError):
            PairStream(make_gallery({"a": 4}), seed=34)

    def test_no_same_capacity_rejected(self):
        """Every identity holding one image leaves nothing for the
        same draws, which must fail at construction, not mid-stream."""
        with pytest.raises(GenerationError):
            PairStream(make_gallery({"a": 1, "b": 1}), seed=35)

    def test_convenience_constructor(self):
        gallery = make_gallery({"a": 2, "b": 2})
        stream = pairs.exhaustive_stream(gallery, seed=36)
        assert isinstance(stream, PairStream)


class TestSplit:
    def _dataset(self, seed=40):
        gallery = make_gallery({"a": 4, "b": 4, "c": 4})
        dataset, _ = pairs.generate_symmetric(gallery, seed=seed)
        return dataset

    def test_partition_is_disjoint_and_complete(self):
        dataset = self._dataset()
        train, test = pairs.split_pairs(dataset, 0.8, seed=41)
        assert len(train) == int(len(dataset) * 0.8)
        assert len(train) + len(test) == len(dataset)
        keys = lambda ps: sorted((p.label.value,) + p.provenance for p in ps)
        assert keys(train) + keys(test) != []
        combined = sorted(keys(train) + keys(test))
        assert combined == keys(dataset)
        assert not set(keys(train)) & set(keys(test))

    def test_split_ignores_input_order(self):
        dataset = self._dataset()
        train1, test1 = pairs.split_pairs(dataset, 0.8, seed=42)
        reversed_in = list(reversed(dataset))
        train2, test2 = pairs.split_pairs(reversed_in, 0.8, seed=42)
        key = lambda p: (p.label.value,) + p.provenance
        assert [key(p) for p in train1] == [key(p) for p in train2]
        assert [key(p) for p in test1] == [key(p) for p in test2]

    def test_seed_changes_split(self):
        dataset = self._dataset()
        train1, _ = pairs.split_pairs(dataset, 0.8, seed=1)
        train2, _ = pairs.split_pairs(dataset, 0.8, seed=2)
        key = lambda p: (p.label.value,) + p.provenance
        assert [key(p) for p in train1] != [key(p) for p in train2]

    def test_bad_fraction_rejected(self):
        dataset = self._dataset()
        for frac in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                pairs.split_pairs(dataset, frac, seed=43)


class TestSynthGallery:
    def test_shape_and_range(self):
        gallery = pairs.synth_gallery(4, 3, 0.1, seed=50)
        assert len(gallery.ids) == 4
        for imgs in gallery.identities.values():
            assert len(imgs) == 3
            for img in imgs:
                assert img.shape == (20, 20)
                assert img.min() >= 0.0
                assert img.max() <= 1.0

    def test_deterministic_for_seed(self):
        g1 = pairs.synth_gallery(3, 2, 0.05, seed=51)
        g2 = pairs.synth_gallery(3, 2, 0.05, seed=51)
        assert g1.ids == g2.ids
        for identity in g1.ids:
            for a, b in zip(g1.identities[identity], g2.identities[identity]):
                assert np.array_equal(a, b)

    def test_zero_noise_repeats_base_exactly(self):
        gallery = pairs.synth_gallery(3, 4, 0.0, seed=52)
        for imgs in gallery.identities.values():
            for img in imgs[1:]:
                assert np.array_equal(img, imgs[0])
            assert imgs[0].min() >= 0.2 - 1e-12
            assert imgs[0].max() <= 0.8 + 1e-12

    def test_noise_perturbs_images(self):
        gallery = pairs.synth_gallery(2, 3, 0.1, seed=53)
        imgs = next(iter(gallery.identities.values()))
        assert not np.array_equal(imgs[0], imgs[1])

    def test_identities_are_separated(self):
        """Distinct identities must differ visibly; mean absolute
        difference above 0.05 across seeded pairs."""
        for seed in range(100):
            gallery = pairs.synth_gallery(2, 2, 0.0, seed=seed)
            a, b = (gallery.identities[i][0] for i in gallery.ids)
            assert np.mean(np.abs(a - b)) > 0.05

    def test_within_identity_noise_is_smaller_than_between(self):
        gallery = pairs.synth_gallery(2, 2, 0.05, seed=54)
        ids = gallery.ids
        within = np.mean(np.abs(gallery.identities[ids[0]][0]
                                - gallery.identities[ids[0]][1]))
        between = np.mean(np.abs(gallery.identities[ids[0]][0]
                                 - gallery.identities[ids[1]][0]))
        assert within < between

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            pairs.synth_gallery(1, 3, 0.1, seed=55)
        with pytest.raises(ValueError):
            pairs.synth_gallery(3, 1, 0.1, seed=55)
        with pytest.raises(ValueError):
            pairs.synth_gallery(3, 3, 0.6, seed=55)
        with pytest.raises(ValueError):
            pairs.synth_gallery(3, 3, -0.1, seed=55)


class TestGalleryIO:
    def test_write_load_round_trip_on_pixel_grid(self, tmp_path):
        gallery = pairs.synth_gallery(3, 2, 0.05, seed=60)
        root = tmp_path / "g"
        pairs.write_gallery(gallery, root)
        loaded = pairs.load_gallery(root)
        assert loaded.ids == gallery.ids
        for identity in gallery.ids:
            for orig, back in zip(gallery.identities[identity],
                                  loaded.identities[identity]):
                # PGM quantizes to the 1/255 grid on the way out.
                assert np.max(np.abs(orig - back)) <= 0.5 / 255.0 + 1e-12

    def test_load_accepts_png(self, tmp_path):
        from PIL import Image

        root = tmp_path / "g"
        for identity in ("x", "y"):
            d = root / identity
            d.mkdir(parents=True)
            raw = np.random.default_rng(61).integers(0, 256, (20, 20), dtype=np.uint8)
            Image.fromarray(raw, mode="L").save(d / "img_000.png")
        gallery = pairs.load_gallery(root)
        assert gallery.ids == ["x", "y"]

    def test_load_standardizes_oversized_images(self, tmp_path):
        root = tmp_path / "g"
        d = root / "big"
        d.mkdir(parents=True)
        images.write_pgm(d / "img_000.pgm",
                         np.random.default_rng(62).uniform(0, 1, (40, 40)))
        gallery = pairs.load_gallery(root)
        assert gallery.identities["big"][0].shape == (20, 20)

    def test_load_skips_unreadable_and_counts_them(self, tmp_path):
        root = tmp_path / "g"
        d = root / "a"
        d.mkdir(parents=True)
        images.write_pgm(d / "img_000.pgm", np.full((20, 20), 0.5))
        (d / "img_001.pgm").write_bytes(b"P5\n20 20\n255\n")
        gallery = pairs.load_gallery(root)
        assert len(gallery.identities["a"]) == 1
        assert gallery.skipped_files == 1

    def test_load_ignores_foreign_extensions(self, tmp_path):
        root = tmp_path / "g"
        d = root / "a"
        d.mkdir(parents=True)
        images.write_pgm(d / "img_000.pgm", np.full((20, 20), 0.5))
        (d / "notes.txt").write_text("not an image")
        gallery = pairs.load_gallery(root)
        assert len(gallery.identities["a"]) == 1
        assert gallery.skipped_files == 0

    def test_load_drops_empty_identities(self, tmp_path):
        root = tmp_path / "g"
        good = root / "a"
        good.mkdir(parents=True)
        images.write_pgm(good / "img_000.pgm", np.full((20, 20), 0.5))
        (root / "empty").mkdir()
        gallery = pairs.load_gallery(root)
        assert gallery.ids == ["a"]

    def test_load_empty_root_rejected(self, tmp_path):
        root = tmp_path / "g"
        root.mkdir()
        with pytest.raises(GalleryError):
            pairs.load_gallery(root)

    def test_load_missing_root_rejected(self, tmp_path):
        with pytest.raises(GalleryError):
            pairs.load_gallery(tmp_path / "nope")

    def test_load_order_is_lexicographic(self, tmp_path):
        root = tmp_path / "g"
        for identity in ("zeta", "alpha", "mid"):
            d = root / identity
            d.mkdir(parents=True)
            images.write_pgm(d / "img_000.pgm", np.full((20, 20), 0.5))
        gallery = pairs.load_gallery(root)
        assert gallery.ids == ["alpha", "mid", "zeta"]


class TestManifest:
    def _dataset(self):
        gallery = make_gallery({"a": 3, "b": 3}, seed=70)
        dataset, _ = pairs.generate_symmetric(gallery, seed=71)
        return gallery, dataset

    def test_gallery_resolved_round_trip(self, tmp_path):
        gallery, dataset = self._dataset()
        path = tmp_path / "pairs.jsonl"
        pairs.write_pair_manifest(dataset, path)
        back = pairs.read_pair_manifest(path, gallery=gallery)
        assert len(back) == len(dataset)
        for orig, got in zip(dataset, back):
            assert got.provenance == orig.provenance
            assert got.label == orig.label
            assert np.array_equal(got.image, orig.image)

    def test_inline_round_trip_is_bit_exact(self, tmp_path):
        _, dataset = self._dataset()
        path = tmp_path / "pairs_inline.jsonl"
        pairs.write_pair_manifest(dataset[:10], path, inline=True)
        back = pairs.read_pair_manifest(path)
        for orig, got in zip(dataset[:10], back):
            assert np.array_equal(got.image, orig.image)

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": "same", "id_a": "a", "idx_a": 0, '
                        '"id_b": "a", "idx_b": 1}\n{broken\n')
        with pytest.raises(ManifestError, match=":2:"):
            gallery, _ = self._dataset()
            pairs.read_pair_manifest(path, gallery=gallery)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": "same", "id_a": "a", "idx_a": 0, '
                        '"id_b": "a", "idx_b": 1, "extra": 1}\n')
        gallery, _ = self._dataset()
        with pytest.raises(ManifestError, match="extra"):
            pairs.read_pair_manifest(path, gallery=gallery)

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": "sideways", "id_a": "a", "idx_a": 0, '
                        '"id_b": "a", "idx_b": 1}\n')
        gallery, _ = self._dataset()
        with pytest.raises(ManifestError, match=":1:"):
            pairs.read_pair_manifest(path, gallery=gallery)

    def test_reference_without_gallery_rejected(self, tmp_path):
        _, dataset = self._dataset()
        path = tmp_path / "pairs.jsonl"
        pairs.write_pair_manifest(dataset[:3], path)
        with pytest.raises(ManifestError, match="gallery"):
            pairs.read_pair_manifest(path)

    def test_unknown_reference_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": "same", "id_a": "ghost", "idx_a": 0, '
                        '"id_b": "ghost", "idx_b": 1}\n')
        gallery, _ = self._dataset()
        with pytest.raises(ManifestError, match="ghost"):
            pairs.read_pair_manifest(path, gallery=gallery)

    def test_inline_shape_checked(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": "same", "id_a": "a", "idx_a": 0, '
                        '"id_b": "a", "idx_b": 1, "image": [[0.0, 1.0]]}\n')
        with pytest.raises(ManifestError, match="shape"):
            pairs.read_pair_manifest(path)

    def test_blank_lines_skipped(self, tmp_path):
        gallery, dataset = self._dataset()
        path = tmp_path / "pairs.jsonl"
        pairs.write_pair_manifest(dataset[:2], path)
        path.write_text(path.read_text() + "\n\n")
        back = pairs.read_pair_manifest(path, gallery=gallery)
        assert len(back) == 2
