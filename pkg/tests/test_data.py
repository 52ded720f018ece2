import itertools
import json

import numpy as np
import pytest
from PIL import Image

from posdiff.data import (
    DatasetSpec,
    assign_splits,
    center_crop_box,
    chain_order,
    gen_procedural_image,
    gen_synthetic_sequence,
    generate,
    load_image_dir,
    read_dataset,
    write_dataset,
)
from posdiff.tasks import patchify


class TestProceduralImage:
    def test_deterministic(self):
        assert np.array_equal(gen_procedural_image(5, 96), gen_procedural_image(5, 96))

    def test_shape_and_type(self):
        img = gen_procedural_image(0, 64)
        assert img.shape == (64, 64, 3) and img.dtype == np.uint8

    def test_seeds_differ_in_most_pixels(self):
        fracs = []
        for s in range(100):
            a, b = gen_procedural_image(2 * s, 64), gen_procedural_image(2 * s + 1, 64)
            fracs.append(np.any(a != b, axis=2).mean())
        assert min(fracs) > 0.5

    def test_patches_pairwise_distinct(self):
        for seed in range(20):
            p = patchify(gen_procedural_image(seed, 96).astype(np.float32) / 255, 4)
            for i, j in itertools.combinations(range(16), 2):
                assert np.abs(p[i] - p[j]).mean() > 1 / 255

    def test_too_small(self):
        with pytest.raises(ValueError):
            gen_procedural_image(0, 32)


class TestSyntheticSequence:
    def test_deterministic(self):
        a, b = gen_synthetic_sequence(3, 6), gen_synthetic_sequence(3, 6)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_recoverable_by_chain_for_small_K(self):
        for seed in range(300):
            K = 2 + seed % 5  # K in 2..6
            elements = gen_synthetic_sequence(seed, K)
            perm = np.random.default_rng(seed).permutation(K)
            shuffled = [elements[i] for i in perm]
            # brute force: the permutation with K-1 matching links
            best = max(itertools.permutations(range(K)),
                       key=lambda o: sum(int(shuffled[a][-1]) == int(shuffled[b][0]) for a, b in zip(o, o[1:])))
            assert [perm[i] for i in best] == list(range(K))
            assert [perm[i] for i in chain_order(shuffled)] == list(range(K))

    def test_no_index_tokens_needed(self):
        # same K, different seeds: link tokens are unrelated to element index
        firsts = {int(gen_synthetic_sequence(s, 5)[0][0]) for s in range(50)}
        assert len(firsts) > 10

    def test_no_element_holds_its_index(self):
        for seed in range(200):
            K = 3 + seed % 6
            elements = gen_synthetic_sequence(seed, K)
            assert all(i not in el.tolist() for i, el in enumerate(elements))
            assert min(int(el.min()) for el in elements) >= K

    def test_links_increase(self):
        elements = gen_synthetic_sequence(4, 7)
        links = [int(el[0]) for el in elements] + [int(elements[-1][-1])]
        assert links == sorted(links) and len(set(links)) == 8

    def test_vocab_too_small(self):
        with pytest.raises(ValueError):
            gen_synthetic_sequence(0, 8, vocab=10)

    def test_K_too_small(self):
        with pytest.raises(ValueError):
            gen_synthetic_sequence(0, 1)


class TestSplits:
    def test_counts(self):
        labels = assign_splits(10, (0.8, 0.1, 0.1), 0)
        assert (labels.count("train"), labels.count("val"), labels.count("test")) == (8, 1, 1)

    def test_stable(self):
        assert assign_splits(50, (0.6, 0.2, 0.2), 4) == assign_splits(50, (0.6, 0.2, 0.2), 4)

    def test_disjoint_and_exhaustive(self):
        ds = generate(DatasetSpec(kind="synthetic-sequence", count=40, seed=2))
        ids = [set(e.id for e in ds.split(s)) for s in ("train", "val", "test")]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        assert set.union(*ids) == {e.id for e in ds.entries}

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            DatasetSpec(splits=(0.5, 0.5, 0.5))


class TestDatasets:
    def test_generate_is_pure(self):
        spec = DatasetSpec(kind="procedural-image", count=6, seed=1, image_size=64)
        a, b = generate(spec), generate(spec)
        assert a.manifest() == b.manifest()
        assert all(np.array_equal(a.items[k], b.items[k]) for k in a.items)

    def test_sequence_K_range(self):
        ds = generate(DatasetSpec(kind="synthetic-sequence", count=200, seed=0, k_min=3, k_max=8))
        Ks = {len(v) for v in ds.items.values()}
        assert Ks == set(range(3, 9))

    @pytest.mark.parametrize("kind", ["procedural-image", "synthetic-sequence"])
    def test_write_read_round_trip(self, tmp_path, kind):
        ds = generate(DatasetSpec(kind=kind, count=5, seed=3, image_size=64))
        write_dataset(ds, tmp_path)
        back = read_dataset(tmp_path)
        assert back.manifest() == ds.manifest()
        for k in ds.items:
            if kind == "procedural-image":
                assert np.array_equal(back.items[k], ds.items[k])
            else:
                assert all(np.array_equal(x, y) for x, y in zip(back.items[k], ds.items[k]))
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["entries"]) == 5

    def test_written_manifest_bytes_stable(self, tmp_path):
        spec = DatasetSpec(kind="synthetic-sequence", count=8, seed=9)
        write_dataset(generate(spec), tmp_path / "a")
        write_dataset(generate(spec), tmp_path / "b")
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
        assert (tmp_path / "a" / "sequences.jsonl").read_bytes() == (tmp_path / "b" / "sequences.jsonl").read_bytes()


class TestImageDir:
    def write_images(self, path, count=10, size=(80, 80)):
        rng = np.random.default_rng(0)
        for i in range(count):
            arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
            Image.fromarray(arr).save(path / f"img_{i:02d}.png")

    def test_split_8_1_1(self, tmp_path):
        self.write_images(tmp_path)
        spec = DatasetSpec(kind="image-dir", count=10, source_dir=str(tmp_path), image_size=64, seed=5)
        a = load_image_dir(tmp_path, spec)
        b = load_image_dir(tmp_path, spec)
        assert [e.split for e in a.entries] == [e.split for e in b.entries]
        assert [len(a.split(s)) for s in ("train", "val", "test")] == [8, 1, 1]
        assert [e.id for e in a.entries] == sorted(e.id for e in a.entries)
        assert a.items["img_00"].shape == (64, 64, 3)

    def test_center_crop(self, tmp_path):
        arr = np.zeros((60, 100, 3), dtype=np.uint8)
        arr[:, :, 0] = np.arange(100)[None, :]  # red channel encodes the column
        arr[:, :, 1] = np.arange(60)[:, None]  # green channel encodes the row
        Image.fromarray(arr).save(tmp_path / "wide.png")
        assert center_crop_box(100, 60) == (20, 0, 80, 60)
        ds = load_image_dir(tmp_path)
        img = ds.items["wide"]
        assert img.shape == (60, 60, 3)
        assert img[0, 0, 0] == 20 and img[0, -1, 0] == 79
        assert img[0, 0, 1] == 0 and img[-1, 0, 1] == 59

    def test_unreadable_skipped(self, tmp_path, caplog):
        self.write_images(tmp_path, count=2)
        (tmp_path / "broken.png").write_bytes(b"not a png")
        ds = load_image_dir(tmp_path)
        assert len(ds.entries) == 2
        assert "broken.png" in caplog.text

    def test_empty_dir(self, tmp_path):
        with pytest.raises(ValueError):
            load_image_dir(tmp_path)
