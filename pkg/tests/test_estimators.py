import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from posdiff import PuzzleSolver, SequenceOrderer
from posdiff.data import gen_procedural_image, gen_synthetic_sequence
from posdiff.estimators import check_images, check_patch_sets, check_sequences
from posdiff.tasks import patchify

TINY = dict(T=30, inference_ratio=3, width=16, heads=2, e=8, d=16, batch_size=4)


@pytest.fixture(scope="module")
def images():
    return [gen_procedural_image(s, 64) for s in range(4)]


@pytest.fixture(scope="module")
def sequences():
    return [gen_synthetic_sequence(s, 3 + s % 3) for s in range(12)]


class TestValidation:
    def test_images(self):
        out = check_images([np.zeros((8, 8), np.uint8), np.ones((8, 8, 3), np.float32)])
        assert out[0].shape == (8, 8, 3) and out[0].dtype == np.float32

    @pytest.mark.parametrize("bad", [[], [np.zeros((8, 8, 4))], [np.full((8, 8, 3), 2.0)]])
    def test_bad_images(self, bad):
        with pytest.raises(ValueError):
            check_images(bad)

    def test_patch_sets(self):
        with pytest.raises(ValueError, match="square"):
            check_patch_sets([np.zeros((5, 32, 32, 3))])
        with pytest.raises(ValueError, match="patch shape"):
            check_patch_sets([np.zeros((4, 16, 16, 3))])

    def test_sequences(self):
        assert len(check_sequences([[[1, 2], [3]]])[0]) == 2
        with pytest.raises(ValueError):
            check_sequences([[[1], []]])
        with pytest.raises(ValueError, match="outside"):
            check_sequences([[[1], [600]]], vocab=512)


class TestParams:
    @pytest.mark.parametrize("cls", [PuzzleSolver, SequenceOrderer])
    def test_clone_round_trip(self, cls):
        est = cls(seed=3, lr=5e-4)
        params = clone(est).get_params()
        assert params == est.get_params()
        assert params["seed"] == 3 and params["lr"] == 5e-4

    def test_set_params(self):
        est = SequenceOrderer().set_params(width=64)
        assert est.width == 64

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            SequenceOrderer().predict([[[1], [2]]])


class TestPuzzleSolver:
    def test_fit_predict(self, images):
        est = PuzzleSolver(puzzle_sizes=(2, 3), max_steps=3, **TINY).fit(images)
        assert est.n_steps_ == 3 and len(est.loss_curve_) == 3  # capped by max_steps
        sets = [patchify(images[0], 2), patchify(images[1], 3)]
        cells = est.predict(sets)
        assert sorted(cells[0]) == list(range(4)) and sorted(cells[1]) == list(range(9))
        pos = est.predict_positions(sets)
        assert pos[0].shape == (4, 2)
        assert 0.0 <= est.score(images) <= 1.0

    def test_save_load(self, images, tmp_path):
        est = PuzzleSolver(puzzle_sizes=(2,), max_steps=1, **TINY).fit(images)
        est.save(tmp_path / "p.ckpt")
        back = PuzzleSolver.load(tmp_path / "p.ckpt")
        assert back.get_params() == est.get_params()
        sets = [patchify(images[2], 2)]
        np.testing.assert_array_equal(back.predict_positions(sets)[0], est.predict_positions(sets)[0])


class TestSequenceOrderer:
    def test_fit_predict(self, sequences):
        est = SequenceOrderer(epochs=2, **TINY).fit(sequences)
        assert est.n_steps_ == 6
        ranks = est.predict(sequences[:3])
        for r, seq in zip(ranks, sequences):
            assert sorted(r) == list(range(len(seq)))
        assert 0.0 <= est.score(sequences) <= 1.0

    def test_gaussian_init_is_seeded(self, sequences):
        est = SequenceOrderer(init_mode="standard-gaussian", max_steps=1, **TINY).fit(sequences)
        a = est.predict_positions(sequences[:2])
        b = est.predict_positions(sequences[:2])
        np.testing.assert_array_equal(a[0], b[0])

    def test_load_wrong_task(self, sequences, tmp_path):
        est = SequenceOrderer(max_steps=1, **TINY).fit(sequences)
        est.save(tmp_path / "s.ckpt")
        with pytest.raises(ValueError, match="task mismatch"):
            PuzzleSolver.load(tmp_path / "s.ckpt")
