import numpy as np
import pytest
import torch

from conftest import tiny_config
from posdiff.checkpoint import (
    MAGIC,
    CheckpointError,
    CheckpointMismatchError,
    decode,
    encode,
    load_checkpoint,
    restore_optimizer,
    save_checkpoint,
)
from posdiff.training import checkpoint_meta, evaluate, make_optimizer, new_model, task_instances, train


@pytest.fixture(scope="module")
def trained(tmp_path_factory, seq_train):
    cfg = tiny_config(max_steps=6)
    out = tmp_path_factory.mktemp("run")
    res = train(cfg, seq_train, out_dir=out)
    return cfg, res, out / "last.ckpt"


class TestFormat:
    def test_encode_decode(self):
        arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array(1.5, dtype=np.float32)}
        back, meta = decode(encode(arrays, {"x": 1}))
        assert meta == {"x": 1}
        assert set(back) == {"a", "b"}
        assert np.array_equal(back["a"], arrays["a"]) and back["b"].shape == ()

    def test_little_endian_floats(self):
        blob = encode({"w": np.array([1.0], dtype=np.float32)}, {})
        assert blob.startswith(MAGIC)
        assert blob.endswith(np.array([1.0], dtype="<f4").tobytes())

    def test_truncated(self):
        blob = encode({"w": np.ones(4, dtype=np.float32)}, {"k": "v"})
        for cut in (3, len(MAGIC) + 2, len(blob) - 1):
            with pytest.raises(CheckpointError, match="truncated"):
                decode(blob[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match="trailing"):
            decode(encode({}, {}) + b"\0")


class TestRoundTrip:
    def test_save_load_save_identical(self, trained, tmp_path):
        _, res, path = trained
        model, meta, arrays = load_checkpoint(path)
        opt = torch.optim.Adam(model.parameters())
        restore_optimizer(model, opt, arrays, meta["optimizer_step"])
        meta = {k: v for k, v in meta.items() if k not in ("model", "optimizer_step")}
        again = save_checkpoint(model, meta, tmp_path / "again.ckpt", opt)
        assert again.read_bytes() == path.read_bytes()

    def test_weights_restored(self, trained):
        _, res, path = trained
        model, _, _ = load_checkpoint(path)
        for (k, a), (_, b) in zip(res.model.state_dict().items(), model.state_dict().items()):
            assert torch.equal(a, b), k

    def test_header_describes_model(self, trained):
        _, _, path = trained
        _, meta = decode(path.read_bytes())
        assert meta["model"]["num_layers"] == 4
        assert meta["model"]["denoiser"]["n"] == 1
        assert meta["schedule"] == {"T": 30, "beta_start": 1e-4, "beta_end": 0.02}
        assert meta["step"] == 6

    def test_reloaded_evaluation_identical(self, trained, seq_dataset):
        cfg, res, path = trained
        test = task_instances(seq_dataset, "test", "sequence")
        a, _ = evaluate(res.model, test, cfg.diffusion())
        model, _, _ = load_checkpoint(path)
        b, _ = evaluate(model, test, cfg.diffusion())
        assert a.to_text().encode() == b.to_text().encode()


class TestErrors:
    def test_corrupt_header_byte(self, trained, tmp_path):
        _, _, path = trained
        blob = bytearray(path.read_bytes())
        blob[3] ^= 0xFF
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(bad)

    def test_puzzle_checkpoint_for_sequence_task(self, tmp_path):
        cfg = tiny_config("puzzle")
        path = save_checkpoint(new_model(cfg), checkpoint_meta(cfg, 0, 0.0), tmp_path / "p.ckpt")
        with pytest.raises(CheckpointMismatchError, match="n=2"):
            load_checkpoint(path, n=1)
        with pytest.raises(CheckpointMismatchError, match="task mismatch"):
            load_checkpoint(path, task="sequence")

    def test_array_shape_mismatch(self, tmp_path):
        cfg = tiny_config()
        model = new_model(cfg)
        arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
        arrays["model.denoiser.head.bias"] = np.zeros(3, dtype=np.float32)
        meta = {"model": model.config()}
        (tmp_path / "x.ckpt").write_bytes(encode(arrays, meta))
        with pytest.raises(CheckpointError, match="does not fit"):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_optimizer_moments_saved(self, tmp_path, seq_train):
        cfg = tiny_config(max_steps=2)
        res = train(cfg, seq_train)
        path = save_checkpoint(res.model, {}, tmp_path / "o.ckpt", res.optimizer)
        arrays, meta = decode(path.read_bytes())
        assert meta["optimizer_step"] == 2
        names = [k for k in arrays if k.startswith("optim.")]
        assert len(names) == 2 * sum(1 for _ in res.model.parameters())
        assert make_optimizer(res.model, cfg).defaults["lr"] == cfg.lr
