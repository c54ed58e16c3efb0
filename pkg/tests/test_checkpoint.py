import numpy as np
import pytest

from crossview.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from crossview.errors import FormatError
from crossview.optim import OptimState


def _sample(rng):
    state = {"a.weight": rng.standard_normal((3, 2)).astype(np.float32), "a.running_var": np.ones(3)}
    optim = OptimState(step=7, m={"a.weight": rng.standard_normal((3, 2))}, v={"a.weight": rng.random((3, 2))})
    return Checkpoint({"variant": "late-join"}, state, optim, epoch=5, config={"seed": 3}, extra={"metrics": [[1, "val", "t", "auc", 0.5]]})


def test_round_trip(tmp_path, rng):
    ck = _sample(rng)
    save_checkpoint(tmp_path / "x.ckpt", ck)
    back = load_checkpoint(tmp_path / "x.ckpt")
    assert back.model_spec == ck.model_spec and back.config == ck.config and back.extra == ck.extra
    assert back.epoch == 5 and back.optim.step == 7
    for k, arr in ck.state.items():
        assert back.state[k].dtype == arr.dtype
        np.testing.assert_array_equal(back.state[k], arr)
    np.testing.assert_array_equal(back.optim.m["a.weight"], ck.optim.m["a.weight"])
    np.testing.assert_array_equal(back.optim.v["a.weight"], ck.optim.v["a.weight"])


def test_identical_content_gives_identical_bytes(tmp_path, rng):
    ck = _sample(rng)
    save_checkpoint(tmp_path / "a.ckpt", ck)
    save_checkpoint(tmp_path / "b.ckpt", ck)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes()[:4] == MAGIC


def test_without_optimizer(tmp_path, rng):
    ck = _sample(rng)
    ck.optim = None
    save_checkpoint(tmp_path / "x.ckpt", ck)
    assert load_checkpoint(tmp_path / "x.ckpt").optim is None


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda b: b[:10], "truncated"),
        (lambda b: b"NOPE" + b[4:], "magic"),
        (lambda b: b[:4] + (9).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[:-8], "past end"),
    ],
)
def test_corrupt_files_rejected(tmp_path, rng, mutate, message):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, _sample(rng))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError, match=message):
        load_checkpoint(path)
