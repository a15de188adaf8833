import pytest

from laren.config import RunConfig

TINY = dict(H=4, N=4, J=2, C=4, F=2, K=4, S=8, s=4, batch=2, n_samples=12, n_test=4, iters=6,
            ckpt_every=3, lr=1e-3)


@pytest.fixture
def tiny_config():
    return RunConfig(**TINY)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()), encoding="utf-8")
    return path
