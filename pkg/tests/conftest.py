import numpy as np
import pytest

from mental_perceiver.kernels import available_backends
from mental_perceiver.model import MentalPerceiver, ModelConfig
from mental_perceiver.priors import CategoryPriorPair


def tiny_config(**kw):
    base = dict(d_x=8, d_z=8, d_q=8, d_y=8, depth=2, heads=1, audio_width=4, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def random_priors(width, seed=0):
    rng = np.random.default_rng(seed)
    return CategoryPriorPair(rng.standard_normal(width), rng.standard_normal(width))


def tiny_model(dtype=np.float64, seed=0, **kw):
    cfg = tiny_config(seed=seed, **kw)
    return MentalPerceiver(cfg, random_priors(cfg.d_x, seed), dtype=dtype)


def randomize(store, seed=0, std=0.5):
    """Re-draw every trainable tensor at a scale where gradients are well above round-off."""
    rng = np.random.default_rng(seed)
    for name in store.trainable_names():
        arr = store[name]
        noise = std * rng.standard_normal(arr.shape)
        if name.endswith(".g"):
            noise += 1.0
        store.set(name, noise.astype(arr.dtype))


@pytest.fixture(params=available_backends())
def backend(request):
    from mental_perceiver.kernels import get_backend
    return get_backend(request.param)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    ok = call.excinfo is None
    _CRITERIA.setdefault(mark.args[0], []).append((item.name, ok))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        failed = [name for name, ok in results if not ok]
        status = "PASS" if not failed else "FAIL"
        detail = f"{len(results) - len(failed)}/{len(results)} checks passed"
        if failed:
            detail += "; failing: " + ", ".join(failed)
        terminalreporter.write_line(f"criterion {n}: {status} ({detail})")
