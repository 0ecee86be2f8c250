import dataclasses

import numpy as np
import pytest

from mvfuse.prior import synth_head
from mvfuse.synth import SceneSpec, generate_scene, make_rig

NOISELESS = dict(detection_noise_px=0.0, detection_dropout=0.0, prior_pose_noise_rad=0.0,
                 prior_shape_noise=0.0)


@pytest.fixture(scope="session")
def model():
    return make_rig()


@pytest.fixture(scope="session")
def head():
    return synth_head(1)


@pytest.fixture(scope="session")
def scene(model, head):
    return generate_scene(model, head, SceneSpec(seed=0))


@pytest.fixture(scope="session")
def free_scene(model, head):
    return generate_scene(model, head, SceneSpec(seed=0, calibrated=False))


@pytest.fixture(scope="session")
def noiseless_scene(model, head):
    return generate_scene(model, head, SceneSpec(seed=0, **NOISELESS))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(**kw):
    from mvfuse.optimizer import TTAConfig

    base = dict(steps=10, warmup_steps=3)
    base.update(kw)
    return TTAConfig(**base)


def replace_spec(spec, **kw):
    return dataclasses.replace(spec, **kw)


# acceptance criteria verdicts, printed once at the end of the session
VERDICTS = []


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
