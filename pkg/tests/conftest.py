import numpy as np
import pytest

from meshfv.dataio import RegionSample, SynthConfig, generate_synthetic, make_folds


def random_sample(rng, R=6, T=40, subject_id="s1", task_label=1):
    return RegionSample(subject_id, task_label, rng.standard_normal((R, T)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_synth():
    """4 classes, 10 subjects, R=12: enough signal for quick pipeline checks."""
    cfg = SynthConfig(
        R=12,
        C=4,
        subjects=10,
        T_per_class=[90, 110, 100, 120],
        noise_sigma=0.3,
        driver_coupling=0.9,
        group_size=2,
        n_drivers=6,
        fan_in=2,
        min_class_distance=4,
    )
    return generate_synthetic(cfg, seed=3)


@pytest.fixture(scope="session")
def small_folds(small_synth):
    return make_folds(small_synth, 5, seed=3)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
