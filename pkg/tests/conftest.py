import numpy as np
import pytest

from jointsro import Scenario, SpectrogramSet, StftConfig, render_scenario


def drifted_pair(sro_ppm=62.5, duration=10.0, seed=1, snr_db=30.0):
    sc = Scenario(num_channels=2, num_sources=1, duration=duration,
                  true_sros=[0.0, sro_ppm], seed=seed, snr_db=snr_db)
    return render_scenario(sc)


@pytest.fixture(scope="session")
def pair_signals():
    """Two channels, 10 s, one source, channel 1 at +62.5 ppm."""
    return drifted_pair()


@pytest.fixture(scope="session")
def pair_spec(pair_signals):
    return SpectrogramSet.from_signals(pair_signals, StftConfig())


@pytest.fixture(scope="session")
def quad_scene():
    sc = Scenario(num_channels=4, num_sources=2, duration=10.0,
                  true_sros=[0.0, 41.0, -23.5, 57.0], seed=7)
    signals = render_scenario(sc)
    return sc, signals, SpectrogramSet.from_signals(signals, StftConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spec(rng, M=3, T=4, F=8, config=None):
    """Random complex spectrogram set with a small STFT geometry."""
    config = config or StftConfig(window_length=F, shift=F, dft_size=F, window="rect")
    bins = config.num_bins
    coeffs = rng.standard_normal((M, T, bins)) + 1j * rng.standard_normal((M, T, bins))
    return SpectrogramSet(coeffs, config)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
