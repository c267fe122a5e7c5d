import numpy as np
import pytest

from genvc.audio import ACOUSTIC_RATE, Waveform


def tone(freq: float, seconds: float, rate: int = ACOUSTIC_RATE, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(seconds * rate))) / rate
    return Waveform((amp * np.sin(2 * np.pi * freq * t)).astype(np.float32), rate)


def noise(seconds: float, rate: int = ACOUSTIC_RATE, seed: int = 0, amp: float = 0.3) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    return Waveform((amp * rng.standard_normal(n)).clip(-0.99, 0.99).astype(np.float32), rate)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
