import os
import subprocess
import sys

import numpy as np
from scipy import signal

from lext import _kernels


def test_sos_filter_matches_scipy():
    rng = np.random.default_rng(0)
    sos = signal.butter(4, 0.2, output="sos")
    x = rng.standard_normal(5000)
    ours = _kernels.sos_filter(sos, x)
    ref = signal.sosfilt(sos, x)
    assert np.allclose(ours, ref, atol=1e-12, rtol=1e-12)


def test_sos_filter_resonator_cascade():
    rng = np.random.default_rng(1)
    sos = np.stack([
        np.array([0.1, 0.0, 0.0, 1.0, -1.8 * np.cos(0.3), 0.81]),
        np.array([1.0, -1.0, 0.0, 1.0, -0.995, 0.0]),
    ])
    x = rng.standard_normal(2000)
    assert np.allclose(_kernels.sos_filter(sos, x), signal.sosfilt(sos, x), atol=1e-12)


def test_backend_flag_gives_equivalent_synthesis(tmp_path):
    # Render the same utterance with the numba path disabled in a subprocess
    # and compare against the in-process default backend.
    from lext import synthgen

    rng = np.random.default_rng(2)
    profile = synthgen.make_speaker_profiles(1, rng)[0]
    wav = synthgen.synth_utterance(profile, 1.0, np.random.default_rng(3))
    out = tmp_path / "fallback.npy"
    script = (
        "import numpy as np\n"
        "from lext import synthgen\n"
        "rng = np.random.default_rng(2)\n"
        "p = synthgen.make_speaker_profiles(1, rng)[0]\n"
        "w = synthgen.synth_utterance(p, 1.0, np.random.default_rng(3))\n"
        f"np.save({str(out)!r}, w)\n"
    )
    env = dict(os.environ, LEXT_DISABLE_NUMBA="1")
    subprocess.run([sys.executable, "-c", script], check=True, env=env)
    fallback = np.load(out)
    assert np.allclose(wav, fallback, atol=1e-9, rtol=1e-9)
