"""Onset-prompted target speaker extraction at desk scale.

Prepend an enrollment utterance of the target speaker (plus a short glue
delimiter) to a mixture at the waveform level, and train a compact dual-path
time-frequency network to emit that speaker. The package covers the whole
loop: synthetic corpus generation, prompt assembly, training with a masked
SI-SDR loss, evaluation, and ablation/attention harnesses.
"""

__version__ = "0.1.0"

from . import dsp, prompt, synthgen, model, train, evaluate, cache  # noqa: F401
