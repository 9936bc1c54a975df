import numpy as np
import pytest

from lext import dsp, prompt
from lext.prompt import GlueSpec, PromptBoundaries


def test_make_glue():
    assert np.array_equal(prompt.make_glue(GlueSpec()), np.zeros(256))
    five = prompt.make_glue(GlueSpec(value=5.0))
    assert five.size == 256 and np.all(five == 5.0)
    assert prompt.make_glue(GlueSpec(length_ms=0.0)).size == 0


def test_fit_enrollment_paths():
    rng = np.random.default_rng(0)
    e = rng.standard_normal(8000)
    assert np.array_equal(prompt.fit_enrollment(e, 8000), e)

    short = rng.standard_normal(3000)
    padded = prompt.fit_enrollment(short, 8000)
    assert padded.size == 8000
    assert np.all(padded[:5000] == 0.0)
    assert np.array_equal(padded[5000:], short)

    long = rng.standard_normal(20000)
    assert np.array_equal(prompt.fit_enrollment(long, 8000, mode="eval"), long[:8000])
    crop = prompt.fit_enrollment(long, 8000, mode="train", rng=np.random.default_rng(1))
    again = prompt.fit_enrollment(long, 8000, mode="train", rng=np.random.default_rng(1))
    assert np.array_equal(crop, again)
    with pytest.raises(ValueError):
        prompt.fit_enrollment(np.zeros(0), 100)
    with pytest.raises(ValueError):
        prompt.fit_enrollment(long, 8000, mode="train")  # rng required


def _materials(rng, e_len=8000, n=32000):
    return (
        rng.standard_normal(e_len),
        rng.standard_normal(n),
        rng.standard_normal(n) * 0.5,
    )


def test_assemble_prepend_bookkeeping():
    e, y, s = _materials(np.random.default_rng(2))
    pair = prompt.assemble(e, y, s, GlueSpec(), "prepend", enroll_len=8000)
    assert pair.input.size == pair.target.size == 40256
    assert pair.boundaries == PromptBoundaries(8000, 256, 32000, 0, 0)
    # Outside the mixture range, input and target are the same signal.
    b = pair.boundaries
    outside = np.r_[0 : b.mixture_start]
    assert np.array_equal(pair.input[outside], pair.target[outside])
    # Inside: normalized mixture and normalized target at the mixture scale.
    assert np.array_equal(prompt.strip_prompt(pair.input, b), y / pair.scales.sigma_y)
    assert np.array_equal(prompt.strip_prompt(pair.target, b), s / pair.scales.sigma_y)


def test_assemble_split_structure():
    e, y, s = _materials(np.random.default_rng(3))
    pair = prompt.assemble(e, y, s, GlueSpec(), "split", enroll_len=8000)
    assert pair.input.size == 40512
    assert pair.boundaries == PromptBoundaries(4000, 256, 32000, 256, 4000)
    e_n = e / pair.scales.sigma_e
    assert np.array_equal(pair.input[:4000], e_n[:4000])
    assert np.array_equal(pair.input[-4000:], e_n[4000:])
    glue = pair.input[4000:4256]
    assert np.all(glue == 0.0)


def test_assemble_split_pads_each_half_toward_mixture():
    rng = np.random.default_rng(4)
    e = rng.standard_normal(3000)  # shorter than the 8000-sample slot
    y, s = rng.standard_normal(16000), rng.standard_normal(16000)
    pair = prompt.assemble(e, y, s, GlueSpec(), "split", enroll_len=8000)
    b = pair.boundaries
    assert (b.enroll_pre_len, b.enroll_post_len) == (4000, 4000)
    e_n = e / pair.scales.sigma_e
    # Prepended half: zeros on the left; appended half: zeros on the right.
    assert np.all(pair.input[:2500] == 0.0)
    assert np.array_equal(pair.input[2500:4000], e_n[:1500])
    post = pair.input[-4000:]
    assert np.array_equal(post[:1500], e_n[1500:])
    assert np.all(post[1500:] == 0.0)


def test_assemble_append_structure():
    e, y, s = _materials(np.random.default_rng(5), e_len=6000, n=16000)
    pair = prompt.assemble(e, y, s, GlueSpec(), "append", enroll_len=8000)
    b = pair.boundaries
    assert (b.enroll_pre_len, b.glue1_len, b.mixture_len, b.glue2_len, b.enroll_post_len) == (
        0, 0, 16000, 256, 8000,
    )
    e_n = e / pair.scales.sigma_e
    tail = pair.input[-8000:]
    assert np.array_equal(tail[:6000], e_n)
    assert np.all(tail[6000:] == 0.0)


def test_assemble_zero_enrollment_control():
    rng = np.random.default_rng(6)
    y, s = rng.standard_normal(8000), rng.standard_normal(8000)
    pair = prompt.assemble(np.zeros(0), y, s, GlueSpec(), "prepend", enroll_len=0)
    assert pair.boundaries == PromptBoundaries(0, 256, 8000, 0, 0)
    assert pair.scales.sigma_e == 1.0
    assert np.all(pair.input[:256] == 0.0)


def test_assemble_validation():
    rng = np.random.default_rng(7)
    y = rng.standard_normal(1000)
    with pytest.raises(ValueError):
        prompt.assemble(rng.standard_normal(100), y, y[:-1], GlueSpec(), "prepend")
    with pytest.raises(ValueError):
        prompt.assemble(rng.standard_normal(100), y, y, GlueSpec(), "sideways")
    with pytest.raises(ValueError):
        prompt.assemble(rng.standard_normal(200), y, y, GlueSpec(), "prepend", enroll_len=100)
    with pytest.raises(dsp.DegenerateSignalError):
        prompt.assemble(np.ones(100), y, y, GlueSpec(), "prepend")


def test_glue_independence():
    rng = np.random.default_rng(8)
    e, y, s = _materials(rng, e_len=2000, n=8000)
    a = prompt.assemble(e, y, s, GlueSpec(value=0.0), "prepend", enroll_len=2000)
    b = prompt.assemble(e, y, s, GlueSpec(value=5.0), "prepend", enroll_len=2000)
    (g0, g1), = a.boundaries.glue_ranges()
    mask = np.ones(a.input.size, bool)
    mask[g0:g1] = False
    assert np.array_equal(a.input[mask], b.input[mask])
    assert np.array_equal(a.target[mask], b.target[mask])
    assert np.all(b.input[g0:g1] == 5.0)


def test_strip_prompt():
    rng = np.random.default_rng(9)
    b = PromptBoundaries(8000, 256, 32000, 0, 0)
    est = rng.standard_normal(b.total)
    assert np.array_equal(prompt.strip_prompt(est, b), est[8256:40256])
    ident = PromptBoundaries(0, 0, 100, 0, 0)
    x = rng.standard_normal(100)
    assert np.array_equal(prompt.strip_prompt(x, ident), x)
    split = PromptBoundaries(4000, 256, 32000, 256, 4000)
    est2 = rng.standard_normal(split.total)
    assert np.array_equal(prompt.strip_prompt(est2, split), est2[4256:36256])
    with pytest.raises(ValueError):
        prompt.strip_prompt(est[:-1], b)


def test_denormalize():
    rng = np.random.default_rng(10)
    b = PromptBoundaries(2000, 256, 8000, 0, 0)
    est = np.ones(b.total)
    out = prompt.denormalize(est, b, dsp.GainScales(sigma_y=2.0, sigma_e=1.0))
    assert np.all(out[:2000] == 1.0)  # enrollment scaled by sigma_e = 1
    assert np.all(out[2000:2256] == 1.0)  # glue untouched
    assert np.all(out[2256:] == 2.0)  # mixture scaled
    # Identity scales leave everything alone.
    same = prompt.denormalize(est, b, dsp.GainScales(1.0, 1.0))
    assert np.array_equal(same, est)
    # Split boundaries scale both enrollment ranges.
    bs = PromptBoundaries(1000, 256, 4000, 256, 1000)
    out2 = prompt.denormalize(np.ones(bs.total), bs, dsp.GainScales(3.0, 0.5))
    assert np.all(out2[:1000] == 0.5) and np.all(out2[-1000:] == 0.5)
    assert np.all(out2[1256:5256] == 3.0)


def test_denormalize_si_sdr_scale_invariance():
    # Scoring the denormalized estimate against the raw reference equals
    # scoring in the normalized domain: SI-SDR ignores both rescalings.
    from lext.train import si_sdr

    rng = np.random.default_rng(11)
    e, y, s = _materials(rng, e_len=2000, n=8000)
    pair = prompt.assemble(e, y, s, GlueSpec(), "prepend", enroll_len=2000)
    est_aug = rng.standard_normal(pair.input.size)
    est_norm = prompt.strip_prompt(est_aug, pair.boundaries)
    est_denorm = prompt.strip_prompt(
        prompt.denormalize(est_aug, pair.boundaries, pair.scales), pair.boundaries
    )
    a = si_sdr(est_denorm, s)
    c = si_sdr(est_norm, s / pair.scales.sigma_y)
    assert abs(a - c) < 1e-9


def test_length_bookkeeping_all_strategies():
    rng = np.random.default_rng(12)
    for strategy in prompt.STRATEGIES:
        e, y, s = _materials(rng, e_len=3000, n=9000)
        pair = prompt.assemble(e, y, s, GlueSpec(), strategy, enroll_len=4001)
        assert pair.input.size == pair.boundaries.total
        assert np.array_equal(
            prompt.strip_prompt(pair.input, pair.boundaries), y / pair.scales.sigma_y
        )
