from gridward.rng import MASK64, SplitMix64, mix64


def test_splitmix64_reference_stream():
    # First outputs of the reference C splitmix64 seeded with 0.
    rng = SplitMix64(0)
    assert [rng.next() for _ in range(3)] == [
        0xE220A8397B1DCDAF,
        0x6E789E6AA1B965F4,
        0x06C45D188009454F,
    ]


def test_uniform_uses_high_53_bits():
    a, b = SplitMix64(99), SplitMix64(99)
    assert a.uniform() == (b.next() >> 11) / 2.0**53


def test_mix64_is_one_step_from_xored_state():
    s, w, j = 42, 3, 17
    x = s ^ ((w * 0x9E3779B97F4A7C15) & MASK64) ^ ((j * 0xC2B2AE3D27D4EB4F) & MASK64)
    assert mix64(s, w, j) == SplitMix64(x).next()
    assert mix64(s, w, j) != mix64(s, w, j + 1)


def test_shuffle_is_a_deterministic_permutation():
    items = list(range(50))
    a, b = items[:], items[:]
    SplitMix64(5).shuffle(a)
    SplitMix64(5).shuffle(b)
    assert a == b and sorted(a) == items and a != items
