from trellip.rng import DEFAULT_SEED, child_seeds, random_seed, stream


def test_stream_reproducible():
    assert (stream(5).random(10) == stream(5).random(10)).all()
    assert not (stream(5).random(10) == stream(6).random(10)).all()


def test_child_seeds():
    kids = child_seeds(DEFAULT_SEED, 8)
    assert len(set(kids)) == 8
    assert kids == child_seeds(DEFAULT_SEED, 8)
    assert child_seeds(DEFAULT_SEED, 3) == kids[:3]


def test_random_seed_range():
    assert 0 <= random_seed() < 2 ** 63
