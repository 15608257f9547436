from convkit.seeding import derive_seed


def test_deterministic():
    assert derive_seed(42, "conv", 3) == derive_seed(42, "conv", 3)


def test_distinct_streams():
    seeds = {
        derive_seed(42, "conv", 3),
        derive_seed(42, "conv", 4),
        derive_seed(42, "offsets", 3),
        derive_seed(43, "conv", 3),
    }
    assert len(seeds) == 4


def test_within_63_bits():
    for i in range(100):
        assert 0 <= derive_seed(7, i) < 2**63
