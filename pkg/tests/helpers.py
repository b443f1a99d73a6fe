import numpy as np

from ftfl.instance import generate


def mixed_instances(count, m_max=12, n_max=12, r_max=3, seed=0):
    """Seeded test bed; about half banded so that clustering is exercised."""
    rng = np.random.default_rng(seed)
    modes = ["banded", "euclidean", "banded", "uniform"]
    out = []
    for k in range(count):
        m = int(rng.integers(3, m_max, endpoint=True))
        n = int(rng.integers(1, n_max, endpoint=True))
        r = int(rng.integers(1, min(r_max, m), endpoint=True))
        out.append(generate(modes[k % len(modes)], m, n, r, int(rng.integers(2**32))))
    return out


ACCEPTANCE_LINES = []


def record(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
