import numpy as np
import pytest


def finite_difference(forward, arrays, coords, h=1e-5):
    """Central-difference gradient oracle.

    forward: nullary callable returning a float (recomputes the loss from
    the current contents of `arrays`). For each (array_index, multi_index)
    in coords, perturbs that entry in place and returns the list of
    numerical derivatives. Independent of the tape: only reruns forward.
    """
    out = []
    for ai, idx in coords:
        arr = arrays[ai]
        orig = arr[idx]
        arr[idx] = orig + h
        up = forward()
        arr[idx] = orig - h
        dn = forward()
        arr[idx] = orig
        out.append((up - dn) / (2.0 * h))
    return out


def sample_coords(rng, arrays, per_array=3):
    """A few random entries of each array, as (array_index, multi_index) pairs."""
    coords = []
    for ai, arr in enumerate(arrays):
        flat = rng.choice(arr.size, size=min(per_array, arr.size), replace=False)
        for f in flat:
            coords.append((ai, np.unravel_index(int(f), arr.shape)))
    return coords


def assert_grad_close(analytic, numeric, rtol):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(numeric), 1e-8)
    worst = float(np.max(np.abs(analytic - numeric) / scale))
    assert worst <= rtol, f"gradient mismatch: worst relative error {worst:.3e} > rtol {rtol:.0e}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
