import numpy as np
import pytest

from kolmo.operator import validate_structure


def make_spec(theta, dims, blocks=None, enforce=True):
    """Assemble a spec from per-block coupling matrices."""
    dims = list(dims)
    N = sum(dims)
    B = np.zeros((N, N))
    if blocks is not None:
        row = dims[0]
        col = 0
        for j, blk in enumerate(blocks, start=1):
            blk = np.atleast_2d(np.asarray(blk, dtype=float))
            B[row : row + dims[j], col : col + dims[j - 1]] = blk
            col = row
            row += dims[j]
    return validate_structure(theta, dims, B, enforce_block_ranks=enforce)


def heat_spec(N=1):
    return make_spec(0, [N])


def tdeg_spec(N=1):
    """Totally degenerate heat-type operator t^2 Laplacian - d/dt."""
    return make_spec(1, [N])


def kolmo_spec(theta=0):
    """Two-block chain with unit coupling."""
    return make_spec(theta, [1, 1], blocks=[[[1.0]]])


def random_valid_spec(rng, max_kappa=3, max_m=3, max_theta=2):
    kappa = int(rng.integers(0, max_kappa + 1))
    dims = [int(rng.integers(1, max_m + 1))]
    for _ in range(kappa):
        dims.append(int(rng.integers(1, dims[-1] + 1)))
    theta = int(rng.integers(0, max_theta + 1))
    blocks = []
    for j in range(1, len(dims)):
        while True:
            blk = rng.integers(-2, 3, size=(dims[j], dims[j - 1])).astype(float)
            if np.linalg.matrix_rank(blk) == dims[j]:
                blocks.append(blk)
                break
    return make_spec(theta, dims, blocks)


def random_deficient_spec(rng, max_kappa=3, max_m=3, max_theta=2):
    """Valid shape, but one coupling block deliberately rank-deficient."""
    while True:
        spec = random_valid_spec(rng, max_kappa, max_m, max_theta)
        if spec.kappa >= 1:
            break
    dims = list(spec.block_dims)
    B = np.array(spec.B)
    j = int(rng.integers(1, spec.kappa + 1))
    row = sum(dims[:j])
    blk = B[row : row + dims[j], row - dims[j - 1] : row]
    if dims[j] == 1:
        blk[:] = 0.0
    else:
        blk[-1] = blk[0]
    B[row : row + dims[j], row - dims[j - 1] : row] = blk
    return validate_structure(spec.theta, dims, B, enforce_block_ranks=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
