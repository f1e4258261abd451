import itertools

import numpy as np
import pytest

from npsdo.discretization import (MacVelocity, ReductionMap, assemble_poisson, fluid_divergence,
                                  floating_components, is_singular, mac_divergence_rhs,
                                  pad_vector, read_triplets, reduce, reduced_system,
                                  restrict_vector, write_triplets)
from npsdo.errors import DimensionError, EmptySystemError
from npsdo.linalg import dense_cholesky
from npsdo.scene import AIR, FLUID, SOLID, IndicatorImage, random_scene, rasterize


def brute_force_poisson(labels):
    """Cell-by-cell assembly straight from the stencil rules."""
    dims = labels.shape
    n = labels.size
    A = np.zeros((n, n))
    strides = [int(np.prod(dims[d + 1:])) for d in range(len(dims))]
    for cell in itertools.product(*[range(d) for d in dims]):
        if labels[cell] != FLUID:
            continue
        row = sum(c * s for c, s in zip(cell, strides))
        for d in range(len(dims)):
            for step in (-1, 1):
                nb = list(cell)
                nb[d] += step
                if not 0 <= nb[d] < dims[d]:
                    continue  # outside the domain is solid
                kind = labels[tuple(nb)]
                if kind == FLUID:
                    A[row, row] += 1
                    A[row, sum(c * s for c, s in zip(nb, strides))] = -1
                elif kind == AIR:
                    A[row, row] += 1
    return A


@pytest.mark.parametrize("seed", range(20))
def test_assembly_matches_oracle_2d(seed):
    labels = np.random.default_rng(seed).choice(3, size=(8, 8), p=[0.6, 0.2, 0.2])
    A = assemble_poisson(IndicatorImage.from_labels(labels))
    assert np.array_equal(A.to_dense(), brute_force_poisson(labels))
    assert A.is_structurally_symmetric()
    D = A.to_dense()
    assert np.array_equal(D, D.T)


@pytest.mark.parametrize("seed", range(5))
def test_assembly_matches_oracle_3d(seed):
    labels = np.random.default_rng(seed).choice(3, size=(4, 5, 3), p=[0.6, 0.2, 0.2])
    A = assemble_poisson(IndicatorImage.from_labels(labels))
    assert np.array_equal(A.to_dense(), brute_force_poisson(labels))


def test_stencil_examples():
    labels = np.zeros((3, 3), dtype=int)
    A = assemble_poisson(IndicatorImage.from_labels(labels)).to_dense()
    centre = 4
    assert A[centre, centre] == 4 and np.sum(A[centre] == -1) == 4
    # neighbours {fluid, fluid, air, solid}
    labels[1, 0] = AIR
    labels[1, 2] = SOLID
    A = assemble_poisson(IndicatorImage.from_labels(labels)).to_dense()
    assert A[centre, centre] == 3 and np.sum(A[centre] == -1) == 2


def test_row_sums_count_air_neighbours():
    labels = np.random.default_rng(3).choice(3, size=(8, 8), p=[0.6, 0.2, 0.2])
    A = assemble_poisson(IndicatorImage.from_labels(labels)).to_dense().reshape(8, 8, 64)
    padded = np.pad(labels, 1, constant_values=SOLID)
    for i, j in zip(*np.nonzero(labels == FLUID)):
        n_air = sum(padded[i + 1 + a, j + 1 + b] == AIR for a, b in ((-1, 0), (1, 0), (0, -1), (0, 1)))
        assert A[i, j].sum() == n_air


def test_isolated_cell_has_empty_row():
    I = IndicatorImage.from_labels(np.zeros((1, 1), dtype=int))
    A = assemble_poisson(I)
    assert A.nnz == 0
    assert is_singular(I)


def test_reduce_dirichlet_side_is_spd():
    labels = np.zeros((4, 5), dtype=int)
    labels[:, -1] = AIR
    A, _, rmap = reduced_system(IndicatorImage.from_labels(labels))
    assert rmap.n_f == 16
    dense_cholesky(A.to_dense())


def test_reduce_all_solid():
    I = IndicatorImage.from_labels(np.full((4, 4), SOLID))
    with pytest.raises(EmptySystemError):
        reduced_system(I)


def test_pure_neumann_box_singular():
    I = IndicatorImage.all_fluid((4, 4))
    A, _, rmap = reduced_system(I)
    assert np.all(A @ np.ones(rmap.n_f) == 0)
    assert is_singular(I)
    assert np.all(floating_components(I) == 0)


def test_floating_components_labels_only_unanchored():
    labels = np.full((6, 6), SOLID)
    labels[0:2, 0:2] = FLUID          # sealed pocket
    labels[4:6, 3:6] = FLUID
    labels[3, 4] = AIR                # anchored region
    I = IndicatorImage.from_labels(labels)
    comps = floating_components(I)
    rmap = ReductionMap.from_image(I)
    pocket = np.isin(rmap.fluid_indices, np.ravel_multi_index(np.nonzero(labels[:2, :2] == FLUID), (6, 6)))
    assert np.all(comps[pocket] == 0) and np.all(comps[~pocket] == -1)


@pytest.mark.parametrize("seed", range(50))
def test_air_touching_scenes_are_spd(seed):
    I = rasterize(random_scene((8, 8), seed))
    if not np.any(I.labels() == FLUID) or is_singular(I):
        pytest.skip("scene has no fluid or a sealed pocket")
    A, _, _ = reduced_system(I)
    dense_cholesky(A.to_dense())


def test_pad_restrict():
    rmap = ReductionMap(3, np.array([0, 2]), np.array([0, -1, 1]))
    np.testing.assert_array_equal(pad_vector([5, 7], rmap), [5, 0, 7])
    np.testing.assert_array_equal(restrict_vector([5, 0, 7], rmap), [5, 7])
    I = rasterize(random_scene((8, 8), 1))
    rmap = ReductionMap.from_image(I)
    v = np.random.default_rng(0).standard_normal(rmap.n_f)
    assert np.array_equal(restrict_vector(pad_vector(v, rmap), rmap), v)
    with pytest.raises(DimensionError):
        pad_vector(np.ones(rmap.n_f + 1), rmap)


def test_rhs_zero_velocity():
    I = rasterize(random_scene((8, 8), 2))
    assert np.all(mac_divergence_rhs(MacVelocity.zeros((8, 8)), I) == 0)


def test_rhs_uniform_field_interior():
    I = IndicatorImage.all_fluid((6, 6))
    vel = MacVelocity(np.full((7, 6), 2.0), np.full((6, 7), -1.0))
    b = mac_divergence_rhs(vel, I).reshape(6, 6)
    assert np.all(b[1:-1, 1:-1] == 0)


def test_rhs_single_face():
    I = IndicatorImage.all_fluid((4, 4))
    vel = MacVelocity.zeros((4, 4), dt=1.0, h=1.0)
    vel.u[2, 1] = 1.0  # face between cells (1, 1) and (2, 1)
    b = mac_divergence_rhs(vel, I).reshape(4, 4)
    assert b[1, 1] == -1 and b[2, 1] == 1
    assert np.count_nonzero(b) == 2


def test_rhs_neumann_values_and_compatibility():
    I = IndicatorImage.all_fluid((4, 4))
    vel = MacVelocity.zeros((4, 4), dt=1.0)
    un, vn = np.zeros_like(vel.u), np.zeros_like(vel.v)
    un[0, :] = 1.0  # inflow through the left wall
    b = mac_divergence_rhs(vel, I, (un, vn))
    assert b.sum() == pytest.approx(4.0)
    rng = np.random.default_rng(0)
    psi = rng.standard_normal((5, 5))
    psi[0] = psi[-1] = psi[:, 0] = psi[:, -1] = 0.0
    free = MacVelocity(psi[:, 1:] - psi[:, :-1], -(psi[1:] - psi[:-1]))
    assert abs(mac_divergence_rhs(free, I).sum()) < 1e-12
    with pytest.raises(DimensionError):
        mac_divergence_rhs(vel, I, (un[:-1], vn))


def test_divergence_matches_rhs():
    I = rasterize(random_scene((8, 8), 5))
    rng = np.random.default_rng(1)
    vel = MacVelocity(rng.standard_normal((9, 8)), rng.standard_normal((8, 9)), dt=0.5, h=2.0)
    b = mac_divergence_rhs(vel, I)
    interior = np.zeros((8, 8), bool)
    interior[1:-1, 1:-1] = I.labels()[1:-1, 1:-1] == FLUID
    # away from solid faces the rhs is -(rho h^2 / dt) * divergence
    lab = np.pad(I.labels(), 1, constant_values=SOLID)
    no_solid = np.ones((8, 8), bool)
    for a, c in ((0, 1), (2, 1), (1, 0), (1, 2)):
        no_solid &= lab[a:a + 8, c:c + 8] != SOLID
    m = interior & no_solid
    np.testing.assert_allclose(b.reshape(8, 8)[m], -(2.0 ** 2 / 0.5) * fluid_divergence(vel, I)[m])


def test_triplet_round_trip(tmp_path):
    A, _, _ = reduced_system(rasterize(random_scene((8, 8), 4)))
    write_triplets(tmp_path / "a.mtx", A)
    first = (tmp_path / "a.mtx").read_text().splitlines()[0]
    assert first == f"{A.n_rows} {A.n_cols} {A.nnz}"
    B = read_triplets(tmp_path / "a.mtx")
    assert np.array_equal(A.to_dense(), B.to_dense())
