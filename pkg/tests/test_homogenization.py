"""Periodic voxel homogenization: element math, solver, effective props."""
import numpy as np
import pytest

from microcell import (ShapeParams, VoxelGrid, effective_properties, hex8_stiffness,
                       homogenize, homogenize_grid, isotropic_constitutive,
                       lame_parameters, voxelize)
from microcell.errors import (DegenerateCellError, EmptyStructureError,
                              InvalidMaterialError)
from microcell.geometry import validity_check
from microcell.homogenization import (HEX_CORNERS, PeriodicCellSystem,
                                      UnitCellHomogenizer, assemble_loads,
                                      homogenized_constitutive, periodic_edof,
                                      solve_case, unit_strain_displacements)

P = ShapeParams(1, 0, 0, 0, 0, 0)


def base_C():
    lam, mu = lame_parameters(200.0, 0.3)
    return isotropic_constitutive(lam, mu)


def dense_homogenize(occ, E=200.0, nu=0.3):
    """Independent oracle: explicit dense assembly and LU solve."""
    occ = np.asarray(occ, dtype=bool)
    n = occ.shape[0]
    edge = 1.0 / n
    lam, mu = lame_parameters(E, nu)
    C = isotropic_constitutive(lam, mu)
    ke, fe = hex8_stiffness(C, edge)
    chi0 = unit_strain_displacements(edge)
    edof = periodic_edof(n)[occ.ravel(order="F")]
    ndof = 3 * n ** 3
    K = np.zeros((ndof, ndof))
    F = np.zeros((ndof, 6))
    for row in edof:
        K[np.ix_(row, row)] += ke
        F[row] += fe
    free = np.unique(edof.ravel())[3:]
    X = np.zeros((ndof, 6))
    X[free] = np.linalg.solve(K[np.ix_(free, free)], F[free])
    D = chi0[None] - X[edof]
    KD = np.einsum("ab,ebj->eaj", ke, D)
    return np.einsum("eai,eaj->ij", D, KD)  # |V| = 1


def random_connected(rng, n, p=0.7):
    from tests.test_geometry import flood_fill_components

    while True:
        occ = rng.random((n, n, n)) < p
        if occ.any() and flood_fill_components(occ) == 1:
            return occ


class TestLame:
    def test_reference_steel(self):
        lam, mu = lame_parameters(200.0, 0.3)
        assert round(lam, 1) == 115.4
        assert round(mu, 1) == 76.9

    def test_zero_poisson(self):
        assert lame_parameters(1.0, 0.0) == (0.0, 0.5)

    def test_derived_case(self):
        lam, mu = lame_parameters(2.6, 0.3)
        assert lam == pytest.approx(1.5, rel=1e-12)
        assert mu == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("E,nu", [(200, 0.5), (200, -1.0), (0, 0.3), (-5, 0.3)])
    def test_invalid_material(self, E, nu):
        with pytest.raises(InvalidMaterialError):
            lame_parameters(E, nu)


class TestConstitutive:
    def test_pure_shear(self):
        np.testing.assert_allclose(isotropic_constitutive(0.0, 1.0),
                                   np.diag([2, 2, 2, 1, 1, 1]))

    def test_base_material_entries(self):
        lam, mu = lame_parameters(200.0, 0.3)
        C = isotropic_constitutive(lam, mu)
        assert C[0, 0] == pytest.approx(269.2, abs=0.05)  # lam + 2 mu
        assert C[0, 1] == pytest.approx(115.4, abs=0.05)
        assert C[3, 3] == pytest.approx(76.9, abs=0.05)

    def test_symmetric(self):
        C = isotropic_constitutive(115.4, 76.9)
        np.testing.assert_array_equal(C, C.T)

    def test_invalid(self):
        with pytest.raises(InvalidMaterialError):
            isotropic_constitutive(0.0, -1.0)


class TestHex8:
    def test_symmetry(self):
        k, _ = hex8_stiffness(base_C(), 0.025)
        assert np.abs(k - k.T).max() <= 1e-10 * np.abs(k).max()

    def test_rigid_body_modes(self):
        k, _ = hex8_stiffness(base_C(), 0.025)
        xyz = (HEX_CORNERS + 1.0) * 0.0125
        modes = []
        for c in range(3):  # translations
            m = np.zeros(24)
            m[c::3] = 1.0
            modes.append(m)
        for axis in range(3):  # rotations about the element center
            omega = np.zeros(3)
            omega[axis] = 1.0
            centered = xyz - xyz.mean(axis=0)
            modes.append(np.cross(omega, centered).ravel())
        for m in modes:
            assert np.abs(k @ m).max() <= 1e-8 * np.abs(k).max()

    def test_translation_row_sums(self):
        # explicit rigid-translation product: row sums over each
        # direction's DOFs vanish
        k, _ = hex8_stiffness(base_C(), 1.0)
        for c in range(3):
            assert np.abs(k[:, c::3].sum(axis=1)).max() <= 1e-10 * np.abs(k).max()

    def test_unit_strain_consistency(self):
        # uniform strain displacement must reproduce the load columns
        k, f = hex8_stiffness(base_C(), 0.1)
        chi0 = unit_strain_displacements(0.1)
        np.testing.assert_allclose(k @ chi0, f, atol=1e-10 * np.abs(f).max())


class TestLoads:
    def test_all_void_errors(self):
        grid = VoxelGrid(3, np.zeros((3, 3, 3), dtype=bool))
        with pytest.raises(EmptyStructureError):
            assemble_loads(grid, base_C(), 1 / 3)

    def test_single_voxel_support(self):
        occ = np.zeros((3, 3, 3), dtype=bool)
        occ[1, 1, 1] = True
        grid = VoxelGrid(3, occ)
        F = assemble_loads(grid, base_C(), 1 / 3)
        expected_dofs = set(periodic_edof(3)[occ.ravel(order="F")].ravel().tolist())
        nonzero = set(np.nonzero(np.abs(F).sum(axis=1))[0].tolist())
        assert nonzero <= expected_dofs

    def test_all_solid_self_equilibrated(self):
        grid = VoxelGrid(4, np.ones((4, 4, 4), dtype=bool))
        F = assemble_loads(grid, base_C(), 0.25)
        # direct summation oracle: per direction and load case
        for c in range(3):
            np.testing.assert_allclose(F[c::3].sum(axis=0), 0.0, atol=1e-12)


class TestSolve:
    def test_zero_load(self):
        grid = voxelize(P, 6)
        chi = solve_case(grid, base_C(), np.zeros(3 * 6 ** 3))
        assert np.all(chi == 0.0)

    def test_homogeneous_no_fluctuation(self):
        grid = VoxelGrid(4, np.ones((4, 4, 4), dtype=bool))
        system = PeriodicCellSystem(grid, base_C())
        chi = system.solve(system.loads())
        assert np.abs(chi).max() <= 1e-12

    def test_small_instance_matches_dense(self):
        rng = np.random.default_rng(11)
        for _ in range(4):
            n = int(rng.integers(2, 4))
            occ = random_connected(rng, n)
            grid = VoxelGrid(n, occ)
            system = PeriodicCellSystem(grid, base_C())
            chi = system.solve(system.loads(), tol=1e-10)
            C_pcg = homogenized_constitutive(grid, system.k_e, chi, system.edge,
                                             system.edof)
            C_dense = dense_homogenize(occ)
            scale = np.abs(C_dense).max()
            assert np.abs(C_pcg - C_dense).max() <= 1e-6 * scale

    def test_exhaustive_2cubed_patterns(self):
        """Every connected 2^3 occupancy pattern agrees with the dense oracle."""
        from tests.test_geometry import flood_fill_components

        checked = 0
        for bits in range(1, 256):
            occ = np.array([(bits >> v) & 1 for v in range(8)],
                           dtype=bool).reshape(2, 2, 2)
            if flood_fill_components(occ) != 1:
                continue
            grid = VoxelGrid(2, occ)
            system = PeriodicCellSystem(grid, base_C())
            chi = system.solve(system.loads(), tol=1e-10)
            C_pcg = homogenized_constitutive(grid, system.k_e, chi, system.edge,
                                             system.edof)
            C_dense = dense_homogenize(occ)
            # non-percolating patterns (a lone voxel) have C = 0 exactly;
            # keep a small absolute floor in GPa for those
            scale = max(np.abs(C_dense).max(), 1e-3)
            assert np.abs(C_pcg - C_dense).max() <= 1e-6 * scale
            checked += 1
        assert checked == 167  # connected patterns among the 255 non-empty ones


class TestHomogenizedMatrix:
    def test_all_solid_reproduces_base(self):
        grid = VoxelGrid(5, np.ones((5, 5, 5), dtype=bool))
        props = homogenize_grid(grid)
        C0 = base_C()
        # 0.5% per entry; structural zeros judged against the matrix scale
        np.testing.assert_allclose(props.C_H, C0, rtol=5e-3,
                                   atol=5e-3 * np.abs(C0).max())
        assert props.E_H == pytest.approx(200.0, rel=5e-3)
        assert props.nu_H == pytest.approx(0.3, abs=1.5e-3)

    def test_all_void_zero_by_convention(self):
        grid = VoxelGrid(3, np.zeros((3, 3, 3), dtype=bool))
        k, _ = hex8_stiffness(base_C(), 1 / 3)
        C = homogenized_constitutive(grid, k, np.zeros((3 * 27, 6)), 1 / 3)
        np.testing.assert_array_equal(C, np.zeros((6, 6)))

    def test_symmetric_psd(self):
        grid = voxelize(ShapeParams(0.3, 0.3, 0.4, 0.1, -0.1, 0.2), 10)
        props = homogenize_grid(grid, check_validity=False)
        C = props.C_H
        assert np.abs(C - C.T).max() <= 1e-8 * np.abs(C).max()
        eigs = np.linalg.eigvalsh(C)
        assert eigs.min() >= -1e-8 * np.trace(C)


class TestEffectiveProperties:
    def test_base_material(self):
        E, nu = effective_properties(base_C())
        assert E == pytest.approx(200.0, rel=5e-3)
        assert nu == pytest.approx(0.3, abs=1.5e-3)

    def test_diagonal_compliance(self):
        E, nu = effective_properties(np.diag([1, 1, 1, 0.5, 0.5, 0.5]))
        assert E == pytest.approx(1.0)
        assert nu == pytest.approx(0.0, abs=1e-15)

    def test_singular_raises(self):
        with pytest.raises(DegenerateCellError):
            effective_properties(np.zeros((6, 6)))


class TestHomogenizePipeline:
    def test_stiffness_monotone_in_offset(self):
        # nested solids: {f >= 0} subset of {f + 0.4 >= 0}
        e_thin = homogenize(P, resolution=10).E_H
        e_thick = homogenize(ShapeParams(1, 0, 0, 0.4, 0, 0), resolution=10).E_H
        assert e_thick > e_thin

    def test_pure_diamond_in_training_envelope(self):
        props = homogenize(ShapeParams(0, 1, 0, 0, 0, 0), resolution=16)
        assert 9.10 <= props.E_H <= 128.11

    def test_degenerate_cell_raises(self):
        occ = np.ones((5, 5, 5), dtype=bool)
        occ[1:4, 1:4, 1:4] = False
        occ[2, 2, 2] = True
        assert not validity_check(VoxelGrid(5, occ))
        with pytest.raises(DegenerateCellError):
            homogenize_grid(VoxelGrid(5, occ))

    @pytest.mark.parametrize("alphas", [(1, 0, 0), (0, 1, 0), (0, 0, 1)],
                             ids=["P", "D", "FRD"])
    def test_cubic_symmetry_of_pure_cells(self, alphas):
        props = homogenize(ShapeParams(*alphas, 0, 0, 0), resolution=16)
        C = props.C_H
        assert abs(C[0, 0] - C[1, 1]) <= 0.01 * C[0, 0]
        assert abs(C[0, 0] - C[2, 2]) <= 0.01 * C[0, 0]
        assert abs(C[3, 3] - C[4, 4]) <= 0.01 * C[3, 3]
        assert abs(C[3, 3] - C[5, 5]) <= 0.01 * C[3, 3]

    def test_monotone_in_added_solid(self):
        rng = np.random.default_rng(12)
        base = voxelize(P, 8).occupancy
        for _ in range(3):
            grown = base.copy()
            void = np.argwhere(~grown)
            pick = void[rng.integers(0, len(void), size=40)]
            grown[pick[:, 0], pick[:, 1], pick[:, 2]] = True
            e_base = homogenize_grid(VoxelGrid(8, base), check_validity=False).E_H
            e_grown = homogenize_grid(VoxelGrid(8, grown), check_validity=False).E_H
            assert e_grown >= e_base - 1e-9


class TestTransformer:
    def test_batch_transform(self):
        tr = UnitCellHomogenizer(resolution=8)
        out = tr.fit_transform(np.array([P.to_array(),
                                         ShapeParams(0, 1, 0, 0, 0, 0).to_array()]))
        assert out.shape == (2, 3)
        assert np.all(out[:, 0] > 0)
        assert np.all((out[:, 2] > 0) & (out[:, 2] < 1))

    def test_get_params_roundtrip(self):
        tr = UnitCellHomogenizer(resolution=12)
        assert UnitCellHomogenizer(**tr.get_params()).resolution == 12
