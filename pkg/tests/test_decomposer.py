import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qutritgate.core import TWO_PI, ValidationError, expm_skew, unitary_distance, walsh_hadamard
from qutritgate.decomposer import (
    TABLE_S1,
    DecompositionSearchConfig,
    GateDecomposition,
    GeneratorRejected,
    extract_offdiagonal_generator,
    match_reference,
    pulse_area_targets,
    reference_decomposition,
    search_decompositions,
    select_decomposition,
)


@pytest.fixture(scope="module")
def wh_decompositions():
    return search_decompositions(walsh_hadamard())


def test_table_rows_are_decompositions_of_walsh_hadamard():
    # the tabulated values are rounded to four decimals
    for row in TABLE_S1:
        assert unitary_distance(row.unitary(), walsh_hadamard()) < 1e-3


def test_search_reproduces_every_table_row(wh_decompositions):
    assert len(wh_decompositions) == 5
    for row in TABLE_S1:
        gaps = [match_reference(d, row) for d in wh_decompositions]
        assert min(gaps) < 1e-3


def test_search_results_are_valid_and_sorted(wh_decompositions):
    wh = walsh_hadamard()
    for d in wh_decompositions:
        assert unitary_distance(d.unitary(), wh) <= 1e-6
        assert d.residual <= 1e-6
        g = 1j * np.asarray(_log(d.u_d().conj().T @ wh))
        assert np.max(np.abs(np.diag(g))) < 1e-9
    m02 = [abs(d.m02) for d in wh_decompositions]
    assert m02 == sorted(m02)


def _log(u):
    from qutritgate.core import logm_unitary

    return logm_unitary(u)


def test_search_is_deterministic(wh_decompositions):
    again = search_decompositions(walsh_hadamard())
    assert [d.params().tolist() for d in again] == [d.params().tolist() for d in wh_decompositions]


def test_selection_picks_reference_row(wh_decompositions):
    chosen = select_decomposition(wh_decompositions)
    assert match_reference(chosen, reference_decomposition()) < 1e-3
    assert chosen.m01 == pytest.approx(0.3491 + 0.6046j, abs=1e-3)
    assert chosen.m12 == pytest.approx(-0.6981, abs=1e-3)
    assert chosen.phases == pytest.approx([6.1086, 4.0143, 4.0143], abs=1e-3)


def test_selection_simple_cases():
    assert select_decomposition([TABLE_S1[0]]) is TABLE_S1[0]
    # |m02| = 0.9957 (third row) against 0.6981 (last row)
    assert select_decomposition([TABLE_S1[2], TABLE_S1[4]]) is TABLE_S1[4]
    with pytest.raises(ValueError):
        select_decomposition([])


def test_identity_target_includes_trivial_decomposition():
    found = search_decompositions(np.eye(3))
    assert any(np.max(np.abs(d.params())) < 1e-8 for d in found)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 6.0), st.floats(0.1, 6.0))
def test_diagonal_target_has_zero_generator_decomposition(alpha, beta):
    target = np.diag([1, np.exp(1j * alpha), np.exp(1j * beta)])
    found = search_decompositions(target, DecompositionSearchConfig(grid_points=16))
    best = min(found, key=lambda d: abs(d.m01) + abs(d.m02) + abs(d.m12))
    assert abs(best.m01) + abs(best.m02) + abs(best.m12) < 1e-8
    expected = np.mod([0.0, -alpha, -beta], TWO_PI)
    gap = np.abs(best.phases - expected)
    assert np.all(np.minimum(gap, TWO_PI - gap) < 1e-6)


def test_coarse_grid_finds_fewer_rows():
    assert len(search_decompositions(walsh_hadamard(), DecompositionSearchConfig(grid_points=8))) < 5


def test_search_rejects_bad_input():
    with pytest.raises(ValidationError):
        search_decompositions(np.ones((3, 3)))
    with pytest.raises(ValueError):
        DecompositionSearchConfig(grid_points=4)


def test_extract_generator_cases():
    assert np.allclose(extract_offdiagonal_generator(np.eye(3)), 0)
    g_o = reference_decomposition().offdiagonal_generator()
    assert np.allclose(extract_offdiagonal_generator(expm_skew(g_o)), g_o, atol=1e-9)
    with pytest.raises(GeneratorRejected) as exc:
        extract_offdiagonal_generator(np.diag([1, np.exp(1j * np.pi / 3), 1]))
    assert exc.value.max_diagonal == pytest.approx(np.pi / 3)


def test_extract_flags_branch_ambiguity():
    with pytest.raises(GeneratorRejected) as exc:
        extract_offdiagonal_generator(np.diag([1, -1, -1]).astype(complex))
    assert exc.value.degenerate


def test_pulse_area_targets():
    rates = pulse_area_targets(reference_decomposition(), 35e-9)
    values = [r for r, _ in rates.values()]
    assert max(values) - min(values) < 1e-4 * max(values)
    # 2 * 0.6981 / 35 ns is about 2 pi * 6.35 MHz
    assert values[0] / TWO_PI / 1e6 == pytest.approx(6.35, abs=0.01)
    doubled = pulse_area_targets(reference_decomposition(), 70e-9)
    assert doubled[(0, 1)][0] == pytest.approx(rates[(0, 1)][0] / 2)
    zero = GateDecomposition(0, 0, 0, 0, 0, 0)
    assert all(r == 0 for r, _ in pulse_area_targets(zero, 35e-9).values())
    with pytest.raises(ValueError):
        pulse_area_targets(zero, 0.0)
