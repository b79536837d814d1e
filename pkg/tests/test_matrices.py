from pathlib import Path

import numpy as np
import pytest

from poolscreen.matrices import (
    BUILTIN_PROFILES,
    KirkmanParams,
    MatrixConstructionError,
    MatrixParseError,
    SensingMatrix,
    UnsupportedOrderError,
    WeightProfile,
    _gale_ryser_feasible,
    builtin_matrix,
    construct_kirkman,
    load_matrix,
    profile_sample,
    save_matrix,
    verify_kirkman,
    verify_profile,
)

EXPECTED_ONES = {
    (5, 31): 75,
    (6, 31): 108,
    (7, 31): 108,
    (8, 31): 108,
    (9, 62): 217,
    (10, 62): 217,
    (11, 62): 217,
}


# ------------------------------------------------------------- builtins


@pytest.mark.parametrize("key", sorted(BUILTIN_PROFILES))
def test_builtin_matrix_matches_profile_and_total(key):
    mat = builtin_matrix(*key)
    assert (mat.m, mat.n) == key
    assert mat.total_ones == EXPECTED_ONES[key]
    ok, report = verify_profile(mat, BUILTIN_PROFILES[key])
    assert ok, report


def test_builtin_matrix_unknown_size():
    with pytest.raises(ValueError):
        builtin_matrix(12, 31)


def test_builtin_profile_handshakes():
    for profile in BUILTIN_PROFILES.values():
        profile.validate()  # no exception: row and column ones agree


# ------------------------------------------------------------- sampling


def test_profile_sample_all_ones_unique():
    profile = WeightProfile(
        col_weights={3: 3}, row_weights={3: 3}, distinct_cols=False, distinct_rows=False
    )
    mat = profile_sample(profile, 3, 3, np.random.default_rng(0))
    assert np.all(mat.entries == 1)


def test_profile_sample_rejects_handshake_violation():
    profile = WeightProfile(col_weights={2: 3}, row_weights={1: 3})
    with pytest.raises(ValueError):
        profile_sample(profile, 3, 3, np.random.default_rng(0))


def test_profile_sample_rejects_wrong_shape():
    profile = BUILTIN_PROFILES[(6, 31)]
    with pytest.raises(ValueError):
        profile_sample(profile, 7, 31, np.random.default_rng(0))


def test_profile_sample_infeasible_distinctness_gives_up():
    # degree-feasible, but two weight-2 columns over 2 rows must coincide
    profile = WeightProfile(col_weights={2: 2}, row_weights={2: 2})
    with pytest.raises(MatrixConstructionError):
        profile_sample(profile, 2, 2, np.random.default_rng(0), max_attempts=50)


@pytest.mark.parametrize("key", sorted(BUILTIN_PROFILES))
def test_profile_sample_always_satisfies_profile(key):
    # the sampler must never hand back a matrix violating its own profile
    profile = BUILTIN_PROFILES[key]
    rng = np.random.default_rng(a_fixed := 2468)
    for _ in range(1000):
        mat = profile_sample(profile, key[0], key[1], rng)
        ok, report = verify_profile(mat, profile)
        assert ok, report


def test_profile_sample_varies_with_seed():
    profile = BUILTIN_PROFILES[(6, 31)]
    a = profile_sample(profile, 6, 31, np.random.default_rng(1))
    b = profile_sample(profile, 6, 31, np.random.default_rng(2))
    assert not np.array_equal(a.entries, b.entries)


def test_verify_profile_detects_violations():
    profile = BUILTIN_PROFILES[(6, 31)]
    mat = builtin_matrix(6, 31)
    tampered = mat.entries.copy()
    tampered[0, 0] ^= 1
    ok, report = verify_profile(SensingMatrix(tampered), profile)
    assert not ok and "weight" in report

    dup = mat.entries.copy()
    dup[:, 1] = dup[:, 0]
    ok, report = verify_profile(SensingMatrix(dup), profile)
    assert not ok


def test_gale_ryser_small_cases():
    assert _gale_ryser_feasible(np.array([2, 2, 2]), {3: 2})
    # a row demanding 4 ones from 3 unit-weight columns is hopeless
    assert not _gale_ryser_feasible(np.array([4, 1, 1]), {2: 3})
    # sum mismatch
    assert not _gale_ryser_feasible(np.array([1, 1]), {3: 1})


def test_sensing_matrix_rejects_non_binary():
    with pytest.raises(ValueError):
        SensingMatrix(np.array([[0, 2], [1, 0]]))


# ------------------------------------------------------------- kirkman


def test_kirkman_params_validation():
    with pytest.raises(ValueError):
        KirkmanParams(10, 1)
    with pytest.raises(ValueError):
        KirkmanParams(9, 5)  # at most (m-1)/2 classes
    with pytest.raises(ValueError):
        KirkmanParams(9, 0)


@pytest.mark.parametrize("m,c", [(3, 1), (9, 1), (9, 4), (15, 2)])
def test_construct_kirkman_passes_verification(m, c):
    params = KirkmanParams(m, c)
    mat = construct_kirkman(params, np.random.default_rng(11))
    assert (mat.m, mat.n) == (m, (m // 3) * c)
    ok, report = verify_kirkman(mat, params)
    assert ok, report


def test_construct_kirkman_unsupported_order():
    with pytest.raises(UnsupportedOrderError):
        construct_kirkman(KirkmanParams(21, 1), np.random.default_rng(0))


def test_verify_kirkman_pair_violation():
    # both classes partition the rows, but two columns meet in two rows
    cols = [(0, 1, 2), (3, 4, 5), (0, 1, 3), (2, 4, 5)]
    entries = np.zeros((6, 4), dtype=np.uint8)
    for j, tri in enumerate(cols):
        entries[list(tri), j] = 1
    ok, report = verify_kirkman(SensingMatrix(entries), KirkmanParams(6, 2))
    assert not ok and "share" in report


def test_verify_kirkman_block_violation():
    cols = [(0, 1, 2), (2, 3, 4)]  # row 2 twice, row 5 never
    entries = np.zeros((6, 2), dtype=np.uint8)
    for j, tri in enumerate(cols):
        entries[list(tri), j] = 1
    ok, report = verify_kirkman(SensingMatrix(entries), KirkmanParams(6, 1))
    assert not ok and "class 0" in report


def test_verify_kirkman_shape_mismatch():
    mat = construct_kirkman(KirkmanParams(9, 2), np.random.default_rng(0))
    ok, report = verify_kirkman(mat, KirkmanParams(9, 3))
    assert not ok and "expected" in report


def test_kirkman_single_bit_flips_always_detected():
    params = KirkmanParams(9, 4)
    mat = construct_kirkman(params, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    for _ in range(200):
        i = int(rng.integers(mat.m))
        j = int(rng.integers(mat.n))
        tampered = mat.entries.copy()
        tampered[i, j] ^= 1
        ok, _ = verify_kirkman(SensingMatrix(tampered), params)
        assert not ok


EXTERNAL_DESIGN = Path(__file__).parent / "data" / "kirkman_93x961.txt"


@pytest.mark.skipif(not EXTERNAL_DESIGN.exists(), reason="external 93x961 design file not present")
def test_external_large_kirkman_design():
    mat = load_matrix(EXTERNAL_DESIGN)
    ok, report = verify_kirkman(mat, KirkmanParams(93, 31))
    assert ok, report


# ------------------------------------------------------------- file format


def test_save_load_round_trip(tmp_path):
    mat = builtin_matrix(7, 31)
    path = tmp_path / "design.txt"
    save_matrix(mat, path)
    again = load_matrix(path)
    assert np.array_equal(mat.entries, again.entries)
    # byte-exact on re-save
    text = path.read_text()
    save_matrix(again, path)
    assert path.read_text() == text
    assert text.endswith("\n") and not any(line != line.rstrip() for line in text.split("\n"))


@pytest.mark.parametrize(
    "content,line",
    [
        ("2 2\n1 0\n", 3),  # missing a row
        ("2 2\n1 0\n0 1\n1 1\n", 4),  # extra row
        ("2  2\n1 0\n0 1\n", 1),  # double space in header
        ("2 x\n1 0\n0 1\n", 1),  # non-numeric header
        ("2 2\n1 0\n0 2\n", 3),  # entry out of alphabet
        ("2 2\n1 0\n0  1\n", 3),  # double space between entries
        ("2 2\n10\n0 1\n", 2),  # fused tokens
        ("2 2\n1 0 \n0 1\n", 2),  # trailing space
    ],
)
def test_load_matrix_rejects_malformed(tmp_path, content, line):
    path = tmp_path / "bad.txt"
    path.write_text(content)
    with pytest.raises(MatrixParseError) as err:
        load_matrix(path)
    assert err.value.line == line


def test_load_matrix_requires_final_newline(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\n1 0\n0 1")
    with pytest.raises(MatrixParseError):
        load_matrix(path)


def test_load_matrix_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.raises(MatrixParseError):
        load_matrix(path)
