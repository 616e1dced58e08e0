import pytest

from slicelab import SliceFunctionSpec, constant_function, load_slice_functions, slice_function
from slicelab.errors import NotLinearError, RecoveryError
from slicelab.recovery import SliceLookupOracle, equivalence_check, recover_linear, recover_nonlinear
from slicelab.slice_function import LINEAR


def test_linear_4_masks_exact():
    got = recover_linear(SliceLookupOracle(slice_function("linear-4")), 39)
    assert got.masks == (0x5B5F575440, 0x6EB5FAA880)


def test_linear_2_mask_exact():
    assert recover_linear(SliceLookupOracle(slice_function("linear-2")), 39).masks == (0x5B5F575440,)


def test_constant_linear_has_no_masks():
    spec = SliceFunctionSpec(LINEAR, ())
    assert recover_linear(SliceLookupOracle(spec), 39).masks == ()


def test_linear_query_budget():
    oracle = SliceLookupOracle(slice_function("linear-8"))
    recover_linear(oracle, 39, spot_checks=64)
    assert oracle.distinct_lookups <= 2 * 39 + 64


def test_nonlinear_rejected_by_linear_recovery():
    with pytest.raises(NotLinearError):
        recover_linear(SliceLookupOracle(slice_function("nonlinear-6")), 39)


@pytest.mark.parametrize("name,ceiling", [("nonlinear-6", 4096), ("nonlinear-10", 4096),
                                          ("nonlinear-12-gen13", 16384), ("nonlinear-12-gen14", 20000)])
def test_nonlinear_round_trip_and_budget(name, ceiling):
    spec = slice_function(name)
    oracle = SliceLookupOracle(spec)
    got = recover_nonlinear(oracle, spec.phys_bits)
    assert got.masks == spec.masks and got.base_sequence == spec.base_sequence
    assert oracle.queries <= ceiling


def test_zero_mask_preserved():
    spec = slice_function("nonlinear-12-gen13")
    assert recover_nonlinear(SliceLookupOracle(spec), spec.phys_bits).masks[7] == 0


def test_linear_via_nonlinear_is_equivalent():
    spec = slice_function("linear-4")
    got = recover_nonlinear(SliceLookupOracle(spec), 39)
    assert got.base_sequence == (0, 1, 2, 3)
    assert equivalence_check(got, spec)


def test_constant_via_nonlinear():
    got = recover_nonlinear(SliceLookupOracle(constant_function()), 39)
    assert equivalence_check(got, constant_function())


def test_length_cap_raises():
    spec = slice_function("nonlinear-6")
    with pytest.raises(RecoveryError):
        recover_nonlinear(SliceLookupOracle(spec), 39, max_length=64)


def test_noisy_oracle_with_votes():
    spec = slice_function("linear-4")
    got = recover_linear(SliceLookupOracle(spec, error_rate=0.05, votes=9, seed=3), 39)
    assert got.masks == spec.masks


def test_equivalence_check_detects_flipped_bit():
    spec = slice_function("linear-4")
    other = SliceFunctionSpec(LINEAR, (spec.masks[0] ^ (1 << 20), spec.masks[1]))
    assert equivalence_check(spec, spec)
    assert not equivalence_check(spec, other)
    assert not equivalence_check(spec, SliceFunctionSpec(LINEAR, spec.masks, phys_bits=40))


def test_all_shipped_round_trip():
    for spec in load_slice_functions().values():
        oracle = SliceLookupOracle(spec)
        got = (recover_linear if spec.is_linear else recover_nonlinear)(oracle, spec.phys_bits)
        assert equivalence_check(got, spec)
