import pytest

from vquant.codec import QuantConfig
from vquant.cost import checkpoint_fraction, memory_fraction, round_half_up
from vquant.exceptions import ParameterError


def test_three_bit_with_mask():
    frac = memory_fraction(3, 0.02, "vquant", with_mask=True)
    assert frac == pytest.approx(0.165, abs=1e-12)
    assert 1 / frac == pytest.approx(6.0606, abs=1e-4)


def test_three_bit_rv():
    frac = memory_fraction(3, 0.02, "rvquant")
    assert frac == pytest.approx(0.13375, abs=1e-12)
    assert 1 / frac == pytest.approx(7.4766, abs=1e-4)


def test_full_precision_is_one():
    assert memory_fraction(32, 0.0) == 1.0


def test_mask_ignored_for_rv():
    assert memory_fraction(3, 0.02, "rvquant", with_mask=True) == memory_fraction(3, 0.02, "rvquant")


def test_sixteen_bit_outliers_halve_the_outlier_term():
    assert memory_fraction(4, 0.01, outlier_precision=16) == pytest.approx(4 / 32 + 0.01)


def test_config_method_agrees():
    cfg = QuantConfig(3, 0.02, "vquant", "nonnegative")
    assert cfg.memory_fraction(with_mask=True) == memory_fraction(3, 0.02, "vquant", True)


@pytest.mark.parametrize("args", [(0, 0.0), (3, -0.1), (3, 1.0), (3, 0.1, "x"), (3, 0.1, "vquant", False, 8)])
def test_bad_arguments(args):
    with pytest.raises(ParameterError):
        memory_fraction(*args)


def test_round_half_up():
    assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]


@pytest.mark.parametrize(
    "sizes,expected",
    [([7], 1.0), ([1] * 4, 1.0), ([1] * 100, 0.20), ([0, 0], 1.0), ([1] * 9, 6 / 9)],
)
def test_checkpoint_fraction(sizes, expected):
    assert checkpoint_fraction(sizes) == pytest.approx(expected)


def test_checkpoint_shrinks_with_depth():
    fracs = [checkpoint_fraction([1] * n) for n in (16, 64, 256, 1024)]
    assert fracs == sorted(fracs, reverse=True)


def test_checkpoint_bad_input():
    with pytest.raises(ParameterError):
        checkpoint_fraction([])
    with pytest.raises(ParameterError):
        checkpoint_fraction([1, -1])
