import pytest

from bellbox.cli import property_checks as checks
from bellbox.cli.selftest import SelfTestBuilder, default_suite


def test_default_suite_registers_every_property():
    names = [c.name for c in default_suite().get_checks()]
    assert len(names) == len(set(names))
    assert {
        "tensor-file-round-trip",
        "hadamard-properties",
        "phi-properties",
        "zeta-methods-agree",
        "code-range",
        "entropy-properties",
        "packed-layer-forward",
        "bbq-fast-exact-seed",
        "training-determinism",
        "vision-gamma",
    } <= set(names)


def test_skip_slow_leaves_out_long_checks():
    names = {c.name for c in default_suite(skip_slow=True).get_checks()}
    assert "zeta-reproduction" not in names
    assert "training-entropy" not in names
    assert "phi-properties" in names


def test_zeta_reproduction_uses_ten_million_samples():
    (check,) = default_suite(only=["zeta-reproduction"]).get_checks()
    assert check.slow
    assert checks.zeta_reproduction.__defaults__[0] == 10**7


@pytest.mark.parametrize(
    "check",
    [
        checks.tensor_file_round_trip,
        checks.hadamard_properties,
        checks.phi_properties,
        checks.zeta_methods_agree,
        checks.code_range,
        checks.bbq_fast_exact_seed,
        checks.entropy_properties,
        checks.training_determinism,
        checks.vision_gamma,
        checks.packed_layer_forward,
    ],
)
def test_property_holds(check):
    result = check()
    assert result.passed, result.detail


def test_failed_check_fails_the_report():
    builder = SelfTestBuilder()
    builder.add_check("always-fails", lambda: checks.CheckResult(False, "no"))
    report = builder.build()
    assert not report.passed
    assert report.lines()[0].startswith("FAIL always-fails: no")
