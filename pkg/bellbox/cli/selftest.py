import json
import logging
from typing import Callable, Optional

from attr import frozen

from bellbox.cli import property_checks as checks
from bellbox.cli.property_checks import CheckResult, timed

logger = logging.getLogger(__name__)


@frozen
class Check:
    name: str
    fn: Callable[..., CheckResult]
    args: tuple = ()
    slow: bool = False


@frozen
class SelfTestReport:
    results: tuple[tuple[str, CheckResult], ...]

    @property
    def passed(self) -> bool:
        return all(result.passed for _, result in self.results)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if result.passed else 'FAIL'} {name}: {result.detail} ({result.seconds:.2f}s)"
            for name, result in self.results
        ]


class SelfTestBuilder:
    """
    A builder class that collects property checks and runs them as one selftest.

    :param skip_slow: Leave out the checks registered as slow. Defaults to False.
    :param only: Run only the checks with these names. Defaults to every registered check.

    Functions:
    add_check: Adds any callable returning a `CheckResult`.
    add_ito_checks: Adds the equal-frequency check for each precision.
    get_checks: Returns the checks that will run.
    build: Runs the checks and returns the report.

    Example:
    ```python

    builder = SelfTestBuilder(skip_slow=True)
    builder.add_check("inv-cdf-table", inv_cdf_table)
    builder.add_ito_checks(bits=(2, 3))

    report = builder.build()
    """

    def __init__(self, skip_slow: bool = False, only: Optional[list[str]] = None) -> None:
        self.checks: list[Check] = []
        self.skip_slow = skip_slow
        self.only = set(only) if only else None

    def add_check(
        self, name: str, fn: Callable[..., CheckResult], *args, slow: bool = False
    ) -> None:
        """
        Adds a check.

        :param name: The name printed next to PASS/FAIL.
        :param fn: The check; called with ``args``.
        :param slow: Whether the check is skipped by ``skip_slow``. Defaults to False.
        """
        self.checks.append(Check(name, fn, tuple(args), slow))

    def add_ito_checks(self, bits: tuple[int, ...] = (1, 2, 3, 4)) -> None:
        """
        Adds one equal-frequency check per precision.

        :param bits: The precisions to check. Defaults to 1 to 4 bits.
        """
        for b in bits:
            self.add_check(f"ito-frequencies-b{b}", checks.ito_frequencies, b)

    def get_checks(self) -> list[Check]:
        """
        Returns the checks that build will run, after the slow and name filters.
        """
        return [
            c
            for c in self.checks
            if not (self.skip_slow and c.slow) and (self.only is None or c.name in self.only)
        ]

    def build(self) -> SelfTestReport:
        """
        Runs every selected check in registration order.
        """
        results = []
        for check in self.get_checks():
            result = timed(check.fn, *check.args)
            logger.info(
                json.dumps(
                    {
                        "event": "selftest_check",
                        "check": check.name,
                        "passed": result.passed,
                        "seconds": round(result.seconds, 3),
                    }
                )
            )
            results.append((check.name, result))
        return SelfTestReport(tuple(results))


def default_suite(skip_slow: bool = False, only: Optional[list[str]] = None) -> SelfTestBuilder:
    builder = SelfTestBuilder(skip_slow=skip_slow, only=only)
    builder.add_check("zeta-reproduction", checks.zeta_reproduction, slow=True)
    builder.add_check("tensor-file-round-trip", checks.tensor_file_round_trip)
    builder.add_check("hadamard-properties", checks.hadamard_properties)
    builder.add_check("phi-properties", checks.phi_properties)
    builder.add_check("zeta-methods-agree", checks.zeta_methods_agree)
    builder.add_check("inv-cdf-table", checks.inv_cdf_table)
    builder.add_check("code-range", checks.code_range)
    builder.add_ito_checks()
    builder.add_check("entropy-ordering", checks.entropy_ordering)
    builder.add_check("entropy-ceiling", checks.entropy_ceiling)
    builder.add_check("entropy-properties", checks.entropy_properties)
    builder.add_check("binsearch-equivalence", checks.binsearch_equivalence)
    builder.add_check("nibble-bijection", checks.nibble_bijection)
    builder.add_check("matmul-exactness", checks.matmul_exactness)
    builder.add_check("packed-layer-forward", checks.packed_layer_forward)
    builder.add_check("bbq-gradient", checks.bbq_gradient)
    builder.add_check("model-gradient", checks.model_gradient)
    builder.add_check("bbq-fast-exact-seed", checks.bbq_fast_exact_seed)
    builder.add_check("bbq-fast-agreement", checks.bbq_fast_agreement)
    builder.add_check("magnitude-preservation", checks.magnitude_preservation)
    builder.add_check("quest-contraction", checks.quest_contraction)
    builder.add_check("codebook-ito", checks.codebook_ito)
    builder.add_check("training-determinism", checks.training_determinism)
    builder.add_check("vision-gamma", checks.vision_gamma)
    builder.add_check("training-entropy", checks.training_entropy, slow=True)
    return builder
