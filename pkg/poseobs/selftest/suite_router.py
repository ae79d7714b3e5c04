"""
Suite Router - Routes property names to the numerical suites
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from estimators.observer import Innovation, InnovationFn, innovation
from selftest import property_suites

logger = logging.getLogger(__name__)

FAULTS = ("none", "innovation-sign")


def _sign_flipped_innovation(Xhat, m) -> Innovation:
    return Innovation(-innovation(Xhat, m).value)


def innovation_for_fault(fault: str) -> InnovationFn:
    """Innovation function with an optional injected fault."""
    if fault == "none":
        return innovation
    if fault == "innovation-sign":
        return _sign_flipped_innovation
    raise ValueError(f"Unknown fault '{fault}', expected one of {', '.join(FAULTS)}")


class SuiteRouter:
    """
    Runs the property suites by name and collects their results
    """

    def __init__(
        self,
        seed: int = 0,
        samples: int = 1000,
        fault: str = "none",
        search_samples: int = 100000,
        run_duration: float = 10.0,
    ):
        self.seed = seed
        self.samples = samples
        self.search_samples = search_samples
        self.run_duration = run_duration
        self.innovation_fn = innovation_for_fault(fault)
        self.suite_map = {
            "gradient_oracle": self._handle_gradient,
            "form_equality": self._handle_forms,
            "equivariance": self._handle_equivariance,
            "error_autonomy": self._handle_autonomy,
            "lyapunov_identity": self._handle_lyapunov,
            "observability": self._handle_observability,
            "zero_cost_search": self._handle_zero_cost,
        }

    @property
    def names(self) -> List[str]:
        return list(self.suite_map)

    def _rng(self, name: str) -> np.random.Generator:
        # one independent stream per suite so results do not depend on suite order
        return np.random.default_rng([self.seed, self.names.index(name)])

    def execute(self, name: str) -> dict:
        """
        Run one suite

        Args:
            name: Suite name (see `names`)

        Returns:
            Suite result dictionary, with success False and an error message on failure
        """
        logger.info(f"Running property suite: {name}")

        handler = self.suite_map.get(name)
        if handler is None:
            return {
                "property": name,
                "success": False,
                "error": f"Unknown suite '{name}'",
            }

        try:
            result = handler()
        except Exception as e:
            logger.error(f"Suite {name} raised: {str(e)}")
            return {
                "property": name,
                "success": False,
                "error": str(e),
            }

        if not result["success"]:
            logger.warning(
                f"Suite {name} failed: max error {result['max_error']:.3e} "
                f"(tolerance {result['tolerance']:.1e})"
            )
        return result

    def run_all(self, names: Optional[Sequence[str]] = None) -> List[dict]:
        return [self.execute(name) for name in (names or self.names)]

    def _handle_gradient(self) -> dict:
        return property_suites.gradient_oracle(
            self._rng("gradient_oracle"), self.samples, self.innovation_fn
        )

    def _handle_forms(self) -> dict:
        return property_suites.form_equality(
            self._rng("form_equality"), self.samples, self.innovation_fn
        )

    def _handle_equivariance(self) -> dict:
        return property_suites.equivariance(
            self._rng("equivariance"), self.samples, self.innovation_fn
        )

    def _handle_autonomy(self) -> dict:
        return property_suites.error_autonomy(
            self._rng("error_autonomy"), duration=self.run_duration, innovation_fn=self.innovation_fn
        )

    def _handle_lyapunov(self) -> dict:
        return property_suites.lyapunov_identity(
            duration=self.run_duration, innovation_fn=self.innovation_fn
        )

    def _handle_observability(self) -> dict:
        return property_suites.observability()

    def _handle_zero_cost(self) -> dict:
        return property_suites.zero_cost_search(
            self._rng("zero_cost_search"), self.search_samples
        )


if __name__ == "__main__":
    print("Suite router module loaded successfully")
    router = SuiteRouter(samples=10)
    print(router.execute("gradient_oracle"))
