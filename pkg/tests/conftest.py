import numpy as np
import pytest

from mixedflow.constitutive import (CoefficientVector, GeneralizedPolynomial,
                                    PowerSpec)


@pytest.fixture(scope="session")
def reference_law() -> GeneralizedPolynomial:
    """F(z) = z^-1/2 + 1 + z: alpha = 1/2, alpha_N = 1, s = 3."""
    return GeneralizedPolynomial(PowerSpec(0.5, [1.0]),
                                 CoefficientVector([1.0, 1.0, 1.0]))


@pytest.fixture(scope="session")
def perturbed_law() -> GeneralizedPolynomial:
    """F(z) = 0.95 z^-1/2 + 1 + 0.95 z with the shared [0.95, 1] box."""
    return GeneralizedPolynomial(
        PowerSpec(0.5, [1.0]),
        CoefficientVector([0.95, 1.0, 0.95], a_star=0.95, a_sup=1.0))


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
