from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def calibration_csv() -> Path:
    return FIXTURES / "calibration_medians.csv"
