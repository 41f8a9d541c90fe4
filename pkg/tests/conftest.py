from __future__ import annotations

import pytest

from homodyne_cooling.params import reference_params


@pytest.fixture
def ref():
    """Reference parameters with the quoted measurement rate."""
    return reference_params()
