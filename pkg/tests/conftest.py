import pytest
from hypothesis import settings

from hsverify.algebra_core import build_class, fixed_point_spaces

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

PRESETS = [(kind, p, q) for kind in ("unitary", "orthogonal", "symplectic") for p in (1, 2) for q in (1, 2)]

_cache = {}


def decomposition(kind, p, q):
    key = (kind, p, q)
    if key not in _cache:
        _cache[key] = fixed_point_spaces(build_class(kind, p, q))
    return _cache[key]


@pytest.fixture(params=PRESETS, ids=lambda t: f"{t[0]}-{t[1]}-{t[2]}")
def preset_decomposition(request):
    return decomposition(*request.param)
