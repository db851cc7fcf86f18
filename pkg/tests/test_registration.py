import math

import numpy as np
import pytest

from lesion3d.errors import ContractError
from lesion3d.phantom import structured_phantom_2d
from lesion3d.preprocess import RigidTransform2D, apply_rigid
from lesion3d.registration import RegistrationOptions, nmi, register_rigid


@pytest.fixture(scope="module")
def phantom():
    return structured_phantom_2d((128, 128), seed=0)


def _errors(t, truth):
    return abs(t.tx - truth.tx), abs(t.ty - truth.ty), abs(math.degrees(t.theta - truth.theta))


def test_self_registration(phantom):
    t = register_rigid(phantom, phantom)
    assert max(_errors(t, RigidTransform2D())) <= 0.1


def test_known_transform(phantom):
    truth = RigidTransform2D(3.0, -2.0, math.radians(5.0))
    t = register_rigid(phantom, apply_rigid(phantom, truth))
    ex, ey, et = _errors(t, truth)
    assert ex <= 0.5 and ey <= 0.5 and et <= 0.5


def test_deterministic(phantom):
    fixed = apply_rigid(phantom, RigidTransform2D(-4.0, 1.5, math.radians(-3.0)))
    assert register_rigid(phantom, fixed) == register_rigid(phantom, fixed)


def test_nmi_peak_at_identity(phantom, rng):
    base = nmi(phantom, phantom)
    for _ in range(20):
        t = RigidTransform2D(*rng.uniform(-6, 6, 2), math.radians(rng.uniform(-10, 10)))
        assert base >= nmi(apply_rigid(phantom, t), phantom)


def test_nmi_bounds(rng):
    a, b = rng.random((40, 40)), rng.random((40, 40))
    assert 1.0 <= nmi(a, b) <= 2.0
    assert nmi(a, a) == pytest.approx(2.0)


def test_nmi_is_multimodal(phantom):
    # an inverted intensity map carries the same information
    assert nmi(1.0 - phantom, phantom) == pytest.approx(nmi(phantom, phantom))


def test_constant_image():
    with pytest.raises(ContractError):
        register_rigid(np.ones((32, 32)), np.random.default_rng(0).random((32, 32)))
    with pytest.raises(ContractError):
        nmi(np.ones((4, 4)), np.arange(16.0).reshape(4, 4))


def test_shape_mismatch():
    with pytest.raises(ContractError):
        register_rigid(np.zeros((8, 8)), np.zeros((8, 9)))


def test_eval_budget_respected(phantom):
    opts = RegistrationOptions(max_evals_per_level=10)
    t = register_rigid(phantom, apply_rigid(phantom, RigidTransform2D(5.0, 0.0, 0.0)), opts)
    assert isinstance(t, RigidTransform2D)
