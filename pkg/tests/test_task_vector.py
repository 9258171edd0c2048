import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import checkpoint_like
from quadmerge.checkpoint import Checkpoint, IncompatibleCheckpointError, Tensor
from quadmerge.task_vector import TaskVector, apply_task_vector, build_task_vector


def test_identical_models_give_zero_vector(rng):
    base = checkpoint_like({"w": (3, 2), "b": (3,)}, rng)
    tau = build_task_vector(base, base)
    assert all(not d.any() for d in tau.deltas.values())


def test_elementwise_difference():
    tau = build_task_vector(Checkpoint.from_arrays({"w": [3.0, 1.0]}), Checkpoint.from_arrays({"w": [1.0, 1.0]}))
    assert tau.deltas["w"].tolist() == [2.0, 0.0]
    assert tau.shapes["w"] == (2,)


def test_incompatible_layouts_propagate():
    with pytest.raises(IncompatibleCheckpointError):
        build_task_vector(Checkpoint.from_arrays({"w": [1.0]}), Checkpoint.from_arrays({"v": [1.0]}))


def test_apply_arithmetic():
    base = Checkpoint.from_arrays({"w": [1.0]})
    tau = TaskVector({"w": [0.5]}, {"w": (1,)})
    assert apply_task_vector(base, tau, 2.0)["w"].values.tolist() == [2.0]


def test_zero_scale_returns_base_exactly(rng):
    base = Checkpoint({"w": Tensor("F32", (3,), [-0.0, 1.5, -2.25])}, {"k": "v"})
    tau = TaskVector({"w": rng.normal(size=3)}, {"w": (3,)})
    out = apply_task_vector(base, tau, 0.0)
    assert out["w"].values.tobytes() == base["w"].values.tobytes()


def test_apply_keeps_base_dtype_order_metadata(rng):
    base = Checkpoint(
        {"z": Tensor("F16", (2,), [1.0, 2.0]), "a": Tensor("F32", (1,), [0.0])}, {"note": "base"}
    )
    tau = TaskVector({"z": [0.5, 0.5], "a": [1.0]}, {"z": (2,), "a": (1,)})
    out = apply_task_vector(base, tau)
    assert list(out.tensors) == ["z", "a"]
    assert out["z"].dtype == "F16" and out.metadata == {"note": "base"}


def test_apply_rejects_bad_layout_and_scale():
    base = Checkpoint.from_arrays({"w": [1.0, 2.0]})
    with pytest.raises(IncompatibleCheckpointError):
        apply_task_vector(base, TaskVector({"w": [1.0, 2.0, 3.0]}, {"w": (3,)}))
    with pytest.raises(ValueError):
        apply_task_vector(base, TaskVector({"w": [1.0, 2.0]}, {"w": (2,)}), float("nan"))


def test_apply_inverts_build(rng):
    shapes = {"l0.w": (4, 3), "l0.b": (4,)}
    base, tuned = checkpoint_like(shapes, rng), checkpoint_like(shapes, rng)
    out = apply_task_vector(base, build_task_vector(tuned, base), 1.0)
    for name in shapes:
        np.testing.assert_allclose(out[name].values, tuned[name].values, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_build_after_apply_recovers_tau(seed, size):
    rng = np.random.default_rng(seed)
    base = Checkpoint.from_arrays({"w": rng.normal(size=size)})
    tau = TaskVector({"w": rng.normal(size=size)}, {"w": (size,)})
    back = build_task_vector(apply_task_vector(base, tau, 1.0), base)
    np.testing.assert_allclose(back.deltas["w"], tau.deltas["w"], rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 4.0, 0.25]))
def test_build_is_linear(seed, c):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=10)
    delta = rng.normal(size=10)
    tuned = Checkpoint.from_arrays({"w": base + delta})
    tuned_c = Checkpoint.from_arrays({"w": base + c * (base + delta - base)})
    b = Checkpoint.from_arrays({"w": base})
    lhs = build_task_vector(tuned, b).scaled(c).deltas["w"]
    rhs = build_task_vector(tuned_c, b).deltas["w"]
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
