"""Checkpoint format and parameter registry."""

import numpy as np
import pytest
import torch

from cellseg.registry import (
    MAGIC, ParameterRegistry, group_checksum, load_checkpoint, load_into_model,
    parameter_names, save_checkpoint,
)


def _random_registry(rng):
    reg = ParameterRegistry()
    reg.register("encoder.block1.w", rng.standard_normal((4, 7)).astype(np.float32))
    reg.register("encoder.block1.b", rng.standard_normal(7).astype(np.float32))
    reg.register("adapter.gamma", rng.standard_normal(5))  # float64
    reg.register("decoder.head.w", rng.standard_normal((3, 3, 2, 2)).astype(np.float32),
                 trainable=False)
    return reg


def test_round_trip_is_bitwise(tmp_path, rng):
    reg = _random_registry(rng)
    path = save_checkpoint(reg, tmp_path / "ck.bin", meta={"epoch": 3})
    loaded, meta = load_checkpoint(path)
    assert meta == {"epoch": 3}
    assert loaded.names() == reg.names()
    for name in reg.names():
        a, b = reg.get(name), loaded.get(name)
        assert a.dtype == b.dtype
        assert a.tobytes() == b.tobytes()


def test_file_starts_with_magic(tmp_path, rng):
    path = save_checkpoint(_random_registry(rng), tmp_path / "ck.bin")
    assert open(path, "rb").read(5) == MAGIC == b"CVTA1"


def test_bad_magic_rejected(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE!" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(bad)


def test_duplicate_and_bad_dtype_rejected(rng):
    reg = ParameterRegistry()
    reg.register("a.w", np.zeros(3, dtype=np.float32))
    with pytest.raises(ValueError, match="duplicate"):
        reg.register("a.w", np.zeros(3, dtype=np.float32))
    with pytest.raises(ValueError, match="dtype"):
        reg.register("a.i", np.zeros(3, dtype=np.int32))


def test_update_checks_shape(rng):
    reg = _random_registry(rng)
    with pytest.raises(ValueError, match="encoder.block1.w"):
        reg.update("encoder.block1.w", np.zeros((4, 8), dtype=np.float32))
    with pytest.raises(KeyError):
        reg.update("nope", np.zeros(1, dtype=np.float32))


def test_groups_are_first_dotted_component(rng):
    reg = _random_registry(rng)
    assert reg.groups == ["encoder", "adapter", "decoder"]
    assert reg.group_names("encoder") == ["encoder.block1.w", "encoder.block1.b"]
    assert not reg.trainable("decoder.head.w")


class _Toy(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.fc = torch.nn.Linear(4, 3)
        self.head = torch.nn.Linear(3, 2)


def test_model_round_trip_and_strictness(tmp_path):
    torch.manual_seed(7)
    model = _Toy()
    reg = ParameterRegistry.from_model(model)
    path = save_checkpoint(reg, tmp_path / "m.bin")

    other = _Toy()  # different init
    assert not torch.equal(other.fc.weight, model.fc.weight)
    load_into_model(path, other)
    for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
        assert torch.equal(a, b)

    # missing/extra names fail loudly in strict mode
    class Bigger(_Toy):
        def __init__(self):
            super().__init__()
            self.extra = torch.nn.Linear(2, 2)

    with pytest.raises(KeyError, match="missing"):
        load_into_model(path, Bigger())
    load_into_model(path, Bigger(), strict=False)  # tolerated when not strict


def test_batchnorm_statistics_survive_round_trip(tmp_path):
    """Running mean/var are buffers, not parameters; losing them silently
    breaks eval-mode outputs after a reload."""
    torch.manual_seed(3)
    model = torch.nn.Sequential(
        torch.nn.Conv2d(2, 3, 3, padding=1), torch.nn.BatchNorm2d(3), torch.nn.ReLU(),
    )
    model.train()
    for _ in range(4):  # move the running statistics away from (0, 1)
        model(torch.randn(8, 2, 6, 6))
    model.eval()
    x = torch.randn(2, 2, 6, 6)
    with torch.no_grad():
        expected = model(x)

    path = save_checkpoint(ParameterRegistry.from_model(model), tmp_path / "bn.bin")
    fresh = torch.nn.Sequential(
        torch.nn.Conv2d(2, 3, 3, padding=1), torch.nn.BatchNorm2d(3), torch.nn.ReLU(),
    )
    load_into_model(path, fresh)
    fresh.eval()
    with torch.no_grad():
        actual = fresh(x)
    assert torch.equal(actual, expected)
    assert torch.equal(fresh[1].running_mean, model[1].running_mean)
    assert torch.equal(fresh[1].running_var, model[1].running_var)


def test_shape_mismatch_names_the_parameter(tmp_path):
    model = _Toy()
    path = save_checkpoint(ParameterRegistry.from_model(model), tmp_path / "m.bin")

    class WrongShape(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.fc = torch.nn.Linear(4, 5)
            self.head = torch.nn.Linear(3, 2)
            # keep the name set identical
            self.fc.weight = torch.nn.Parameter(torch.zeros(5, 4))
            self.fc.bias = torch.nn.Parameter(torch.zeros(5))

    with pytest.raises(ValueError, match="fc.weight"):
        load_into_model(path, WrongShape())


def test_group_checksum_tracks_mutation():
    model = _Toy()
    before = group_checksum(model, "fc")
    assert before == group_checksum(model, "fc")  # deterministic
    with torch.no_grad():
        model.head.weight += 1.0
    assert group_checksum(model, "fc") == before  # untouched group unchanged
    with torch.no_grad():
        model.fc.weight += 1.0
    assert group_checksum(model, "fc") != before
    with pytest.raises(ValueError, match="prefix"):
        group_checksum(model, "nope")


def test_parameter_names_filter():
    model = _Toy()
    assert parameter_names(model) == ["fc.weight", "fc.bias", "head.weight", "head.bias"]
    assert parameter_names(model, "head") == ["head.weight", "head.bias"]
