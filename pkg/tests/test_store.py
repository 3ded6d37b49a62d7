"""Artifact container, budget audit, checkpoints."""

import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssdistill.approx import ApproxNet
from ssdistill.augment import AugmentationSpec
from ssdistill.errors import BudgetError, ContractError, CorruptionError
from ssdistill.nn import build_regressor
from ssdistill.parameterization import approx_float_count, derive_m
from ssdistill.store import (DistilledArtifact, audit_budget, config_hash, deserialize,
                             load_artifact, load_module_state, read_container, recount_container,
                             save_artifact, save_module, serialize, write_container)


def make_artifact(m=5, U=4, V=3, d_y=6, side=8, s=2, A=3, hidden=4, seed=0, blocks=True):
    rng = np.random.default_rng(seed)
    d_xb = (side // s) ** 2
    spec = AugmentationSpec(AugmentationSpec.rotations().transforms[:A])
    nets = [ApproxNet(V, hidden, rng).state_dict() for _ in range(A)]
    aux = {f"cay.{a}": rng.standard_normal((m, V)) for a in range(A)} if blocks else {}
    return DistilledArtifact((1, side, side), s, rng.standard_normal((U, d_xb)), rng.standard_normal(d_xb),
                             rng.standard_normal((m, U)), rng.standard_normal((V, d_y)),
                             rng.standard_normal(d_y), rng.standard_normal((m, V)), spec, nets, hidden,
                             {"seed": str(seed)}, aux)


def independent_count(m, U, V, d_xb, d_y, A, hidden):
    """Budget arithmetic written out term by term."""
    images = U * d_xb + d_xb + m * U
    targets = V * d_y + d_y + m * V
    nets = A * (V * hidden + hidden + hidden * V + V)
    return images + targets + nets


class TestContainer:
    def test_round_trip_is_byte_exact(self):
        art = make_artifact()
        buf = serialize(art)
        again = deserialize(buf)
        assert serialize(again) == buf
        for (na, a), (nb, b) in zip(art.records(), again.records()):
            assert na == nb and a.dtype == b.dtype and np.array_equal(a, b)
        assert again.float_count() == art.float_count()
        assert again.spec == art.spec and again.image_shape == art.image_shape

    def test_file_round_trip(self, tmp_path):
        art = make_artifact()
        path = save_artifact(art, tmp_path / "sub" / "a.ssda")
        assert serialize(load_artifact(path)) == serialize(art)

    def test_payload_is_float32(self):
        meta, records = read_container(serialize(make_artifact()))
        assert all(arr.dtype == np.float32 for _, arr in records)
        assert [n for n, _ in records][:6] == ["bx", "mean_x", "cx", "by", "mean_y", "cy"]
        assert meta["augmentations"] == "rotate:90;rotate:180;rotate:270"

    def test_every_single_byte_flip_is_rejected(self):
        buf = serialize(make_artifact(m=2, U=2, V=2, d_y=2, side=4, A=1, hidden=1))
        for i in range(len(buf)):
            bad = bytearray(buf)
            bad[i] ^= 0x40
            with pytest.raises(CorruptionError):
                deserialize(bytes(bad))

    def test_flipped_payload_names_field(self):
        buf = bytearray(write_container({}, [("alpha", np.zeros(3, np.float32)),
                                             ("beta", np.ones(4, np.float32))]))
        buf[-5] ^= 1  # last payload byte of "beta"
        with pytest.raises(CorruptionError, match="beta"):
            read_container(bytes(buf))

    def test_truncation_and_trailing_bytes(self):
        buf = serialize(make_artifact())
        with pytest.raises(CorruptionError, match="truncated"):
            deserialize(buf[:-20])
        with pytest.raises(CorruptionError, match="unexpected bytes"):
            deserialize(buf + b"\0")

    def test_magic_and_version(self):
        buf = serialize(make_artifact())
        with pytest.raises(CorruptionError, match="magic"):
            deserialize(b"XXXX" + buf[4:])
        with pytest.raises(CorruptionError, match="version"):
            deserialize(buf[:4] + struct.pack("<H", 9) + buf[6:])

    def test_header_crc_covers_metadata(self):
        buf = bytearray(write_container({"k": "v"}, []))
        body = bytes(buf[6:-4])
        assert struct.unpack("<I", bytes(buf[-4:]))[0] == zlib.crc32(body)

    def test_unsupported_dtype(self):
        with pytest.raises(ContractError):
            write_container({}, [("i", np.arange(3))])

    def test_net_count_must_match_augmentations(self):
        art = make_artifact(A=3)
        art.nets = art.nets[:2]
        with pytest.raises(ContractError):
            serialize(art)


class TestArtifactViews:
    def test_pairs_shapes(self):
        art = make_artifact(m=5, A=3)
        x, y = art.pairs()
        assert x.shape == (20, 1, 8, 8) and y.shape == (20, 6)

    def test_variants(self):
        art = make_artifact()
        same = art.targets("same")
        np.testing.assert_allclose(same[5:10], same[:5])
        ideal = art.targets("ideal")
        blk = art.aux["cay.0"].astype(np.float64)
        np.testing.assert_allclose(ideal[5:10], blk @ art.by.astype(np.float64) + art.mean_y, rtol=1e-12)
        with pytest.raises(ContractError):
            make_artifact(blocks=False).targets("bias")
        with pytest.raises(ContractError):
            art.targets("mixup")

    def test_no_augmentation(self):
        art = make_artifact(A=0)
        x, y = art.pairs()
        assert x.shape == (5, 1, 8, 8) and y.shape == (5, 6)


class TestBudget:
    def test_ledger_matches_independent_sum_and_recount(self):
        art = make_artifact(m=5, U=4, V=3, d_y=6, A=3, hidden=4)
        ledger = audit_budget(art, N=20, d_x=64)
        assert ledger.total == independent_count(5, 4, 3, 16, 6, 3, 4)
        assert recount_container(serialize(art)) == ledger.total
        assert ledger.slack == 20 * 64 - ledger.total
        assert ledger.lines()[-1] == f"slack\t{ledger.slack}"

    def test_aux_blocks_are_not_charged(self):
        a, b = make_artifact(blocks=True), make_artifact(blocks=False)
        assert a.float_count() == b.float_count()

    def test_empty_artifact(self):
        art = DistilledArtifact((1, 4, 4), 2, np.zeros((0, 4)), np.zeros(0), np.zeros((0, 0)),
                                np.zeros((0, 2)), np.zeros(0), np.zeros((0, 0)), AugmentationSpec.none())
        ledger = audit_budget(art, 3, 16)
        assert ledger.total == 0 and ledger.slack == 48

    def test_one_float_over_fails(self):
        art = make_artifact()
        total = art.float_count()
        assert audit_budget(art, 1, total).slack == 0
        with pytest.raises(BudgetError, match="over by 1"):
            audit_budget(art, 1, total - 1)

    def test_paper_scale_ledger(self):
        # 200 image and representation bases, m from the budget rule, three approximation nets
        U = V = 200
        d_xb, d_y, hidden, A = 768, 512, 4, 3
        m = derive_m(100, 3072, U, V, d_xb, d_y, approx_float_count(A, V, hidden))
        total = independent_count(m, U, V, d_xb, d_y, A, hidden)
        assert total <= 100 * 3072 < total + U + V

    @settings(max_examples=40, deadline=None)
    @given(st.integers(4, 40), st.integers(1, 16), st.integers(1, 16), st.sampled_from([0, 3]),
           st.integers(1, 4))
    def test_derived_configs_fill_budget(self, N, U, V, A, hidden):
        d_x, d_xb, d_y = 64, 16, 8
        V = min(V, d_y)
        nets = approx_float_count(A, V, hidden)
        try:
            m = derive_m(N, d_x, U, V, d_xb, d_y, nets)
        except Exception:
            return
        art = make_artifact(m=m, U=U, V=V, d_y=d_y, A=A, hidden=hidden, blocks=False)
        ledger = audit_budget(art, N, d_x)
        assert 0 <= ledger.slack < U + V
        assert recount_container(serialize(art)) == ledger.total


class TestCheckpoints:
    def test_module_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        model = build_regressor("convnet", (1, 8, 8), 3, rng, width=4, depth=2)
        path = save_module(model, tmp_path / "m.ssda", "regressor", {"width": 4})
        meta, state = load_module_state(path, "regressor")
        assert meta["width"] == "4"
        for k, v in model.state_dict().items():
            assert np.array_equal(state[k], v) and state[k].dtype == np.float64

    def test_kind_mismatch(self, tmp_path):
        path = save_module(ApproxNet(2, 2), tmp_path / "q.ssda", "approx")
        with pytest.raises(CorruptionError, match="teacher"):
            load_module_state(path, "teacher")

    def test_checkpoint_is_not_an_artifact(self, tmp_path):
        path = save_module(ApproxNet(2, 2), tmp_path / "q.ssda", "approx")
        with pytest.raises(CorruptionError):
            load_artifact(path)

    def test_config_hash_stable(self):
        assert config_hash("a=1") == config_hash("a=1") != config_hash("a=2")
        assert len(config_hash("")) == 16
