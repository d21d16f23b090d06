"""Network assembly, variants, state carry, and checkpoint format."""

import numpy as np
import pytest
from conftest import TINY_CAN_DIM, TINY_SHAPES, make_session

from drivedetect.errors import (
    CacheMissingError,
    ConfigMismatchError,
    InvalidConfigError,
    MissingStreamError,
    ShapeMismatchError,
)
from drivedetect.model import (
    ArchitectureVariant,
    ModelConfig,
    assemble_segment,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from drivedetect.nn import softmax

TINY = ModelConfig(
    variant=ArchitectureVariant.FUSION_ALL,
    stream_shapes=dict(TINY_SHAPES),
    can_dim=TINY_CAN_DIM,
    reduce_channels={"depth": 2, "seg": 2},
    can_feature_dim=5,
    hidden_size=6,
)


def _lanes(n_lanes, n_frames, seed=0):
    return [
        make_session(f"lane-{i}", n_frames=n_frames, seed=seed + i).frames
        for i in range(n_lanes)
    ]


class TestConfig:
    def test_default_fused_width(self):
        cfg = ModelConfig(variant=ArchitectureVariant.BASELINE_IMAGE_CAN)
        # 8x8 grid at 20 reduced channels, plus 64 motion features
        assert cfg.branch_width("image") == 8 * 8 * 20
        assert cfg.fused_width() == 1344

    def test_variant_stream_sets(self):
        v = ArchitectureVariant
        assert v.BASELINE_IMAGE_CAN.feature_streams == ("image",)
        assert v.RECON_FEAT_CAN.feature_streams == ("recon",)
        assert v.DEPTH_CAN.feature_streams == ("depth",)
        assert v.SEG_CAN.feature_streams == ("seg",)
        assert v.FUSION_ALL.feature_streams == ("depth", "seg")

    def test_missing_stream_shape_rejected(self):
        cfg = ModelConfig(
            variant=ArchitectureVariant.FUSION_ALL,
            stream_shapes={"depth": (2, 2, 3)},  # no "seg"
            can_dim=3,
        )
        with pytest.raises(MissingStreamError):
            build_model(cfg)

    def test_class_count_is_fixed(self):
        with pytest.raises(InvalidConfigError):
            build_model(ModelConfig(n_classes=11))

    def test_json_round_trip(self):
        d = TINY.to_json_dict()
        assert d["variant"] == "fusion-all"
        assert ModelConfig.from_json_dict(d) == TINY


class TestBuild:
    def test_seed_determinism(self):
        a = build_model(TINY, seed=7)
        b = build_model(TINY, seed=7)
        for pa, pb in zip(a.params(), b.params()):
            assert pa.name == pb.name
            assert np.array_equal(pa.value, pb.value)
        c = build_model(TINY, seed=8)
        assert any(
            not np.array_equal(pa.value, pc.value)
            for pa, pc in zip(a.params(), c.params())
        )

    def test_param_names_unique_and_prefixed(self):
        model = build_model(TINY, seed=0)
        names = [p.name for p in model.params()]
        assert len(names) == len(set(names))
        prefixes = {n.split(".")[0] for n in names}
        assert prefixes == {"branch_depth", "branch_seg", "can_fc", "fusion_bn", "lstm", "head"}

    def test_parameter_count_matches_arithmetic(self):
        model = build_model(TINY, seed=0)
        h, w, cin = TINY_SHAPES["depth"]
        branch = (cin * 2 + 2) * 2  # conv 1x1 (w+b) per stream, reduce to 2
        can = TINY_CAN_DIM * 5 + 5
        fused = 2 * (h * w * 2) + 5
        bn = 2 * fused
        lstm = 4 * 6 * (fused + 6) + 4 * 6
        head = 6 * 12 + 12
        assert model.parameter_count() == branch + can + bn + lstm + head


class TestForward:
    def test_logit_shape_and_prob_rows(self):
        model = build_model(TINY, seed=1)
        state = model.init_state(2, training=False)
        logits, state = model.forward_segment(_lanes(2, 5), state)
        assert logits.shape == (2, 5, 12)
        probs = softmax(logits)
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
        assert state.h.shape == (2, 6)

    def test_unused_streams_do_not_affect_output(self):
        cfg = ModelConfig(
            variant=ArchitectureVariant.DEPTH_CAN,
            stream_shapes=dict(TINY_SHAPES),
            can_dim=TINY_CAN_DIM,
            reduce_channels={"depth": 2},
            can_feature_dim=5,
            hidden_size=6,
        )
        model = build_model(cfg, seed=3)
        lanes = _lanes(1, 4)
        base, _ = model.forward_segment(lanes, model.init_state(1))

        for f in lanes[0]:
            f.features["seg"] = f.features["seg"] + 100.0
        same, _ = model.forward_segment(lanes, model.init_state(1))
        assert np.array_equal(base, same)

        for f in lanes[0]:
            f.features["depth"] = f.features["depth"] + 1.0
        changed, _ = model.forward_segment(lanes, model.init_state(1))
        assert not np.array_equal(base, changed)

    def test_lane_order_symmetry(self):
        model = build_model(TINY, seed=2)
        lanes = _lanes(3, 4)
        out, _ = model.forward_segment(lanes, model.init_state(3))
        swapped, _ = model.forward_segment([lanes[2], lanes[0], lanes[1]], model.init_state(3))
        assert np.allclose(out[[2, 0, 1]], swapped, atol=1e-12)

    def test_eval_forward_has_no_cache(self):
        model = build_model(TINY, seed=0)
        model.forward_segment(_lanes(1, 3), model.init_state(1, training=False))
        with pytest.raises(CacheMissingError):
            model.backward_segment()

    def test_backward_consumes_cache(self):
        model = build_model(TINY, seed=0)
        batch = assemble_segment(_lanes(2, 3), TINY)
        model.forward_segment(batch, model.init_state(2, training=True))
        loss = model.backward_segment()
        assert np.isfinite(loss) and loss > 0
        with pytest.raises(CacheMissingError):
            model.backward_segment()

    def test_training_forward_with_single_lane_uses_running_stats(self):
        # one lane -> batch stats undefined; must fall back, not crash
        model = build_model(TINY, seed=0)
        logits, _ = model.forward_segment(_lanes(1, 3), model.init_state(1, training=True))
        assert np.all(np.isfinite(logits))
        model.backward_segment()


class TestStateCarry:
    def test_chunked_equals_full_sequence(self):
        model = build_model(TINY, seed=4)
        # make running stats non-trivial first
        warm = assemble_segment(_lanes(3, 6, seed=50), TINY)
        model.forward_segment(warm, model.init_state(3, training=True))
        model.backward_segment()

        frames = make_session("carry", n_frames=12, seed=9).frames
        full, _ = model.forward_segment([frames], model.init_state(1))

        state = model.init_state(1)
        parts = []
        for lo, hi in ((0, 5), (5, 7), (7, 12)):
            out, state = model.forward_segment([frames[lo:hi]], state)
            parts.append(out)
        chunked = np.concatenate(parts, axis=1)
        assert np.max(np.abs(full - chunked)) < 1e-6

    def test_padded_frames_freeze_lane_state(self):
        model = build_model(TINY, seed=5)
        long_lane = make_session("a", n_frames=6, seed=1).frames
        short_lane = make_session("b", n_frames=4, seed=2).frames
        batch = assemble_segment([long_lane, short_lane], TINY)
        assert batch.valid[1, 4:].tolist() == [False, False]
        _, state = model.forward_segment(batch, model.init_state(2))

        # running the short lane alone must land on the same final state
        _, solo = model.forward_segment([short_lane], model.init_state(1))
        assert np.allclose(state.h[1], solo.h[0], atol=1e-12)
        assert np.allclose(state.c[1], solo.c[0], atol=1e-12)

    def test_reset_lanes_zeroes_selected_rows(self):
        model = build_model(TINY, seed=0)
        _, state = model.forward_segment(_lanes(2, 3), model.init_state(2))
        assert np.any(state.h != 0)
        state.reset_lanes([0])
        assert np.all(state.h[0] == 0) and np.all(state.c[0] == 0)
        assert np.any(state.h[1] != 0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = build_model(TINY, seed=6)
        # give running stats and params non-initial values
        model.forward_segment(_lanes(3, 5), model.init_state(3, training=True))
        model.backward_segment()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, step=17, path=path)
        loaded, step = load_checkpoint(path)
        assert step == 17
        assert loaded.config == model.config
        for (na, a), (nb, b) in zip(model.state_arrays(), loaded.state_arrays()):
            assert na == nb
            assert a.tobytes() == b.tobytes()

    def test_save_is_byte_deterministic(self, tmp_path):
        model = build_model(TINY, seed=6)
        save_checkpoint(model, step=3, path=tmp_path / "a.ckpt")
        save_checkpoint(model, step=3, path=tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_header_is_json_first_line(self, tmp_path):
        import json

        model = build_model(TINY, seed=0)
        save_checkpoint(model, step=0, path=tmp_path / "m.ckpt")
        first = (tmp_path / "m.ckpt").read_bytes().split(b"\n", 1)[0]
        header = json.loads(first)
        assert header["format"] == "drivedetect-checkpoint"
        assert header["version"] == 1

    def test_truncated_payload_rejected(self, tmp_path):
        model = build_model(TINY, seed=0)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, step=0, path=p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ConfigMismatchError):
            load_checkpoint(p)

    def test_tampered_header_rejected(self, tmp_path):
        model = build_model(TINY, seed=0)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, step=0, path=p)
        head, payload = p.read_bytes().split(b"\n", 1)
        import json

        header = json.loads(head)
        header["arrays"][0]["shape"][0] += 1
        p.write_bytes(json.dumps(header).encode() + b"\n" + payload)
        with pytest.raises(ConfigMismatchError):
            load_checkpoint(p)

    def test_loaded_model_reproduces_outputs(self, tmp_path):
        model = build_model(TINY, seed=11)
        lanes = _lanes(2, 4)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, step=1, path=p)
        loaded, _ = load_checkpoint(p)
        a, _ = model.forward_segment(lanes, model.init_state(2))
        b, _ = loaded.forward_segment(lanes, loaded.init_state(2))
        assert np.array_equal(a, b)


class TestAssembleSegment:
    def test_ragged_lanes_padded_to_longest(self):
        lanes = [_lanes(1, 5)[0], _lanes(1, 2, seed=9)[0]]
        batch = assemble_segment(lanes, TINY)
        assert batch.valid.shape == (2, 5)
        assert batch.valid[0].all()
        assert batch.valid[1].tolist() == [True, True, False, False, False]
        assert batch.labels.shape == (2, 5)

    def test_explicit_length_pads_but_never_truncates(self):
        batch = assemble_segment(_lanes(1, 4), TINY, segment_length=6)
        assert batch.valid.shape == (1, 6)
        assert batch.valid[0].tolist() == [True] * 4 + [False] * 2
        with pytest.raises(ShapeMismatchError):
            assemble_segment(_lanes(1, 6), TINY, segment_length=4)

    def test_feature_layout(self):
        lanes = _lanes(2, 3)
        batch = assemble_segment(lanes, TINY)
        h, w, c = TINY_SHAPES["depth"]
        assert batch.features["depth"].shape == (2, 3, h, w, c)
        assert batch.can.shape == (2, 3, TINY_CAN_DIM)
        got = batch.features["depth"][1, 2]
        assert np.allclose(got, lanes[1][2].features["depth"].astype(np.float64))
