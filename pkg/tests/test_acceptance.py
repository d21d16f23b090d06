"""Release gate: one test per shipping criterion, one verdict line each.

Run with ``pytest -v tests/test_acceptance.py`` to see the verdict lines;
each test prints ``[criterion NN] PASS/FAIL: summary`` before asserting.
The two statistical criteria (8 and 9) train real models and dominate the
runtime (roughly 20 s each); everything else is seconds.
"""

import itertools
import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
from click.testing import CliRunner

from drivedetect.cli import main as cli_main
from drivedetect.datagen import (
    GeneratorConfig,
    class_frequency_report,
    foreground_fraction,
    generate_dataset,
)
from drivedetect.errors import (
    ConfigMismatchError,
    ShapeMismatchError,
    UnknownDtypeError,
)
from drivedetect.metrics import EvaluationReport, average_precision, evaluate
from drivedetect.model import (
    ArchitectureVariant,
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from drivedetect.nn import focal_loss, focal_loss_batch, run_layer_checks, softmax
from drivedetect.session_io import MANIFEST_NAME, read_session, write_session
from drivedetect.sessions import split_dataset
from drivedetect.taxonomy import FOREGROUND_IDS
from drivedetect.train import TrainConfig, make_batch_plan, train
from drivedetect.verify import (
    end_to_end_gradcheck,
    run_model_checks,
    state_carry_check,
    truncation_gradcheck,
)


def _verdict(number: int, ok: bool, detail: str) -> None:
    print(f"[criterion {number:02d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# -- criterion 1: every analytic gradient matches finite differences --------


def test_criterion_01_gradient_verification():
    start = time.time()
    results = run_layer_checks(seed=0) + run_model_checks(seed=0)
    elapsed = time.time() - start
    worst = max(r.max_rel_error for r in results if r.tolerance <= 1e-4)
    ok = all(r.passed for r in results) and elapsed < 60.0
    _verdict(
        1,
        ok,
        f"{len(results)} finite-difference/state checks, worst rel error "
        f"{worst:.2e} (tolerance 1e-4), {elapsed:.1f}s",
    )


# -- criterion 2: carried LSTM state is equivalent to one long pass ---------


def test_criterion_02_state_carry_equivalence():
    checks = [state_carry_check(seed=s) for s in (0, 1, 2)]
    worst = max(c.max_rel_error for c in checks)
    _verdict(
        2,
        all(c.passed for c in checks),
        f"randomized chunked vs full forward, worst deviation {worst:.2e} "
        f"(tolerance 1e-6) over {len(checks)} seeds",
    )


# -- criterion 3: truncated BPTT gradients are exact within the segment -----


def test_criterion_03_truncated_bptt():
    checks = [truncation_gradcheck(seed=s) for s in (0, 1)]
    also = end_to_end_gradcheck(seed=3)
    worst = max(c.max_rel_error for c in checks + [also])
    _verdict(
        3,
        all(c.passed for c in checks) and also.passed,
        f"two-segment truncated backprop vs finite differences, worst rel "
        f"error {worst:.2e} (tolerance 1e-4)",
    )


# -- criterion 4: focal loss degenerates to cross-entropy and hits ----------
# the worked values


def test_criterion_04_focal_loss_values():
    rng = np.random.default_rng(0)
    probs = softmax(rng.standard_normal((128, 12)))
    targets = rng.integers(0, 12, 128)
    losses, _ = focal_loss_batch(probs, targets, gamma=0.0, alpha=1.0)
    ce_gap = float(np.max(np.abs(losses + np.log(probs[np.arange(128), targets]))))

    half, _ = focal_loss(np.array([0.5, 0.5]), 0, gamma=0.0, alpha=1.0)
    easy, _ = focal_loss(np.array([0.9, 0.1]), 0, gamma=2.0, alpha=1.0)
    ok = (
        ce_gap < 1e-9
        and abs(half - math.log(2.0)) < 5e-7
        and abs(easy - 0.00105361) < 5e-9
    )
    _verdict(
        4,
        ok,
        f"gamma=0 vs cross-entropy gap {ce_gap:.1e}; ln2 case {half:.6f}; "
        f"damped easy case {easy:.8f}",
    )


# -- criterion 5: average precision agrees with a brute-force oracle --------


def _reference_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, precisions = 0, []
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def test_criterion_05_average_precision_oracle():
    rng = np.random.default_rng(0)
    cases, worst = 0, 0.0
    for n in range(1, 9):
        for pattern in itertools.product([0, 1], repeat=n):
            if not any(pattern):
                continue
            for _ in range(25):
                scores = rng.permutation(n) + rng.uniform(0, 0.5)
                got = average_precision(scores, list(pattern))
                want = _reference_ap(list(scores), list(pattern))
                worst = max(worst, abs(got - want))
                cases += 1
    ok = cases >= 10_000 and worst < 1e-12
    _verdict(
        5, ok, f"{cases} exhaustive label patterns up to length 8, max diff {worst:.1e}"
    )


# -- criterion 6: report means reproduce the frozen reference table ---------


def test_criterion_06_reference_table_means():
    fusion = EvaluationReport.from_class_aps(
        {1: 34.45, 2: 28.06, 3: 5.40, 4: 43.05, 5: 2.10, 6: 75.07,
         7: 75.82, 8: 26.40, 9: 77.70, 10: 13.14, 11: 16.42}
    )
    baseline = EvaluationReport.from_class_aps(
        {1: 28.09, 2: 29.51, 3: 3.85, 4: 41.97, 5: 3.56, 6: 65.74,
         7: 72.36, 8: 19.76, 9: 63.44, 10: 6.33, 11: 2.36}
    )
    ok = abs(fusion.mean_ap - 36.15) <= 0.005 and abs(baseline.mean_ap - 30.63) <= 0.005
    _verdict(
        6,
        ok,
        f"mean AP fusion {fusion.mean_ap:.4f} (want 36.15), "
        f"image-only {baseline.mean_ap:.4f} (want 30.63)",
    )


# -- criterion 7: generator hits its class statistics at scale --------------


def test_criterion_07_generator_statistics():
    sessions = generate_dataset(GeneratorConfig(seed=0))
    fg = foreground_fraction(sessions)
    counts = class_frequency_report(sessions)
    ordered = [counts.get(c, 0) for c in FOREGROUND_IDS]
    non_adjacent = [
        (FOREGROUND_IDS[i], FOREGROUND_IDS[j])
        for i in range(len(ordered))
        for j in range(i + 2, len(ordered))
        if ordered[j] > ordered[i]
    ]
    ok = abs(fg - 0.15) <= 0.03 and all(n > 0 for n in ordered) and not non_adjacent
    _verdict(
        7,
        ok,
        f"10x1000 frames at seed 0: foreground {fg:.4f} (want 0.15±0.03), "
        f"all 11 classes present, non-adjacent prevalence inversions: {non_adjacent}",
    )


# -- criteria 8 and 9: the two statistical claims ---------------------------


def _run_experiment(gen, variant, reduce, train_cfg, eval_fraction, seed):
    sessions = generate_dataset(gen)
    split = split_dataset(sessions, eval_fraction, seed=seed)
    config = ModelConfig(
        variant=variant,
        stream_shapes=dict(gen.stream_shapes),
        can_dim=gen.can_dim,
        reduce_channels=reduce,
        can_feature_dim=12,
        hidden_size=48,
    )
    model = build_model(config, seed=seed)
    plan = make_batch_plan(split.train, train_cfg.n_lanes, train_cfg.segment_length, seed)
    train(model, split.train, plan, train_cfg)
    return evaluate(model, split.eval), split


def test_criterion_08_fusion_beats_single_streams():
    margins = []
    for seed in (0, 1, 2):
        gen = GeneratorConfig(
            seed=seed,
            n_sessions=8,
            frames_per_session=600,
            stream_shapes={"depth": (4, 4, 6), "seg": (4, 4, 6)},
            can_dim=6,
            intra_class_variants=2,
            cross_modal=True,
        )
        cfg = TrainConfig(segment_length=45, n_lanes=3, epochs=10, lr=3e-3, seed=seed)
        means = {}
        for variant in (
            ArchitectureVariant.FUSION_ALL,
            ArchitectureVariant.DEPTH_CAN,
            ArchitectureVariant.SEG_CAN,
        ):
            report, _ = _run_experiment(
                gen, variant, {"depth": 4, "seg": 4}, cfg, eval_fraction=0.25, seed=seed
            )
            means[variant.value] = report.mean_ap
        margins.append(means["fusion-all"] - max(means["depth-can"], means["seg-can"]))
    med = statistics.median(margins)
    _verdict(
        8,
        med >= 5.0,
        "fusion mean AP minus best single stream, 3 seeds: "
        + ", ".join(f"{m:+.1f}" for m in margins)
        + f"; median {med:+.1f} (need >= +5.0)",
    )


def test_criterion_09_focal_helps_rare_classes():
    rare = (9, 10, 11)
    diffs = []
    for seed in (1, 2, 3):
        gen = GeneratorConfig(
            seed=seed,
            n_sessions=12,
            frames_per_session=600,
            stream_shapes={"depth": (4, 4, 6)},
            can_dim=6,
            intra_class_variants=1,
            noise_sigma=0.45,
            cross_modal=False,
        )
        rare_means = {}
        for label, gamma, alpha in (("focal", 2.0, 0.25), ("ce", 0.0, 1.0)):
            cfg = TrainConfig(
                segment_length=45, n_lanes=4, epochs=15, lr=3e-3,
                gamma=gamma, alpha=alpha, seed=seed,
            )
            report, split = _run_experiment(
                gen, ArchitectureVariant.DEPTH_CAN, {"depth": 4}, cfg,
                eval_fraction=0.3, seed=seed,
            )
            present = [c for c in rare if c in report.per_class_ap]
            assert present == list(rare), f"rare classes missing from eval split: {present}"
            rare_means[label] = float(np.mean([report.per_class_ap[c] for c in rare]))
        diffs.append(rare_means["focal"] - rare_means["ce"])
    med = statistics.median(diffs)
    _verdict(
        9,
        med > 0.0,
        "rare-class (ids 9-11) mean AP, focal minus cross-entropy, 3 seeds: "
        + ", ".join(f"{d:+.1f}" for d in diffs)
        + f"; median {med:+.1f} (need > 0)",
    )


# -- criterion 10: the whole pipeline is byte-deterministic -----------------


def test_criterion_10_pipeline_determinism(tmp_path):
    runner = CliRunner()
    gen_cfg = {
        "generator": {
            "seed": 7, "n_sessions": 3, "frames_per_session": 120,
            "stream_shapes": {"depth": [3, 3, 4], "seg": [3, 3, 4]},
            "can_dim": 4, "intra_class_variants": 2,
        }
    }

    def one_round(root: Path) -> dict[str, bytes]:
        # identical relative paths both rounds, so every recorded path matches
        with runner.isolated_filesystem(temp_dir=root):
            Path("cfg.json").write_text(json.dumps(gen_cfg))
            steps = [
                ["gen-data", "--config", "cfg.json", "--out", "data"],
                ["train", "--data", "data", "--out", "run",
                 "--variant", "fusion-all", "--epochs", "2", "--lr", "0.002",
                 "--segment-length", "30", "--lanes", "2", "--hidden-size", "8"],
                ["eval", "--data", "data", "--ckpt", "run/checkpoint.ckpt",
                 "--out", "run"],
            ]
            for step in steps:
                result = runner.invoke(cli_main, step)
                assert result.exit_code == 0, f"{step[0]}: {result.output}{result.exception}"
            return {
                str(p): p.read_bytes()
                for p in sorted(Path(".").rglob("*"))
                if p.is_file() and p.name != "cfg.json"
            }

    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = one_round(tmp_path / "a")
    second = one_round(tmp_path / "b")
    same = first == second
    n_files = len(first)
    diff = [k for k in first if first.get(k) != second.get(k)]
    _verdict(
        10,
        same and n_files > 10,
        f"gen-data/train/eval rerun: {n_files} artifacts byte-identical "
        f"(data, checkpoint, logs, reports); differing: {diff}",
    )


# -- criterion 11: on-disk formats round-trip and reject corruption ---------


def test_criterion_11_format_integrity(tmp_path):
    sessions = generate_dataset(
        GeneratorConfig(
            seed=2, n_sessions=1, frames_per_session=40,
            stream_shapes={"depth": (3, 3, 4)}, can_dim=4,
        )
    )
    sdir = tmp_path / "s"
    write_session(sessions[0], sdir)
    back = read_session(sdir)
    frames_equal = all(
        np.array_equal(a.features["depth"], b.features["depth"])
        and np.array_equal(a.can, b.can)
        and a.label == b.label
        for a, b in zip(sessions[0].frames, back.frames)
    )

    model = build_model(
        ModelConfig(
            variant=ArchitectureVariant.DEPTH_CAN,
            stream_shapes={"depth": (3, 3, 4)}, can_dim=4,
            reduce_channels={"depth": 2}, can_feature_dim=5, hidden_size=6,
        ),
        seed=0,
    )
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(model, step=5, path=ckpt)
    loaded, step = load_checkpoint(ckpt)
    ckpt_exact = step == 5 and all(
        a.tobytes() == b.tobytes()
        for (_, a), (_, b) in zip(model.state_arrays(), loaded.state_arrays())
    )

    rejections = []

    def expect(exc_type, fn):
        try:
            fn()
            rejections.append(f"missed {exc_type.__name__}")
        except exc_type:
            pass

    clipped = tmp_path / "clipped.ckpt"
    clipped.write_bytes(ckpt.read_bytes()[:-16])
    expect(ConfigMismatchError, lambda: load_checkpoint(clipped))

    bad_dtype = tmp_path / "bad_dtype"
    write_session(sessions[0], bad_dtype)
    manifest = json.loads((bad_dtype / MANIFEST_NAME).read_text())
    manifest["streams"][0]["dtype"] = "f16"
    (bad_dtype / MANIFEST_NAME).write_text(json.dumps(manifest))
    expect(UnknownDtypeError, lambda: read_session(bad_dtype))

    short = tmp_path / "short"
    write_session(sessions[0], short)
    labels = short / "labels.bin"
    labels.write_bytes(labels.read_bytes()[:-1])
    expect(ShapeMismatchError, lambda: read_session(short))

    ok = frames_equal and ckpt_exact and not rejections
    _verdict(
        11,
        ok,
        "session and checkpoint round-trips bit-exact; truncated checkpoint, "
        f"unknown dtype, and truncated stream all rejected {rejections or ''}",
    )
