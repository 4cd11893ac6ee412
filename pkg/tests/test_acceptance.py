"""Acceptance criteria A1-A10.

Each test prints one ``[PASS]``/``[FAIL]`` line. Run directly with
``python tests/test_acceptance.py`` for the summary alone.
"""
import functools
import json
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, str(__import__("pathlib").Path(__file__).parent))
from oracles import brute_metrics  # noqa: E402

from corrdistill.correspondence import (  # noqa: E402
    LossConfig,
    distributions_from_agreements,
    ensemble_agreements,
    identity_targets,
)
from corrdistill.data_io import SyntheticConfig, generate_synthetic  # noqa: E402
from corrdistill.losses import combined_targets, distillation_loss, loss_from_targets, supervised_loss  # noqa: E402
from corrdistill.metrics import evaluate_retrieval, retrieval_metrics  # noqa: E402
from corrdistill.numerics import grad_check  # noqa: E402
from corrdistill.optim import ScheduleConfig, lr_at  # noqa: E402
from corrdistill.selfcheck import gradient_case, smooth_seeds  # noqa: E402
from corrdistill.trainer import TrainConfig, train_stage1, train_stage2  # noqa: E402

# A6/A7 run at a learning rate the small synthetic models can actually train
# with; the default 2e-5 barely moves them in 20 epochs (see README).
TREND_SCHEDULE = ScheduleConfig(lr_peak=1e-3, lr_final=5e-6, epochs=20, warmup_epochs=1)
TREND_DATA = SyntheticConfig(
    num_audios=300, captions_per_audio=5, feature_dim=32, ambiguity_rate=0.3, noise_scale=0.3,
    num_latent_concepts=16, seed=0,
)
TREND_SEEDS = (1, 2, 3)


def report(capsys, name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return passed


# -- criterion bodies, each returning (passed, detail) ------------------------

def a1_gradients():
    start = time.perf_counter()
    worst = 0.0
    # seeds with a ReLU input within 1e-3 of zero are skipped: the 1e-5 stencil
    # can cross the kink there and finite differences stop being a valid oracle
    seeds = smooth_seeds(10, dims=(8, 16, 4), batch=6)
    for seed in seeds:
        for objective in ("supervised", "distillation", "combined"):
            f, params, grad, _ = gradient_case(seed, objective, dims=(8, 16, 4), batch=6)
            worst = max(worst, grad_check(f, params, grad, epsilon=1e-5))
    elapsed = time.perf_counter() - start
    return worst < 1e-4 and elapsed < 30, f"seeds {seeds}: max rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)"


def a2_normalization():
    rng = np.random.default_rng(2)
    worst = 0.0
    for tau in (0.01, 0.05, 1.0):
        for _ in range(100):
            n_a, n_c = (int(x) for x in rng.integers(1, 40, 2))
            student = rng.uniform(-1, 1, (n_a, n_c))
            teacher = ensemble_agreements([rng.uniform(-1, 1, (n_a, n_c)) for _ in range(3)])
            for c in (student, teacher):
                q_a, q_c = distributions_from_agreements(c, tau)
                worst = max(worst, np.abs(q_a.values.sum(axis=0) - 1).max(), np.abs(q_c.values.sum(axis=1) - 1).max())
    return worst <= 1e-9, f"max |sum - 1| = {worst:.1e} (<= 1e-9)"


def a3_hard_targets():
    rng = np.random.default_rng(3)
    cfg = LossConfig()
    worst = 0.0
    for _ in range(100):
        # n=1 has zero loss, so relative error is undefined there
        n = int(rng.integers(2, 33))
        c = rng.uniform(-1, 1, (n, n))
        sup = supervised_loss(c, cfg)
        # three routes to identity targets: substituted directly, mixed at
        # lambda=1, and a teacher whose softmax saturates (off-diagonal mass
        # exp(-2/tau) ~ 4e-18, far below the tolerance)
        routes = (
            loss_from_targets(identity_targets(n), c, cfg),
            loss_from_targets(combined_targets(np.zeros((n, n)), LossConfig(lam=1.0)), c, cfg),
            distillation_loss(c, 2.0 * np.eye(n) - 1.0, cfg),
        )
        worst = max(worst, *(abs(r - sup) / abs(sup) for r in routes))
    return worst <= 1e-12, f"max rel diff {worst:.1e} over 3 target routes (<= 1e-12)"


def a4_ensemble_single():
    rng = np.random.default_rng(4)
    ok = True
    for _ in range(50):
        m = rng.standard_normal(tuple(int(x) for x in rng.integers(1, 20, 2)))
        out = ensemble_agreements([m])
        ok &= out.tobytes() == m.tobytes() and out.shape == m.shape and out is not m
    return ok, "M=1 ensemble bit-identical on 50 matrices"


def a5_metric_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n_audio = int(rng.integers(1, 51))
        per_audio = int(rng.integers(1, 6))
        targets = np.repeat(np.arange(n_audio), per_audio)
        # coarse grid forces frequent ties
        scores = rng.integers(0, 25, (targets.size, n_audio)) / 25.0
        got = retrieval_metrics(scores, targets)
        want = brute_metrics(scores.tolist(), targets.tolist())
        worst = max(worst, *(abs(getattr(got, k) - want[k]) for k in ("map_at_10", "r_at_1", "r_at_5", "r_at_10")))
    return worst <= 1e-12, f"max |diff| {worst:.1e} over 200 instances (<= 1e-12)"


@functools.lru_cache(maxsize=None)
def trend_runs():
    start = time.perf_counter()
    _, _, man = generate_synthetic(TREND_DATA)
    stage1 = [train_stage1(man, TrainConfig(schedule=TREND_SCHEDULE, seed=s))[0] for s in TREND_SEEDS]
    s2_cfg = lambda s: TrainConfig(schedule=TREND_SCHEDULE, seed=s, stage=2, loss=LossConfig(lam=0.0))
    ensemble = [train_stage2(man, s2_cfg(s), ck, stage1)[0] for s, ck in zip(TREND_SEEDS, stage1)]
    self_distilled = [train_stage2(man, s2_cfg(s), ck, [ck])[0] for s, ck in zip(TREND_SEEDS, stage1)]
    test_map = lambda cks: [100 * evaluate_retrieval(c, man, "test").map_at_10 for c in cks]
    return test_map(stage1), test_map(ensemble), test_map(self_distilled), time.perf_counter() - start


def a6_trend():
    s1, s2, _, elapsed = trend_runs()
    gain = float(np.median(s2) - np.median(s1))
    detail = (f"median mAP@10 stage1 {np.median(s1):.2f} -> M=3 {np.median(s2):.2f} "
              f"({gain:+.2f} pp, need >= +0.5), {elapsed:.0f}s (<= 600s)")
    return gain >= 0.5 and elapsed <= 600, detail


def a7_self_distillation():
    s1, _, s3, _ = trend_runs()
    delta = float(np.median(s3) - np.median(s1))
    return delta >= -0.5, f"median mAP@10 stage1 {np.median(s1):.2f} -> M=1 {np.median(s3):.2f} ({delta:+.2f} pp, need >= -0.5)"


def a8_schedule():
    details, ok = [], True
    for steps_per_epoch in (1, 7, 100):
        cfg = ScheduleConfig(steps_per_epoch=steps_per_epoch)
        peak = lr_at(cfg.warmup_steps - 1, cfg)
        last = lr_at(cfg.total_steps - 1, cfg)
        ok &= abs(peak - 2e-5) <= 1e-12 and abs(last - 1e-7) <= 1e-12
        details.append(f"{steps_per_epoch}/epoch: {peak:.3g}, {last:.3g}")
    return ok, "; ".join(details)


PIPE_TRAIN = ["--epochs", "3", "--batch", "16", "--lr-peak", "1e-3", "--lr-final", "5e-6", "--hidden", "32", "--embed-dim", "16"]


def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "corrdistill", *map(str, args)], capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"corrdistill {args[0]} exited {proc.returncode}: {proc.stderr}")
    return proc.stdout


def _pipeline(root):
    root.mkdir()
    _cli("gen-synth", "--out", root / "data", "--num-audios", "80", "--dim", "16", "--seed", "5")
    manifest = root / "data" / "manifest.json"
    teachers = []
    for seed in (1, 2):
        out = root / f"s1_{seed}.denc"
        _cli("train", "--manifest", manifest, "--stage", "1", "--out", out, "--seed", seed, *PIPE_TRAIN)
        _cli("export-agreements", "--checkpoint", out, "--manifest", manifest, "--split", "test",
             "--out", root / f"s1_{seed}.amat")
        teachers.append(str(out))
    _cli("train", "--manifest", manifest, "--stage", "2", "--out", root / "s2.denc", "--init", teachers[0],
         "--teachers", ",".join(teachers), "--seed", 1, *PIPE_TRAIN)
    _cli("evaluate", "--checkpoint", root / "s2.denc", "--manifest", manifest, "--split", "test",
         "--out", root / "metrics.json")
    names = ["s1_1.denc", "s1_2.denc", "s1_1.amat", "s1_2.amat", "s2.denc", "s2.denc.history.json", "metrics.json"]
    return {n: (root / n).read_bytes() for n in names}


def a9_determinism(tmp_root):
    first = _pipeline(tmp_root / "run1")
    second = _pipeline(tmp_root / "run2")
    same = [n for n in first if first[n] == second[n]]
    metrics = json.loads(first["metrics.json"])
    return len(same) == len(first), f"{len(same)}/{len(first)} artifacts byte-identical; test mAP@10 {metrics['map_at_10']}"


def a10_lambda_endpoints():
    _, _, man = generate_synthetic(SyntheticConfig(num_audios=60, feature_dim=16, seed=10))
    sched = ScheduleConfig(lr_peak=1e-3, lr_final=5e-6, epochs=4, warmup_epochs=1)
    base = dict(schedule=sched, batch_size=8, hidden_dims=(32,), embed_dim=16, seed=2)
    init, _ = train_stage1(man, TrainConfig(**base))
    teacher, _ = train_stage1(man, TrainConfig(**{**base, "seed": 3}))

    def recorder(store):
        return lambda **kw: store.append(kw)

    ref, got = [], []
    ck_ref, _ = train_stage1(man, TrainConfig(**base), init=init, on_step=recorder(ref))
    ck_one, _ = train_stage2(man, TrainConfig(**base, stage=2, loss=LossConfig(lam=1.0)), init, [teacher],
                             on_step=recorder(got))
    same_traj = ck_ref.equals(ck_one) and len(ref) == len(got) and all(
        a["loss"] == b["loss"] and a["agreements"].tobytes() == b["agreements"].tobytes() for a, b in zip(ref, got)
    )

    zero = []
    train_stage2(man, TrainConfig(**base, stage=2, loss=LossConfig(lam=0.0)), init, [teacher], on_step=recorder(zero))
    worst = max(abs(s["loss"] - distillation_loss(s["agreements"], s["teacher_agreements"], LossConfig())) for s in zero)
    return same_traj and worst <= 1e-12, (
        f"lambda=1 trajectory identical over {len(got)} steps: {same_traj}; "
        f"lambda=0 max |loss - L_dist| {worst:.1e} over {len(zero)} steps"
    )


# -- pytest entry points ------------------------------------------------------

def test_a1_gradient_exactness(capsys):
    assert report(capsys, "A1 gradient exactness", *a1_gradients())


def test_a2_distribution_normalization(capsys):
    assert report(capsys, "A2 distribution normalization", *a2_normalization())


def test_a3_hard_target_equivalence(capsys):
    assert report(capsys, "A3 hard-target equivalence", *a3_hard_targets())


def test_a4_single_member_ensemble(capsys):
    assert report(capsys, "A4 ensemble degeneracy", *a4_ensemble_single())


def test_a5_metric_oracle(capsys):
    assert report(capsys, "A5 metric oracle", *a5_metric_oracle())


def test_a6_synthetic_trend(capsys):
    assert report(capsys, "A6 synthetic trend (M=3)", *a6_trend())


def test_a7_self_distillation(capsys):
    assert report(capsys, "A7 self-distillation (M=1)", *a7_self_distillation())


def test_a8_schedule_endpoints(capsys):
    assert report(capsys, "A8 schedule endpoints", *a8_schedule())


def test_a9_pipeline_determinism(capsys, tmp_path):
    assert report(capsys, "A9 pipeline determinism", *a9_determinism(tmp_path))


def test_a10_lambda_endpoints(capsys):
    assert report(capsys, "A10 lambda endpoints", *a10_lambda_endpoints())


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        checks = [
            ("A1 gradient exactness", a1_gradients),
            ("A2 distribution normalization", a2_normalization),
            ("A3 hard-target equivalence", a3_hard_targets),
            ("A4 ensemble degeneracy", a4_ensemble_single),
            ("A5 metric oracle", a5_metric_oracle),
            ("A6 synthetic trend (M=3)", a6_trend),
            ("A7 self-distillation (M=1)", a7_self_distillation),
            ("A8 schedule endpoints", a8_schedule),
            ("A9 pipeline determinism", lambda: a9_determinism(Path(tmp))),
            ("A10 lambda endpoints", a10_lambda_endpoints),
        ]
        results = [report(None, name, *fn()) for name, fn in checks]
    sys.exit(0 if all(results) else 1)
