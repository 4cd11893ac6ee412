import json

import numpy as np
import pytest
from oracles import brute_metrics

from corrdistill.cli import main
from corrdistill.data_io import Checkpoint, load_manifest, read_amat, read_checkpoint, read_fmat, write_checkpoint
from corrdistill.encoder import EncoderParams, forward

FAST = ["--epochs", "2", "--batch", "8", "--lr-peak", "1e-3", "--lr-final", "5e-6", "--hidden", "16", "--embed-dim", "8"]


def lines(capsys):
    return [json.loads(l) for l in capsys.readouterr().out.splitlines()]


@pytest.fixture
def data(tmp_path, capsys):
    assert main(["gen-synth", "--out", str(tmp_path / "d"), "--num-audios", "40", "--dim", "8", "--seed", "3"]) == 0
    capsys.readouterr()
    return tmp_path / "d" / "manifest.json"


@pytest.fixture
def stage1(data, tmp_path, capsys):
    out = tmp_path / "s1.denc"
    assert main(["train", "--manifest", str(data), "--stage", "1", "--out", str(out), *FAST]) == 0
    capsys.readouterr()
    return out


class TestGenSynth:
    def test_counts(self, tmp_path, capsys):
        assert main(["gen-synth", "--out", str(tmp_path), "--num-audios", "100", "--captions-per-audio", "5"]) == 0
        assert read_fmat(tmp_path / "captions.fmat").shape[0] == 500
        assert lines(capsys)[-1]["num_captions"] == 500

    def test_byte_identical(self, tmp_path, capsys):
        for d in ("a", "b"):
            main(["gen-synth", "--out", str(tmp_path / d), "--num-audios", "30", "--seed", "7"])
        for name in ("audio.fmat", "captions.fmat", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_ambiguity(self, tmp_path, capsys):
        assert main(["gen-synth", "--out", str(tmp_path), "--ambiguity", "1.5"]) == 2
        assert "ambiguity_rate" in json.loads(capsys.readouterr().err)["message"]

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["gen-synth", "--out", str(blocker / "sub"), "--num-audios", "10"]) == 3


class TestTrain:
    def test_history_records(self, data, tmp_path, capsys):
        out = tmp_path / "m.denc"
        assert main(["train", "--manifest", str(data), "--stage", "1", "--out", str(out), *FAST, "--epochs", "3"]) == 0
        hist = json.loads((tmp_path / "m.denc.history.json").read_text())
        assert [r["epoch"] for r in hist["epochs"]] == [1, 2, 3]
        assert set(hist["epochs"][0]) == {"epoch", "train_loss", "val_map_at_10", "lr"}
        assert read_checkpoint(out).metadata["stage"] == 1

    def test_stage2_without_teachers(self, data, stage1, tmp_path, capsys):
        code = main(["train", "--manifest", str(data), "--stage", "2", "--out", str(tmp_path / "x"), "--init", str(stage1)])
        assert code == 2

    def test_stage2_three_teachers(self, data, stage1, tmp_path, capsys):
        out = tmp_path / "s2.denc"
        teachers = ",".join([str(stage1)] * 3)
        code = main(["train", "--manifest", str(data), "--stage", "2", "--out", str(out),
                     "--init", str(stage1), "--teachers", teachers, "--lambda", "0.5", *FAST])
        assert code == 0
        meta = read_checkpoint(out).metadata
        assert meta["num_teachers"] == 3 and meta["lambda"] == 0.5 and meta["stage"] == 2

    def test_missing_teacher_file(self, data, stage1, tmp_path, capsys):
        code = main(["train", "--manifest", str(data), "--stage", "2", "--out", str(tmp_path / "x"),
                     "--init", str(stage1), "--teachers", str(tmp_path / "nope.denc"), *FAST])
        assert code == 3

    def test_bad_batch(self, data, tmp_path, capsys):
        assert main(["train", "--manifest", str(data), "--stage", "1", "--out", str(tmp_path / "x"), "--batch", "1"]) == 2

    def test_numeric_abort(self, data, tmp_path, capsys):
        man = load_manifest(data)
        d = man.audio_features.shape[1]
        zero = EncoderParams([d, 8], [np.zeros((8, d))], [np.zeros(8)])
        init = tmp_path / "zero.denc"
        write_checkpoint(init, Checkpoint(zero, zero.copy()))
        code = main(["train", "--manifest", str(data), "--stage", "1", "--out", str(tmp_path / "x"),
                     "--init", str(init), "--epochs", "2", "--batch", "8"])
        assert code == 4
        assert "epoch 1" in json.loads(capsys.readouterr().err)["message"]


class TestExport:
    def test_shape_and_determinism(self, data, stage1, tmp_path, capsys):
        for name in ("a.amat", "b.amat"):
            assert main(["export-agreements", "--checkpoint", str(stage1), "--manifest", str(data),
                         "--split", "test", "--out", str(tmp_path / name)]) == 0
        man = load_manifest(data)
        n_test = man.splits["test"].size
        assert read_amat(tmp_path / "a.amat").shape == (n_test, 5 * n_test)
        assert (tmp_path / "a.amat").read_bytes() == (tmp_path / "b.amat").read_bytes()

    def test_unknown_split(self, data, stage1, tmp_path, capsys):
        assert main(["export-agreements", "--checkpoint", str(stage1), "--manifest", str(data),
                     "--split", "dev", "--out", str(tmp_path / "a.amat")]) == 2


class TestEvaluate:
    def test_matches_oracle(self, data, stage1, tmp_path, capsys):
        out = tmp_path / "m.json"
        assert main(["evaluate", "--checkpoint", str(stage1), "--manifest", str(data), "--split", "test", "--out", str(out)]) == 0
        got = json.loads(out.read_text())
        assert got["r_at_1"] <= got["r_at_5"] <= got["r_at_10"]

        man, ckpt = load_manifest(data), read_checkpoint(stage1)
        audios = list(man.splits["test"])
        queries = [j for j, a in enumerate(man.caption_to_audio) if a in audios]
        ea = forward(ckpt.audio, man.audio_features[audios])
        ec = forward(ckpt.caption, man.caption_features[queries])
        want = brute_metrics((ec @ ea.T).tolist(), [audios.index(man.caption_to_audio[j]) for j in queries])
        for key in ("map_at_10", "r_at_1", "r_at_5", "r_at_10"):
            assert got[key] == pytest.approx(100 * want[key], abs=5e-5)
        assert got["num_queries"] == len(queries)

    def test_perfect_model(self, tmp_path, capsys):
        main(["gen-synth", "--out", str(tmp_path), "--num-audios", "30", "--dim", "8",
              "--noise", "0", "--ambiguity", "0"])
        ident = EncoderParams([8, 8], [np.eye(8)], [np.zeros(8)])
        write_checkpoint(tmp_path / "id.denc", Checkpoint(ident, ident.copy()))
        main(["evaluate", "--checkpoint", str(tmp_path / "id.denc"), "--manifest", str(tmp_path / "manifest.json"),
              "--split", "test", "--out", str(tmp_path / "m.json")])
        got = json.loads((tmp_path / "m.json").read_text())
        assert [got[k] for k in ("map_at_10", "r_at_1", "r_at_5", "r_at_10")] == [100.0] * 4


class TestSelfCheck:
    def test_passes(self, capsys):
        assert main(["self-check"]) == 0
        out = lines(capsys)
        assert len(out[-1]["groups"]) >= 4 and out[-1]["passed"] is True

    def test_corrupted_gradient_fails(self, capsys):
        assert main(["self-check", "--corrupt-gradient"]) == 1
        rows = {r["check"]: r["passed"] for r in lines(capsys)[:-1]}
        assert rows["gradient/supervised"] is False and rows["metrics/oracle"] is True


def test_output_is_json_lines(data, stage1, tmp_path, capsys):
    main(["evaluate", "--checkpoint", str(stage1), "--manifest", str(data), "--split", "validation",
          "--out", str(tmp_path / "m.json")])
    assert all(isinstance(r, dict) for r in lines(capsys))
