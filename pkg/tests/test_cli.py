import json

import pytest

from ptzkit.cli import main


def run(args):
    return main(args)


class TestEncodeDecode:
    def test_encode_example(self, capsys):
        assert run(["encode", "--pan", "23", "--tilt", "-8", "--zoom", "0"]) == 0
        out = capsys.readouterr().out.strip()
        assert out == "<PAN> <+> <20> <2> <1> <TILT> <-> <5> <2> <1> <ZOOM> <END>"

    def test_decode_round_trip(self, capsys):
        run(["encode", "--pan", "23", "--tilt", "-8", "--zoom", "0"])
        tokens = capsys.readouterr().out.strip()
        assert run(["decode", tokens]) == 0
        assert capsys.readouterr().out.strip() == "23 -8 0"

    def test_negative_zoom_is_usage_error(self, capsys):
        assert run(["encode", "--pan", "0", "--tilt", "0", "--zoom", "-5"]) == 2
        assert "zoom must be non-negative" in capsys.readouterr().err

    def test_decode_bad_token_names_it(self, capsys):
        assert run(["decode", "<PAN> <WAT> <END>"]) == 2
        assert "<WAT>" in capsys.readouterr().err

    def test_decode_lenient(self, capsys):
        text = "<PAN> <+> <1> <20> <2> <TILT> <ZOOM> <END>"
        assert run(["decode", text]) == 2
        capsys.readouterr()
        assert run(["decode", text, "--lenient"]) == 0
        assert capsys.readouterr().out.strip() == "23 0 0"

    def test_custom_vocab(self, tmp_path, capsys):
        from ptzkit.codec import TokenVocab

        path = tmp_path / "vocab.tsv"
        TokenVocab.default(base_id=1000).save(path)
        assert run(["encode", "--pan", "7", "--tilt", "0", "--zoom", "0", "--vocab", str(path)]) == 0
        out = capsys.readouterr().out.strip()
        assert out == "<PAN> <+> <5> <2> <TILT> <ZOOM> <END>"


class TestSceneGen:
    def test_deterministic_bytes(self, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert run(["scene-gen", "--count", "30", "--seed", "5", "--out", str(out)]) == 0
        assert (a / "scene.jsonl").read_bytes() == (b / "scene.jsonl").read_bytes()

    def test_count_zero(self, tmp_path):
        assert run(["scene-gen", "--count", "0", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "scene.jsonl").read_text() == ""

    def test_bad_range_is_usage_error(self, tmp_path, capsys):
        assert run(["scene-gen", "--count", "5", "--azimuth", "20,-20", "--out", str(tmp_path)]) == 2
        assert run(["scene-gen", "--count", "5", "--distance=-1,2", "--out", str(tmp_path)]) == 2
        assert run(["scene-gen", "--count", "5", "--size", "1,2,3", "--out", str(tmp_path)]) == 2

    def test_no_partial_left_behind(self, tmp_path):
        run(["scene-gen", "--count", "5", "--out", str(tmp_path)])
        assert not list(tmp_path.glob("*.partial"))


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert run(["scene-gen", "--count", "80", "--seed", "7", "--out", str(out), "--quiet"]) == 0
    return out / "scene.jsonl"


class TestFitEval:
    def test_fit_rf_and_eval(self, tmp_path, scene_file, capsys):
        assert run([
            "fit", "--scene", str(scene_file), "--kind", "rf",
            "--out", str(tmp_path), "--seed", "3",
        ]) == 0
        summary = capsys.readouterr().out
        assert "R2" in summary
        model = tmp_path / "model.json"
        assert model.exists()
        assert run([
            "eval", "--scene", str(scene_file), "--policy", str(model),
            "--out", str(tmp_path), "--seed", "3",
        ]) == 0
        doc = json.loads((tmp_path / "eval.json").read_text())
        assert doc["mean_iou"] > 0.5

    def test_fit_ols_exact_pairs(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.jsonl"
        rows = []
        for i in range(-5, 6):
            for j in (-3, 0, 3):
                rows.append(
                    {
                        "features": {"x_norm": i / 10, "y_norm": j / 10, "w1": (i * i + 1) / 100},
                        "action": {"pan": 2 * i, "tilt": -j, "zoom": 10},
                    }
                )
        pairs.write_text("".join(json.dumps(r) + "\n" for r in rows))
        assert run(["fit", "--pairs", str(pairs), "--kind", "ols", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "pan=1.0000" in out

    def test_fit_requires_exactly_one_source(self, tmp_path, scene_file):
        assert run(["fit", "--out", str(tmp_path)]) == 2

    def test_eval_oracle_cr_100(self, tmp_path, scene_file, capsys):
        assert run([
            "eval", "--scene", str(scene_file), "--policy", "oracle", "--out", str(tmp_path),
        ]) == 0
        doc = json.loads((tmp_path / "eval.json").read_text())
        assert doc["cr"] == 1.0
        assert doc["mean_iou"] == pytest.approx(1.0)

    def test_eval_zero_policy(self, tmp_path, scene_file):
        assert run([
            "eval", "--scene", str(scene_file), "--policy", "zero", "--out", str(tmp_path),
        ]) == 0
        doc = json.loads((tmp_path / "eval.json").read_text())
        assert doc["cr"] == 0.0

    def test_missing_scene_is_data_error(self, tmp_path):
        assert run(["eval", "--scene", str(tmp_path / "nope.jsonl"), "--policy", "oracle"]) == 3


class TestIterate:
    def test_report_and_refined_files(self, tmp_path, scene_file, capsys):
        assert run([
            "iterate", "--scene", str(scene_file), "--rounds", "1",
            "--thresholds", "0.5", "--label-noise-angle", "4",
            "--label-noise-zoom", "20", "--seed", "11", "--out", str(tmp_path),
        ]) == 0
        rows = [json.loads(l) for l in (tmp_path / "round_report.jsonl").read_text().splitlines()]
        assert len(rows) == 2
        assert rows[1]["threshold"] == 0.5
        refined = tmp_path / "round1_refined.jsonl"
        assert refined.exists()
        first = json.loads(refined.read_text().splitlines()[0])
        assert set(first) == {"id", "instruction", "action", "tokens", "bbox_post", "w1", "w2"}

    def test_empty_filter_exit_code(self, tmp_path, scene_file):
        code = run([
            "iterate", "--scene", str(scene_file), "--rounds", "1",
            "--thresholds", "1.0", "--label-noise-angle", "30",
            "--label-noise-zoom", "300", "--seed", "2", "--out", str(tmp_path),
        ])
        assert code == 4


class TestGrpoTrain:
    def test_short_run_writes_artifacts(self, tmp_path, scene_file):
        assert run([
            "grpo-train", "--scene", str(scene_file), "--steps", "3",
            "--seed", "5", "--out", str(tmp_path),
        ]) == 0
        assert (tmp_path / "policy.json").exists()
        log = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in log] == [0, 1, 2]

    def test_policy_checkpoint_usable_by_eval(self, tmp_path, scene_file):
        run([
            "grpo-train", "--scene", str(scene_file), "--steps", "2",
            "--seed", "5", "--out", str(tmp_path),
        ])
        assert run([
            "eval", "--scene", str(scene_file),
            "--policy", str(tmp_path / "policy.json"), "--out", str(tmp_path),
        ]) == 0


class TestConfig:
    def test_config_drives_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[run]\nseed = 9\n\n[intrinsics]\nimage_w = 640\nimage_h = 480\n")
        out = tmp_path / "out"
        assert run([
            "--config", str(cfg), "scene-gen", "--count", "4", "--out", str(out),
        ]) == 0
        again = tmp_path / "out2"
        assert run(["scene-gen", "--count", "4", "--seed", "9", "--out", str(again)]) == 0
        assert (out / "scene.jsonl").read_bytes() == (again / "scene.jsonl").read_bytes()

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[run]\nsneed = 9\n")
        assert run(["--config", str(cfg), "scene-gen", "--count", "1", "--out", str(tmp_path)]) == 3

    def test_unknown_section_rejected(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[nope]\nx = 1\n")
        assert run(["--config", str(cfg), "scene-gen", "--count", "1", "--out", str(tmp_path)]) == 3

    def test_missing_config_path(self, tmp_path):
        assert run(["--config", str(tmp_path / "none.ini"), "scene-gen", "--count", "1"]) == 3

    def test_selftrain_section_drives_iterate(self, tmp_path, scene_file):
        cfg = tmp_path / "run.ini"
        cfg.write_text(
            "[run]\nseed = 11\n\n"
            "[selftrain]\nrounds = 1\nthresholds = 0.5\n"
            "label_noise_angle = 4\nlabel_noise_zoom = 20\n"
        )
        out = tmp_path / "out"
        assert run([
            "--config", str(cfg), "iterate", "--scene", str(scene_file),
            "--out", str(out), "--quiet",
        ]) == 0
        rows = [json.loads(l) for l in (out / "round_report.jsonl").read_text().splitlines()]
        assert len(rows) == 2 and rows[1]["threshold"] == 0.5

    def test_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[run]\nseed = 9\n")
        a = tmp_path / "a"
        b = tmp_path / "b"
        run(["--config", str(cfg), "scene-gen", "--count", "4", "--seed", "1", "--out", str(a)])
        run(["scene-gen", "--count", "4", "--seed", "1", "--out", str(b)])
        assert (a / "scene.jsonl").read_bytes() == (b / "scene.jsonl").read_bytes()


class TestReport:
    def test_pretty_print(self, tmp_path, capsys):
        path = tmp_path / "r.jsonl"
        path.write_text(
            json.dumps({"round": 0, "threshold": None, "mean_iou": 0.53}) + "\n"
            + json.dumps({"round": 1, "threshold": 0.7, "mean_iou": 0.81}) + "\n"
        )
        assert run(["report", str(path)]) == 0
        out = capsys.readouterr().out
        assert "round" in out and "mean_iou" in out and "0.8100" in out

    def test_empty_report(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text("")
        assert run(["report", str(path)]) == 3
