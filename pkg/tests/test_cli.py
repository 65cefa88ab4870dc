import json
from pathlib import Path

import pytest

from absanet.cli import build_parser, main, resolve_configs
from absanet.errors import ValidationError


def run(argv) -> int:
    return main(argv)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data")
    assert run(["gen-data", "--n", "100", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, data_dir) -> Path:
    out = tmp_path_factory.mktemp("run")
    code = run([
        "train", "--data", str(data_dir), "--out", str(out),
        "--epochs", "1", "--seed", "1",
        "--set", "model.d_h=16", "--set", "model.ffn_dim=32",
        "--set", "model.n_enc_layers=1", "--set", "model.n_dec_layers=1",
    ])
    assert code == 0
    return out


class TestResolveConfigs:
    def test_defaults(self):
        mcfg, tcfg, scfg, _ = resolve_configs(None, [])
        assert tcfg.alpha == 1.0 and mcfg.d_h == 64

    def test_file_and_override_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("train.alpha = 0.5\nmodel.d_h = 32\n# comment\n")
        mcfg, tcfg, _, _ = resolve_configs(str(cfg_file), ["train.alpha=0.25"])
        assert tcfg.alpha == 0.25  # --set beats file
        assert mcfg.d_h == 32

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown config key"):
            resolve_configs(None, ["train.unknown_thing=1"])

    def test_bad_bool_rejected(self):
        with pytest.raises(ValidationError):
            resolve_configs(None, ["train.enable_ap=maybe"])


class TestGenData:
    def test_split_sizes(self, data_dir):
        counts = {s: len((data_dir / f"{s}.jsonl").read_text().strip().split("\n"))
                  for s in ("train", "dev", "test")}
        assert counts == {"train": 80, "dev": 10, "test": 10}

    def test_rerun_identical(self, data_dir, tmp_path):
        out2 = tmp_path / "again"
        assert run(["gen-data", "--n", "100", "--seed", "7", "--out", str(out2)]) == 0
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl"):
            assert (out2 / name).read_bytes() == (data_dir / name).read_bytes()

    def test_manifest_records_config(self, tmp_path):
        out = tmp_path / "g"
        assert run(["gen-data", "--n", "20", "--seed", "3", "--contrastive", "0.5",
                    "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["generator"]["contrastive_fraction"] == 0.5
        assert "config_hash" in manifest

    def test_snapshot_written(self, data_dir):
        text = (data_dir / "config.resolved.txt").read_text()
        assert "synth.n_sentences = 100" in text
        assert "train.alpha" in text

    def test_dump_aux(self, tmp_path):
        out = tmp_path / "d"
        assert run(["gen-data", "--n", "12", "--seed", "1", "--out", str(out),
                    "--dump-aux", "5"]) == 0
        lines = (out / "aux_sample.jsonl").read_text().strip().split("\n")
        kinds = {json.loads(x)["kind"] for x in lines}
        assert kinds == {"tsmtd", "prd"}


class TestTrainCommand:
    def test_artifacts(self, trained_dir):
        assert (trained_dir / "model.ckpt").exists()
        log_lines = (trained_dir / "train_log.jsonl").read_text().strip().split("\n")
        assert len(log_lines) == 1  # one epoch, one record
        rec = json.loads(log_lines[0])
        assert rec["epoch"] == 0 and "dev" in rec
        vocab_lines = (trained_dir / "vocab.txt").read_text().split("\n")
        assert vocab_lines[:6] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[REL]"]

    def test_missing_data_is_io_error(self, tmp_path):
        code = run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                    "--epochs", "1"])
        assert code == 2

    def test_bad_config_is_validation_error(self, data_dir, tmp_path):
        code = run(["train", "--data", str(data_dir), "--out", str(tmp_path / "o"),
                    "--set", "train.alpha=-2", "--epochs", "1"])
        assert code == 1

    def test_alpha_zero_matches_no_aux_on_loss_trace(self, data_dir, tmp_path):
        common = ["--data", str(data_dir), "--epochs", "1", "--seed", "3",
                  "--set", "model.d_h=16", "--set", "model.ffn_dim=32",
                  "--set", "model.n_enc_layers=1", "--set", "model.n_dec_layers=1"]
        out_a = tmp_path / "alpha0"
        out_b = tmp_path / "noaux"
        assert run(["train", *common, "--alpha", "0", "--out", str(out_a)]) == 0
        assert run(["train", *common, "--no-tsmtd", "--no-prd", "--out", str(out_b)]) == 0
        rec_a = json.loads((out_a / "train_log.jsonl").read_text().strip())
        rec_b = json.loads((out_b / "train_log.jsonl").read_text().strip())
        assert rec_a["l_final"] == rec_a["l_absa"]
        assert rec_b["l_final"] == rec_b["l_absa"]
        # alpha=0 still computes and logs the aux losses; disabling skips them
        assert rec_a["l_tsmtd"] > 0.0
        assert rec_b["l_tsmtd"] == 0.0


class TestEvalCommand:
    def test_report_schema_and_determinism(self, trained_dir, data_dir, tmp_path):
        r1 = tmp_path / "r1.json"
        r2 = tmp_path / "r2.json"
        for r in (r1, r2):
            code = run(["eval", "--checkpoint", str(trained_dir / "model.ckpt"),
                        "--data", str(data_dir / "test.jsonl"), "--report", str(r)])
            assert code == 0
        assert r1.read_bytes() == r2.read_bytes()
        report = json.loads(r1.read_text())
        for key in ("ate_f1", "ote_f1", "asc_f1", "absa_f1", "sent_acc", "strata"):
            assert key in report

    def test_missing_checkpoint_io_error(self, data_dir, tmp_path):
        code = run(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                    "--data", str(data_dir / "test.jsonl")])
        assert code == 2


class TestPredictCommand:
    def test_jsonl_roundtrip(self, trained_dir, data_dir, tmp_path):
        out = tmp_path / "preds.jsonl"
        code = run(["predict", "--checkpoint", str(trained_dir / "model.ckpt"),
                    "--input", str(data_dir / "test.jsonl"), "--output", str(out)])
        assert code == 0
        in_lines = (data_dir / "test.jsonl").read_text().strip().split("\n")
        out_lines = out.read_text().strip().split("\n")
        assert len(out_lines) == len(in_lines)
        rec = json.loads(out_lines[0])
        assert set(rec) == {"tokens", "aspects", "opinions"}
        assert rec["tokens"] == json.loads(in_lines[0])["tokens"]

    def test_plain_text_input(self, trained_dir, tmp_path):
        src = tmp_path / "raw.txt"
        src.write_text("the food was good .\n")
        out = tmp_path / "p.jsonl"
        code = run(["predict", "--checkpoint", str(trained_dir / "model.ckpt"),
                    "--input", str(src), "--output", str(out)])
        assert code == 0
        rec = json.loads(out.read_text().strip())
        assert rec["tokens"] == ["the", "food", "was", "good", "."]


class TestAblateCommand:
    def test_structural_eight_rows(self, tmp_path):
        data = tmp_path / "data"
        assert run(["gen-data", "--n", "50", "--seed", "5", "--out", str(data)]) == 0
        out = tmp_path / "ab"
        code = run(["ablate", "--data", str(data), "--out", str(out),
                    "--seeds", "1", "--epochs", "1",
                    "--set", "model.d_h=16", "--set", "model.ffn_dim=32",
                    "--set", "model.n_enc_layers=1", "--set", "model.n_dec_layers=1"])
        assert code == 0
        rows = json.loads((out / "ablation.json").read_text())["rows"]
        assert len(rows) == 8
        labels = [r["label"] for r in rows]
        assert labels == ["full", "w/o AP", "w/o OP", "w/o AP & OP", "w/o TSMTD",
                          "w/o PRD", "w/o TSMTD & PRD", "w/o AP & OP & TSMTD & PRD"]
        table = (out / "ablation.txt").read_text()
        assert "w/o TSMTD & PRD" in table


class TestGradcheckCommand:
    def test_default_passes(self, capsys):
        assert run(["gradcheck"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_zero_tolerance_fails(self, capsys):
        assert run(["gradcheck", "--tol", "0"]) == 3

    def test_pass_status_stable_across_seeds(self):
        from absanet.autodiff import grad_check
        from absanet.cli import build_gradcheck_loss
        for seed in (1, 2):
            loss, tensors = build_gradcheck_loss(seed=seed)
            rep = grad_check(loss, tensors, sample_per_tensor=8, seed=seed)
            assert rep.passed, str(rep)


class TestParser:
    def test_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])
