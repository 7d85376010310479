"""Command-line behaviour: subcommands, config layering, determinism, exit codes."""

import json

import pytest

from submix.cli import main, parse_config_file

TOY_USERS = [
    {"user_id": f"u{i}", "text": "abcdefgh" * 3} for i in range(8)
]


def write_toy_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in TOY_USERS), encoding="utf-8")
    return path


def snapshot(directory):
    return {
        p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()
    }


class TestTrain:
    def test_golden_run_and_manifest(self, tmp_path, capsys):
        corpus = write_toy_corpus(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--corpus", str(corpus), "--k", "4", "--seed", "1",
                     "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["k"] == 4
        assert len(manifest["model_files"]) == 1 + 2 * 4
        assert (out / "config.resolved").exists()
        for name in manifest["model_files"]:
            assert (out / name).exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        corpus = write_toy_corpus(tmp_path)
        out = tmp_path / "run"
        args = ["train", "--corpus", str(corpus), "--k", "2", "--seed", "7", "--out", str(out)]
        assert main(args) == 0
        first = snapshot(out)
        assert main(args) == 0
        assert snapshot(out) == first

    def test_capacity_error_exit_code(self, tmp_path, capsys):
        corpus = write_toy_corpus(tmp_path)
        code = main(["train", "--corpus", str(corpus), "--k", "5",
                     "--out", str(tmp_path / "x")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_missing_corpus_is_config_error(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "x")]) == 2


class TestPredict:
    @pytest.fixture
    def trained(self, tmp_path):
        corpus = write_toy_corpus(tmp_path)
        out = tmp_path / "model"
        main(["train", "--corpus", str(corpus), "--k", "2", "--seed", "0", "--out", str(out)])
        return out

    def test_token_stream_and_transcript(self, trained, tmp_path, capsys):
        queries = tmp_path / "queries.txt"
        queries.write_text("abc\nbcd\n\ncde\n", encoding="utf-8")
        out = tmp_path / "pred"
        code = main(["predict", "--ensemble", str(trained), "--input", str(queries),
                     "--epsilon", "2", "--budget", "100", "--seed", "3", "--out", str(out)])
        assert code == 0
        tokens = capsys.readouterr().out.strip().split("\n")
        assert len(tokens) == 3  # blank line becomes an error record, not a token
        lines = (out / "transcript.jsonl").read_text().strip().split("\n")
        assert len(lines) == 3
        record = json.loads(lines[0])
        assert set(record) == {"t", "context_hash", "lambda_star", "lambdas",
                               "charges", "remaining", "token", "stopped"}
        errors = json.loads((out / "input_errors.json").read_text())
        assert errors == [{"line": 3, "error": "empty context"}]

    def test_seeded_stream_is_reproducible(self, trained, tmp_path, capsys):
        queries = tmp_path / "queries.txt"
        queries.write_text("ab\nbc\ncd\n", encoding="utf-8")

        def run():
            out = tmp_path / "pred2"
            main(["predict", "--ensemble", str(trained), "--input", str(queries),
                  "--epsilon", "1", "--beta", "0.01", "--seed", "9", "--out", str(out)])
            return capsys.readouterr().out, (out / "transcript.jsonl").read_bytes()

        assert run() == run()

    def test_beta_zero_emits_zero_lambdas(self, trained, tmp_path, capsys):
        queries = tmp_path / "q.txt"
        queries.write_text("abc\nabc\n", encoding="utf-8")
        out = tmp_path / "pred3"
        main(["predict", "--ensemble", str(trained), "--input", str(queries),
              "--epsilon", "1", "--beta", "0", "--seed", "0", "--out", str(out)])
        capsys.readouterr()
        for line in (out / "transcript.jsonl").read_text().strip().split("\n"):
            record = json.loads(line)
            assert record["lambda_star"] == 0.0
            assert all(c == 0.0 for c in record["charges"])

    def test_bad_ensemble_dir_is_config_error(self, tmp_path):
        assert main(["predict", "--ensemble", str(tmp_path / "nope"),
                     "--input", "-", "--out", str(tmp_path / "o")]) == 2


class TestEval:
    def test_eval_writes_report(self, tmp_path, capsys):
        corpus = write_toy_corpus(tmp_path)
        model = tmp_path / "model"
        main(["train", "--corpus", str(corpus), "--k", "2", "--seed", "0", "--out", str(model)])
        heldout = tmp_path / "heldout.txt"
        heldout.write_text("abcdefgh\nabcdefgh\n", encoding="utf-8")
        out = tmp_path / "eval"
        code = main(["eval", "--ensemble", str(model), "--heldout", str(heldout),
                     "--epsilon", "inf", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "perplexity.json").read_text())
        assert report["mean_perplexity"] > 0
        assert report["epsilon"] == "inf"


class TestSweepAndAttack:
    def test_sweep_outputs_deterministic(self, tmp_path):
        out = tmp_path / "sweep"
        args = ["sweep", "--epsilons", "1,inf", "--seeds", "1", "--n-users", "8",
                "--k", "2", "--out", str(out)]
        assert main(args) == 0
        first = snapshot(out)
        assert main(args) == 0
        assert snapshot(out) == first
        header = (out / "sweep.csv").read_text().splitlines()[0]
        assert header == "mechanism,epsilon,alpha,B,k,beta,perplexity,tokens,seed"

    def test_attack_smoke_nonprivate_hits(self, tmp_path, capsys):
        out = tmp_path / "attack"
        code = main(["attack", "--m", "6", "--ell", "2", "--k", "3",
                     "--epsilon", "inf", "--beta", "inf", "--tau", "0.05",
                     "--generations", "40", "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "attack.json").read_text())
        assert payload["mean_hit_rate"] >= 0.9

    def test_config_file_with_flag_override(self, tmp_path):
        out = tmp_path / "attack2"
        cfg = tmp_path / "attack.cfg"
        cfg.write_text(
            "m = 6\nell = 2\nk = 3\nepsilon = inf\nbeta = inf\ntau = 0.05\n"
            f"generations = 10\nout = {out}\n",
            encoding="utf-8",
        )
        assert main(["attack", "--config", str(cfg), "--generations", "5"]) == 0
        resolved = parse_config_file(out / "config.resolved")
        assert resolved["generations"] == "5"  # flag wins
        assert resolved["m"] == "6"

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus_key = 1\n", encoding="utf-8")
        assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestShippedConfigs:
    def repo_config(self, name):
        from pathlib import Path

        return Path(__file__).parent.parent / "configs" / name

    def test_nonprivate_attack_config_hits(self, tmp_path):
        out = tmp_path / "np"
        assert main(["attack", "--config", str(self.repo_config("attack_nonprivate.cfg")),
                     "--seeds", "1", "--generations", "50", "--out", str(out)]) == 0
        payload = json.loads((out / "attack.json").read_text())
        assert payload["mean_hit_rate"] >= 0.9

    def test_private_attack_config_suppresses(self, tmp_path):
        out = tmp_path / "p"
        assert main(["attack", "--config", str(self.repo_config("attack_private.cfg")),
                     "--seeds", "1", "--generations", "50", "--out", str(out)]) == 0
        payload = json.loads((out / "attack.json").read_text())
        assert payload["mean_hit_rate"] <= 0.1

    def test_train_toy_config(self, tmp_path, monkeypatch):
        from pathlib import Path

        monkeypatch.chdir(Path(__file__).parent.parent)
        out = tmp_path / "toy"
        assert main(["train", "--config", "configs/train_toy.cfg", "--out", str(out)]) == 0
        assert (out / "manifest.json").exists()


class TestHaltAndHygiene:
    def test_halt_on_stop_truncates_stream(self, tmp_path, capsys):
        corpus = write_toy_corpus(tmp_path)
        model = tmp_path / "model"
        main(["train", "--corpus", str(corpus), "--k", "2", "--seed", "0", "--out", str(model)])
        capsys.readouterr()
        queries = tmp_path / "q.txt"
        queries.write_text("ab\nbc\ncd\nde\n", encoding="utf-8")
        out = tmp_path / "halt"
        # zero budget stops on the first query; with the flag the stream ends there
        assert main(["predict", "--ensemble", str(model), "--input", str(queries),
                     "--epsilon", "0", "--beta", "0.1", "--seed", "0",
                     "--halt-on-stop", "--out", str(out)]) == 0
        assert len(capsys.readouterr().out.strip().split("\n")) == 1
        assert len((out / "transcript.jsonl").read_text().strip().split("\n")) == 1

    def test_inputs_are_never_mutated(self, tmp_path, capsys):
        corpus = write_toy_corpus(tmp_path)
        before = corpus.read_bytes()
        model = tmp_path / "model"
        main(["train", "--corpus", str(corpus), "--k", "2", "--out", str(model)])
        queries = tmp_path / "q.txt"
        queries.write_text("ab\n", encoding="utf-8")
        qbytes = queries.read_bytes()
        main(["predict", "--ensemble", str(model), "--input", str(queries),
              "--epsilon", "1", "--budget", "8", "--out", str(tmp_path / "o")])
        capsys.readouterr()
        assert corpus.read_bytes() == before
        assert queries.read_bytes() == qbytes
        # outputs land only under the configured directories
        assert sorted(p.name for p in tmp_path.iterdir()) == sorted(
            ["corpus.jsonl", "model", "o", "q.txt"]
        )


class TestConvert:
    def test_random_stopping_walkthrough(self, capsys):
        assert main(["convert", "--rs", "--eps", "2", "--B", "1000", "--C", "10"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("11.21")
        assert "provenance" in out  # claim chain printed

    def test_fano_value(self, capsys):
        assert main(["convert", "--fano", "--kappa", "1", "--eps", "1", "--m", "100"]) == 0
        assert capsys.readouterr().out.startswith("0.36766")

    def test_rdp_to_dp(self, capsys):
        assert main(["convert", "--rdp-to-dp", "--eps", "2", "--alpha", "2",
                     "--delta", "1e-5"]) == 0
        assert capsys.readouterr().out.startswith("13.5129")

    def test_partition_to_user(self, capsys):
        assert main(["convert", "--partition-to-user", "--eps", "1", "--alpha", "4"]) == 0
        out = capsys.readouterr().out
        assert "alpha=2.00000" in out and "epsilon=2.50000" in out

    def test_domain_error_exit_code(self, capsys):
        assert main(["convert", "--partition-to-user", "--eps", "1", "--alpha", "2"]) == 2

    def test_claim_files_round_trip(self, tmp_path, capsys):
        saved = tmp_path / "claim.json"
        assert main(["convert", "--rs", "--eps", "2", "--B", "1000", "--C", "10",
                     "--claim-out", str(saved)]) == 0
        capsys.readouterr()
        assert main(["convert", "--rdp-to-dp", "--delta", "1e-5",
                     "--claim-in", str(saved)]) == 0
        out = capsys.readouterr().out
        # 11.2103... + ln(1e5) = 22.7233
        assert out.startswith("22.7232")
        assert '"rule": "random_stopping"' in out  # chain carries both steps

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        # a present but corrupt model file is a runtime failure, not a
        # configuration mistake
        corpus = write_toy_corpus(tmp_path)
        model = tmp_path / "model"
        main(["train", "--corpus", str(corpus), "--k", "2", "--out", str(model)])
        (model / "public.json").write_text("{broken", encoding="utf-8")
        queries = tmp_path / "q.txt"
        queries.write_text("ab\n", encoding="utf-8")
        code = main(["predict", "--ensemble", str(model), "--input", str(queries),
                     "--epsilon", "1", "--budget", "4", "--out", str(tmp_path / "o")])
        assert code == 1


class TestEnvOverride:
    def test_out_dir_env_var(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SUBMIX_OUT_DIR", str(tmp_path / "env_out"))
        assert main(["convert", "--fano", "--eps", "1", "--m", "10"]) == 0  # no out needed
        corpus = write_toy_corpus(tmp_path)
        assert main(["train", "--corpus", str(corpus), "--k", "2",
                     "--out", str(tmp_path / "ignored")]) == 0
        assert (tmp_path / "env_out" / "manifest.json").exists()
        assert not (tmp_path / "ignored").exists()
