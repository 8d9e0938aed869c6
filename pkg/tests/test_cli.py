"""End-to-end tests for the command-line interface.

Most tests call main() in-process and check exit codes plus captured
output; one subprocess test confirms the module entry point works.
"""

import filecmp
import json
import os
import subprocess
import sys

import pytest

from vqaprog.cli import (
    EXIT_BACKEND,
    EXIT_CONFIG,
    EXIT_DATASET,
    EXIT_OK,
    EXIT_PARSE,
    ConfigError,
    load_config,
    main,
)
from vqaprog.fixtures import generate_corpus, write_corpus

from tests.programs import BENCH_PROGRAM


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-corpus")
    corpus = generate_corpus(5, 12, num_shot_examples=8)
    write_corpus(corpus, root, seed=5)
    return root


def run_config_path(corpus_dir) -> str:
    return str(corpus_dir / "run.toml")


def write_config(path, corpus_dir, **overrides) -> str:
    """Standard oracle config with absolute paths; overrides replace whole lines."""
    lines = {
        "dataset_path": f'path = "{corpus_dir}/instances.jsonl"',
        "store_path": f'path = "{corpus_dir}/examples.jsonl"',
        "scenes": f'scenes = "{corpus_dir}/scenes.json"',
        "programs": f'programs = "{corpus_dir}/programs.json"',
        "engine": "",
        "mode": 'mode = "codevqa"',
    }
    lines.update(overrides)
    path.write_text(
        "\n".join(
            [
                "[dataset]",
                lines["dataset_path"],
                'format = "normalized"',
                "[store]",
                lines["store_path"],
                "[backends]",
                'kind = "oracle"',
                lines["scenes"],
                lines["programs"],
                lines["engine"],
                "[run]",
                lines["mode"],
                "",
            ]
        )
    )
    return str(path)


class TestEval:
    def test_oracle_run_reports_perfect_accuracy(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(
            ["eval", "--config", run_config_path(corpus_dir), "--output", str(out)]
        )
        captured = capsys.readouterr()
        assert code == EXIT_OK
        assert "accuracy 1.000 (12/12)" in captured.out
        assert "by question type" in captured.out
        assert "by number of images" in captured.out
        report = json.loads((out / "report.json").read_text())
        assert report["total"] == 12
        assert report["correct"] == 12

    def test_baseline_flag_recorded_in_manifest(self, corpus_dir, tmp_path):
        out = tmp_path / "out"
        code = main(
            [
                "eval",
                "--config", run_config_path(corpus_dir),
                "--mode", "baseline-always-fallback",
                "--output", str(out),
            ]
        )
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["mode"] == "baseline-always-fallback"

    def test_flag_overrides_beat_config_values(self, corpus_dir, tmp_path):
        out = tmp_path / "out"
        code = main(
            [
                "eval",
                "--config", run_config_path(corpus_dir),
                "--seed", "99",
                "--workers", "1",
                "--output", str(out),
            ]
        )
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["run_seed"] == 99
        assert manifest["workers"] == 1

    def test_soft_flag_adds_consensus_score(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(
            [
                "eval",
                "--config", run_config_path(corpus_dir),
                "--soft",
                "--output", str(out),
            ]
        )
        assert code == EXIT_OK
        assert "soft score" in capsys.readouterr().out
        report = json.loads((out / "report.json").read_text())
        assert report["soft_score"] is not None

    def test_missing_store_path_exits_2_naming_field(self, corpus_dir, tmp_path, capsys):
        config = write_config(
            tmp_path / "run.toml", corpus_dir,
            store_path='path = "no-such-store.jsonl"',
        )
        code = main(["eval", "--config", config, "--output", str(tmp_path / "o")])
        captured = capsys.readouterr()
        assert code == EXIT_CONFIG
        assert "[store] path" in captured.err
        assert "no-such-store.jsonl" in captured.err
        assert "Traceback" not in captured.err

    def test_malformed_dataset_exits_3(self, corpus_dir, tmp_path, capsys):
        broken = tmp_path / "instances.jsonl"
        broken.write_text('not json at all\n')
        config = write_config(
            tmp_path / "run.toml", corpus_dir,
            dataset_path=f'path = "{broken}"',
        )
        code = main(["eval", "--config", config, "--output", str(tmp_path / "o")])
        captured = capsys.readouterr()
        assert code == EXIT_DATASET
        assert "line 1" in captured.err
        assert "Traceback" not in captured.err

    def test_module_entry_point_runs(self, corpus_dir, tmp_path):
        out = tmp_path / "out"
        proc = subprocess.run(
            [
                sys.executable, "-m", "vqaprog.cli",
                "eval",
                "--config", run_config_path(corpus_dir),
                "--output", str(out),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == EXIT_OK, proc.stderr
        assert "accuracy 1.000" in proc.stdout


class TestAsk:
    def test_oracle_scene_answer_and_program_printed(self, corpus_dir, tmp_path, capsys):
        scenes = json.loads((corpus_dir / "scenes.json").read_text())
        ref = scenes[0]["image_ref"]
        name = scenes[0]["objects"][0]["name"]
        code = main(
            [
                "ask",
                "--config", run_config_path(corpus_dir),
                "--output", str(tmp_path / "out"),
                f"Is there a {name} in the image?",
                ref,
            ]
        )
        captured = capsys.readouterr()
        assert code == EXIT_OK
        assert "answer: yes" in captured.out
        assert "query(img" in captured.out
        trace_path = tmp_path / "out" / "traces" / "ask-0.json"
        assert trace_path.exists()
        trace = json.loads(trace_path.read_text())
        assert trace["answer"] == "yes"

    def test_unreachable_backend_exits_4(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(
            "\n".join(
                [
                    "[backends]",
                    'kind = "http"',
                    'code_lm = "http://127.0.0.1:9/v"',
                    'vision = "http://127.0.0.1:9/v"',
                    'answer_lm = "http://127.0.0.1:9/v"',
                    "",
                ]
            )
        )
        code = main(
            [
                "ask",
                "--config", str(config),
                "--output", str(tmp_path / "out"),
                "Is there a dog?",
                "img-0",
            ]
        )
        captured = capsys.readouterr()
        assert code == EXIT_BACKEND
        assert "backend error" in captured.err
        assert "Traceback" not in captured.err


class TestParse:
    def test_known_good_program_prints_tree(self, tmp_path, capsys):
        source = tmp_path / "bench.txt"
        source.write_text(BENCH_PROGRAM)
        code = main(["parse", str(source)])
        captured = capsys.readouterr()
        assert code == EXIT_OK
        assert "Call open_image" in captured.out
        assert "Call query" in captured.out

    def test_json_output_round_trips(self, tmp_path, capsys):
        source = tmp_path / "bench.txt"
        source.write_text(BENCH_PROGRAM)
        code = main(["parse", "--json", str(source)])
        captured = capsys.readouterr()
        assert code == EXIT_OK
        tree = json.loads(captured.out)
        assert tree["node"] == "block"

    def test_forbidden_construct_exits_5_with_diagnostic(self, tmp_path, capsys):
        source = tmp_path / "bad.txt"
        source.write_text("while True: pass\n")
        code = main(["parse", str(source)])
        captured = capsys.readouterr()
        assert code == EXIT_PARSE
        assert "while" in captured.err
        assert "Traceback" not in captured.err

    def test_unreadable_file_is_a_config_error(self, tmp_path, capsys):
        code = main(["parse", str(tmp_path / "absent.txt")])
        assert code == EXIT_CONFIG
        assert "absent.txt" in capsys.readouterr().err


class TestFixturesGen:
    def test_same_seed_writes_identical_trees(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["fixtures", "gen", "--seed", "7", "--n", "20", "--output", str(a)]) == EXIT_OK
        assert main(["fixtures", "gen", "--seed", "7", "--n", "20", "--output", str(b)]) == EXIT_OK
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert mismatch == [] and errors == []

    def test_generated_corpus_evaluates_clean(self, tmp_path, capsys):
        gen = tmp_path / "gen"
        assert main(["fixtures", "gen", "--seed", "2", "--n", "6", "--output", str(gen)]) == EXIT_OK
        capsys.readouterr()
        code = main(
            ["eval", "--config", str(gen / "run.toml"), "--output", str(tmp_path / "out")]
        )
        assert code == EXIT_OK
        assert "accuracy 1.000" in capsys.readouterr().out


class TestConfigLoading:
    def test_environment_interpolation_resolves_paths(self, corpus_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("VQAPROG_TEST_CORPUS", str(corpus_dir))
        config = tmp_path / "run.toml"
        config.write_text(
            "\n".join(
                [
                    "[dataset]",
                    'path = "${ENV:VQAPROG_TEST_CORPUS}/instances.jsonl"',
                    "[backends]",
                    'kind = "oracle"',
                    'scenes = "${ENV:VQAPROG_TEST_CORPUS}/scenes.json"',
                    "",
                ]
            )
        )
        loaded = load_config(config)
        assert loaded.dataset["path"] == str(corpus_dir / "instances.jsonl")

    def test_missing_environment_variable_is_named(self, tmp_path, monkeypatch):
        monkeypatch.delenv("VQAPROG_ABSENT_VAR", raising=False)
        config = tmp_path / "run.toml"
        config.write_text(
            '[dataset]\npath = "${ENV:VQAPROG_ABSENT_VAR}/x.jsonl"\n[backends]\nkind = "oracle"\nscenes = "s.json"\n'
        )
        with pytest.raises(ConfigError, match="VQAPROG_ABSENT_VAR"):
            load_config(config)

    def test_unknown_engine_key_rejected(self, corpus_dir, tmp_path):
        config = write_config(
            tmp_path / "run.toml", corpus_dir,
            engine="[engine]\nnum_code_shots = 6\ntypo_key = 1",
        )
        with pytest.raises(ConfigError, match="typo_key"):
            load_config(config)

    def test_bad_mode_rejected(self, corpus_dir, tmp_path, capsys):
        config = write_config(
            tmp_path / "run.toml", corpus_dir,
            mode='mode = "nonsense"',
        )
        code = main(["eval", "--config", config, "--output", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        assert "nonsense" in capsys.readouterr().err

    def test_canonical_form_reparses_equal(self, corpus_dir, tmp_path):
        first = load_config(run_config_path(corpus_dir))
        canonical = tmp_path / "canonical.toml"
        canonical.write_text(first.canonical_toml())
        second = load_config(canonical)
        assert second.dataset == first.dataset
        assert second.store_path == first.store_path
        assert second.backends == first.backends
        assert second.engine_overrides == first.engine_overrides
        assert second.run == first.run
        assert second.canonical_toml() == first.canonical_toml()

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        code = main(["eval", "--config", str(tmp_path / "nope.toml"), "--output", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert "nope.toml" in capsys.readouterr().err
