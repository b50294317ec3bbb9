"""Command line entry points, driven through main(argv)."""
import yaml

import pytest

from conftest import GOLDEN, entry, write_script
from reprompt.cli import main
from reprompt.toy_task import best_answer, format_plan, load_toy_samples

CFG = str(GOLDEN / "run.cfg")


def golden_train_argv(out_dir):
    return [
        "train",
        "--config", CFG,
        "--prompt", str(GOLDEN / "initial_prompt.txt"),
        "--dataset", str(GOLDEN / "dataset.yaml"),
        "--script", str(GOLDEN / "script.yaml"),
        "--out", str(out_dir),
    ]


class TestTrain:
    def test_golden_run(self, tmp_path, capsys):
        assert main(golden_train_argv(tmp_path / "run")) == 0
        out = capsys.readouterr().out
        assert "final prompt: v2" in out
        assert "versions written: v0, v1, v2" in out
        assert "episodes: 6, gateway calls: 14, epochs: 2, converged: no" in out
        assert (tmp_path / "run" / "prompts" / "v2.txt").exists()

    def test_missing_prompt_file(self, tmp_path, capsys):
        argv = golden_train_argv(tmp_path / "run")
        argv[argv.index("--prompt") + 1] = str(tmp_path / "absent.txt")
        assert main(argv) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        argv = golden_train_argv(tmp_path / "run")
        argv[argv.index("--config") + 1] = str(tmp_path / "absent.cfg")
        assert main(argv) == 1
        assert "error:" in capsys.readouterr().err

    def test_scripted_backend_needs_script(self, tmp_path, capsys):
        argv = golden_train_argv(tmp_path / "run")
        i = argv.index("--script")
        del argv[i:i + 2]
        assert main(argv) == 1
        assert "needs --script" in capsys.readouterr().err

    def test_budget_exhaustion_is_engine_error(self, tmp_path, capsys):
        cfg = (GOLDEN / "run.cfg").read_text(encoding="utf-8")
        budget_cfg = tmp_path / "budget.cfg"
        budget_cfg.write_text(
            cfg.replace("seed = 42", "seed = 42\ncall_budget = 8"),
            encoding="utf-8",
        )
        argv = golden_train_argv(tmp_path / "run")
        argv[argv.index("--config") + 1] = str(budget_cfg)
        assert main(argv) == 2
        assert "engine error:" in capsys.readouterr().err


class TestResume:
    def test_resume_completed_run_uses_copies(self, tmp_path, capsys):
        assert main(golden_train_argv(tmp_path / "run")) == 0
        capsys.readouterr()
        # No --dataset/--script: the copies inside the run dir are used.
        assert main(["resume", "--config", CFG, "--out", str(tmp_path / "run")]) == 0
        out = capsys.readouterr().out
        assert "final prompt: v2" in out
        assert "converged: no" in out

    def test_resume_after_budget_cut(self, tmp_path, capsys):
        cfg = (GOLDEN / "run.cfg").read_text(encoding="utf-8")
        budget_cfg = tmp_path / "budget.cfg"
        budget_cfg.write_text(
            cfg.replace("seed = 42", "seed = 42\ncall_budget = 8"),
            encoding="utf-8",
        )
        argv = golden_train_argv(tmp_path / "run")
        argv[argv.index("--config") + 1] = str(budget_cfg)
        assert main(argv) == 2
        capsys.readouterr()
        assert main(["resume", "--config", CFG, "--out", str(tmp_path / "run")]) == 0
        out = capsys.readouterr().out
        assert "final prompt: v2" in out
        assert "gateway calls: 14" in out


class TestEval:
    def eval_script(self, tmp_path, samples, answer_fn):
        entries = [
            entry(
                [f"Task id: {s.id}\n"],
                f"My plan:\n\n{format_plan(answer_fn(s))}\n",
                roles=["user"],
            )
            for s in samples
        ]
        return write_script(tmp_path / "eval_script.yaml", entries)

    def test_all_pass(self, tmp_path, capsys):
        samples = load_toy_samples(GOLDEN / "dataset.yaml")
        script = self.eval_script(tmp_path, samples, best_answer)
        code = main([
            "eval", "--config", CFG, "--script", script,
            "--prompt", str(GOLDEN / "initial_prompt.txt"),
            "--test-set", str(GOLDEN / "dataset.yaml"),
            "--no-feedback",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "pass  toy-1 (rounds 1)" in out
        assert "passed 3/3 (100.0%), delivered 3/3 (100.0%)" in out

    def test_failing_sample_prints_detail(self, tmp_path, capsys):
        samples = load_toy_samples(GOLDEN / "dataset.yaml")

        def overspend(sample):
            # Pick the priciest option every day; these samples all bust.
            return tuple(
                max(day, key=lambda o: o.cost).id for day in sample.options
            )

        script = self.eval_script(tmp_path, samples, overspend)
        code = main([
            "eval", "--config", CFG, "--script", script,
            "--prompt", str(GOLDEN / "initial_prompt.txt"),
            "--test-set", str(GOLDEN / "dataset.yaml"),
            "--no-feedback",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "FAIL  toy-1 (rounds 1): budget exceeded by" in out
        assert "passed 0/3" in out

    def test_report_files(self, tmp_path, capsys):
        samples = load_toy_samples(GOLDEN / "dataset.yaml")
        script = self.eval_script(tmp_path, samples, best_answer)
        tsv = tmp_path / "report.tsv"
        code = main([
            "eval", "--config", CFG, "--script", script,
            "--prompt", str(GOLDEN / "initial_prompt.txt"),
            "--test-set", str(GOLDEN / "dataset.yaml"),
            "--no-feedback", "--out", str(tsv),
        ])
        assert code == 0
        assert "report written to" in capsys.readouterr().out
        header = tsv.read_text(encoding="utf-8").splitlines()[0]
        assert header.split("\t")[0] == "sample_id"

        yml = tmp_path / "report.yaml"
        script2 = write_script(
            tmp_path / "eval_script2.yaml",
            [
                entry(
                    [f"Task id: {s.id}\n"],
                    f"My plan:\n\n{format_plan(best_answer(s))}\n",
                    roles=["user"],
                )
                for s in samples
            ],
        )
        code = main([
            "eval", "--config", CFG, "--script", script2,
            "--prompt", str(GOLDEN / "initial_prompt.txt"),
            "--test-set", str(GOLDEN / "dataset.yaml"),
            "--no-feedback", "--out", str(yml),
        ])
        assert code == 0
        data = yaml.safe_load(yml.read_text(encoding="utf-8"))
        assert data["total"] == 3 and data["pass_rate"] == 1.0

    def test_trials_generate_samples(self, tmp_path, capsys):
        # Seed 42 in the config makes the trial ids deterministic.
        script = write_script(
            tmp_path / "eval_script.yaml",
            [entry(["Task id: "], "PLAN:\nDay 1: a11\n", roles=["user"])],
        )
        code = main([
            "eval", "--config", CFG, "--script", script,
            "--prompt", str(GOLDEN / "initial_prompt.txt"),
            "--trials", "2", "--no-feedback",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "toy-42" in out and "toy-43" in out

    def test_needs_test_set_or_trials(self, tmp_path, capsys):
        script = write_script(tmp_path / "s.yaml", [entry(["x"], "y")])
        code = main([
            "eval", "--config", CFG, "--script", script,
            "--prompt", str(GOLDEN / "initial_prompt.txt"),
        ])
        assert code == 1
        assert "--test-set or --trials" in capsys.readouterr().err


class TestInspect:
    def test_clean_run(self, tmp_path, capsys):
        assert main(golden_train_argv(tmp_path / "run")) == 0
        capsys.readouterr()
        assert main(["inspect", "--out", str(tmp_path / "run")]) == 0
        out = capsys.readouterr().out
        assert "InsertBefore(2)" in out
        assert "AppendStep" in out
        assert "failure_reason" in out and "helpful_thought" in out
        assert "3 version(s); hash chain and replay both check out" in out

    def test_tampered_run(self, tmp_path, capsys):
        assert main(golden_train_argv(tmp_path / "run")) == 0
        capsys.readouterr()
        v1 = tmp_path / "run" / "prompts" / "v1.txt"
        v1.write_text(v1.read_text(encoding="utf-8") + "x", encoding="utf-8")
        assert main(["inspect", "--out", str(tmp_path / "run")]) == 2
        assert "engine error:" in capsys.readouterr().err


class TestDiff:
    def test_step_block_addition(self, capsys):
        code = main([
            "diff",
            str(GOLDEN / "initial_prompt.txt"),
            str(GOLDEN / "final_prompt.txt"),
            "--config", CFG,
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "step_instructions" in out
        assert "added" in out
        assert "examples" in out

    def test_identical_files(self, capsys):
        code = main([
            "diff",
            str(GOLDEN / "final_prompt.txt"),
            str(GOLDEN / "final_prompt.txt"),
            "--config", CFG,
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "identical" in out
        assert "modified" not in out and "added" not in out

    def test_missing_file(self, tmp_path, capsys):
        code = main([
            "diff", str(tmp_path / "a.txt"), str(tmp_path / "b.txt"),
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err
