import json

import pytest

from planrag import ROOT_ID, NodeId, layers, reasoning_depth
from planrag.cli import AppConfig, UsageError, main, shape_dag

from conftest import GOLDEN_QUERY


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture()
def cache_dir(tmp_path):
    return str(tmp_path / "cache")


@pytest.fixture()
def planless_script(tmp_path):
    """A scripted backend with no plan rules at all."""
    path = tmp_path / "planless.json"
    path.write_text(json.dumps({"defaults": {"IGJudge": "7"}}), encoding="utf-8")
    return str(path)


class TestAppConfig:
    def test_defaults(self):
        cfg = AppConfig()
        assert (cfg.mode, cfg.k, cfg.parallel, cfg.cache_dir) == ("Plan", 5, 2, ".planrag-cache")

    def test_file_values_apply(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"k": 9, "mode": "VanillaRAG"}), encoding="utf-8")
        cfg = AppConfig.load(str(path), {})
        assert (cfg.k, cfg.mode) == (9, "VanillaRAG")

    def test_cli_overrides_beat_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"k": 9}), encoding="utf-8")
        cfg = AppConfig.load(str(path), {"k": 3, "mode": None})
        assert cfg.k == 3
        assert cfg.mode == "Plan"  # None override leaves the default alone

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"chunk_size": 10}), encoding="utf-8")
        with pytest.raises(UsageError, match="unknown config keys"):
            AppConfig.load(str(path), {})

    def test_unreadable_file_rejected(self, tmp_path):
        with pytest.raises(UsageError, match="cannot read config"):
            AppConfig.load(str(tmp_path / "absent.json"), {})

    def test_k_must_be_positive(self):
        with pytest.raises(UsageError, match="k must be"):
            AppConfig(k=0)

    def test_store_and_endpoint_conflict(self):
        with pytest.raises(UsageError, match="not both"):
            AppConfig(store="s", retriever_endpoint="http://r")


class TestShapeDag:
    def test_chain(self):
        dag = shape_dag("chain:3")
        assert len(dag.nodes) == 4
        assert reasoning_depth(dag) == 3
        assert [len(layer) for layer in layers(dag)] == [1, 1, 1, 1]

    def test_chain_zero_is_root_only(self):
        assert set(shape_dag("chain:0").nodes) == {ROOT_ID}

    def test_layered_fans_in_to_single_sink(self):
        dag = shape_dag("layered:2,2,1")
        assert len(dag.nodes) == 6
        parents = dag.parents_of(NodeId(3, 1))
        assert parents == (NodeId(2, 1), NodeId(2, 2))
        # middle layer stays width-aligned: one parent each
        assert dag.parents_of(NodeId(2, 1)) == (NodeId(1, 1),)
        assert dag.parents_of(NodeId(2, 2)) == (NodeId(1, 2),)

    def test_layered_growing_layer_reuses_parents(self):
        dag = shape_dag("layered:1,3,1")
        for j in range(1, 4):
            assert dag.parents_of(NodeId(2, j)) == (NodeId(1, 1),)

    @pytest.mark.parametrize(
        "spec",
        ["chain:x", "layered:2,2", "layered:0,1", "pyramid:3", "layered:a,1"],
    )
    def test_bad_specs_rejected(self, spec):
        with pytest.raises(UsageError):
            shape_dag(spec)


class TestIngest:
    def test_ingests_fixture_corpus(self, tmp_path, fixtures_dir, capsys):
        store = tmp_path / "store"
        code = run_cli("ingest", "--corpus", str(fixtures_dir / "corpus.jsonl"), "--store", str(store))
        assert code == 0
        assert "ingested 8 articles" in capsys.readouterr().out
        assert (store / "manifest.json").exists()

    def test_missing_corpus_is_usage_error(self, tmp_path, capsys):
        code = run_cli("ingest", "--corpus", str(tmp_path / "nope.jsonl"), "--store", str(tmp_path / "s"))
        assert code == 2
        assert "cannot read corpus" in capsys.readouterr().err

    def test_bad_corpus_line_reports_lineno(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text('{"id": "a", "text": "fine"}\n{"id": "b"}\n', encoding="utf-8")
        code = run_cli("ingest", "--corpus", str(corpus), "--store", str(tmp_path / "s"))
        assert code == 2
        assert ":2: bad corpus line" in capsys.readouterr().err

    def test_duplicate_ids_warn_but_succeed(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            '{"id": "a", "text": "first version"}\n{"id": "a", "text": "second version"}\n',
            encoding="utf-8",
        )
        code = run_cli("ingest", "--corpus", str(corpus), "--store", str(tmp_path / "s"))
        assert code == 0
        assert "warning" in capsys.readouterr().err


class TestPlan:
    def test_query_prints_plan_json(self, golden_script_path, cache_dir, capsys):
        code = run_cli(
            "plan", "--query", GOLDEN_QUERY, "--backend", str(golden_script_path),
            "--cache-dir", cache_dir,
        )
        assert code == 0
        captured = capsys.readouterr()
        doc = json.loads(captured.out)
        assert doc["original_query"] == GOLDEN_QUERY
        assert len(doc["nodes"]) == 4
        assert "depth 3: 1 (100.0%)" in captured.err

    def test_cache_hit_survives_planless_backend(self, golden_script_path, planless_script, cache_dir, capsys):
        assert run_cli(
            "plan", "--query", GOLDEN_QUERY, "--backend", str(golden_script_path),
            "--cache-dir", cache_dir,
        ) == 0
        capsys.readouterr()
        # second invocation has no plan script; only the cache can answer
        code = run_cli(
            "plan", "--query", GOLDEN_QUERY, "--backend", planless_script, "--cache-dir", cache_dir
        )
        captured = capsys.readouterr()
        assert code == 0
        assert "(cache hit)" in captured.err
        assert len(json.loads(captured.out)["nodes"]) == 4

    def test_no_cache_skips_read_and_write(self, golden_script_path, planless_script, cache_dir, capsys):
        assert run_cli(
            "plan", "--query", GOLDEN_QUERY, "--backend", str(golden_script_path),
            "--cache-dir", cache_dir, "--no-cache",
        ) == 0
        capsys.readouterr()
        code = run_cli(
            "plan", "--query", GOLDEN_QUERY, "--backend", planless_script, "--cache-dir", cache_dir
        )
        assert code == 2  # nothing was cached, and this backend cannot plan
        assert "error" in capsys.readouterr().err

    def test_dataset_mode_writes_jsonl(self, fixtures_dir, golden_script_path, cache_dir, tmp_path, capsys):
        out = tmp_path / "plans.jsonl"
        code = run_cli(
            "plan", "--dataset", str(fixtures_dir / "dataset.jsonl"),
            "--backend", str(golden_script_path), "--cache-dir", cache_dir, "--out", str(out),
        )
        assert code == 0
        rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert [r["id"] for r in rows] == ["golden", "paris", "author2hop"]
        assert "depth stats:" in capsys.readouterr().err

    def test_dataset_planner_failure_is_per_item(self, golden_script_path, cache_dir, tmp_path, capsys):
        dataset = tmp_path / "data.jsonl"
        dataset.write_text(
            json.dumps({"id": "golden", "question": GOLDEN_QUERY, "answers": ["1967"]})
            + "\n"
            + json.dumps({"id": "weird", "question": "Unplannable question?", "answers": ["x"]})
            + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "plans.jsonl"
        code = run_cli(
            "plan", "--dataset", str(dataset), "--backend", str(golden_script_path),
            "--cache-dir", cache_dir, "--out", str(out),
        )
        assert code == 1
        captured = capsys.readouterr()
        assert "item weird: planner failed" in captured.err
        rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert [r["id"] for r in rows] == ["golden"]


class TestRun:
    def run_fixture_dataset(self, fixtures_dir, golden_script_path, store_dir, tmp_path, **extra):
        out = tmp_path / "records.jsonl"
        argv = [
            "run",
            "--dataset", str(fixtures_dir / "dataset.jsonl"),
            "--mode", "PlanSubQ",
            "--backend", str(golden_script_path),
            "--store", str(store_dir),
            "--out", str(out),
            "--cache-dir", str(tmp_path / "cache"),
        ] + list(extra.get("argv", []))
        return run_cli(*argv), out

    def test_runs_dataset_end_to_end(self, fixtures_dir, golden_script_path, store_dir, tmp_path, capsys):
        code, out = self.run_fixture_dataset(fixtures_dir, golden_script_path, store_dir, tmp_path)
        assert code == 0
        rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert [r["id"] for r in rows] == ["golden", "paris", "author2hop"]
        assert all(r["status"] == "ok" for r in rows)
        assert "1967" in rows[0]["final_answer"]
        assert "wrote 3 records" in capsys.readouterr().err

    def test_resume_skips_existing_ids(self, fixtures_dir, golden_script_path, store_dir, tmp_path, capsys):
        code, out = self.run_fixture_dataset(fixtures_dir, golden_script_path, store_dir, tmp_path)
        assert code == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        out.write_text(lines[0] + "\n", encoding="utf-8")  # simulate a killed run
        capsys.readouterr()
        code, out = self.run_fixture_dataset(
            fixtures_dir, golden_script_path, store_dir, tmp_path, argv=["--resume"]
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "resuming: 1 records present, 2 to go" in captured.err
        rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert [r["id"] for r in rows] == ["golden", "paris", "author2hop"]

    def test_failing_item_exits_partial(self, planless_script, tmp_path, capsys):
        dataset = tmp_path / "data.jsonl"
        dataset.write_text(
            json.dumps({"id": "x", "question": "anything?", "answers": ["y"]}) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "records.jsonl"
        code = run_cli(
            "run", "--dataset", str(dataset), "--mode", "VanillaLLM",
            "--backend", planless_script, "--out", str(out),
            "--cache-dir", str(tmp_path / "cache"),
        )
        assert code == 1
        row = json.loads(out.read_text(encoding="utf-8"))
        assert row["status"] == "error"
        assert "1 not ok" in capsys.readouterr().err

    def test_retrieving_mode_requires_retriever(self, fixtures_dir, golden_script_path, tmp_path, capsys):
        code = run_cli(
            "run", "--dataset", str(fixtures_dir / "dataset.jsonl"), "--mode", "Plan",
            "--backend", str(golden_script_path), "--out", str(tmp_path / "r.jsonl"),
            "--cache-dir", str(tmp_path / "cache"),
        )
        assert code == 2
        assert "retrieves" in capsys.readouterr().err

    def test_unknown_mode_is_usage_error(self, fixtures_dir, golden_script_path, store_dir, tmp_path, capsys):
        code = run_cli(
            "run", "--dataset", str(fixtures_dir / "dataset.jsonl"), "--mode", "Turbo",
            "--backend", str(golden_script_path), "--store", str(store_dir),
            "--out", str(tmp_path / "r.jsonl"), "--cache-dir", str(tmp_path / "cache"),
        )
        assert code == 2


class TestEval:
    @pytest.fixture()
    def records_path(self, fixtures_dir, golden_script_path, store_dir, tmp_path):
        out = tmp_path / "records.jsonl"
        code = run_cli(
            "run", "--dataset", str(fixtures_dir / "dataset.jsonl"), "--mode", "PlanSubQ",
            "--backend", str(golden_script_path), "--store", str(store_dir),
            "--out", str(out), "--cache-dir", str(tmp_path / "cache"),
        )
        assert code == 0
        return out

    def test_prints_report(self, fixtures_dir, records_path, capsys):
        code = run_cli("eval", "--records", str(records_path), "--dataset", str(fixtures_dir / "dataset.jsonl"))
        assert code == 0
        out = capsys.readouterr().out
        assert "accuracy         1.0000" in out
        assert "precision" in out  # every fixture item has gold sentences

    def test_no_pr_flag_suppresses_pr(self, fixtures_dir, records_path, capsys):
        code = run_cli(
            "eval", "--records", str(records_path), "--dataset", str(fixtures_dir / "dataset.jsonl"), "--no-pr"
        )
        assert code == 0
        assert "precision" not in capsys.readouterr().out

    def test_ig_curve_with_scripted_judge(self, fixtures_dir, records_path, planless_script, capsys):
        code = run_cli(
            "eval", "--records", str(records_path), "--dataset", str(fixtures_dir / "dataset.jsonl"),
            "--ig", "--judge", planless_script,
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "info gain" in out
        assert "d0: 7.00" in out and "d3: 7.00" in out

    def test_out_writes_report_json(self, fixtures_dir, records_path, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        code = run_cli(
            "eval", "--records", str(records_path), "--dataset", str(fixtures_dir / "dataset.jsonl"),
            "--out", str(report_path),
        )
        assert code == 0
        doc = json.loads(report_path.read_text(encoding="utf-8"))
        assert doc["n"] == 3 and doc["accuracy"] == 1.0

    def test_id_mismatch_is_usage_error(self, records_path, tmp_path, capsys):
        dataset = tmp_path / "other.jsonl"
        dataset.write_text(
            json.dumps({"id": "different", "question": "q", "answers": ["a"]}) + "\n", encoding="utf-8"
        )
        code = run_cli("eval", "--records", str(records_path), "--dataset", str(dataset))
        assert code == 2
        assert "do not join" in capsys.readouterr().err


class TestBench:
    def test_chain_has_unit_speedup(self, capsys):
        code = run_cli("bench", "--shape", "chain:2", "--delay", "0.01")
        assert code == 0
        out = capsys.readouterr().out
        assert "speedup 1.0000" in out
        assert "3 nodes, depth 2" in out

    def test_layered_shape_speeds_up(self, capsys):
        code = run_cli("bench", "--shape", "layered:2,1", "--delay", "0.01")
        assert code == 0
        out = capsys.readouterr().out
        assert "speedup 1.5000" in out
        assert "per-node context tokens:" in out

    def test_records_summary_table(self, fixtures_dir, golden_script_path, store_dir, tmp_path, capsys):
        records = tmp_path / "records.jsonl"
        assert run_cli(
            "run", "--dataset", str(fixtures_dir / "dataset.jsonl"), "--mode", "PlanSubQ",
            "--backend", str(golden_script_path), "--store", str(store_dir),
            "--out", str(records), "--cache-dir", str(tmp_path / "cache"),
        ) == 0
        capsys.readouterr()
        code = run_cli("bench", "--records", str(records))
        assert code == 0
        out = capsys.readouterr().out
        assert "mode" in out and "PlanSubQ" in out

    def test_bad_shape_is_usage_error(self, capsys):
        assert run_cli("bench", "--shape", "spiral:3") == 2


class TestMainPlumbing:
    def test_config_file_flows_into_commands(self, tmp_path, golden_script_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps({"backend": str(golden_script_path), "cache_dir": str(tmp_path / "c")}),
            encoding="utf-8",
        )
        code = run_cli("--config", str(cfg), "plan", "--query", GOLDEN_QUERY)
        assert code == 0
        assert len(json.loads(capsys.readouterr().out)["nodes"]) == 4

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"banana": 1}), encoding="utf-8")
        code = run_cli("--config", str(cfg), "bench", "--shape", "chain:1")
        assert code == 2

    def test_missing_subcommand_is_argparse_error(self):
        with pytest.raises(SystemExit) as err:
            run_cli()
        assert err.value.code == 2

    def test_missing_backend_script_exits_2(self, tmp_path, capsys):
        code = run_cli(
            "plan", "--query", "q?", "--backend", str(tmp_path / "absent.json"),
            "--cache-dir", str(tmp_path / "cache"),
        )
        assert code == 2
        assert "cannot load scripted backend" in capsys.readouterr().err
