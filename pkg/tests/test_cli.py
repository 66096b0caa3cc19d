import json
import sys
from pathlib import Path

from aimcot.backend import default_spec
from aimcot.cli import main
from aimcot.trace import read_trace

from trace_fixtures import proportion_corpus, separated_group_corpus

STUB = str(Path(__file__).parent / "stub_backend.py")


def write_config(tmp_path: Path) -> Path:
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "trigger.delta = -0.5\n"
        "trigger.max_insertions = 1\n"
        "decode.min_new_tokens = 1\n"
        "decode.max_new_tokens = 6   # keep desk runs short\n",
        encoding="utf-8",
    )
    return cfg


def test_generate_writes_deterministic_trace(tmp_path):
    cfg = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        code = main([
            "generate", "--backend", "sim", "--config", str(cfg),
            "--seed", "7", "--out", str(out),
        ])
        assert code == 0
    bytes_a = (out_a / "trace-q0.jsonl").read_bytes()
    bytes_b = (out_b / "trace-q0.jsonl").read_bytes()
    assert bytes_a == bytes_b
    record = read_trace(out_a / "trace-q0.jsonl")
    assert record.header["config"]["trigger.delta"] == -0.5
    assert record.header["config"]["decode.max_new_tokens"] == 6


def test_generate_infinite_threshold_never_inserts(tmp_path):
    cfg = write_config(tmp_path)
    code = main([
        "generate", "--config", str(cfg), "--set", "trigger.delta=inf",
        "--seed", "3", "--out", str(tmp_path),
    ])
    assert code == 0
    record = read_trace(tmp_path / "trace-q0.jsonl")
    assert record.summary["insertions"] == 0
    assert not record.insertions()


def test_generate_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("AIMCOT_DECODE__MAX_NEW_TOKENS", "4")
    code = main(["generate", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 0
    record = read_trace(tmp_path / "trace-q0.jsonl")
    assert record.header["config"]["decode.max_new_tokens"] == 4
    # explicit --set beats the environment
    code = main([
        "generate", "--config", str(cfg), "--set", "decode.max_new_tokens=5",
        "--out", str(tmp_path),
    ])
    assert code == 0
    record = read_trace(tmp_path / "trace-q0.jsonl")
    assert record.header["config"]["decode.max_new_tokens"] == 5


def test_config_echo_round_trips_losslessly(tmp_path):
    cfg = write_config(tmp_path)
    overrides = ["--set", "select.k=2", "--set", "candidates.m=3"]
    code = main(["generate", "--config", str(cfg), *overrides, "--out", str(tmp_path)])
    assert code == 0
    from aimcot.config import resolve_flat

    expected = resolve_flat(cfg, environ={}, overrides=["select.k=2", "candidates.m=3"])
    record = read_trace(tmp_path / "trace-q0.jsonl")
    assert record.header["config"] == expected


def test_generate_unknown_key_exits_2(tmp_path):
    code = main(["generate", "--set", "bogus.key=1", "--out", str(tmp_path)])
    assert code == 2


def test_generate_exec_backend_same_schema(tmp_path):
    cfg = write_config(tmp_path)
    sim_out = tmp_path / "sim"
    exec_out = tmp_path / "exec"
    assert main([
        "generate", "--backend", "sim", "--config", str(cfg),
        "--seed", "7", "--out", str(sim_out),
    ]) == 0
    assert main([
        "generate", "--backend", f"exec:{sys.executable} {STUB}",
        "--config", str(cfg), "--set", "cag.enabled=false",
        "--seed", "7", "--out", str(exec_out),
    ]) == 0
    sim_rec = read_trace(sim_out / "trace-q0.jsonl")
    exec_rec = read_trace(exec_out / "trace-q0.jsonl")
    for sim_tok, exec_tok in zip(sim_rec.tokens, exec_rec.tokens):
        assert set(sim_tok) == set(exec_tok)
    assert set(sim_rec.summary) == set(exec_rec.summary)
    assert set(sim_rec.header) == set(exec_rec.header)


def test_generate_backend_failure_exit_3(tmp_path):
    code = main([
        "generate", "--backend", "exec:/no/such/backend",
        "--out", str(tmp_path),
    ])
    assert code == 3


def test_ablate_empty_modes_exit_2(tmp_path):
    assert main(["ablate", "--modes", "", "--out", str(tmp_path)]) == 2


def test_ablate_table(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = main([
        "ablate", "--modes", "aimcot,wo_dat", "--runs", "2",
        "--config", str(cfg), "--out", str(tmp_path),
    ])
    assert code == 0
    printed = capsys.readouterr().out
    assert "newline" in printed
    rows = json.loads((tmp_path / "ablate.json").read_text())["rows"]
    assert {r["mode"] for r in rows} == {"aimcot", "wo_dat"}


def test_analyze_missing_scores_exit_2(tmp_path, capsys):
    records, _ = proportion_corpus([0.0, 0.5, 1.0])
    paths = []
    for record in records:
        p = tmp_path / f"{record.question_id}.jsonl"
        record.write(p)
        paths.append(str(p))
    missing = tmp_path / "nope.tsv"
    code = main(["analyze", "--traces", *paths, "--scores", str(missing)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_analyze_single_trace_exit_4(tmp_path):
    records, scores = proportion_corpus([0.5])
    p = tmp_path / "one.jsonl"
    records[0].write(p)
    scores_path = tmp_path / "scores.tsv"
    scores_path.write_text(scores, encoding="utf-8")
    code = main(["analyze", "--traces", str(p), "--scores", str(scores_path)])
    assert code == 4


def test_analyze_fixture_corpus(tmp_path, capsys):
    records, scores = separated_group_corpus()
    for record in records:
        record.write(tmp_path / f"{record.question_id}.jsonl")
    scores_path = tmp_path / "scores.tsv"
    scores_path.write_text(scores, encoding="utf-8")
    report_path = tmp_path / "report.json"
    code = main([
        "analyze", "--traces", str(tmp_path / "*.jsonl"),
        "--scores", str(scores_path), "--json", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["group"]["mean_high"] == 1.0
    assert report["group"]["mean_low"] == 0.0
    out = capsys.readouterr().out
    assert "mean_high=1.0000" in out


def test_submod_probe_table(tmp_path, capsys):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(default_spec().to_dict()), encoding="utf-8")
    code = main([
        "submod-probe", "--n", "5", "--k-small", "2,3",
        "--sim-spec", str(spec_path), "--set", "decode.max_new_tokens=4",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "100.00%" in out


def test_render_round_trips_bboxes(tmp_path):
    cfg = write_config(tmp_path)
    assert main([
        "generate", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path),
    ]) == 0
    trace_path = tmp_path / "trace-q0.jsonl"
    svg_path = tmp_path / "overlay.svg"
    assert main([
        "render", "--trace", str(trace_path), "--svg-out", str(svg_path),
    ]) == 0
    svg = svg_path.read_text(encoding="utf-8")
    record = read_trace(trace_path)
    import re

    for ins in record.insertions():
        for region in ins["regions"]:
            x0, y0, x1, y1 = region["bbox"]
            pattern = (
                f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}"'
            )
            assert pattern in svg
    ranked = re.findall(r'data-rank="(\d+)"', svg)
    assert len(ranked) == sum(len(i["regions"]) for i in record.insertions())


def test_render_missing_trace_exit_2(tmp_path):
    assert main(["render", "--trace", str(tmp_path / "none.jsonl")]) == 2


def test_seeded_subcommands_bit_reproducible(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(default_spec().to_dict()), encoding="utf-8")
    probe_args = [
        "submod-probe", "--n", "4", "--k-small", "2", "--base-seed", "5",
        "--sim-spec", str(spec_path), "--set", "decode.max_new_tokens=4",
    ]
    ablate_args = [
        "ablate", "--modes", "aimcot", "--runs", "2", "--base-seed", "5",
        "--set", "trigger.delta=-0.5", "--set", "decode.max_new_tokens=5",
        "--set", "decode.min_new_tokens=1", "--set", "trigger.max_insertions=1",
    ]
    outputs = []
    for suffix in ("a", "b"):
        probe_json = tmp_path / f"probe-{suffix}.json"
        assert main(probe_args + ["--json", str(probe_json)]) == 0
        out_dir = tmp_path / f"ablate-{suffix}"
        assert main(ablate_args + ["--out", str(out_dir)]) == 0
        outputs.append(
            (probe_json.read_bytes(), (out_dir / "ablate.json").read_bytes())
        )
    assert outputs[0] == outputs[1]
