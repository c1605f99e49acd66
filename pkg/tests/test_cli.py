import csv
import json

import pytest

from posterloop.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from posterloop.compositor import read_png
from posterloop.geometry import is_valid, load_layout


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "suite"), "--canvases", "3", "--seed", "7"]) == EXIT_OK
    assert main(["index", "build", "--corpus", str(root / "suite" / "corpus.json"),
                 "--out", str(root / "index.json")]) == EXIT_OK
    return root


FAST = ["--max-moves", "400", "--parallelism", "2"]


def test_synth_layout(work):
    suite = work / "suite"
    test = json.loads((suite / "test.json").read_text())
    assert [t["id"] for t in test] == ["c000", "c001", "c002"]
    corpus = json.loads((suite / "corpus.json").read_text())
    assert len(corpus) == 13


def test_index_partial(work, tmp_path, capsys):
    corpus = json.loads((work / "suite" / "corpus.json").read_text())
    for e in corpus:
        e["image"] = str(work / "suite" / e["image"])
        e["layout"] = str(work / "suite" / e["layout"])
    corpus.append({"id": "ghost", "image": "nowhere.png", "layout": corpus[0]["layout"]})
    m = tmp_path / "corpus.json"
    m.write_text(json.dumps(corpus))
    assert main(["index", "build", "--corpus", str(m), "--out", str(tmp_path / "i.json")]) == EXIT_PARTIAL
    assert "rejected ghost" in capsys.readouterr().err


def test_index_nothing_loadable(tmp_path):
    m = tmp_path / "corpus.json"
    m.write_text(json.dumps([{"id": "a", "image": "x.png", "layout": "y.json"}]))
    assert main(["index", "build", "--corpus", str(m), "--out", str(tmp_path / "i.json")]) == EXIT_FATAL


def test_missing_manifest_is_fatal(tmp_path, capsys):
    assert main(["index", "build", "--corpus", str(tmp_path / "no.json"), "--out", str(tmp_path / "i.json")]) == EXIT_FATAL
    assert capsys.readouterr().err.startswith("error:")


def test_generate(work, tmp_path):
    out = tmp_path / "gen"
    code = main(["generate", "--canvas", str(work / "suite" / "canvases" / "c001.png"),
                 "--index", str(work / "index.json"), "--out-dir", str(out),
                 "--synthetic-proposals", "0", *FAST])
    assert code == EXIT_OK
    layout = load_layout(out / "layout.json")
    assert is_valid(layout)
    assert read_png(out / "composite.png").width == layout.canvas_w
    trace = json.loads((out / "trace.json").read_text())
    assert trace["c001"]["proposal_source"] == "external"


def test_evaluate(work, tmp_path):
    code = main(["evaluate", "--layouts", str(work / "suite" / "corpus.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    with open(tmp_path / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[-1][0] == "mean"
    # ground-truth exemplars are disjoint
    assert float(rows[-1][1]) == 0.0


def test_composite_rejects_invalid_layout(work, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"canvas": {"width": 240, "height": 320},
                               "elements": [{"id": "a", "type": "text", "bbox": [0.9, 0.9, 0.3, 0.3]}]}))
    code = main(["composite", "--layout", str(bad), "--canvas",
                 str(work / "suite" / "canvases" / "c000.png"), "--out", str(tmp_path / "o.png")])
    assert code == EXIT_FATAL
    assert "invalid layout" in capsys.readouterr().err
    assert not (tmp_path / "o.png").exists()


def test_composite(work, tmp_path):
    code = main(["composite", "--layout", str(work / "suite" / "layouts" / "ex000.json"), "--canvas",
                 str(work / "suite" / "canvases" / "c000.png"), "--out", str(tmp_path / "o.png")])
    assert code == EXIT_OK
    assert read_png(tmp_path / "o.png").height == 320


def test_experiment_ablation(work, tmp_path, capsys):
    out = tmp_path / "exp"
    code = main(["experiment", "--test", str(work / "suite" / "test.json"), "--index", str(work / "index.json"),
                 "--out", str(out), "--ablation", "--synthetic-proposals", "1", *FAST])
    assert code == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in printed] == ["recommender", "grader", "full"]
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["max_moves"] == 400


def test_config_overrides(work, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"max_iterations": 2, "k": 2}))
    out = tmp_path / "exp"
    code = main(["experiment", "--test", str(work / "suite" / "test.json"), "--index", str(work / "index.json"),
                 "--out", str(out), "--config", str(conf), "--k", "3", "--thresholds", "0.4", "0.8", "0.7",
                 "--omega", "0.8", "0.0", "0.2", "0.1", *FAST])
    assert code == EXIT_OK
    cfg = json.loads((out / "config.json").read_text())
    assert (cfg["max_iterations"], cfg["k"]) == (2, 3)
    assert cfg["thresholds"] == {"t1": 0.4, "t2": 0.8, "t3": 0.7}
    assert cfg["omega"] == [0.8, 0.0, 0.2, 0.1]


def test_bad_config_is_fatal(work, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"no_such_key": 1}))
    code = main(["experiment", "--test", str(work / "suite" / "test.json"), "--index", str(work / "index.json"),
                 "--out", str(tmp_path / "o"), "--config", str(conf)])
    assert code == EXIT_FATAL


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["generate"])
    assert exc.value.code != 0
