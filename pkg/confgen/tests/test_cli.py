import json

from confgen.cli import main, read_input_csv


def write_csv(path, rows, header="id,smiles,target"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


def test_read_input_csv_optional_columns(tmp_path):
    path = tmp_path / "in.csv"
    write_csv(path, ["m0,CCO,1.5", "m1,c1ccccc1,"])
    rows = read_input_csv(path)
    assert rows == [("m0", "CCO", 1.5), ("m1", "c1ccccc1", None)]
    path2 = tmp_path / "bare.csv"
    path2.write_text("smiles\nCC\n")
    assert read_input_csv(path2) == [("mol-000000", "CC", None)]


def test_export_three_molecules(tmp_path, capsys):
    csv_path = tmp_path / "in.csv"
    write_csv(csv_path, ["m0,C,0.1", "m1,CCO,0.2", "m2,c1ccccc1,0.3"])
    graphs = tmp_path / "graphs.jsonl"
    confs = tmp_path / "conformers.jsonl"
    rc = main(["--input", str(csv_path), "--out-graphs", str(graphs),
               "--out-conformers", str(confs), "--seed", "1",
               "--candidates", "10"])
    assert rc == 0
    graph_lines = graphs.read_text().splitlines()
    conf_lines = confs.read_text().splitlines()
    assert len(graph_lines) == 3
    assert 1 <= len(conf_lines) <= 3
    # every conformer has exactly num_nodes rows
    nodes = {json.loads(l)["id"]: json.loads(l)["num_nodes"]
             for l in graph_lines}
    for line in conf_lines:
        rec = json.loads(line)
        for conf in rec["conformers"]:
            assert len(conf) == nodes[rec["id"]]
    assert "3 molecules, 3 graphs" in capsys.readouterr().out


def test_parse_failure_logged_and_skipped(tmp_path, capsys):
    csv_path = tmp_path / "in.csv"
    write_csv(csv_path, ["m0,CCO,", "m1,not_a_smiles((,", "m2,CC,"])
    graphs = tmp_path / "g.jsonl"
    confs = tmp_path / "c.jsonl"
    rc = main(["--input", str(csv_path), "--out-graphs", str(graphs),
               "--out-conformers", str(confs), "--candidates", "5"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "parse failure for m1" in captured.err
    ids = [json.loads(l)["id"] for l in graphs.read_text().splitlines()]
    assert ids == ["m0", "m2"]


def test_debug_mode_emits_atomic_numbers(tmp_path):
    csv_path = tmp_path / "in.csv"
    write_csv(csv_path, ["m0,CCO,"])
    graphs = tmp_path / "g.jsonl"
    confs = tmp_path / "c.jsonl"
    assert main(["--input", str(csv_path), "--out-graphs", str(graphs),
                 "--out-conformers", str(confs), "--debug",
                 "--candidates", "5"]) == 0
    rec = json.loads(confs.read_text().splitlines()[0])
    assert rec["atomic_nums"] == [6, 6, 8]
    # cross-check against the graph file's first feature column (index = Z-1)
    grec = json.loads(graphs.read_text().splitlines()[0])
    assert [z - 1 for z in rec["atomic_nums"]] == \
        [row[0] for row in grec["node_feat"]]


def test_fixed_seed_identical_files(tmp_path):
    csv_path = tmp_path / "in.csv"
    write_csv(csv_path, ["m0,CC(C)CO,", "m1,c1ccc(O)cc1,"])
    outs = []
    for tag in ("a", "b"):
        graphs = tmp_path / f"g-{tag}.jsonl"
        confs = tmp_path / f"c-{tag}.jsonl"
        assert main(["--input", str(csv_path), "--out-graphs", str(graphs),
                     "--out-conformers", str(confs), "--seed", "5",
                     "--candidates", "10"]) == 0
        outs.append((graphs.read_bytes(), confs.read_bytes()))
    assert outs[0] == outs[1]


def test_missing_smiles_column_errors(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("name\nfoo\n")
    rc = main(["--input", str(path), "--out-graphs", str(tmp_path / "g"),
               "--out-conformers", str(tmp_path / "c")])
    assert rc == 1
    assert "smiles" in capsys.readouterr().err
