import json

import pytest

from commands import check
from commands.common import EXIT_INVARIANT_FAILURE, EXIT_OK, EXIT_USAGE, UsageError, resolve_config
from main import main
from services import settings
from services.formats import load_target, read_csv_rows
from services.graph_core import load_edge_list
from services.l1pr_solver import solve
from services.sparse_vector import SparseVector

DUMBBELL = "0 1\n0 2\n1 2\n3 4\n3 5\n4 5\n2 3\n"


@pytest.fixture
def dumbbell_files(tmp_path):
    graph = tmp_path / "dumbbell.edges"
    graph.write_text(DUMBBELL)
    target = tmp_path / "dumbbell.target"
    target.write_text("0\n1\n2\n")
    return graph, target


def generate_args(prefix, *extra):
    return [
        "generate",
        "--n", "60", "--k", "10", "--p", "0.5", "--q", "0.02",
        "--background", "erdos_renyi", "--q-bg", "0.1",
        "--rng-seed", "7", "--no-timestamp", "--out", str(prefix),
        *extra,
    ]


def test_generate_is_byte_identical_for_a_fixed_seed(tmp_path):
    assert main(generate_args(tmp_path / "a")) == EXIT_OK
    assert main(generate_args(tmp_path / "b")) == EXIT_OK
    for suffix in ("edges", "target", "json"):
        assert (tmp_path / f"a.{suffix}").read_bytes() == (tmp_path / f"b.{suffix}").read_bytes()
    document = json.loads((tmp_path / "a.json").read_text())
    assert document["target"] == list(range(10))
    assert document["meta"]["rng_seed"] == 7
    assert "timestamp" not in document["meta"]
    assert "rho_delta" in document["theory"]


def test_generated_graph_and_target_files_carry_the_meta_block(tmp_path):
    assert main(generate_args(tmp_path / "g")) == EXIT_OK
    for suffix in ("edges", "target"):
        lines = (tmp_path / f"g.{suffix}").read_text().splitlines()
        assert "# tool: localpr" in lines
        assert f"# version: {settings.TOOL_VERSION}" in lines
        assert "# rng_seed: 7" in lines
        config_line = next(line for line in lines if line.startswith("# config: "))
        assert json.loads(config_line[len("# config: "):])["n"] == 60

    with open(tmp_path / "g.edges") as handle:
        g = load_edge_list(handle)
    with open(tmp_path / "g.target") as handle:
        target = load_target(handle)
    assert g.n == 60
    assert target == tuple(range(10))


def test_generate_rejects_k_above_n(tmp_path):
    args = generate_args(tmp_path / "bad")
    args[args.index("--k") + 1] = "100"
    assert main(args) == EXIT_USAGE
    assert not (tmp_path / "bad.edges").exists()


def test_generate_needs_an_output_prefix():
    assert main(["generate", "--n", "20", "--k", "5"]) == EXIT_USAGE


def test_large_rho_on_a_degree_one_seed_is_an_empty_solution(tmp_path):
    graph = tmp_path / "path.edges"
    graph.write_text("0 1\n1 2\n")
    out = tmp_path / "x.json"
    code = main(["solve", "--graph", str(graph), "--seed-node", "0", "--rho", "2.0", "--out", str(out)])
    assert code == EXIT_OK
    document = json.loads(out.read_text())
    assert document["solution"] == {}
    assert document["support_size"] == 0


@pytest.mark.parametrize(
    "extra",
    [
        [],
        ["--seed-node", "0"],
        ["--seed-node", "99", "--rho", "0.1"],
        ["--seed-node", "0", "--rho", "0.1", "--alpha", "1.5"],
        ["--seed-node", "0", "--rho", "0.1", "--algo", "appr", "--rho-grid", "0.1,0.2"],
        ["--seed-node", "0", "--algo", "stagewise"],
    ],
)
def test_solve_usage_errors(dumbbell_files, extra):
    graph, _ = dumbbell_files
    assert main(["solve", "--graph", str(graph), *extra]) == EXIT_USAGE


def test_missing_graph_file_is_a_usage_error(tmp_path):
    assert main(["solve", "--graph", str(tmp_path / "nope"), "--seed-node", "0", "--rho", "0.1"]) == EXIT_USAGE


def test_solve_sweep_eval_pipeline(tmp_path, dumbbell_files):
    graph, target = dumbbell_files
    solution = tmp_path / "x.json"
    assert main(["solve", "--graph", str(graph), "--seed-node", "0", "--rho", "0.01", "--out", str(solution)]) == EXIT_OK
    document = json.loads(solution.read_text())
    assert document["kkt"]["passed"]
    assert document["volume_bound"]["support_volume"] <= document["volume_bound"]["bound"]

    sweep = tmp_path / "sweep.csv"
    args = ["sweep", "--graph", str(graph), "--solution", str(solution), "--format", "csv", "--out", str(sweep)]
    assert main(args) == EXIT_OK
    rows = read_csv_rows(sweep.open())
    assert list(rows[0]) == ["rank", "node", "value", "prefix_conductance"]
    assert rows[0]["node"] == "0"

    scores = tmp_path / "eval.json"
    args = ["eval", "--graph", str(graph), "--target", str(target), "--solution", str(solution), "--out", str(scores)]
    assert main(args) == EXIT_OK
    evaluation = json.loads(scores.read_text())["evaluation"]
    assert evaluation["sweep"]["f1"] == pytest.approx(1.0)


def test_labeled_graph_is_relabeled_and_its_id_map_written(tmp_path):
    graph = tmp_path / "names.edges"
    graph.write_text("# friends\nann bob\nbob cy\ncy ann\ncy dee 2.0\n")
    labels = tmp_path / "names.map"
    solution = tmp_path / "x.json"
    args = ["solve", "--graph", str(graph), "--labeled", "--label-map", str(labels)]
    args += ["--seed-node", "0", "--rho", "0.01", "--out", str(solution)]
    assert main(args) == EXIT_OK
    assert labels.read_text() == "0 ann\n1 bob\n2 cy\n3 dee\n"
    assert "0" in json.loads(solution.read_text())["solution"]

    args = ["sweep", "--graph", str(graph), "--labeled", "--solution", str(solution), "--no-timestamp"]
    assert main(args) == EXIT_OK
    assert (tmp_path / "names.edges.labels").read_text() == labels.read_text()

    assert main(["solve", "--graph", str(graph), "--seed-node", "0", "--rho", "0.01"]) == EXIT_USAGE


def test_sweep_of_an_empty_solution_is_a_usage_error(tmp_path, dumbbell_files):
    graph, _ = dumbbell_files
    solution = tmp_path / "empty.json"
    solution.write_text('{"solution": {}}')
    assert main(["sweep", "--graph", str(graph), "--solution", str(solution)]) == EXIT_USAGE


def test_appr_grid_and_stagewise_outputs(tmp_path, dumbbell_files):
    graph, _ = dumbbell_files
    base = ["solve", "--graph", str(graph), "--seed-node", "0"]

    appr = tmp_path / "appr.json"
    assert main([*base, "--algo", "appr", "--rho", "0.05", "--order", "lifo", "--out", str(appr)]) == EXIT_OK
    assert json.loads(appr.read_text())["residual"]["passed"]

    grid = tmp_path / "grid.json"
    assert main([*base, "--rho-grid", "0.2,0.05", "--out", str(grid)]) == EXIT_OK
    solutions = json.loads(grid.read_text())["solutions"]
    assert [entry["rho"] for entry in solutions] == [0.2, 0.05]

    path = tmp_path / "path.csv"
    args = [*base, "--algo", "stagewise", "--eta", "0.01", "--max-iters", "20", "--format", "csv", "--out", str(path)]
    assert main(args) == EXIT_OK
    rows = read_csv_rows(path.open())
    assert list(rows[0]) == ["step", "l1_norm", "implied_rho", "node", "value"]
    assert rows[0]["step"] == "0"


def test_unregularized_solve(tmp_path, dumbbell_files):
    graph, _ = dumbbell_files
    out = tmp_path / "ppr.json"
    assert main(["solve", "--graph", str(graph), "--seed-node", "0", "--rho", "0", "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["support_size"] == 6


def test_locality_budget_exit_code(tmp_path, dumbbell_files):
    graph, _ = dumbbell_files
    args = ["solve", "--graph", str(graph), "--seed-node", "2", "--rho", "0.001", "--max-touch", "2"]
    assert main(args) == EXIT_INVARIANT_FAILURE


def test_experiment_rejects_zero_trials():
    assert main(["experiment", "--n", "50", "--k", "5", "--trials", "0"]) == EXIT_USAGE


def test_recovery_experiment_csv_is_reproducible(tmp_path):
    def run(name):
        out = tmp_path / name
        args = [
            "experiment",
            "--n", "100", "--k", "10", "--p", "0.5", "--q", "0.01",
            "--background", "erdos_renyi", "--q-bg", "0.05",
            "--alpha", "0.3", "--trials", "3", "--rng-seed", "5",
            "--format", "csv", "--no-timestamp", "--out", str(out),
        ]
        assert main(args) == EXIT_OK
        return out.read_bytes()

    first = run("a.csv")
    assert first == run("b.csv")
    rows = read_csv_rows(first.decode().splitlines(keepends=True))
    assert len(rows) == 3
    assert all(row["local"] == "True" for row in rows)


def test_gamma_table(tmp_path):
    out = tmp_path / "gamma.csv"
    args = [
        "experiment",
        "--gamma-grid", "0.86,0.91", "--trials", "2",
        "--clusters", "4", "--cluster-size", "10",
        "--format", "csv", "--out", str(out),
    ]
    assert main(args) == EXIT_OK
    rows = read_csv_rows(out.open())
    assert [row["gamma"] for row in rows] == ["0.86", "0.91"]
    assert all(0.0 <= float(row["best_f1"]) <= 1.0 for row in rows)


def test_check_corpus_and_instance(tmp_path, dumbbell_files):
    graph, _ = dumbbell_files
    report = tmp_path / "report.json"
    assert main(["check", "--corpus-size", "3", "--out", str(report)]) == EXIT_OK
    assert json.loads(report.read_text())["report"]["passed"]

    args = ["check", "--graph", str(graph), "--seed-node", "0", "--rho", "0.05", "--out", str(report)]
    assert main(args) == EXIT_OK
    assert main(["check", "--graph", str(graph), "--seed-node", "0"]) == EXIT_USAGE


def test_check_reports_a_faulty_solver(tmp_path):
    def shrunk(prob, tol):
        x, stats = solve(prob, tol)
        return SparseVector({i: 0.5 * v for i, v in x.items()}), stats

    config = resolve_config("check", {"corpus_size": 2, "out": str(tmp_path / "report.json")})
    assert check.run(config, solver=shrunk) == EXIT_INVARIANT_FAILURE


def test_config_precedence(tmp_path, monkeypatch):
    config_file = tmp_path / "run.env"
    config_file.write_text("alpha = 0.3\nrho = 0.01\n")
    monkeypatch.delenv("LOCALPR_ALPHA", raising=False)

    config = resolve_config("solve", {"config": str(config_file)})
    assert (config.alpha, config.rho) == (0.3, 0.01)

    monkeypatch.setenv("LOCALPR_ALPHA", "0.4")
    assert resolve_config("solve", {"config": str(config_file)}).alpha == 0.4
    assert resolve_config("solve", {"config": str(config_file), "alpha": 0.5}).alpha == 0.5

    with pytest.raises(UsageError):
        resolve_config("solve", {"config": str(tmp_path / "missing.env")})
