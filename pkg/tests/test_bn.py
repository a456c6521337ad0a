"""Network construction, exact inference, sampling, and fitting."""

import itertools

import numpy as np
import pytest

from bnstudy.bn import (
    Cpt,
    Dag,
    Dataset,
    NetworkError,
    VariableSpec,
    ZeroEvidenceError,
    all_assignments,
    bn_predict,
    build_network,
    fit_mle_k2,
    forward_sample,
    free_parameter_count,
    joint_probability,
    load_dataset_csv,
    load_network,
    network_from_dict,
    network_to_dict,
    save_dataset_csv,
    save_network,
    topological_order,
    variable_elimination,
)


def binary(name):
    return VariableSpec(name, ("no", "yes"))


class TestConstruction:
    def test_asia_has_20_free_parameters(self, asia):
        assert free_parameter_count(asia) == 20

    def test_single_binary_variable(self):
        net = build_network([binary("A")], [], [Cpt("A", (), np.array([[0.5, 0.5]]))])
        assert net.names == ("A",)

    def test_two_node_cycle_rejected(self):
        variables = [binary("A"), binary("B")]
        cpts = [
            Cpt("A", ("B",), np.array([[0.5, 0.5], [0.5, 0.5]])),
            Cpt("B", ("A",), np.array([[0.5, 0.5], [0.5, 0.5]])),
        ]
        with pytest.raises(NetworkError, match="cycle"):
            build_network(variables, [("A", "B"), ("B", "A")], cpts)

    def test_unnormalized_row_rejected(self):
        with pytest.raises(NetworkError, match="sums to"):
            build_network([binary("A")], [], [Cpt("A", (), np.array([[0.6, 0.6]]))])

    def test_undeclared_edge_endpoint_rejected(self):
        with pytest.raises(NetworkError, match="undeclared"):
            Dag([binary("A")], [("A", "B")])

    def test_cpt_parent_mismatch_rejected(self):
        variables = [binary("A"), binary("B")]
        cpts = [
            Cpt("A", (), np.array([[0.5, 0.5]])),
            Cpt("B", (), np.array([[0.5, 0.5]])),  # DAG says B has parent A
        ]
        with pytest.raises(NetworkError, match="parents"):
            build_network(variables, [("A", "B")], cpts)

    def test_duplicate_state_labels_rejected(self):
        with pytest.raises(NetworkError, match="duplicate"):
            VariableSpec("A", ("x", "x"))

    def test_self_loop_rejected(self):
        with pytest.raises(NetworkError, match="self-loop"):
            Dag([binary("A")], [("A", "A")])


class TestTopologicalOrder:
    def test_edgeless_keeps_declaration_order(self):
        dag = Dag([binary("C"), binary("A"), binary("B")], [])
        assert topological_order(dag) == ("C", "A", "B")

    def test_chain_is_forced(self):
        dag = Dag([binary("C"), binary("B"), binary("A")], [("A", "B"), ("B", "C")])
        assert topological_order(dag) == ("A", "B", "C")

    def test_asia_parents_precede_children(self, asia):
        order = topological_order(asia.dag)
        position = {n: i for i, n in enumerate(order)}
        for parent, child in asia.dag.edges:
            assert position[parent] < position[child]


class TestJointProbability:
    def test_product_of_independent_marginals(self, two_independent_binaries):
        p = joint_probability(two_independent_binaries, {"X": 1, "Y": 1})
        assert p == pytest.approx(0.3 * 0.6)

    def test_joint_normalizes(self, asia):
        total = sum(joint_probability(asia, a) for a in all_assignments(asia))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_asia_specific_assignment_by_hand(self, asia):
        # All-"no" assignment: product of the first column of every root/row-0 CPT.
        a = {n: 0 for n in asia.names}
        expected = 0.99 * 0.99 * 0.5 * 0.99 * 0.7 * 0.95 * 0.9
        assert joint_probability(asia, a) == pytest.approx(expected, rel=1e-12)

    def test_incomplete_assignment_rejected(self, asia):
        with pytest.raises(ValueError, match="missing"):
            joint_probability(asia, {"asia": 0})


def brute_force_conditional(net, evidence, target):
    """Enumeration oracle: sums joint_probability over all completions."""
    card = net.dag.cardinality(target)
    acc = np.zeros(card)
    free = [n for n in net.names if n not in evidence and n != target]
    for states in itertools.product(*[range(net.dag.cardinality(n)) for n in free]):
        a = dict(evidence)
        a.update(zip(free, states))
        for s in range(card):
            a[target] = s
            acc[s] += joint_probability(net, a)
    z = acc.sum()
    if z == 0:
        raise ZeroEvidenceError("zero-mass evidence in oracle")
    return acc / z


class TestVariableElimination:
    def test_independent_evidence_leaves_target_unchanged(self, two_independent_binaries):
        d = variable_elimination(two_independent_binaries, {"X": 1}, "Y")
        assert d.probs[1] == pytest.approx(0.6, abs=1e-12)

    def test_empty_evidence_returns_prior(self, asia):
        d = variable_elimination(asia, {}, "asia")
        np.testing.assert_allclose(d.probs, asia.cpts["asia"].table[0], atol=1e-12)

    def test_matches_brute_force_on_random_asia_queries(self, asia):
        rng = np.random.default_rng(11)
        names = asia.names
        for _ in range(60):
            m = int(rng.integers(0, 6))
            ev_idx = rng.choice(7, size=m, replace=False)
            evidence = {names[i]: int(rng.integers(0, 2)) for i in ev_idx}
            target = names[int(rng.choice([i for i in range(7) if i not in ev_idx]))]
            got = variable_elimination(asia, evidence, target)
            expected = brute_force_conditional(asia, evidence, target)
            np.testing.assert_allclose(got.probs, expected, atol=1e-12)

    def test_target_in_evidence_rejected(self, asia):
        with pytest.raises(ValueError, match="evidence"):
            variable_elimination(asia, {"asia": 0}, "asia")

    def test_zero_probability_evidence_signalled(self):
        # B copies A deterministically, so (A=0, B=1) has zero mass.
        net = build_network(
            [binary("A"), binary("B"), binary("C")],
            [("A", "B")],
            [
                Cpt("A", (), np.array([[0.5, 0.5]])),
                Cpt("B", ("A",), np.array([[1.0, 0.0], [0.0, 1.0]])),
                Cpt("C", (), np.array([[0.5, 0.5]])),
            ],
        )
        with pytest.raises(ZeroEvidenceError):
            variable_elimination(net, {"A": 0, "B": 1}, "C")


class TestForwardSampling:
    def test_zero_count_rejected(self, asia):
        with pytest.raises(ValueError, match=">= 1"):
            forward_sample(asia, 0, 0)

    def test_deterministic_cpt_single_record(self):
        net = build_network([binary("A")], [], [Cpt("A", (), np.array([[1.0, 0.0]]))])
        ds = forward_sample(net, 123, 1)
        assert ds.data.tolist() == [[0]]

    def test_same_seed_identical_datasets(self, asia):
        a = forward_sample(asia, 99, 500)
        b = forward_sample(asia, 99, 500)
        assert np.array_equal(a.data, b.data)
        assert a.seed == b.seed == 99

    def test_root_marginals_match_priors(self, asia):
        ds = forward_sample(asia, 5, 100_000)
        col = {n: i for i, n in enumerate(ds.columns)}
        for root in ("asia", "smoke"):
            freq = ds.data[:, col[root]].mean()
            assert freq == pytest.approx(asia.cpts[root].table[0, 1], abs=0.01)


class TestFitMleK2:
    def test_parentless_binary_closed_form(self):
        dag = Dag([binary("A")], [])
        ds = Dataset(columns=("A",), data=np.array([[1], [1], [1], [0]]))
        fitted = fit_mle_k2(dag, ds)
        assert fitted.cpts["A"].table[0, 1] == pytest.approx((3 + 1) / (4 + 2))

    def test_empty_dataset_gives_uniform_rows(self):
        dag = Dag([binary("A"), binary("B")], [("A", "B")])
        ds = Dataset(columns=("A", "B"), data=np.zeros((0, 2), dtype=int))
        fitted = fit_mle_k2(dag, ds)
        np.testing.assert_allclose(fitted.cpts["A"].table, [[0.5, 0.5]])
        np.testing.assert_allclose(fitted.cpts["B"].table, [[0.5, 0.5], [0.5, 0.5]])
        assert fitted.metadata["empty_dataset"] is True

    def test_balanced_counts_give_uniform(self):
        dag = Dag([binary("A"), binary("B")], [("A", "B")])
        data = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
        fitted = fit_mle_k2(dag, Dataset(columns=("A", "B"), data=data))
        np.testing.assert_allclose(fitted.cpts["B"].table, 0.5)

    def test_fit_output_is_valid_network_for_any_dataset(self, asia):
        rng = np.random.default_rng(3)
        for count in (0, 1, 7, 200):
            if count == 0:
                data = np.zeros((0, 7), dtype=int)
            else:
                data = rng.integers(0, 2, size=(count, 7))
            ds = Dataset(columns=asia.names, data=data)
            fitted = fit_mle_k2(asia.dag, ds)  # constructor re-validates everything
            assert free_parameter_count(fitted) == 20

    def test_convergence_to_ground_truth(self, asia):
        # Statistical tolerance: 0.01 for well-observed rows, widened to five
        # binomial standard errors for rows whose parent combination is rare
        # (at 10^6 Asia samples the tub=1,lung=1 rows see only ~600 records).
        ds = forward_sample(asia, 17, 1_000_000)
        fitted = fit_mle_k2(asia.dag, ds)
        col = {n: i for i, n in enumerate(ds.columns)}
        for name in asia.names:
            cpt = asia.cpts[name]
            parents = asia.dag.parents(name)
            rows = np.zeros(len(ds), dtype=np.int64)
            for p in parents:
                rows = rows * 2 + ds.data[:, col[p]]
            counts = np.bincount(rows, minlength=cpt.table.shape[0])
            for r in range(cpt.table.shape[0]):
                se = np.sqrt(cpt.table[r, 0] * cpt.table[r, 1] / max(counts[r], 1))
                tol = max(0.01, 5.0 * se)
                np.testing.assert_allclose(
                    fitted.cpts[name].table[r], cpt.table[r], atol=tol,
                    err_msg=f"{name} row {r} (n={counts[r]})",
                )


class TestBnPredict:
    def test_empty_evidence_marginals_no_fallback(self, asia):
        dists, fallback = bn_predict(asia, {}, asia.names)
        assert not fallback
        np.testing.assert_allclose(dists[0].probs, asia.cpts["asia"].table[0], atol=1e-12)

    def test_zero_mass_evidence_falls_back_to_marginals(self):
        variables = [binary("A"), binary("B"), binary("C")]
        cpts = [
            Cpt("A", (), np.array([[0.5, 0.5]])),
            Cpt("B", ("A",), np.array([[1.0, 0.0], [0.0, 1.0]])),  # B == A
            Cpt("C", (), np.array([[0.2, 0.8]])),
        ]
        net = build_network(variables, [("A", "B")], cpts)
        dists, fallback = bn_predict(net, {"A": 0, "B": 1}, ["C"])
        assert fallback
        np.testing.assert_allclose(dists[0].probs, [0.2, 0.8], atol=1e-12)

    def test_ground_truth_asia_never_falls_back(self, asia):
        # Every CPT entry is strictly positive, so all evidence has mass.
        rng = np.random.default_rng(23)
        names = asia.names
        for _ in range(100):
            m = int(rng.integers(0, 7))
            ev_idx = rng.choice(7, size=m, replace=False)
            evidence = {names[i]: int(rng.integers(0, 2)) for i in ev_idx}
            targets = [n for n in names if n not in evidence]
            if not targets:
                continue
            _, fallback = bn_predict(asia, evidence, targets)
            assert not fallback


class TestFileFormats:
    def test_network_json_round_trip(self, asia, tmp_path):
        path = tmp_path / "net.json"
        save_network(asia, path)
        loaded = load_network(path)
        assert loaded.dag == asia.dag
        for name in asia.names:
            np.testing.assert_array_equal(loaded.cpts[name].table, asia.cpts[name].table)

    def test_network_dict_round_trip(self, asia):
        again = network_from_dict(network_to_dict(asia))
        assert again.dag == asia.dag

    def test_dataset_csv_round_trip(self, asia, tmp_path):
        ds = forward_sample(asia, 4, 50)
        path = tmp_path / "data.csv"
        save_dataset_csv(ds, asia, path)
        header = path.read_text().splitlines()[0]
        assert header == ",".join(asia.names)
        loaded = load_dataset_csv(asia, path)
        assert np.array_equal(loaded.data, ds.data)
