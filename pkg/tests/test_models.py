"""Predictive models against independent oracles: planted generator labels,
brute-force tree walks, finite differences, hand-computed robust stats."""

import random
import statistics
from decimal import Decimal

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from pacc_select.domain import CaseKind, MissingFeatureError, NotApplicable
from pacc_select.models import (
    DEFAULT_CLUSTER_FEATURES,
    TrainedModels,
    predict_company_fraud,
    models_peer_zscore,
    train_models,
    load_models,
    save_models,
)
from pacc_select.models.effectiveness import EffectivenessModel, effectiveness_risk, fit_effectiveness
from pacc_select.models.kmeans import assign_cluster, fit_clusters, within_cluster_ss
from pacc_select.models.peers import fit_peer_stats, peer_ratio, peer_zscore
from pacc_select.models.tree import fit_cluster_classifiers, predict_tree, tree_to_obj
from pacc_select.synth import FraudPattern, GeneratorConfig, generate_corpus
from conftest import make_case
from gen_random import random_case

FEATS = ("revenue_eur", "personnel_cost_eur")


def two_feature_case(case_id, revenue, personnel, outcome=None, kind=CaseKind.COMPANY_AUDIT):
    return make_case(
        case_id=case_id,
        kind=kind,
        features={"revenue_eur": revenue, "personnel_cost_eur": personnel},
        outcome=outcome,
    )


class TestFitClusters:
    def test_single_case_k1_centroid_is_zero(self):
        model = fit_clusters([two_feature_case("C1", 100, 50)], FEATS, k=1, seed=0)
        assert model.k == 1
        np.testing.assert_allclose(model.centroids, np.zeros((1, 2)))

    def test_duplicated_case_k1_wcss_zero(self):
        cases = [two_feature_case(f"C{i}", 100, 50) for i in range(10)]
        model = fit_clusters(cases, FEATS, k=1, seed=0)
        assert within_cluster_ss(model, cases) == 0.0

    def test_fewer_cases_than_k(self):
        with pytest.raises(ValueError):
            fit_clusters([two_feature_case("C1", 1, 2)], FEATS, k=2, seed=0)

    def test_all_constant_with_k2_is_an_error(self):
        cases = [two_feature_case(f"C{i}", 100, 50) for i in range(10)]
        with pytest.raises(ValueError, match="constant"):
            fit_clusters(cases, FEATS, k=2, seed=0)

    def test_constant_feature_excluded(self):
        rng = random.Random(1)
        cases = [two_feature_case(f"C{i}", rng.uniform(1, 100), 50) for i in range(20)]
        model = fit_clusters(cases, FEATS, k=2, seed=0)
        assert model.feature_list == ("revenue_eur",)

    def test_two_blob_recovery_ari(self, schema):
        scores = []
        for seed in range(10):
            cfg = GeneratorConfig(n_cases=400, fraud_rate=0.05, n_clusters=2, seed=seed)
            cases, _, _, _ = generate_corpus(cfg)
            model = fit_clusters(cases, DEFAULT_CLUSTER_FEATURES, k=2, seed=seed)
            planted = [c.features["industry_code"] for c in cases]
            predicted = [assign_cluster(model, c) for c in cases]
            scores.append(adjusted_rand_score(planted, predicted))
        assert all(s >= 0.95 for s in scores), scores

    def test_wcss_non_increasing_every_iteration(self):
        rng = random.Random(3)
        for trial in range(20):
            cases = [
                two_feature_case(f"C{i}", rng.uniform(0, 1000), rng.uniform(0, 500))
                for i in range(rng.randint(10, 60))
            ]
            model = fit_clusters(cases, FEATS, k=rng.randint(1, 4), seed=trial)
            hist = model.wcss_history
            assert all(a >= b - 1e-9 for a, b in zip(hist, hist[1:])), hist

    def test_auto_k_picks_separated_blobs(self):
        rng = random.Random(9)
        cases = []
        for i in range(60):
            blob = i % 2
            cases.append(
                two_feature_case(
                    f"C{i}",
                    1000 * (1 + blob * 50) + rng.gauss(0, 20),
                    500 * (1 + blob * 50) + rng.gauss(0, 10),
                )
            )
        model = fit_clusters(cases, FEATS, k="auto", seed=1)
        assert model.k == 2


class TestAssignCluster:
    def test_case_at_centroid(self):
        rng = random.Random(5)
        cases = [
            two_feature_case(f"C{i}", rng.uniform(0, 100) + (0 if i < 15 else 5000), rng.uniform(0, 50))
            for i in range(30)
        ]
        model = fit_clusters(cases, FEATS, k=3, seed=2)
        for cluster_id in range(3):
            raw = model.centroids[cluster_id] * model.stds + model.means
            case = two_feature_case("CX", float(raw[0]), float(raw[1]))
            assert assign_cluster(model, case) == cluster_id

    def test_tie_breaks_to_lowest_id(self):
        cases = [two_feature_case(f"A{i}", 0, 0) for i in range(5)] + [
            two_feature_case(f"B{i}", 100, 100) for i in range(5)
        ]
        model = fit_clusters(cases, FEATS, k=2, seed=0)
        mid_raw = (model.centroids[0] + model.centroids[1]) / 2 * model.stds + model.means
        case = two_feature_case("CMID", float(mid_raw[0]), float(mid_raw[1]))
        assert assign_cluster(model, case) == 0

    def test_missing_feature_is_an_error(self):
        cases = [two_feature_case(f"C{i}", i * 10 + 1, i + 1) for i in range(10)]
        model = fit_clusters(cases, FEATS, k=2, seed=0)
        with pytest.raises(MissingFeatureError):
            assign_cluster(model, make_case(features={"revenue_eur": 5}))

    def test_blob_members_assigned_to_planted_blob(self):
        hits = total = 0
        for seed in range(10):
            cfg = GeneratorConfig(n_cases=300, fraud_rate=0.0, n_clusters=2, seed=seed)
            cases, _, _, _ = generate_corpus(cfg)
            model = fit_clusters(cases, DEFAULT_CLUSTER_FEATURES, k=2, seed=seed)
            by_code = {}
            for case in cases:
                by_code.setdefault(case.features["industry_code"], []).append(
                    assign_cluster(model, case)
                )
            majority = {code: max(set(v), key=v.count) for code, v in by_code.items()}
            for case in cases:
                total += 1
                if assign_cluster(model, case) == majority[case.features["industry_code"]]:
                    hits += 1
        assert hits / total >= 0.95


class TestClusterClassifiers:
    def _world(self, seed=0, n=600):
        cfg = GeneratorConfig(n_cases=n, fraud_rate=0.08, n_clusters=2, seed=seed)
        cases, _, _, truth = generate_corpus(cfg)
        training = [c for c in cases if c.outcome is not None]
        model = fit_clusters(training, DEFAULT_CLUSTER_FEATURES, k=2, seed=seed)
        return cases, training, model, truth

    def test_single_class_cluster_gives_constant_leaf(self):
        from pacc_select.domain import AuditOutcome

        outcome = AuditOutcome(True, True, Decimal(1), 0)
        cases = [two_feature_case(f"C{i}", i + 1, 2 * i + 1, outcome=outcome) for i in range(12)]
        model = fit_clusters(cases, FEATS, k=1, seed=0)
        classifiers = fit_cluster_classifiers(model, cases)
        assert classifiers[0].tree.is_leaf
        assert classifiers[0].tree.probability == 1.0

    def test_depth_zero_gives_class_prior(self):
        from pacc_select.domain import AuditOutcome

        cases = []
        for i in range(20):
            fraud = i < 5
            cases.append(
                two_feature_case(
                    f"C{i}", i + 1, 2 * i + 1,
                    outcome=AuditOutcome(True, fraud, Decimal(1) if fraud else Decimal(0), 0),
                )
            )
        model = fit_clusters(cases, FEATS, k=1, seed=0)
        classifiers = fit_cluster_classifiers(model, cases, max_depth=0)
        assert classifiers[0].tree.is_leaf
        assert classifiers[0].tree.probability == pytest.approx(0.25)

    def test_empty_cluster_has_no_classifier(self):
        cases, training, model, _ = self._world()
        lonely = [c for c in training if assign_cluster(model, c) == 0]
        classifiers = fit_cluster_classifiers(model, lonely)
        assert 1 not in classifiers
        trained = TrainedModels(clusters=model, classifiers=classifiers)
        victim = next(c for c in cases if assign_cluster(model, c) == 1)
        result = predict_company_fraud(trained, victim)
        assert isinstance(result, NotApplicable)
        assert "no classifier for cluster 1" in result.reason

    def test_holdout_accuracy(self):
        cases, training, model, truth = self._world(seed=4, n=900)
        split = int(len(training) * 0.7)
        fit_slice, hold = training[:split], training[split:]
        classifiers = fit_cluster_classifiers(model, fit_slice)
        per_cluster_hits: dict[int, list[int]] = {}
        for case in hold:
            cluster = assign_cluster(model, case)
            if cluster not in classifiers:
                continue
            p = predict_tree(classifiers[cluster].tree, case)
            predicted = p >= 0.5
            per_cluster_hits.setdefault(cluster, []).append(
                int(predicted == case.outcome.fraud_found)
            )
        for cluster, hits in per_cluster_hits.items():
            assert sum(hits) / len(hits) >= 0.9, (cluster, sum(hits), len(hits))

    def test_tree_prediction_matches_bruteforce_walk(self, schema):
        cases, training, model, _ = self._world(seed=6)
        classifiers = fit_cluster_classifiers(model, training)
        tree_objs = {cid: tree_to_obj(c.tree) for cid, c in classifiers.items()}

        def walk(node: dict, case) -> float:
            while "probability" not in node:
                value = case.features[node["feature"]]
                node = node["left"] if float(value) <= node["threshold"] else node["right"]
            return node["probability"]

        rng = random.Random(7)
        checked = 0
        while checked < 1000:
            case = random_case(rng, schema, case_id=f"CW{checked}", missing_rate=0.0)
            cluster = assign_cluster(model, case)
            if cluster not in classifiers:
                continue
            assert predict_tree(classifiers[cluster].tree, case) == walk(tree_objs[cluster], case)
            checked += 1

    def test_planted_fraud_probability(self):
        # needs generator-default scale: each pattern must land enough
        # training positives per cluster to clear the tree's min leaf
        good = 0
        for seed in range(10):
            cases, training, model, truth = self._world(seed=seed, n=1500)
            classifiers = fit_cluster_classifiers(model, training)
            trained = TrainedModels(clusters=model, classifiers=classifiers)
            frauds = [
                c for c in cases
                if truth.is_fraud(c.case_id) and c.outcome is None
                and truth.pattern(c.case_id) is not FraudPattern.MT_RING
            ]
            hits = [
                p for c in frauds
                if not isinstance(p := predict_company_fraud(trained, c), NotApplicable) and p > 0.5
            ]
            if frauds and len(hits) / len(frauds) >= 0.8:
                good += 1
        assert good >= 9


class TestEffectiveness:
    def test_zero_weights_give_half(self):
        model = EffectivenessModel(
            feature_list=FEATS,
            weights=np.zeros(2),
            intercept=0.0,
            means=np.zeros(2),
            stds=np.ones(2),
        )
        assert effectiveness_risk(model, two_feature_case("C1", 0, 0)) == 0.5

    def test_negation_symmetry(self):
        rng = random.Random(11)
        weights = np.array([rng.uniform(-2, 2) for _ in range(2)])
        model = EffectivenessModel(FEATS, weights, 0.3, np.zeros(2), np.ones(2))
        flipped = EffectivenessModel(FEATS, -weights, 0.3, np.zeros(2), np.ones(2))
        for _ in range(25):
            x = [rng.uniform(-50, 50) for _ in range(2)]
            a = effectiveness_risk(model, two_feature_case("C1", x[0], x[1]))
            b = effectiveness_risk(flipped, two_feature_case("C1", -x[0], -x[1]))
            assert a == pytest.approx(b, abs=1e-12)

    def test_missing_feature_not_applicable(self):
        model = EffectivenessModel(FEATS, np.zeros(2), 0.0, np.zeros(2), np.ones(2))
        result = effectiveness_risk(model, make_case(features={"revenue_eur": 1}))
        assert isinstance(result, NotApplicable)
        assert "personnel_cost_eur" in result.reason

    def test_monotone_in_positive_weight_features(self):
        # weights and inputs sized so the sigmoid never saturates in floats
        rng = random.Random(13)
        model = EffectivenessModel(
            FEATS, np.array([0.2, 0.4]), -0.2, np.array([10.0, 5.0]), np.array([3.0, 2.0])
        )
        for _ in range(100):
            x = [rng.uniform(-20, 20), rng.uniform(-20, 20)]
            j = rng.randrange(2)
            base = effectiveness_risk(model, two_feature_case("C1", x[0], x[1]))
            x[j] += 1e-3
            bumped = effectiveness_risk(model, two_feature_case("C1", x[0], x[1]))
            assert bumped > base

    def test_fit_separates_planted_rings(self):
        good = 0
        for seed in range(10):
            cfg = GeneratorConfig(n_cases=700, fraud_rate=0.06, n_clusters=2, seed=seed)
            cases, _, _, truth = generate_corpus(cfg)
            mt_train = [
                c for c in cases if c.kind is CaseKind.MISSING_TRADER and c.outcome is not None
            ]
            if not any(c.outcome.fraud_found for c in mt_train):
                continue
            model = fit_effectiveness(
                mt_train,
                ("employee_count", "revenue_eur", "input_tax_eur", "output_tax_eur",
                 "intra_community_acquisitions_eur", "vat_refund_claims_eur",
                 "bank_accounts_count", "vat_periods_filed_last_year"),
            )
            rings = [
                c for c in cases
                if truth.pattern(c.case_id) is FraudPattern.MT_RING and c.outcome is None
            ]
            risks = [effectiveness_risk(model, c) for c in rings]
            risks = [r for r in risks if not isinstance(r, NotApplicable)]
            if risks and sum(1 for r in risks if r >= 0.8) / len(risks) >= 0.8:
                good += 1
        assert good >= 8


class TestPeerStats:
    def _stats(self, values, feature="revenue_eur"):
        cases = [two_feature_case(f"C{i}", v, i + 1) for i, v in enumerate(values)]
        model = fit_clusters(cases, FEATS, k=1, seed=0)
        return model, cases, fit_peer_stats(model, cases, [feature])

    def test_median_case_scores_exactly_zero(self):
        model, cases, stats = self._stats([10, 20, 30, 40, 50])
        case = two_feature_case("CX", 30, 1)
        assert peer_zscore(stats, 0, case, "revenue_eur") == 0.0

    def test_zero_mad_not_applicable(self):
        model, cases, stats = self._stats([10, 10, 10, 10])
        result = peer_zscore(stats, 0, two_feature_case("CX", 99, 1), "revenue_eur")
        assert isinstance(result, NotApplicable)
        assert "MAD is zero" in result.reason

    def test_matches_bruteforce_median_mad(self):
        rng = random.Random(19)
        values = [rng.uniform(100, 900) for _ in range(101)]
        model, cases, stats = self._stats(values)
        med = statistics.median(values)
        mad = statistics.median(sorted(abs(v - med) for v in values))
        probe = two_feature_case("CX", 123.456, 1)
        expected = (123.456 - med) / (1.4826 * mad)
        assert peer_zscore(stats, 0, probe, "revenue_eur") == pytest.approx(expected, rel=1e-12)

    def test_peer_ratio(self):
        model, cases, stats = self._stats([10, 20, 30])
        assert peer_ratio(stats, 0, two_feature_case("CX", 40, 1), "revenue_eur") == pytest.approx(2.0)
        zero_model, _, zero_stats = self._stats([0, 0, 0])
        result = peer_ratio(zero_stats, 0, two_feature_case("CX", 5, 1), "revenue_eur")
        assert isinstance(result, NotApplicable)

    def test_planted_low_personnel_z_below_minus_three(self, small_world):
        corpus, truth, models = small_world["corpus"], small_world["truth"], small_world["models"]
        lows = [c for c in corpus.cases if truth.pattern(c.case_id) is FraudPattern.LOW_PERSONNEL]
        assert lows
        for case in lows:
            z = models_peer_zscore(models, case, "personnel_cost_eur")
            assert not isinstance(z, NotApplicable)
            assert z <= -3, (case.case_id, z)


class TestSerialization:
    def test_models_roundtrip(self, small_world, tmp_path):
        models = small_world["models"]
        path = tmp_path / "models.json"
        save_models(models, path)
        loaded = load_models(path)
        assert loaded.clusters.k == models.clusters.k
        np.testing.assert_allclose(loaded.clusters.centroids, models.clusters.centroids)
        np.testing.assert_allclose(loaded.effectiveness.weights, models.effectiveness.weights)
        assert loaded.peers.cells == models.peers.cells
        case = small_world["corpus"].cases[0]
        assert predict_company_fraud(loaded, case) == predict_company_fraud(models, case)
