import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import ArtifactFormatError, DimensionMismatch, InvalidK
from market_data import CorrelationMatrix
from rcme import (
    CorrelationDistanceMatrix, CorrelationMatrixSet, RepresentativeSet, build_cmdm, build_cms,
    cluster, correlation_distance, dendrogram_heights, extract_representatives,
    load_representative_set, nearest_representative, representative_matrices,
    save_representative_set,
)

def _corr(values) -> CorrelationMatrix:
    return CorrelationMatrix(values=np.asarray(values, dtype=float), window=60, anchor_time=0)

def _pair(rho: float) -> CorrelationMatrix:
    return _corr([[1.0, rho], [rho, 1.0]])

def _random_corr(rng, n: int) -> np.ndarray:
    x = rng.normal(size=(3 * n, n))
    return np.corrcoef(x, rowvar=False)

def _cms(matrices) -> CorrelationMatrixSet:
    entries = tuple(_corr(m) if not isinstance(m, CorrelationMatrix) else m for m in matrices)
    return CorrelationMatrixSet(entries=entries, anchor_times=tuple(range(len(entries))), window=60)

class TestBuildCms:
    def test_counts(self, return_panel_factory):
        returns = np.random.default_rng(0).normal(0, 0.01, size=(120, 2))
        rp = return_panel_factory(returns)
        assert len(build_cms(rp, 60, 1)) == 61
        assert len(build_cms(rp, 60, 5)) == 13
        assert len(build_cms(return_panel_factory(returns[:60]), 60)) == 1

    def test_anchor_times(self, return_panel_factory):
        rp = return_panel_factory(np.random.default_rng(0).normal(0, 0.01, size=(120, 2)))
        cms = build_cms(rp, 60, 5)
        assert cms.anchor_times[0] == 59
        assert cms.anchor_times[-1] == 119

class TestCorrelationDistance:
    def test_identical(self):
        assert correlation_distance(_pair(0.3), _pair(0.3)) == 0.0

    def test_two_unit_entries(self):
        assert correlation_distance(_pair(1.0), _pair(0.0)) == pytest.approx(np.sqrt(2))

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a, b = _random_corr(rng, 5), _random_corr(rng, 5)
            expected = np.sqrt(sum((a[i, j] - b[i, j]) ** 2 for i in range(5) for j in range(5)))
            assert correlation_distance(_corr(a), _corr(b)) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            correlation_distance(_pair(0.1), _corr(np.eye(3)))

class TestBuildCmdm:
    def test_identical_pair(self):
        cmdm = build_cmdm(_cms([_pair(0.4), _pair(0.4)]))
        np.testing.assert_array_equal(cmdm.values, np.zeros((2, 2)))

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(5)
        matrices = [_corr(_random_corr(rng, 4)) for _ in range(10)]
        cmdm = build_cmdm(_cms(matrices), jobs=3)
        assert np.all(np.diag(cmdm.values) == 0)
        np.testing.assert_array_equal(cmdm.values, cmdm.values.T)
        for i in range(10):
            for j in range(10):
                assert cmdm.values[i, j] == pytest.approx(correlation_distance(matrices[i], matrices[j]), abs=1e-12)

class TestCluster:
    def _planted(self) -> CorrelationDistanceMatrix:
        groups = [0, 0, 1, 0, 1, 1, 0]
        values = np.array([[0.0 if a == b else 2.0 for b in groups] for a in groups])
        values += 1e-3 * (1 - np.eye(len(groups)))
        return CorrelationDistanceMatrix(values)

    def test_k_equals_m(self):
        ca = cluster(self._planted(), 7)
        assert ca.labels == tuple(range(7))

    def test_k_one(self):
        ca = cluster(self._planted(), 1)
        assert set(ca.labels) == {0}

    def test_planted_partition(self):
        ca = cluster(self._planted(), 2)
        assert ca.labels == (0, 0, 1, 0, 1, 1, 0)
        assert ca.member_times == ((0, 1, 3, 6), (2, 4, 5))

    def test_invalid_k(self):
        with pytest.raises(InvalidK):
            cluster(self._planted(), 0)
        with pytest.raises(InvalidK):
            cluster(self._planted(), 8)

    def test_deterministic(self):
        cmdm = self._planted()
        assert cluster(cmdm, 3).labels == cluster(cmdm, 3).labels

    def test_permutation_gives_same_partition(self):
        rng = np.random.default_rng(8)
        matrices = [_corr(_random_corr(rng, 3)) for _ in range(9)]
        labels = cluster(build_cmdm(_cms(matrices)), 3).labels
        perm = rng.permutation(9)
        permuted = cluster(build_cmdm(_cms([matrices[p] for p in perm])), 3).labels

        def blocks(lbls, index):
            groups = {}
            for pos, label in enumerate(lbls):
                groups.setdefault(label, set()).add(index[pos])
            return {frozenset(g) for g in groups.values()}

        assert blocks(labels, list(range(9))) == blocks(permuted, list(perm))

    def test_dendrogram_heights_sorted(self):
        heights = dendrogram_heights(self._planted())
        assert len(heights) == 6
        assert np.all(np.diff(heights) >= 0)

class TestRepresentativeMatrices:
    def test_singleton_cluster(self):
        cms = _cms([_pair(0.3)])
        ca = cluster(CorrelationDistanceMatrix(np.zeros((1, 1))), 1)
        rs = representative_matrices(ca, cms)
        np.testing.assert_array_equal(rs.matrices[0].values, _pair(0.3).values)

    def test_two_member_mean(self):
        cms = _cms([_pair(0.2), _pair(0.6)])
        rs = representative_matrices(cluster(build_cmdm(cms), 1), cms)
        assert rs.matrices[0].values[0, 1] == pytest.approx(0.4)

    def test_mean_oracle_and_psd(self):
        rng = np.random.default_rng(9)
        matrices = [_random_corr(rng, 4) for _ in range(7)]
        cms = _cms(matrices)
        rs = representative_matrices(cluster(build_cmdm(cms), 1), cms)
        expected = np.zeros((4, 4))
        for m in matrices:
            for i in range(4):
                for j in range(4):
                    expected[i, j] += m[i, j] / 7
        np.testing.assert_allclose(rs.matrices[0].values, expected, atol=1e-12)
        assert np.linalg.eigvalsh(rs.matrices[0].values).min() >= -1e-10
        assert np.all(np.abs(rs.matrices[0].values) <= 1.0)

    def test_dimension_mismatch(self):
        cms = _cms([_pair(0.2), _pair(0.6)])
        ca = cluster(CorrelationDistanceMatrix(np.zeros((1, 1))), 1)
        with pytest.raises(DimensionMismatch):
            representative_matrices(ca, cms)

class TestNearestRepresentative:
    def _rs(self, matrices) -> RepresentativeSet:
        return RepresentativeSet(matrices=tuple(matrices),
                                 member_times=tuple((i,) for i in range(len(matrices))), window=60)

    def test_exact_match(self):
        rs = self._rs([_pair(-0.5), _pair(0.0), _pair(0.7)])
        assert nearest_representative(_pair(0.7), rs) == 2

    def test_argmin(self):
        rs = self._rs([_pair(0.3), _pair(0.7)])
        # distâncias sqrt(2)*0.3 e sqrt(2)*0.7
        assert nearest_representative(_pair(0.0), rs) == 0

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=100_000))
    def test_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        reps = [_corr(_random_corr(rng, 3)) for _ in range(5)]
        current = _corr(_random_corr(rng, 3))
        distances = [np.sqrt(np.sum((current.values - r.values) ** 2)) for r in reps]
        assert nearest_representative(current, self._rs(reps)) == int(np.argmin(distances))

class TestExtractRepresentatives:
    def test_planted_regime_recovery(self, planted_regime_panel):
        rs, ca = extract_representatives(planted_regime_panel, window=60, stride=1, k=2)
        labels = dict(zip(range(59, len(planted_regime_panel)), ca.labels))
        # mudança de regime no dia 500; janelas a mais de 60 dias dela
        first = {labels[t] for t in range(59, 440)}
        second = {labels[t] for t in range(620, len(planted_regime_panel))}
        assert len(first) == 1
        assert len(second) == 1
        assert first != second
        high, low = first.pop(), second.pop()
        assert rs.matrices[high].values[0, 1] > rs.matrices[low].values[0, 1]

    def test_single_regime_is_mean_of_all(self, random_return_panel):
        rs, _ = extract_representatives(random_return_panel, window=60, stride=10, k=1)
        cms = build_cms(random_return_panel, 60, 10)
        np.testing.assert_allclose(rs.matrices[0].values, cms.stacked().mean(axis=0), atol=1e-12)

class TestArtifact:
    def test_save_load_is_exact(self, random_return_panel, tmp_path):
        rs, _ = extract_representatives(random_return_panel, window=60, stride=5, k=3)
        path = tmp_path / "rs.txt"
        save_representative_set(rs, str(path))
        loaded = load_representative_set(str(path))
        assert loaded.k == 3
        assert loaded.asset_ids == ("SPY", "IEF", "GLD")
        assert loaded.member_times == rs.member_times
        for a, b in zip(loaded.matrices, rs.matrices):
            np.testing.assert_array_equal(a.values, b.values)

    def test_save_is_deterministic(self, random_return_panel, tmp_path):
        for name in ("a.txt", "b.txt"):
            rs, _ = extract_representatives(random_return_panel, window=60, stride=5, k=3)
            save_representative_set(rs, str(tmp_path / name))
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("representative-set v1\nn=2 K=1\n", encoding="utf-8")
        with pytest.raises(ArtifactFormatError):
            load_representative_set(str(path))
