import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnpheno.concepts import ConceptProfile
from lnpheno.errors import ConfigError, DataError
from lnpheno.features import (
    CURATED_CUIS, STRUCTURED_FEATURE, FeaturizerConfig, build_binary_matrix, build_count_matrix, build_matrix,
    build_mixed_matrix, document_frequency, read_matrix, write_matrix,
)

LOW = FeaturizerConfig(min_doc_freq_binary=1, min_doc_freq_count=1)


def _profiles():
    return [
        ConceptProfile("p1", {"C0024143": 3, "C9": 1}, {"proteinuria": 2}, True),
        ConceptProfile("p2", {"C9": 4}, {}, False),
        ConceptProfile("p3", {}, {"nephritis_class_IV": 1}, False),
    ]


profile_lists = st.lists(
    st.builds(
        ConceptProfile,
        st.just("x"),
        st.dictionaries(st.sampled_from(["C1", "C2", "C3", "C0024143"]), st.integers(0, 5), max_size=4),
        st.dictionaries(st.sampled_from(["proteinuria", "nephritis_class_V"]), st.integers(0, 3), max_size=2),
        st.booleans(),
    ),
    min_size=1, max_size=12,
).map(lambda ps: [ConceptProfile(f"p{i}", p.cui_counts, p.regex_hits, p.structured_positive)
                  for i, p in enumerate(ps)])


class TestBinaryCount:
    def test_binary_values(self):
        m = build_binary_matrix(_profiles(), LOW)
        assert m.feature_names == ["C0024143", "C9"]
        assert m.dense().tolist() == [[1, 1], [0, 1], [0, 0]]

    def test_count_values(self):
        m = build_count_matrix(_profiles(), LOW)
        assert m.dense().tolist() == [[3, 1], [0, 4], [0, 0]]

    def test_nothing_passes_threshold(self):
        with pytest.raises(DataError, match="document frequency"):
            build_binary_matrix(_profiles(), FeaturizerConfig(min_doc_freq_binary=5))

    def test_zero_profiles(self):
        with pytest.raises(DataError):
            build_binary_matrix([], LOW)

    def test_fixed_vocabulary_imputes_and_warns(self):
        m = build_count_matrix(_profiles(), LOW, vocabulary=["C9", "C_MISSING"])
        assert m.feature_names == ["C9", "C_MISSING"]
        assert m.dense()[:, 1].tolist() == [0, 0, 0]
        assert any("C_MISSING" in w for w in m.warnings)

    def test_document_frequency(self):
        assert document_frequency(_profiles(), "C9") == 2
        assert document_frequency(_profiles(), "proteinuria") == 1

    @settings(max_examples=50, deadline=None)
    @given(profile_lists)
    def test_binary_is_indicator_of_count(self, profiles):
        try:
            count = build_count_matrix(profiles, LOW)
        except DataError:
            return
        binary = build_binary_matrix(profiles, LOW, vocabulary=count.feature_names)
        assert np.array_equal(binary.dense(), (count.dense() > 0).astype(float))
        for j, name in enumerate(count.feature_names):
            assert count.dense()[:, j].sum() == sum(p.cui_counts.get(name, 0) for p in profiles)


class TestMixed:
    def test_layout(self):
        m = build_mixed_matrix(_profiles())
        assert m.feature_names == [*CURATED_CUIS, "nephritis_class_II", "nephritis_class_III",
                                   "nephritis_class_IV", "nephritis_class_V", "proteinuria", STRUCTURED_FEATURE]
        assert m.dense()[0].tolist() == [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1]
        assert m.dense()[2].tolist() == [0] * 9 + [1, 0, 0, 0]

    def test_missing_structured_flag(self):
        with pytest.raises(DataError):
            build_mixed_matrix([ConceptProfile("p", {}, {}, None)])

    def test_wrong_curated_list(self):
        with pytest.raises(ConfigError):
            FeaturizerConfig(curated_cuis=("C1",))

    def test_vocabulary_mismatch(self):
        with pytest.raises(ConfigError):
            build_matrix(_profiles(), "mixed", vocabulary=["x"])

    @settings(max_examples=30, deadline=None)
    @given(profile_lists)
    def test_always_13_binary_columns(self, profiles):
        m = build_mixed_matrix(profiles)
        assert m.shape == (len(profiles), 13)
        assert set(np.unique(m.dense())) <= {0.0, 1.0}


class TestExport:
    def test_round_trip(self, tmp_path):
        m = build_count_matrix(_profiles(), LOW)
        write_matrix(m, tmp_path / "m.csv")
        back = read_matrix(tmp_path / "m.csv")
        assert back.patient_ids == m.patient_ids and back.feature_names == m.feature_names
        assert back.kind == "count" and back.min_doc_freq == 1
        assert np.array_equal(back.dense(), m.dense())

    def test_triplet_format(self, tmp_path):
        write_matrix(build_count_matrix(_profiles(), LOW), tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "patient_id,feature_name,value"
        assert lines[1:] == ["p1,C0024143,3", "p1,C9,1", "p2,C9,4"]

    def test_unknown_feature_rejected(self, tmp_path):
        write_matrix(build_count_matrix(_profiles(), LOW), tmp_path / "m.csv")
        with (tmp_path / "m.csv").open("a") as fh:
            fh.write("p1,C_NEW,1\n")
        with pytest.raises(DataError, match="C_NEW"):
            read_matrix(tmp_path / "m.csv")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "m.csv").write_text("patient_id,feature_name,value\n")
        with pytest.raises(DataError):
            read_matrix(tmp_path / "m.csv")
