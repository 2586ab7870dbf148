import gzip

import pytest

from msbnids.errors import KddFormatError, UnknownLabelError
from msbnids.kdd import (
    CATEGORIES,
    FIELD_NAMES,
    Discretizer,
    category_counts,
    parse_line,
    read_records,
    stratified_sample,
)
from msbnids.modelio import bundled_path
from msbnids.synth import synth_lines


@pytest.fixture(scope="module")
def fixture_records():
    return read_records(bundled_path("kdd_fixture.csv.gz"))


class TestParsing:
    def test_fixture_parses_with_41_fields(self, fixture_records):
        assert len(fixture_records) == 2000
        assert all(len(r.values) == 41 for r in fixture_records)
        assert set(category_counts(fixture_records)) <= set(CATEGORIES)

    def test_trailing_period_tolerated(self):
        line = ",".join(["0"] * 41) + ",normal."
        rec = parse_line(line)
        assert rec.label == "normal" and rec.category == "normal"

    def test_malformed_line_names_line_number(self):
        with pytest.raises(KddFormatError) as err:
            parse_line("1,2,3", lineno=17)
        assert "line 17" in str(err.value)

    def test_unknown_label_reported(self):
        line = ",".join(["0"] * 41) + ",zero_day."
        with pytest.raises(UnknownLabelError) as err:
            parse_line(line, lineno=3)
        assert "zero_day" in str(err.value)

    def test_gzip_and_plain_read_identically(self, tmp_path, fixture_records):
        lines = synth_lines(50, seed=3)
        plain = tmp_path / "x.csv"
        plain.write_text("\n".join(lines) + "\n")
        gz = tmp_path / "x.csv.gz"
        with gzip.open(gz, "wt") as fh:
            fh.write("\n".join(lines) + "\n")
        assert read_records(plain) == read_records(gz)


class TestStratifiedSample:
    def test_proportional_within_one_record(self, fixture_records):
        totals = category_counts(fixture_records)
        n = len(fixture_records)
        sample = stratified_sample(fixture_records, 500, seed=1)
        got = category_counts(sample)
        assert sum(got.values()) == 500
        for cat, cnt in totals.items():
            expected = 500 * cnt / n
            assert abs(got.get(cat, 0) - expected) <= 1

    def test_full_size_returns_identity(self, fixture_records):
        sample = stratified_sample(fixture_records, len(fixture_records), seed=9)
        assert sample == list(fixture_records)

    def test_same_seed_same_sample(self, fixture_records):
        a = stratified_sample(fixture_records, 300, seed=5)
        b = stratified_sample(fixture_records, 300, seed=5)
        assert a == b

    def test_different_seed_differs(self, fixture_records):
        a = stratified_sample(fixture_records, 300, seed=5)
        b = stratified_sample(fixture_records, 300, seed=6)
        assert a != b

    def test_preserves_corpus_order(self, fixture_records):
        sample = stratified_sample(fixture_records, 200, seed=2)
        pos = {id(r): i for i, r in enumerate(fixture_records)}
        positions = [pos[id(r)] for r in sample]
        assert positions == sorted(positions)


class TestDiscretizer:
    def test_boundaries_monotone(self, fixture_records):
        disc = Discretizer.fit(fixture_records, k=5)
        for name, cuts in disc.boundaries.items():
            assert cuts == sorted(cuts), name
            assert len(set(cuts)) == len(cuts), name

    def test_single_bin_degenerates(self, fixture_records):
        disc = Discretizer.fit(fixture_records, k=1)
        for name in disc.boundaries:
            assert disc.states(name) == ("b0",)

    def test_zero_heavy_field_keeps_lowest_bin(self, fixture_records):
        disc = Discretizer.fit(fixture_records, k=5)
        assert disc.transform_value("wrong_fragment", "0") == "b0"

    def test_unseen_categorical_maps_to_reserved_state(self, fixture_records):
        disc = Discretizer.fit(fixture_records, k=5)
        assert disc.transform_value("service", "uucp") == "__other__"
        assert "__other__" in disc.states("service")

    def test_out_of_range_values_clamp(self, fixture_records):
        disc = Discretizer.fit(fixture_records, k=5)
        lo = disc.transform_value("src_bytes", "-5")
        hi = disc.transform_value("src_bytes", "999999999")
        states = disc.states("src_bytes")
        assert lo == states[0] and hi == states[-1]

    def test_deterministic_given_training_set(self, fixture_records):
        a = Discretizer.fit(fixture_records, k=4)
        b = Discretizer.fit(fixture_records, k=4)
        assert a.boundaries == b.boundaries and a.categories == b.categories

    def test_transform_covers_all_fields(self, fixture_records):
        disc = Discretizer.fit(fixture_records, k=3)
        row = disc.transform(fixture_records[0])
        assert set(row) == set(FIELD_NAMES)
        for name, state in row.items():
            assert state in disc.states(name)
