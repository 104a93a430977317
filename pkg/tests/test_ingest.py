import numpy as np
import pytest

from metapop import ObservationPanel, TimeGrid, make_synthetic
from metapop.ingest import (
    ingest,
    read_cases_csv,
    read_population_csv,
    write_cases_csv,
    write_geo_csv,
    write_population_csv,
)
from metapop.mobility import write_mobility_csv

DATES = ("2020-01-10", "2020-01-11", "2020-01-12")


@pytest.fixture
def files(tmp_path):
    syn = make_synthetic(3, 3, seed=2)
    write_cases_csv(tmp_path / "cases.csv", syn.panel, DATES)
    write_population_csv(tmp_path / "pop.csv", syn.geo.names, syn.geo.population)
    write_geo_csv(tmp_path / "geo.csv", syn.geo)
    write_mobility_csv(tmp_path / "mob.csv", syn.mobility, syn.geo.names)
    return tmp_path, syn


class TestCases:
    def test_round_trip_with_missing(self, tmp_path):
        counts = np.array([[1.0, np.nan, 3.0], [0.0, 2.0, 5.0]])
        panel = ObservationPanel(counts, TimeGrid.daily(3), ("a", "b"))
        write_cases_csv(tmp_path / "c.csv", panel, DATES)
        back, dates = read_cases_csv(tmp_path / "c.csv")
        np.testing.assert_array_equal(back.counts, counts)
        assert dates == DATES and back.units == ("a", "b")

    def test_gap_in_dates_is_missing(self, tmp_path):
        (tmp_path / "c.csv").write_text("date,unit,cases\n2020-02-01,a,1\n2020-02-03,a,2\n")
        panel, dates = read_cases_csv(tmp_path / "c.csv")
        assert dates == ("2020-02-01", "2020-02-02", "2020-02-03")
        assert np.isnan(panel.counts[0, 1])

    @pytest.mark.parametrize("body,match", [
        ("2020-02-01,a,1\n2020-02-01,a,2\n", "duplicated"),
        ("2020-02-01,a,-1\n", "negative"),
    ])
    def test_errors(self, tmp_path, body, match):
        (tmp_path / "c.csv").write_text("date,unit,cases\n" + body)
        with pytest.raises(ValueError, match=match):
            read_cases_csv(tmp_path / "c.csv")

    def test_unknown_unit(self, tmp_path):
        (tmp_path / "c.csv").write_text("date,unit,cases\n2020-02-01,q,1\n")
        with pytest.raises(ValueError, match="q"):
            read_cases_csv(tmp_path / "c.csv", ("a",))

    def test_missing_column(self, tmp_path):
        (tmp_path / "c.csv").write_text("date,unit\n2020-02-01,a\n")
        with pytest.raises(ValueError, match="cases"):
            read_cases_csv(tmp_path / "c.csv")


class TestPopulation:
    def test_duplicates(self, tmp_path):
        (tmp_path / "p.csv").write_text("unit,population\na,10\na,20\n")
        with pytest.raises(ValueError, match="duplicated"):
            read_population_csv(tmp_path / "p.csv")

    @pytest.mark.parametrize("value", ["0", "-3", "2.5"])
    def test_positive_integers(self, tmp_path, value):
        (tmp_path / "p.csv").write_text(f"unit,population\na,{value}\n")
        with pytest.raises(ValueError):
            read_population_csv(tmp_path / "p.csv")


class TestIngest:
    def test_all_files(self, files):
        d, syn = files
        ds = ingest(d / "cases.csv", d / "pop.csv", d / "mob.csv", d / "geo.csv")
        assert ds.panel.counts.shape == (3, 3)
        np.testing.assert_array_equal(ds.panel.counts, syn.panel.counts)
        np.testing.assert_array_equal(ds.populations, syn.geo.population)
        np.testing.assert_allclose(ds.mobility.flows, syn.mobility.flows)
        assert len(ds.report) == 3

    def test_geo_alone_gives_populations(self, files):
        d, syn = files
        ds = ingest(d / "cases.csv", geo=d / "geo.csv")
        assert ds.panel.units == syn.geo.names and ds.mobility is None

    def test_needs_population(self, files):
        with pytest.raises(ValueError):
            ingest(files[0] / "cases.csv")

    def test_unit_disagreement(self, files):
        d, _ = files
        (d / "p2.csv").write_text("unit,population\nother,100\n")
        with pytest.raises(ValueError, match="disagree"):
            ingest(d / "cases.csv", d / "p2.csv", geo=d / "geo.csv")
