import datetime as dt

import numpy as np
import pytest

from stcast import dataio
from stcast.causal import DidEstimate
from stcast.errors import IngestionError
from stcast.metrics import ScoreReport
from stcast.synth import GeneratorSpec, generate

GOOD_REGIONS = """region_id,lat,lon,treated
R00,10.0,20.0,1
R01,-5.0,30.0,0
"""

GOOD_PANEL = """region_id,date,y,c1,c2
R00,2021-01-01,1.0,0.1,0.2
R00,2021-01-02,2.0,0.1,0.2
R00,2021-01-03,3.0,0.1,0.2
R01,2021-01-01,4.0,0.3,0.4
R01,2021-01-02,5.0,0.3,0.4
R01,2021-01-03,6.0,0.3,0.4
"""

ONSET = dt.date(2021, 1, 3)


def write(tmp_path, name, content):
    path = tmp_path / name
    path.write_text(content)
    return path


class TestIngestWellFormed:
    def test_small_fixture(self, tmp_path):
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", GOOD_PANEL)
        rs, panel = dataio.ingest(regions, panel_path, ONSET)
        assert rs.n == 2
        assert panel.t == 3
        assert panel.d == 2
        assert np.array_equal(panel.treated, [1.0, 0.0])
        assert np.array_equal(panel.post, [0.0, 0.0, 1.0])
        assert panel.y[1, 2] == 6.0

    def test_rows_in_any_order(self, tmp_path):
        shuffled = GOOD_PANEL.splitlines()
        body = shuffled[1:]
        body.reverse()
        content = shuffled[0] + "\n" + "\n".join(body) + "\n"
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        _, panel = dataio.ingest(regions, panel_path, ONSET)
        assert panel.y[0, 0] == 1.0
        assert panel.times[0] == dt.date(2021, 1, 1)

    def test_generator_round_trip(self, tmp_path):
        spec = GeneratorSpec(seed=2, t_steps=40, post_onset_index=20)
        regions, panel, _ = generate(spec)
        rpath = tmp_path / "regions.csv"
        ppath = tmp_path / "panel.csv"
        dataio.write_regions_csv(regions, panel.treated, rpath)
        dataio.write_panel_csv(panel, ppath)
        rs2, panel2 = dataio.ingest(rpath, ppath, panel.times[20])
        assert rs2.region_ids == list(panel.region_ids)
        assert np.allclose(panel2.y, panel.y, atol=1e-10)
        assert np.allclose(panel2.c, panel.c, atol=1e-10)
        assert np.array_equal(panel2.post, panel.post)


class TestIngestDiagnostics:
    def test_unknown_region(self, tmp_path):
        content = GOOD_PANEL + "R99,2021-01-01,7.0,0.0,0.0\n"
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match=r"line 8: unknown region 'R99'"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_duplicate_region_date(self, tmp_path):
        content = GOOD_PANEL + "R01,2021-01-03,9.0,0.0,0.0\n"
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="line 8: duplicate"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_date_gap(self, tmp_path):
        content = GOOD_PANEL.replace("2021-01-03", "2021-01-05")
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="unevenly spaced"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_missing_value(self, tmp_path):
        content = GOOD_PANEL.replace("R00,2021-01-02,2.0,0.1,0.2",
                                     "R00,2021-01-02,,0.1,0.2")
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="line 3: missing value in column 'y'"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_nan_value(self, tmp_path):
        content = GOOD_PANEL.replace("R00,2021-01-02,2.0,0.1,0.2",
                                     "R00,2021-01-02,nan,0.1,0.2")
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="non-finite"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_short_row_missing_covariate(self, tmp_path):
        content = GOOD_PANEL.replace("R00,2021-01-02,2.0,0.1,0.2",
                                     "R00,2021-01-02,2.0,0.1")
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="missing covariate column"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_bad_date(self, tmp_path):
        content = GOOD_PANEL.replace("2021-01-02", "01/02/2021")
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="cannot parse date"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_incomplete_region_coverage(self, tmp_path):
        content = "\n".join(GOOD_PANEL.splitlines()[:-1]) + "\n"
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv", content)
        with pytest.raises(IngestionError, match="covers 2 of 3 dates"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_bad_header(self, tmp_path):
        regions = write(tmp_path, "regions.csv", GOOD_REGIONS)
        panel_path = write(tmp_path, "panel.csv",
                           GOOD_PANEL.replace("region_id,date,y", "id,day,value"))
        with pytest.raises(IngestionError, match="header"):
            dataio.ingest(regions, panel_path, ONSET)

    def test_duplicate_region_id(self, tmp_path):
        regions = write(tmp_path, "regions.csv",
                        GOOD_REGIONS.replace("R01", "R00"))
        with pytest.raises(IngestionError, match="duplicate region_id"):
            dataio.read_regions(regions)

    def test_bad_treated_flag(self, tmp_path):
        regions = write(tmp_path, "regions.csv",
                        GOOD_REGIONS.replace("R01,-5.0,30.0,0",
                                             "R01,-5.0,30.0,2"))
        with pytest.raises(IngestionError, match="treated must be 0 or 1"):
            dataio.read_regions(regions)

    def test_empty_file(self, tmp_path):
        path = write(tmp_path, "regions.csv", "")
        with pytest.raises(IngestionError, match="empty file"):
            dataio.read_regions(path)


class TestEstimateRoundTrip:
    def test_did_estimate_csv(self, tmp_path):
        est = DidEstimate(
            rho=0.31, beta0=1.0, beta1=0.2, beta2=-0.4, delta=-1.5,
            gamma=np.array([0.9, -0.4, -1.1, 0.25]),
            residual_variance=0.0123,
            standard_errors={"rho": 0.05, "beta0": 0.1, "beta1": 0.1,
                             "beta2": 0.1, "delta": 0.2, "gamma1": 0.01,
                             "gamma2": 0.02, "gamma3": 0.03, "gamma4": 0.04},
        )
        path = tmp_path / "est.csv"
        dataio.write_did_estimate_csv(est, path)
        loaded = dataio.read_did_estimate(path)
        assert loaded.rho == est.rho
        assert loaded.delta == est.delta
        assert np.array_equal(loaded.gamma, est.gamma)
        assert loaded.residual_variance == est.residual_variance
        assert loaded.standard_errors == est.standard_errors

    def test_no_spatial_estimate_blank_rho_se(self, tmp_path):
        est = DidEstimate(
            rho=0.0, beta0=1.0, beta1=0.2, beta2=-0.4, delta=-1.5,
            gamma=np.zeros(0), residual_variance=0.5,
            standard_errors={"beta0": 0.1, "beta1": 0.1, "beta2": 0.1,
                             "delta": 0.2},
        )
        path = tmp_path / "est.csv"
        dataio.write_did_estimate_csv(est, path)
        text = path.read_text()
        assert "rho,0.0,\n" in text
        loaded = dataio.read_did_estimate(path)
        assert "rho" not in loaded.standard_errors


class TestForecastSamplesRoundTrip:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=(2, 3, 4))
        dates = tuple(dt.date(2021, 2, 1) + dt.timedelta(days=k)
                      for k in range(3))
        path = tmp_path / "fc.csv"
        dataio.write_forecast_samples_csv(samples, ("a", "b"), dates, path)
        rids, rdates, cube = dataio.read_forecast_samples(path)
        assert rids == ("a", "b")
        assert rdates == dates
        assert np.array_equal(cube, samples)

    def test_malformed_sample_index(self, tmp_path):
        path = tmp_path / "fc.csv"
        path.write_text("region_id,date,sample,value\n"
                        "a,2021-01-01,zero,1.5\n")
        with pytest.raises(IngestionError, match="line 2.*not an integer"):
            dataio.read_forecast_samples(path)

    def test_ragged_counts_rejected(self, tmp_path):
        path = tmp_path / "fc.csv"
        path.write_text(
            "region_id,date,sample,value\n"
            "a,2021-01-01,0,1.0\n"
            "a,2021-01-01,1,2.0\n"
            "b,2021-01-01,0,3.0\n"
        )
        with pytest.raises(IngestionError, match="ragged"):
            dataio.read_forecast_samples(path)


class TestScoresCsv:
    def test_rows_written(self, tmp_path):
        report = ScoreReport(
            crps=0.5, wql={0.1: 0.2, 0.5: 0.3, 0.9: 0.1},
            coverage_interval={0.1: 0.91}, coverage_quantile={0.1: 0.12},
            energy=1.0, crps_per_region={"a": 0.4, "b": 0.6},
        )
        path = tmp_path / "scores.csv"
        dataio.write_scores_csv(report, path)
        text = path.read_text()
        assert text.startswith("metric,level,value\n")
        assert "crps,,0.5\n" in text
        assert "wql,0.9,0.1\n" in text
        assert "crps_region,a,0.4\n" in text

        long_path = tmp_path / "long.csv"
        dataio.write_scores_long_csv(report, "gaussian-full", 5, long_path)
        assert "gaussian-full,5,wql[0.5],0.3\n" in long_path.read_text()
