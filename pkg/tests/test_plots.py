import numpy as np
import pytest

from hrisloc.errors import HrislocError, MissingColumn
from hrisloc.experiment import (
    METRIC_KEYS,
    MetricRow,
    rho_sweep_bounds,
    write_bound_rows,
    write_metric_rows,
)
from hrisloc.plots import FigureSpec, _fig_rho, read_csv_columns, render
from hrisloc.scenario import RadioConfig, default_scenario


def small_config():
    return RadioConfig(
        n_subcarriers=32, n_transmissions=20, bs_shape=(4, 4), ris_shape=(8, 8), fft_size=1024
    )


def synthetic_metric_rows(values, variable="p_b_dbm"):
    rng = np.random.default_rng(4)
    rows = []
    for v in values:
        base = {k: float(10.0 ** (-v / 10.0) * (1 + 0.1 * rng.random())) for k in METRIC_KEYS}
        rows.append(
            MetricRow(
                sweep_variable=variable,
                sweep_value=float(v),
                trials=8,
                failures=0,
                rmse=dict(base),
                crb={k: 0.9 * x for k, x in base.items()},
                median=dict(base),
                q90={k: 1.5 * x for k, x in base.items()},
            )
        )
    return rows


@pytest.fixture(scope="module")
def golden_power_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "power.csv"
    write_metric_rows(path, synthetic_metric_rows([9, 15, 21, 27]))
    return path


@pytest.fixture(scope="module")
def golden_scatterer_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "sp.csv"
    write_metric_rows(path, synthetic_metric_rows([0, 2, 4, 8], variable="n_scatterers"))
    return path


@pytest.fixture(scope="module")
def golden_rho_csv(tmp_path_factory):
    scn, _ = default_scenario()
    cfg = small_config()
    rhos = [0.1, 0.3, 0.5, 0.7, 0.9]
    reports = rho_sweep_bounds(scn, cfg, rhos, seed=0)
    path = tmp_path_factory.mktemp("csv") / "rho.csv"
    write_bound_rows(path, reports, ["default"] * len(rhos), [30.0] * len(rhos), rhos)
    return path


class TestRender:
    @pytest.mark.parametrize("figure_id", ["power-rmse", "power-state"])
    def test_power_figures(self, figure_id, golden_power_csv, tmp_path):
        out = tmp_path / f"{figure_id}.png"
        written = render(
            FigureSpec(figure_id=figure_id, inputs=(str(golden_power_csv),), output=str(out))
        )
        assert len(written) == 2  # raster plus vector twin
        for path in written:
            assert out.parent.joinpath(path.split("/")[-1]).stat().st_size > 0

    def test_rho_figure(self, golden_rho_csv, tmp_path):
        out = tmp_path / "rho.png"
        written = render(
            FigureSpec(figure_id="rho", inputs=(str(golden_rho_csv),), output=str(out))
        )
        assert all(
            out.parent.joinpath(p.split("/")[-1]).stat().st_size > 0 for p in written
        )

    def test_rho_contains_constant_direct_series(self, golden_rho_csv):
        # the direct-path TOA bound is split-independent: flat line present
        columns = read_csv_columns(golden_rho_csv)
        fig = _fig_rho(columns, str(golden_rho_csv))
        labels = {line.get_label(): line for line in fig.axes[0].get_lines()}
        target = [line for label, line in labels.items() if "bs-ue" in label]
        assert target, labels.keys()
        ydata = np.asarray(target[0].get_ydata(), dtype=float)
        assert (ydata.max() - ydata.min()) <= 1e-9 * ydata[0]

    def test_scatterer_figure(self, golden_scatterer_csv, tmp_path):
        out = tmp_path / "sp.png"
        written = render(
            FigureSpec(
                figure_id="scatterers", inputs=(str(golden_scatterer_csv),), output=str(out)
            )
        )
        assert len(written) == 2

    def test_multiple_inputs_concatenate(self, golden_power_csv, tmp_path):
        out = tmp_path / "multi.png"
        spec = FigureSpec(
            figure_id="power-rmse",
            inputs=(str(golden_power_csv), str(golden_power_csv)),
            output=str(out),
        )
        assert len(render(spec)) == 2

    def test_deterministic_point_set(self, golden_rho_csv):
        columns = read_csv_columns(golden_rho_csv)
        figs = [_fig_rho(columns, str(golden_rho_csv)) for _ in range(2)]
        data = [
            [np.asarray(line.get_ydata()) for line in fig.axes[0].get_lines()]
            for fig in figs
        ]
        for a, b in zip(*data):
            assert np.array_equal(a, b)


class TestErrors:
    def test_unknown_figure_id(self):
        with pytest.raises(HrislocError, match="unknown figure id"):
            FigureSpec(figure_id="pie-chart", inputs=("x.csv",), output="y.png")

    def test_empty_csv(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(HrislocError, match="empty"):
            render(FigureSpec(figure_id="rho", inputs=(str(path),), output="y.png"))

    def test_header_only_csv(self, tmp_path):
        path = tmp_path / "header.csv"
        path.write_text("rho,teb_bu_m\n")
        with pytest.raises(HrislocError, match="no data rows"):
            render(FigureSpec(figure_id="rho", inputs=(str(path),), output="y.png"))

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("rho,peb_r_m\n0.5,1.0\n")
        with pytest.raises(MissingColumn, match="peb_u_m"):
            render(FigureSpec(figure_id="rho", inputs=(str(path),), output="y.png"))

    def test_no_inputs(self):
        with pytest.raises(HrislocError, match="at least one input"):
            FigureSpec(figure_id="rho", inputs=(), output="y.png")
