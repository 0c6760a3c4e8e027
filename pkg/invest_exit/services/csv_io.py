"""CSV records for sweeps and simulation comparisons, plus gnuplot scripts."""

from typing import IO, Iterable, List, Union

import pandas as pd

from invest_exit.schemas import StaticsRow

FLOAT_FORMAT = "%.17g"

# CSV column -> StaticsRow field
STATICS_COLUMNS = {
    "g": "g",
    "b": "b",
    "xi_0": "xi_0",
    "xi_1": "xi_1",
    "xi_E": "xi_E",
    "xi_I": "xi_I",
    "d_xiE_dsigma2": "d_xiE_d_sigma2",
    "d_xiI_dsigma2": "d_xiI_d_sigma2",
    "d_xiI_dmu": "d_xiI_d_mu",
    "solver_status": "solver_status",
    "step_sigma2": "step_sigma2",
    "step_mu": "step_mu",
    "alpha": "alpha",
    "mu": "mu",
    "sigma2": "sigma2",
    "delta": "delta",
    "k": "k",
}

SIMULATE_COLUMNS = ["x0", "analytic_value", "mc_mean", "mc_se", "p_invest_closed", "p_invest_mc", "z_score"]


def statics_frame(rows: Iterable[StaticsRow]) -> pd.DataFrame:
    records = [{column: getattr(row, field) for column, field in STATICS_COLUMNS.items()} for row in rows]
    return pd.DataFrame.from_records(records, columns=list(STATICS_COLUMNS))


def simulate_frame(records: Iterable[dict]) -> pd.DataFrame:
    return pd.DataFrame.from_records(list(records), columns=SIMULATE_COLUMNS)


def write_csv(frame: pd.DataFrame, target: Union[str, IO[str]]) -> None:
    """Header row, '.' decimal point, reals with 17 significant digits."""
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")


def read_csv(source: Union[str, IO[str]]) -> pd.DataFrame:
    return pd.read_csv(source, float_precision="round_trip")


def statics_rows(frame: pd.DataFrame) -> List[StaticsRow]:
    """StaticsRows back from a frame produced by statics_frame."""
    rows = []
    for record in frame.to_dict(orient="records"):
        data = {field: record[column] for column, field in STATICS_COLUMNS.items()}
        data["solver_status"] = str(data["solver_status"])
        rows.append(StaticsRow(**data))
    return rows


def gnuplot_script(csv_path: str, variable: str = "g") -> str:
    """Two-panel plot of thresholds and their sigma^2 derivatives against `variable`."""
    return "\n".join([
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set multiplot layout 2,1",
        f"set xlabel '{variable}'",
        "set ylabel 'threshold'",
        f"plot '{csv_path}' using '{variable}':'xi_I' with lines, \\",
        f"     '' using '{variable}':'xi_E' with lines, \\",
        f"     '' using '{variable}':'xi_0' with lines dashtype 2",
        "set ylabel 'd / d sigma^2'",
        f"plot '{csv_path}' using '{variable}':'d_xiI_dsigma2' with lines, \\",
        f"     '' using '{variable}':'d_xiE_dsigma2' with lines",
        "unset multiplot",
        "",
    ])
