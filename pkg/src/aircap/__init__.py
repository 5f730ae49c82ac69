"""Airport departure capacity: delay, airline demand and airport profit."""

from .calibration import (
    AirportFinancials,
    CalibratedAirport,
    CalibrationError,
    FlightRecord,
    FlightRecords,
    calibrate_airport,
    calibrate_beta,
    fit_delay_capacity,
    post_calibrate_beta,
)
from .costs import (
    CorrectedCostCurve,
    FitError,
    QuadratureError,
    ShiftedLogNormal,
    build_corrected_curve,
    corrected_cost,
    expected_cost,
    fit_blend,
    fit_shifted_lognormal,
    scale_sigma,
)
from .data_io import (
    DataError,
    SyntheticAirportSpec,
    generate_synthetic,
    load_financials,
    load_records,
    write_results,
)
from .equilibrium import EquilibriumError, daily_profit, demand_supply_trace, solve_window
from .experiments import (
    ExploratorySpendParams,
    breakeven_alpha,
    compare_airports,
    exploratory_profit,
    sensitivity_smoothness,
    sweep_capacity,
    sweep_nf,
    sweep_predictability,
)
from .model import (
    HOURS,
    PAPER_COEFFS,
    SIGN_SWAPPED_COEFFS,
    AirportParameters,
    CostCoefficients,
    HourWindow,
    ModelError,
    ProfitBreakdown,
    capacity_cost,
    delay_from_traffic,
    hourly_revenue,
    operate_probability,
    raw_cost_of_delay,
    traffic_from_delay,
)

__version__ = "0.1.0"
