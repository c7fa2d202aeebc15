"""Self-reported baseline demand response: consumer reports, SO cost and baseline comparison."""

__version__ = "0.1.0"

from .caiso import (CaisoBaseline, ComparisonReport, HorizonPlan, adjusted_baseline,
                    caiso_unadjusted_baseline, compare_methods, make_horizon,
                    simulate_caiso_horizon)
from .consumer import (check_individual_rationality, consumption_called,
                       consumption_nonparticipant, consumption_not_called, expected_cost,
                       inflation_bound_deadband, optimal_report_closed_form, second_stage,
                       solve_optimal_report)
from .errors import (ContractError, DomainError, DRError, RecruitmentError, ScenarioError,
                     SolverError)
from .market import MarketModel, optimal_reduction, supply_price, tmc_price, validate_market
from .mechanism import (GroupPlan, Population, build_groups, run_dr_event, select_group,
                        simulate_events, so_cost_no_recruitment, so_cost_with_recruitment,
                        sweep_probability)
from .model import (ConsumerParams, MechanismParams, PenaltySpec, ThetaDist, ThetaSamplePlan,
                    inverse_marginal_utility, marginal_utility, penalty_derivative,
                    penalty_value, utility_value)
from .scenario import Scenario, load_scenario, parse_scenario
