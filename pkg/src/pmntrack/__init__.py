"""Sensing-node selection and power allocation for multi-target tracking."""

from .baselines import exhaustive_select, nearest_select, oracle_power, subset_iter
from .dan import (DanParams, TrainConfig, dan_forward, dan_layer,
                  default_params, load_params, regret_bound_check, save_params,
                  train_dan)
from .fisher import (FisherState, MeasInfoSet, SelectionContext, cost_logdet,
                     fim, grad_u, hess_u, initial_info, meas_info_set, pcrlb,
                     prior_info)
from .mm_admm import (AdmmState, MMConfig, SelectTrace, admm_inner,
                      admm_u_update, admm_v_update, binarize, blended_start,
                      choose_T, mm_admm_select, penalty_value_grad,
                      round_selection)
from .power import PowerProblem, PowerResult, fp_power_update, rayleigh_bounds, solve_water_level
from .scenario import (Measurement, MotionModel, Scenario, SensingNode,
                       SimSetup, TargetState, build_motion_model, default_config,
                       load_setup, measurement_covariance, measurement_jacobian,
                       predict_state, sample_measurement, sample_transition,
                       true_measurement)
from .tracker import (AoConfig, TrackRecord, ao_optimize, ekf_update,
                      monte_carlo_rmse, run_tracking, run_trials)

__version__ = "0.1.0"
