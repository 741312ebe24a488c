"""POD-Galerkin wind forecasting, EKF assimilation and receding-horizon planning."""

from .config import RunConfig, config_from_dict, load_config
from .errors import (BlowUpError, ConditioningError, ConfigError, DegenerateBasisError, DimensionError,
                     OutOfDomainError, StepFailure, UndefinedMetricError)
from .field import (Grid3, ScalarField3, VectorField3, advect, boundary_flux, divergence, gradient_op,
                    inner_product, laplacian_op, read_vf3, sample, sample_many, write_vf3)
from .metrics import (EpisodeMetrics, control_rms, episode_metrics, field_rmse, final_distance,
                      mean_alignment, time_in_station)
from .observer import (EkfConfig, EkfState, PredictedFlow, SensorNetwork, ekf_predict, ekf_update,
                       forecast_field, measurement_matrix)
from .planner import (PlanProblem, Trajectory, altitude_seeds, mpc_step, plan_cost, rollout, shift_warm_start,
                      solve_mpc)
from .pod import (PodBasis, SnapshotSet, compute_mean, correlation_matrix, pod_decompose, project,
                  read_podb, reconstruct, reconstruction_error, write_podb)
from .rom import RomModel, RomState, assemble_rom, integrate_rom, read_rom, rom_jacobian, rom_rhs, write_rom
from .sim import (EpisodeLog, PlannerSettings, Scenario, SyntheticWind, WindLayer, agent_step,
                  default_sensor_network, layered_shear_benchmark, run_episode, snapshot_campaign,
                  wind_eval, wind_eval_many)

__version__ = "0.1.0"
