from .energy import EnergyResult, EnergyWeights, OptimizerState, acceleration_vjp, energy, energy_stage1, energy_stage2, velocity_vjp
from .fit import (DivergenceError, FitReport, FitSchedule, fit_sequence, generate_motion, geodesic_infill,
                  inbetween, initial_sequence, joint_observation)
from .losses import (bisquare_weight, contact_heuristic, geman_mcclure, loss_contact, loss_data_2d, loss_data_3d,
                     loss_data_pc, loss_reg)
from .observations import Observation, PinholeCamera, read_observation, write_observation
