"""Sequential importance sampling for dynamic MEG dipole tracking."""

from .forward import (DipoleState, DipoleTooCloseError, FieldGain, HeadRegion, SensorArray,
                      field_at_sensor, field_matrix)
from .state_space import ArModel, LinearObsModel, ObsModel
from .sis import EnsembleCollapse, ParticleEnsemble, SisConfig, run_sis
from .gibbs import ChainTrace, GibbsConfig, run_chains, run_gibbs
from .scenarios import Scenario, gen_case1, gen_case2, make_sensor_array

__version__ = "0.1.0"
