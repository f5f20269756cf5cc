"""Event-driven juggling simulation and the experiment suites."""
from .collisions import CollisionEvent, pair_minimum, window_check
from .funnel import Funnel
from .trial import (DROP_CAUSES, MODES, SimConfig, SimConfigError, SimReport, WorldState,
                    check_collisions, run_trial)
from .experiments import (DEFAULT_GRIDS, KINDS, ExperimentError, ExperimentResult,
                          reference_height, run_experiment, trial_seed)
