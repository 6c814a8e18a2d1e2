"""Population based training: joint optimisation of weights and
hyperparameters across a population of concurrently trained members."""

from .core import (
    ConfigError,
    EvalWindow,
    ExperimentConfig,
    ExploitConfig,
    ExploreConfig,
    HyperparamSpec,
    MemberState,
    Prior,
    best,
    ready,
    record_eval,
)
from .engine import (
    ExperimentFailed,
    RunReport,
    init_population,
    run_ablation,
    run_experiment,
    run_random_search_baseline,
)
from .stats import WelchResult, student_t_upper_tail, welch_t
from .store import Checkpoint, DirectoryStore, PopulationStore
from .tasks import LogisticRegression, NoisyQuadratic, QuadraticToy, make_task

__version__ = "0.1.0"
