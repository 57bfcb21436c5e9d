"""Single-class patch mining: a DDQN with prioritized multistep replay
selects target-class patches from a pool of fixed feature vectors.
"""

from .agent import (
    DqnAgent,
    DqnHyperparams,
    EpsilonSchedule,
    MisicalPolicy,
    epsilon_at,
    pretrain,
    select_topk,
)
from .baselines import coreset_greedy, make_policy, rank_bald, rank_entropy, rank_random
from .config import RunConfig, build_run_config
from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    MisicalError,
    PoolFormatError,
    RecordInvariantError,
    UnsupportedVersionError,
    ValidationError,
)
from .features import (
    BaldSummary,
    ClassPresence,
    bald_summary,
    class_presence,
    concat_features,
    mc_bald_pixel,
    shannon_entropy,
)
from .pool import Pool, histogram_entropy, init_pool, reward_categorical
from .poolio import (
    PatchRecord,
    PoolHeader,
    export_csv,
    read_pool,
    read_pool_arrays,
    stream_pool,
    write_pool,
)
from .qnet import QNetwork, RMSProp, soft_update, td_target, train_batch
from .replay import (
    Experience,
    NStepAccumulator,
    PrioritizedReplayBuffer,
    SumTree,
    ZetaSchedule,
    anneal_zeta,
)
from .runner import run_command, compare_command, run_single, welch_t_test
from .synth import (
    IouModel,
    SynthConfig,
    delta_iou_reward,
    generate_pool,
    simulated_mean_iou,
    thought_experiment,
)

__version__ = "0.1.0"
