"""Learned power allocation for control loops over a shared fading channel.

m independent linear plants close their control loops over a wireless
downlink; per-plant packet success depends on channel fading and the
transmit power an access point assigns out of a shared budget. This
package simulates that system and trains a neural allocation policy with a
score-function policy gradient, entirely on numpy.
"""

from .config import ExperimentConfig, apply_env_overrides, load_config, save_config
from .errors import (
    ConfigError,
    EpisodeError,
    FeasibilityError,
    GainSynthesisError,
    PolicyError,
    PretrainError,
    TrainingError,
)
from .experiment import (
    EvalReport,
    TrainResult,
    build_eval_allocators,
    build_policy,
    compare,
    evaluate,
    make_channel,
    make_plants,
    train,
)
from .mlp import (
    ForwardCache,
    MlpParams,
    backward,
    forward,
    init_params,
    load_params,
    param_count,
    save_params,
    sgd_step,
)
from .policy import (
    AllocationSample,
    ControlAwareAllocator,
    EqualAllocator,
    GaussianSimplexPolicy,
    MeanPolicyAllocator,
    SampledPolicyAllocator,
    control_aware_allocation,
    equal_allocation,
    log_prob_grad,
    mean_allocation,
    policy_forward,
    sample_allocation,
)
from .rngstreams import substream
from .system import (
    ChannelModel,
    ObservationNoise,
    PlantModel,
    SystemState,
    draw_fading,
    lqr_gain,
    make_plant,
    make_scalar_plants,
    observe,
    packet_success_prob,
    stage_cost,
    step_plant,
)
from .training import (
    EpisodeTrace,
    TrainLogRow,
    episode_cost,
    pretrain_supervised,
    reinforce_update,
    returns,
    rollout_episode,
)

__version__ = "0.1.0"
