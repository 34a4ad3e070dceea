//! Minimal differentiable function-approximation stack: tanh MLPs with
//! analytic reverse-mode gradients, categorical action heads, value heads,
//! an adaptive-moment optimizer, global-norm gradient clipping, and a
//! finite-difference verifier.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod ops;
mod policy;

pub use adam::{
    adam_step, clip_gradients, clip_gradients_joint, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
    DEFAULT_LEARNING_RATE,
};
pub use checkpoint::{
    load_generalist_policy, load_policy, load_state_policy, save_generalist_policy,
    save_state_policy, PolicyCheckpoint, CHECKPOINT_SCHEMA,
};
pub use gradcheck::finite_diff_check;
pub use mlp::{
    init_params, mlp_backward, mlp_forward, mlp_forward_cached, ForwardCache, MlpSpec, ParamVector,
};
pub use ops::{action_distribution, entropy, log_prob, log_softmax, LOG_PROB_FLOOR};
pub use policy::{
    encode_env, state_policy_input, GeneralistCache, GeneralistPolicy, StatePolicy, EMBED_DIM,
    ENV_ENCODING_LEN, STATE_INPUT_LEN,
};
