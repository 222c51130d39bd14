//! The structured feature layer: per-joint feature banks refined by message
//! passing over a joint tree, in one or two directions.

mod message;
mod receptive;
mod tree;

pub use message::{
    apply_kernel_stack, concat_branches, kernel_stack_backward, pass_messages,
    pass_messages_backward, per_joint_features, per_joint_features_backward,
    predict_score_maps, predict_score_maps_backward, split_branches, BranchFeatures,
    BranchStacks, PassCache, StackCache, TransformKernelStack,
};
pub use receptive::{format_rf_table, paper_table1, receptive_field_of, LayerDesc, RfRow};
pub use tree::{Direction, JointTree};
