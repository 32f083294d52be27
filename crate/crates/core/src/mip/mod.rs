//! Mixed-integer models: the generic model type, operator encodings, and the
//! LipMIP construction.

pub mod encode;
pub mod lipmip;
pub mod model;

pub use encode::{
    encode_abs, encode_affine, encode_conditional, encode_cross_norm_ball, encode_l1_ball, encode_linf_ball,
    encode_max, encode_relu, encode_switch, EncodingContext, Indicator,
};
pub use lipmip::{
    build_forced, build_lipmip_model, BranchContext, InputConstraint, LipMipModel, LipschitzContext,
    LipschitzQuery, NodeModel, PlainContext,
};
pub use model::{Constraint, LinExpr, MipModel, VarId, VarKind, Variable};

/// The LP relaxation of `model`: every binary becomes continuous in `[0, 1]`.
pub fn lp_relaxation<T: crate::Scalar>(model: &MipModel<T>) -> MipModel<T> {
    model.lp_relaxation()
}
