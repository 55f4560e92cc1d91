//! CATE estimation: base regressors, propensity model, meta-learners and
//! baseline reducers.

pub mod learners;
pub mod propensity;
pub mod reduce;
pub mod regress;

pub use learners::{
    dr_learner, dr_learner_with_nuisances, dr_pseudo_outcome, fit_cate, r_learner, t_learner,
    x_learner, CateModel, LearnerKind, LearnerSpec, Nuisances,
};
pub use propensity::{propensity_fit, PropensityModel};
pub use reduce::{
    ae_fit, fit_reducer, pca_fit, reconstruction_mse, Autoencoder, FittedReducer, Pca,
    ReducerKind,
};
pub use regress::{kernel_ridge_fit, ridge_fit, BaseKind, BaseSpec, Regressor};
