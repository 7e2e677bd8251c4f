//! Bradley-Terry-type paired-comparison models with draws.

mod fit;
mod model;
mod probs;

pub use fit::{fit_bt, fit_ml, predict, BtFit, BtPredictor, FitOptions, FitResult, WindowConfig};
pub use model::{
    grad_loglik, loglik, loglik_detailed, strength, BTModel, ColumnScale, DrawKind, DrawRule,
    LoglikValue, StrengthKind, StrengthSpec,
};
pub use probs::{
    davidson_term, log_logistic, logistic, ordinal_term, probs_davidson, probs_ordinal,
    DavidsonTerm, OrdinalTerm, PROB_FLOOR,
};

#[cfg(test)]
mod tests;
