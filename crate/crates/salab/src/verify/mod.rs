//! Statistical machinery tying ensembles to bounds: violation audits with
//! Clopper–Pearson bounds, tail-exponent fits, and Monte Carlo checks of the
//! MGF recursion and the exponential supermartingale.

mod audit;
mod machinery;
mod stats;
mod tail;

pub use audit::{audit_ensemble, audit_violations, clopper_pearson_upper, ViolationAudit, AUDIT_CONFIDENCE, AUDIT_REL_TOL};
pub use stats::ols_slope;
pub use tail::{empirical_ccdf, fit_tail_exponent, Ccdf, FitRange, TailFit, TailFitOptions, MIN_TAIL_POINTS, N_BOOT};
pub use machinery::{
    check_mgf_recursion, check_supermartingale, Corruption, Machinery, MachineryOptions, MachineryReport, MachineryRow,
    MACHINERY_SE_GATE,
};
