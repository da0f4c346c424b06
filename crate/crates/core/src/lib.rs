//! Lazy factored inference for functional probabilistic programs whose
//! structure may be unbounded.
//!
//! A program is built in a [`Registry`]. To answer a query at depth `d` the
//! program is expanded `d` levels deep; whatever lies beyond is summarized by
//! the extended value `*`. The expansion is lowered to factors with interval
//! entries, a factored algorithm runs once on the lower and once on the upper
//! entries, and [`finalize`] turns the result into probability bounds that
//! tighten as `d` grows.
//!
//! ```
//! use lfi::{anytime_run, models, AnytimeOptions, Registry, Value};
//!
//! let mut reg = Registry::new();
//! let m = models::random_list::random_list_model(&mut reg).unwrap();
//! let results = anytime_run(&mut reg, m.query, &[5, 10, 15], &AnytimeOptions::ve(), |_| {}).unwrap();
//! let (lo, hi) = results[2].bounds.get(&Value::Bool(true));
//! assert!(lo <= 3.0 / 7.0 && 3.0 / 7.0 <= hi);
//! ```

pub mod bounds;
pub mod bp;
pub mod error;
pub mod expand;
pub mod factor;
pub mod model;
pub mod models;
pub mod oracle;
pub mod sanity;
pub mod table;
pub mod value;
pub mod ve;

pub use bounds::{anytime_run, finalize, run_depth, Algorithm, AnytimeError, AnytimeOptions, Bounds, DepthResult};
pub use bp::{run_bp, BpOptions, BpResult};
pub use error::{Error, Result};
pub use expand::{expand_basic, expand_lazy_evidence, expand_with_backtracking, ExpansionState};
pub use factor::{build_all_factors, Factor, FactorKind, FactorSet, Interval, Var};
pub use model::{ElementKind, Evidence, EvidenceKind, Registry};
pub use value::{ElementId, ExtendedValue, Field, Value};
pub use ve::run_ve;
