//! Property tests for the structural invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use riskcert::io;
use riskcert::risk::{build_omega, empirical_cvar, MomentSet, RiskLevel};

fn finite_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::ZERO
}

proptest! {
    // Trimming the tail deeper can only raise the conditional mean.
    #[test]
    fn empirical_cvar_is_monotone_in_eps(
        samples in prop::collection::vec(-1e6_f64..1e6, 1..200),
        e1 in 0.01_f64..0.98,
        gap in 0.001_f64..0.5,
    ) {
        let e2 = (e1 + gap).min(0.99);
        let lo = empirical_cvar(&samples, RiskLevel::new(e1).unwrap()).unwrap();
        let hi = empirical_cvar(&samples, RiskLevel::new(e2).unwrap()).unwrap();
        prop_assert!(lo >= hi - 1e-9 * hi.abs().max(1.0));
    }

    // CVaR of an empirical measure is translation-equivariant.
    #[test]
    fn empirical_cvar_translates(
        samples in prop::collection::vec(-1e3_f64..1e3, 1..100),
        shift in -1e3_f64..1e3,
        e in 0.05_f64..0.95,
    ) {
        let eps = RiskLevel::new(e).unwrap();
        let base = empirical_cvar(&samples, eps).unwrap();
        let shifted: Vec<f64> = samples.iter().map(|s| s + shift).collect();
        let moved = empirical_cvar(&shifted, eps).unwrap();
        prop_assert!((moved - base - shift).abs() < 1e-9 * base.abs().max(1.0));
    }

    // Ω inherits positive semidefiniteness from Σ (Schur complement at the
    // unit corner).
    #[test]
    fn omega_is_psd_for_any_moment_set(
        entries in prop::collection::vec(-2.0_f64..2.0, 9),
        mean in prop::collection::vec(-5.0_f64..5.0, 3),
    ) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let cov = &a * a.transpose();
        let ms = MomentSet::new(DVector::from_column_slice(&mean), cov).unwrap();
        let omega = build_omega(&ms);
        prop_assert!(riskcert::linalg::min_eigenvalue(omega.matrix()) > -1e-9);
    }

    // CSV serialization round-trips any finite double exactly.
    #[test]
    fn csv_round_trip_is_exact(values in prop::collection::vec(finite_f64(), 1..40)) {
        let m = DMatrix::from_row_slice(values.len(), 1, &values);
        let text = io::matrix_to_csv(&m);
        let back = io::parse_matrix_csv(&text, "mem").unwrap();
        prop_assert_eq!(m, back);
    }
}
