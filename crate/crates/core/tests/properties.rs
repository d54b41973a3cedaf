use proptest::prelude::*;

use xfer_core::measures::{Compression, ZERO_SNAP};
use xfer_core::oracles::enumerate_t_b;
use xfer_core::transfer::{k_b, predicted_moments, t_b_exact, TransferConfig};
use xfer_core::{tv_distance, w1_distance, AtomicMeasure, TransferKernel};

fn location() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        1 => (1u32..20).prop_map(|k| k as f64 * 0.25),
        4 => 0.0f64..10.0,
    ]
}

fn measure(max_len: usize) -> impl Strategy<Value = AtomicMeasure> {
    prop::collection::vec((location(), 0.01f64..2.0), 1..=max_len)
        .prop_map(|pairs| AtomicMeasure::new(pairs).unwrap())
}

fn probability(max_len: usize) -> impl Strategy<Value = AtomicMeasure> {
    measure(max_len).prop_map(|u| u.normalized().unwrap())
}

/// Weights are multiples of 1/64 summing to exactly 1.
fn dyadic_probability(max_len: usize) -> impl Strategy<Value = AtomicMeasure> {
    prop::collection::vec((location(), 1u32..8), 1..=max_len).prop_flat_map(|pairs| {
        let used: u32 = pairs.iter().map(|p| p.1).sum();
        location().prop_map(move |x| {
            let mut atoms: Vec<(f64, f64)> =
                pairs.iter().map(|&(y, c)| (y, c as f64 / 64.0)).collect();
            atoms.push((x, (64 - used) as f64 / 64.0));
            AtomicMeasure::new(atoms).unwrap()
        })
    })
}

fn kernel() -> impl Strategy<Value = TransferKernel> {
    let z = prop_oneof![1 => Just(0.0), 1 => Just(1.0), 1 => Just(0.5), 4 => 0.0f64..=1.0];
    prop::collection::vec((z, 0.01f64..1.0), 1..=8).prop_map(|raw| {
        let total: f64 = raw.iter().map(|a| a.1).sum();
        let atoms: Vec<_> = raw.iter().map(|&(z, w)| (z, w / total)).collect();
        TransferKernel::from_atoms(&atoms).unwrap()
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn exact(kernel: &TransferKernel, u: &AtomicMeasure, v: &AtomicMeasure) -> AtomicMeasure {
    t_b_exact(kernel, u, v, &TransferConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn canonical_form(u in measure(12)) {
        let again = AtomicMeasure::new(u.iter()).unwrap();
        prop_assert_eq!(&again, &u);
        for w in u.atoms().windows(2) {
            prop_assert!(w[0].location < w[1].location);
        }
        for a in u.atoms() {
            prop_assert!(a.weight > 0.0);
            prop_assert!(a.location == 0.0 || a.location > ZERO_SNAP);
        }
    }

    #[test]
    fn greedy_compression_contract(u in measure(40), max_atoms in 2usize..12) {
        let (c, report) = u.compress(max_atoms).unwrap();
        prop_assert!(c.len() <= max_atoms);
        prop_assert!(rel_close(c.mass(), u.mass(), 1e-12));
        prop_assert!(rel_close(c.moment(1).unwrap(), u.moment(1).unwrap(), 1e-12));
        prop_assert!(c.moment(2).unwrap() <= u.moment(2).unwrap() * (1.0 + 1e-12));
        prop_assert_eq!(c.mass_at_zero(), u.mass_at_zero());
        prop_assert!(w1_distance(&u, &c).unwrap() <= report.w1_error_bound * (1.0 + 1e-9) + 1e-15);
        if report.merges_performed == 0 {
            prop_assert_eq!(report.w1_error_bound, 0.0);
        }
    }

    #[test]
    fn lattice_compression_keeps_mass_and_mean(u in measure(200), max_atoms in 16usize..128) {
        let (c, report) = u.compress_with(max_atoms, Compression::Lattice).unwrap();
        prop_assert!(c.len() <= max_atoms);
        prop_assert!(rel_close(c.mass(), u.mass(), 1e-12));
        prop_assert!(rel_close(c.moment(1).unwrap(), u.moment(1).unwrap(), 1e-12));
        prop_assert_eq!(c.mass_at_zero(), u.mass_at_zero());
        prop_assert!(w1_distance(&u, &c).unwrap() <= report.w1_error_bound * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn metric_axioms(u in probability(6), v in probability(6), w in probability(6)) {
        let (uv, vu) = (w1_distance(&u, &v).unwrap(), w1_distance(&v, &u).unwrap());
        prop_assert_eq!(uv, vu);
        prop_assert!(uv >= 0.0);
        let uw = w1_distance(&u, &w).unwrap();
        let vw = w1_distance(&v, &w).unwrap();
        prop_assert!(uw <= uv + vw + 1e-12);
        prop_assert_eq!(w1_distance(&u, &u).unwrap(), 0.0);

        let (t_uv, t_vu) = (tv_distance(&u, &v), tv_distance(&v, &u));
        prop_assert_eq!(t_uv, t_vu);
        prop_assert!(tv_distance(&u, &w) <= t_uv + tv_distance(&v, &w) + 1e-12);
        prop_assert_eq!(tv_distance(&u, &u), 0.0);
        prop_assert_eq!(t_uv == 0.0, u == v);
    }

    #[test]
    fn tv_is_attained_by_sign_function(u in measure(6), v in measure(6)) {
        // φ = sign(w_u − w_v) on the union support
        let phi = |x: f64| {
            let d = u.weight_at(x) - v.weight_at(x);
            if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 }
        };
        let direct = u.integrate(phi) - v.integrate(phi);
        prop_assert!(rel_close(direct, tv_distance(&u, &v), 1e-12));
    }

    #[test]
    fn kernel_moment_inequalities(k in kernel()) {
        prop_assert!((k.atoms().mass() - 1.0).abs() <= 1e-12);
        prop_assert!(k.lambda2() <= k.lambda1() + 1e-15);
        prop_assert!(k.lambda1() * k.lambda1() <= k.lambda2() + 1e-15);
    }

    #[test]
    fn moment_identities(k in kernel(), u in measure(8), v in measure(8)) {
        let out = exact(&k, &u, &v);
        let p = predicted_moments(&k, &u, &v);
        prop_assert!(rel_close(out.mass(), p.m0, 1e-10));
        prop_assert!(rel_close(out.moment(1).unwrap(), p.m1, 1e-10));
        prop_assert!(rel_close(out.moment(2).unwrap(), p.m2, 1e-10));
    }

    #[test]
    fn agrees_with_enumeration(k in kernel(), u in measure(6), v in measure(6)) {
        let out = exact(&k, &u, &v);
        prop_assert_eq!(tv_distance(&out, &enumerate_t_b(&k, &u, &v).unwrap()), 0.0);
    }

    #[test]
    fn support_bound(k in kernel(), u in measure(8), v in measure(8)) {
        let out = exact(&k, &u, &v);
        let bound = u.max_location().unwrap() + v.max_location().unwrap();
        prop_assert!(out.max_location().unwrap() <= bound);
    }

    #[test]
    fn symmetrized_mean_is_conserved(k in kernel(), u in measure(8)) {
        let out = exact(&k, &u, &u);
        prop_assert!(rel_close(out.moment(1).unwrap(), u.mass() * u.moment(1).unwrap(), 1e-12));
    }

    #[test]
    fn dirac_inputs_reduce_to_k_b(k in kernel(), x1 in location(), x2 in location()) {
        let out = exact(&k, &AtomicMeasure::dirac(x1).unwrap(), &AtomicMeasure::dirac(x2).unwrap());
        prop_assert_eq!(out, k_b(&k, x1, x2).unwrap());
    }

    #[test]
    fn identity_kernel(u in dyadic_probability(8)) {
        prop_assert_eq!(u.mass(), 1.0);
        let k = TransferKernel::dirac(0.0).unwrap();
        prop_assert_eq!(tv_distance(&exact(&k, &u, &u), &u), 0.0);
    }

    #[test]
    fn bilinearity(k in kernel(), u in measure(6), v in measure(6), e in -4i32..4) {
        // powers of two scale every weight exactly
        let alpha = 2f64.powi(e);
        let lhs = exact(&k, &u.scaled(alpha).unwrap(), &v);
        let rhs = exact(&k, &u, &v).scaled(alpha).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn second_moment_recursion(k in kernel(), u in probability(8)) {
        let next = exact(&k, &u, &u);
        let (l1, l2) = (k.lambda1(), k.lambda2());
        let (m1, m2) = (u.moment(1).unwrap(), u.moment(2).unwrap());
        let expected = (1.0 - 2.0 * l1 + 2.0 * l2) * m2 + 2.0 * l1 * (1.0 - l1) * m1 * m1;
        prop_assert!(rel_close(next.moment(2).unwrap(), expected, 1e-10));
    }

    #[test]
    fn zero_mass_stays_zero(u in measure(6), z in 0.01f64..0.99, keep_one in any::<bool>()) {
        // a kernel without an atom at 0 or without one at 1
        let atoms = if keep_one { vec![(z, 0.5), (1.0, 0.5)] } else { vec![(0.0, 0.5), (z, 0.5)] };
        let k = TransferKernel::from_atoms(&atoms).unwrap();
        let u = AtomicMeasure::new(u.iter().map(|(x, w)| (x + 0.5, w))).unwrap();
        let out = exact(&k, &u, &u);
        prop_assert_eq!(out.mass_at_zero(), 0.0);
    }
}
