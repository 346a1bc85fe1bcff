//! Property tests for the structural invariants of each module.

use proptest::prelude::*;

use kmslab::config::ObservableId;
use kmslab::correlations::{kms_check, random_probes, wok_correlation, PreparedProbes};
use kmslab::dynamics::{evolve, TimeGrid};
use kmslab::exec::ExecMode;
use kmslab::experiments::fit_decay;
use kmslab::hamiltonian::{assemble, catalog, BoundaryMode, Model};
use kmslab::lattice::{
    averaged_order_parameter, embed, translate, BoxRegion, CovariantFamily, LocalOperator,
    MemberPolicy, Region, Site,
};
use kmslab::linalg::{c64, commutator, hermitian_deviation, max_abs_diff, operator_norm, trace, Mat};
use kmslab::states::{expect, gibbs_state, spectral_decompose, tracial_state, Beta, SpectralData};

fn model() -> impl Strategy<Value = Model> {
    prop_oneof![
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(j, g)| Model::Tfi { j, g }),
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(j, delta)| Model::Xxz { j, delta }),
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(j, g)| Model::AllToAll { j, g }),
    ]
}

fn mode() -> impl Strategy<Value = BoundaryMode> {
    prop_oneof![Just(BoundaryMode::Embedded), Just(BoundaryMode::Free)]
}

fn spectral(m: Model, n: usize, mode: BoundaryMode) -> SpectralData {
    let h = assemble(&catalog(m, 1).unwrap(), BoxRegion::chain(n).unwrap().region(), mode, 12).unwrap();
    spectral_decompose(&h).unwrap()
}

fn cmat(k: usize, vals: &[(f64, f64)]) -> Mat<c64> {
    Mat::from_fn(k, k, |i, j| {
        let (re, im) = vals[i * k + j];
        c64::new(re, im)
    })
}

/// Operator on one or two adjacent sites of a chain starting at `x`.
fn local_op() -> impl Strategy<Value = LocalOperator> {
    (0i64..5, 1usize..=2)
        .prop_flat_map(|(x, len)| {
            let k = 1 << len;
            (Just(x), Just(len), proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), k * k))
        })
        .prop_map(|(x, len, vals)| {
            let support: Vec<Site> = (0..len as i64).map(|i| Site::from(x + i)).collect();
            LocalOperator::new(support, cmat(1 << len, &vals), "A").unwrap()
        })
}

fn chain(n: usize) -> Region {
    BoxRegion::chain(n).unwrap().region().clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn box_metric_and_translation(dim in 1usize..=3, ext in proptest::collection::vec(1usize..4, 3), shift in proptest::collection::vec(-5i64..5, 3)) {
        let b = BoxRegion::new(vec![0; dim], ext[..dim].to_vec()).unwrap();
        prop_assert_eq!(b.len(), ext[..dim].iter().product::<usize>());
        let s = b.sites();
        for x in s {
            for y in s {
                prop_assert_eq!(x.distance(y), y.distance(x));
                for z in s.iter().take(4) {
                    prop_assert!(x.distance(z) <= x.distance(y) + y.distance(z));
                }
            }
        }
        let t = b.translated(&shift[..dim]);
        prop_assert_eq!(t.extents(), b.extents());
        for (p, q) in b.sites().iter().zip(t.sites()) {
            prop_assert_eq!(&p.shifted(&shift[..dim]), q);
        }
    }

    #[test]
    fn commutator_bound_and_locality(a in local_op(), b in local_op()) {
        let region = chain(7);
        let ea = embed(&a, &region).unwrap();
        let eb = embed(&b, &region).unwrap();
        let c = operator_norm(commutator(ea.as_ref(), eb.as_ref()).unwrap().as_ref()).unwrap();
        prop_assert!(c <= 2.0 * a.norm() * b.norm() * (1.0 + 1e-12));
        if a.support().iter().all(|x| !b.support().contains(x)) {
            prop_assert!(c <= 1e-13);
        }
    }

    #[test]
    fn embedding_is_a_star_homomorphism(a in local_op(), vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)) {
        let region = chain(7);
        let k = a.matrix().nrows();
        let b = LocalOperator::new(a.support().to_vec(), cmat(k, &vals[..k * k]), "B").unwrap();
        let ab = a.product(&b).unwrap();
        let lhs = embed(&ab, &region).unwrap();
        let rhs = embed(&a, &region).unwrap() * embed(&b, &region).unwrap();
        prop_assert!(max_abs_diff(lhs.as_ref(), rhs.as_ref()) <= 1e-13);
        let adj = embed(&a.adjoint(), &region).unwrap();
        let ea = embed(&a, &region).unwrap();
        prop_assert!(max_abs_diff(adj.as_ref(), ea.adjoint().to_owned().as_ref()) == 0.0);
    }

    #[test]
    fn translation_preserves_norm(a in local_op(), x in -4i64..4) {
        prop_assert_eq!(translate(&a, &[x]).norm(), a.norm());
    }

    #[test]
    fn averaged_norm_bound(n in 1usize..7, obs in prop_oneof![Just(ObservableId::Sx), Just(ObservableId::Sz), Just(ObservableId::Zz)]) {
        let fam: CovariantFamily = obs.family(1).unwrap();
        let lambda = chain(n);
        let enclosing = chain(n + 1);
        let m = averaged_order_parameter(&fam, &lambda, &enclosing, MemberPolicy::Drop).unwrap();
        prop_assert!(operator_norm(m.as_ref()).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn hamiltonian_hermitian_and_bounded(m in model(), n in 2usize..7, mode in mode()) {
        let terms = catalog(m, 1).unwrap();
        let h = assemble(&terms, &chain(n), mode, 12).unwrap();
        prop_assert!(hermitian_deviation(h.matrix()) <= 1e-12);
        let nrm = operator_norm(h.matrix()).unwrap();
        prop_assert!(nrm <= n as f64 * terms.norm_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn gibbs_commutes_and_is_a_state(m in model(), n in 2usize..6, mode in mode(), beta in 0.0f64..8.0) {
        let sd = spectral(m, n, mode);
        let rho = gibbs_state(&sd, beta).unwrap();
        let h = kmslab::hamiltonian::assemble(&catalog(m, 1).unwrap(), &chain(n), mode, 12).unwrap();
        let c = commutator(rho.matrix(), h.matrix()).unwrap();
        prop_assert!(operator_norm(c.as_ref()).unwrap() <= 1e-11);
        prop_assert!((trace(rho.matrix()) - c64::new(1.0, 0.0)).norm() <= 1e-12);
        // beta continuity
        let near = gibbs_state(&sd, beta + 1e-7).unwrap();
        prop_assert!(rho.trace_distance(&near).unwrap() <= 1e-5 * (1.0 + sd.norm()));
    }

    #[test]
    fn tracial_cyclicity(a in local_op(), b in local_op()) {
        let region = chain(6);
        let tr = tracial_state(&region).unwrap();
        let ea = embed(&a, &region).unwrap();
        let eb = embed(&b, &region).unwrap();
        let ab = expect(&tr, (&ea * &eb).as_ref()).unwrap();
        let ba = expect(&tr, (&eb * &ea).as_ref()).unwrap();
        prop_assert!((ab - ba).norm() <= 1e-12);
    }

    #[test]
    fn strong_continuity(m in model(), n in 2usize..6, a in local_op()) {
        prop_assume!(a.support().iter().all(|x| x.coords()[0] < n as i64));
        let sd = spectral(m, n, BoundaryMode::Free);
        let ea = embed(&a, sd.region()).unwrap();
        let d: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|t| operator_norm((evolve(&sd, ea.as_ref(), *t).unwrap() - &ea).as_ref()).unwrap())
            .collect();
        prop_assert!(d[1] <= d[0] && d[2] <= d[1]);
        prop_assert!(d[2] <= 1e-3 * (1.0 + sd.norm() * a.norm()));
    }

    #[test]
    fn series_metadata_consistent(m in model(), n in 2usize..6, beta in prop_oneof![(0.0f64..4.0).prop_map(Beta::Finite), Just(Beta::Infinite)]) {
        let sd = spectral(m, n, BoundaryMode::Embedded);
        let z = ObservableId::Sz.family(1).unwrap();
        let grid = TimeGrid::uniform(-1.0, 1.0, 21).unwrap();
        let s = wok_correlation(&sd, beta, &z, &z, &grid, ExecMode::Parallel).unwrap();
        prop_assert_eq!(s.times.len(), s.values.len());
        prop_assert_eq!(s.sup_deviation, s.recompute_sup_deviation());
        for k in 0..21 {
            prop_assert!((s.values[k] - s.values[20 - k].conj()).norm() <= 1e-10);
        }
    }

    #[test]
    fn kms_residual_small(m in model(), n in 2usize..6, beta in 0.0f64..6.0, seed in any::<u64>()) {
        let sd = spectral(m, n, BoundaryMode::Embedded);
        let probes = random_probes(sd.lambda(), 3, seed).unwrap();
        let p = PreparedProbes::new(&sd, &probes, ExecMode::Parallel).unwrap();
        let r = kms_check(&sd, beta, &p, &[-1.0, 0.0, 0.7], ExecMode::Parallel).unwrap();
        prop_assert!(r.max_residual <= 1e-9);
        prop_assert!(r.upper.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn fit_recovers_power_laws(c in 0.01f64..10.0, p in -2.0f64..3.0) {
        let pairs: Vec<(f64, f64)> = [4.0, 6.0, 8.0, 10.0].iter().map(|x: &f64| (*x, c * x.powf(-p))).collect();
        let f = fit_decay(&pairs).unwrap();
        prop_assert!((f.p - p).abs() <= 1e-6);
        prop_assert!((f.c / c - 1.0).abs() <= 1e-6);
        prop_assert!(f.residual <= 1e-9);
    }
}
