use fedmls_core::data::Partition;
use fedmls_core::federation::{consensus_gap, consensus_project};
use fedmls_core::fedmls::{run_fedmls, share, FedmlsSchedule};
use fedmls_core::mopes::{approx_prox, gamma_k, project_ball, theta_t, BallSet};
use fedmls_core::problem::AbsObjective;
use fedmls_core::rng::substream;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, d)
}

proptest! {
    #[test]
    fn projection_is_nonexpansive(a in vec_strategy(4), b in vec_strategy(4), r in 0.1..20.0f64) {
        let (pa, pb) = (project_ball(&a, r), project_ball(&b, r));
        prop_assert!(norm(&pa) <= r * (1.0 + 1e-12));
        let d: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
        let d0: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&d) <= norm(&d0) + 1e-9);
    }

    #[test]
    fn averaging_weights_stay_in_unit_interval(t in 1usize..100_000) {
        let (th, g) = (theta_t(t).unwrap(), gamma_k(t).unwrap());
        prop_assert!(th > 0.0 && th <= 1.0);
        prop_assert!(g > 0.0 && g <= 1.0);
    }

    #[test]
    fn prox_iterates_stay_feasible(v in vec_strategy(3), beta in 0.01..10.0f64, steps in 1usize..200, r in 0.5..10.0f64) {
        let f = AbsObjective::new(vec![1.0, -1.0, 0.5], 2.0);
        let z0 = project_ball(&v, r);
        let out = approx_prox(&v, &z0, beta, steps, &f, r, &mut substream(9, 1)).unwrap();
        let ball = BallSet::whole(r * (1.0 + 1e-12));
        prop_assert!(ball.contains(&out.last_iterate));
        prop_assert!(ball.contains(&out.averaged_iterate));
    }

    #[test]
    fn consensus_projection_is_the_least_squares_center(cols in prop::collection::vec(vec_strategy(2), 1..6), shift in vec_strategy(2)) {
        let center = consensus_project(&cols).unwrap();
        let other: Vec<f64> = center.iter().zip(&shift).map(|(c, s)| c + s * 1e-3).collect();
        let sq = |c: &[f64]| cols.iter().map(|x| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
        prop_assert!(sq(&center) <= sq(&other) + 1e-9);
        // the reported gap is the farthest client, never below the mean distance
        let mean_dist = cols.iter().map(|x| norm(&x.iter().zip(&center).map(|(a, b)| a - b).collect::<Vec<_>>())).sum::<f64>() / cols.len() as f64;
        prop_assert!(consensus_gap(&cols, &center) + 1e-12 >= mean_dist);
    }

    #[test]
    fn partition_csv_round_trips(assign in prop::collection::vec(1usize..5, 4..60)) {
        let clients = *assign.iter().max().unwrap();
        prop_assume!((1..=clients).all(|c| assign.contains(&c)));
        let p = Partition::new(assign, clients).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Partition::read_csv(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn fedmls_is_reproducible_per_seed(seed in 0u64..1000, n in 1usize..4) {
        let objs = share((0..n).map(|i| AbsObjective::new(vec![i as f64 - 1.0], 1.0)).collect());
        let sched = FedmlsSchedule::decaying(1.0, 1.0, 6, 5.0);
        let a = run_fedmls(objs.clone(), sched, &[0.5], seed, None).unwrap();
        let b = run_fedmls(objs.clone(), sched, &[0.5], seed, None).unwrap();
        prop_assert_eq!(a.x_final.clone(), b.x_final.clone());
        let total = objs.iter().map(|o| o.value(&a.x_final).unwrap()).sum::<f64>();
        prop_assert!(total.is_finite());
    }
}
