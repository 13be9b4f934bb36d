use fairguide::alphaselect::AlphaGrid;
use fairguide::metrics::{decompose_bias, SweepEntry, SweepResult, SweepTable};
use fairguide::numerics::{solve_balanced_ot, wasserstein1_1d, Matrix};
use proptest::prelude::*;

fn sweep_strategy() -> impl Strategy<Value = (SweepResult, Vec<f64>)> {
    (2usize..=4, 2usize..=8).prop_flat_map(|(groups, scales)| {
        (
            prop::collection::vec(prop::collection::vec(0.001f64..1.0, groups), scales),
            prop::collection::vec(0.001f64..1.0, groups),
        )
            .prop_map(move |(raw, t)| {
                let norm = |v: &[f64]| {
                    let s: f64 = v.iter().sum();
                    v.iter().map(|x| x / s).collect::<Vec<f64>>()
                };
                let entries = raw
                    .iter()
                    .enumerate()
                    .map(|(i, r)| SweepEntry {
                        w: 2.0 * i as f64,
                        n_samples: 10,
                        group_ratio: norm(r),
                        ratio_ci: vec![(0.0, 1.0); groups],
                        ratio_se: vec![0.0; groups],
                    })
                    .collect();
                (SweepResult { entries }, norm(&t))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_is_exact((sweep, target) in sweep_strategy(), frac in 0.0f64..1.0) {
        let top = sweep.entries.last().unwrap().w;
        let report = decompose_bias(&sweep, &target, frac * top).unwrap();
        for e in &report.entries {
            for a in 0..e.ratio.len() {
                prop_assert_eq!(e.total_bias[a], e.guidance_bias[a] + e.model_bias[a]);
                prop_assert!((e.total_bias[a] - (e.ratio[a] - target[a])).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn sweep_csv_round_trips((sweep, target) in sweep_strategy()) {
        let report = decompose_bias(&sweep, &target, 0.0).unwrap();
        let csv = SweepTable::from_report(&report).to_csv();
        let again = SweepTable::from_csv(&csv).unwrap();
        prop_assert_eq!(again.to_csv(), csv);
        prop_assert_eq!(again.to_sweep().unwrap().ratios(1), sweep.ratios(1));
    }

    #[test]
    fn assignment_beats_every_swap(n in 1usize..12, seed in any::<u64>()) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let cost = Matrix::from_fn(n, n, |_, _| next());
        let plan = solve_balanced_ot(&cost).unwrap();
        let mut seen = vec![false; n];
        for &j in &plan.assignment {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64;
        prop_assert!((total(&plan.assignment) - plan.cost_total).abs() < 1e-12);
        for i in 0..n {
            for k in i + 1..n {
                let mut p = plan.assignment.clone();
                p.swap(i, k);
                prop_assert!(total(&p) >= plan.cost_total - 1e-12);
            }
        }
    }

    #[test]
    fn w1_is_a_translation_invariant_symmetric_distance(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        shift in -3.0f64..3.0,
    ) {
        let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = wasserstein1_1d(&u, &v).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - wasserstein1_1d(&v, &u).unwrap()).abs() < 1e-12);
        let us: Vec<f64> = u.iter().map(|x| x + shift).collect();
        let vs: Vec<f64> = v.iter().map(|x| x + shift).collect();
        prop_assert!((d - wasserstein1_1d(&us, &vs).unwrap()).abs() < 1e-9);
        prop_assert!(wasserstein1_1d(&u, &u).unwrap() < 1e-12);
    }

    #[test]
    fn snapping_picks_a_nearest_grid_point(alpha in -30.0f64..30.0) {
        let grid = AlphaGrid::sd15();
        let s = grid.snap(alpha);
        prop_assert!(grid.points().contains(&s));
        for p in grid.points() {
            prop_assert!((s - alpha).abs() <= (p - alpha).abs() + 1e-12);
        }
    }
}
