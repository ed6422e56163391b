use eapcr_core::data::{
    chrono_split, interpolate_missing, make_windows, oversample, prepare, Discretizer, OversampleConfig,
    PipelineConfig, SeriesTable, Standardizer,
};
use eapcr_core::eval::{auc, confusion_at_threshold};
use eapcr_core::model::{bilinear_attention, permute_matrix};
use eapcr_core::{Error, Graph, PermutationPlan, Tensor};
use proptest::prelude::*;

fn table(n: usize, values: Vec<f64>, labels: Vec<u8>) -> SeriesTable {
    let t = labels.len();
    SeriesTable::new((0..t as i64).collect(), values, labels, (0..n).map(|k| format!("f{k}")).collect()).unwrap()
}

/// `n` columns of length `t`, some cells missing but never a whole column.
fn gappy_table() -> impl Strategy<Value = SeriesTable> {
    (1usize..4, 2usize..40).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec(prop::option::weighted(0.7, -50.0f64..50.0), n * t),
            prop::collection::vec(0usize..t, n),
        )
            .prop_map(move |(cells, keep)| {
                let mut values: Vec<f64> = cells.into_iter().map(|c| c.unwrap_or(f64::NAN)).collect();
                for (k, &row) in keep.iter().enumerate() {
                    if values[row * n + k].is_nan() {
                        values[row * n + k] = row as f64 - k as f64;
                    }
                }
                table(n, values, vec![0; t])
            })
    })
}

fn labelled_table(max_t: usize) -> impl Strategy<Value = SeriesTable> {
    (1usize..4, 2usize..max_t).prop_flat_map(|(n, t)| {
        (prop::collection::vec(-5.0f64..5.0, n * t), prop::collection::vec(prop::bool::weighted(0.1), t))
            .prop_map(move |(v, l)| table(n, v, l.into_iter().map(u8::from).collect()))
    })
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (s, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (o, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            den += 1.0;
            num += if s > o { 1.0 } else if s == o { 0.5 } else { 0.0 };
        }
    }
    num / den
}

proptest! {
    #[test]
    fn interpolation_is_idempotent_and_keeps_readings(s in gappy_table()) {
        let once = interpolate_missing(&s).unwrap();
        prop_assert_eq!(once.missing_count(), 0);
        for (a, b) in s.features().iter().zip(once.features()) {
            if !a.is_nan() {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        prop_assert_eq!(interpolate_missing(&once).unwrap(), once);
    }

    #[test]
    fn discretize_is_monotone(s in labelled_table(100), bins in 2usize..20, xs in prop::collection::vec(-8.0f64..8.0, 2..30)) {
        let d = Discretizer::fit(&s, bins).unwrap();
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        for k in 0..s.n_features() {
            let ids: Vec<usize> = xs.iter().map(|&x| d.bin(k, x)).collect();
            prop_assert!(ids.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(ids.iter().all(|&i| i < bins));
        }
    }

    #[test]
    fn window_count_law(s in labelled_table(80), w in 1usize..90) {
        let d = Discretizer::fit(&s, 4).unwrap();
        match make_windows(&s, w, &d) {
            Ok(ws) => {
                prop_assert_eq!(ws.len(), s.len() - w + 1);
                for (i, win) in ws.iter().enumerate() {
                    prop_assert_eq!(win.t_index, i + w - 1);
                    prop_assert_eq!(win.label, s.labels()[i + w - 1]);
                    prop_assert_eq!(&win.window[..], &s.features()[i * s.n_features()..(i + w) * s.n_features()]);
                }
            }
            Err(e) => {
                prop_assert!(w > s.len());
                prop_assert!(matches!(e, Error::Data(_)));
            }
        }
    }

    #[test]
    fn oversampled_fraction_is_bounded(s in labelled_table(200), w in 1usize..6, shift in 0usize..4, seed in any::<u64>()) {
        prop_assume!(s.len() >= w);
        let d = Discretizer::fit(&s, 4).unwrap();
        let windows = make_windows(&s, w, &d).unwrap();
        let anomalies = windows.iter().filter(|x| x.label == 1).count();
        let cfg = OversampleConfig { target_ratio: 0.2, max_shift: shift };
        let out = match oversample(&windows, &s, &d, &cfg, seed) {
            Ok(out) => out,
            Err(e) => {
                prop_assert_eq!(anomalies, 0);
                prop_assert!(matches!(e, Error::Data(_)));
                return Ok(());
            }
        };
        prop_assert_eq!(&out[..windows.len()], &windows[..]);
        let frac = out.iter().filter(|x| x.label == 1).count() as f64 / out.len() as f64;
        if anomalies as f64 / windows.len() as f64 >= 0.2 {
            prop_assert_eq!(out.len(), windows.len());
        } else {
            prop_assert!(frac >= 0.2 && frac <= 0.2 + 1.0 / out.len() as f64, "{}", frac);
        }
        prop_assert!(out[windows.len()..].iter().all(|x| x.label == 1));
        prop_assert_eq!(out, oversample(&windows, &s, &d, &cfg, seed).unwrap());
    }

    #[test]
    fn auc_is_the_mann_whitney_statistic(
        cases in prop::collection::vec((0u32..20, any::<bool>()), 2..500),
        fine in any::<bool>(),
    ) {
        let scores: Vec<f64> = cases.iter().enumerate()
            .map(|(i, &(s, _))| if fine { s as f64 + i as f64 * 1e-3 } else { s as f64 / 20.0 })
            .collect();
        let mut labels: Vec<u8> = cases.iter().map(|&(_, l)| u8::from(l)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a - pairwise_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_cover_every_sample(
        cases in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..200),
        thr in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = cases.iter().map(|c| c.0).collect();
        let labels: Vec<u8> = cases.iter().map(|c| u8::from(c.1)).collect();
        let c = confusion_at_threshold(&scores, &labels, thr).unwrap();
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, scores.len());
        prop_assert_eq!(c.tp + c.fn_, labels.iter().filter(|&&l| l == 1).count());
    }

    #[test]
    fn attention_is_symmetric_and_open(n in 1usize..9, d in 1usize..17, seed in prop::collection::vec(-1.0f64..1.0, 8 * 16)) {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_slice(&seed[..n * d], &[n, d]).unwrap());
        let a = bilinear_attention(&mut g, x, false).unwrap();
        let v = g.value(a);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(v[i * n + j], v[j * n + i]);
                prop_assert!(v[i * n + j].abs() < 1.0);
            }
        }
    }

    #[test]
    fn fitted_statistics_come_from_the_training_rows(s in labelled_table(120), frac in 0.3f64..0.9) {
        let cfg = PipelineConfig { window: 1, bins: 5, train_fraction: frac, ..PipelineConfig::default() };
        let (train, _) = chrono_split(&s, frac).unwrap();
        prop_assume!(!train.is_empty() && train.labels().contains(&1));
        let prep = prepare(&s, &cfg, 1).unwrap();
        let filled = interpolate_missing(&train).unwrap();
        let st = Standardizer::fit(&filled);
        prop_assert_eq!(&prep.standardizer, &st);
        prop_assert_eq!(&prep.discretizer, &Discretizer::fit(&st.apply(&filled).unwrap(), 5).unwrap());
    }
}

#[test]
fn permutations_are_bijections_with_exact_inverses() {
    for n in 1..=64 {
        let plan = PermutationPlan::new(n);
        assert!(plan.is_bijection(), "n = {n}");
        let inv = plan.inverse();
        assert!((0..n).all(|i| inv.pi[plan.pi[i]] == i));

        let values: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::from_slice(&values, &[n, n]).unwrap());
        let p = permute_matrix(&mut g, a, &plan).unwrap();
        let back = permute_matrix(&mut g, p, &inv).unwrap();
        assert_eq!(g.value(back), &values[..]);
    }
}
