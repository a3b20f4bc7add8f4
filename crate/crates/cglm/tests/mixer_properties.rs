//! Property tests for the sequence mixers and the softmax contract.

use proptest::prelude::*;

use cglm::graph::Graph;
use cglm::mixers::{static_mix, AttentionParams, MixerKind};
use cglm::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_tensor() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..=2, 1usize..=12, 1usize..=6).prop_flat_map(|(b, t, d)| {
        proptest::collection::vec(-3.0f64..3.0, b * t * d).prop_map(move |v| (b, t, d, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn causality_is_bit_exact_for_static_mixers((b, t, d, data) in small_tensor(), future in 0usize..64) {
        let x = Tensor::new(vec![b, t, d], data.clone()).unwrap();
        for kind in MixerKind::ALL.into_iter().filter(|k| k.is_static()) {
            let base = static_mix(&x, kind, None);
            // perturb one coordinate at a strictly later position
            if t < 2 { continue; }
            let pos = 1 + future % (t - 1);
            let mut pert = data.clone();
            pert[(0 * t + pos) * d] += 1.5;
            let xp = Tensor::new(vec![b, t, d], pert).unwrap();
            let out = static_mix(&xp, kind, None);
            for tt in 0..pos {
                for j in 0..d {
                    prop_assert_eq!(
                        base.data()[tt * d + j],
                        out.data()[tt * d + j],
                        "{} leaked from t={} to t={}", kind, pos, tt
                    );
                }
            }
        }
    }

    #[test]
    fn batch_permutation_commutes((_b, t, d, data) in small_tensor()) {
        // run with two batch rows in both orders
        let x01 = {
            let mut v = data.clone();
            v.extend(data.iter().map(|&a| a * 0.5 - 0.1));
            Tensor::new(vec![2, t, d], v).unwrap()
        };
        let x10 = {
            let mut v: Vec<f64> = data.iter().map(|&a| a * 0.5 - 0.1).collect();
            v.extend(data.iter().copied());
            Tensor::new(vec![2, t, d], v).unwrap()
        };
        for kind in MixerKind::ALL.into_iter().filter(|k| k.is_static()) {
            let y01 = static_mix(&x01, kind, None);
            let y10 = static_mix(&x10, kind, None);
            let n = t * d;
            prop_assert_eq!(&y01.data()[..n], &y10.data()[n..], "{} row 0", kind);
            prop_assert_eq!(&y01.data()[n..], &y10.data()[..n], "{} row 1", kind);
        }
    }

    #[test]
    fn pair_extremes_bound_the_input((b, t, d, data) in small_tensor()) {
        let x = Tensor::new(vec![b, t, d], data).unwrap();
        let up = static_mix(&x, MixerKind::CausalMax, None);
        let lo = static_mix(&x, MixerKind::CausalMin, None);
        for (i, (&xi, (&ui, &li))) in x
            .data()
            .iter()
            .zip(up.data().iter().zip(lo.data()))
            .enumerate()
        {
            prop_assert!(ui >= xi, "max below input at {i}");
            prop_assert!(li <= xi, "min above input at {i}");
        }
    }

    #[test]
    fn context_mix_dominates_pair((b, t, d, data) in small_tensor()) {
        let x = Tensor::new(vec![b, t, d], data).unwrap();
        let pair_max = static_mix(&x, MixerKind::CausalMax, None);
        let ctx_max = static_mix(&x, MixerKind::CausalMaxContext, None);
        let pair_min = static_mix(&x, MixerKind::CausalMin, None);
        let ctx_min = static_mix(&x, MixerKind::CausalMinContext, None);
        for i in 0..x.numel() {
            prop_assert!(ctx_max.data()[i] >= pair_max.data()[i] - 1e-12);
            prop_assert!(ctx_min.data()[i] <= pair_min.data()[i] + 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_is_exact((b, t, d, data) in small_tensor()) {
        let rows = b * t;
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![rows, d], data).unwrap());
        // mask the last entry of every row when d > 1
        let mask: Option<Vec<bool>> = (d > 1).then(|| {
            (0..rows * d).map(|i| i % d == d - 1).collect()
        });
        let y = g.softmax_lastdim(x, mask.as_deref()).unwrap();
        let out = g.value(y);
        for r in 0..rows {
            let row = &out.data()[r * d..(r + 1) * d];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            if d > 1 {
                prop_assert_eq!(row[d - 1], 0.0, "masked entry must be exactly zero");
            }
            prop_assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn outputs_stay_finite_on_finite_inputs((b, t, d, data) in small_tensor()) {
        let x = Tensor::new(vec![b, t, d], data).unwrap();
        for kind in MixerKind::ALL {
            let y = if kind.is_static() {
                static_mix(&x, kind, None)
            } else {
                let n_head = if d % 2 == 0 { 2 } else { 1 };
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let params = AttentionParams::random(d, n_head, &mut rng).unwrap();
                cglm::mixers::attention(&x, &params, None).unwrap()
            };
            prop_assert!(y.all_finite(), "{} produced non-finite values", kind);
        }
    }
}

#[test]
fn attention_causality_under_masking() {
    // perturbing a future token leaves earlier attention outputs exactly
    // unchanged: masked logits never enter the softmax
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (b, t, d) = (1, 6, 8);
    let params = AttentionParams::<f64>::random(d, 2, &mut rng).unwrap();
    let x = Tensor::randn(&[b, t, d], 1.0, &mut rng);
    let base = cglm::mixers::attention(&x, &params, None).unwrap();
    let mut pert = x.clone();
    pert.data_mut()[(t - 1) * d + 3] += 2.0;
    let out = cglm::mixers::attention(&pert, &params, None).unwrap();
    for tt in 0..t - 1 {
        for j in 0..d {
            assert_eq!(base.data()[tt * d + j], out.data()[tt * d + j]);
        }
    }
}
