use graphinit::format::{parse_format, random_format, serialize_format, RandomConstraints, VertexKind};
use graphinit::init::{InitMode, InitPlan};
use graphinit::tensor::{build_dummy, contract, multi_contract, Activation, DenseTensor, DummySpec};
use graphinit::transform::verify_backward_factorization;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = DenseTensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| DenseTensor::new(shape.clone(), d).unwrap())
}

/// Three tensors `[m, n] [n, p] [p, q]` with random extents.
fn chain() -> impl Strategy<Value = (DenseTensor, DenseTensor, DenseTensor)> {
    (1usize..5, 1usize..5, 1usize..5, 1usize..5)
        .prop_flat_map(|(m, n, p, q)| (tensor(vec![m, n]), tensor(vec![n, p]), tensor(vec![p, q])))
}

fn close(a: &DenseTensor, b: &DenseTensor) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b).unwrap() <= 1e-10 * (1.0 + a.max_abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contract_is_bilinear((a1, b, _) in chain(), scale in -3.0f64..3.0, shift in -1.0f64..1.0) {
        let a2 = a1.map(|x| x * 0.5 + shift);
        let mut mixed = a1.scale(scale);
        mixed.add_assign(&a2).unwrap();
        let lhs = contract(&mixed, &[1], &b, &[0]).unwrap();
        let mut rhs = contract(&a1, &[1], &b, &[0]).unwrap().scale(scale);
        rhs.add_assign(&contract(&a2, &[1], &b, &[0]).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn contract_matches_naive_sum((a, b, _) in chain()) {
        let got = contract(&a, &[1], &b, &[0]).unwrap();
        let (m, n, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let want = DenseTensor::from_fn(&[m, p], |ix| (0..n).map(|k| a.get(&[ix[0], k]) * b.get(&[k, ix[1]])).sum());
        prop_assert!(close(&got, &want));
    }

    #[test]
    fn multi_contract_ignores_tensor_order((a, b, c) in chain()) {
        let forward = multi_contract(&[&a, &b, &c], &[vec![(0, 1), (1, 0)], vec![(1, 1), (2, 0)]], &[(0, 0), (2, 1)]).unwrap();
        let reversed = multi_contract(&[&c, &b, &a], &[vec![(2, 1), (1, 0)], vec![(1, 1), (0, 0)]], &[(2, 0), (0, 1)]).unwrap();
        let pairwise = contract(&contract(&a, &[1], &b, &[0]).unwrap(), &[1], &c, &[0]).unwrap();
        prop_assert!(close(&forward, &reversed));
        prop_assert!(close(&forward, &pairwise));
    }

    #[test]
    fn dummy_is_the_window_indicator(alpha in 1usize..14, beta in 1usize..6, stride in 1usize..4, padding in 0usize..5) {
        let Ok(spec) = DummySpec::new(alpha, beta, stride, padding) else { return Ok(()); };
        let p = build_dummy(&spec).unwrap();
        let ap = spec.alpha_prime();
        prop_assert_eq!(p.shape(), &[alpha, ap, beta]);
        for j in 0..alpha {
            for jp in 0..ap {
                for k in 0..beta {
                    let hit = (stride * jp + k) as isize - padding as isize == j as isize;
                    prop_assert_eq!(p.get(&[j, jp, k]), if hit { 1.0 } else { 0.0 });
                }
            }
        }
        if padding < beta {
            prop_assert!(verify_backward_factorization(&spec));
        }
    }

    #[test]
    fn format_text_round_trips(seed in any::<u64>(), phi in 1usize..5) {
        let f = random_format(seed, &RandomConstraints { phi, ..RandomConstraints::default() });
        let text = serialize_format(&f);
        prop_assert_eq!(parse_format(&text).unwrap(), f);
    }

    #[test]
    fn validation_rejects_structural_mutations(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let f = random_format(seed, &RandomConstraints::default());
        prop_assert!(f.validate().is_ok());

        let mut no_input = f.clone();
        no_input.vertices.retain(|v| v.kind != VertexKind::Input);
        prop_assert!(no_input.validate().is_err());

        let weights: Vec<String> = f.weight_vertices().map(|v| v.id.clone()).collect();
        let victim = pick.get(&weights).clone();
        let mut orphan = f.clone();
        orphan.edges.retain(|e| !e.touches(&victim));
        prop_assert!(orphan.validate().is_err());
    }

    #[test]
    fn graph_plans_close_on_random_formats(seed in any::<u64>(), phi in 1usize..6) {
        let f = random_format(seed, &RandomConstraints { phi, ..RandomConstraints::default() });
        for mode in [InitMode::GraphIn, InitMode::GraphOut] {
            let tanh = InitPlan::new(&f, mode, Activation::Tanh).unwrap();
            let relu = InitPlan::new(&f, mode, Activation::Relu).unwrap();
            prop_assert!((tanh.propagation_factor() - 1.0).abs() < 1e-9);
            let n = f.weight_count() as f64;
            for (t, r) in tanh.variance_values().iter().zip(relu.variance_values()) {
                prop_assert!(*t > 0.0);
                prop_assert!((r / t / 2f64.powf(1.0 / n) - 1.0).abs() < 1e-12);
            }
        }
    }
}
