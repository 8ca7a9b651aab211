use manifold_loss::conv::{conv2d, ConvKernel, Padding};
use manifold_loss::init::InitScheme;
use manifold_loss::manifolds::{InnNet, ReverseNet};
use manifold_loss::presets::Preset;
use manifold_loss::rng::SeededRng;
use manifold_loss::tensor::{depth_to_space, space_to_depth};
use manifold_loss::{Shape, Tensor};
use proptest::prelude::*;

fn random_tensor(seed: u64, shape: Shape) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_vec(shape, rng.normal_sample(shape.numel())).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..3, 1usize..4, 1usize..5, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn space_to_depth_round_trips(seed in any::<u64>(), (n, c, h, w) in dims()) {
        let x = random_tensor(seed, Shape::new(n, c, 2 * h, 2 * w));
        let z = space_to_depth(&x).unwrap();
        prop_assert_eq!(z.shape(), Shape::new(n, 4 * c, h, w));
        prop_assert_eq!(depth_to_space(&z).unwrap(), x);
    }

    #[test]
    fn conv_is_linear(
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        circular in any::<bool>(),
        (n, c, h, w) in dims(),
    ) {
        let shape = Shape::new(n, c, h + 2, w + 2);
        let x = random_tensor(seed, shape);
        let y = random_tensor(seed ^ 1, shape);
        let k = ConvKernel::new(random_tensor(seed ^ 2, Shape::new(2, c, 3, 3)), None).unwrap();
        let pad = if circular { Padding::Circular } else { Padding::Zero };

        let lhs = conv2d(&x.scale(a).add(&y.scale(b)).unwrap(), &k, pad).unwrap();
        let rhs = conv2d(&x, &k, pad).unwrap().scale(a).add(&conv2d(&y, &k, pad).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn inn_inverts(seed in any::<u64>(), blocks in 1usize..4, (n, c, h, w) in dims()) {
        let mut rng = SeededRng::new(seed);
        let net = InnNet::random(&mut rng, c, 4, blocks, 3, InitScheme::Kaiming).unwrap();
        let x = random_tensor(seed ^ 7, Shape::new(n, c, 2 * h, 2 * w));
        let back = net.inverse(&net.forward(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-9);
    }

    #[test]
    fn reverse_output_is_linear_in_input(seed in any::<u64>(), k in 1usize..8, a in -2.0f64..2.0) {
        let mut rng = SeededRng::new(seed);
        let net = ReverseNet::random(&mut rng, vec![0.5, 1.0, 2.0], k).unwrap();
        let x = random_tensor(seed ^ 3, Shape::new(1, 1, 9, 7));
        let lhs = net.forward(&x.scale(a)).unwrap();
        let rhs = net.forward(&x).unwrap().scale(a);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn preset_labels_are_stable_under_reordering(
        kind in prop::sample::select(vec!["taylor", "cdc", "inn", "reverse"]),
        extras in prop::sample::subsequence(vec!["epochR", "xavier", "depth3"], 0..=3),
        rotate in 0usize..4,
    ) {
        let mut tokens = vec![kind];
        tokens.extend(extras);
        let forward = Preset::parse(&tokens.join("+")).unwrap();
        let r = rotate % tokens.len();
        tokens.rotate_left(r);
        let rotated = Preset::parse(&tokens.join("+")).unwrap();
        prop_assert_eq!(forward.label(), rotated.label());
    }
}
