use gan_core::kernels::{self, ConvGeom, Exec};
use gan_core::layers::dsl;
use gan_core::spec::parse_spec;
use gan_core::spec::{GanModel, GanSpec, NetSpec, ProcessParams, ProcessSpec};
use gan_core::Tensor;
use proptest::prelude::*;

const PRESETS: [&str; 5] = ["gan", "cgan", "dcgan", "wgan", "wgan_gp"];
const PROCESSES: [&str; 4] = ["standard", "wgan_clip", "wgan_gp", "conditional"];

fn arb_model() -> impl Strategy<Value = GanModel> {
    (
        proptest::option::of(1u64..50),
        proptest::option::of(1u64..512),
        proptest::option::of(any::<u32>()),
        proptest::option::of(1u64..200),
        proptest::option::of(1e-6f64..1e-1),
        proptest::option::of(proptest::collection::vec(1usize..32, 1..4)),
    )
        .prop_map(|(epochs, batch_size, seed, latent_dim, learning_rate, data_shape)| GanModel {
            epochs,
            batch_size,
            seed: seed.map(u64::from),
            latent_dim,
            learning_rate,
            data_shape,
        })
}

fn arb_net() -> impl Strategy<Value = NetSpec> {
    prop_oneof![
        proptest::sample::select(&PRESETS[..]).prop_map(NetSpec::preset),
        proptest::collection::vec(1usize..64, 1..4)
            .prop_map(|units| NetSpec::layers(units.into_iter().map(dsl::dense).collect())),
    ]
}

fn arb_spec() -> impl Strategy<Value = GanSpec> {
    (
        arb_model(),
        arb_net(),
        arb_net(),
        proptest::option::of((proptest::option::of(proptest::sample::select(&PROCESSES[..])), proptest::option::of(1i64..10))),
        "[a-z]{1,8}\\.(idx|gfd)",
    )
        .prop_map(|(gan_model, generator, discriminator, process, data_path)| GanSpec {
            spec_version: None,
            gan_model,
            generator,
            discriminator,
            train_process: process.map(|(choice, n_critic)| ProcessSpec {
                choice: choice.map(str::to_string),
                params: ProcessParams { n_critic, ..Default::default() },
            }),
            data_path,
            labels_path: None,
        })
}

fn arb_tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    proptest::collection::vec(-10.0f64..10.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

/// A full shape and a broadcast-compatible smaller shape.
fn arb_broadcast_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    proptest::collection::vec((1usize..4, any::<bool>()), 1..4).prop_map(|dims| {
        let full: Vec<usize> = dims.iter().map(|d| d.0).collect();
        let small: Vec<usize> = dims.iter().map(|&(e, keep)| if keep { e } else { 1 }).collect();
        (full, small)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spec_json_round_trips(spec in arb_spec()) {
        let text = spec.to_json_string();
        let back = parse_spec(&text).map_err(|d| TestCaseError::fail(format!("{d:?}\n{text}")))?;
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn broadcast_and_sum_to_are_adjoint(
        (a, b) in arb_broadcast_pair().prop_flat_map(|(full, small)| (arb_tensor(small), arb_tensor(full)))
    ) {
        // <broadcast(a), b> == <a, sum_to(b)>
        let lhs: f64 = a.broadcast_to(b.shape()).unwrap().data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data().iter().zip(b.sum_to(a.shape()).unwrap().data()).map(|(x, y)| x * y).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn zip_with_matches_index_arithmetic(
        (a, b) in arb_broadcast_pair().prop_flat_map(|(full, small)| (arb_tensor(full), arb_tensor(small)))
    ) {
        let got = a.zip_with(&b, |x, y| x - 2.0 * y).unwrap();
        let shape = a.shape().to_vec();
        for (flat, v) in got.data().iter().enumerate() {
            let mut rem = flat;
            let mut idx = vec![0; shape.len()];
            for ax in (0..shape.len()).rev() {
                idx[ax] = rem % shape[ax];
                rem /= shape[ax];
            }
            let mut bi = 0;
            for ax in 0..shape.len() {
                let e = b.shape()[ax];
                bi = bi * e + if e == 1 { 0 } else { idx[ax] };
            }
            prop_assert_eq!(*v, a.data()[flat] - 2.0 * b.data()[bi]);
        }
    }

    #[test]
    fn parallel_matmul_equals_sequential(m in 1usize..70, k in 1usize..20, n in 1usize..20, ta: bool, tb: bool, seed: u64) {
        let mut rng = gan_core::RngStream::new(seed);
        let a = rng.normal(&[m * k], 0.0, 1.0).unwrap();
        let b = rng.normal(&[k * n], 0.0, 1.0).unwrap();
        let s = kernels::matmul_t(Exec::Sequential, a.data(), b.data(), m, k, n, ta, tb);
        let p = kernels::matmul_t(Exec::Parallel, a.data(), b.data(), m, k, n, ta, tb);
        prop_assert_eq!(s, p);
    }

    #[test]
    fn parallel_conv_equals_sequential(n in 1usize..4, c in 1usize..3, f in 1usize..4, h in 3usize..9, stride in 1usize..3, pad in 0usize..2, seed: u64) {
        let (kh, kw) = (3, 3);
        let Some(oh) = ConvGeom::out_extent(h, kh, stride, pad) else { return Ok(()) };
        let g = ConvGeom { n, c, h, w: h, f, kh, kw, stride, pad, oh, ow: oh };
        let mut rng = gan_core::RngStream::new(seed);
        let x = rng.normal(&g.x_shape(), 0.0, 1.0).unwrap();
        let k = rng.normal(&g.k_shape(), 0.0, 1.0).unwrap();
        let y = rng.normal(&g.y_shape(), 0.0, 1.0).unwrap();
        let (s, p) = (Exec::Sequential, Exec::Parallel);
        prop_assert_eq!(kernels::conv_forward(s, &g, x.data(), k.data()), kernels::conv_forward(p, &g, x.data(), k.data()));
        prop_assert_eq!(kernels::conv_transpose(s, &g, y.data(), k.data()), kernels::conv_transpose(p, &g, y.data(), k.data()));
        prop_assert_eq!(kernels::conv_kernel(s, &g, x.data(), y.data()), kernels::conv_kernel(p, &g, x.data(), y.data()));
    }
}
