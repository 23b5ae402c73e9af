use aid_core::imaging::{compose_illumination, ChromaticityRB, RawImage};
use aid_core::model::{attention_step, AidModel, AttnSource, ModelConfig};
use aid_core::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(k: usize, t: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        k,
        t,
        d_slot: 6,
        d_attn: 5,
        encoder_channels: vec![3, 4],
        n_domains: 2,
        seed,
        attn_source: AttnSource::Recomputed,
    }
}

fn random_image(h: usize, w: usize, seed: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * h * w).map(|_| rng.random_range(0.01..1.0)).collect();
    RawImage::new(Tensor::new(&[3, h, w], data).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn weights_form_a_simplex_and_fusion_is_consistent(seed in any::<u64>(), k in 1usize..6, t in 1usize..4, last in any::<bool>()) {
        let mut cfg = config(k, t, seed);
        if last {
            cfg.attn_source = AttnSource::LastIter;
        }
        let model = AidModel::new(cfg).unwrap();
        let img = random_image(8, 8, seed ^ 0x55);
        let mut g = Graph::new();
        let nodes = model.forward_graph(&mut g, &img, (seed % 2) as usize).unwrap();

        // pixel-normalized W: every slot column sums to one
        let w = g.value(nodes.calib.w);
        prop_assert_eq!(w.shape(), &[64, k][..]);
        for col in 0..k {
            let s: f64 = (0..64).map(|px| w.data()[px * k + col]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }

        let d = aid_core::model::decomposition_from(&g, &nodes, 8, 8).unwrap();
        prop_assert_eq!(d.chromas.len(), k);
        prop_assert_eq!(d.weights.count(), k);
        prop_assert_eq!(d.iterations.len(), t);
        prop_assert!(d.weights.max_sum_deviation() <= 1e-9);
        prop_assert!(d.weights.maps().data().iter().all(|&a| (0.0..=1.0).contains(&a)));
        for it in &d.iterations {
            prop_assert!(it.weights.max_sum_deviation() <= 1e-9);
        }

        let composed = compose_illumination(&d.chromas, &d.weights).unwrap();
        let (rmin, rmax) = d.chromas.iter().fold((f64::MAX, f64::MIN), |(a, b), c| (a.min(c.r), b.max(c.r)));
        let (bmin, bmax) = d.chromas.iter().fold((f64::MAX, f64::MIN), |(a, b), c| (a.min(c.b), b.max(c.b)));
        for px in 0..64 {
            let f = d.fused.pixel(px);
            let c = composed.pixel(px);
            prop_assert!((f.r - c.r).abs() <= 1e-10 && (f.b - c.b).abs() <= 1e-10);
            prop_assert!(f.r >= rmin - 1e-12 && f.r <= rmax + 1e-12);
            prop_assert!(f.b >= bmin - 1e-12 && f.b <= bmax + 1e-12);
            prop_assert!(f.r > 0.0 && f.b > 0.0);
        }
    }
}

#[test]
fn one_slot_owns_every_pixel() {
    let model = AidModel::new(config(1, 2, 3)).unwrap();
    let d = model.decompose(&random_image(8, 8, 1), 0).unwrap();
    assert!(d.weights.maps().data().iter().all(|&a| a == 1.0));
    for px in 0..64 {
        assert_eq!(d.fused.pixel(px), d.chromas[0]);
    }
}

#[test]
fn single_round_matches_a_manual_unroll() {
    let mut cfg = config(3, 1, 8);
    cfg.attn_source = AttnSource::LastIter;
    let model = AidModel::new(cfg).unwrap();
    let img = random_image(8, 8, 2);
    let mut g = Graph::new();
    let nodes = model.forward_graph(&mut g, &img, 1).unwrap();

    let p = &model.params;
    let (kw, kb) = (g.param(&p.store, p.key.w), g.param(&p.store, p.key.b));
    let keys = g.linear(nodes.feat, kw, kb).unwrap();
    let (vw, vb) = (g.param(&p.store, p.value.w), g.param(&p.store, p.value.b));
    let values = g.linear(nodes.feat, vw, vb).unwrap();
    let table = g.param(&p.store, p.slots0);
    let slots = g.select(table, 0, 1).unwrap();
    let step = attention_step(&mut g, p, keys, values, slots).unwrap();
    assert!(g.value(step.attn).bit_eq(g.value(nodes.calib.attn)));
    assert!(g.value(step.attn).bit_eq(g.value(nodes.calib.snapshots[0].attn)));
}

#[test]
fn permuting_initial_slots_permutes_the_decomposition() {
    let model = AidModel::new(config(4, 3, 21)).unwrap();
    let img = random_image(8, 8, 4);
    let base = model.decompose(&img, 0).unwrap();

    let perm = [2usize, 0, 3, 1];
    let table = model.params.store.value(model.params.slots0).clone();
    let (domains, k, d) = (table.shape()[0], table.shape()[1], table.shape()[2]);
    let mut data = table.data().to_vec();
    for dom in 0..domains {
        for (dst, &src) in perm.iter().enumerate() {
            let from = (dom * k + src) * d;
            data[(dom * k + dst) * d..(dom * k + dst + 1) * d].copy_from_slice(&table.data()[from..from + d]);
        }
    }
    let mut permuted = model.clone();
    permuted
        .params
        .store
        .set_value(model.params.slots0, Tensor::new(table.shape(), data).unwrap())
        .unwrap();
    let out = permuted.decompose(&img, 0).unwrap();

    for (dst, &src) in perm.iter().enumerate() {
        assert!((out.chromas[dst].r - base.chromas[src].r).abs() < 1e-12);
        assert!((out.chromas[dst].b - base.chromas[src].b).abs() < 1e-12);
        for (a, b) in out.weights.plane(dst).iter().zip(base.weights.plane(src)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    for px in 0..64 {
        let (a, b) = (out.fused.pixel(px), base.fused.pixel(px));
        assert!((a.r - b.r).abs() < 1e-12 && (a.b - b.b).abs() < 1e-12);
    }
}

#[test]
fn untrained_forward_is_deterministic_and_non_degenerate() {
    let img = random_image(16, 16, 9);
    let a = AidModel::new(config(4, 3, 5)).unwrap().decompose(&img, 0).unwrap();
    let b = AidModel::new(config(4, 3, 5)).unwrap().decompose(&img, 0).unwrap();
    assert_eq!(a, b);
    let c = AidModel::new(config(4, 3, 6)).unwrap().decompose(&img, 0).unwrap();
    assert_ne!(a.chromas, c.chromas);
    // slots differ from one another and weights vary across pixels
    assert!(a.chromas.windows(2).any(|w| w[0] != w[1]));
    let plane = a.weights.plane(0);
    assert!(plane.iter().any(|&v| (v - plane[0]).abs() > 1e-9));
}

#[test]
fn fused_map_is_linear_in_each_chromaticity() {
    let model = AidModel::new(config(3, 2, 13)).unwrap();
    let d = model.decompose(&random_image(8, 8, 6), 0).unwrap();
    let s = 1.7;
    let mut scaled = d.chromas.clone();
    scaled[1] = ChromaticityRB::new(s * scaled[1].r, s * scaled[1].b).unwrap();
    let before = compose_illumination(&d.chromas, &d.weights).unwrap();
    let after = compose_illumination(&scaled, &d.weights).unwrap();
    for px in 0..64 {
        let a = d.weights.plane(1)[px];
        let (b0, b1) = (before.pixel(px), after.pixel(px));
        assert!((b1.r - b0.r - (s - 1.0) * a * d.chromas[1].r).abs() < 1e-12);
        assert!((b1.b - b0.b - (s - 1.0) * a * d.chromas[1].b).abs() < 1e-12);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let model = AidModel::new(config(3, 2, 1)).unwrap();
    assert!(model.decompose(&random_image(7, 8, 0), 0).is_err());
    assert!(model.decompose(&random_image(8, 8, 0), 2).is_err());
    let mut cfg = config(3, 2, 1);
    cfg.k = 0;
    assert!(AidModel::new(cfg).is_err());
}
