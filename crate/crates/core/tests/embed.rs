use glee_core::embed::{
    embed, embed_batch, stack_crops, triplet_loss, triplet_loss_grad, write_embeddings, Backbone, EmbeddingConfig,
    EmbeddingNet, SelfAttention2d, EMBED_DIM, GLOBAL_PREFIX,
};
use glee_core::geometry::{crop_image, CropName, CropSet, RgbImage};
use glee_core::tensor::{Graph, ParamStore, Tensor};
use glee_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn face(seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f32 = rng.random_range(0.0..1.0);
    RgbImage::from_fn(176, 176, |r, c| {
        let x = ((r as f32 * 0.07 + a * 5.0).sin() * (c as f32 * 0.05).cos() + 1.0) / 2.0;
        [x, 1.0 - x, (r + c) as f32 / 352.0]
    })
}

fn net(seed: u64) -> (ParamStore, EmbeddingNet) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = EmbeddingNet::new(&mut store, &mut rng, &EmbeddingConfig::compact()).unwrap();
    (store, net)
}

/// Adds uniform noise of width `amp` to every parameter whose name starts with `prefix`.
fn perturb(store: &mut ParamStore, prefix: &str, amp: f32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.random_range(-amp..amp);
        }
    }
}

#[test]
fn fresh_global_branch_is_exactly_zero() {
    let (store, net) = net(1);
    let img = face(3);
    let crops = crop_image(&img).unwrap();
    let e = embed(&store, &net, &img, &crops).unwrap();
    assert_eq!(e.global.len(), EMBED_DIM);
    assert!(e.global.iter().all(|&v| v == 0.0));
    assert_eq!(e.embedding, e.local);
    assert!(e.embedding.iter().all(|v| v.is_finite()));
}

#[test]
fn additivity_holds_for_random_weights() {
    let (mut store, net) = net(2);
    perturb(&mut store, "", 0.05, 9);
    let imgs: Vec<RgbImage> = (0..3).map(face).collect();
    let crops: Vec<CropSet> = imgs.iter().map(|i| crop_image(i).unwrap()).collect();
    let out = embed_batch(
        &store,
        &net,
        &imgs.iter().collect::<Vec<_>>(),
        &crops.iter().collect::<Vec<_>>(),
    )
    .unwrap();
    for e in &out {
        assert!(e.global.iter().any(|&v| v != 0.0));
        for i in 0..EMBED_DIM {
            assert!((e.embedding[i] - e.global[i] - e.local[i]).abs() <= 1e-6);
        }
    }
}

#[test]
fn both_branches_zero_gives_zero_embedding() {
    let (mut store, net) = net(4);
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.name.starts_with("local.head.fc2"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let img = face(1);
    let e = embed(&store, &net, &img, &crop_image(&img).unwrap()).unwrap();
    assert!(e.embedding.iter().all(|&v| v == 0.0));
}

#[test]
fn perturbing_the_face_model_moves_only_the_face_output() {
    let cfg = EmbeddingConfig::compact();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let face_model = Backbone::new(&mut store, &mut rng, "face", &cfg);
    let identity = Backbone::frozen_copy(&mut store, &face_model, "identity");
    let x = glee_core::embed::stack_images(&[&face(2)]).unwrap();
    let run = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let xi = g.input(x.clone());
        let f = face_model.forward(&mut g, xi).unwrap();
        let i = identity.forward(&mut g, xi).unwrap();
        (g.value(f).clone(), g.value(i).clone())
    };
    let (f0, i0) = run(&store);
    assert_eq!(f0, i0);
    perturb(&mut store, "face", 0.05, 6);
    let (f1, i1) = run(&store);
    assert_eq!(i1, i0);
    assert_ne!(f1, f0);

    let (mut store, net) = net(5);
    let img = face(2);
    let crops = crop_image(&img).unwrap();
    let before = embed(&store, &net, &img, &crops).unwrap();
    perturb(&mut store, "global.face", 0.05, 7);
    let after = embed(&store, &net, &img, &crops).unwrap();
    assert_ne!(before.global, after.global);
    assert_eq!(before.local, after.local);
}

#[test]
fn identity_copy_is_frozen() {
    let (store, _) = net(6);
    let frozen: Vec<_> = store
        .iter()
        .filter(|(_, p)| !p.trainable)
        .map(|(_, p)| p.name.clone())
        .collect();
    assert!(!frozen.is_empty());
    assert!(frozen
        .iter()
        .all(|n| n.starts_with(&format!("{GLOBAL_PREFIX}identity"))));
}

#[test]
fn zero_crops_are_deterministic() {
    let (store, net) = net(7);
    let black = RgbImage::filled(96, 96, [0.0; 3]);
    let crops = CropSet::from_pairs(CropName::ALL.map(|n| (n, black.clone()))).unwrap();
    let img = RgbImage::filled(176, 176, [0.0; 3]);
    let a = embed(&store, &net, &img, &crops).unwrap();
    let b = embed(&store, &net, &img, &crops).unwrap();
    assert_eq!(a, b);
}

#[test]
fn crop_insertion_order_is_irrelevant() {
    let (store, net) = net(8);
    let img = face(4);
    let crops = crop_image(&img).unwrap();
    let mut pairs: Vec<(CropName, RgbImage)> = crops.iter().map(|(n, c)| (n, c.clone())).collect();
    pairs.reverse();
    pairs.swap(2, 9);
    let shuffled = CropSet::from_pairs(pairs).unwrap();
    assert_eq!(
        embed(&store, &net, &img, &crops).unwrap(),
        embed(&store, &net, &img, &shuffled).unwrap()
    );
}

#[test]
fn changing_one_crop_changes_the_local_feature() {
    let (mut store, net) = net(9);
    perturb(&mut store, "local.", 0.02, 1);
    let img = face(5);
    let crops = crop_image(&img).unwrap();
    let pairs = crops.iter().map(|(n, c)| {
        if n == CropName::R34 {
            (n, RgbImage::from_fn(96, 96, |r, _| [r as f32 / 95.0; 3]))
        } else {
            (n, c.clone())
        }
    });
    let edited = CropSet::from_pairs(pairs).unwrap();
    let a = embed(&store, &net, &img, &crops).unwrap();
    let b = embed(&store, &net, &img, &edited).unwrap();
    assert!(a.local.iter().zip(&b.local).any(|(x, y)| x != y));
    assert_eq!(a.global, b.global);
}

#[test]
fn missing_crop_batches_are_rejected() {
    let (store, net) = net(10);
    let img = face(1);
    let crops = crop_image(&img).unwrap();
    let mut inputs = stack_crops(&[&crops]).unwrap();
    inputs.pop();
    let mut g = Graph::new(&store);
    let f = g.input(glee_core::embed::stack_images(&[&img]).unwrap());
    let c: Vec<_> = inputs.into_iter().map(|t| g.input(t)).collect();
    assert!(matches!(net.forward(&mut g, f, &c), Err(Error::Shape(_))));
}

fn attention(channels: usize, heads: usize, seed: u64) -> (ParamStore, SelfAttention2d) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let att = SelfAttention2d::new(&mut store, &mut rng, "att", channels, 4, heads).unwrap();
    (store, att)
}

fn random_map(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn fresh_attention_is_the_identity() {
    let (store, att) = attention(8, 1, 1);
    let x = random_map(&[2, 8, 5, 5], 2);
    let mut g = Graph::new(&store);
    let xi = g.input(x.clone());
    let out = att.forward(&mut g, xi).unwrap();
    assert_eq!(g.value(out.output), &x);
}

#[test]
fn constant_map_gives_uniform_weights_and_constant_output() {
    let (mut store, att) = attention(8, 2, 3);
    perturb(&mut store, "att.out", 0.3, 4);
    let mut data = Vec::new();
    for c in 0..8 {
        data.extend(std::iter::repeat((c as f32 * 0.3).sin()).take(16));
    }
    let x = Tensor::new(&[1, 8, 4, 4], data).unwrap();
    let mut g = Graph::new(&store);
    let xi = g.input(x);
    let out = att.forward(&mut g, xi).unwrap();
    for w in g.value(out.weights).data() {
        assert!((w - 1.0 / 16.0).abs() < 1e-6);
    }
    for plane in g.value(out.output).data().chunks(16) {
        assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-6));
    }
}

#[test]
fn indivisible_heads_are_a_config_error() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        SelfAttention2d::new(&mut store, &mut rng, "a", 6, 4, 4),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, side in 2usize..7, heads in prop::sample::select(vec![1usize, 2, 4])) {
        let (mut store, att) = attention(8, heads, seed);
        perturb(&mut store, "att", 1.0, seed + 1);
        let x = random_map(&[2, 8, side, side], seed + 2);
        let mut g = Graph::new(&store);
        let xi = g.input(x);
        let out = att.forward(&mut g, xi).unwrap();
        let w = g.value(out.weights);
        let p = side * side;
        prop_assert_eq!(w.shape(), &[2 * heads, p, p][..]);
        for row in w.data().chunks(p) {
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Direct scalar evaluation of the two hinge terms.
fn oracle_loss(a: &[f64], p: &[f64], n: &[f64], m: f64) -> f64 {
    let (a, p, n) = (unit(a), unit(p), unit(n));
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let ap = d(&a, &p);
    (ap - d(&a, &n) + m).max(0.0) + (ap - d(&p, &n) + m).max(0.0)
}

fn vec16() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 16).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// Multiples of 1/64, so that scaling by 3 or 100 is exact in f64.
fn dyadic16() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-64i32..=64, 16)
        .prop_filter("non-zero", |v| v.iter().any(|&x| x != 0))
        .prop_map(|v| v.into_iter().map(|x| f64::from(x) / 64.0).collect())
}

#[test]
fn coincident_triplet_costs_twice_the_margin() {
    let v: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).sin() + 0.1).collect();
    assert_eq!(triplet_loss(&v, &v, &v, 0.2).unwrap(), 0.4);
    assert_eq!(triplet_loss(&v, &v, &v, 0.37).unwrap(), 2.0 * 0.37);
}

#[test]
fn satisfied_margin_costs_nothing() {
    let mut a = vec![0.0; 16];
    a[0] = 1.0;
    let mut n = vec![0.0; 16];
    n[1] = 2.0;
    assert_eq!(triplet_loss(&a, &a, &n, 0.2).unwrap(), 0.0);
}

#[test]
fn zero_and_non_finite_embeddings_are_rejected() {
    let v = vec![1.0; 16];
    assert!(matches!(triplet_loss(&v, &[0.0; 16], &v, 0.2), Err(Error::ZeroNorm)));
    let mut bad = v.clone();
    bad[3] = f64::NAN;
    assert!(matches!(triplet_loss(&v, &v, &bad, 0.2), Err(Error::Numerical(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_matches_direct_evaluation(a in vec16(), p in vec16(), n in vec16(), m in 0.05f64..1.0) {
        let got = triplet_loss(&a, &p, &n, m).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - oracle_loss(&a, &p, &n, m)).abs() < 1e-12);
    }

    #[test]
    fn loss_is_scale_invariant(a in dyadic16(), p in dyadic16(), n in dyadic16(), k in prop::sample::select(vec![0.5, 3.0, 100.0, 0.125, 7.0])) {
        let s = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        prop_assert_eq!(triplet_loss(&s(&a), &s(&p), &s(&n), 0.2).unwrap(), triplet_loss(&a, &p, &n, 0.2).unwrap());
    }

    #[test]
    fn power_of_two_scaling_is_exact_for_any_input(a in vec16(), p in vec16(), n in vec16(), e in -20i32..20) {
        let k = 2f64.powi(e);
        let s = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        prop_assert_eq!(triplet_loss(&s(&a), &s(&p), &s(&n), 0.2).unwrap(), triplet_loss(&a, &p, &n, 0.2).unwrap());
    }

    #[test]
    fn rounded_scaling_stays_within_a_few_ulps(a in vec16(), p in vec16(), n in vec16(), k in 1e-3f64..1e3) {
        let s = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        let x = triplet_loss(&s(&a), &s(&p), &s(&n), 0.2).unwrap();
        let y = triplet_loss(&a, &p, &n, 0.2).unwrap();
        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y));
    }

    #[test]
    fn anchor_and_positive_are_interchangeable(a in vec16(), p in vec16(), n in vec16()) {
        let x = triplet_loss(&a, &p, &n, 0.2).unwrap();
        let y = triplet_loss(&p, &a, &n, 0.2).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_central_differences(a in vec16(), p in vec16(), n in vec16()) {
        let m = 0.2;
        let g = triplet_loss_grad(&a, &p, &n, m).unwrap();
        prop_assert!((g.loss - triplet_loss(&a, &p, &n, m).unwrap()).abs() < 1e-12);
        let h = 1e-5;
        let inputs = [&a, &p, &n];
        let grads = [&g.anchor, &g.positive, &g.negative];
        for which in 0..3 {
            for i in 0..16 {
                let bump = |delta: f64| {
                    let mut vs: Vec<Vec<f64>> = inputs.iter().map(|v| v.to_vec()).collect();
                    vs[which][i] += delta;
                    triplet_loss(&vs[0], &vs[1], &vs[2], m).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = grads[which][i];
                // Skip coordinates where a hinge switches inside the stencil.
                let kink = (bump(h) - 2.0 * g.loss + bump(-h)).abs() > 1e-6;
                if !kink {
                    prop_assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3), "{an} vs {fd}");
                }
            }
        }
    }
}

#[test]
fn embedding_export_is_tab_separated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.tsv");
    let row: Vec<f32> = (0..16).map(|i| i as f32 * 0.5).collect();
    write_embeddings(&path, [("f1", row.as_slice()), ("f2", row.as_slice())]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(fields.len(), 17);
    assert_eq!(fields[0], "f1");
    assert_eq!(fields[3].parse::<f32>().unwrap(), 1.0);
}
