use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sstfill_nn::models::layers::{Conv, MultiHeadAttention, ResidualBlock};
use sstfill_nn::{Graph, Model, ModelConfig, Pad, ParamStore, Tensor, UNetConfig, ViTConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy_unet(channels: &[usize], s: usize, size: usize) -> Model {
    Model::new(ModelConfig::Unet(UNetConfig::new(channels, s, size)), 3).unwrap()
}

fn toy_vit(depth: usize) -> Model {
    let cfg = ViTConfig {
        patch: 4,
        embed_dim: 16,
        depth,
        heads: 2,
        tail_upsamples: 2,
        mlp_ratio: 2,
        in_channels: 3,
        out_channels: 1,
        input_size: 16,
    };
    Model::new(ModelConfig::Vit(cfg), 5).unwrap()
}

fn conv_count(k: usize, cin: usize, cout: usize, bias: bool) -> usize {
    k * k * cin * cout + if bias { cout } else { 0 }
}

fn block_count(cin: usize, cout: usize, stride: usize) -> usize {
    let proj = if cin != cout || stride != 1 { conv_count(1, cin, cout, true) } else { 0 };
    conv_count(3, cin, cout, false) + 2 * cout + conv_count(3, cout, cout, false) + 2 * cout + proj
}

/// Layer-by-layer count of the U-Net as declared (stem, encoder stages,
/// decoder stages with doubled input after concatenation, 1x1 head).
fn unet_count(ch: &[usize], bps: usize, cin: usize) -> usize {
    let mut n = conv_count(3, cin, ch[0], true);
    for i in 0..ch.len() {
        for b in 0..bps {
            n += if b == 0 && i > 0 { block_count(ch[i - 1], ch[i], 2) } else { block_count(ch[i], ch[i], 1) };
        }
    }
    for i in 0..ch.len() - 1 {
        n += conv_count(3, ch[i + 1], ch[i], true);
        n += block_count(2 * ch[i], ch[i], 1) + (bps - 1) * block_count(ch[i], ch[i], 1);
    }
    n + conv_count(1, ch[0], 1, true)
}

fn random_input(n: usize, size: usize, c: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[n, size, size, c], 1.0, &mut rng(seed))
}

#[test]
fn toy_unet_param_count_matches_closed_form() {
    let m = toy_unet(&[4, 8], 1, 16);
    assert_eq!(unet_count(&[4, 8], 2, 3), 3925);
    assert_eq!(m.param_count(), 3925);
    let m = toy_unet(&[16, 32, 64], 3, 64);
    assert_eq!(m.param_count(), unet_count(&[16, 32, 64], 2, 7));
}

#[test]
fn single_conv_param_count() {
    let mut s = ParamStore::new();
    Conv::new(&mut s, &mut rng(0), "c", 3, 7, 32, 1, Pad::Same, true);
    assert_eq!(s.trainable_count(), 7 * 9 * 32 + 32);
    assert_eq!(s.trainable_count(), 2048);
}

#[test]
fn reference_param_counts_are_reported() {
    // Advisory targets: 4,259,489 / 17,022,273 / 5,918,081.
    let u32c = Model::new(ModelConfig::Unet(UNetConfig::unet32(3, 128)), 0).unwrap().param_count();
    let u64c = Model::new(ModelConfig::Unet(UNetConfig::unet64(3, 128)), 0).unwrap().param_count();
    let vit = Model::new(ModelConfig::Vit(ViTConfig::new(3, 128)), 0).unwrap().param_count();
    println!("unet32 {u32c} (ref 4259489), unet64 {u64c} (ref 17022273), vit {vit} (ref 5918081)");
    assert_eq!(u32c, unet_count(&[32, 64, 128, 256], 2, 7));
    assert!(u64c > 3 * u32c);
}

#[test]
fn unet_reference_shape_contract() {
    let m = Model::new(ModelConfig::Unet(UNetConfig::unet32(3, 256)), 1).unwrap();
    let y = m.predict(&random_input(1, 256, 7, 2)).unwrap();
    assert_eq!(y.shape(), &[1, 256, 256, 1]);
}

#[test]
fn shapes_preserved_for_several_configs() {
    for (ch, size) in [(vec![4, 8], 8), (vec![4, 8, 8], 16), (vec![2, 4, 4, 4], 32)] {
        let m = toy_unet(&ch, 2, size);
        let y = m.predict(&random_input(2, size, 5, 1)).unwrap();
        assert_eq!(y.shape(), &[2, size, size, 1]);
    }
    let y = toy_vit(1).predict(&random_input(2, 16, 3, 1)).unwrap();
    assert_eq!(y.shape(), &[2, 16, 16, 1]);
}

#[test]
fn invalid_configs_rejected() {
    assert!(Model::new(ModelConfig::Unet(UNetConfig::new(&[4, 8, 16], 1, 18)), 0).is_err());
    assert!(Model::new(ModelConfig::Unet(UNetConfig::new(&[4], 1, 16)), 0).is_err());
    let mut v = ViTConfig::new(1, 128);
    v.heads = 3;
    assert!(Model::new(ModelConfig::Vit(v), 0).is_err());
    let v = ViTConfig::new(1, 100);
    assert!(Model::new(ModelConfig::Vit(v), 0).is_err());
    let m = toy_unet(&[4, 8], 1, 16);
    assert!(m.predict(&random_input(1, 16, 5, 0)).is_err());
}

#[test]
fn vit_token_count() {
    assert_eq!(ViTConfig::new(1, 128).tokens(), 256);
}

#[test]
fn vit_depth_zero_still_shape_correct() {
    let m = toy_vit(0);
    assert!(m.layer_table().iter().all(|(n, ..)| !n.starts_with("block")));
    let y = m.predict(&random_input(1, 16, 3, 4)).unwrap();
    assert_eq!(y.shape(), &[1, 16, 16, 1]);
}

fn assert_no_dead_grads(m: &Model, x: Tensor) {
    let mut g = Graph::new();
    let xv = g.input(x);
    let y = m.forward(&mut g, xv, true).unwrap();
    let c: Vec<f32> = (0..g.value(y).len()).map(|i| ((i * 7919) % 13) as f32 / 13.0 - 0.4).collect();
    let loss = g.weighted_sum(y, &c).unwrap();
    let grads = g.backward(loss);
    let pg = g.param_grads(&grads, m.params.len());
    for (id, e) in m.params.entries().iter().enumerate() {
        if !e.trainable {
            continue;
        }
        let grad = pg[id].as_ref().unwrap_or_else(|| panic!("{} has no gradient", e.name));
        assert!(grad.iter().any(|&v| v != 0.0), "{} gradient is all zero", e.name);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    assert_no_dead_grads(&toy_vit(2), random_input(2, 16, 3, 8));
    assert_no_dead_grads(&toy_unet(&[4, 8], 1, 16), random_input(2, 16, 3, 8));
}

#[test]
fn eval_mode_is_deterministic() {
    for m in [toy_unet(&[4, 8], 1, 16), toy_vit(1)] {
        let x = random_input(3, 16, 3, 9);
        let a = m.predict(&x).unwrap();
        let b = m.predict(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn batch_equals_stacked_singles() {
    for m in [toy_unet(&[4, 8], 1, 16), toy_vit(2)] {
        let x = random_input(4, 16, 3, 10);
        let whole = m.predict(&x).unwrap();
        for i in 0..4 {
            let xi = Tensor::stack(&[x.index(i)]).unwrap();
            let yi = m.predict(&xi).unwrap();
            let ref_i = whole.index(i);
            assert!(yi.index(0).max_abs_diff(&ref_i) < 1e-5);
        }
    }
}

#[test]
fn all_land_input_gives_finite_output() {
    let mut x = Tensor::zeros(&[1, 16, 16, 3]);
    for px in x.data_mut().chunks_mut(3) {
        px[2] = 1.0;
    }
    for m in [toy_unet(&[4, 8], 1, 16), toy_vit(1)] {
        assert!(m.predict(&x).unwrap().data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn ablating_any_skip_changes_output() {
    let m = toy_unet(&[4, 8, 16], 1, 16);
    let x = random_input(1, 16, 3, 12);
    let run = |level: Option<usize>| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = m.forward_ablated(&mut g, xv, false, level).unwrap();
        g.value(y).clone()
    };
    let base = run(None);
    for level in 0..2 {
        assert!(run(Some(level)).max_abs_diff(&base) > 1e-6, "skip {level}");
    }
}

#[test]
fn zeroed_residual_branch_gives_relu_of_shortcut() {
    let mut store = ParamStore::new();
    let mut r = rng(2);
    let block = ResidualBlock::new(&mut store, &mut r, "b", 3, 3, 1);
    for v in store.value_mut(block.conv2.w).data_mut() {
        *v = 0.0;
    }
    let x = Tensor::uniform(&[2, 4, 4, 3], 1.0, &mut r);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = block.forward(&mut g, &store, xv, false).unwrap();
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert_eq!(*a, b.max(0.0));
    }
}

#[test]
fn pointwise_identity_conv_is_identity() {
    let x = random_input(2, 5, 4, 3);
    let mut k = Tensor::zeros(&[1, 1, 4, 4]);
    for c in 0..4 {
        k.data_mut()[c * 4 + c] = 1.0;
    }
    let mut g = Graph::new();
    let (xv, kv) = (g.input(x.clone()), g.input(k));
    let y = g.conv2d(xv, kv, 1, Pad::Same).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn single_token_attention_is_value_projection() {
    let mut store = ParamStore::new();
    let mut r = rng(4);
    let mha = MultiHeadAttention::new(&mut store, &mut r, "a", 8, 2);
    let x = Tensor::uniform(&[3, 1, 8], 1.0, &mut r);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = mha.forward(&mut g, &store, xv).unwrap();
    let got = g.value(y).clone();

    // Oracle: out = (x·Wv + bv)·Wp + bp with the V columns of the packed QKV.
    let wqkv = store.value(mha.qkv.w).data();
    let bqkv = store.value(mha.qkv.b).data();
    let wp = store.value(mha.proj.w).data();
    let bp = store.value(mha.proj.b).data();
    for n in 0..3 {
        let xs = &x.data()[n * 8..n * 8 + 8];
        let v: Vec<f64> = (0..8)
            .map(|j| bqkv[16 + j] as f64 + (0..8).map(|i| xs[i] as f64 * wqkv[i * 24 + 16 + j] as f64).sum::<f64>())
            .collect();
        for j in 0..8 {
            let want = bp[j] as f64 + (0..8).map(|i| v[i] * wp[i * 8 + j] as f64).sum::<f64>();
            assert!((got.data()[n * 8 + j] as f64 - want).abs() < 1e-5);
        }
    }
}

#[test]
fn upsample_of_constant_is_constant() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[1, 128, 128, 2], 2.5));
    let y = g.upsample2x(x).unwrap();
    assert_eq!(g.shape(y), &[1, 256, 256, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 2.5));
}

#[test]
fn same_seed_same_weights() {
    let a = toy_unet(&[4, 8], 1, 16);
    let b = toy_unet(&[4, 8], 1, 16);
    assert_eq!(a.params, b.params);
    let c = Model::new(a.config().clone(), 4).unwrap();
    assert_ne!(a.params, c.params);
}
