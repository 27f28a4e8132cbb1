//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Norm-wise relative error `|ga - gn| / (|ga| + |gn|)` per input, where the
/// scalar objective is `Σ f(inputs)·c` for a fixed random `c`. At most
/// `max_coords` randomly chosen coordinates per input are perturbed.
pub fn check<F>(
    inputs: &[Tensor],
    f: F,
    h: f32,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).len()
    };
    let c: Vec<f32> = (0..probe).map(|_| rng.random_range(-1.0..1.0)).collect();

    let analytic: Vec<Vec<f32>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let loss = g.weighted_sum(out, &c)?;
        let grads = g.backward(loss);
        vars.iter()
            .map(|&v| grads.get(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f32]>::to_vec))
            .collect()
    };
    let value = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let loss = g.weighted_sum(out, &c)?;
        Ok(g.scalar(loss))
    };

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (j, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, max_coords).into_vec();
            v.sort_unstable();
            v
        };
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &coords {
            let x0 = input.data()[i];
            let (xp, xm) = (x0 + h, x0 - h);
            work[j].data_mut()[i] = xp;
            let fp = value(&work)?;
            work[j].data_mut()[i] = xm;
            let fm = value(&work)?;
            work[j].data_mut()[i] = x0;
            let num = (fp - fm) / (xp as f64 - xm as f64);
            let ana = analytic[j][i] as f64;
            diff2 += (ana - num).powi(2);
            a2 += ana * ana;
            n2 += num * num;
        }
        let denom = a2.sqrt() + n2.sqrt();
        errors.push(if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom });
    }
    Ok(errors)
}

/// Result of one gradient-check instance.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub op: &'static str,
    pub instance: usize,
    /// Worst norm-wise relative error over the op's inputs.
    pub error: f64,
}

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
const MAX_COORDS: usize = 60;
/// Composite layers with ReLUs are drawn until every ReLU input clears this.
const RELU_MARGIN: f32 = 0.02;

fn rand_t(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Values bounded away from zero so kinks (ReLU) sit outside ±h.
fn rand_nonzero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = rand_t(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

fn run_layer<L>(
    layer_store: &ParamStore,
    x: Tensor,
    rng: &mut impl Rng,
    forward: L,
) -> Result<f64>
where
    L: Fn(&mut Graph, &ParamStore, Var) -> Result<Var>,
{
    let ids: Vec<usize> = (0..layer_store.len())
        .filter(|&i| layer_store.entry(i).trainable)
        .collect();
    let mut inputs = vec![x];
    inputs.extend(ids.iter().map(|&i| layer_store.value(i).clone()));
    let errs = check(
        &inputs,
        |g, v| {
            for (k, &id) in ids.iter().enumerate() {
                g.bind(id, v[k + 1]);
            }
            forward(g, layer_store, v[0])
        },
        STEP,
        MAX_COORDS,
        rng,
    )?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Finite-difference checks of every differentiable op and composite layer,
/// three random instances each.
pub fn op_suite(seed: u64) -> Result<Vec<CaseResult>> {
    use crate::kernels::Pad;
    use crate::models::layers::{MultiHeadAttention, ResidualBlock, TransformerBlock};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let worst = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    for inst in 0..3 {
        let n = 1 + inst % 2;
        let mut push = |op: &'static str, error: f64| out.push(CaseResult { op, instance: inst, error });

        for (op, xs, ks, stride, pad) in [
            ("conv2d_same", [n, 5, 6, 3], [3, 3, 3, 4], 1, Pad::Same),
            ("conv2d_stride2", [1, 6, 6, 2], [3, 3, 2, 3], 2, Pad::Same),
            ("conv2d_patch", [n, 8, 8, 2], [4, 4, 2, 5], 4, Pad::Valid),
            ("conv2d_pointwise", [n, 4, 4, 3], [1, 1, 3, 2], 1, Pad::Same),
        ] {
            let ins = [rand_t(&xs, &mut rng), rand_t(&ks, &mut rng)];
            let e = check(&ins, |g, v| g.conv2d(v[0], v[1], stride, pad), STEP, MAX_COORDS, &mut rng)?;
            push(op, worst(e));
        }

        let ins = [rand_t(&[n, 3, 4], &mut rng), rand_t(&[4], &mut rng)];
        push("add_bias", worst(check(&ins, |g, v| g.add_bias(v[0], v[1]), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 5], &mut rng), rand_t(&[n, 5], &mut rng)];
        push("add", worst(check(&ins, |g, v| g.add(v[0], v[1]), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 5], &mut rng)];
        push("scale", worst(check(&ins, |g, v| Ok(g.scale(v[0], -1.7)), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_nonzero(&[n, 4, 3], &mut rng)];
        push("relu", worst(check(&ins, |g, v| Ok(g.relu(v[0])), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 4, 3], &mut rng)];
        push("gelu", worst(check(&ins, |g, v| Ok(g.gelu(v[0])), STEP, MAX_COORDS, &mut rng)?));

        for (op, train) in [("batchnorm_train", true), ("batchnorm_eval", false)] {
            let c = 3;
            let mut store = ParamStore::new();
            let running = crate::graph::RunningStats {
                mean: store.add("m", rand_t(&[c], &mut rng), false),
                var: store.add("v", Tensor::full(&[c], 0.7), false),
            };
            let ins = [rand_t(&[n + 1, 3, 2, c], &mut rng), rand_t(&[c], &mut rng), rand_t(&[c], &mut rng)];
            let e = check(
                &ins,
                |g, v| g.batchnorm(v[0], v[1], v[2], running, &store, train),
                STEP,
                MAX_COORDS,
                &mut rng,
            )?;
            push(op, worst(e));
        }
        let ins = [rand_t(&[n, 3, 6], &mut rng), rand_t(&[6], &mut rng), rand_t(&[6], &mut rng)];
        push("layernorm", worst(check(&ins, |g, v| g.layernorm(v[0], v[1], v[2]), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 2, 2, 3], &mut rng), rand_t(&[n, 2, 2, 2], &mut rng)];
        push("concat", worst(check(&ins, |g, v| g.concat(v[0], v[1]), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 3, 2, 2], &mut rng)];
        push("upsample2x", worst(check(&ins, |g, v| g.upsample2x(v[0]), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 3, 4], &mut rng), rand_t(&[4, 5], &mut rng)];
        push("linear", worst(check(&ins, |g, v| g.linear(v[0], v[1]), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 4, 24], &mut rng)];
        push("attention", worst(check(&ins, |g, v| g.attention(v[0], 2), STEP, MAX_COORDS, &mut rng)?));
        let ins = [rand_t(&[n, 2, 3], &mut rng)];
        push("reshape", worst(check(&ins, |g, v| g.reshape(v[0], &[n, 6]), STEP, MAX_COORDS, &mut rng)?));

        let len = n * 4 * 4;
        let target: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut mask: Vec<f32> = (0..len).map(|_| rng.random_bool(0.6) as u8 as f32).collect();
        mask[0] = 1.0;
        let ins = [rand_t(&[n, 4, 4, 1], &mut rng)];
        push(
            "masked_mse",
            worst(check(&ins, |g, v| g.masked_mse(v[0], &target, &mask), STEP, MAX_COORDS, &mut rng)?),
        );

        let ins = [rand_t(&[n, 3, 3, 2], &mut rng)];
        push(
            "upsample2x_conv",
            worst(check(
                &ins,
                |g, v| {
                    let u = g.upsample2x(v[0])?;
                    let k = g.input(Tensor::full(&[3, 3, 2, 2], 0.3));
                    g.conv2d(u, k, 1, Pad::Same)
                },
                STEP,
                MAX_COORDS,
                &mut rng,
            )?),
        );

        for (op, cin, cout, stride) in [("residual_block", 3, 3, 1), ("residual_block_proj", 2, 4, 2)] {
            let (store, block, x) = loop {
                let mut store = ParamStore::new();
                let block = ResidualBlock::new(&mut store, &mut rng, "b", cin, cout, stride);
                let x = rand_t(&[n + 1, 4, 4, cin], &mut rng);
                let mut g = Graph::new();
                let xv = g.input(x.clone());
                block.forward(&mut g, &store, xv, true)?;
                if g.relu_margin() > RELU_MARGIN {
                    break (store, block, x);
                }
            };
            push(op, run_layer(&store, x, &mut rng, |g, s, x| block.forward(g, s, x, true))?);
        }
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 2);
        let x = rand_t(&[1, 4, 8], &mut rng);
        push("multi_head_attention", run_layer(&store, x, &mut rng, |g, s, x| mha.forward(g, s, x))?);
        let mut store = ParamStore::new();
        let tb = TransformerBlock::new(&mut store, &mut rng, "tb", 8, 2, 2);
        let x = rand_t(&[n, 3, 8], &mut rng);
        push("transformer_block", run_layer(&store, x, &mut rng, |g, s, x| tb.forward(g, s, x))?);
    }
    Ok(out)
}
